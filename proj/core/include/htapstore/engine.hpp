#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "htapstore/query.hpp"
#include "htapstore/script.hpp"
#include "htapstore/storage.hpp"
#include "htapstore/wal.hpp"

namespace htap {

struct EngineOptions {
  wal::Durability durability = wal::Durability::kFsync;
  // Non-zero emulates a dual-format store: analytical reads see each row
  // group as it was this long ago. Zero is the mixed-format behaviour.
  std::chrono::nanoseconds propagation_delay{0};
  bool load_checkpoint = true;
};

enum class TxnState { kActive, kCommitted, kRolledBack };

struct StmtResult {
  std::optional<Row> row;  // GET
  std::optional<query::AggregateResult> aggregate;  // AGG
};

class Engine;

/// A transaction: snapshot captured at begin, writes logged immediately and
/// buffered until commit, reads see the snapshot overlaid with the
/// transaction's own writes. Not shareable across threads while active.
/// Destroying an active transaction rolls it back.
class Txn {
 public:
  Txn(Txn&& other) noexcept;
  Txn& operator=(Txn&& other) noexcept;
  Txn(const Txn&) = delete;
  Txn& operator=(const Txn&) = delete;
  ~Txn();

  TxnId id() const { return id_; }
  TxnState state() const { return state_; }
  // Watermarks captured at begin, by table.
  const std::map<std::string, TableSnapshot, std::less<>>& snapshot() const { return snapshot_; }
  std::size_t write_count() const { return write_set_.size(); }

  void insert(std::string_view table, Row values);
  void update(std::string_view table, Key key, const std::vector<std::pair<std::string, Value>>& assignments);
  void remove(std::string_view table, Key key);
  std::optional<Row> get(std::string_view table, Key key);
  query::AggregateResult aggregate(const query::AggregateQuery& q);
  StmtResult exec(const Statement& stmt);

  // Returns the commit LSN, or 0 for a transaction that wrote nothing.
  // Throws SecondWriterAborted (txn rolled back) on a write-write conflict.
  Lsn commit();
  void rollback();

 private:
  friend class Engine;
  struct WriteOp {
    Mutation::Kind kind;
    Table* table;
    GroupId group;
    Key key;
    Row row;
    wal::Assignments assignments;
  };

  Txn(Engine* engine, TxnId id);
  void require_active() const;
  const TableSnapshot& table_snapshot(Table& table);
  // Current row of `key` as this txn sees it.
  std::optional<Row> read_row(Table& table, Key key);

  Engine* engine_ = nullptr;
  TxnId id_ = 0;
  TxnState state_ = TxnState::kActive;
  std::map<std::string, TableSnapshot, std::less<>> snapshot_;
  std::vector<WriteOp> write_set_;
  std::map<std::string, query::Overlay, std::less<>> overlay_;
};

/// Result of one hybrid transaction.
struct HybridResult {
  struct Step {
    bool olap = false;
    std::string text;
    StmtResult result;
    std::chrono::nanoseconds elapsed{0};
  };

  std::vector<Step> steps;
  bool committed = false;
  Lsn commit_lsn = 0;
  std::chrono::nanoseconds commit_elapsed{0};
  // Set when a step (index into the script) or the commit (== steps count) failed.
  std::optional<std::size_t> failed_step;
  std::optional<ErrorCode> error_code;
  std::string error;
};

/// Embedded single-node store: catalog, tables, log, and transactions.
///
/// Directory layout: catalog.json (schemas), wal.log, and optionally
/// checkpoint.htsc. Opening replays the log (after the checkpoint, if any).
class Engine {
 public:
  static constexpr const char* kCatalogFile = "catalog.json";
  static constexpr const char* kLogFile = "wal.log";
  static constexpr const char* kCheckpointFile = "checkpoint.htsc";

  explicit Engine(std::filesystem::path dir, EngineOptions options = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  const EngineOptions& options() const { return options_; }

  // Throws DuplicateTable / InvalidSchema.
  Table& create_table(TableSchema schema, std::uint32_t num_groups);
  // Throws UnknownTable.
  Table& table(std::string_view name);
  const Table& table(std::string_view name) const;
  Table* find_table(std::string_view name);
  std::vector<const Table*> tables() const;  // ordered by name
  std::map<std::string, Table*> table_map();

  Txn begin();
  HybridResult run_hybrid(const HybridScript& script);

  // Standalone reads at a fresh snapshot.
  std::optional<Row> point_get(std::string_view table, Key key);
  query::AggregateResult aggregate(const query::AggregateQuery& q);
  // Snapshot used by analytical reads (lagged in the dual-format baseline).
  TableSnapshot olap_snapshot(const Table& table) const;

  // Requires no active transactions.
  wal::CompressionStats compress_log();
  void write_checkpoint(const std::filesystem::path& path) const;
  std::vector<std::uint8_t> checkpoint_bytes() const;

  // Called on the commit path (serialized) with the number of committed
  // writes per table.
  using CommitListener = std::function<void(const std::string& table, std::size_t writes)>;
  int add_commit_listener(CommitListener listener);
  void remove_commit_listener(int id);

  // Fault injection: the next commit throws SimulatedCrash after its commit
  // record is durable but before storage is touched. The engine is dead
  // afterwards; reopen the directory to recover.
  void crash_after_next_commit_record();

  wal::LogManager& log() { return *log_; }
  const wal::RecoveryResult& recovery() const { return recovery_; }
  std::size_t active_txns() const { return active_.load(); }
  std::uint64_t committed_txns() const { return committed_.load(); }
  std::uint64_t aborted_txns() const { return aborted_.load(); }

 private:
  friend class Txn;

  void persist_catalog() const;
  void load_catalog();
  void check_alive() const;
  Lsn commit(Txn& txn);
  void rollback(Txn& txn);

  std::filesystem::path dir_;
  EngineOptions options_;
  mutable std::mutex catalog_mu_;
  std::map<std::string, std::unique_ptr<Table>, std::less<>> tables_;
  std::unique_ptr<wal::LogManager> log_;
  wal::RecoveryResult recovery_;

  std::mutex commit_mu_;
  std::atomic<TxnId> next_txn_{1};
  std::atomic<std::size_t> active_{0};
  std::atomic<std::uint64_t> committed_{0};
  std::atomic<std::uint64_t> aborted_{0};
  std::atomic<bool> crash_next_commit_{false};
  std::atomic<bool> crashed_{false};

  std::mutex listeners_mu_;
  std::map<int, CommitListener> listeners_;
  int next_listener_ = 1;
};

}  // namespace htap
