#pragma once

// Split write-ahead log.
//
// Inserts and deletes are logged as a row-part item followed by a
// column-part item; updates touch only the row partition and are logged as a
// single item. Storage is mutated only after the transaction's commit record
// is durable (redo-only), so recovery never needs undo.
//
// File layout (little-endian):
//   header  : "HTWL" magic, u16 version
//   record  : u32 len | u64 lsn | u64 txn_id | u8 kind | u16 table-name len,
//             name bytes | u32 group_id | i64 key | u32 payload len, payload |
//             u32 crc
// `len` counts the bytes between the len field and the crc; the crc covers
// the len field and those bytes.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "htapstore/schema.hpp"
#include "htapstore/types.hpp"

namespace htap {

class Table;

namespace wal {

inline constexpr char kMagic[4] = {'H', 'T', 'W', 'L'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 6;
inline constexpr Key kNoKey = std::numeric_limits<Key>::min();

enum class RecordKind : std::uint8_t {
  kUpdateRow = 1,
  kInsertRowPart = 2,
  kInsertColPart = 3,
  kDeleteRowPart = 4,
  kDeleteColPart = 5,
  kTxnCommit = 6,
  kTxnRollback = 7,
};

std::string_view kind_name(RecordKind kind);
bool is_column_part(RecordKind kind);

struct LogRecord {
  Lsn lsn = 0;
  TxnId txn_id = 0;
  RecordKind kind = RecordKind::kTxnCommit;
  std::string table;
  GroupId group_id = 0;
  Key key = kNoKey;
  std::vector<std::uint8_t> payload;

  bool operator==(const LogRecord&) const = default;
};

std::vector<std::uint8_t> encode_record(const LogRecord& record);
std::vector<std::uint8_t> encode_header();

std::vector<std::uint8_t> encode_values(const Row& values);
Row decode_values(std::span<const std::uint8_t> payload);
using Assignments = std::vector<std::pair<std::size_t, Value>>;
std::vector<std::uint8_t> encode_assignments(const Assignments& assignments);
Assignments decode_assignments(std::span<const std::uint8_t> payload);

struct ScannedRecord {
  LogRecord record;
  std::size_t offset = 0;  // file offset of the len field
  std::size_t size = 0;    // encoded size including len and crc
};

struct LogScan {
  std::vector<ScannedRecord> records;
  // Length of the valid prefix (header + intact records).
  std::size_t valid_bytes = 0;
  std::size_t file_bytes = 0;
  bool torn_tail = false;
};

// Reads records until the first torn or crc-invalid one. A file shorter than
// the header whose bytes are a prefix of the header counts as an empty log.
// Throws CorruptLogHeader for a wrong magic or version.
LogScan scan_log(const std::filesystem::path& path);
LogScan scan_log_bytes(std::span<const std::uint8_t> bytes);

enum class Durability {
  kFsync,      // fdatasync after every append
  kOsBuffer,   // write(2) only; survives process crashes, not power loss
};

enum class TxnOutcome { kActive, kCommitted, kRolledBack };

/// Log writer plus per-transaction split bookkeeping. Appends are serialized
/// by an internal mutex so LSNs follow file order.
class LogManager {
 public:
  // Opens (creating if needed) the log, trims a torn tail, and continues the
  // LSN sequence after the last intact record.
  LogManager(std::filesystem::path path, Durability durability);
  ~LogManager();
  LogManager(const LogManager&) = delete;
  LogManager& operator=(const LogManager&) = delete;

  const std::filesystem::path& path() const { return path_; }
  Lsn last_lsn() const;
  TxnId max_txn_id_seen() const { return max_txn_seen_; }
  std::size_t bytes_written() const;

  void begin_txn(TxnId txn);
  std::optional<TxnOutcome> outcome(TxnId txn) const;
  bool has_active_txns() const;

  // Low-level append for an Active txn; assigns lsn and crc.
  Lsn append(LogRecord record);

  std::pair<Lsn, Lsn> log_insert(TxnId txn, const std::string& table, GroupId group, Key key,
                                 const Row& row_values, const Row& col_values);
  // Throws NonUpdatableColumn before appending anything.
  Lsn log_update(TxnId txn, const TableSchema& schema, GroupId group, Key key,
                 const Assignments& assignments);
  std::pair<Lsn, Lsn> log_delete(TxnId txn, const std::string& table, GroupId group, Key key);

  // Throws SplitIncomplete when a row part lacks its column part.
  Lsn commit(TxnId txn);
  Lsn rollback(TxnId txn);
  // Ends a txn that logged nothing, without writing a record.
  void finish_read_only(TxnId txn);

  // Fault injection: the append that crosses `limit` total file bytes writes
  // only the bytes up to the limit and throws IoFailure; later appends fail.
  void fail_after_bytes(std::size_t limit);

  // Closes the file; the manager is unusable afterwards.
  void close();

 private:
  struct TxnState {
    TxnOutcome outcome = TxnOutcome::kActive;
    bool wrote = false;
    // (table, key, delete?) of row parts still waiting for the column part.
    std::multiset<std::tuple<std::string, Key, bool>> unmatched_row_parts;
  };

  static constexpr std::size_t kFinishedRetention = 4096;

  TxnState& active_locked(TxnId txn);
  void finish_locked(TxnId txn, TxnOutcome outcome);
  Lsn append_locked(LogRecord& record);
  void write_all(std::span<const std::uint8_t> bytes);

  std::filesystem::path path_;
  Durability durability_;
  mutable std::mutex mu_;
  int fd_ = -1;
  Lsn next_lsn_ = 1;
  TxnId max_txn_seen_ = 0;
  std::size_t file_bytes_ = 0;
  std::optional<std::size_t> fault_limit_;
  bool poisoned_ = false;
  std::map<TxnId, TxnState> txns_;
  std::deque<TxnId> finished_;  // outcomes kept for the most recent txns
};

struct CompressionStats {
  std::size_t records_before = 0;
  std::size_t records_removed = 0;
};

// Rewrites the log without the column-part items of rolled-back
// transactions. Offline: the caller guarantees nothing is appending.
CompressionStats compress_log(const std::filesystem::path& path);

struct RecoveryResult {
  Lsn max_lsn = 0;
  TxnId max_txn_id = 0;
  std::size_t records_scanned = 0;
  std::size_t committed_txns = 0;
  std::size_t valid_bytes = 0;
  bool torn_tail = false;
  // Inserts/deletes dropped because one split part was missing.
  std::size_t incomplete_splits = 0;
};

/// Redo recovery into `tables` (by name). Effects of each committed
/// transaction are applied at its commit record, stamped with the commit
/// LSN. Effects on a group whose watermark already covers the commit LSN
/// (loaded from a checkpoint) are skipped.
RecoveryResult recover(const std::filesystem::path& path,
                       const std::map<std::string, Table*>& tables);
RecoveryResult recover_bytes(std::span<const std::uint8_t> bytes,
                             const std::map<std::string, Table*>& tables);

}  // namespace wal
}  // namespace htap
