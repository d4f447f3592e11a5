#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "htapstore/schema.hpp"
#include "htapstore/types.hpp"

namespace htap {

/// Half-open [lo, hi) slice of the int64 key space. The last group of a
/// table ends at INT64_MAX and also owns INT64_MAX itself, since 2^63 is not
/// representable as an i64 bound.
struct KeyRange {
  Key lo = 0;
  Key hi = 0;

  bool contains(Key k) const;
  bool operator==(const KeyRange&) const = default;
};

// Even split of the whole int64 key space into n contiguous ranges.
std::vector<KeyRange> even_key_ranges(std::uint32_t n);

struct BetweenPredicate {
  std::string column;
  Value lo;
  Value hi;
};

// Three-way compare; int64 and float64 compare numerically, other mixes
// throw TypeMismatch.
int compare_values(const Value& a, const Value& b);
bool between(const Value& v, const Value& lo, const Value& hi);

class Bitmap {
 public:
  void push_back(bool bit);
  bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void reset(std::size_t i) { words_[i >> 6] &= ~(std::uint64_t{1} << (i & 63)); }
  std::size_t size() const { return size_; }
  std::span<const std::uint64_t> words() const { return words_; }
  static Bitmap from_words(std::vector<std::uint64_t> words, std::size_t size);

 private:
  std::vector<std::uint64_t> words_;
  std::size_t size_ = 0;
};

// Append-only string heap with offsets.
struct StringColumn {
  std::vector<std::uint64_t> offsets{0};
  std::string heap;

  std::size_t size() const { return offsets.size() - 1; }
  std::string_view at(std::size_t i) const {
    return std::string_view(heap).substr(offsets[i], offsets[i + 1] - offsets[i]);
  }
  void push_back(std::string_view s) {
    heap.append(s);
    offsets.push_back(heap.size());
  }
};

using ColumnData = std::variant<std::vector<std::int64_t>, std::vector<double>,
                                std::vector<std::uint8_t>, StringColumn>;

/// Column-format partition: one contiguous array per non-updatable column,
/// all positionally aligned, plus a validity bitmap (cleared on delete).
class ReadOnlyPartition {
 public:
  ReadOnlyPartition() = default;
  explicit ReadOnlyPartition(const std::vector<ValueType>& types);

  std::size_t size() const { return validity_.size(); }
  std::size_t column_count() const { return columns_.size(); }
  const ColumnData& column(std::size_t slot) const { return columns_[slot]; }
  const Bitmap& validity() const { return validity_; }
  Value get(std::size_t slot, std::size_t pos) const;
  Row row_at(std::size_t pos) const;

  std::size_t append(const Row& col_part);
  void invalidate(std::size_t pos) { validity_.reset(pos); }

  // Canonical byte image (checkpoint layout); used for bit-identity checks.
  std::vector<std::uint8_t> to_bytes() const;
  static ReadOnlyPartition from_bytes(const std::vector<ValueType>& types,
                                      std::span<const std::uint8_t> bytes);

 private:
  std::vector<ColumnData> columns_;
  Bitmap validity_;
};

/// One row-format record of the update partition. Slots are positionally
/// aligned with the read-only partition. A slot keeps the values of the
/// update-set columns as a short chain of committed versions so that readers
/// holding an older snapshot keep seeing the values as of their watermark.
struct UpdateSlot {
  struct Version {
    Lsn lsn = 0;
    Row values;
  };

  Key key = 0;
  Lsn insert_lsn = 0;
  Lsn delete_lsn = 0;  // 0 while live
  // Position of the previous incarnation of this key, or -1.
  std::int64_t prev_position = -1;
  std::vector<Version> versions;  // ascending lsn

  bool live() const { return delete_lsn == 0; }
  bool visible_at(Lsn watermark) const {
    return insert_lsn <= watermark && (delete_lsn == 0 || delete_lsn > watermark);
  }
  const Row& values_at(Lsn watermark) const;
  const Row& latest() const { return versions.back().values; }
  Lsn last_modified() const;
};

/// One range partition of a table.
///
/// Mutation (apply_*) requires the caller to hold the exclusive latch;
/// reads go through the shared latch. Visibility is decided by LSN stamps
/// against a reader's captured watermark.
class RowGroup {
 public:
  RowGroup(GroupId id, KeyRange range, const TableSchema& schema);

  GroupId id() const { return id_; }
  const KeyRange& range() const { return range_; }
  Lsn watermark() const { return watermark_.load(std::memory_order_acquire); }

  std::unique_lock<std::shared_mutex> lock_exclusive() const {
    return std::unique_lock(latch_);
  }
  std::shared_lock<std::shared_mutex> lock_shared() const { return std::shared_lock(latch_); }

  // Commit-path mutations. `full_row` must already conform to the schema.
  std::size_t apply_insert(Key key, const Row& full_row, Lsn lsn);
  void apply_update(Key key, const std::vector<std::pair<std::size_t, Value>>& assignments,
                    Lsn lsn, Lsn prune_horizon);
  void apply_delete(Key key, Lsn lsn);

  // Newest incarnation position of `key`, live or not.
  std::optional<std::size_t> position_of(Key key) const;
  // Position of the incarnation visible at `watermark`.
  std::optional<std::size_t> visible_position(Key key, Lsn watermark) const;
  bool is_live(Key key) const;
  Lsn last_modified(Key key) const;
  std::size_t live_count() const { return live_count_; }

  const std::vector<UpdateSlot>& slots() const { return slots_; }
  const ReadOnlyPartition& readonly() const { return readonly_; }
  const std::map<Key, std::size_t>& key_index() const { return key_index_; }
  Row stitched_row(std::size_t position, Lsn watermark) const;

  // Installs state decoded from a checkpoint; caller holds the exclusive latch
  // and publishes the checkpointed watermark afterwards.
  void restore(std::vector<UpdateSlot> slots, ReadOnlyPartition readonly);

 private:
  friend class Table;
  void set_watermark(Lsn lsn) { watermark_.store(lsn, std::memory_order_release); }

  GroupId id_;
  KeyRange range_;
  const TableSchema* schema_;
  mutable std::shared_mutex latch_;
  std::atomic<Lsn> watermark_{0};
  std::map<Key, std::size_t> key_index_;
  std::vector<UpdateSlot> slots_;
  ReadOnlyPartition readonly_;
  std::size_t live_count_ = 0;
};

class Table;

/// Per-group watermarks captured at read start. Holding a snapshot pins the
/// versions it can see; copies share the pin.
struct TableSnapshot {
  const Table* table = nullptr;
  std::vector<Lsn> watermarks;
  std::shared_ptr<const void> pin;

  Lsn watermark(GroupId g) const { return g < watermarks.size() ? watermarks[g] : 0; }
};

class Table {
 public:
  Table(TableSchema schema, std::uint32_t num_groups);
  ~Table();
  Table(const Table&) = delete;
  Table& operator=(const Table&) = delete;

  const TableSchema& schema() const { return schema_; }
  const std::string& name() const { return schema_.name(); }
  std::uint32_t group_count() const { return static_cast<std::uint32_t>(groups_.size()); }
  RowGroup& group(GroupId g) { return *groups_[g]; }
  const RowGroup& group(GroupId g) const { return *groups_[g]; }
  GroupId partition_for_key(Key key) const;

  // `lag` > 0 emulates a reader of a dual-format store: each group's
  // watermark is the one that was current `lag` ago.
  TableSnapshot snapshot(std::chrono::nanoseconds lag = std::chrono::nanoseconds{0}) const;
  // Snapshot that sees nothing; used for tables created after a txn began.
  TableSnapshot empty_snapshot() const;

  // Advances the group's commit watermark (monotone).
  void publish(GroupId g, Lsn lsn);
  // Oldest watermark any current or future reader may hold for the group.
  Lsn prune_horizon(GroupId g) const;
  // Readers with a propagation lag need older versions retained.
  void set_reader_lag(std::chrono::nanoseconds lag);

  std::optional<Row> point_get(Key key, const TableSnapshot& snap) const;
  std::vector<Value> scan_column(std::string_view column,
                                 const std::optional<BetweenPredicate>& predicate,
                                 const TableSnapshot& snap) const;

  // All rows visible at `snap`, ascending key order.
  std::vector<std::pair<Key, Row>> materialize(const TableSnapshot& snap) const;

 private:
  struct Registry;
  Lsn delayed_watermark_locked(GroupId g, std::chrono::steady_clock::time_point now,
                               std::chrono::nanoseconds lag) const;

  TableSchema schema_;
  std::vector<KeyRange> ranges_;
  std::vector<std::unique_ptr<RowGroup>> groups_;
  std::shared_ptr<Registry> registry_;
};

/// One committed logical write, ready to apply.
struct Mutation {
  enum class Kind : std::uint8_t { kInsert, kUpdate, kDelete };

  Kind kind = Kind::kInsert;
  Table* table = nullptr;
  GroupId group = 0;
  Key key = 0;
  Row row;  // insert: full row conforming to the schema
  std::vector<std::pair<std::size_t, Value>> assignments;  // update
};

// Applies a committed transaction's writes group by group, in ascending
// (table, group) order, each under the group's exclusive latch, then
// publishes `commit_lsn` as the group's watermark. Writes order within a
// group is preserved. Groups whose watermark already covers `commit_lsn` are
// skipped.
void apply_mutations(std::span<const Mutation> mutations, Lsn commit_lsn);

}  // namespace htap
