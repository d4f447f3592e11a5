#include "htapstore/storage.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <set>

#include "htapstore/encoding.hpp"

namespace htap {

namespace {

constexpr Key kMinKey = std::numeric_limits<Key>::min();
constexpr Key kMaxKey = std::numeric_limits<Key>::max();
using u128 = unsigned __int128;
constexpr u128 kKeySpace = u128{1} << 64;

std::uint64_t key_offset(Key k) { return static_cast<std::uint64_t>(k) ^ (std::uint64_t{1} << 63); }
Key key_from_offset(u128 off) {
  return static_cast<Key>(static_cast<std::uint64_t>(off) ^ (std::uint64_t{1} << 63));
}

ColumnData empty_column(ValueType t) {
  switch (t) {
    case ValueType::kInt64: return std::vector<std::int64_t>{};
    case ValueType::kFloat64: return std::vector<double>{};
    case ValueType::kBool: return std::vector<std::uint8_t>{};
    case ValueType::kString: return StringColumn{};
  }
  return std::vector<std::int64_t>{};
}

}  // namespace

bool KeyRange::contains(Key k) const { return k >= lo && (k < hi || hi == kMaxKey); }

std::vector<KeyRange> even_key_ranges(std::uint32_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "num_groups must be >= 1");
  const u128 width = kKeySpace / n;
  std::vector<KeyRange> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    KeyRange r;
    r.lo = key_from_offset(width * i);
    r.hi = (i + 1 == n) ? kMaxKey : key_from_offset(width * (i + 1));
    out.push_back(r);
  }
  return out;
}

int compare_values(const Value& a, const Value& b) {
  const auto ta = type_of(a);
  const auto tb = type_of(b);
  const bool na = ta == ValueType::kInt64 || ta == ValueType::kFloat64;
  const bool nb = tb == ValueType::kInt64 || tb == ValueType::kFloat64;
  if (ta == ValueType::kInt64 && tb == ValueType::kInt64) {
    const auto x = std::get<std::int64_t>(a), y = std::get<std::int64_t>(b);
    return (x > y) - (x < y);
  }
  if (na && nb) {
    const double x = as_double(a), y = as_double(b);
    return (x > y) - (x < y);
  }
  if (ta != tb) {
    throw Error(ErrorCode::kTypeMismatch, "cannot compare " + std::string(type_name(ta)) +
                                              " with " + std::string(type_name(tb)));
  }
  if (ta == ValueType::kBool) return int(std::get<bool>(a)) - int(std::get<bool>(b));
  return std::get<std::string>(a).compare(std::get<std::string>(b)) < 0
             ? -1
             : (std::get<std::string>(a) == std::get<std::string>(b) ? 0 : 1);
}

bool between(const Value& v, const Value& lo, const Value& hi) {
  return compare_values(v, lo) >= 0 && compare_values(v, hi) <= 0;
}

// ---------------------------------------------------------------------------
// Bitmap / ReadOnlyPartition

void Bitmap::push_back(bool bit) {
  if ((size_ & 63) == 0) words_.push_back(0);
  if (bit) words_.back() |= std::uint64_t{1} << (size_ & 63);
  ++size_;
}

Bitmap Bitmap::from_words(std::vector<std::uint64_t> words, std::size_t size) {
  Bitmap b;
  b.words_ = std::move(words);
  b.size_ = size;
  return b;
}

ReadOnlyPartition::ReadOnlyPartition(const std::vector<ValueType>& types) {
  columns_.reserve(types.size());
  for (auto t : types) columns_.push_back(empty_column(t));
}

Value ReadOnlyPartition::get(std::size_t slot, std::size_t pos) const {
  return std::visit(
      [pos](const auto& col) -> Value {
        using C = std::decay_t<decltype(col)>;
        if constexpr (std::is_same_v<C, std::vector<std::uint8_t>>) {
          return col[pos] != 0;
        } else if constexpr (std::is_same_v<C, StringColumn>) {
          return std::string(col.at(pos));
        } else {
          return col[pos];
        }
      },
      columns_[slot]);
}

Row ReadOnlyPartition::row_at(std::size_t pos) const {
  Row out;
  out.reserve(columns_.size());
  for (std::size_t s = 0; s < columns_.size(); ++s) out.push_back(get(s, pos));
  return out;
}

std::size_t ReadOnlyPartition::append(const Row& col_part) {
  for (std::size_t s = 0; s < columns_.size(); ++s) {
    std::visit(
        [&](auto& col) {
          using C = std::decay_t<decltype(col)>;
          if constexpr (std::is_same_v<C, std::vector<std::int64_t>>) {
            col.push_back(std::get<std::int64_t>(col_part[s]));
          } else if constexpr (std::is_same_v<C, std::vector<double>>) {
            col.push_back(std::get<double>(col_part[s]));
          } else if constexpr (std::is_same_v<C, std::vector<std::uint8_t>>) {
            col.push_back(std::get<bool>(col_part[s]) ? 1 : 0);
          } else {
            col.push_back(std::get<std::string>(col_part[s]));
          }
        },
        columns_[s]);
  }
  validity_.push_back(true);
  return validity_.size() - 1;
}

std::vector<std::uint8_t> ReadOnlyPartition::to_bytes() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(columns_.size()));
  for (const auto& column : columns_) {
    std::visit(
        [&w](const auto& col) {
          using C = std::decay_t<decltype(col)>;
          w.u32(static_cast<std::uint32_t>(col.size()));
          if constexpr (std::is_same_v<C, std::vector<std::int64_t>>) {
            for (auto v : col) w.i64(v);
          } else if constexpr (std::is_same_v<C, std::vector<double>>) {
            for (auto v : col) w.f64(v);
          } else if constexpr (std::is_same_v<C, std::vector<std::uint8_t>>) {
            for (auto v : col) w.u8(v);
          } else {
            for (std::size_t i = 0; i < col.size(); ++i) w.string(col.at(i));
          }
        },
        column);
  }
  w.u64(validity_.size());
  for (auto word : validity_.words()) w.u64(word);
  return w.take();
}

ReadOnlyPartition ReadOnlyPartition::from_bytes(const std::vector<ValueType>& types,
                                                std::span<const std::uint8_t> bytes) {
  ReadOnlyPartition p(types);
  ByteReader r(bytes);
  if (r.u32() != types.size()) throw Error(ErrorCode::kCorruptCheckpoint, "column count");
  for (auto& column : p.columns_) {
    const auto n = r.u32();
    std::visit(
        [&](auto& col) {
          using C = std::decay_t<decltype(col)>;
          for (std::uint32_t i = 0; i < n; ++i) {
            if constexpr (std::is_same_v<C, std::vector<std::int64_t>>) {
              col.push_back(r.i64());
            } else if constexpr (std::is_same_v<C, std::vector<double>>) {
              col.push_back(r.f64());
            } else if constexpr (std::is_same_v<C, std::vector<std::uint8_t>>) {
              col.push_back(r.u8());
            } else {
              col.push_back(r.string());
            }
          }
        },
        column);
  }
  const auto nbits = r.u64();
  std::vector<std::uint64_t> words((nbits + 63) / 64);
  for (auto& word : words) word = r.u64();
  p.validity_ = Bitmap::from_words(std::move(words), nbits);
  for (const auto& column : p.columns_) {
    const auto len = std::visit([](const auto& c) { return c.size(); }, column);
    if (len != nbits) throw Error(ErrorCode::kCorruptCheckpoint, "misaligned column arrays");
  }
  return p;
}

// ---------------------------------------------------------------------------
// UpdateSlot / RowGroup

const Row& UpdateSlot::values_at(Lsn watermark) const {
  for (auto it = versions.rbegin(); it != versions.rend(); ++it) {
    if (it->lsn <= watermark) return it->values;
  }
  return versions.front().values;
}

Lsn UpdateSlot::last_modified() const {
  return std::max(delete_lsn, versions.empty() ? insert_lsn : versions.back().lsn);
}

RowGroup::RowGroup(GroupId id, KeyRange range, const TableSchema& schema)
    : id_(id), range_(range), schema_(&schema) {
  std::vector<ValueType> types;
  for (auto c : schema.readonly_columns()) types.push_back(schema.columns()[c].type);
  readonly_ = ReadOnlyPartition(types);
}

std::size_t RowGroup::apply_insert(Key key, const Row& full_row, Lsn lsn) {
  auto it = key_index_.find(key);
  if (it != key_index_.end() && slots_[it->second].live()) {
    throw Error(ErrorCode::kDuplicateKey, schema_->name() + " key " + std::to_string(key));
  }
  // Row part first, then the column part at the same position.
  UpdateSlot slot;
  slot.key = key;
  slot.insert_lsn = lsn;
  slot.prev_position = it == key_index_.end() ? -1 : static_cast<std::int64_t>(it->second);
  slot.versions.push_back({lsn, schema_->row_part(full_row)});
  const std::size_t position = slots_.size();
  slots_.push_back(std::move(slot));
  readonly_.append(schema_->col_part(full_row));
  key_index_[key] = position;
  ++live_count_;
  return position;
}

void RowGroup::apply_update(Key key,
                            const std::vector<std::pair<std::size_t, Value>>& assignments,
                            Lsn lsn, Lsn prune_horizon) {
  for (const auto& [col, _] : assignments) {
    if (!schema_->is_updatable(col)) {
      throw Error(ErrorCode::kNonUpdatableColumn, schema_->columns()[col].name);
    }
  }
  auto it = key_index_.find(key);
  if (it == key_index_.end() || !slots_[it->second].live()) {
    throw Error(ErrorCode::kKeyNotFound, schema_->name() + " key " + std::to_string(key));
  }
  auto& slot = slots_[it->second];
  Row next = slot.latest();
  for (const auto& [col, value] : assignments) {
    next[schema_->slot_of(col)] = coerce(value, schema_->columns()[col].type);
  }
  slot.versions.push_back({lsn, std::move(next)});
  // Keep the newest version at or below the horizon and everything newer.
  std::size_t keep_from = 0;
  for (std::size_t i = 0; i < slot.versions.size(); ++i) {
    if (slot.versions[i].lsn <= prune_horizon) keep_from = i;
  }
  if (keep_from > 0) {
    slot.versions.erase(slot.versions.begin(),
                        slot.versions.begin() + static_cast<std::ptrdiff_t>(keep_from));
  }
}

void RowGroup::apply_delete(Key key, Lsn lsn) {
  auto it = key_index_.find(key);
  if (it == key_index_.end() || !slots_[it->second].live()) {
    throw Error(ErrorCode::kKeyNotFound, schema_->name() + " key " + std::to_string(key));
  }
  slots_[it->second].delete_lsn = lsn;
  readonly_.invalidate(it->second);
  --live_count_;
}

std::optional<std::size_t> RowGroup::position_of(Key key) const {
  auto it = key_index_.find(key);
  if (it == key_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> RowGroup::visible_position(Key key, Lsn watermark) const {
  auto it = key_index_.find(key);
  if (it == key_index_.end()) return std::nullopt;
  std::int64_t pos = static_cast<std::int64_t>(it->second);
  while (pos >= 0) {
    const auto& slot = slots_[static_cast<std::size_t>(pos)];
    if (slot.visible_at(watermark)) return static_cast<std::size_t>(pos);
    if (slot.insert_lsn <= watermark) return std::nullopt;  // deleted at or before watermark
    pos = slot.prev_position;
  }
  return std::nullopt;
}

bool RowGroup::is_live(Key key) const {
  auto pos = position_of(key);
  return pos && slots_[*pos].live();
}

Lsn RowGroup::last_modified(Key key) const {
  auto pos = position_of(key);
  return pos ? slots_[*pos].last_modified() : 0;
}

Row RowGroup::stitched_row(std::size_t position, Lsn watermark) const {
  return schema_->stitch(slots_[position].values_at(watermark), readonly_.row_at(position));
}

void RowGroup::restore(std::vector<UpdateSlot> slots, ReadOnlyPartition readonly) {
  if (slots.size() != readonly.size()) {
    throw Error(ErrorCode::kCorruptCheckpoint, "update/readonly partitions misaligned");
  }
  slots_ = std::move(slots);
  readonly_ = std::move(readonly);
  key_index_.clear();
  live_count_ = 0;
  for (std::size_t p = 0; p < slots_.size(); ++p) {
    key_index_[slots_[p].key] = p;  // later incarnations overwrite earlier ones
    if (slots_[p].live()) ++live_count_;
    if (slots_[p].live() != readonly_.validity().test(p)) {
      throw Error(ErrorCode::kCorruptCheckpoint, "validity bitmap disagrees with update partition");
    }
  }
}

// ---------------------------------------------------------------------------
// Table

struct Table::Registry {
  using Clock = std::chrono::steady_clock;

  std::mutex mu;
  std::vector<std::multiset<Lsn>> pins;
  std::vector<std::deque<std::pair<Clock::time_point, Lsn>>> history;
  std::chrono::nanoseconds lag{0};
};

namespace {

struct PinRecord {
  std::function<void()> release;
  ~PinRecord() {
    if (release) release();
  }
};

}  // namespace

Table::Table(TableSchema schema, std::uint32_t num_groups)
    : schema_(std::move(schema)), ranges_(even_key_ranges(num_groups)),
      registry_(std::make_shared<Registry>()) {
  groups_.reserve(num_groups);
  for (std::uint32_t g = 0; g < num_groups; ++g) {
    groups_.push_back(std::make_unique<RowGroup>(g, ranges_[g], schema_));
  }
  registry_->pins.resize(num_groups);
  registry_->history.resize(num_groups);
  for (auto& h : registry_->history) h.emplace_back(Registry::Clock::time_point::min(), 0);
}

Table::~Table() = default;

GroupId Table::partition_for_key(Key key) const {
  const u128 width = kKeySpace / groups_.size();
  const u128 g = key_offset(key) / width;
  return static_cast<GroupId>(std::min<u128>(g, groups_.size() - 1));
}

Lsn Table::delayed_watermark_locked(GroupId g, std::chrono::steady_clock::time_point now,
                                    std::chrono::nanoseconds lag) const {
  const auto cutoff = now - lag;
  const auto& h = registry_->history[g];
  for (auto it = h.rbegin(); it != h.rend(); ++it) {
    if (it->first <= cutoff) return it->second;
  }
  return 0;
}

TableSnapshot Table::snapshot(std::chrono::nanoseconds lag) const {
  TableSnapshot snap;
  snap.table = this;
  const auto now = Registry::Clock::now();
  std::lock_guard lock(registry_->mu);
  snap.watermarks.reserve(groups_.size());
  for (GroupId g = 0; g < groups_.size(); ++g) {
    const Lsn wm = lag.count() > 0 ? delayed_watermark_locked(g, now, lag) : groups_[g]->watermark();
    snap.watermarks.push_back(wm);
    registry_->pins[g].insert(wm);
  }
  auto record = std::make_shared<PinRecord>();
  std::weak_ptr<Registry> weak = registry_;
  record->release = [weak, wms = snap.watermarks] {
    auto reg = weak.lock();
    if (!reg) return;
    std::lock_guard lock(reg->mu);
    for (std::size_t g = 0; g < wms.size(); ++g) {
      auto it = reg->pins[g].find(wms[g]);
      if (it != reg->pins[g].end()) reg->pins[g].erase(it);
    }
  };
  snap.pin = std::move(record);
  return snap;
}

TableSnapshot Table::empty_snapshot() const {
  TableSnapshot snap;
  snap.table = this;
  snap.watermarks.assign(groups_.size(), 0);
  return snap;
}

void Table::publish(GroupId g, Lsn lsn) {
  const auto now = Registry::Clock::now();
  std::lock_guard lock(registry_->mu);
  if (lsn <= groups_[g]->watermark()) return;
  groups_[g]->set_watermark(lsn);
  auto& h = registry_->history[g];
  h.emplace_back(now, lsn);
  // Only the newest entry older than the reader lag is still reachable.
  const auto cutoff = now - registry_->lag;
  while (h.size() >= 2 && h[1].first <= cutoff) h.pop_front();
}

Lsn Table::prune_horizon(GroupId g) const {
  const auto now = Registry::Clock::now();
  std::lock_guard lock(registry_->mu);
  Lsn h = registry_->lag.count() > 0 ? delayed_watermark_locked(g, now, registry_->lag)
                                     : groups_[g]->watermark();
  if (!registry_->pins[g].empty()) h = std::min(h, *registry_->pins[g].begin());
  return h;
}

void Table::set_reader_lag(std::chrono::nanoseconds lag) {
  std::lock_guard lock(registry_->mu);
  registry_->lag = lag;
}

std::optional<Row> Table::point_get(Key key, const TableSnapshot& snap) const {
  const GroupId g = partition_for_key(key);
  const auto& group = *groups_[g];
  auto lock = group.lock_shared();
  const Lsn wm = snap.watermark(g);
  auto pos = group.visible_position(key, wm);
  if (!pos) return std::nullopt;
  return group.stitched_row(*pos, wm);
}

std::vector<Value> Table::scan_column(std::string_view column,
                                      const std::optional<BetweenPredicate>& predicate,
                                      const TableSnapshot& snap) const {
  const std::size_t target = schema_.column_index(column);
  std::optional<std::size_t> pred_col;
  if (predicate) pred_col = schema_.column_index(predicate->column);

  auto value_of = [this](const RowGroup& group, std::size_t col, std::size_t pos, Lsn wm) {
    const auto slot = schema_.slot_of(col);
    if (schema_.is_updatable(col)) return group.slots()[pos].values_at(wm)[slot];
    return group.readonly().get(slot, pos);
  };

  std::vector<Value> out;
  for (GroupId g = 0; g < groups_.size(); ++g) {
    const auto& group = *groups_[g];
    auto lock = group.lock_shared();
    const Lsn wm = snap.watermark(g);
    const auto& slots = group.slots();
    for (std::size_t pos = 0; pos < slots.size(); ++pos) {
      if (!slots[pos].visible_at(wm)) continue;
      if (pred_col && !between(value_of(group, *pred_col, pos, wm), predicate->lo, predicate->hi)) {
        continue;
      }
      out.push_back(value_of(group, target, pos, wm));
    }
  }
  return out;
}

std::vector<std::pair<Key, Row>> Table::materialize(const TableSnapshot& snap) const {
  std::vector<std::pair<Key, Row>> out;
  for (GroupId g = 0; g < groups_.size(); ++g) {
    const auto& group = *groups_[g];
    auto lock = group.lock_shared();
    const Lsn wm = snap.watermark(g);
    for (const auto& [key, _] : group.key_index()) {
      if (auto pos = group.visible_position(key, wm)) {
        out.emplace_back(key, group.stitched_row(*pos, wm));
      }
    }
  }
  return out;
}

void apply_mutations(std::span<const Mutation> mutations, Lsn commit_lsn) {
  std::vector<std::size_t> order(mutations.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = mutations[a];
    const auto& y = mutations[b];
    if (x.table != y.table) return x.table->name() < y.table->name();
    return x.group < y.group;
  });

  std::size_t i = 0;
  while (i < order.size()) {
    Table& table = *mutations[order[i]].table;
    const GroupId g = mutations[order[i]].group;
    std::size_t end = i;
    while (end < order.size() && mutations[order[end]].table == &table &&
           mutations[order[end]].group == g) {
      ++end;
    }
    RowGroup& group = table.group(g);
    if (commit_lsn > group.watermark()) {
      auto lock = group.lock_exclusive();
      for (std::size_t j = i; j < end; ++j) {
        const auto& m = mutations[order[j]];
        switch (m.kind) {
          case Mutation::Kind::kInsert: group.apply_insert(m.key, m.row, commit_lsn); break;
          case Mutation::Kind::kUpdate:
            group.apply_update(m.key, m.assignments, commit_lsn, table.prune_horizon(g));
            break;
          case Mutation::Kind::kDelete: group.apply_delete(m.key, commit_lsn); break;
        }
      }
      table.publish(g, commit_lsn);
    }
    i = end;
  }
}

}  // namespace htap
