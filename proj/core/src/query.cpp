#include "htapstore/query.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <sstream>

namespace htap::query {

std::string_view fn_name(AggFn fn) {
  switch (fn) {
    case AggFn::kMax: return "MAX";
    case AggFn::kMin: return "MIN";
    case AggFn::kSum: return "SUM";
    case AggFn::kCount: return "COUNT";
    case AggFn::kAvg: return "AVG";
  }
  return "?";
}

AggFn parse_fn(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  for (auto fn : {AggFn::kMax, AggFn::kMin, AggFn::kSum, AggFn::kCount, AggFn::kAvg}) {
    if (fn_name(fn) == up) return fn;
  }
  throw Error(ErrorCode::kParseError, "unknown aggregate function '" + std::string(name) + "'");
}

std::string to_string(const AggregateResult& r) {
  return std::string(fn_name(r.fn)) + "=" + (r.value ? htap::to_string(*r.value) : "EMPTY");
}

std::string PlanDescription::to_string() const {
  std::ostringstream os;
  os << fn_name(fn) << " on " << table << ":";
  for (const auto& r : routes) {
    os << " [" << r.role << " " << r.column << " <- " << partition_name(r.partition) << "#"
       << r.slot << "]";
  }
  if (positional_join) os << " join-by-position";
  return os.str();
}

namespace {

bool is_numeric(ValueType t) { return t == ValueType::kInt64 || t == ValueType::kFloat64; }

void check_bound(const ColumnDef& col, const Value& bound) {
  const auto bt = type_of(bound);
  const bool ok = (is_numeric(col.type) && is_numeric(bt)) || col.type == bt;
  if (!ok) {
    throw Error(ErrorCode::kTypeMismatch, "predicate on " + col.name + " (" +
                                              std::string(type_name(col.type)) +
                                              ") with bound " + htap::to_string(bound));
  }
}

}  // namespace

PlanDescription plan(const Table& table, const AggregateQuery& q) {
  const auto& schema = table.schema();
  const std::size_t target = schema.column_index(q.column);
  const auto target_type = schema.columns()[target].type;
  if ((q.fn == AggFn::kSum || q.fn == AggFn::kAvg) && !is_numeric(target_type)) {
    throw Error(ErrorCode::kTypeMismatch, std::string(fn_name(q.fn)) + " over " +
                                              std::string(type_name(target_type)) + " column " +
                                              q.column);
  }
  PlanDescription p;
  p.table = table.name();
  p.fn = q.fn;
  p.routes.push_back({q.column, "target", schema.partition_of(target), schema.slot_of(target)});
  if (q.predicate) {
    const std::size_t pc = schema.column_index(q.predicate->column);
    check_bound(schema.columns()[pc], q.predicate->lo);
    check_bound(schema.columns()[pc], q.predicate->hi);
    p.routes.push_back({q.predicate->column, "predicate", schema.partition_of(pc), schema.slot_of(pc)});
    p.positional_join = schema.partition_of(pc) != schema.partition_of(target);
  }
  return p;
}

void Partial::merge(const Partial& other, AggFn fn) {
  count += other.count;
  int_sum += other.int_sum;
  float_sum += other.float_sum;
  if (other.best) {
    if (!best) {
      best = other.best;
    } else {
      const int c = compare_values(*other.best, *best);
      if ((fn == AggFn::kMax && c > 0) || (fn == AggFn::kMin && c < 0)) best = other.best;
    }
  }
}

namespace {

// Folds one qualifying value into the partial.
inline void accumulate(Partial& p, AggFn fn, const Value& v) {
  ++p.count;
  switch (fn) {
    case AggFn::kSum:
    case AggFn::kAvg:
      if (const auto* i = std::get_if<std::int64_t>(&v)) {
        p.int_sum += *i;
      } else {
        p.float_sum += std::get<double>(v);
      }
      break;
    case AggFn::kMax:
      if (!p.best || compare_values(v, *p.best) > 0) p.best = v;
      break;
    case AggFn::kMin:
      if (!p.best || compare_values(v, *p.best) < 0) p.best = v;
      break;
    case AggFn::kCount: break;
  }
}

}  // namespace

Partial aggregate_group(const Table& table, GroupId g, const AggregateQuery& q,
                        const TableSnapshot& snap, const Overlay* overlay) {
  const auto description = plan(table, q);
  const auto& target = description.routes[0];
  const ColumnRoute* pred = description.routes.size() > 1 ? &description.routes[1] : nullptr;

  const RowGroup& group = table.group(g);
  auto lock = group.lock_shared();
  const Lsn wm = snap.watermark(g);
  const auto& slots = group.slots();
  const auto& ro = group.readonly();

  auto fetch = [&](const ColumnRoute& route, std::size_t pos) -> Value {
    if (route.partition == PartitionKind::kUpdate) return slots[pos].values_at(wm)[route.slot];
    return ro.get(route.slot, pos);
  };

  Partial p;
  for (std::size_t pos = 0; pos < slots.size(); ++pos) {
    const auto& slot = slots[pos];
    if (!slot.visible_at(wm)) continue;
    if (overlay && overlay->count(slot.key)) continue;
    if (pred && !between(fetch(*pred, pos), q.predicate->lo, q.predicate->hi)) continue;
    if (q.fn == AggFn::kCount) {
      ++p.count;
    } else {
      accumulate(p, q.fn, fetch(target, pos));
    }
  }
  return p;
}

Partial aggregate_overlay(const Table& table, const AggregateQuery& q, const Overlay& overlay) {
  const auto& schema = table.schema();
  const std::size_t target = schema.column_index(q.column);
  std::optional<std::size_t> pc;
  if (q.predicate) pc = schema.column_index(q.predicate->column);
  Partial p;
  for (const auto& [key, row] : overlay) {
    if (!row) continue;
    if (pc && !between((*row)[*pc], q.predicate->lo, q.predicate->hi)) continue;
    accumulate(p, q.fn, (*row)[target]);
  }
  return p;
}

AggregateResult finalize(const Table& table, const AggregateQuery& q, const Partial& p) {
  const auto type = table.schema().columns()[table.schema().column_index(q.column)].type;
  AggregateResult r;
  r.fn = q.fn;
  switch (q.fn) {
    case AggFn::kCount: r.value = p.count; break;
    case AggFn::kMax:
    case AggFn::kMin: r.value = p.best; break;
    case AggFn::kSum:
      if (type == ValueType::kInt64) {
        if (p.int_sum > std::numeric_limits<std::int64_t>::max() ||
            p.int_sum < std::numeric_limits<std::int64_t>::min()) {
          throw Error(ErrorCode::kOverflow, "SUM(" + q.column + ") exceeds int64");
        }
        r.value = static_cast<std::int64_t>(p.int_sum);
      } else {
        r.value = p.float_sum;
      }
      break;
    case AggFn::kAvg:
      if (p.count > 0) {
        const double total = type == ValueType::kInt64 ? static_cast<double>(p.int_sum) : p.float_sum;
        r.value = total / static_cast<double>(p.count);
      }
      break;
  }
  return r;
}

AggregateResult aggregate(const Table& table, const AggregateQuery& q, const TableSnapshot& snap,
                          const Overlay* overlay) {
  plan(table, q);  // validates before touching any group
  Partial total;
  for (GroupId g = 0; g < table.group_count(); ++g) {
    total.merge(aggregate_group(table, g, q, snap, overlay), q.fn);
  }
  if (overlay) total.merge(aggregate_overlay(table, q, *overlay), q.fn);
  return finalize(table, q, total);
}

}  // namespace htap::query
