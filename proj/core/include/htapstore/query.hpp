#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "htapstore/storage.hpp"

namespace htap::query {

enum class AggFn : std::uint8_t { kMax, kMin, kSum, kCount, kAvg };

std::string_view fn_name(AggFn fn);
// Case-insensitive; throws ParseError.
AggFn parse_fn(std::string_view name);

struct AggregateQuery {
  std::string table;
  AggFn fn = AggFn::kCount;
  std::string column;
  std::optional<BetweenPredicate> predicate;  // inclusive on both ends
};

/// COUNT always has a value. SUM over no rows is zero. MAX/MIN/AVG over no
/// rows have no value. AVG is float64; SUM keeps the column type.
struct AggregateResult {
  AggFn fn = AggFn::kCount;
  std::optional<Value> value;

  bool empty() const { return !value.has_value(); }
  bool operator==(const AggregateResult&) const = default;
};

std::string to_string(const AggregateResult& r);

struct ColumnRoute {
  std::string column;
  std::string role;  // "target" or "predicate"
  PartitionKind partition = PartitionKind::kUpdate;
  std::size_t slot = 0;

  bool operator==(const ColumnRoute&) const = default;
};

/// Physical routing of an aggregate over the mixed layout: updatable columns
/// are read from the row-format update partition, all others from the
/// column-format read-only partition. When the routes span both kinds, rows
/// are joined by position.
struct PlanDescription {
  std::string table;
  AggFn fn = AggFn::kCount;
  std::vector<ColumnRoute> routes;
  bool positional_join = false;

  std::string to_string() const;
  bool operator==(const PlanDescription&) const = default;
};

// Throws UnknownColumn / TypeMismatch.
PlanDescription plan(const Table& table, const AggregateQuery& q);

// Rows written by an in-flight transaction, keyed by primary key; nullopt
// marks a key the transaction deleted. These shadow the snapshot.
using Overlay = std::map<Key, std::optional<Row>>;

/// Mergeable partial state of one aggregate.
struct Partial {
  std::int64_t count = 0;
  __int128 int_sum = 0;
  double float_sum = 0.0;
  std::optional<Value> best;  // running MAX/MIN

  void merge(const Partial& other, AggFn fn);
};

Partial aggregate_group(const Table& table, GroupId g, const AggregateQuery& q,
                        const TableSnapshot& snap, const Overlay* overlay = nullptr);
Partial aggregate_overlay(const Table& table, const AggregateQuery& q, const Overlay& overlay);
AggregateResult finalize(const Table& table, const AggregateQuery& q, const Partial& p);

// Per-group partial aggregation merged across groups.
AggregateResult aggregate(const Table& table, const AggregateQuery& q, const TableSnapshot& snap,
                          const Overlay* overlay = nullptr);

}  // namespace htap::query
