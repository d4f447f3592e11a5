#include <algorithm>
#include <map>
#include <random>

#include "doctest.h"
#include "htapstore/storage.hpp"
#include "test_support.hpp"

using namespace htap;
using htap::testing::item_row;
using htap::testing::item_schema;

namespace {

Mutation ins(Table& t, Row row) {
  const Key k = std::get<std::int64_t>(row[0]);
  return {Mutation::Kind::kInsert, &t, t.partition_for_key(k), k, std::move(row), {}};
}

Mutation upd(Table& t, Key k, std::vector<std::pair<std::size_t, Value>> a) {
  return {Mutation::Kind::kUpdate, &t, t.partition_for_key(k), k, {}, std::move(a)};
}

Mutation del(Table& t, Key k) { return {Mutation::Kind::kDelete, &t, t.partition_for_key(k), k, {}, {}}; }

void commit(Lsn lsn, std::vector<Mutation> ms) { apply_mutations(ms, lsn); }

TableSchema customer_schema() {
  return TableSchema("customer",
                     {{"C_ID", ValueType::kInt64},
                      {"C_D_ID", ValueType::kInt64},
                      {"C_LAST", ValueType::kString},
                      {"C_BALANCE", ValueType::kFloat64},
                      {"C_DISCOUNT", ValueType::kFloat64},
                      {"C_DATA", ValueType::kString}},
                     "C_ID", {"C_ID", "C_BALANCE", "C_DATA"});
}

}  // namespace

TEST_SUITE("storage") {

TEST_CASE("customer split places id, balance and data in the update partition") {
  const auto s = customer_schema();
  for (const char* c : {"C_ID", "C_BALANCE", "C_DATA"}) {
    CHECK(s.partition_of(s.column_index(c)) == PartitionKind::kUpdate);
  }
  for (const char* c : {"C_D_ID", "C_LAST", "C_DISCOUNT"}) {
    CHECK(s.partition_of(s.column_index(c)) == PartitionKind::kReadOnly);
  }
  CHECK(s.update_columns().size() + s.readonly_columns().size() == s.column_count());
}

TEST_CASE("schema invariants are enforced") {
  using VT = ValueType;
  auto bad = [](auto make) {
    try {
      make();
    } catch (const Error& e) {
      return e.code() == ErrorCode::kInvalidSchema;
    }
    return false;
  };
  CHECK(bad([] { TableSchema("t", {{"id", VT::kInt64}, {"v", VT::kInt64}}, "id", {"v"}); }));
  CHECK(bad([] { TableSchema("t", {{"id", VT::kString}}, "id", {"id"}); }));
  CHECK(bad([] { TableSchema("t", {{"id", VT::kInt64}, {"id", VT::kInt64}}, "id", {"id"}); }));
  CHECK(bad([] { TableSchema("t", {{"id", VT::kInt64}, {"", VT::kInt64}}, "id", {"id"}); }));
  CHECK(bad([] { TableSchema("t", {{"id", VT::kInt64}}, "id", {"id", "nope"}); }));
  CHECK(bad([] { TableSchema("t", {{"id", VT::kInt64}}, "missing", {"id"}); }));
  CHECK(bad([] { TableSchema("", {{"id", VT::kInt64}}, "id", {"id"}); }));
}

TEST_CASE("even key ranges cover the key space without overlap") {
  for (std::uint32_t n : {1u, 2u, 3u, 4u, 7u, 64u}) {
    const auto ranges = even_key_ranges(n);
    REQUIRE(ranges.size() == n);
    CHECK(ranges.front().lo == std::numeric_limits<Key>::min());
    CHECK(ranges.back().contains(std::numeric_limits<Key>::max()));
    for (std::size_t i = 1; i < n; ++i) CHECK(ranges[i].lo == ranges[i - 1].hi);
  }

  Table t(item_schema(), 4);
  const auto ranges = even_key_ranges(4);
  std::mt19937_64 rng(11);
  std::vector<Key> sample(1000);
  for (auto& k : sample) k = static_cast<Key>(rng());
  sample.push_back(std::numeric_limits<Key>::min());
  sample.push_back(std::numeric_limits<Key>::max());
  sample.push_back(0);
  for (Key k : sample) {
    int owners = 0;
    for (const auto& r : ranges) owners += (k >= r.lo && (k < r.hi || (&r == &ranges.back()))) ? 1 : 0;
    CHECK(owners == 1);
    const auto g = t.partition_for_key(k);
    CHECK(t.group(g).range().contains(k));
  }
}

TEST_CASE("partition boundaries are half-open") {
  Table t(item_schema(), 4);
  const auto r2 = t.group(2).range();
  CHECK(t.partition_for_key(r2.lo) == 2);
  CHECK(t.partition_for_key(r2.hi) == 3);
  CHECK(t.partition_for_key(r2.lo - 1) == 1);
}

TEST_CASE("key histogram matches range widths") {
  // Uniform keys over the whole space land evenly in equal-width groups.
  Table t(item_schema(), 4);
  std::mt19937_64 rng(5);
  std::array<int, 4> hist{};
  for (int i = 0; i < 10000; ++i) {
    const Key k = static_cast<Key>(rng());
    // Brute-force oracle: linear search over ranges.
    int owner = -1;
    for (GroupId g = 0; g < 4; ++g) {
      if (t.group(g).range().contains(k)) owner = static_cast<int>(g);
    }
    REQUIRE(owner == static_cast<int>(t.partition_for_key(k)));
    ++hist[static_cast<std::size_t>(owner)];
  }
  for (int h : hist) CHECK(std::abs(h - 2500) < 200);
}

TEST_CASE("insert, duplicate, and round trip of 100 rows") {
  Table t(item_schema(), 1);
  auto& g = t.group(0);
  {
    auto lock = g.lock_exclusive();
    CHECK(g.apply_insert(7, item_row(7, 1, 2.5), 1) == 0);
    CHECK_THROWS_AS(g.apply_insert(7, item_row(7, 1, 2.5), 1), Error);
  }
  t.publish(0, 1);

  Table t2(item_schema(), 4);
  std::vector<Row> rows;
  std::vector<Mutation> ms;
  for (Key k = 1; k <= 100; ++k) {
    rows.push_back(item_row(k * 1000003, k, k * 0.5, "tag" + std::to_string(k), k % 2 == 0));
    ms.push_back(ins(t2, rows.back()));
  }
  commit(5, ms);
  const auto snap = t2.snapshot();
  for (const auto& r : rows) {
    auto got = t2.point_get(std::get<std::int64_t>(r[0]), snap);
    REQUIRE(got);
    CHECK(*got == r);
  }
}

TEST_CASE("update changes only assigned fields and leaves the column partition untouched") {
  Table t(customer_schema(), 2);
  const Row original{Key{256}, std::int64_t{3}, std::string("BARBARBAR"), 10.0, 0.25, std::string("d")};
  commit(1, {ins(t, original)});
  const auto g = t.partition_for_key(256);
  const auto before = t.group(g).readonly().to_bytes();

  commit(2, {upd(t, 256, {{t.schema().column_index("C_BALANCE"), Value{1024.0}}})});
  CHECK(t.group(g).readonly().to_bytes() == before);
  auto got = t.point_get(256, t.snapshot());
  REQUIRE(got);
  Row expected = original;
  expected[3] = 1024.0;
  CHECK(*got == expected);

  auto lock = t.group(g).lock_exclusive();
  try {
    t.group(g).apply_update(256, {{t.schema().column_index("C_LAST"), Value{std::string("x")}}}, 3, 0);
    FAIL("expected NonUpdatableColumn");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonUpdatableColumn);
    CHECK(std::string(e.what()).find("C_LAST") != std::string::npos);
  }
  CHECK_THROWS_AS(t.group(g).apply_update(999, {{3, Value{1.0}}}, 3, 0), Error);
}

TEST_CASE("delete tombstones the column position and hides the row") {
  Table t(item_schema(), 1);
  commit(1, {ins(t, item_row(1, 5, 1.0)), ins(t, item_row(2, 7, 2.0))});
  commit(2, {del(t, 1)});
  const auto snap = t.snapshot();
  CHECK_FALSE(t.point_get(1, snap));
  CHECK(t.point_get(2, snap));
  CHECK_FALSE(t.group(0).readonly().validity().test(0));
  CHECK(t.group(0).readonly().validity().test(1));
  CHECK(t.scan_column("price", std::nullopt, snap) == std::vector<Value>{Value{2.0}});

  auto lock = t.group(0).lock_exclusive();
  try {
    t.group(0).apply_delete(1, 3);
    FAIL("expected KeyNotFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kKeyNotFound);
  }
}

TEST_CASE("snapshots never see later commits") {
  Table t(item_schema(), 2);
  CHECK_FALSE(t.point_get(1, t.snapshot()));
  const auto empty = t.snapshot();
  commit(3, {ins(t, item_row(1, 1, 1.0))});
  const auto s1 = t.snapshot();
  commit(4, {upd(t, 1, {{1, Value{std::int64_t{99}}}})});
  const auto s2 = t.snapshot();
  commit(5, {del(t, 1)});
  const auto s3 = t.snapshot();
  commit(6, {ins(t, item_row(1, 42, 9.0))});
  const auto s4 = t.snapshot();

  CHECK_FALSE(t.point_get(1, empty));
  CHECK(std::get<std::int64_t>((*t.point_get(1, s1))[1]) == 1);
  CHECK(std::get<std::int64_t>((*t.point_get(1, s2))[1]) == 99);
  CHECK_FALSE(t.point_get(1, s3));
  CHECK(std::get<std::int64_t>((*t.point_get(1, s4))[1]) == 42);
  CHECK(std::get<double>((*t.point_get(1, s4))[2]) == 9.0);
  // Older snapshots are unaffected by the reinsert.
  CHECK(std::get<std::int64_t>((*t.point_get(1, s1))[1]) == 1);
  CHECK(t.materialize(s1).size() == 1);
  CHECK(t.materialize(s3).empty());
}

TEST_CASE("scan_column with predicate equals a row-store filter") {
  Table t(item_schema(), 4);
  std::mt19937_64 rng(3);
  std::map<Key, Row> oracle;
  std::vector<Mutation> ms;
  for (int i = 0; i < 1000; ++i) {
    const Key k = static_cast<Key>(rng());
    if (oracle.count(k)) continue;
    Row r = item_row(k, static_cast<std::int64_t>(rng() % 100), static_cast<double>(rng() % 100),
                     "t" + std::to_string(rng() % 5));
    oracle[k] = r;
    ms.push_back(ins(t, r));
  }
  commit(1, ms);
  const auto snap = t.snapshot();
  for (int trial = 0; trial < 30; ++trial) {
    const double lo = static_cast<double>(rng() % 100);
    const double hi = lo + static_cast<double>(rng() % 30);
    for (const char* target : {"qty", "price", "tag"}) {
      for (const char* pcol : {"qty", "price"}) {
        BetweenPredicate p{pcol, lo, hi};
        auto got = t.scan_column(target, p, snap);
        std::vector<Value> want;
        const auto ti = t.schema().column_index(target);
        const auto pi = t.schema().column_index(pcol);
        for (const auto& [k, r] : oracle) {
          const double v = as_double(r[pi]);
          if (v >= lo && v <= hi) want.push_back(r[ti]);
        }
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
      }
    }
  }
  CHECK(t.scan_column("qty", BetweenPredicate{"price", 500.0, 600.0}, snap).empty());
  CHECK_THROWS_AS(t.scan_column("nope", std::nullopt, snap), Error);
}

TEST_CASE("column arrays stay aligned") {
  Table t(item_schema(), 2);
  std::mt19937_64 rng(9);
  std::map<Key, Row> oracle;
  Lsn lsn = 0;
  for (int step = 0; step < 400; ++step) {
    const Key k = static_cast<Key>(rng() % 64) * 0x0400000000000000ll;
    std::vector<Mutation> ms;
    if (!oracle.count(k)) {
      Row r = item_row(k, step, step * 1.5, std::string(static_cast<std::size_t>(step % 7), 'q'));
      oracle[k] = r;
      ms.push_back(ins(t, r));
    } else if (rng() % 2) {
      oracle[k][1] = std::int64_t{step};
      ms.push_back(upd(t, k, {{1, Value{std::int64_t{step}}}}));
    } else {
      oracle.erase(k);
      ms.push_back(del(t, k));
    }
    commit(++lsn, ms);
    for (GroupId g = 0; g < t.group_count(); ++g) {
      const auto& grp = t.group(g);
      const auto& ro = grp.readonly();
      REQUIRE(ro.size() == grp.slots().size());
      for (std::size_t c = 0; c < ro.column_count(); ++c) {
        std::visit([&](const auto& col) { CHECK(col.size() == ro.size()); }, ro.column(c));
      }
    }
  }
  const auto got = t.materialize(t.snapshot());
  REQUIRE(got.size() == oracle.size());
  auto it = oracle.begin();
  for (const auto& [k, r] : got) {
    CHECK(k == it->first);
    CHECK(r == it->second);
    ++it;
  }
}

TEST_CASE("readonly partition serialization round trips") {
  Table t(item_schema(), 1);
  commit(1, {ins(t, item_row(1, 1, 1.5, "a", true)), ins(t, item_row(2, 2, 2.5, "bcd", false))});
  commit(2, {del(t, 1)});
  const auto& ro = t.group(0).readonly();
  std::vector<ValueType> types;
  for (auto c : t.schema().readonly_columns()) types.push_back(t.schema().columns()[c].type);
  const auto back = ReadOnlyPartition::from_bytes(types, ro.to_bytes());
  CHECK(back.to_bytes() == ro.to_bytes());
  CHECK(back.size() == 2);
  CHECK_FALSE(back.validity().test(0));
}

}  // TEST_SUITE
