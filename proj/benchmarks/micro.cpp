#include <benchmark/benchmark.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "htapstore/bench.hpp"
#include "htapstore/engine.hpp"
#include "htapstore/nearml.hpp"

using namespace htap;

namespace {

std::filesystem::path scratch(const std::string& tag) {
  static std::atomic<int> n{0};
  auto p = std::filesystem::temp_directory_path() /
           ("htapstore-bench-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
  std::filesystem::remove_all(p);
  return p;
}

EngineOptions fast() {
  EngineOptions o;
  o.durability = wal::Durability::kOsBuffer;
  return o;
}

struct Loaded {
  std::filesystem::path dir;
  std::unique_ptr<Engine> engine;

  explicit Loaded(std::size_t rows) : dir(scratch("load")) {
    engine = std::make_unique<Engine>(dir, fast());
    bench::load(*engine, bench::Preset::kWebSales, rows, 1);
    bench::load(*engine, bench::Preset::kCustomerSplit, rows, 1);
  }
  ~Loaded() {
    engine.reset();
    std::filesystem::remove_all(dir);
  }
};

// MAX over a read-only column filtered on another read-only column.
void BM_AggregateReadOnly(benchmark::State& state) {
  Loaded l(static_cast<std::size_t>(state.range(0)));
  const query::AggregateQuery q{"web_sales", query::AggFn::kMax, "ws_quantity",
                                BetweenPredicate{"ws_price", 64.0, 80.0}};
  for (auto _ : state) benchmark::DoNotOptimize(l.engine->aggregate(q));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AggregateReadOnly)->Arg(10'000)->Arg(100'000);

// SUM over the update partition, predicate on the read-only partition.
void BM_AggregateAcrossPartitions(benchmark::State& state) {
  Loaded l(static_cast<std::size_t>(state.range(0)));
  const query::AggregateQuery q{"customer", query::AggFn::kSum, "c_balance",
                                BetweenPredicate{"c_discount", 0.0, 0.25}};
  for (auto _ : state) benchmark::DoNotOptimize(l.engine->aggregate(q));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AggregateAcrossPartitions)->Arg(10'000)->Arg(100'000);

void BM_PointGet(benchmark::State& state) {
  Loaded l(100'000);
  std::mt19937_64 rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(l.engine->point_get("customer", 1 + rng() % 100'000));
}
BENCHMARK(BM_PointGet);

void BM_UpdateCommit(benchmark::State& state) {
  Loaded l(10'000);
  std::mt19937_64 rng(2);
  for (auto _ : state) {
    Txn t = l.engine->begin();
    t.update("customer", 1 + rng() % 10'000, {{"c_balance", double(rng() % 1000)}});
    t.commit();
  }
}
BENCHMARK(BM_UpdateCommit);

void BM_InsertCommit(benchmark::State& state) {
  const auto dir = scratch("ins");
  {
    Engine e(dir, fast());
    e.create_table(bench::preset_schema(bench::Preset::kWebSales), 4);
    Key k = 1;
    for (auto _ : state) {
      Txn t = e.begin();
      t.insert("web_sales", bench::preset_row(bench::Preset::kWebSales, k++, 1));
      t.commit();
    }
  }
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_InsertCommit);

void BM_HybridTxn(benchmark::State& state) {
  Loaded l(10'000);
  bench::WorkloadConfig c;
  c.customers = c.web_sales = 10'000;
  bench::OpGenerator gen(c, 0);
  for (auto _ : state) benchmark::DoNotOptimize(l.engine->run_hybrid(gen.next()));
}
BENCHMARK(BM_HybridTxn);

void BM_Recommend(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<nearml::CommodityId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<nearml::CommodityId>(i);
  const auto s = nearml::extract_features(nearml::SessionEvents{}, nearml::Commodity{});
  nearml::Recommender r(ids, s.features.size());
  for (auto _ : state) benchmark::DoNotOptimize(r.recommend(s, 10));
}
BENCHMARK(BM_Recommend)->Arg(1000)->Arg(10'000);

}  // namespace

BENCHMARK_MAIN();
