// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Tolerances and sizes are fixed here on purpose.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "htapstore/bench.hpp"
#include "htapstore/engine.hpp"
#include "htapstore/nearml.hpp"
#include "htapstore/perfmodel.hpp"
#include "test_support.hpp"

using namespace htap;
using htap::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

EngineOptions fast(std::chrono::nanoseconds delay = std::chrono::nanoseconds{0}) {
  EngineOptions o;
  o.durability = wal::Durability::kOsBuffer;
  o.propagation_delay = delay;
  return o;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool rel_close(double got, double want, double tol) {
  if (got == want) return true;
  return std::fabs(got - want) <= tol * std::max(std::fabs(got), std::fabs(want));
}

// ---------------------------------------------------------------------------

Outcome perfmodel_exact() {
  const perfmodel::TransferScenario s{50, perfmodel::parse_bytes("1GB"), perfmodel::parse_bytes("500MB/s"),
                                      perfmodel::parse_bytes("100GB/s")};
  const double sep = perfmodel::separate_latency(s);
  const double near = perfmodel::neardata_latency(s);
  const double g = perfmodel::gap(s);
  std::ostringstream d;
  d.precision(17);
  d << "separate=" << sep << "s neardata=" << near << "s gap=" << g;
  return {sep == 100.0 && near == 0.01 && g == 10000.0, d.str()};
}

Outcome freshness() {
  std::ostringstream d;
  bench::FreshnessReport mixed, baseline;
  {
    TempDir dir("acc-fresh");
    Engine e(dir.path(), fast());
    bench::FreshnessConfig c;
    c.iterations = 10000;
    c.seed = 11;
    mixed = bench::probe_freshness(e, c);
  }
  {
    TempDir dir("acc-fresh-base");
    Engine e(dir.path(), fast(std::chrono::milliseconds(50)));
    bench::FreshnessConfig c;
    c.iterations = 40;
    c.seed = 11;
    baseline = bench::probe_freshness(e, c);
  }
  d << "mixed " << mixed.fresh << "/" << mixed.iterations << " fresh; 50ms baseline " << baseline.stale << "/"
    << baseline.iterations << " stale, max lag " << baseline.max_lag_us / 1000.0 << "ms";
  const bool ok = mixed.iterations == 10000 && mixed.fresh == 10000 && mixed.stale == 0 &&
                  mixed.never_visible == 0 && baseline.stale > 0 && baseline.max_lag_us > 0;
  return {ok, d.str()};
}

// Random tables, random committed writes, random queries; the oracle is a
// plain map of full rows maintained by this driver.
Outcome aggregate_oracle() {
  std::mt19937_64 rng(1234);
  std::size_t cases = 0, mismatches = 0;
  std::string first_bad;
  const TableSchema schema("agg",
                           {{"id", ValueType::kInt64},
                            {"u_i", ValueType::kInt64},
                            {"u_f", ValueType::kFloat64},
                            {"r_i", ValueType::kInt64},
                            {"r_f", ValueType::kFloat64},
                            {"r_s", ValueType::kString},
                            {"r_b", ValueType::kBool}},
                           "id", {"id", "u_i", "u_f"});
  const std::vector<std::string> numeric = {"u_i", "u_f", "r_i", "r_f"};
  const std::vector<std::string> ordered = {"u_i", "u_f", "r_i", "r_f", "r_s", "r_b"};
  const std::vector<query::AggFn> fns = {query::AggFn::kMax, query::AggFn::kMin, query::AggFn::kSum,
                                         query::AggFn::kCount, query::AggFn::kAvg};
  const std::size_t sizes[] = {0, 1, 7, 100, 1000, 2500, 5000, 10000};

  for (std::size_t ti = 0; ti < std::size(sizes); ++ti) {
    TempDir dir("acc-agg");
    Engine e(dir.path(), fast());
    e.create_table(schema, 1 + static_cast<std::uint32_t>(ti % 5));
    std::map<Key, Row> oracle;
    auto rand_row = [&](Key k) {
      std::uniform_int_distribution<std::int64_t> small(-1000, 1000);
      std::uniform_real_distribution<double> real(-500.0, 500.0);
      return Row{k, small(rng), real(rng), small(rng), real(rng), std::string(1, char('a' + rng() % 26)),
                 static_cast<bool>(rng() & 1)};
    };
    // Keys spread over the whole key space so every group gets rows.
    std::vector<Key> keys;
    while (keys.size() < sizes[ti]) {
      const Key k = static_cast<Key>(rng());
      if (!oracle.count(k)) {
        keys.push_back(k);
        oracle[k] = rand_row(k);
      }
    }
    for (std::size_t i = 0; i < keys.size(); i += 1000) {
      Txn t = e.begin();
      for (std::size_t j = i; j < std::min(keys.size(), i + 1000); ++j) t.insert("agg", oracle[keys[j]]);
      t.commit();
    }
    // Updates and deletes so old versions and tombstones are in play.
    if (!keys.empty()) {
      Txn t = e.begin();
      for (std::size_t i = 0; i < keys.size() / 3; ++i) {
        const Key k = keys[rng() % keys.size()];
        if (!oracle.count(k)) continue;
        if (rng() % 4 == 0) {
          t.remove("agg", k);
          oracle.erase(k);
        } else {
          const std::int64_t ui = static_cast<std::int64_t>(rng() % 2001) - 1000;
          const double uf = std::uniform_real_distribution<double>(-500, 500)(rng);
          t.update("agg", k, {{"u_i", ui}, {"u_f", uf}});
          oracle[k][1] = ui;
          oracle[k][2] = uf;
        }
      }
      t.commit();
    }

    const std::size_t per_table = 150;
    for (std::size_t qi = 0; qi < per_table; ++qi) {
      query::AggregateQuery q;
      q.table = "agg";
      q.fn = fns[rng() % fns.size()];
      const bool numeric_fn = q.fn == query::AggFn::kSum || q.fn == query::AggFn::kAvg;
      q.column = numeric_fn ? numeric[rng() % numeric.size()] : ordered[rng() % ordered.size()];
      if (rng() % 4 != 0) {
        const std::string pc = numeric[rng() % numeric.size()];
        const bool is_int = pc == "u_i" || pc == "r_i";
        double a = std::uniform_real_distribution<double>(-600, 600)(rng);
        double b = a + std::uniform_real_distribution<double>(0, 600)(rng);
        if (is_int) {
          q.predicate = BetweenPredicate{pc, std::int64_t(std::floor(a)), std::int64_t(std::floor(b))};
        } else {
          q.predicate = BetweenPredicate{pc, a, b};
        }
      }
      const std::size_t ci = schema.column_index(q.column);
      std::optional<std::size_t> pi;
      if (q.predicate) pi = schema.column_index(q.predicate->column);

      // Oracle.
      std::vector<Value> vals;
      for (const auto& [k, row] : oracle) {
        if (pi) {
          const Value& v = row[*pi];
          const double x = v.index() == 0 ? double(std::get<std::int64_t>(v)) : std::get<double>(v);
          auto num = [](const Value& b) {
            return b.index() == 0 ? double(std::get<std::int64_t>(b)) : std::get<double>(b);
          };
          if (x < num(q.predicate->lo) || x > num(q.predicate->hi)) continue;
        }
        vals.push_back(row[ci]);
      }
      std::optional<Value> want;
      bool float_tol = false;
      switch (q.fn) {
        case query::AggFn::kCount: want = std::int64_t(vals.size()); break;
        case query::AggFn::kMax:
          if (!vals.empty()) want = *std::max_element(vals.begin(), vals.end());
          break;
        case query::AggFn::kMin:
          if (!vals.empty()) want = *std::min_element(vals.begin(), vals.end());
          break;
        case query::AggFn::kSum:
          if (q.column == "u_i" || q.column == "r_i") {
            std::int64_t sum = 0;
            for (const auto& v : vals) sum += std::get<std::int64_t>(v);
            want = sum;
          } else {
            double sum = 0;
            for (const auto& v : vals) sum += std::get<double>(v);
            want = sum;
            float_tol = true;
          }
          break;
        case query::AggFn::kAvg:
          if (!vals.empty()) {
            double s = 0;
            for (const auto& v : vals) s += v.index() == 0 ? double(std::get<std::int64_t>(v)) : std::get<double>(v);
            want = s / double(vals.size());
            float_tol = true;
          }
          break;
      }

      const auto got = (qi % 2 == 0) ? e.aggregate(q) : e.begin().aggregate(q);
      ++cases;
      bool ok;
      if (!want || !got.value) {
        ok = !want && !got.value;
      } else if (float_tol) {
        ok = got.value->index() == 1 && rel_close(std::get<double>(*got.value), std::get<double>(*want), 1e-9);
      } else {
        ok = *got.value == *want;
      }
      if (!ok) {
        ++mismatches;
        if (first_bad.empty()) {
          first_bad = std::string(query::fn_name(q.fn)) + "(" + q.column + ") rows=" +
                      std::to_string(oracle.size()) + " got " + query::to_string(got) + " want " +
                      (want ? htap::to_string(*want) : "EMPTY");
        }
      }
    }
  }
  std::ostringstream d;
  d << cases << " cases, " << mismatches << " mismatches";
  if (!first_bad.empty()) d << "; first: " << first_bad;
  return {cases >= 1000 && mismatches == 0, d.str()};
}

// 20 transactions over both presets: inserts, updates, deletes, rollbacks.
TxnScript crash_script(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TxnScript s;
  std::map<std::string, std::vector<Key>> live;
  std::map<std::string, Key> next_key = {{"customer", 1}, {"web_sales", 1}};
  const std::pair<bench::Preset, std::string> tables[] = {{bench::Preset::kCustomerSplit, "customer"},
                                                          {bench::Preset::kWebSales, "web_sales"}};
  for (int t = 0; t < 20; ++t) {
    ScriptTxn txn;
    txn.commit = t < 2 || rng() % 4 != 0;
    auto staged = live;
    const int ops = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < ops; ++i) {
      const auto& [preset, name] = tables[rng() % 2];
      auto& keys = staged[name];
      const auto choice = keys.empty() ? 0 : rng() % 3;
      const std::string key_col = name == "customer" ? "c_id" : "ws_order_number";
      if (choice == 0) {
        const Key k = next_key[name]++;
        txn.steps.push_back(InsertStmt{name, bench::preset_row(preset, k, seed)});
        keys.push_back(k);
      } else if (choice == 1) {
        const Key k = keys[rng() % keys.size()];
        UpdateStmt u{name, {}, key_col, k};
        if (name == "customer") {
          u.assignments = {{"c_balance", double(rng() % 10000) / 4}, {"c_data", "d" + std::to_string(rng() % 100)}};
        } else {
          u.assignments = {{"ws_quantity", std::int64_t(rng() % 100)}};
        }
        txn.steps.push_back(u);
      } else {
        const std::size_t idx = rng() % keys.size();
        txn.steps.push_back(DeleteStmt{name, key_col, keys[idx]});
        keys.erase(keys.begin() + static_cast<std::ptrdiff_t>(idx));
      }
    }
    if (txn.commit) live = staged;
    s.txns.push_back(std::move(txn));
  }
  return s;
}

Outcome crash_sweep() {
  TempDir dir("acc-sweep");
  bench::SweepConfig c;
  c.work_dir = dir.path();
  c.num_groups = 3;
  const auto script = crash_script(2024);
  const auto r = bench::crash_sweep(script, c);
  std::size_t commits = 0;
  for (const auto& t : script.txns) commits += t.commit;
  std::ostringstream d;
  d << r.passed() << "/" << r.verdicts.size() << " offsets match over a " << r.log_bytes << "-byte log of "
    << script.txns.size() << " txns (" << r.committed_txns << " committed)";
  for (const auto& v : r.verdicts) {
    if (!v.pass) {
      d << "; first failure at " << v.offset << ": " << v.detail;
      break;
    }
  }
  const bool ok = script.txns.size() == 20 && r.committed_txns == commits && r.verdicts.size() == r.log_bytes + 1 &&
                  r.all_passed();
  return {ok, d.str()};
}

// Random mixes with rollbacks; the removal oracle counts insert and delete
// operations issued by transactions this driver rolled back.
Outcome compression() {
  std::mt19937_64 rng(99);
  const TableSchema schema("mix", {{"id", ValueType::kInt64}, {"a", ValueType::kInt64}, {"b", ValueType::kString}},
                           "id", {"id", "a"});
  std::size_t ok_state = 0, ok_count = 0, total_removed = 0;
  std::string first_bad;
  const int kMixes = 500;
  for (int m = 0; m < kMixes; ++m) {
    TempDir dir("acc-cmp");
    const auto orig = dir.path() / "orig";
    const auto comp = dir.path() / "comp";
    std::size_t oracle_removed = 0;
    wal::CompressionStats stats;
    {
      Engine e(comp, fast());
      e.create_table(schema, 1 + static_cast<std::uint32_t>(rng() % 4));
      std::vector<Key> live;
      const int txns = 1 + static_cast<int>(rng() % 12);
      for (int t = 0; t < txns; ++t) {
        Txn txn = e.begin();
        auto staged = live;
        std::size_t col_items = 0;
        const int ops = 1 + static_cast<int>(rng() % 6);
        for (int i = 0; i < ops; ++i) {
          const auto choice = staged.empty() ? 0 : rng() % 3;
          if (choice == 0) {
            const Key k = static_cast<Key>(rng() >> 1) * ((rng() & 1) ? 1 : -1);
            if (std::find(staged.begin(), staged.end(), k) != staged.end()) continue;
            txn.insert("mix", {k, std::int64_t(rng() % 1000), std::string(1 + rng() % 8, 'x')});
            staged.push_back(k);
            ++col_items;
          } else if (choice == 1) {
            txn.update("mix", staged[rng() % staged.size()], {{"a", std::int64_t(rng() % 1000)}});
          } else {
            const std::size_t idx = rng() % staged.size();
            txn.remove("mix", staged[idx]);
            staged.erase(staged.begin() + static_cast<std::ptrdiff_t>(idx));
            ++col_items;
          }
        }
        if (rng() % 3 == 0) {
          txn.rollback();
          oracle_removed += col_items;
        } else {
          txn.commit();
          live = staged;
        }
      }
      std::filesystem::create_directories(orig);
      std::filesystem::copy_file(comp / Engine::kCatalogFile, orig / Engine::kCatalogFile);
      std::filesystem::copy_file(comp / Engine::kLogFile, orig / Engine::kLogFile);
      stats = e.compress_log();
    }
    Engine a(orig, fast());
    Engine b(comp, fast());
    const bool same = a.checkpoint_bytes() == b.checkpoint_bytes() &&
                      a.table("mix").materialize(a.table("mix").snapshot()) ==
                          b.table("mix").materialize(b.table("mix").snapshot());
    ok_state += same;
    ok_count += stats.records_removed == oracle_removed;
    total_removed += stats.records_removed;
    if (first_bad.empty() && (!same || stats.records_removed != oracle_removed)) {
      first_bad = "mix " + std::to_string(m) + ": state " + (same ? "equal" : "differs") + ", removed " +
                  std::to_string(stats.records_removed) + " want " + std::to_string(oracle_removed);
    }
  }
  std::ostringstream d;
  d << ok_state << "/" << kMixes << " state-equal, " << ok_count << "/" << kMixes << " removal counts match ("
    << total_removed << " column items removed)";
  if (!first_bad.empty()) d << "; first: " << first_bad;
  return {ok_state == kMixes && ok_count == kMixes, d.str()};
}

Outcome reward() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  std::size_t bad = 0;
  const int kCases = 10000;
  for (int i = 0; i < kCases; ++i) {
    nearml::RewardComponents c;
    nearml::RewardWeights w;
    w.beta = u(rng);
    for (int j = 0; j < 6; ++j) {
      c.r[j] = u(rng);
      w.lambda[j] = u(rng);
    }
    const double direct = w.beta + w.lambda[0] * c.r[0] + w.lambda[1] * c.r[1] + w.lambda[2] * c.r[2] +
                          w.lambda[3] * c.r[3] + w.lambda[4] * c.r[4] + w.lambda[5] * c.r[5];
    const double got = nearml::compute_reward(c, w);
    if (!rel_close(got, direct, 1e-12)) ++bad;
  }
  std::size_t beta_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    nearml::RewardComponents c;
    for (auto& x : c.r) x = u(rng);
    const nearml::RewardWeights w{u(rng), {}};
    if (nearml::compute_reward(c, w) != w.beta) ++beta_bad;
  }
  std::ostringstream d;
  d << kCases - bad << "/" << kCases << " within 1e-12; zero-weight cases returning beta exactly: " << 1000 - beta_bad
    << "/1000";
  return {bad == 0 && beta_bad == 0, d.str()};
}

Outcome triggers() {
  const int kRuns = 100;
  const std::uint64_t ks[] = {1, 7, 100};
  int good_runs = 0;
  std::string first_bad;
  std::uint64_t max_writes = 0;
  for (int run = 0; run < kRuns; ++run) {
    TempDir dir("acc-trig");
    Engine e(dir.path(), fast());
    e.create_table(TableSchema("w", {{"id", ValueType::kInt64}, {"v", ValueType::kInt64}}, "id", {"id", "v"}), 4);
    e.create_table(TableSchema("other", {{"id", ValueType::kInt64}}, "id", {"id"}), 1);
    nearml::TriggerManager tm(e);
    std::vector<int> ids;
    std::atomic<std::uint64_t> callbacks{0};
    for (auto k : ks) {
      ids.push_back(tm.register_trigger("w", k, [&](const nearml::TriggerEvent&) {
                          ++callbacks;
                          return std::shared_ptr<const nearml::Model>{};
                        }).id);
    }
    std::atomic<std::uint64_t> committed_writes{0};
    std::vector<std::thread> writers;
    for (int th = 0; th < 8; ++th) {
      writers.emplace_back([&, th] {
        std::mt19937_64 rng(static_cast<std::uint64_t>(run) * 131 + th);
        const int txns = 5 + static_cast<int>(rng() % 20);
        for (int t = 0; t < txns; ++t) {
          Txn txn = e.begin();
          std::uint64_t writes = 0;
          try {
            const int ops = 1 + static_cast<int>(rng() % 6);
            for (int i = 0; i < ops; ++i) {
              // Shared key domain: conflicts and duplicate keys happen.
              const Key k = static_cast<Key>(rng() % 200);
              if (txn.get("w", k)) {
                if (rng() & 1) {
                  txn.update("w", k, {{"v", std::int64_t(rng() % 50)}});
                } else {
                  txn.remove("w", k);
                }
              } else {
                txn.insert("w", {k, std::int64_t(t)});
              }
              ++writes;
            }
            if (rng() % 5 == 0) txn.insert("other", {static_cast<Key>(th * 1000 + t)});
            if (rng() % 6 == 0) {
              txn.rollback();
            } else {
              txn.commit();
              committed_writes += writes;
            }
          } catch (const Error& err) {
            if (err.code() != ErrorCode::kSecondWriterAborted && err.code() != ErrorCode::kDuplicateKey) throw;
            if (txn.state() == TxnState::kActive) txn.rollback();
          }
        }
      });
    }
    for (auto& w : writers) w.join();
    tm.drain();
    const std::uint64_t total = committed_writes.load();
    max_writes = std::max(max_writes, total);
    bool ok = true;
    std::uint64_t want_callbacks = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      want_callbacks += total / ks[i];
      if (tm.fired_count(ids[i]) != total / ks[i] || tm.committed_writes(ids[i]) != total) {
        ok = false;
        if (first_bad.empty()) {
          first_bad = "run " + std::to_string(run) + " K=" + std::to_string(ks[i]) + ": fired " +
                      std::to_string(tm.fired_count(ids[i])) + " want " + std::to_string(total / ks[i]);
        }
      }
    }
    ok = ok && callbacks == want_callbacks;
    good_runs += ok;
  }
  std::ostringstream d;
  d << good_runs << "/" << kRuns << " runs with firings == floor(writes/K) for K in {1,7,100}; up to " << max_writes
    << " committed writes per run";
  if (!first_bad.empty()) d << "; first: " << first_bad;
  return {good_runs == kRuns, d.str()};
}

Outcome hybrid_determinism() {
  std::vector<std::vector<std::uint8_t>> images;
  std::uint64_t committed = 0;
  for (int rep = 0; rep < 5; ++rep) {
    TempDir dir("acc-det");
    Engine e(dir.path(), fast());
    bench::load(e, bench::Preset::kCustomerSplit, 2000, 17);
    bench::load(e, bench::Preset::kWebSales, 2000, 17);
    bench::WorkloadConfig c;
    c.mode = bench::Mode::kHybrid;
    c.threads = 1;
    c.seed = 42;
    c.max_txns = 2000;
    c.duration_s = 600;
    const auto r = bench::run(e, c);
    committed = r.committed;
    const auto path = dir.path() / "end.htsc";
    e.write_checkpoint(path);
    images.push_back(read_file(path));
  }
  const bool same = std::all_of(images.begin(), images.end(), [&](const auto& x) { return x == images[0]; });
  std::ostringstream d;
  d << "5 runs of " << committed << " committed txns, checkpoint " << images[0].size() << " bytes, "
    << (same ? "byte-identical" : "differs");
  return {same && !images[0].empty() && committed > 0, d.str()};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> fn;
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"perfmodel-exactness", 1, perfmodel_exact},
      {"freshness-zero-propagation", 120, freshness},
      {"aggregate-oracle-equivalence", 60, aggregate_oracle},
      {"crash-sweep-durability", 120, crash_sweep},
      {"log-compression-equivalence", 60, compression},
      {"reward-arithmetic", 60, reward},
      {"trigger-counting", 300, triggers},
      {"hybrid-determinism", 300, hybrid_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(c.budget_s)) + "s budget";
    }
    std::printf("%s %s: %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
