#include "htapstore/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <iterator>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace htap::bench {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Draws from a per-(seed, key) stream so rows do not depend on load order.
class RowRng {
 public:
  RowRng(std::uint64_t seed, Key key) : state_(seed * 0xD1B54A32D192ED03ull ^ static_cast<std::uint64_t>(key)) {}
  std::uint64_t next() { return splitmix64(state_); }
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  std::string word(std::size_t len) {
    std::string s(len, 'a');
    for (auto& c : s) c = static_cast<char>('a' + next() % 26);
    return s;
  }
  std::string digits(std::size_t len) {
    std::string s(len, '0');
    for (auto& c : s) c = static_cast<char>('0' + next() % 10);
    return s;
  }

 private:
  std::uint64_t state_;
};

const char* const kCredit[] = {"GC", "BC"};
const char* const kShipModes[] = {"AIR", "GROUND", "SEA", "EXPRESS"};

std::size_t live_rows(const Table& t) {
  std::size_t n = 0;
  for (GroupId g = 0; g < t.group_count(); ++g) {
    auto lock = t.group(g).lock_shared();
    n += t.group(g).live_count();
  }
  return n;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

}  // namespace

// ---------------------------------------------------------------------------
// Presets

Preset parse_preset(std::string_view name) {
  if (name == "customer-split") return Preset::kCustomerSplit;
  if (name == "web-sales") return Preset::kWebSales;
  throw Error(ErrorCode::kInvalidArgument, "unknown preset '" + std::string(name) + "'");
}

std::string preset_name(Preset p) { return p == Preset::kCustomerSplit ? "customer-split" : "web-sales"; }

std::string preset_table(Preset p) { return p == Preset::kCustomerSplit ? "customer" : "web_sales"; }

TableSchema preset_schema(Preset p) {
  using VT = ValueType;
  if (p == Preset::kCustomerSplit) {
    // TPC-C CUSTOMER; only the id, balance and data attributes are updatable.
    return TableSchema("customer",
                       {{"c_id", VT::kInt64},         {"c_d_id", VT::kInt64},
                        {"c_w_id", VT::kInt64},       {"c_first", VT::kString},
                        {"c_middle", VT::kString},    {"c_last", VT::kString},
                        {"c_street_1", VT::kString},  {"c_city", VT::kString},
                        {"c_state", VT::kString},     {"c_zip", VT::kString},
                        {"c_phone", VT::kString},     {"c_since", VT::kInt64},
                        {"c_credit", VT::kString},    {"c_credit_lim", VT::kFloat64},
                        {"c_discount", VT::kFloat64}, {"c_balance", VT::kFloat64},
                        {"c_ytd_payment", VT::kFloat64}, {"c_payment_cnt", VT::kInt64},
                        {"c_delivery_cnt", VT::kInt64},  {"c_data", VT::kString}},
                       "c_id", {"c_id", "c_balance", "c_data"});
  }
  return TableSchema("web_sales",
                     {{"ws_order_number", VT::kInt64},
                      {"ws_item_sk", VT::kInt64},
                      {"ws_bill_customer_sk", VT::kInt64},
                      {"ws_quantity", VT::kInt64},
                      {"ws_price", VT::kFloat64},
                      {"ws_net_paid", VT::kFloat64},
                      {"ws_ship_mode", VT::kString}},
                     "ws_order_number", {"ws_order_number", "ws_quantity"});
}

Row preset_row(Preset p, Key key, std::uint64_t seed) {
  RowRng rng(seed, key);
  if (p == Preset::kCustomerSplit) {
    return {key,
            rng.between(1, 10),
            rng.between(1, 4),
            rng.word(8),
            std::string("OE"),
            rng.word(10),
            rng.word(14),
            rng.word(12),
            rng.word(2),
            rng.digits(4) + "11111",
            rng.digits(16),
            std::int64_t{1600000000} + rng.between(0, 86400 * 365),
            std::string(kCredit[rng.between(0, 9) == 0 ? 1 : 0]),
            50000.0,
            static_cast<double>(rng.between(0, 5000)) / 10000.0,
            static_cast<double>(rng.between(-1000, 500000)) / 100.0,
            10.0,
            std::int64_t{1},
            std::int64_t{0},
            rng.word(50)};
  }
  const auto quantity = rng.between(1, 100);
  const auto price = static_cast<double>(rng.between(1, 100));
  return {key,
          rng.between(1, 18000),
          rng.between(1, 100000),
          quantity,
          price,
          price * static_cast<double>(quantity),
          std::string(kShipModes[rng.between(0, 3)])};
}

LoadStats load(Engine& engine, Preset preset, std::size_t rows, std::uint64_t seed,
               std::uint32_t num_groups, std::size_t batch) {
  if (batch == 0) throw Error(ErrorCode::kInvalidArgument, "batch must be >= 1");
  engine.create_table(preset_schema(preset), num_groups);
  const auto table = preset_table(preset);
  LoadStats stats;
  for (std::size_t lo = 1; lo <= rows; lo += batch) {
    const std::size_t hi = std::min(rows, lo + batch - 1);
    Txn txn = engine.begin();
    for (std::size_t k = lo; k <= hi; ++k) {
      txn.insert(table, preset_row(preset, static_cast<Key>(k), seed));
    }
    txn.commit();
    ++stats.txns;
    stats.rows += hi - lo + 1;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Workload configuration and generation

Mode parse_mode(std::string_view name) {
  if (name == "oltp") return Mode::kOltp;
  if (name == "olap") return Mode::kOlap;
  if (name == "hybrid") return Mode::kHybrid;
  if (name == "mixed") return Mode::kMixed;
  throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + std::string(name) + "'");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kOltp: return "oltp";
    case Mode::kOlap: return "olap";
    case Mode::kHybrid: return "hybrid";
    case Mode::kMixed: return "mixed";
  }
  return "?";
}

void validate(const WorkloadConfig& c) {
  auto bad = [](const std::string& why) { throw Error(ErrorCode::kInvalidArgument, why); };
  if (!std::isfinite(c.rate) || c.rate < 0) bad("rate must be >= 0");
  if (!std::isfinite(c.duration_s) || c.duration_s <= 0) bad("duration must be > 0");
  if (c.threads == 0) bad("threads must be >= 1");
  if (c.olap_fraction < 0 || c.olap_fraction > 1) bad("olap_fraction must be in [0, 1]");
  if (c.mode == Mode::kOlap && c.olap_steps == 0) bad("olap mode needs olap_steps >= 1");
  if (c.mode == Mode::kOltp && c.oltp_steps == 0) bad("oltp mode needs oltp_steps >= 1");
  if (c.olap_steps + c.oltp_steps == 0) bad("a transaction needs at least one step");
  if (!(c.price_window >= 0) || c.price_window > 99) bad("price_window must be in [0, 99]");
  if (c.freshness_every == 0) bad("freshness_every must be >= 1");
}

WorkloadConfig parse_config(std::string_view text, WorkloadConfig c) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto val = trim(std::string_view(body).substr(eq + 1));
    auto num = [&]() {
      double d = 0;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), d);
      if (val.empty() || ec != std::errc() || p != val.data() + val.size()) {
        throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": bad number '" + val + "'");
      }
      return d;
    };
    auto count = [&]() {
      const double d = num();
      if (d < 0 || d != std::floor(d)) {
        throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": expected a count for " + key);
      }
      return static_cast<std::uint64_t>(d);
    };
    if (key == "mode") c.mode = parse_mode(val);
    else if (key == "rate") c.rate = num();
    else if (key == "duration") c.duration_s = num();
    else if (key == "max_txns") c.max_txns = count();
    else if (key == "threads") c.threads = count();
    else if (key == "seed") c.seed = count();
    else if (key == "olap_steps") c.olap_steps = count();
    else if (key == "oltp_steps") c.oltp_steps = count();
    else if (key == "olap_fraction") c.olap_fraction = num();
    else if (key == "customers") c.customers = count();
    else if (key == "web_sales") c.web_sales = count();
    else if (key == "price_window") c.price_window = num();
    else if (key == "freshness_every") c.freshness_every = count();
    else throw Error(ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  validate(c);
  return c;
}

OpGenerator::OpGenerator(const WorkloadConfig& config, std::size_t thread_index)
    : config_(config), state_(config.seed ^ (0x9E3779B97F4A7C15ull * (thread_index + 1))) {}

std::uint64_t OpGenerator::draw() { return splitmix64(state_); }

std::uint64_t OpGenerator::uniform(std::uint64_t lo, std::uint64_t hi) { return lo + draw() % (hi - lo + 1); }

Statement OpGenerator::agg() {
  AggStmt st;
  st.query.table = "web_sales";
  st.query.fn = query::AggFn::kMax;
  st.query.column = "ws_quantity";
  const auto span = static_cast<std::uint64_t>(std::floor(100 - config_.price_window));
  const double lo = static_cast<double>(uniform(1, std::max<std::uint64_t>(span, 1)));
  st.query.predicate = BetweenPredicate{"ws_price", lo, lo + config_.price_window};
  return st;
}

Statement OpGenerator::update_customer() {
  UpdateStmt st;
  st.table = "customer";
  st.key_column = "c_id";
  st.key = static_cast<Key>(uniform(1, config_.customers));
  st.assignments.emplace_back("c_balance", static_cast<double>(uniform(0, 200000)) / 100.0);
  return st;
}

Statement OpGenerator::update_sales() {
  UpdateStmt st;
  st.table = "web_sales";
  st.key_column = "ws_order_number";
  st.key = static_cast<Key>(uniform(1, config_.web_sales));
  st.assignments.emplace_back("ws_quantity", static_cast<std::int64_t>(uniform(1, 100)));
  return st;
}

Statement OpGenerator::oltp(std::size_t i) {
  if (config_.customers == 0) return update_sales();
  if (config_.web_sales == 0) return update_customer();
  return i % 2 == 0 ? update_customer() : update_sales();
}

HybridScript OpGenerator::next() {
  HybridScript s;
  Mode mode = config_.mode;
  if (mode == Mode::kMixed) {
    const double coin = static_cast<double>(draw() >> 11) * 0x1.0p-53;
    mode = coin < config_.olap_fraction ? Mode::kOlap : Mode::kOltp;
  }
  switch (mode) {
    case Mode::kOltp:
      for (std::size_t i = 0; i < config_.oltp_steps; ++i) s.steps.push_back(oltp(i));
      break;
    case Mode::kOlap:
      for (std::size_t i = 0; i < config_.olap_steps; ++i) s.steps.push_back(agg());
      break;
    default: {
      // Spread the analytical steps evenly, starting with one: for the
      // default 1:2 shape this is MAX, UPDATE customer, UPDATE web_sales.
      const std::size_t total = config_.olap_steps + config_.oltp_steps;
      std::size_t olap_done = 0, oltp_done = 0;
      for (std::size_t i = 0; i < total; ++i) {
        const bool olap_here = olap_done < config_.olap_steps &&
                               olap_done * total <= i * config_.olap_steps;
        if (olap_here || oltp_done == config_.oltp_steps) {
          s.steps.push_back(agg());
          ++olap_done;
        } else {
          s.steps.push_back(oltp(oltp_done++));
        }
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Run

Percentiles percentiles(std::vector<std::int64_t> samples) {
  Percentiles p;
  p.count = samples.size();
  if (samples.empty()) return p;
  std::sort(samples.begin(), samples.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    return static_cast<double>(samples[std::clamp<std::size_t>(idx, 1, samples.size()) - 1]) / 1e3;
  };
  p.p50_us = rank(0.50);
  p.p95_us = rank(0.95);
  p.p99_us = rank(0.99);
  p.max_us = static_cast<double>(samples.back()) / 1e3;
  return p;
}

void RunReport::write_csv(std::ostream& out) const {
  out << "metric,value,unit\n";
  out << "mode," << mode << ",\n";
  out << "threads," << threads << ",count\n";
  out << "elapsed," << elapsed_s << ",s\n";
  out << "committed," << committed << ",txns\n";
  out << "aborted," << aborted << ",txns\n";
  out << "errors," << errors << ",txns\n";
  out << "throughput," << throughput << ",txn/s\n";
  for (const auto& [kind, p] : latency) {
    out << "latency_" << kind << "_count," << p.count << ",samples\n";
    out << "latency_" << kind << "_p50," << p.p50_us << ",us\n";
    out << "latency_" << kind << "_p95," << p.p95_us << ",us\n";
    out << "latency_" << kind << "_p99," << p.p99_us << ",us\n";
    out << "latency_" << kind << "_max," << p.max_us << ",us\n";
  }
  out << "freshness_probes," << freshness_probes << ",count\n";
  out << "freshness_stale," << freshness_stale << ",count\n";
  out << "freshness_max_lag," << freshness_max_lag_us << ",us\n";
}

RunReport run(Engine& engine, const WorkloadConfig& input) {
  WorkloadConfig config = input;
  validate(config);
  Table* customer = engine.find_table("customer");
  Table* sales = engine.find_table("web_sales");
  if (config.customers == 0 && customer) config.customers = live_rows(*customer);
  if (config.web_sales == 0 && sales) config.web_sales = live_rows(*sales);
  const bool needs_olap = config.mode != Mode::kOltp && config.olap_steps > 0;
  const bool needs_oltp = config.mode != Mode::kOlap && config.oltp_steps > 0;
  if (needs_olap && !sales) throw Error(ErrorCode::kUnknownTable, "web_sales (load the web-sales preset)");
  if (needs_oltp && config.customers == 0 && config.web_sales == 0) {
    throw Error(ErrorCode::kInvalidArgument, "OLTP steps need a loaded customer or web_sales table");
  }
  if (config.customers > 0 && !customer) throw Error(ErrorCode::kUnknownTable, "customer");
  if (config.web_sales > 0 && !sales) throw Error(ErrorCode::kUnknownTable, "web_sales");

  struct Local {
    std::uint64_t committed = 0, aborted = 0, errors = 0;
    std::uint64_t probes = 0, stale = 0;
    std::int64_t max_lag_ns = 0;
    std::map<std::string, std::vector<std::int64_t>> lat;
  };
  std::vector<Local> locals(config.threads);
  std::atomic<std::uint64_t> issued{0};
  const auto start = Clock::now();
  const auto deadline = start + std::chrono::duration_cast<Clock::duration>(
                                    std::chrono::duration<double>(config.duration_s));

  auto worker = [&](std::size_t t) {
    Local& L = locals[t];
    OpGenerator gen(config, t);
    std::uint64_t my_commits = 0;
    for (;;) {
      const std::uint64_t n = issued.fetch_add(1);
      if (config.max_txns && n >= config.max_txns) break;
      if (config.rate > 0) {
        // Open loop: txn n is released at start + n / rate.
        const auto release = start + std::chrono::duration_cast<Clock::duration>(
                                         std::chrono::duration<double>(static_cast<double>(n) / config.rate));
        if (release >= deadline) break;
        std::this_thread::sleep_until(release);
      }
      if (Clock::now() >= deadline) break;

      const HybridScript script = gen.next();
      const auto t0 = Clock::now();
      const HybridResult r = engine.run_hybrid(script);
      const auto total = Clock::now() - t0;
      for (const auto& step : r.steps) {
        L.lat[step.olap ? "olap" : "oltp"].push_back(step.elapsed.count());
      }
      if (!r.committed) {
        if (r.error_code == ErrorCode::kSecondWriterAborted) ++L.aborted;
        else ++L.errors;
        continue;
      }
      ++L.committed;
      L.lat["commit"].push_back(r.commit_elapsed.count());
      L.lat["txn"].push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(total).count());
      if (r.commit_lsn == 0 || my_commits++ % config.freshness_every != 0) continue;

      // Freshness: wait until an analytical snapshot covers every written
      // group at the commit lsn.
      ++L.probes;
      const auto committed_at = Clock::now();
      bool stale = false;
      for (const auto& stmt : script.steps) {
        const auto* up = std::get_if<UpdateStmt>(&stmt);
        if (!up) continue;
        const Table& table = engine.table(up->table);
        const GroupId g = table.partition_for_key(up->key);
        while (engine.olap_snapshot(table).watermark(g) < r.commit_lsn) {
          stale = true;
          std::this_thread::sleep_for(std::chrono::microseconds(200));
        }
      }
      if (stale) ++L.stale;
      L.max_lag_ns = std::max<std::int64_t>(
          L.max_lag_ns, std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - committed_at).count());
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < config.threads; ++t) threads.emplace_back(worker, t);
  worker(0);
  for (auto& th : threads) th.join();
  const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();

  RunReport rep;
  rep.mode = mode_name(config.mode);
  rep.threads = config.threads;
  rep.elapsed_s = elapsed;
  std::map<std::string, std::vector<std::int64_t>> merged;
  std::int64_t max_lag_ns = 0;
  for (auto& L : locals) {
    rep.committed += L.committed;
    rep.aborted += L.aborted;
    rep.errors += L.errors;
    rep.freshness_probes += L.probes;
    rep.freshness_stale += L.stale;
    max_lag_ns = std::max(max_lag_ns, L.max_lag_ns);
    for (auto& [k, v] : L.lat) merged[k].insert(merged[k].end(), v.begin(), v.end());
  }
  // Unstale probes still took a few hundred ns to check; only stale ones lag.
  rep.freshness_max_lag_us = rep.freshness_stale ? static_cast<double>(max_lag_ns) / 1e3 : 0.0;
  rep.throughput = elapsed > 0 ? static_cast<double>(rep.committed) / elapsed : 0;
  for (auto& [k, v] : merged) rep.latency[k] = percentiles(std::move(v));
  return rep;
}

// ---------------------------------------------------------------------------
// Freshness probe

FreshnessReport probe_freshness(Engine& engine, const FreshnessConfig& config) {
  if (!engine.find_table(config.table)) {
    engine.create_table(TableSchema(config.table,
                                    {{"id", ValueType::kInt64}, {"u", ValueType::kInt64}, {"r", ValueType::kInt64}},
                                    "id", {"id", "u"}),
                        4);
  }
  const Table& table = engine.table(config.table);
  if (live_rows(table) != 0) throw Error(ErrorCode::kInvalidArgument, config.table + " must start empty");

  std::mt19937_64 rng(config.seed);
  // Keys spread over the whole key space so transactions span row groups.
  std::vector<Key> pool(256);
  for (auto& k : pool) k = static_cast<Key>(rng());

  struct Expect {
    std::int64_t count = 0, sum_u = 0, sum_r = 0;
  };
  std::map<Key, std::pair<std::int64_t, std::int64_t>> oracle;
  auto expect_now = [&] {
    Expect e;
    for (const auto& [k, v] : oracle) {
      ++e.count;
      e.sum_u += v.first;
      e.sum_r += v.second;
    }
    return e;
  };

  FreshnessReport rep;
  rep.iterations = config.iterations;
  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t published = 0;  // iterations whose commit has returned
  std::uint64_t checked = 0;
  Expect target;
  std::uint64_t reader_seed = rng();

  std::thread reader([&] {
    std::mt19937_64 jitter(reader_seed);
    auto agg = [&](Txn& txn, query::AggFn fn, const char* col) {
      const auto r = txn.aggregate({config.table, fn, col, std::nullopt});
      return std::get<std::int64_t>(*r.value);
    };
    for (std::size_t it = 1; it <= config.iterations; ++it) {
      Expect want;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return published >= it; });
        want = target;
      }
      for (std::size_t s = jitter() % (config.max_jitter_spins + 1); s > 0; --s) std::this_thread::yield();
      const auto committed_at = Clock::now();
      std::size_t polls = 0;
      bool ok = false;
      while (!ok) {
        Txn txn = engine.begin();
        ok = agg(txn, query::AggFn::kCount, "r") == want.count && agg(txn, query::AggFn::kSum, "u") == want.sum_u &&
             agg(txn, query::AggFn::kSum, "r") == want.sum_r;
        txn.commit();
        if (ok) break;
        ++polls;
        if (Clock::now() - committed_at > config.poll_timeout) break;
        std::this_thread::sleep_for(std::chrono::microseconds(500));
      }
      const double lag = std::chrono::duration<double, std::micro>(Clock::now() - committed_at).count();
      std::lock_guard lock(mu);
      if (polls == 0) {
        ++rep.fresh;
      } else {
        ++rep.stale;
        rep.max_lag_us = std::max(rep.max_lag_us, lag);
        rep.max_stale_polls = std::max(rep.max_stale_polls, polls);
        if (!ok) ++rep.never_visible;
      }
      checked = it;
      cv.notify_all();
    }
  });

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    Txn txn = engine.begin();
    const std::size_t ops = 1 + rng() % 3;
    std::set<Key> touched;
    for (std::size_t i = 0; i < ops; ++i) {
      const Key k = pool[rng() % pool.size()];
      if (!touched.insert(k).second) continue;
      auto found = oracle.find(k);
      const auto u = static_cast<std::int64_t>(rng() % 1000);
      if (found == oracle.end()) {
        const auto r = static_cast<std::int64_t>(rng() % 1000);
        txn.insert(config.table, {k, u, r});
        oracle[k] = {u, r};
      } else if (rng() % 3 == 0) {
        txn.remove(config.table, k);
        oracle.erase(found);
      } else {
        txn.update(config.table, k, {{"u", Value{u}}});
        found->second.first = u;
      }
    }
    for (std::size_t s = rng() % (config.max_jitter_spins + 1); s > 0; --s) std::this_thread::yield();
    txn.commit();
    {
      std::unique_lock lock(mu);
      target = expect_now();
      published = it;
      cv.notify_all();
      // The next write must not start before the reader has begun, or the
      // reader could see a later state than the one it is checking.
      cv.wait(lock, [&] { return checked >= it; });
    }
  }
  reader.join();
  return rep;
}

// ---------------------------------------------------------------------------
// Crash sweep

std::size_t SweepReport::passed() const {
  return static_cast<std::size_t>(std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.pass; }));
}

namespace {

// Naive replay model: rows by key per table, no partitions, no log.
struct Oracle {
  struct TableState {
    const TableSchema* schema;
    std::map<Key, Row> rows;
  };
  std::map<std::string, TableState> tables;

  // Applies one statement; false when the engine must reject it.
  bool apply(const Statement& stmt) {
    const auto& name = statement_table(stmt);
    auto it = tables.find(name);
    if (it == tables.end()) return false;
    auto& t = it->second;
    const auto& schema = *t.schema;
    const auto pk = schema.primary_key_index();
    return std::visit(
        [&](const auto& st) -> bool {
          using T = std::decay_t<decltype(st)>;
          if constexpr (std::is_same_v<T, InsertStmt>) {
            if (st.values.size() != schema.column_count()) return false;
            Row row;
            for (std::size_t i = 0; i < st.values.size(); ++i) {
              const auto want = schema.columns()[i].type;
              const auto& v = st.values[i];
              if (type_of(v) == want) row.push_back(v);
              else if (want == ValueType::kFloat64 && type_of(v) == ValueType::kInt64)
                row.push_back(static_cast<double>(std::get<std::int64_t>(v)));
              else return false;
            }
            const Key k = std::get<std::int64_t>(row[pk]);
            return t.rows.emplace(k, std::move(row)).second;
          } else if constexpr (std::is_same_v<T, UpdateStmt>) {
            if (st.key_column != schema.primary_key()) return false;
            auto row = t.rows.find(st.key);
            if (row == t.rows.end()) return false;
            Row next = row->second;
            for (const auto& [col, v] : st.assignments) {
              const auto c = schema.find_column(col);
              if (!c || *c == pk || !schema.update_set().count(col)) return false;
              const auto want = schema.columns()[*c].type;
              if (type_of(v) == want) next[*c] = v;
              else if (want == ValueType::kFloat64 && type_of(v) == ValueType::kInt64)
                next[*c] = static_cast<double>(std::get<std::int64_t>(v));
              else return false;
            }
            row->second = std::move(next);
            return true;
          } else if constexpr (std::is_same_v<T, DeleteStmt>) {
            if (st.key_column != schema.primary_key()) return false;
            return t.rows.erase(st.key) == 1;
          } else if constexpr (std::is_same_v<T, GetStmt>) {
            return st.key_column == schema.primary_key();
          } else {
            if (!schema.find_column(st.query.column)) return false;
            return !st.query.predicate || schema.find_column(st.query.predicate->column).has_value();
          }
        },
        stmt);
  }

  using Snapshot = std::map<std::string, std::map<Key, Row>>;
  Snapshot snapshot() const {
    Snapshot s;
    for (const auto& [n, t] : tables) s[n] = t.rows;
    return s;
  }
};

std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + p.string());
}

// Empty when the recovered engine matches; otherwise a description.
std::string compare_state(Engine& engine, const Oracle::Snapshot& want) {
  for (const auto& [name, rows] : want) {
    const Table& t = engine.table(name);
    // Split atomicity: every update-partition slot has its column-partition
    // row, and deletes reached both.
    for (GroupId g = 0; g < t.group_count(); ++g) {
      const auto& grp = t.group(g);
      auto lock = grp.lock_shared();
      if (grp.slots().size() != grp.readonly().size()) {
        return name + " group " + std::to_string(g) + ": " + std::to_string(grp.slots().size()) +
               " row-part slots vs " + std::to_string(grp.readonly().size()) + " column-part rows";
      }
      for (std::size_t pos = 0; pos < grp.slots().size(); ++pos) {
        if (grp.slots()[pos].live() != grp.readonly().validity().test(pos)) {
          return name + " key " + std::to_string(grp.slots()[pos].key) + ": delete applied to one partition only";
        }
      }
    }
    const auto got = t.materialize(t.snapshot());
    if (got.size() != rows.size()) {
      return name + ": " + std::to_string(got.size()) + " rows, expected " + std::to_string(rows.size());
    }
    auto it = rows.begin();
    for (const auto& [k, row] : got) {
      if (k != it->first) return name + ": unexpected key " + std::to_string(k);
      if (row != it->second) return name + " key " + std::to_string(k) + ": row differs";
      ++it;
    }
  }
  return {};
}

}  // namespace

SweepReport crash_sweep(const TxnScript& script, const SweepConfig& config) {
  fs::path root = config.work_dir;
  bool owned = false;
  if (root.empty()) {
    std::random_device rd;
    root = fs::temp_directory_path() / ("htapstore-sweep-" + std::to_string(rd()) + std::to_string(rd()));
    owned = true;
  }
  fs::remove_all(root);
  fs::create_directories(root);

  EngineOptions opts;
  opts.durability = wal::Durability::kOsBuffer;
  opts.load_checkpoint = false;

  SweepReport rep;
  std::vector<Oracle::Snapshot> states;  // states[i] = after i commits
  std::vector<std::size_t> commit_ends;  // log size after each commit
  std::string disagreement;
  std::vector<std::uint8_t> log_bytes, catalog;
  {
    const fs::path live = root / "live";
    Engine engine(live, opts);
    Oracle oracle;
    for (auto p : config.presets) {
      Table& t = engine.create_table(preset_schema(p), config.num_groups);
      oracle.tables[t.name()] = {&t.schema(), {}};
    }
    states.push_back(oracle.snapshot());
    std::optional<Txn> open;
    for (std::size_t i = 0; i < script.txns.size(); ++i) {
      const auto& st = script.txns[i];
      const bool trailing = script.trailing_open && i + 1 == script.txns.size();
      Oracle scratch = oracle;
      Txn txn = engine.begin();
      bool ok = true;
      for (const auto& stmt : st.steps) {
        bool engine_ok = true;
        try {
          txn.exec(stmt);
        } catch (const Error&) {
          engine_ok = false;
        }
        const bool oracle_ok = scratch.apply(stmt);
        if (engine_ok != oracle_ok && disagreement.empty()) {
          disagreement = "txn " + std::to_string(i) + " step '" + to_text(stmt) + "': engine " +
                         (engine_ok ? "accepted" : "rejected") + ", oracle " + (oracle_ok ? "accepted" : "rejected");
        }
        if (!engine_ok) {
          ok = false;
          break;
        }
      }
      if (trailing && ok) {
        open.emplace(std::move(txn));
        continue;
      }
      if (ok && st.commit) {
        // Read-only transactions commit without a log record.
        if (txn.commit() != 0) {
          states.push_back(scratch.snapshot());
          commit_ends.push_back(engine.log().bytes_written());
        }
        oracle = std::move(scratch);
      } else {
        txn.rollback();
      }
    }
    log_bytes = read_file(live / Engine::kLogFile);
    catalog = read_file(live / Engine::kCatalogFile);
  }
  rep.log_bytes = log_bytes.size();
  rep.committed_txns = commit_ends.size();

  std::vector<std::size_t> offsets;
  if (!config.sample) {
    offsets.resize(log_bytes.size() + 1);
    for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = i;
  } else {
    std::set<std::size_t> pick{0, log_bytes.size()};
    std::mt19937_64 rng(config.seed);
    const std::size_t want = std::min(*config.sample, log_bytes.size() + 1);
    while (pick.size() < want) pick.insert(rng() % (log_bytes.size() + 1));
    offsets.assign(pick.begin(), pick.end());
  }

  for (auto offset : offsets) {
    SweepVerdict v;
    v.offset = offset;
    v.expected_commits = static_cast<std::size_t>(
        std::upper_bound(commit_ends.begin(), commit_ends.end(), offset) - commit_ends.begin());
    if (!disagreement.empty()) {
      v.detail = "script run disagreed with oracle: " + disagreement;
      rep.verdicts.push_back(std::move(v));
      continue;
    }
    const fs::path dir = root / ("off-" + std::to_string(offset));
    try {
      fs::create_directories(dir);
      write_file(dir / Engine::kCatalogFile, catalog);
      write_file(dir / Engine::kLogFile, std::span(log_bytes).first(offset));
      Engine engine(dir, opts);
      v.detail = compare_state(engine, states[v.expected_commits]);
      if (v.detail.empty() && engine.recovery().committed_txns != v.expected_commits) {
        v.detail = "recovered " + std::to_string(engine.recovery().committed_txns) + " commits, expected " +
                   std::to_string(v.expected_commits);
      }
      v.pass = v.detail.empty();
    } catch (const std::exception& e) {
      v.detail = std::string("recovery threw: ") + e.what();
    }
    fs::remove_all(dir);
    rep.verdicts.push_back(std::move(v));
  }
  if (owned) fs::remove_all(root);
  return rep;
}

}  // namespace htap::bench
