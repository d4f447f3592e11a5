#pragma once

// Benchmark harness: synthetic data presets, OLTP/OLAP/hybrid workload
// generation and execution, freshness probing, and WAL truncation sweeps.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "htapstore/engine.hpp"

namespace htap::bench {

enum class Preset { kCustomerSplit, kWebSales };

Preset parse_preset(std::string_view name);  // "customer-split" | "web-sales"
std::string preset_name(Preset p);
std::string preset_table(Preset p);  // "customer" | "web_sales"
TableSchema preset_schema(Preset p);
// Deterministic synthetic row; depends only on (seed, key).
Row preset_row(Preset p, Key key, std::uint64_t seed);

struct LoadStats {
  std::size_t rows = 0;
  std::size_t txns = 0;
};

// Creates the preset table and inserts keys 1..rows in committed batches.
// Throws DuplicateTable when the table exists.
LoadStats load(Engine& engine, Preset preset, std::size_t rows, std::uint64_t seed,
               std::uint32_t num_groups = 4, std::size_t batch = 1000);

enum class Mode { kOltp, kOlap, kHybrid, kMixed };

Mode parse_mode(std::string_view name);
std::string mode_name(Mode m);

struct WorkloadConfig {
  Mode mode = Mode::kHybrid;
  double rate = 0;  // txns/s across all threads; 0 = unthrottled
  double duration_s = 10;
  std::uint64_t max_txns = 0;  // 0 = bounded by duration only
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  // Hybrid template shape: OLAP steps and OLTP steps per transaction.
  std::size_t olap_steps = 1;
  std::size_t oltp_steps = 2;
  // Mixed mode: probability that a transaction is analytical.
  double olap_fraction = 1.0 / 3.0;
  // Key domains sampled by the generator; 0 = use the loaded table sizes.
  std::size_t customers = 0;
  std::size_t web_sales = 0;
  // Width of the price window of the MAX template.
  double price_window = 16;
  // Check commit-to-OLAP visibility on every n-th commit of each thread.
  std::uint64_t freshness_every = 16;
};

// Throws InvalidArgument.
void validate(const WorkloadConfig& c);
// Flat key=value text; '#' comments. Unknown keys throw InvalidArgument.
WorkloadConfig parse_config(std::string_view text, WorkloadConfig base = {});

/// Deterministic transaction stream of one worker thread.
class OpGenerator {
 public:
  OpGenerator(const WorkloadConfig& config, std::size_t thread_index);
  HybridScript next();

 private:
  Statement agg();
  Statement update_customer();
  Statement update_sales();
  Statement oltp(std::size_t i);

  WorkloadConfig config_;
  std::uint64_t state_;
  std::uint64_t draw();
  std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi);  // inclusive
};

struct Percentiles {
  std::size_t count = 0;
  double p50_us = 0, p95_us = 0, p99_us = 0, max_us = 0;
};

// Nearest-rank percentiles of `samples` (nanoseconds).
Percentiles percentiles(std::vector<std::int64_t> samples);

struct RunReport {
  std::string mode;
  std::size_t threads = 0;
  double elapsed_s = 0;
  std::uint64_t committed = 0;
  std::uint64_t aborted = 0;  // write-write conflicts
  std::uint64_t errors = 0;   // other step failures
  double throughput = 0;      // committed txns/s
  std::map<std::string, Percentiles> latency;  // by step kind: oltp, olap, commit, txn
  // Commit-to-analytical-visibility lag, from the OLAP snapshot watermark.
  std::uint64_t freshness_probes = 0;
  std::uint64_t freshness_stale = 0;
  double freshness_max_lag_us = 0;

  void write_csv(std::ostream& out) const;
};

RunReport run(Engine& engine, const WorkloadConfig& config);

struct FreshnessConfig {
  std::size_t iterations = 1000;
  std::uint64_t seed = 7;
  std::string table = "freshness_probe";
  std::size_t max_jitter_spins = 64;
  // Give up polling a stale reader after this long.
  std::chrono::milliseconds poll_timeout{5000};
};

struct FreshnessReport {
  std::size_t iterations = 0;
  std::size_t fresh = 0;  // first read after commit reflected the write
  std::size_t stale = 0;
  std::size_t never_visible = 0;
  double max_lag_us = 0;  // commit return to first fresh read
  std::size_t max_stale_polls = 0;
};

// Writer thread commits random insert/update/delete transactions against a
// probe table; after each commit returns, a reader thread begins a new
// transaction and checks COUNT and SUM aggregates against an oracle.
FreshnessReport probe_freshness(Engine& engine, const FreshnessConfig& config);

struct SweepConfig {
  std::vector<Preset> presets = {Preset::kCustomerSplit, Preset::kWebSales};
  std::uint32_t num_groups = 4;
  // Empty = every offset 0..log size; otherwise a seeded sample of this many.
  std::optional<std::size_t> sample;
  std::uint64_t seed = 1;
  std::filesystem::path work_dir;  // empty = a fresh temp directory
};

struct SweepVerdict {
  std::size_t offset = 0;
  std::size_t expected_commits = 0;
  bool pass = false;
  std::string detail;
};

struct SweepReport {
  std::size_t log_bytes = 0;
  std::size_t committed_txns = 0;
  std::vector<SweepVerdict> verdicts;

  std::size_t passed() const;
  bool all_passed() const { return passed() == verdicts.size(); }
};

// Runs `script` on empty preset tables, then for each offset truncates the
// log there, recovers into a fresh directory, and compares every table with
// a naive replay of the transactions whose commit record fits in the prefix.
SweepReport crash_sweep(const TxnScript& script, const SweepConfig& config);

}  // namespace htap::bench
