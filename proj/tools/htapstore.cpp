#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "htapstore/bench.hpp"
#include "htapstore/engine.hpp"
#include "htapstore/perfmodel.hpp"
#include "htapstore/script.hpp"

using namespace htap;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

wal::Durability parse_durability(const std::string& s) {
  if (s == "fsync") return wal::Durability::kFsync;
  if (s == "os") return wal::Durability::kOsBuffer;
  throw Error(ErrorCode::kInvalidArgument, "durability must be fsync or os");
}

void print_report(const bench::RunReport& r) {
  std::printf("mode %s, %zu threads, %.2fs\n", r.mode.c_str(), r.threads, r.elapsed_s);
  std::printf("committed %llu  aborted %llu  errors %llu  throughput %.1f txn/s\n",
              static_cast<unsigned long long>(r.committed), static_cast<unsigned long long>(r.aborted),
              static_cast<unsigned long long>(r.errors), r.throughput);
  std::printf("%-8s %10s %10s %10s %10s %10s\n", "kind", "count", "p50_us", "p95_us", "p99_us", "max_us");
  for (const auto& [kind, p] : r.latency) {
    std::printf("%-8s %10zu %10.1f %10.1f %10.1f %10.1f\n", kind.c_str(), p.count, p.p50_us, p.p95_us, p.p99_us,
                p.max_us);
  }
  std::printf("freshness: %llu probes, %llu stale, max lag %.1f us\n",
              static_cast<unsigned long long>(r.freshness_probes), static_cast<unsigned long long>(r.freshness_stale),
              r.freshness_max_lag_us);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"htapstore: embedded HTAP store, workload driver and tools"};
  app.require_subcommand(1);

  std::string dir = "htapstore.db";
  std::string durability = "fsync";
  auto add_store = [&](CLI::App* sub) {
    sub->add_option("--dir", dir, "Store directory")->capture_default_str();
    sub->add_option("--durability", durability, "fsync | os (write(2) only)")->capture_default_str();
  };

  // init
  auto* init = app.add_subcommand("init", "Create an empty store directory");
  std::string init_dir;
  init->add_option("dir", init_dir, "Directory to create")->required();

  // load
  auto* load = app.add_subcommand("load", "Create a preset table and fill it with synthetic rows");
  std::string preset = "customer-split";
  std::size_t rows = 1000;
  std::uint64_t seed = 1;
  std::uint32_t groups = 4;
  add_store(load);
  load->add_option("--preset", preset, "customer-split | web-sales")->capture_default_str();
  load->add_option("--rows", rows, "Row count")->capture_default_str();
  load->add_option("--seed", seed, "Data seed")->capture_default_str();
  load->add_option("--groups", groups, "Row groups (range partitions)")->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "Run a workload against loaded tables and report latency and throughput");
  add_store(run);
  std::string mode, config_file, report_path;
  double rate = -1, duration = -1, baseline_delay_ms = 0;
  std::size_t threads = 0;
  std::uint64_t run_seed = 0, max_txns = 0;
  run->add_option("--mode", mode, "oltp | olap | hybrid | mixed");
  run->add_option("--rate", rate, "Target txns/s over all threads; 0 = unthrottled");
  run->add_option("--duration", duration, "Seconds");
  run->add_option("--threads", threads, "Worker threads");
  run->add_option("--seed", run_seed, "Operation stream seed");
  run->add_option("--max-txns", max_txns, "Stop after this many transactions");
  run->add_option("--config", config_file, "key=value config file; flags override it");
  run->add_option("--report", report_path, "Write the report as CSV (metric,value,unit)");
  run->add_option("--baseline-delay-ms", baseline_delay_ms,
                  "Emulate a dual-format store: analytical reads lag commits by this much");

  // hybrid
  auto* hybrid = app.add_subcommand("hybrid", "Run one hybrid transaction script and print step results");
  add_store(hybrid);
  std::string hybrid_script;
  hybrid->add_option("--script", hybrid_script, "Statements, one per line")->required();

  // crash-sweep
  auto* sweep = app.add_subcommand("crash-sweep", "Truncate the log at each offset and verify recovery");
  std::string sweep_script, offsets = "all", work_dir;
  std::uint32_t sweep_groups = 4;
  bool verbose = false;
  sweep->add_option("--script", sweep_script, "Transaction script (statements, COMMIT / ROLLBACK lines)")
      ->required();
  sweep->add_option("--offsets", offsets, "all, or a number of seeded random offsets")->capture_default_str();
  sweep->add_option("--seed", seed, "Offset sample seed")->capture_default_str();
  sweep->add_option("--groups", sweep_groups, "Row groups per table")->capture_default_str();
  sweep->add_option("--work-dir", work_dir, "Scratch directory (default: a temp dir)");
  sweep->add_flag("-v,--verbose", verbose, "Print every verdict");

  // perfmodel
  auto* perf = app.add_subcommand("perfmodel", "Data-transfer latency of separate vs near-data processing");
  std::uint64_t apps = 50;
  std::string data = "1GB", ext_bw = "500MB", near_bw = "100GB";
  perf->footer("Sizes use decimal units: 1KB = 1000 B, 1MB = 1e6 B, 1GB = 1e9 B. Bandwidths are per second; a "
               "trailing /s is optional.");
  perf->add_option("--apps", apps, "Applications sharing the external link")->capture_default_str();
  perf->add_option("--data", data, "Data transferred per application")->capture_default_str();
  perf->add_option("--ext-bw", ext_bw, "Total external bandwidth, shared by all apps")->capture_default_str();
  perf->add_option("--near-bw", near_bw, "Near-data bandwidth per app")->capture_default_str();

  // checkpoint / compress
  auto* ckpt = app.add_subcommand("checkpoint", "Write a checkpoint of the committed state");
  add_store(ckpt);
  auto* compress = app.add_subcommand("compress", "Remove column-part log items of rolled-back transactions");
  add_store(compress);

  CLI11_PARSE(app, argc, argv);

  try {
    auto open = [&](std::chrono::nanoseconds delay = std::chrono::nanoseconds{0}) {
      EngineOptions o;
      o.durability = parse_durability(durability);
      o.propagation_delay = delay;
      return std::make_unique<Engine>(dir, o);
    };

    if (*init) {
      dir = init_dir;
      open();
      std::printf("initialized %s\n", init_dir.c_str());
    } else if (*load) {
      auto e = open();
      const auto p = bench::parse_preset(preset);
      const auto t0 = std::chrono::steady_clock::now();
      const auto st = bench::load(*e, p, rows, seed, groups);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("loaded %zu rows into %s in %zu txns (%.2fs)\n", st.rows, bench::preset_table(p).c_str(), st.txns,
                  secs);
    } else if (*run) {
      bench::WorkloadConfig c;
      if (!config_file.empty()) c = bench::parse_config(read_text(config_file));
      if (!mode.empty()) c.mode = bench::parse_mode(mode);
      if (rate >= 0) c.rate = rate;
      if (duration >= 0) c.duration_s = duration;
      if (threads > 0) c.threads = threads;
      if (run->count("--seed")) c.seed = run_seed;
      if (max_txns > 0) c.max_txns = max_txns;
      const auto delay = std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::duration<double, std::milli>(baseline_delay_ms));
      auto e = open(delay);
      const auto r = bench::run(*e, c);
      print_report(r);
      if (!report_path.empty()) {
        std::ofstream out(report_path);
        r.write_csv(out);
        if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + report_path);
      }
    } else if (*hybrid) {
      auto e = open();
      const auto r = e->run_hybrid(parse_hybrid_script(read_text(hybrid_script)));
      for (std::size_t i = 0; i < r.steps.size(); ++i) {
        const auto& s = r.steps[i];
        std::string out = "ok";
        if (s.result.aggregate) out = query::to_string(*s.result.aggregate);
        if (s.result.row) {
          out = "(";
          for (std::size_t j = 0; j < s.result.row->size(); ++j)
            out += (j ? ", " : "") + htap::to_string((*s.result.row)[j]);
          out += ")";
        }
        std::printf("%zu %s %s  -> %s\n", i + 1, s.olap ? "OLAP" : "OLTP", s.text.c_str(), out.c_str());
      }
      if (!r.committed) {
        std::fprintf(stderr, "rolled back: %s\n", r.error.c_str());
        return 1;
      }
      std::printf("committed at lsn %llu\n", static_cast<unsigned long long>(r.commit_lsn));
    } else if (*sweep) {
      bench::SweepConfig c;
      c.num_groups = sweep_groups;
      c.seed = seed;
      c.work_dir = work_dir;
      if (offsets != "all") c.sample = std::stoull(offsets);
      const auto r = bench::crash_sweep(parse_txn_script(read_text(sweep_script)), c);
      for (const auto& v : r.verdicts) {
        if (verbose || !v.pass) {
          std::printf("offset %zu: %s (%zu commits)%s%s\n", v.offset, v.pass ? "PASS" : "FAIL", v.expected_commits,
                      v.detail.empty() ? "" : " ", v.detail.c_str());
        }
      }
      std::printf("log %zu bytes, %zu committed txns, %zu/%zu offsets recovered the committed prefix\n",
                  r.log_bytes, r.committed_txns, r.passed(), r.verdicts.size());
      return r.all_passed() ? 0 : 1;
    } else if (*perf) {
      const perfmodel::TransferScenario s{apps, perfmodel::parse_bytes(data), perfmodel::parse_bytes(ext_bw),
                                          perfmodel::parse_bytes(near_bw)};
      std::printf("%-40s %18s %18s %12s\n", "scenario", "separate_latency_s", "neardata_latency_s", "gap");
      const std::string name = std::to_string(apps) + " apps x " + perfmodel::format_bytes(s.data_per_app) + ", " +
                               perfmodel::format_bytes(s.external_bandwidth_total) + "/s shared, " +
                               perfmodel::format_bytes(s.neardata_bandwidth) + "/s near";
      std::printf("%-40s %18.6g %18.6g %12.6g\n", name.c_str(), perfmodel::separate_latency(s),
                  perfmodel::neardata_latency(s), perfmodel::gap(s));
    } else if (*ckpt) {
      auto e = open();
      const auto path = e->dir() / Engine::kCheckpointFile;
      e->write_checkpoint(path);
      std::printf("wrote %s\n", path.c_str());
    } else if (*compress) {
      auto e = open();
      const auto st = e->compress_log();
      std::printf("removed %zu of %zu log records\n", st.records_removed, st.records_before);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
