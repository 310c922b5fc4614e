// Command-line front end: training runs, the skip-GEMM benchmark, ticket
// analysis over finished runs, and run comparison tables.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lts/bench.hpp"
#include "lts/config.hpp"
#include "lts/metrics.hpp"
#include "lts/trainer.hpp"

namespace {

int cmd_train(const std::string& config_path, long seed_override,
              const std::string& out_override, bool deterministic) {
  lts::RunConfig cfg = lts::load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (deterministic) cfg.deterministic = true;
  cfg.validate();

  lts::RunSummary s = lts::run_config(cfg);
  std::printf("mode=%s model=%s bits=%d epochs=%d best_epoch=%d best_top1=%.4f "
              "avg_wgs=%.4f flops_reduction=%.4f\n",
              s.mode.c_str(), s.model.c_str(), s.bits, s.epochs, s.best_epoch,
              s.best_top1, s.avg_wgs, s.flops_reduction);
  std::printf("outputs written to %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_bench(std::size_t m, std::size_t n, std::size_t k,
              std::vector<double> densities, int reps, const std::string& out_path,
              long seed) {
  if (densities.empty()) densities = {0.0, 0.25, 0.5, 0.75, 1.0};
  auto rows = lts::bench_skip_gemm<float>(m, n, k, densities, reps,
                                          static_cast<std::uint64_t>(seed));
  if (out_path.empty()) {
    lts::write_bench_csv(std::cout, rows);
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
      std::cerr << "cannot open " << out_path << "\n";
      return 1;
    }
    lts::write_bench_csv(out, rows);
    std::cout << "benchmark written to " << out_path << "\n";
  }
  return 0;
}

int cmd_analyze_ticket(const std::string& run_dir) {
  auto accuracy = lts::parse_accuracy_csv(run_dir + "/accuracy.csv");
  if (accuracy.empty()) {
    std::cerr << run_dir << ": accuracy.csv has no epochs\n";
    return 1;
  }
  int best_epoch = accuracy.front().epoch;
  double best = accuracy.front().top1;
  for (const auto& r : accuracy)
    if (r.top1 > best) {
      best = r.top1;
      best_epoch = r.epoch;
    }
  auto snaps = lts::load_level_snapshots(run_dir);
  if (snaps.empty()) {
    std::cerr << run_dir << ": no level snapshots found\n";
    return 1;
  }
  auto curve = lts::ticket_ratio_curve(snaps, best_epoch);
  lts::write_ticket_csv(run_dir + "/ticket_ratio.csv", curve);

  std::printf("best epoch %d (top1 %.4f)\n", best_epoch, best);
  std::printf("%-12s %14s\n", "layer", "epoch0_ratio");
  for (const auto& r : curve)
    if (r.epoch == 0) std::printf("%-12s %14.4f\n", r.layer.c_str(), r.ratio);
  std::printf("ticket_ratio.csv rewritten in %s\n", run_dir.c_str());
  return 0;
}

int cmd_compare(const std::vector<std::string>& run_dirs) {
  std::printf("%-28s %-8s %-10s %4s %10s %10s %8s %10s\n", "run", "mode", "model",
              "bits", "best_epoch", "best_top1", "avg_wgs", "rd_flops");
  for (const auto& dir : run_dirs) {
    lts::RunSummary s = lts::parse_summary_csv(dir + "/summary.csv");
    std::printf("%-28s %-8s %-10s %4d %10d %10.4f %8.4f %10.4f\n", dir.c_str(),
                s.mode.c_str(), s.model.c_str(), s.bits, s.best_epoch, s.best_top1,
                s.avg_wgs, s.flops_reduction);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantization-aware training with EMA-distance weight freezing"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "run a training config");
  std::string config_path, out_override;
  long seed_override = -1;
  bool deterministic = false;
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--seed", seed_override, "override the config seed");
  train->add_option("--out", out_override, "override the output directory");
  train->add_flag("--deterministic", deterministic, "force deterministic mode");

  auto* bench = app.add_subcommand("bench-gemm", "time the skip-GEMM backward kernel");
  std::size_t bm = 32, bn = 144, bk = 100352;
  std::vector<double> densities;
  int reps = 5;
  long bench_seed = 1;
  std::string bench_out;
  bench->add_option("--m", bm, "gradient rows (output channels)");
  bench->add_option("--n", bn, "activation rows (weights per channel)");
  bench->add_option("--k", bk, "inner extent (output positions)");
  bench->add_option("--density", densities, "mask densities to sweep");
  bench->add_option("--reps", reps, "repetitions per density");
  bench->add_option("--seed", bench_seed, "rng seed");
  bench->add_option("--out", bench_out, "CSV output path (default stdout)");

  auto* analyze = app.add_subcommand("analyze-ticket", "ticket ratios of a finished run");
  std::string run_dir;
  analyze->add_option("--run", run_dir, "run output directory")->required();

  auto* compare = app.add_subcommand("compare", "tabulate summaries of several runs");
  std::vector<std::string> run_dirs;
  compare->add_option("--runs", run_dirs, "run output directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train))
      return cmd_train(config_path, seed_override, out_override, deterministic);
    if (app.got_subcommand(bench))
      return cmd_bench(bm, bn, bk, densities, reps, bench_out, bench_seed);
    if (app.got_subcommand(analyze)) return cmd_analyze_ticket(run_dir);
    if (app.got_subcommand(compare)) return cmd_compare(run_dirs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
