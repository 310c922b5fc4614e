#ifndef LTS_METRICS_HPP
#define LTS_METRICS_HPP

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lts/error.hpp"

namespace lts {

struct IterationRecord {
  long iter = 0;
  int epoch = 0;
  double loss = 0;
  double wgs = 0;   // frozen fraction over all quantized weights, pooled
  double p = 0;     // schedule rate at this iteration
  double flops_reduction = 0;  // wgs/2 by definition
};

struct EpochRecord {
  int epoch = 0;
  double top1 = 0;
};

struct LayerEpochRecord {
  int epoch = 0;
  std::string layer;
  std::size_t frozen = 0;
  std::size_t total = 0;
  double sparsity = 0;
  std::size_t level_changes = 0;      // unfrozen level moves this epoch
  std::size_t frozen_level_drift = 0; // frozen weights whose level drifted
  std::size_t macs_skipped = 0;
};

struct TicketRatioRecord {
  int epoch = 0;
  std::string layer;
  double ratio = 0;
};

/// Per-epoch quantization levels of every quantized layer.
struct LevelSnapshot {
  int epoch = 0;
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> layers;
};

struct MetricsRecord {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> accuracy;
  std::vector<LayerEpochRecord> per_layer;
  std::vector<TicketRatioRecord> ticket;
};

struct RunSummary {
  std::string mode, model;
  int bits = 0;
  int epochs = 0;
  int best_epoch = 0;
  double best_top1 = 0;
  double avg_wgs = 0;
  double flops_reduction = 0;              // avg_wgs/2, the headline number
  double flops_reduction_mac_weighted = 0; // from the MAC counters
  long total_iterations = 0;
};

/// Mean over iterations of the pooled frozen fraction.
inline double avg_wgs(const std::vector<IterationRecord>& records) {
  if (records.empty()) throw InvariantError("avg_wgs: no iterations recorded");
  double acc = 0;
  for (const auto& r : records) acc += r.wgs;
  return acc / static_cast<double>(records.size());
}

/// Fraction of weights whose level at each epoch already equals the level in
/// the best model. Snapshot at epoch 0 is the pre-training state.
inline std::vector<TicketRatioRecord> ticket_ratio_curve(
    const std::vector<LevelSnapshot>& snapshots, int best_epoch) {
  const LevelSnapshot* best = nullptr;
  for (const auto& s : snapshots)
    if (s.epoch == best_epoch) best = &s;
  if (!best)
    throw InvariantError("ticket_ratio_curve: no snapshot for best epoch " +
                         std::to_string(best_epoch));
  std::vector<TicketRatioRecord> out;
  for (const auto& s : snapshots) {
    for (std::size_t li = 0; li < s.layers.size(); ++li) {
      const auto& [name, levels] = s.layers[li];
      const auto& [bname, blevels] = best->layers.at(li);
      if (name != bname || levels.size() != blevels.size())
        throw InvariantError("ticket_ratio_curve: snapshot layout mismatch at epoch " +
                             std::to_string(s.epoch));
      std::size_t same = 0;
      for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] == blevels[i]) ++same;
      out.push_back({s.epoch, name,
                     levels.empty() ? 1.0
                                    : static_cast<double>(same) /
                                          static_cast<double>(levels.size())});
    }
  }
  return out;
}

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
  if (!out) throw ParseError(path + ": cannot open for writing");
  return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                                      const std::string& header) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header)
    throw ParseError(path + ": unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

}  // namespace detail

inline void write_metrics_csv(const std::string& path,
                              const std::vector<IterationRecord>& rows) {
  auto out = detail::open_out(path);
  out << "iter,epoch,loss,wgs,p,flops_reduction\n";
  for (const auto& r : rows)
    out << r.iter << ',' << r.epoch << ',' << detail::fmt_g17(r.loss) << ','
        << detail::fmt_g17(r.wgs) << ',' << detail::fmt_g17(r.p) << ','
        << detail::fmt_g17(r.flops_reduction) << '\n';
}

inline std::vector<IterationRecord> parse_metrics_csv(const std::string& path) {
  std::vector<IterationRecord> out;
  for (const auto& f : detail::read_csv(path, "iter,epoch,loss,wgs,p,flops_reduction")) {
    if (f.size() != 6) throw ParseError(path + ": malformed row");
    out.push_back({std::stol(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]),
                   std::stod(f[4]), std::stod(f[5])});
  }
  return out;
}

inline void write_accuracy_csv(const std::string& path,
                               const std::vector<EpochRecord>& rows) {
  auto out = detail::open_out(path);
  out << "epoch,top1\n";
  for (const auto& r : rows) out << r.epoch << ',' << detail::fmt_g17(r.top1) << '\n';
}

inline std::vector<EpochRecord> parse_accuracy_csv(const std::string& path) {
  std::vector<EpochRecord> out;
  for (const auto& f : detail::read_csv(path, "epoch,top1")) {
    if (f.size() != 2) throw ParseError(path + ": malformed row");
    out.push_back({std::stoi(f[0]), std::stod(f[1])});
  }
  return out;
}

inline void write_sparsity_csv(const std::string& path,
                               const std::vector<LayerEpochRecord>& rows) {
  auto out = detail::open_out(path);
  out << "epoch,layer,frozen,total,sparsity,level_changes,frozen_level_drift,"
         "macs_skipped\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << r.layer << ',' << r.frozen << ',' << r.total << ','
        << detail::fmt_g17(r.sparsity) << ',' << r.level_changes << ','
        << r.frozen_level_drift << ',' << r.macs_skipped << '\n';
}

inline void write_ticket_csv(const std::string& path,
                             const std::vector<TicketRatioRecord>& rows) {
  auto out = detail::open_out(path);
  out << "epoch,layer,ratio\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << r.layer << ',' << detail::fmt_g17(r.ratio) << '\n';
}

inline std::vector<TicketRatioRecord> parse_ticket_csv(const std::string& path) {
  std::vector<TicketRatioRecord> out;
  for (const auto& f : detail::read_csv(path, "epoch,layer,ratio")) {
    if (f.size() != 3) throw ParseError(path + ": malformed row");
    out.push_back({std::stoi(f[0]), f[1], std::stod(f[2])});
  }
  return out;
}

/// Wide per-iteration frozen counts, one column per quantized layer; the
/// random mode replays this to match an LTS run's sparsity trajectory.
inline void write_trajectory_csv(const std::string& path,
                                 const std::vector<std::string>& layer_names,
                                 const std::vector<std::vector<std::size_t>>& rows,
                                 long start_iter = 1) {
  auto out = detail::open_out(path);
  out << "iter";
  for (const auto& n : layer_names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << (start_iter + static_cast<long>(i));
    for (std::size_t v : rows[i]) out << ',' << v;
    out << '\n';
  }
}

struct Trajectory {
  std::vector<std::string> layer_names;
  std::vector<std::vector<std::size_t>> frozen_counts;  // [iter][layer]
};

inline Trajectory parse_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "iter")
    throw ParseError(path + ": trajectory header must start with 'iter'");
  Trajectory t;
  t.layer_names.assign(header.begin() + 1, header.end());
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size()) throw ParseError(path + ": malformed trajectory row");
    std::vector<std::size_t> counts;
    for (std::size_t i = 1; i < f.size(); ++i)
      counts.push_back(static_cast<std::size_t>(std::stoul(f[i])));
    t.frozen_counts.push_back(std::move(counts));
  }
  return t;
}

inline void write_summary_csv(const std::string& path, const RunSummary& s) {
  auto out = detail::open_out(path);
  out << "mode,model,bits,epochs,best_epoch,best_top1,avg_wgs,flops_reduction,"
         "flops_reduction_mac_weighted,total_iterations\n";
  out << s.mode << ',' << s.model << ',' << s.bits << ',' << s.epochs << ','
      << s.best_epoch << ',' << detail::fmt_g17(s.best_top1) << ','
      << detail::fmt_g17(s.avg_wgs) << ',' << detail::fmt_g17(s.flops_reduction) << ','
      << detail::fmt_g17(s.flops_reduction_mac_weighted) << ',' << s.total_iterations
      << '\n';
}

inline RunSummary parse_summary_csv(const std::string& path) {
  auto rows = detail::read_csv(
      path,
      "mode,model,bits,epochs,best_epoch,best_top1,avg_wgs,flops_reduction,"
      "flops_reduction_mac_weighted,total_iterations");
  if (rows.size() != 1 || rows[0].size() != 10)
    throw ParseError(path + ": expected exactly one summary row");
  const auto& f = rows[0];
  RunSummary s;
  s.mode = f[0];
  s.model = f[1];
  s.bits = std::stoi(f[2]);
  s.epochs = std::stoi(f[3]);
  s.best_epoch = std::stoi(f[4]);
  s.best_top1 = std::stod(f[5]);
  s.avg_wgs = std::stod(f[6]);
  s.flops_reduction = std::stod(f[7]);
  s.flops_reduction_mac_weighted = std::stod(f[8]);
  s.total_iterations = std::stol(f[9]);
  return s;
}

/// Writes the four run CSVs into outdir (plus summary + trajectory, written
/// separately by the trainer since they need extra inputs).
inline void emit_metrics(const MetricsRecord& rec, const std::string& outdir) {
  write_metrics_csv(outdir + "/metrics.csv", rec.iterations);
  write_accuracy_csv(outdir + "/accuracy.csv", rec.accuracy);
  write_sparsity_csv(outdir + "/sparsity_per_layer.csv", rec.per_layer);
  write_ticket_csv(outdir + "/ticket_ratio.csv", rec.ticket);
}

}  // namespace lts

#endif  // LTS_METRICS_HPP
