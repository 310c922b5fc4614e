#ifndef LTS_TRAINER_HPP
#define LTS_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lts/checkpoint.hpp"
#include "lts/config.hpp"
#include "lts/datasets.hpp"
#include "lts/metrics.hpp"
#include "lts/network.hpp"
#include "lts/scheduler.hpp"

namespace lts {

/// Seed a generator from the run seed plus a stream tag, so every stochastic
/// consumer (init, per-epoch shuffle, random freezing) has its own
/// reproducible stream and resume never needs serialized RNG state.
inline std::mt19937 seeded_rng(std::uint64_t seed, std::uint32_t stream,
                               std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream, static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937(seq);
}

namespace rng_stream {
constexpr std::uint32_t kInit = 1;
constexpr std::uint32_t kShuffle = 2;
constexpr std::uint32_t kRandomFreeze = 3;
}  // namespace rng_stream

/// Freeze additional uniformly-chosen unfrozen weights until the layer's
/// frozen count reaches target; freshly frozen momentum entries are zeroed.
template <typename T>
void random_freeze_step(QuantParams<T>& q, std::size_t target, std::mt19937& rng) {
  const std::size_t current = q.frozen_count();
  if (target <= current) return;
  if (target > q.weight_count())
    throw InvariantError("random freeze target exceeds weight count");
  std::vector<std::size_t> unfrozen;
  unfrozen.reserve(q.weight_count() - current);
  for (std::size_t i = 0; i < q.frozen_mask.size(); ++i)
    if (!q.frozen_mask[i]) unfrozen.push_back(i);
  std::vector<std::size_t> chosen;
  std::sample(unfrozen.begin(), unfrozen.end(), std::back_inserter(chosen),
              target - current, rng);
  for (std::size_t i : chosen) {
    q.frozen_mask[i] = 1;
    q.w_mom[i] = T(0);
  }
}

inline void write_level_snapshot(const std::string& dir, const LevelSnapshot& snap) {
  std::filesystem::create_directories(dir + "/levels");
  std::vector<std::pair<std::string, RawTensor>> records;
  for (const auto& [name, bytes] : snap.layers) {
    RawTensor t;
    t.dtype = DType::U8;
    t.dims.push_back(bytes.size());
    t.bytes = bytes;
    records.emplace_back(name, std::move(t));
  }
  char fname[64];
  std::snprintf(fname, sizeof(fname), "/levels/epoch_%04d.bin", snap.epoch);
  write_records(dir + fname, kSnapshotMagic, records);
}

inline std::vector<LevelSnapshot> load_level_snapshots(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<LevelSnapshot> snaps;
  const fs::path levels_dir = fs::path(dir) / "levels";
  if (!fs::exists(levels_dir)) return snaps;
  for (const auto& entry : fs::directory_iterator(levels_dir)) {
    const std::string stem = entry.path().stem().string();
    if (stem.rfind("epoch_", 0) != 0) continue;
    LevelSnapshot snap;
    snap.epoch = std::stoi(stem.substr(6));
    for (auto& [name, t] : read_records(entry.path().string(), kSnapshotMagic))
      snap.layers.emplace_back(name, std::move(t.bytes));
    snaps.push_back(std::move(snap));
  }
  std::sort(snaps.begin(), snaps.end(),
            [](const LevelSnapshot& a, const LevelSnapshot& b) { return a.epoch < b.epoch; });
  return snaps;
}

template <typename T>
struct TrainOutput {
  MetricsRecord metrics;
  RunSummary summary;
  Model<T> model;
};

template <typename T>
class Trainer {
 public:
  explicit Trainer(RunConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  TrainOutput<T> run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);

    load_data();
    iters_per_epoch_ = static_cast<long>(train_.size() / cfg_.batch_size);
    if (iters_per_epoch_ < 1)
      throw ConfigError("training set smaller than one batch");

    const bool quantized = cfg_.lts.mode != RunMode::Fp;
    model_ = build_model<T>(cfg_.model, train_.sample_shape(), train_.classes,
                            cfg_.bits, quantized);
    qlayers_ = model_.quantized_layers();

    if (cfg_.lts.mode == RunMode::Random) load_trajectory();

    initialize_state();
    register_all();
    if (!cfg_.resume_checkpoint.empty()) resume();

    if (quantized && cfg_.snapshots_enabled && epoch_done_ == 0)
      take_snapshot(0);

    per_epoch_changes_.assign(qlayers_.size(), 0);
    per_epoch_skipped_.assign(qlayers_.size(), 0);

    for (int epoch = static_cast<int>(epoch_done_) + 1; epoch <= cfg_.epochs; ++epoch) {
      const double lr = lr_for_epoch(epoch);
      std::fill(per_epoch_changes_.begin(), per_epoch_changes_.end(), 0);
      std::fill(per_epoch_skipped_.begin(), per_epoch_skipped_.end(), 0);

      std::vector<std::size_t> order(train_.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      auto shuffle_rng = seeded_rng(cfg_.seed, rng_stream::kShuffle,
                                    static_cast<std::uint64_t>(epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      for (long b = 0; b < iters_per_epoch_; ++b) {
        auto [batch, labels] =
            gather_batch(train_, order, static_cast<std::size_t>(b) * cfg_.batch_size,
                         cfg_.batch_size);
        if (iteration_ == 0 && quantized) model_.forward(batch, PassMode::Calibrate);
        ++iteration_;

        Tensor<T> logits = model_.forward(batch, PassMode::Train);
        auto loss = cross_entropy_fwd_bwd(logits, labels);
        if (!std::isfinite(static_cast<double>(loss.loss)))
          throw DivergenceError("loss is not finite at iteration " +
                                std::to_string(iteration_) + " (epoch " +
                                std::to_string(epoch) + ")");

        const double wgs_now = pooled_sparsity();
        model_.zero_grads();
        model_.backward(loss.g_logits);
        accumulate_mac_counters();

        model_.sgd_step_all(static_cast<T>(lr), static_cast<T>(cfg_.momentum),
                            static_cast<T>(cfg_.weight_decay));

        double p_now = 0.0;
        if (cfg_.lts.mode == RunMode::Lts)
          p_now = lts_scheduler_pass(static_cast<long>(iteration_));
        else if (cfg_.lts.mode == RunMode::Random)
          random_scheduler_pass(static_cast<long>(iteration_));

        record_trajectory_row();
        metrics_.iterations.push_back({static_cast<long>(iteration_), epoch,
                                       static_cast<double>(loss.loss), wgs_now, p_now,
                                       wgs_now / 2.0});
      }

      const double top1 = evaluate();
      metrics_.accuracy.push_back({epoch, top1});
      if (top1 > best_acc_) {
        best_acc_ = top1;
        best_epoch_ = static_cast<std::uint64_t>(epoch);
      }
      finish_epoch_records(epoch);
      if (quantized && cfg_.snapshots_enabled) take_snapshot(epoch);
      epoch_done_ = static_cast<std::uint64_t>(epoch);
      emit_metrics(metrics_, cfg_.out_dir);  // flushed once per epoch

      if (cfg_.checkpoint_every_epochs > 0 && epoch % cfg_.checkpoint_every_epochs == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "/checkpoint_epoch_%04d.bin", epoch);
        save_checkpoint(cfg_.out_dir + name, registry_);
      }
    }

    save_checkpoint(cfg_.out_dir + "/checkpoint_final.bin", registry_);
    finalize_ticket_ratio();
    emit_outputs();
    return {std::move(metrics_), summary_, std::move(model_)};
  }

  Model<T>& model() { return model_; }

 private:
  void load_data() {
    switch (cfg_.data_kind) {
      case DataKind::Idx:
        train_ = load_idx<T>(cfg_.train_images, cfg_.train_labels);
        test_ = load_idx<T>(cfg_.test_images, cfg_.test_labels);
        break;
      case DataKind::Cifar10Bin:
        train_ = load_cifar10_bin<T>(cfg_.train_bin);
        test_ = load_cifar10_bin<T>(cfg_.test_bin);
        break;
      case DataKind::Synthetic: {
        SyntheticSpec spec;
        spec.train_count = cfg_.synthetic_train;
        spec.test_count = cfg_.synthetic_test;
        spec.classes = cfg_.synthetic_classes;
        spec.channels = cfg_.synthetic_channels;
        spec.height = cfg_.synthetic_height;
        spec.width = cfg_.synthetic_width;
        spec.noise = cfg_.synthetic_noise;
        spec.seed = cfg_.synthetic_seed;
        auto [tr, te] = make_synthetic<T>(spec);
        train_ = std::move(tr);
        test_ = std::move(te);
        break;
      }
    }
    limit(train_, cfg_.limit_train);
    limit(test_, cfg_.limit_test);
    normalize_dataset(train_, channel_stat(cfg_.mean), channel_stat(cfg_.stddev));
    normalize_dataset(test_, channel_stat(cfg_.mean), channel_stat(cfg_.stddev));
  }

  std::vector<double> channel_stat(const std::vector<double>& v) const {
    if (v.size() == 1 && train_.images.dim(1) > 1)
      return std::vector<double>(train_.images.dim(1), v[0]);
    return v;
  }

  static void limit(Dataset<T>& ds, std::size_t n) {
    if (n == 0 || n >= ds.size()) return;
    const std::size_t chw = ds.images.numel() / ds.images.dim(0);
    Tensor<T> images({n, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
    std::copy(ds.images.data(), ds.images.data() + n * chw, images.data());
    ds.images = std::move(images);
    ds.labels.resize(n);
  }

  void load_trajectory() {
    trajectory_ = parse_trajectory_csv(cfg_.trajectory_path);
    const long needed = iters_per_epoch_ * cfg_.epochs;
    if (static_cast<long>(trajectory_.frozen_counts.size()) < needed)
      throw ConfigError("trajectory has " +
                        std::to_string(trajectory_.frozen_counts.size()) +
                        " iterations but the run needs " + std::to_string(needed));
    std::vector<std::string> names;
    for (auto& [name, q] : qlayers_) names.push_back(name);
    if (trajectory_.layer_names != names)
      throw ConfigError("trajectory layer columns do not match this model");
  }

  void initialize_state() {
    auto rng = seeded_rng(cfg_.seed, rng_stream::kInit);
    init_weights(model_, rng);
    if (cfg_.init_fp_epochs > 0 && cfg_.lts.mode != RunMode::Fp &&
        cfg_.init_checkpoint.empty() && cfg_.resume_checkpoint.empty()) {
      RunConfig fp = cfg_;
      fp.lts.mode = RunMode::Fp;
      fp.epochs = cfg_.init_fp_epochs;
      fp.init_fp_epochs = 0;
      fp.out_dir = cfg_.out_dir + "/fp_init";
      fp.checkpoint_every_epochs = 0;
      fp.snapshots_enabled = false;
      Trainer<T> pre(fp);
      pre.run();
      cfg_.init_checkpoint = fp.out_dir + "/checkpoint_final.bin";
    }
    if (!cfg_.init_checkpoint.empty() && cfg_.resume_checkpoint.empty())
      init_from_checkpoint();
    if (cfg_.lts.mode != RunMode::Fp) {
      init_weight_bounds(model_);
      for (auto& [name, q] : qlayers_) {
        Tensor<T> w_n = normalize(q->weight, q->wbounds.bounds);
        Tensor<T> q0 = quantize_levels(w_n, q->wcfg);
        q->freeze.init(q0, q->wcfg);
      }
    }
  }

  /// Load weights/bias/BN tensors from a (typically full-precision)
  /// checkpoint; optimizer state, masks and bounds start fresh.
  void init_from_checkpoint() {
    auto ckpt = load_checkpoint(cfg_.init_checkpoint);
    std::map<std::string, RawTensor> filtered;
    auto keep = [](const std::string& name) {
      for (const char* suffix :
           {".weight", ".bias", ".gamma", ".beta", ".running_mean", ".running_var"}) {
        const std::string s(suffix);
        if (name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0)
          return true;
      }
      return false;
    };
    for (auto& [name, t] : ckpt)
      if (keep(name)) filtered.emplace(name, std::move(t));
    StateRegistry<T> weights_only;
    register_model_state(model_, weights_only);
    auto applied = weights_only.apply_partial(filtered);
    for (auto& [name, q] : qlayers_) {
      const std::string want = name + ".weight";
      if (std::find(applied.begin(), applied.end(), want) == applied.end())
        throw DimensionError("init checkpoint is missing tensor '" + want + "'");
    }
  }

  void register_all() {
    register_model_state(model_, registry_);
    registry_.add_u64("trainer.counters", &counters_);
    registry_.add_f64("trainer.best_acc", {&best_acc_});
  }

  void resume() {
    registry_.apply_strict(load_checkpoint(cfg_.resume_checkpoint));
    for (auto& [name, q] : qlayers_)
      if (q->quant_enabled) q->abounds_calibrated = true;
    // snapshots from the interrupted run, when resuming into the same dir
    snapshots_ = load_level_snapshots(cfg_.out_dir);
  }

  double lr_for_epoch(int epoch) const {
    double lr = cfg_.lr;
    for (int d : cfg_.lr_decay_epochs)
      if (epoch > d) lr *= cfg_.lr_decay_factor;
    return lr;
  }

  double pooled_sparsity() {
    const std::size_t total = model_.quantized_weight_count();
    if (total == 0) return 0.0;
    return static_cast<double>(model_.frozen_weight_count()) / static_cast<double>(total);
  }

  void accumulate_mac_counters() {
    for (std::size_t li = 0; li < qlayers_.size(); ++li) {
      const auto& rep = qlayers_[li].second->last_report;
      total_wgrad_macs_ += rep.macs_total();
      total_skipped_macs_ += rep.macs_skipped;
      per_epoch_skipped_[li] += rep.macs_skipped;
    }
  }

  /// Post-step scheduler pass: re-quantize weights, update EMA distances,
  /// advance the rate schedule and extend the frozen masks.
  double lts_scheduler_pass(long iter) {
    const double p = rate_schedule(cfg_.lts.strategy, iter, iters_per_epoch_,
                                   cfg_.epochs, cfg_.lts.warmup_epochs, cfg_.lts.c);
    for (std::size_t li = 0; li < qlayers_.size(); ++li) {
      auto* q = qlayers_[li].second;
      Tensor<T> w_n = normalize(q->weight, q->wbounds.bounds);
      Tensor<T> levels = quantize_levels(w_n, q->wcfg);
      Tensor<T> d_inst = level_distance(w_n, levels, q->wcfg);
      per_epoch_changes_[li] += ema_update(q->freeze, d_inst, levels, q->frozen_mask,
                                           static_cast<T>(cfg_.lts.m), q->wcfg);
      const double t = freeze_threshold(q->wcfg.bits, p);
      q->freeze.p = p;
      q->freeze.t = t;
      auto fresh = freeze_step(q->freeze, q->frozen_mask, t);
      q->zero_momentum_at(fresh);
    }
    return p;
  }

  void random_scheduler_pass(long iter) {
    const auto& row = trajectory_.frozen_counts.at(static_cast<std::size_t>(iter - 1));
    if (row.size() != qlayers_.size())
      throw ConfigError("trajectory has " + std::to_string(row.size()) +
                        " layers but the model has " + std::to_string(qlayers_.size()));
    auto rng = seeded_rng(cfg_.seed, rng_stream::kRandomFreeze,
                          static_cast<std::uint64_t>(iter));
    for (std::size_t li = 0; li < qlayers_.size(); ++li)
      random_freeze_step(*qlayers_[li].second, row[li], rng);
  }

  void record_trajectory_row() {
    std::vector<std::size_t> row;
    row.reserve(qlayers_.size());
    for (auto& [name, q] : qlayers_) row.push_back(q->frozen_count());
    trajectory_rows_.push_back(std::move(row));
  }

  double evaluate() {
    std::size_t correct = 0;
    const std::size_t n = test_.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t begin = 0; begin < n; begin += cfg_.batch_size) {
      const std::size_t count = std::min(cfg_.batch_size, n - begin);
      auto [batch, labels] = gather_batch(test_, order, begin, count);
      Tensor<T> logits = model_.forward(batch, PassMode::Eval);
      for (std::size_t i = 0; i < count; ++i) {
        const T* row = logits.data() + i * logits.dim(1);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.dim(1); ++j)
          if (row[j] > row[arg]) arg = j;
        if (static_cast<int>(arg) == labels[i]) ++correct;
      }
    }
    return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
  }

  void finish_epoch_records(int epoch) {
    for (std::size_t li = 0; li < qlayers_.size(); ++li) {
      auto& [name, q] = qlayers_[li];
      LayerEpochRecord rec;
      rec.epoch = epoch;
      rec.layer = name;
      rec.frozen = q->frozen_count();
      rec.total = q->weight_count();
      rec.sparsity = static_cast<double>(rec.frozen) / static_cast<double>(rec.total);
      rec.level_changes = per_epoch_changes_[li];
      rec.macs_skipped = per_epoch_skipped_[li];
      if (q->quant_enabled && q->freeze.initialized()) {
        Tensor<T> w_n = normalize(q->weight, q->wbounds.bounds);
        Tensor<T> levels = quantize_levels(w_n, q->wcfg);
        rec.frozen_level_drift = frozen_level_drift(q->freeze, levels, q->frozen_mask);
      }
      metrics_.per_layer.push_back(std::move(rec));
    }
  }

  void take_snapshot(int epoch) {
    LevelSnapshot snap;
    snap.epoch = epoch;
    for (auto& [name, q] : qlayers_) {
      Tensor<T> w_n = normalize(q->weight, q->wbounds.bounds);
      Tensor<T> levels = quantize_levels(w_n, q->wcfg);
      std::vector<std::uint8_t> bytes(levels.numel());
      for (std::size_t i = 0; i < levels.numel(); ++i)
        bytes[i] = static_cast<std::uint8_t>(levels[i]);
      snap.layers.emplace_back(name, std::move(bytes));
    }
    write_level_snapshot(cfg_.out_dir, snap);
    snapshots_.push_back(std::move(snap));
  }

  void finalize_ticket_ratio() {
    if (snapshots_.empty()) return;
    const int best = static_cast<int>(best_epoch_);
    for (const auto& s : snapshots_)
      if (s.epoch == best) {
        metrics_.ticket = ticket_ratio_curve(snapshots_, best);
        return;
      }
  }

  void emit_outputs() {
    summary_.mode = cfg_.lts.mode == RunMode::Fp ? "fp"
                    : cfg_.lts.mode == RunMode::Baseline ? "baseline"
                    : cfg_.lts.mode == RunMode::Lts ? "lts"
                                                    : "random";
    summary_.model = cfg_.model;
    summary_.bits = cfg_.bits;
    summary_.epochs = cfg_.epochs;
    summary_.best_epoch = static_cast<int>(best_epoch_);
    summary_.best_top1 = best_acc_;
    summary_.avg_wgs = metrics_.iterations.empty() ? 0.0 : avg_wgs(metrics_.iterations);
    summary_.flops_reduction = summary_.avg_wgs / 2.0;
    summary_.flops_reduction_mac_weighted =
        total_wgrad_macs_ == 0 ? 0.0
                               : static_cast<double>(total_skipped_macs_) /
                                     static_cast<double>(2 * total_wgrad_macs_);
    summary_.total_iterations = static_cast<long>(iteration_);

    emit_metrics(metrics_, cfg_.out_dir);
    write_summary_csv(cfg_.out_dir + "/summary.csv", summary_);
    std::vector<std::string> names;
    for (auto& [name, q] : qlayers_) names.push_back(name);
    const long start_iter =
        static_cast<long>(iteration_) - static_cast<long>(trajectory_rows_.size()) + 1;
    write_trajectory_csv(cfg_.out_dir + "/trajectory.csv", names, trajectory_rows_,
                         trajectory_rows_.empty() ? 1 : start_iter);
  }

 private:
  RunConfig cfg_;
  Dataset<T> train_, test_;
  Model<T> model_;
  std::vector<std::pair<std::string, QuantParams<T>*>> qlayers_;
  StateRegistry<T> registry_;
  long iters_per_epoch_ = 0;

  // counters_[0] = iteration, counters_[1] = epochs completed,
  // counters_[2] = best epoch; serialized as trainer.counters
  std::vector<std::uint64_t> counters_{0, 0, 0};
  std::uint64_t& iteration_ = counters_[0];
  std::uint64_t& epoch_done_ = counters_[1];
  std::uint64_t& best_epoch_ = counters_[2];
  double best_acc_ = -1.0;

  MetricsRecord metrics_;
  RunSummary summary_;
  std::vector<LevelSnapshot> snapshots_;
  Trajectory trajectory_;
  std::vector<std::vector<std::size_t>> trajectory_rows_;
  std::vector<std::size_t> per_epoch_changes_, per_epoch_skipped_;
  std::size_t total_wgrad_macs_ = 0, total_skipped_macs_ = 0;
};

/// Runs a config at its configured precision and returns the summary.
inline RunSummary run_config(const RunConfig& cfg) {
  if (cfg.precision == 64) return Trainer<double>(cfg).run().summary;
  return Trainer<float>(cfg).run().summary;
}

}  // namespace lts

#endif  // LTS_TRAINER_HPP
