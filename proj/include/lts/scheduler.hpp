#ifndef LTS_SCHEDULER_HPP
#define LTS_SCHEDULER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lts/quantize.hpp"
#include "lts/tensor.hpp"

namespace lts {

enum class RateStrategy { Fixing, Linear, Sine };
enum class RunMode { Fp, Baseline, Lts, Random };

inline RateStrategy parse_strategy(const std::string& s) {
  if (s == "fixing") return RateStrategy::Fixing;
  if (s == "linear") return RateStrategy::Linear;
  if (s == "sine") return RateStrategy::Sine;
  throw ConfigError("unknown rate strategy '" + s + "' (fixing|linear|sine)");
}

inline RunMode parse_run_mode(const std::string& s) {
  if (s == "fp") return RunMode::Fp;
  if (s == "baseline") return RunMode::Baseline;
  if (s == "lts") return RunMode::Lts;
  if (s == "random") return RunMode::Random;
  throw ConfigError("unknown run mode '" + s + "' (fp|baseline|lts|random)");
}

struct LtsHyperparams {
  RunMode mode = RunMode::Baseline;
  double m = 0.99;         // EMA momentum, [0,1)
  int warmup_epochs = 12;  // E_wm, 20% of the default 60-epoch recipe
  RateStrategy strategy = RateStrategy::Linear;
  double c = 0.05;         // fixed rate for the fixing strategy

  void validate(int total_epochs) const {
    if (m < 0.0 || m >= 1.0)
      throw ConfigError("lts.m must lie in [0,1), got " + std::to_string(m));
    if (c < 0.0 || c > 1.0)
      throw ConfigError("lts.c must lie in [0,1], got " + std::to_string(c));
    if (mode != RunMode::Lts) return;  // warmup only gates the lts scheduler
    if (warmup_epochs < 0 || warmup_epochs > total_epochs)
      throw ConfigError("lts.warmup_epochs must lie in [0, epochs]");
    if (strategy != RateStrategy::Fixing && warmup_epochs >= total_epochs)
      throw ConfigError("growth strategies need lts.warmup_epochs < train.epochs");
  }
};

/// Per-layer freeze bookkeeping. The frozen mask itself lives with the
/// layer parameters; this holds the EMA distances and level history.
template <typename T>
struct FreezeState {
  Tensor<T> ema_d;                  // D, in the dequantized-weight domain
  std::vector<uint8_t> q_prev;      // level at the previous scheduler pass
  std::vector<uint8_t> q_frozen;    // level recorded when an element froze
  double p = 0.0;
  double t = 0.0;

  /// D starts at the reset value, as if a level change just happened.
  void init(const Tensor<T>& q0, const QuantConfig& cfg) {
    ema_d = Tensor<T>(q0.shape(), static_cast<T>(cfg.interval()));
    q_prev.resize(q0.numel());
    q_frozen.assign(q0.numel(), 0);
    for (std::size_t i = 0; i < q0.numel(); ++i)
      q_prev[i] = static_cast<uint8_t>(q0[i]);
    p = 0.0;
    t = 0.0;
  }

  bool initialized() const { return ema_d.numel() > 0; }
};

/// Distance between the normalized weight and its level, scaled by 2 into
/// the dequantized-weight domain so it is commensurate with the interval
/// 2/2^B used for resets and thresholds.
template <typename T>
Tensor<T> level_distance(const Tensor<T>& w_n, const Tensor<T>& q,
                         const QuantConfig& cfg) {
  require_same_shape(w_n.shape(), q.shape(), "level_distance");
  const T inv_levels = T(1) / static_cast<T>(cfg.levels());
  Tensor<T> d(w_n.shape());
  for (std::size_t i = 0; i < w_n.numel(); ++i)
    d[i] = T(2) * std::abs(w_n[i] - q[i] * inv_levels);
  return d;
}

/// One EMA step per unfrozen element:
///   level unchanged: D <- m*D + (1-m)*D_inst
///   level changed:   D <- 2/2^B, and the level history advances.
/// Frozen elements are untouched. Returns how many levels changed.
template <typename T>
std::size_t ema_update(FreezeState<T>& state, const Tensor<T>& d_inst,
                       const Tensor<T>& q, const std::vector<uint8_t>& frozen,
                       T m, const QuantConfig& cfg) {
  require_same_shape(state.ema_d.shape(), d_inst.shape(), "ema_update");
  require_same_shape(state.ema_d.shape(), q.shape(), "ema_update");
  const T reset = static_cast<T>(cfg.interval());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < d_inst.numel(); ++i) {
    if (frozen[i]) continue;
    const uint8_t level = static_cast<uint8_t>(q[i]);
    if (level == state.q_prev[i]) {
      state.ema_d[i] = m * state.ema_d[i] + (T(1) - m) * d_inst[i];
    } else {
      state.ema_d[i] = reset;
      state.q_prev[i] = level;
      ++changed;
    }
  }
  return changed;
}

/// Rate p as a function of the 1-based iteration i. All strategies gate on
/// the warmup boundary i > T*E_wm and clamp to [0,1].
inline double rate_schedule(RateStrategy strategy, long i, long iters_per_epoch,
                            int epochs, int warmup_epochs, double c) {
  const long warm = iters_per_epoch * static_cast<long>(warmup_epochs);
  if (i <= warm) return 0.0;
  double p = 0.0;
  switch (strategy) {
    case RateStrategy::Fixing:
      p = c;
      break;
    case RateStrategy::Linear:
    case RateStrategy::Sine: {
      const long total = iters_per_epoch * static_cast<long>(epochs);
      if (warmup_epochs >= epochs)
        throw ConfigError("growth strategies need warmup_epochs < epochs");
      const double frac = static_cast<double>(i - warm) / static_cast<double>(total - warm);
      p = strategy == RateStrategy::Linear ? frac
                                           : std::sin(frac * 3.14159265358979323846 / 2.0);
      break;
    }
  }
  return std::clamp(p, 0.0, 1.0);
}

/// t = (2/2^B) * p
inline double freeze_threshold(int bits, double p) {
  return (2.0 / static_cast<double>(1 << bits)) * p;
}

/// Freeze every unfrozen element with D strictly below t. The mask only
/// ever gains entries. Returns the newly frozen indices so the caller can
/// zero their momentum.
template <typename T>
std::vector<std::size_t> freeze_step(FreezeState<T>& state, std::vector<uint8_t>& frozen,
                                     double t) {
  std::vector<std::size_t> fresh;
  for (std::size_t i = 0; i < state.ema_d.numel(); ++i) {
    if (frozen[i]) continue;
    if (static_cast<double>(state.ema_d[i]) < t) {
      frozen[i] = 1;
      state.q_frozen[i] = state.q_prev[i];
      fresh.push_back(i);
    }
  }
  return fresh;
}

/// Count frozen elements whose current level no longer matches the level
/// they froze at (possible when clip bounds drift afterwards).
template <typename T>
std::size_t frozen_level_drift(const FreezeState<T>& state, const Tensor<T>& q,
                               const std::vector<uint8_t>& frozen) {
  std::size_t drift = 0;
  for (std::size_t i = 0; i < q.numel(); ++i)
    if (frozen[i] && static_cast<uint8_t>(q[i]) != state.q_frozen[i]) ++drift;
  return drift;
}

}  // namespace lts

#endif  // LTS_SCHEDULER_HPP
