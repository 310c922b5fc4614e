#ifndef LTS_QUANTIZE_HPP
#define LTS_QUANTIZE_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lts/tensor.hpp"

namespace lts {

enum class QuantKind { Weight, Activation };

inline const char* to_string(QuantKind k) {
  return k == QuantKind::Weight ? "weight" : "activation";
}

enum class RoundMode {
  NearestEven,  // training mode; ties round to even
  Identity      // derivative-check surrogate: round replaced by identity
};

/// Bit-width plus tensor kind. The interval 2/2^B is the reset/threshold
/// unit used by the freeze scheduler.
struct QuantConfig {
  int bits = 4;
  QuantKind kind = QuantKind::Weight;
  RoundMode round_mode = RoundMode::NearestEven;

  QuantConfig() = default;
  QuantConfig(int b, QuantKind k, RoundMode rm = RoundMode::NearestEven)
      : bits(b), kind(k), round_mode(rm) {
    if (b < 2 || b > 8)
      throw ConfigError("bit width " + std::to_string(b) + " outside [2,8]");
  }

  int levels() const { return (1 << bits) - 1; }  // 2^B - 1
  double interval() const { return 2.0 / static_cast<double>(1 << bits); }  // 2/2^B
};

/// Trainable per-tensor clipping bounds. u > l is kept by clamping
/// u >= l + kMinGap after every optimizer step.
template <typename T>
struct ClipBounds {
  T l = T(-1);
  T u = T(1);

  static constexpr T kMinGap = T(1e-6);

  void check() const {
    if (!(u > l))
      throw InvariantError("clip bounds violate u > l: l=" + std::to_string(double(l)) +
                           " u=" + std::to_string(double(u)));
  }

  void clamp_gap() {
    if (u < l + kMinGap) u = l + kMinGap;
  }
};

/// Everything the backward pass needs from a fake-quant forward.
/// For in-range elements x_n = (x-l)/(u-l) exactly, so (x-u)/(u-l) = x_n-1
/// and the bound gradients can be formed from x_n alone.
template <typename T>
struct QuantCache {
  Tensor<T> x_n;                 // normalized, clipped to [0,1]
  Tensor<T> q;                   // integer-valued levels in [0, 2^B-1]
  std::vector<uint8_t> in_range; // l <= x <= u per element
  ClipBounds<T> bounds;
  QuantConfig config;
};

template <typename T>
struct QuantBackwardResult {
  Tensor<T> g_x;
  T g_l = T(0);
  T g_u = T(0);
};

inline double round_half_even(double v) { return std::nearbyint(v); }

/// x_n = clip((x - l)/(u - l), 0, 1)
template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const ClipBounds<T>& bounds) {
  bounds.check();
  const T inv = T(1) / (bounds.u - bounds.l);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    T v = (x[i] - bounds.l) * inv;
    if (v < T(0)) v = T(0);
    if (v > T(1)) v = T(1);
    out[i] = v;
  }
  return out;
}

/// q = round((2^B - 1) * x_n); ties to even. Identity mode skips rounding
/// and exists only for finite-difference checks of the straight-through
/// estimator.
template <typename T>
Tensor<T> quantize_levels(const Tensor<T>& x_n, const QuantConfig& cfg) {
  const T scale = static_cast<T>(cfg.levels());
  Tensor<T> q(x_n.shape());
  if (cfg.round_mode == RoundMode::Identity) {
    for (std::size_t i = 0; i < x_n.numel(); ++i) q[i] = scale * x_n[i];
  } else {
    for (std::size_t i = 0; i < x_n.numel(); ++i)
      q[i] = static_cast<T>(round_half_even(static_cast<double>(scale * x_n[i])));
  }
  return q;
}

/// Weights map to [-1,1], activations to [0,1].
template <typename T>
Tensor<T> dequantize(const Tensor<T>& q, const QuantConfig& cfg) {
  const T inv_levels = T(1) / static_cast<T>(cfg.levels());
  Tensor<T> out(q.shape());
  if (cfg.kind == QuantKind::Weight) {
    for (std::size_t i = 0; i < q.numel(); ++i)
      out[i] = T(2) * (q[i] * inv_levels - T(0.5));
  } else {
    for (std::size_t i = 0; i < q.numel(); ++i) out[i] = q[i] * inv_levels;
  }
  return out;
}

template <typename T>
struct FakeQuantResult {
  Tensor<T> x_bar;
  QuantCache<T> cache;
};

template <typename T>
FakeQuantResult<T> fake_quant_forward(const Tensor<T>& x, const ClipBounds<T>& bounds,
                                      const QuantConfig& cfg) {
  bounds.check();
  FakeQuantResult<T> r;
  r.cache.x_n = normalize(x, bounds);
  r.cache.q = quantize_levels(r.cache.x_n, cfg);
  r.cache.in_range.resize(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i)
    r.cache.in_range[i] = (x[i] >= bounds.l && x[i] <= bounds.u) ? 1 : 0;
  r.cache.bounds = bounds;
  r.cache.config = cfg;
  r.x_bar = dequantize(r.cache.q, cfg);
  return r;
}

/// STE backward of the normalize-round-dequantize chain. With s = u-l and k = 2 for
/// weights (1 for activations):
///   g_x = g_out * k/s            on in-range elements, else 0
///   g_l = sum g_out * k*(x_n-1)/s  over in-range elements
///   g_u = sum -g_out * k*x_n/s     over in-range elements
/// Clipped elements contribute nothing anywhere: x_n is locally constant there.
template <typename T>
QuantBackwardResult<T> fake_quant_backward(const Tensor<T>& g_out,
                                           const QuantCache<T>& cache) {
  if (g_out.shape() != cache.x_n.shape())
    throw DimensionError("fake_quant_backward: gradient " + shape_str(g_out.shape()) +
                         " vs cache " + shape_str(cache.x_n.shape()));
  const T s = cache.bounds.u - cache.bounds.l;
  const T k = cache.config.kind == QuantKind::Weight ? T(2) : T(1);
  const T k_over_s = k / s;
  QuantBackwardResult<T> r;
  r.g_x = Tensor<T>(g_out.shape(), T(0));
  for (std::size_t i = 0; i < g_out.numel(); ++i) {
    if (!cache.in_range[i]) continue;
    r.g_x[i] = g_out[i] * k_over_s;
    r.g_l += g_out[i] * k_over_s * (cache.x_n[i] - T(1));
    r.g_u += -g_out[i] * k_over_s * cache.x_n[i];
  }
  return r;
}

/// Bound-gradient contribution of a single element, for callers that walk
/// elements themselves (the mask-aware layer backward).
template <typename T>
inline void accumulate_bound_grad(const QuantCache<T>& cache, std::size_t i, T g_out_i,
                                  T& g_l, T& g_u) {
  if (!cache.in_range[i]) return;
  const T s = cache.bounds.u - cache.bounds.l;
  const T k = cache.config.kind == QuantKind::Weight ? T(2) : T(1);
  g_l += g_out_i * (k / s) * (cache.x_n[i] - T(1));
  g_u += -g_out_i * (k / s) * cache.x_n[i];
}

/// Weights: +/- 3 standard deviations. Activations: observed min/max of the
/// calibration batch. Degenerate ranges are repaired to u = l + 1e-6.
template <typename T>
ClipBounds<T> init_bounds(const Tensor<T>& x, QuantKind kind) {
  if (x.empty()) throw InvariantError("init_bounds: empty tensor");
  ClipBounds<T> b;
  if (kind == QuantKind::Weight) {
    const T sd = stddev(x);
    b.l = T(-3) * sd;
    b.u = T(3) * sd;
  } else {
    b.l = min_value(x);
    b.u = max_value(x);
  }
  b.clamp_gap();
  return b;
}

}  // namespace lts

#endif  // LTS_QUANTIZE_HPP
