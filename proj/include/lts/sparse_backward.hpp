#ifndef LTS_SPARSE_BACKWARD_HPP
#define LTS_SPARSE_BACKWARD_HPP

#include <chrono>
#include <cstdint>
#include <vector>

#include "lts/tensor.hpp"

namespace lts {

/// MAC accounting for one weight-gradient GEMM. For an M x K_dim output with
/// inner extent P, macs_performed + macs_skipped == M*K_dim*P always.
struct SkipGemmReport {
  std::size_t m = 0;
  std::size_t k_dim = 0;
  std::size_t p = 0;
  std::size_t macs_performed = 0;
  std::size_t macs_skipped = 0;
  std::int64_t elapsed_ns = 0;

  std::size_t macs_total() const { return m * k_dim * p; }
  double sparsity() const {
    const std::size_t tot = macs_total();
    return tot == 0 ? 0.0 : static_cast<double>(macs_skipped) / static_cast<double>(tot);
  }
};

namespace detail {

// One dot product, strictly ascending p. Kept out-of-line from the grouped
// path so dense and skipped kernels share the exact arithmetic.
template <typename T>
inline T dot_ascending(const T* a, const T* b, std::size_t p) {
  T acc = T(0);
  for (std::size_t e = 0; e < p; ++e) acc += a[e] * b[e];
  return acc;
}

// Four independent chains against a common left operand. Each output keeps
// its own ascending-p accumulation, so results match dot_ascending bit for
// bit while the chains overlap in the pipeline.
template <typename T>
inline void dot4_ascending(const T* g, const T* a0, const T* a1, const T* a2,
                           const T* a3, std::size_t p, T* out0, T* out1, T* out2,
                           T* out3) {
  T c0 = T(0), c1 = T(0), c2 = T(0), c3 = T(0);
  for (std::size_t e = 0; e < p; ++e) {
    const T ge = g[e];
    c0 += ge * a0[e];
    c1 += ge * a1[e];
    c2 += ge * a2[e];
    c3 += ge * a3[e];
  }
  *out0 = c0;
  *out1 = c1;
  *out2 = c2;
  *out3 = c3;
}

}  // namespace detail

/// Reference weight-gradient GEMM: G[i,j] = sum_p g_out[i,p]*act_cols[j,p],
/// ascending p for every element.
template <typename T>
Tensor<T> weight_grad_dense(const Tensor<T>& act_cols, const Tensor<T>& g_out) {
  if (act_cols.rank() != 2 || g_out.rank() != 2 || act_cols.dim(1) != g_out.dim(1))
    throw DimensionError("weight_grad: act_cols " + shape_str(act_cols.shape()) +
                         " vs g_out " + shape_str(g_out.shape()));
  const std::size_t m = g_out.dim(0), k_dim = act_cols.dim(0), p = g_out.dim(1);
  Tensor<T> grad({m, k_dim});
  const T* ga = g_out.data();
  const T* aa = act_cols.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = ga + i * p;
    T* out = grad.data() + i * k_dim;
    std::size_t j = 0;
    for (; j + 4 <= k_dim; j += 4)
      detail::dot4_ascending(grow, aa + j * p, aa + (j + 1) * p, aa + (j + 2) * p,
                             aa + (j + 3) * p, p, out + j, out + j + 1, out + j + 2,
                             out + j + 3);
    for (; j < k_dim; ++j) out[j] = detail::dot_ascending(grow, aa + j * p, p);
  }
  return grad;
}

/// Mask-aware variant: the P-length dot product of every frozen position is
/// skipped entirely and its output written as exact 0. Unfrozen positions
/// are bit-identical to weight_grad_dense.
template <typename T>
Tensor<T> weight_grad_skipped(const Tensor<T>& act_cols, const Tensor<T>& g_out,
                              const std::vector<uint8_t>& frozen_mask,
                              SkipGemmReport& report) {
  if (act_cols.rank() != 2 || g_out.rank() != 2 || act_cols.dim(1) != g_out.dim(1))
    throw DimensionError("weight_grad: act_cols " + shape_str(act_cols.shape()) +
                         " vs g_out " + shape_str(g_out.shape()));
  const std::size_t m = g_out.dim(0), k_dim = act_cols.dim(0), p = g_out.dim(1);
  if (frozen_mask.size() != m * k_dim)
    throw DimensionError("weight_grad_skipped: mask size " +
                         std::to_string(frozen_mask.size()) + " vs output " +
                         shape_str({m, k_dim}));

  const auto t0 = std::chrono::steady_clock::now();
  Tensor<T> grad({m, k_dim}, T(0));
  const T* ga = g_out.data();
  const T* aa = act_cols.data();
  std::size_t unfrozen_total = 0;
  std::vector<std::uint32_t> live;
  live.reserve(k_dim);
  for (std::size_t i = 0; i < m; ++i) {
    const uint8_t* mrow = frozen_mask.data() + i * k_dim;
    live.clear();
    for (std::size_t j = 0; j < k_dim; ++j)
      if (!mrow[j]) live.push_back(static_cast<std::uint32_t>(j));
    if (live.empty()) continue;  // fully frozen row: skipped outright
    unfrozen_total += live.size();
    const T* grow = ga + i * p;
    T* out = grad.data() + i * k_dim;
    std::size_t v = 0;
    for (; v + 4 <= live.size(); v += 4) {
      const std::size_t j0 = live[v], j1 = live[v + 1], j2 = live[v + 2], j3 = live[v + 3];
      detail::dot4_ascending(grow, aa + j0 * p, aa + j1 * p, aa + j2 * p, aa + j3 * p,
                             p, out + j0, out + j1, out + j2, out + j3);
    }
    for (; v < live.size(); ++v)
      out[live[v]] = detail::dot_ascending(grow, aa + live[v] * p, p);
  }
  const auto t1 = std::chrono::steady_clock::now();

  report.m = m;
  report.k_dim = k_dim;
  report.p = p;
  report.macs_performed = unfrozen_total * p;
  report.macs_skipped = (m * k_dim - unfrozen_total) * p;
  report.elapsed_ns =
      std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
  return grad;
}

/// Backward FLOPs bookkeeping for one iteration. Each layer's backward is
/// counted as two GEMMs of equal size (weight grad + activation grad); only
/// the weight-gradient side can be skipped.
struct FlopsAccounting {
  std::size_t bp_macs_done = 0;
  std::size_t bp_macs_baseline = 0;
  double reduction_fraction = 0.0;
};

inline FlopsAccounting backward_flops_accounting(
    const std::vector<SkipGemmReport>& layer_reports) {
  FlopsAccounting acc;
  std::size_t skipped = 0;
  for (const auto& r : layer_reports) {
    acc.bp_macs_baseline += 2 * r.macs_total();
    skipped += r.macs_skipped;
  }
  acc.bp_macs_done = acc.bp_macs_baseline - skipped;
  acc.reduction_fraction =
      acc.bp_macs_baseline == 0
          ? 0.0
          : static_cast<double>(skipped) / static_cast<double>(acc.bp_macs_baseline);
  return acc;
}

}  // namespace lts

#endif  // LTS_SPARSE_BACKWARD_HPP
