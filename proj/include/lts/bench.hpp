#ifndef LTS_BENCH_HPP
#define LTS_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "lts/sparse_backward.hpp"
#include "lts/tensor.hpp"

namespace lts {

struct BenchRow {
  std::size_t m = 0, n = 0, k = 0;  // g_out rows, act rows, inner extent
  double mask_density = 0;
  std::size_t macs_performed = 0;
  std::int64_t elapsed_ns = 0;  // median over reps
  double speedup_vs_dense = 0;
};

/// Frozen mask with an exact number of set entries.
inline std::vector<uint8_t> make_mask(std::size_t size, double density,
                                      std::mt19937& rng) {
  std::vector<uint8_t> mask(size, 0);
  const std::size_t count =
      static_cast<std::size_t>(std::llround(density * static_cast<double>(size)));
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < count && i < size; ++i) mask[idx[i]] = 1;
  return mask;
}

namespace detail {

inline std::int64_t median_ns(std::vector<std::int64_t> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace detail

/// Times the skip kernel against the dense reference on one weight-gradient
/// GEMM shape across the given mask densities.
template <typename T = float>
std::vector<BenchRow> bench_skip_gemm(std::size_t m, std::size_t n, std::size_t k,
                                      const std::vector<double>& densities,
                                      int reps, std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::uniform_real_distribution<T> dist(T(-1), T(1));
  Tensor<T> g_out({m, k});
  Tensor<T> act({n, k});
  for (std::size_t i = 0; i < g_out.numel(); ++i) g_out[i] = dist(rng);
  for (std::size_t i = 0; i < act.numel(); ++i) act[i] = dist(rng);

  volatile T sink = T(0);  // keeps results alive

  std::vector<std::int64_t> dense_times;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor<T> ref = weight_grad_dense(act, g_out);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + ref[0];
    dense_times.push_back(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
  }
  const std::int64_t dense_med = detail::median_ns(dense_times);

  std::vector<BenchRow> rows;
  for (double density : densities) {
    auto mask = make_mask(m * n, density, rng);
    std::vector<std::int64_t> times;
    SkipGemmReport rep;
    for (int r = 0; r < reps; ++r) {
      Tensor<T> out = weight_grad_skipped(act, g_out, mask, rep);
      sink = sink + out[0];
      times.push_back(rep.elapsed_ns);
    }
    BenchRow row;
    row.m = m;
    row.n = n;
    row.k = k;
    row.mask_density = density;
    row.macs_performed = rep.macs_performed;
    row.elapsed_ns = detail::median_ns(times);
    row.speedup_vs_dense =
        row.elapsed_ns == 0 ? 0.0
                            : static_cast<double>(dense_med) /
                                  static_cast<double>(row.elapsed_ns);
    rows.push_back(row);
  }
  (void)sink;
  return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "shape,mask_density,macs_performed,elapsed_ns,speedup_vs_dense\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zux%zux%zu", r.m, r.n, r.k);
    out << buf << ',' << r.mask_density << ',' << r.macs_performed << ','
        << r.elapsed_ns << ',' << r.speedup_vs_dense << '\n';
  }
}

}  // namespace lts

#endif  // LTS_BENCH_HPP
