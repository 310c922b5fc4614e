#ifndef LTS_TENSOR_HPP
#define LTS_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lts/error.hpp"

namespace lts {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense row-major n-d array, rank 1..4, extents >= 1.
/// Element type is float or double, chosen per run.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(numel_of(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (numel_of(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  Tensor(Shape shape, std::initializer_list<T> init)
      : Tensor(std::move(shape), std::vector<T>(init)) {}

  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same buffer under a new shape; element count must agree.
  Tensor reshaped(Shape new_shape) const {
    validate_shape(new_shape);
    if (numel_of(new_shape) != numel())
      throw DimensionError("reshape " + shape_str(shape_) + " -> " +
                           shape_str(new_shape) + " changes element count");
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// Bitwise comparison, used by determinism and freeze-permanence tests.
  bool bit_equal(const Tensor& o) const {
    return shape_ == o.shape_ &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(T)) == 0;
  }

  static std::size_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t(1),
                           std::multiplies<std::size_t>());
  }

 private:
  static void validate_shape(const Shape& s) {
    if (s.size() > 4)
      throw DimensionError("tensor rank " + std::to_string(s.size()) + " exceeds 4");
    for (std::size_t e : s)
      if (e == 0) throw DimensionError("tensor extent 0 in shape " + shape_str(s));
  }

  Shape shape_;
  std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
}

/// c[i,j] = sum_k a[i,k]*b[k,j], accumulated in ascending k for every element.
/// Columns are processed in cache-sized blocks; blocking never reorders any
/// element's accumulation sequence, so results are independent of the block
/// width.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k_dim = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n}, T(0));
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  constexpr std::size_t kBlock = 2048;
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t jb = std::min(kBlock, n - j0);
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = pa + i * k_dim;
      T* crow = pc + i * n + j0;
      for (std::size_t k = 0; k < k_dim; ++k) {
        const T aik = arow[k];
        const T* brow = pb + k * n + j0;
        for (std::size_t j = 0; j < jb; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose2d: rank != 2");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at2(j, i) = a.at2(i, j);
  return t;
}

/// Convolution geometry with exact output extents.
struct ConvGeom {
  std::size_t batch, in_ch, in_h, in_w;
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch_rows() const { return in_ch * kh * kw; }
  std::size_t out_cols() const { return batch * out_h * out_w; }
};

inline ConvGeom make_conv_geom(const Shape& input, std::size_t kh, std::size_t kw,
                               std::size_t stride, std::size_t pad) {
  if (input.size() != 4)
    throw DimensionError("im2col: input must be NxCxHxW, got " + shape_str(input));
  if (stride < 1) throw ConfigError("im2col: stride must be >= 1");
  const std::size_t h = input[2], w = input[3];
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw ConfigError("im2col: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " exceeds padded input " + std::to_string(h + 2 * pad) + "x" +
                      std::to_string(w + 2 * pad));
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0)
    throw ConfigError("im2col: output extent not exact for input " + shape_str(input) +
                      ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                      ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
  ConvGeom g;
  g.batch = input[0];
  g.in_ch = input[1];
  g.in_h = h;
  g.in_w = w;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.pad = pad;
  g.out_h = (h + 2 * pad - kh) / stride + 1;
  g.out_w = (w + 2 * pad - kw) / stride + 1;
  return g;
}

/// Unfold patches into columns: row (c*kh+ki)*kw+kj, column (n*out_h+oh)*out_w+ow.
/// Padding contributes zeros.
template <typename T>
Tensor<T> im2col(const Tensor<T>& input, const ConvGeom& g) {
  if (input.rank() != 4 || input.dim(0) != g.batch || input.dim(1) != g.in_ch ||
      input.dim(2) != g.in_h || input.dim(3) != g.in_w)
    throw DimensionError("im2col: input " + shape_str(input.shape()) +
                         " does not match geometry");
  Tensor<T> cols({g.patch_rows(), g.out_cols()}, T(0));
  const std::size_t p = g.out_cols();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const std::size_t row = (c * g.kh + ki) * g.kw + kj;
        T* out = cols.data() + row * p;
        for (std::size_t n = 0; n < g.batch; ++n) {
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
            const std::size_t col0 = (n * g.out_h + oh) * g.out_w;
            if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
              if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
              out[col0 + ow] = input.at4(n, c, static_cast<std::size_t>(ih),
                                         static_cast<std::size_t>(iw));
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& input, std::size_t kh, std::size_t kw,
                 std::size_t stride, std::size_t pad) {
  return im2col(input, make_conv_geom(input.shape(), kh, kw, stride, pad));
}

/// Scatter-add inverse of im2col; overlapping patch positions sum.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const ConvGeom& g) {
  if (cols.rank() != 2 || cols.dim(0) != g.patch_rows() || cols.dim(1) != g.out_cols())
    throw DimensionError("col2im: cols " + shape_str(cols.shape()) +
                         " does not match geometry " +
                         shape_str({g.patch_rows(), g.out_cols()}));
  Tensor<T> img({g.batch, g.in_ch, g.in_h, g.in_w}, T(0));
  const std::size_t p = g.out_cols();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const std::size_t row = (c * g.kh + ki) * g.kw + kj;
        const T* in = cols.data() + row * p;
        for (std::size_t n = 0; n < g.batch; ++n) {
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
            if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
            const std::size_t col0 = (n * g.out_h + oh) * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
              if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
              img.at4(n, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) +=
                  in[col0 + ow];
            }
          }
        }
      }
    }
  }
  return img;
}

template <typename T>
T sum(const Tensor<T>& a) {
  T s = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  return s;
}

template <typename T>
T mean(const Tensor<T>& a) {
  if (a.empty()) throw InvariantError("mean of empty tensor");
  return sum(a) / static_cast<T>(a.numel());
}

/// Population standard deviation (divides by N).
template <typename T>
T stddev(const Tensor<T>& a) {
  if (a.empty()) throw InvariantError("stddev of empty tensor");
  const T mu = mean(a);
  T acc = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const T d = a[i] - mu;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<T>(a.numel()));
}

template <typename T>
T min_value(const Tensor<T>& a) {
  if (a.empty()) throw InvariantError("min of empty tensor");
  return *std::min_element(a.vec().begin(), a.vec().end());
}

template <typename T>
T max_value(const Tensor<T>& a) {
  if (a.empty()) throw InvariantError("max of empty tensor");
  return *std::max_element(a.vec().begin(), a.vec().end());
}

}  // namespace lts

#endif  // LTS_TENSOR_HPP
