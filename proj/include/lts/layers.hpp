#ifndef LTS_LAYERS_HPP
#define LTS_LAYERS_HPP

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lts/quantize.hpp"
#include "lts/scheduler.hpp"
#include "lts/sparse_backward.hpp"
#include "lts/tensor.hpp"

namespace lts {

enum class PassMode { Train, Eval, Calibrate };

/// One updatable tensor with its gradient, momentum buffer and (for
/// quantized weights) the freeze mask. Bias/BN/bounds never carry a mask.
template <typename T>
struct ParamRef {
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
  Tensor<T>* momentum = nullptr;
  const std::vector<uint8_t>* frozen = nullptr;
};

/// v <- momentum*v + g + wd*w; w <- w - lr*v. Frozen positions keep both
/// their value and a zero momentum entry.
template <typename T>
void sgd_step(ParamRef<T> p, T lr, T momentum, T weight_decay) {
  if (lr < T(0)) throw ConfigError("sgd_step: negative learning rate");
  Tensor<T>& w = *p.value;
  const Tensor<T>& g = *p.grad;
  Tensor<T>& v = *p.momentum;
  require_same_shape(w.shape(), g.shape(), "sgd_step");
  require_same_shape(w.shape(), v.shape(), "sgd_step");
  const uint8_t* frozen = p.frozen && !p.frozen->empty() ? p.frozen->data() : nullptr;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    if (frozen && frozen[i]) {
      v[i] = T(0);
      continue;
    }
    v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
    w[i] -= lr * v[i];
  }
}

template <typename T>
void sgd_step_scalar(T& w, T g, T& v, T lr, T momentum, T weight_decay) {
  if (lr < T(0)) throw ConfigError("sgd_step: negative learning rate");
  v = momentum * v + g + weight_decay * w;
  w -= lr * v;
}

/// Trainable clip bounds with their gradient and momentum scalars. The
/// stored gradients are the exact loss derivatives (sums over every element
/// of the quantized tensor). The update normalizes them by the element count
/// and caps each bound's displacement at 1% of the current span per step;
/// without both, correlated per-element gradients push the bounds past the
/// whole weight range in a handful of iterations and the layer goes dead.
template <typename T>
struct BoundsParam {
  ClipBounds<T> bounds;
  T g_l = T(0), g_u = T(0);
  T v_l = T(0), v_u = T(0);

  static constexpr T kMaxStepFraction = T(0.01);

  void zero_grad() { g_l = g_u = T(0); }

  void sgd_step(T lr, T momentum, T weight_decay, T grad_scale = T(1)) {
    if (lr < T(0)) throw ConfigError("sgd_step: negative learning rate");
    const T max_step = kMaxStepFraction * (bounds.u - bounds.l);
    auto step_one = [&](T& w, T g, T& v) {
      v = momentum * v + grad_scale * g + weight_decay * w;
      w -= std::clamp(lr * v, -max_step, max_step);
    };
    step_one(bounds.l, g_l, v_l);
    step_one(bounds.u, g_u, v_u);
    bounds.clamp_gap();
  }
};

/// Parameter block shared by the quantized linear and conv layers.
template <typename T>
struct QuantParams {
  Tensor<T> weight, w_grad, w_mom;
  Tensor<T> bias, b_grad, b_mom;
  std::vector<uint8_t> frozen_mask;
  BoundsParam<T> wbounds, abounds;
  QuantConfig wcfg, acfg;
  bool quant_enabled = true;
  bool abounds_calibrated = false;
  FreezeState<T> freeze;
  SkipGemmReport last_report;
  std::size_t last_act_numel = 0;

  T wbound_grad_scale() const { return T(1) / static_cast<T>(weight.numel()); }
  T abound_grad_scale() const {
    return T(1) / static_cast<T>(last_act_numel ? last_act_numel : 1);
  }

  std::size_t weight_count() const { return weight.numel(); }
  std::size_t frozen_count() const {
    std::size_t n = 0;
    for (uint8_t f : frozen_mask) n += f;
    return n;
  }

  void zero_momentum_at(const std::vector<std::size_t>& idx) {
    for (std::size_t i : idx) w_mom[i] = T(0);
  }
};

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }

  virtual Tensor<T> forward(const Tensor<T>& x, PassMode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& g_out) = 0;
  virtual void zero_grads() {}
  virtual void collect_params(std::vector<ParamRef<T>>& out) { (void)out; }
  virtual QuantParams<T>* quantized() { return nullptr; }

 private:
  std::string name_;
};

namespace detail {

template <typename T>
void add_bias_rows(Tensor<T>& y_mat, const Tensor<T>& bias) {
  const std::size_t m = y_mat.dim(0), p = y_mat.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    T* row = y_mat.data() + i * p;
    const T b = bias[i];
    for (std::size_t j = 0; j < p; ++j) row[j] += b;
  }
}

template <typename T>
Tensor<T> bias_grad_rows(const Tensor<T>& g_mat) {
  const std::size_t m = g_mat.dim(0), p = g_mat.dim(1);
  Tensor<T> g({m});
  for (std::size_t i = 0; i < m; ++i) {
    T acc = T(0);
    const T* row = g_mat.data() + i * p;
    for (std::size_t j = 0; j < p; ++j) acc += row[j];
    g[i] = acc;
  }
  return g;
}

// NCHW -> [C x N*H*W] with column index (n*H + h)*W + w, matching im2col's
// output-position order.
template <typename T>
Tensor<T> nchw_to_rows(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> mat({c, n * hw});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* src = x.data() + (ni * c + ci) * hw;
      T* dst = mat.data() + ci * (n * hw) + ni * hw;
      std::copy(src, src + hw, dst);
    }
  return mat;
}

template <typename T>
Tensor<T> rows_to_nchw(const Tensor<T>& mat, std::size_t n, std::size_t c,
                       std::size_t h, std::size_t w) {
  Tensor<T> x({n, c, h, w});
  const std::size_t hw = h * w;
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* src = mat.data() + ci * (n * hw) + ni * hw;
      T* dst = x.data() + (ni * c + ci) * hw;
      std::copy(src, src + hw, dst);
    }
  return x;
}

// Frozen positions contribute to the clip-bound gradients even though their
// weight gradient is skipped: their dot products are formed here, against
// the same operands and in the same ascending order the dense kernel uses.
template <typename T>
void frozen_bound_grad_complement(const Tensor<T>& act_cols, const Tensor<T>& g_mat,
                                  const std::vector<uint8_t>& mask,
                                  const QuantCache<T>& cache_w, T& g_l, T& g_u) {
  const std::size_t m = g_mat.dim(0), k_dim = act_cols.dim(0), p = g_mat.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    const uint8_t* mrow = mask.data() + i * k_dim;
    const T* grow = g_mat.data() + i * p;
    for (std::size_t j = 0; j < k_dim; ++j) {
      if (!mrow[j]) continue;
      const T dot = dot_ascending(grow, act_cols.data() + j * p, p);
      accumulate_bound_grad(cache_w, i * k_dim + j, dot, g_l, g_u);
    }
  }
}

}  // namespace detail

/// Quantized fully-connected layer: y = FQ_w(W) * FQ_a(x) + b.
template <typename T>
class QuantLinear : public Layer<T> {
 public:
  QuantLinear(std::string name, std::size_t in_features, std::size_t out_features,
              int bits, bool quant_enabled)
      : Layer<T>(std::move(name)), in_(in_features), out_(out_features) {
    auto& p = params_;
    p.weight = Tensor<T>({out_features, in_features});
    p.w_grad = Tensor<T>(p.weight.shape());
    p.w_mom = Tensor<T>(p.weight.shape());
    p.bias = Tensor<T>({out_features});
    p.b_grad = Tensor<T>({out_features});
    p.b_mom = Tensor<T>({out_features});
    p.frozen_mask.assign(p.weight.numel(), 0);
    p.wcfg = QuantConfig(bits, QuantKind::Weight);
    p.acfg = QuantConfig(bits, QuantKind::Activation);
    p.quant_enabled = quant_enabled;
  }

  Tensor<T> forward(const Tensor<T>& x, PassMode mode) override {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw DimensionError(this->name() + ": input " + shape_str(x.shape()) +
                           " vs expected (N x " + std::to_string(in_) + ")");
    auto& p = params_;
    Tensor<T> x_used = x;
    Tensor<T> w_used = p.weight;
    if (p.quant_enabled) {
      if (mode == PassMode::Calibrate || !p.abounds_calibrated) {
        p.abounds.bounds = init_bounds(x, QuantKind::Activation);
        p.abounds_calibrated = true;
      }
      auto fa = fake_quant_forward(x, p.abounds.bounds, p.acfg);
      auto fw = fake_quant_forward(p.weight, p.wbounds.bounds, p.wcfg);
      p.last_act_numel = x.numel();
      x_used = std::move(fa.x_bar);
      w_used = std::move(fw.x_bar);
      if (mode == PassMode::Train) {
        cache_a_ = std::move(fa.cache);
        cache_w_ = std::move(fw.cache);
      }
    }
    Tensor<T> cols = transpose2d(x_used);            // [in x N]
    Tensor<T> y_mat = matmul(w_used, cols);          // [out x N]
    detail::add_bias_rows(y_mat, p.bias);
    if (mode == PassMode::Train) {
      act_cols_ = std::move(cols);
      w_bar_ = std::move(w_used);
      batch_ = x.dim(0);
    }
    return transpose2d(y_mat);  // [N x out]
  }

  Tensor<T> backward(const Tensor<T>& g_out) override {
    auto& p = params_;
    if (g_out.rank() != 2 || g_out.dim(0) != batch_ || g_out.dim(1) != out_)
      throw DimensionError(this->name() + ": gradient " + shape_str(g_out.shape()) +
                           " does not match cached forward");
    Tensor<T> g_mat = transpose2d(g_out);  // [out x N]
    p.b_grad = detail::bias_grad_rows(g_mat);

    Tensor<T> g_wbar = weight_grad_skipped(act_cols_, g_mat, p.frozen_mask, p.last_report);
    Tensor<T> g_cols = matmul(transpose2d(w_bar_), g_mat);  // [in x N]
    Tensor<T> g_xbar = transpose2d(g_cols);                 // [N x in]

    if (p.quant_enabled) {
      auto wb = fake_quant_backward(g_wbar, cache_w_);
      p.w_grad = std::move(wb.g_x);
      p.wbounds.g_l += wb.g_l;
      p.wbounds.g_u += wb.g_u;
      detail::frozen_bound_grad_complement(act_cols_, g_mat, p.frozen_mask, cache_w_,
                                           p.wbounds.g_l, p.wbounds.g_u);
      auto ab = fake_quant_backward(g_xbar, cache_a_);
      p.abounds.g_l += ab.g_l;
      p.abounds.g_u += ab.g_u;
      return std::move(ab.g_x);
    }
    p.w_grad = std::move(g_wbar);
    return g_xbar;
  }

  void zero_grads() override {
    params_.w_grad.fill(T(0));
    params_.b_grad.fill(T(0));
    params_.wbounds.zero_grad();
    params_.abounds.zero_grad();
  }

  void collect_params(std::vector<ParamRef<T>>& out) override {
    out.push_back({&params_.weight, &params_.w_grad, &params_.w_mom, &params_.frozen_mask});
    out.push_back({&params_.bias, &params_.b_grad, &params_.b_mom, nullptr});
  }

  QuantParams<T>* quantized() override { return &params_; }

 private:
  std::size_t in_, out_;
  QuantParams<T> params_;
  QuantCache<T> cache_w_, cache_a_;
  Tensor<T> act_cols_, w_bar_;
  std::size_t batch_ = 0;
};

/// Quantized 3x3-style convolution realized as im2col + one GEMM, so the
/// backward weight-gradient GEMM is the single instrumented skip kernel.
template <typename T>
class QuantConv2d : public Layer<T> {
 public:
  QuantConv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kh,
              std::size_t kw, std::size_t stride, std::size_t pad, int bits,
              bool quant_enabled)
      : Layer<T>(std::move(name)),
        in_ch_(in_ch),
        out_ch_(out_ch),
        kh_(kh),
        kw_(kw),
        stride_(stride),
        pad_(pad) {
    auto& p = params_;
    p.weight = Tensor<T>({out_ch, in_ch, kh, kw});
    p.w_grad = Tensor<T>(p.weight.shape());
    p.w_mom = Tensor<T>(p.weight.shape());
    p.bias = Tensor<T>({out_ch});
    p.b_grad = Tensor<T>({out_ch});
    p.b_mom = Tensor<T>({out_ch});
    p.frozen_mask.assign(p.weight.numel(), 0);
    p.wcfg = QuantConfig(bits, QuantKind::Weight);
    p.acfg = QuantConfig(bits, QuantKind::Activation);
    p.quant_enabled = quant_enabled;
  }

  Tensor<T> forward(const Tensor<T>& x, PassMode mode) override {
    if (x.rank() != 4 || x.dim(1) != in_ch_)
      throw DimensionError(this->name() + ": input " + shape_str(x.shape()) +
                           " vs expected (N x " + std::to_string(in_ch_) + " x H x W)");
    auto& p = params_;
    geom_ = make_conv_geom(x.shape(), kh_, kw_, stride_, pad_);
    Tensor<T> x_used = x;
    Tensor<T> w_used = p.weight;
    if (p.quant_enabled) {
      if (mode == PassMode::Calibrate || !p.abounds_calibrated) {
        p.abounds.bounds = init_bounds(x, QuantKind::Activation);
        p.abounds_calibrated = true;
      }
      auto fa = fake_quant_forward(x, p.abounds.bounds, p.acfg);
      auto fw = fake_quant_forward(p.weight, p.wbounds.bounds, p.wcfg);
      p.last_act_numel = x.numel();
      x_used = std::move(fa.x_bar);
      w_used = std::move(fw.x_bar);
      if (mode == PassMode::Train) {
        cache_a_ = std::move(fa.cache);
        cache_w_ = std::move(fw.cache);
      }
    }
    Tensor<T> cols = im2col(x_used, geom_);
    Tensor<T> w_mat = w_used.reshaped({out_ch_, geom_.patch_rows()});
    Tensor<T> y_mat = matmul(w_mat, cols);
    detail::add_bias_rows(y_mat, p.bias);
    if (mode == PassMode::Train) {
      act_cols_ = std::move(cols);
      w_bar_mat_ = std::move(w_mat);
    }
    return detail::rows_to_nchw(y_mat, geom_.batch, out_ch_, geom_.out_h, geom_.out_w);
  }

  Tensor<T> backward(const Tensor<T>& g_out) override {
    auto& p = params_;
    if (g_out.rank() != 4 || g_out.dim(0) != geom_.batch || g_out.dim(1) != out_ch_ ||
        g_out.dim(2) != geom_.out_h || g_out.dim(3) != geom_.out_w)
      throw DimensionError(this->name() + ": gradient " + shape_str(g_out.shape()) +
                           " does not match cached forward");
    Tensor<T> g_mat = detail::nchw_to_rows(g_out);  // [out_ch x P]
    p.b_grad = detail::bias_grad_rows(g_mat);

    Tensor<T> g_wbar_mat =
        weight_grad_skipped(act_cols_, g_mat, p.frozen_mask, p.last_report);
    Tensor<T> g_cols = matmul(transpose2d(w_bar_mat_), g_mat);
    Tensor<T> g_xbar = col2im(g_cols, geom_);

    if (p.quant_enabled) {
      Tensor<T> g_wbar = g_wbar_mat.reshaped(p.weight.shape());
      auto wb = fake_quant_backward(g_wbar, cache_w_);
      p.w_grad = std::move(wb.g_x);
      p.wbounds.g_l += wb.g_l;
      p.wbounds.g_u += wb.g_u;
      detail::frozen_bound_grad_complement(act_cols_, g_mat, p.frozen_mask, cache_w_,
                                           p.wbounds.g_l, p.wbounds.g_u);
      auto ab = fake_quant_backward(g_xbar, cache_a_);
      p.abounds.g_l += ab.g_l;
      p.abounds.g_u += ab.g_u;
      return std::move(ab.g_x);
    }
    p.w_grad = g_wbar_mat.reshaped(p.weight.shape());
    return g_xbar;
  }

  void zero_grads() override {
    params_.w_grad.fill(T(0));
    params_.b_grad.fill(T(0));
    params_.wbounds.zero_grad();
    params_.abounds.zero_grad();
  }

  void collect_params(std::vector<ParamRef<T>>& out) override {
    out.push_back({&params_.weight, &params_.w_grad, &params_.w_mom, &params_.frozen_mask});
    out.push_back({&params_.bias, &params_.b_grad, &params_.b_mom, nullptr});
  }

  QuantParams<T>* quantized() override { return &params_; }

 private:
  std::size_t in_ch_, out_ch_, kh_, kw_, stride_, pad_;
  ConvGeom geom_{};
  QuantParams<T> params_;
  QuantCache<T> cache_w_, cache_a_;
  Tensor<T> act_cols_, w_bar_mat_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  explicit ReLU(std::string name) : Layer<T>(std::move(name)) {}

  Tensor<T> forward(const Tensor<T>& x, PassMode mode) override {
    Tensor<T> y(x.shape());
    if (mode == PassMode::Train) mask_.assign(x.numel(), 0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const bool pos = x[i] > T(0);
      y[i] = pos ? x[i] : T(0);
      if (mode == PassMode::Train && pos) mask_[i] = 1;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g_out) override {
    if (g_out.numel() != mask_.size())
      throw DimensionError(this->name() + ": gradient does not match cached forward");
    Tensor<T> g(g_out.shape());
    for (std::size_t i = 0; i < g_out.numel(); ++i) g[i] = mask_[i] ? g_out[i] : T(0);
    return g;
  }

 private:
  std::vector<uint8_t> mask_;
};

/// 2x2 max pooling with stride 2; ties resolve to the first element in scan
/// order.
template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  explicit MaxPool2d(std::string name) : Layer<T>(std::move(name)) {}

  Tensor<T> forward(const Tensor<T>& x, PassMode mode) override {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
      throw DimensionError(this->name() + ": input " + shape_str(x.shape()) +
                           " must be NxCxHxW with even H,W");
    in_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), oh = x.dim(2) / 2, ow = x.dim(3) / 2;
    Tensor<T> y({n, c, oh, ow});
    if (mode == PassMode::Train) argmax_.assign(y.numel(), 0);
    std::size_t oi = 0;
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t h = 0; h < oh; ++h)
          for (std::size_t w = 0; w < ow; ++w, ++oi) {
            T best = x.at4(ni, ci, 2 * h, 2 * w);
            std::size_t best_idx = ((ni * c + ci) * x.dim(2) + 2 * h) * x.dim(3) + 2 * w;
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw) {
                const std::size_t hh = 2 * h + dh, ww = 2 * w + dw;
                const T v = x.at4(ni, ci, hh, ww);
                if (v > best) {
                  best = v;
                  best_idx = ((ni * c + ci) * x.dim(2) + hh) * x.dim(3) + ww;
                }
              }
            y[oi] = best;
            if (mode == PassMode::Train) argmax_[oi] = best_idx;
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g_out) override {
    if (g_out.numel() != argmax_.size())
      throw DimensionError(this->name() + ": gradient does not match cached forward");
    Tensor<T> g(in_shape_, T(0));
    for (std::size_t i = 0; i < g_out.numel(); ++i) g[argmax_[i]] += g_out[i];
    return g;
  }

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  explicit Flatten(std::string name) : Layer<T>(std::move(name)) {}

  Tensor<T> forward(const Tensor<T>& x, PassMode) override {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
  }

  Tensor<T> backward(const Tensor<T>& g_out) override {
    return g_out.reshaped(in_shape_);
  }

 private:
  Shape in_shape_;
};

/// Batch normalization over (N,H,W) per channel. Full precision, never
/// frozen; running statistics use momentum 0.9.
template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  static constexpr T kEps = T(1e-5);
  static constexpr T kRunningMomentum = T(0.9);

  BatchNorm2d(std::string name, std::size_t channels)
      : Layer<T>(std::move(name)), channels_(channels) {
    gamma_ = Tensor<T>({channels}, T(1));
    beta_ = Tensor<T>({channels}, T(0));
    g_gamma_ = Tensor<T>({channels});
    g_beta_ = Tensor<T>({channels});
    v_gamma_ = Tensor<T>({channels});
    v_beta_ = Tensor<T>({channels});
    running_mean_ = Tensor<T>({channels}, T(0));
    running_var_ = Tensor<T>({channels}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, PassMode mode) override {
    if (x.rank() != 4 || x.dim(1) != channels_)
      throw DimensionError(this->name() + ": input " + shape_str(x.shape()) +
                           " vs " + std::to_string(channels_) + " channels");
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t cnt = n * h * w;
    Tensor<T> y(x.shape());
    if (mode == PassMode::Train) {
      x_hat_ = Tensor<T>(x.shape());
      inv_std_ = Tensor<T>({channels_});
      count_ = cnt;
      for (std::size_t c = 0; c < channels_; ++c) {
        T mu = T(0);
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t hw = 0; hw < h * w; ++hw)
            mu += x.data()[(ni * channels_ + c) * h * w + hw];
        mu /= static_cast<T>(cnt);
        T var = T(0);
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t hw = 0; hw < h * w; ++hw) {
            const T d = x.data()[(ni * channels_ + c) * h * w + hw] - mu;
            var += d * d;
          }
        var /= static_cast<T>(cnt);
        const T istd = T(1) / std::sqrt(var + kEps);
        inv_std_[c] = istd;
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t hw = 0; hw < h * w; ++hw) {
            const std::size_t idx = (ni * channels_ + c) * h * w + hw;
            x_hat_[idx] = (x[idx] - mu) * istd;
            y[idx] = gamma_[c] * x_hat_[idx] + beta_[c];
          }
        running_mean_[c] = kRunningMomentum * running_mean_[c] + (T(1) - kRunningMomentum) * mu;
        running_var_[c] = kRunningMomentum * running_var_[c] + (T(1) - kRunningMomentum) * var;
      }
    } else {
      for (std::size_t c = 0; c < channels_; ++c) {
        const T istd = T(1) / std::sqrt(running_var_[c] + kEps);
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t hw = 0; hw < h * w; ++hw) {
            const std::size_t idx = (ni * channels_ + c) * h * w + hw;
            y[idx] = gamma_[c] * (x[idx] - running_mean_[c]) * istd + beta_[c];
          }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g_out) override {
    require_same_shape(g_out.shape(), x_hat_.shape(), "batchnorm backward");
    const std::size_t n = g_out.dim(0), h = g_out.dim(2), w = g_out.dim(3);
    Tensor<T> g_x(g_out.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      T sum_g = T(0), sum_gx = T(0);
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t hw = 0; hw < h * w; ++hw) {
          const std::size_t idx = (ni * channels_ + c) * h * w + hw;
          sum_g += g_out[idx];
          sum_gx += g_out[idx] * x_hat_[idx];
        }
      g_beta_[c] += sum_g;
      g_gamma_[c] += sum_gx;
      const T scale = gamma_[c] * inv_std_[c] / static_cast<T>(count_);
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t hw = 0; hw < h * w; ++hw) {
          const std::size_t idx = (ni * channels_ + c) * h * w + hw;
          g_x[idx] = scale * (static_cast<T>(count_) * g_out[idx] - sum_g -
                              x_hat_[idx] * sum_gx);
        }
    }
    return g_x;
  }

  void zero_grads() override {
    g_gamma_.fill(T(0));
    g_beta_.fill(T(0));
  }

  void collect_params(std::vector<ParamRef<T>>& out) override {
    out.push_back({&gamma_, &g_gamma_, &v_gamma_, nullptr});
    out.push_back({&beta_, &g_beta_, &v_beta_, nullptr});
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }
  Tensor<T>& gamma_momentum() { return v_gamma_; }
  Tensor<T>& beta_momentum() { return v_beta_; }

 private:
  std::size_t channels_;
  Tensor<T> gamma_, beta_, g_gamma_, g_beta_, v_gamma_, v_beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> x_hat_, inv_std_;
  std::size_t count_ = 0;
};

}  // namespace lts

#endif  // LTS_LAYERS_HPP
