#ifndef LTS_NETWORK_HPP
#define LTS_NETWORK_HPP

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lts/layers.hpp"

namespace lts {

template <typename T>
struct LossResult {
  T loss = T(0);
  Tensor<T> g_logits;
};

/// Mean cross-entropy over the batch; g = (softmax - onehot)/batch.
template <typename T>
LossResult<T> cross_entropy_fwd_bwd(const Tensor<T>& logits,
                                    const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  LossResult<T> r;
  r.g_logits = Tensor<T>(logits.shape());
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw InvariantError("cross_entropy: label " + std::to_string(label) +
                           " outside [0," + std::to_string(c) + ")");
    const T* row = logits.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const T log_denom = std::log(denom);
    total += log_denom - (row[label] - mx);
    T* grow = r.g_logits.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      const T soft = std::exp(row[j] - mx) / denom;
      grow[j] = (soft - (static_cast<std::size_t>(label) == j ? T(1) : T(0))) /
                static_cast<T>(n);
    }
  }
  r.loss = total / static_cast<T>(n);
  return r;
}

/// Ordered layer stack with a single forward/backward path.
template <typename T>
class Model {
 public:
  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, PassMode mode) {
    Tensor<T> cur = x;
    for (auto& l : layers_) cur = l->forward(cur, mode);
    return cur;
  }

  Tensor<T> backward(const Tensor<T>& g_logits) {
    Tensor<T> g = g_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void zero_grads() {
    for (auto& l : layers_) l->zero_grads();
  }

  /// SGD over every trainable tensor; clip bounds follow the same
  /// momentum/decay rule with per-element gradient normalization and a
  /// trust-region step cap, then re-clamp their gap.
  void sgd_step_all(T lr, T momentum, T weight_decay) {
    std::vector<ParamRef<T>> refs;
    for (auto& l : layers_) {
      refs.clear();
      l->collect_params(refs);
      for (auto& p : refs) sgd_step(p, lr, momentum, weight_decay);
      if (auto* q = l->quantized(); q && q->quant_enabled) {
        q->wbounds.sgd_step(lr, momentum, weight_decay, q->wbound_grad_scale());
        q->abounds.sgd_step(lr, momentum, weight_decay, q->abound_grad_scale());
      }
    }
  }

  std::vector<std::pair<std::string, QuantParams<T>*>> quantized_layers() {
    std::vector<std::pair<std::string, QuantParams<T>*>> out;
    for (auto& l : layers_)
      if (auto* q = l->quantized()) out.emplace_back(l->name(), q);
    return out;
  }

  std::vector<Layer<T>*> layers() {
    std::vector<Layer<T>*> out;
    for (auto& l : layers_) out.push_back(l.get());
    return out;
  }

  Layer<T>* layer(const std::string& name) {
    for (auto& l : layers_)
      if (l->name() == name) return l.get();
    return nullptr;
  }

  std::size_t quantized_weight_count() {
    std::size_t n = 0;
    for (auto& [name, q] : quantized_layers()) n += q->weight_count();
    return n;
  }

  std::size_t frozen_weight_count() {
    std::size_t n = 0;
    for (auto& [name, q] : quantized_layers()) n += q->frozen_count();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// He-normal weight init, biases zero. Draw order is the layer order, so a
/// fixed seed pins the whole initialization.
template <typename T>
void init_weights(Model<T>& model, std::mt19937& rng) {
  for (auto* layer : model.layers()) {
    auto* q = layer->quantized();
    if (!q) continue;
    std::size_t fan_in = q->weight.numel() / q->weight.dim(0);
    std::normal_distribution<T> dist(T(0), std::sqrt(T(2) / static_cast<T>(fan_in)));
    for (std::size_t i = 0; i < q->weight.numel(); ++i) q->weight[i] = dist(rng);
    q->bias.fill(T(0));
  }
}

/// Weight clip bounds from the current weights (+/- 3 sigma rule). Called
/// after init_weights or after loading a full-precision checkpoint.
template <typename T>
void init_weight_bounds(Model<T>& model) {
  for (auto& [name, q] : model.quantized_layers())
    if (q->quant_enabled) q->wbounds.bounds = init_bounds(q->weight, QuantKind::Weight);
}

/// MLP-S: flatten -> fc1 (784->128) -> relu -> fc2 (128->classes), both
/// linear layers quantized.
template <typename T>
Model<T> build_mlp_s(const Shape& input_chw, int classes, int bits, bool quantized) {
  const std::size_t in_features = Tensor<T>::numel_of(input_chw);
  Model<T> m;
  m.add(std::make_unique<Flatten<T>>("flatten"));
  m.add(std::make_unique<QuantLinear<T>>("fc1", in_features, 128, bits, quantized));
  m.add(std::make_unique<ReLU<T>>("relu1"));
  m.add(std::make_unique<QuantLinear<T>>("fc2", 128, classes, bits, quantized));
  return m;
}

/// ConvNet-S: conv3x3x16/BN/ReLU -> conv3x3x32/BN/ReLU -> maxpool2 ->
/// fc->classes, every weight layer quantized.
template <typename T>
Model<T> build_convnet_s(const Shape& input_chw, int classes, int bits, bool quantized) {
  if (input_chw.size() != 3)
    throw ConfigError("convnet-s expects a CxHxW input shape");
  const std::size_t c = input_chw[0], h = input_chw[1], w = input_chw[2];
  if (h % 2 != 0 || w % 2 != 0)
    throw ConfigError("convnet-s needs even spatial extents for the 2x2 pool");
  Model<T> m;
  m.add(std::make_unique<QuantConv2d<T>>("conv1", c, 16, 3, 3, 1, 1, bits, quantized));
  m.add(std::make_unique<BatchNorm2d<T>>("bn1", 16));
  m.add(std::make_unique<ReLU<T>>("relu1"));
  m.add(std::make_unique<QuantConv2d<T>>("conv2", 16, 32, 3, 3, 1, 1, bits, quantized));
  m.add(std::make_unique<BatchNorm2d<T>>("bn2", 32));
  m.add(std::make_unique<ReLU<T>>("relu2"));
  m.add(std::make_unique<MaxPool2d<T>>("pool"));
  m.add(std::make_unique<Flatten<T>>("flatten"));
  m.add(std::make_unique<QuantLinear<T>>("fc", 32 * (h / 2) * (w / 2), classes, bits,
                                         quantized));
  return m;
}

template <typename T>
Model<T> build_model(const std::string& kind, const Shape& input_chw, int classes,
                     int bits, bool quantized) {
  if (kind == "mlp-s") return build_mlp_s<T>(input_chw, classes, bits, quantized);
  if (kind == "convnet-s") return build_convnet_s<T>(input_chw, classes, bits, quantized);
  throw ConfigError("unknown model '" + kind + "' (mlp-s|convnet-s)");
}

}  // namespace lts

#endif  // LTS_NETWORK_HPP
