#include "lts/network.hpp"

#include <gtest/gtest.h>

#include <random>

#include "testutil.hpp"

using lts::BatchNorm2d;
using lts::ClipBounds;
using lts::Model;
using lts::ParamRef;
using lts::PassMode;
using lts::QuantConv2d;
using lts::QuantKind;
using lts::QuantLinear;
using lts::RoundMode;
using lts::Tensor;

namespace {

template <typename T>
void set_bounds(lts::QuantParams<T>& p, T wl, T wu, T al, T au) {
  p.wbounds.bounds = {wl, wu};
  p.abounds.bounds = {al, au};
  p.abounds_calibrated = true;
}

}  // namespace

TEST(QuantLinear, ZeroWeightsFpPathBroadcastsBias) {
  QuantLinear<double> fc("fc", 3, 2, 4, /*quant=*/false);
  fc.quantized()->weight.fill(0.0);
  fc.quantized()->bias = Tensor<double>({2}, {1.5, -2.0});
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> y = fc.forward(x, PassMode::Train);
  EXPECT_DOUBLE_EQ(y.at2(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(y.at2(1, 0), 1.5);
  EXPECT_DOUBLE_EQ(y.at2(0, 1), -2.0);
  EXPECT_DOUBLE_EQ(y.at2(1, 1), -2.0);
}

TEST(QuantLinear, ZeroWeightsQuantizeToNearestLevel) {
  // the uniform weight grid has no exact zero level; W=0 lands on
  // +/- 1/(2^B-1), so the output stays within that step of the bias
  QuantLinear<double> fc("fc", 4, 2, 8, /*quant=*/true);
  auto* p = fc.quantized();
  p->weight.fill(0.0);
  p->bias = Tensor<double>({2}, {0.7, -0.3});
  set_bounds<double>(*p, -1.0, 1.0, 0.0, 1.0);
  Tensor<double> x({1, 4}, {0.2, 0.8, 0.5, 1.0});
  Tensor<double> y = fc.forward(x, PassMode::Train);
  const double step = 1.0 / 255.0;
  EXPECT_NEAR(y.at2(0, 0), 0.7, 4 * step);
  EXPECT_NEAR(y.at2(0, 1), -0.3, 4 * step);
}

TEST(QuantLinear, HighBitNearIdentity) {
  // unit weight bounds make the dequantized weight sit exactly on 1.0, and
  // [0,1] activation bounds make normalization the identity
  QuantLinear<double> fc("fc", 1, 1, 8, /*quant=*/true);
  auto* p = fc.quantized();
  p->weight = Tensor<double>({1, 1}, {1.0});
  p->bias.fill(0.0);
  set_bounds<double>(*p, -1.0, 1.0, 0.0, 1.0);
  for (double v : {0.11, 0.42, 0.77}) {
    Tensor<double> x({1, 1}, {v});
    Tensor<double> y = fc.forward(x, PassMode::Eval);
    EXPECT_NEAR(y[0], v, 1.0 / 255.0);  // within one activation step
  }
}

TEST(QuantLinear, SeededCaseMatchesComposedOracle) {
  QuantLinear<double> fc("fc", 2, 2, 2, /*quant=*/true);
  auto* p = fc.quantized();
  p->weight = Tensor<double>({2, 2}, {0.31, -0.44, 0.92, 0.05});
  p->bias = Tensor<double>({2}, {0.1, -0.2});
  set_bounds<double>(*p, -1.0, 1.0, -0.5, 1.5);
  Tensor<double> x({2, 2}, {0.2, 0.9, -0.3, 1.2});
  Tensor<double> y = fc.forward(x, PassMode::Train);

  // independent chain: quantize both operands step by step, then a hand matmul
  lts::QuantConfig wc(2, QuantKind::Weight), ac(2, QuantKind::Activation);
  Tensor<double> wbar =
      dequantize(quantize_levels(normalize(p->weight, p->wbounds.bounds), wc), wc);
  Tensor<double> xbar =
      dequantize(quantize_levels(normalize(x, p->abounds.bounds), ac), ac);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = p->bias[o];
      for (std::size_t i = 0; i < 2; ++i) acc += wbar.at2(o, i) * xbar.at2(n, i);
      EXPECT_NEAR(y.at2(n, o), acc, 1e-12);
    }
}

TEST(QuantConv, OneByOneEqualsLinearOverPositions) {
  QuantConv2d<double> conv("conv", 2, 3, 1, 1, 1, 0, 4, true);
  QuantLinear<double> fc("fc", 2, 3, 4, true);
  auto* pc = conv.quantized();
  auto* pl = fc.quantized();
  std::mt19937 rng(9);
  testutil::fill_uniform(pc->weight, rng, -0.5, 0.5);
  pl->weight = pc->weight.reshaped({3, 2});
  pc->bias = Tensor<double>({3}, {0.1, 0.2, 0.3});
  pl->bias = pc->bias;
  set_bounds<double>(*pc, -0.6, 0.6, -1.0, 1.0);
  set_bounds<double>(*pl, -0.6, 0.6, -1.0, 1.0);

  Tensor<double> img({1, 2, 2, 2});
  testutil::fill_uniform(img, rng, -1.0, 1.0);
  Tensor<double> y_conv = conv.forward(img, PassMode::Eval);

  // same values as a batch of 4 spatial positions
  Tensor<double> flat({4, 2});
  for (std::size_t pos = 0; pos < 4; ++pos)
    for (std::size_t c = 0; c < 2; ++c) flat.at2(pos, c) = img[c * 4 + pos];
  Tensor<double> y_fc = fc.forward(flat, PassMode::Eval);

  for (std::size_t pos = 0; pos < 4; ++pos)
    for (std::size_t o = 0; o < 3; ++o)
      EXPECT_EQ(y_conv[o * 4 + pos], y_fc.at2(pos, o));
}

TEST(QuantConv, ZeroInputGivesBiasPlanes) {
  QuantConv2d<double> conv("conv", 1, 2, 3, 3, 1, 1, 4, true);
  auto* p = conv.quantized();
  std::mt19937 rng(15);
  testutil::fill_uniform(p->weight, rng, -0.4, 0.4);
  p->bias = Tensor<double>({2}, {0.25, -0.75});
  p->wbounds.bounds = {-0.5, 0.5};
  Tensor<double> x({1, 1, 4, 4}, 0.0);  // calibrates activation bounds on zeros
  Tensor<double> y = conv.forward(x, PassMode::Train);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_DOUBLE_EQ(y[c * 16 + i], p->bias[c]);
}

TEST(QuantConv, MatchesDirectConvOnPrequantizedOperands) {
  QuantConv2d<float> conv("conv", 1, 2, 2, 2, 1, 0, 4, true);
  auto* p = conv.quantized();
  std::mt19937 rng(21);
  testutil::fill_uniform(p->weight, rng, -0.8f, 0.8f);
  p->bias.fill(0.0f);
  set_bounds<float>(*p, -1.0f, 1.0f, -1.0f, 1.0f);
  Tensor<float> x({1, 1, 3, 3});
  testutil::fill_uniform(x, rng, -1.0f, 1.0f);
  Tensor<float> y = conv.forward(x, PassMode::Eval);

  lts::QuantConfig wc(4, QuantKind::Weight), ac(4, QuantKind::Activation);
  Tensor<float> wbar =
      dequantize(quantize_levels(normalize(p->weight, p->wbounds.bounds), wc), wc);
  Tensor<float> xbar =
      dequantize(quantize_levels(normalize(x, p->abounds.bounds), ac), ac);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t oh = 0; oh < 2; ++oh)
      for (std::size_t ow = 0; ow < 2; ++ow) {
        double acc = 0;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b)
            acc += static_cast<double>(wbar.at4(o, 0, a, b)) *
                   static_cast<double>(xbar.at4(0, 0, oh + a, ow + b));
        testutil::expect_near_rel(static_cast<double>(y.at4(0, o, oh, ow)), acc, 1e-5);
      }
}

TEST(LayerBackward, ZeroUpstreamGradient) {
  QuantLinear<double> fc("fc", 3, 2, 4, true);
  auto* p = fc.quantized();
  std::mt19937 rng(25);
  testutil::fill_uniform(p->weight, rng, -0.3, 0.3);
  set_bounds<double>(*p, -0.4, 0.4, -1.0, 1.0);
  Tensor<double> x({2, 3});
  testutil::fill_uniform(x, rng, -0.9, 0.9);
  fc.forward(x, PassMode::Train);
  fc.zero_grads();
  Tensor<double> g_x = fc.backward(Tensor<double>({2, 2}, 0.0));
  for (std::size_t i = 0; i < g_x.numel(); ++i) EXPECT_EQ(g_x[i], 0.0);
  for (std::size_t i = 0; i < p->w_grad.numel(); ++i) EXPECT_EQ(p->w_grad[i], 0.0);
  for (std::size_t i = 0; i < p->b_grad.numel(); ++i) EXPECT_EQ(p->b_grad[i], 0.0);
  EXPECT_EQ(p->wbounds.g_l, 0.0);
  EXPECT_EQ(p->abounds.g_u, 0.0);
}

TEST(LayerBackward, FullyFrozenMaskZeroesWeightGradOnly) {
  auto build = [](bool frozen) {
    auto fc = std::make_unique<QuantLinear<double>>("fc", 4, 3, 4, true);
    auto* p = fc->quantized();
    std::mt19937 rng(27);
    testutil::fill_uniform(p->weight, rng, -0.3, 0.3);
    p->bias = Tensor<double>({3}, {0.1, 0.2, 0.3});
    set_bounds<double>(*p, -0.4, 0.4, -1.0, 1.0);
    if (frozen) std::fill(p->frozen_mask.begin(), p->frozen_mask.end(), 1);
    return fc;
  };
  auto dense = build(false);
  auto frozen = build(true);

  std::mt19937 rng(28);
  Tensor<double> x({2, 4});
  Tensor<double> g({2, 3});
  testutil::fill_uniform(x, rng, -0.9, 0.9);
  testutil::fill_uniform(g, rng, -1.0, 1.0);

  dense->forward(x, PassMode::Train);
  dense->zero_grads();
  Tensor<double> gx_dense = dense->backward(g);
  frozen->forward(x, PassMode::Train);
  frozen->zero_grads();
  Tensor<double> gx_frozen = frozen->backward(g);

  testutil::expect_tensor_bitwise(gx_frozen, gx_dense);  // g_x unaffected
  for (std::size_t i = 0; i < frozen->quantized()->w_grad.numel(); ++i)
    EXPECT_EQ(frozen->quantized()->w_grad[i], 0.0);
  // frozen weights still feed the clip-bound gradients
  EXPECT_DOUBLE_EQ(frozen->quantized()->wbounds.g_l, dense->quantized()->wbounds.g_l);
  EXPECT_DOUBLE_EQ(frozen->quantized()->wbounds.g_u, dense->quantized()->wbounds.g_u);
  // bias grads identical too
  testutil::expect_tensor_bitwise(frozen->quantized()->b_grad,
                                  dense->quantized()->b_grad);
}

TEST(LayerBackward, UnfrozenWeightGradMatchesDenseOracle) {
  QuantLinear<double> fc("fc", 5, 3, 4, true);
  auto* p = fc.quantized();
  std::mt19937 rng(33);
  testutil::fill_uniform(p->weight, rng, -0.3, 0.3);
  set_bounds<double>(*p, -0.4, 0.4, -1.2, 1.2);
  Tensor<double> x({4, 5});
  Tensor<double> g({4, 3});
  testutil::fill_uniform(x, rng, -1.0, 1.0);
  testutil::fill_uniform(g, rng, -1.0, 1.0);

  fc.forward(x, PassMode::Train);
  fc.zero_grads();
  fc.backward(g);

  // oracle: quantize operands with the library primitives, dense GEMM, STE chain
  lts::QuantConfig wc(4, QuantKind::Weight), ac(4, QuantKind::Activation);
  auto fw = fake_quant_forward(p->weight, p->wbounds.bounds, wc);
  auto fa = fake_quant_forward(x, p->abounds.bounds, ac);
  Tensor<double> cols = transpose2d(fa.x_bar);
  Tensor<double> g_mat = transpose2d(g);
  Tensor<double> g_wbar = weight_grad_dense(cols, g_mat);
  auto wb = fake_quant_backward(g_wbar, fw.cache);
  testutil::expect_tensor_bitwise(p->w_grad, wb.g_x);
  EXPECT_DOUBLE_EQ(p->wbounds.g_l, wb.g_l);
  EXPECT_DOUBLE_EQ(p->wbounds.g_u, wb.g_u);
}

TEST(BatchNorm, IdentityOnStandardizedInput) {
  BatchNorm2d<double> bn("bn", 1);
  // batch of 4 values with exact mean 0, population variance 1
  Tensor<double> x({4, 1, 1, 1}, {-1.0, 1.0, -1.0, 1.0});
  Tensor<double> y = bn.forward(x, PassMode::Train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-4);
}

TEST(BatchNorm, ConstantInputGivesBeta) {
  BatchNorm2d<double> bn("bn", 2);
  bn.beta() = Tensor<double>({2}, {0.5, -1.5});
  Tensor<double> x({3, 2, 2, 2}, 7.0);
  Tensor<double> y = bn.forward(x, PassMode::Train);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t hw = 0; hw < 4; ++hw) {
      EXPECT_NEAR(y[(n * 2 + 0) * 4 + hw], 0.5, 1e-9);
      EXPECT_NEAR(y[(n * 2 + 1) * 4 + hw], -1.5, 1e-9);
    }
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  BatchNorm2d<double> bn("bn", 2);
  std::mt19937 rng(37);
  bn.gamma() = Tensor<double>({2}, {1.3, 0.7});
  bn.beta() = Tensor<double>({2}, {0.2, -0.1});
  Tensor<double> x({3, 2, 2, 2});
  Tensor<double> g({3, 2, 2, 2});
  testutil::fill_uniform(x, rng, -1.0, 1.0);
  testutil::fill_uniform(g, rng, -1.0, 1.0);

  auto loss = [&](const Tensor<double>& input) {
    BatchNorm2d<double> fresh("bn", 2);
    fresh.gamma() = bn.gamma();
    fresh.beta() = bn.beta();
    Tensor<double> y = fresh.forward(input, PassMode::Train);
    double acc = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += g[i] * y[i];
    return acc;
  };

  bn.zero_grads();
  bn.forward(x, PassMode::Train);
  Tensor<double> g_x = bn.backward(g);

  const double h = 1e-6;
  for (std::size_t i = 0; i < x.numel(); i += 5) {
    Tensor<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (loss(xp) - loss(xm)) / (2 * h);
    testutil::expect_near_rel(g_x[i], fd, 1e-4, "bn g_x");
  }
  // gamma / beta via fresh instances
  for (std::size_t c = 0; c < 2; ++c) {
    auto loss_gb = [&](double gamma_c, double beta_c) {
      BatchNorm2d<double> fresh("bn", 2);
      fresh.gamma() = bn.gamma();
      fresh.beta() = bn.beta();
      fresh.gamma()[c] = gamma_c;
      fresh.beta()[c] = beta_c;
      Tensor<double> y = fresh.forward(x, PassMode::Train);
      double acc = 0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += g[i] * y[i];
      return acc;
    };
    const double h2 = 1e-6;
    const double fd_gamma =
        (loss_gb(bn.gamma()[c] + h2, bn.beta()[c]) - loss_gb(bn.gamma()[c] - h2, bn.beta()[c])) /
        (2 * h2);
    const double fd_beta =
        (loss_gb(bn.gamma()[c], bn.beta()[c] + h2) - loss_gb(bn.gamma()[c], bn.beta()[c] - h2)) /
        (2 * h2);
    std::vector<ParamRef<double>> refs;
    bn.collect_params(refs);
    testutil::expect_near_rel((*refs[0].grad)[c], fd_gamma, 1e-4, "bn g_gamma");
    testutil::expect_near_rel((*refs[1].grad)[c], fd_beta, 1e-4, "bn g_beta");
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tensor<double> logits({2, 5}, 0.7);
  auto r = cross_entropy_fwd_bwd(logits, {0, 3});
  EXPECT_NEAR(r.loss, std::log(5.0), 1e-12);
}

TEST(CrossEntropy, SaturatedCorrectLogit) {
  Tensor<double> logits({1, 3}, {50.0, 0.0, 0.0});
  auto r = cross_entropy_fwd_bwd(logits, {0});
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(CrossEntropy, HandBatchOfTwo) {
  Tensor<double> logits({2, 2}, {1.0, 2.0, 3.0, -1.0});
  auto r = cross_entropy_fwd_bwd(logits, {1, 0});
  // softmax by hand in the test
  const double l0 = -std::log(std::exp(2.0) / (std::exp(1.0) + std::exp(2.0)));
  const double l1 = -std::log(std::exp(3.0) / (std::exp(3.0) + std::exp(-1.0)));
  EXPECT_NEAR(r.loss, (l0 + l1) / 2.0, 1e-12);
  const double soft00 = std::exp(1.0) / (std::exp(1.0) + std::exp(2.0));
  EXPECT_NEAR(r.g_logits.at2(0, 0), soft00 / 2.0, 1e-12);
  // label column: (softmax - 1)/batch, and softmax01 = 1 - soft00
  EXPECT_NEAR(r.g_logits.at2(0, 1), -soft00 / 2.0, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Tensor<double> logits({1, 3}, 0.0);
  EXPECT_THROW(cross_entropy_fwd_bwd(logits, {3}), lts::InvariantError);
  EXPECT_THROW(cross_entropy_fwd_bwd(logits, {-1}), lts::InvariantError);
}

TEST(SgdStep, NoOpWithZeroGradAndDecay) {
  Tensor<double> w({3}, {1.0, 2.0, 3.0});
  Tensor<double> g({3}, 0.0);
  Tensor<double> v({3}, 0.0);
  Tensor<double> before = w;
  lts::sgd_step<double>({&w, &g, &v, nullptr}, 0.1, 0.9, 0.0);
  testutil::expect_tensor_bitwise(w, before);
}

TEST(SgdStep, HandUpdate) {
  Tensor<double> w({1}, {1.0});
  Tensor<double> g({1}, {0.1});
  Tensor<double> v({1}, {0.0});
  lts::sgd_step<double>({&w, &g, &v, nullptr}, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(w[0], 0.99);
}

TEST(SgdStep, MomentumAndDecayComposition) {
  Tensor<double> w({1}, {1.0});
  Tensor<double> g({1}, {0.5});
  Tensor<double> v({1}, {0.2});
  // v = 0.9*0.2 + 0.5 + 0.01*1.0 = 0.69; w = 1 - 0.1*0.69
  lts::sgd_step<double>({&w, &g, &v, nullptr}, 0.1, 0.9, 0.01);
  EXPECT_NEAR(v[0], 0.69, 1e-15);
  EXPECT_NEAR(w[0], 1.0 - 0.069, 1e-15);
}

TEST(SgdStep, FrozenEntriesNeverMove) {
  Tensor<float> w({4}, {1, 2, 3, 4});
  Tensor<float> v({4}, {0.5f, 0.5f, 0.5f, 0.5f});
  std::vector<uint8_t> frozen{1, 0, 1, 0};
  Tensor<float> before = w;
  std::mt19937 rng(43);
  for (int step = 0; step < 10; ++step) {
    Tensor<float> g({4});
    testutil::fill_uniform(g, rng);
    lts::sgd_step<float>({&w, &g, &v, &frozen}, 0.1f, 0.9f, 1e-4f);
  }
  EXPECT_EQ(w[0], before[0]);
  EXPECT_EQ(w[2], before[2]);
  EXPECT_EQ(v[0], 0.0f);
  EXPECT_EQ(v[2], 0.0f);
  EXPECT_NE(w[1], before[1]);
}

TEST(SgdStep, NegativeLearningRateIsConfigError) {
  Tensor<double> w({1}, {1.0});
  Tensor<double> g({1}, {0.1});
  Tensor<double> v({1}, {0.0});
  EXPECT_THROW(lts::sgd_step<double>({&w, &g, &v, nullptr}, -0.1, 0.0, 0.0),
               lts::ConfigError);
}

namespace {

// every trainable scalar of a model, for finite-difference sweeps
std::vector<double*> all_scalars(Model<double>& model) {
  std::vector<double*> out;
  std::vector<ParamRef<double>> refs;
  for (auto* layer : model.layers()) {
    refs.clear();
    layer->collect_params(refs);
    for (auto& r : refs)
      for (std::size_t i = 0; i < r.value->numel(); ++i) out.push_back(&(*r.value)[i]);
    if (auto* q = layer->quantized()) {
      out.push_back(&q->wbounds.bounds.l);
      out.push_back(&q->wbounds.bounds.u);
      out.push_back(&q->abounds.bounds.l);
      out.push_back(&q->abounds.bounds.u);
    }
  }
  return out;
}

std::vector<double> all_grads(Model<double>& model) {
  std::vector<double> out;
  std::vector<ParamRef<double>> refs;
  for (auto* layer : model.layers()) {
    refs.clear();
    layer->collect_params(refs);
    for (auto& r : refs)
      for (std::size_t i = 0; i < r.grad->numel(); ++i) out.push_back((*r.grad)[i]);
    if (auto* q = layer->quantized()) {
      out.push_back(q->wbounds.g_l);
      out.push_back(q->wbounds.g_u);
      out.push_back(q->abounds.g_l);
      out.push_back(q->abounds.g_u);
    }
  }
  return out;
}

void use_surrogate_rounding(Model<double>& model) {
  for (auto& [name, q] : model.quantized_layers()) {
    q->wcfg.round_mode = RoundMode::Identity;
    q->acfg.round_mode = RoundMode::Identity;
  }
}

}  // namespace

TEST(EndToEnd, TwoLayerGradCheckAgainstSurrogate) {
  // conv -> bn -> relu -> flatten -> fc, 64-bit, round replaced by identity
  Model<double> model;
  model.add(std::make_unique<QuantConv2d<double>>("conv", 1, 2, 2, 2, 1, 0, 4, true));
  model.add(std::make_unique<BatchNorm2d<double>>("bn", 2));
  model.add(std::make_unique<lts::ReLU<double>>("relu"));
  model.add(std::make_unique<lts::Flatten<double>>("flatten"));
  model.add(std::make_unique<QuantLinear<double>>("fc", 8, 2, 4, true));

  std::mt19937 rng(47);
  init_weights(model, rng);
  for (auto& [name, q] : model.quantized_layers()) {
    for (std::size_t i = 0; i < q->weight.numel(); ++i)
      q->weight[i] = std::clamp(q->weight[i], -0.45, 0.45);
    set_bounds<double>(*q, -0.9, 0.9, -3.0, 3.0);
  }
  use_surrogate_rounding(model);

  Tensor<double> x({2, 1, 3, 3});
  testutil::fill_uniform(x, rng, -0.8, 0.8);
  const std::vector<int> labels{0, 1};

  auto loss_fn = [&]() {
    Tensor<double> logits = model.forward(x, PassMode::Train);
    return static_cast<double>(cross_entropy_fwd_bwd(logits, labels).loss);
  };

  model.zero_grads();
  Tensor<double> logits = model.forward(x, PassMode::Train);
  auto ce = cross_entropy_fwd_bwd(logits, labels);
  model.backward(ce.g_logits);

  auto grads = all_grads(model);
  auto slots = all_scalars(model);
  ASSERT_EQ(grads.size(), slots.size());

  const double h = 1e-6;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double saved = *slots[i];
    *slots[i] = saved + h;
    const double up = loss_fn();
    *slots[i] = saved - h;
    const double down = loss_fn();
    *slots[i] = saved;
    const double fd = (up - down) / (2 * h);
    if (std::abs(fd) < 1e-10 && std::abs(grads[i]) < 1e-10) continue;  // both dead
    testutil::expect_near_rel(grads[i], fd, 1e-3, "end-to-end gradient");
    ++checked;
  }
  EXPECT_GT(checked, slots.size() / 2);
}

TEST(Models, BuildersProduceExpectedStacks) {
  Model<float> mlp = lts::build_model<float>("mlp-s", {1, 28, 28}, 10, 4, true);
  auto q1 = mlp.quantized_layers();
  ASSERT_EQ(q1.size(), 2u);
  EXPECT_EQ(q1[0].first, "fc1");
  EXPECT_EQ(mlp.quantized_weight_count(), 784u * 128u + 128u * 10u);

  Model<float> cnn = lts::build_model<float>("convnet-s", {1, 28, 28}, 10, 2, true);
  auto q2 = cnn.quantized_layers();
  ASSERT_EQ(q2.size(), 3u);
  EXPECT_EQ(q2[0].first, "conv1");
  EXPECT_EQ(q2[2].first, "fc");
  EXPECT_EQ(cnn.quantized_weight_count(),
            16u * 9u + 32u * 16u * 9u + 10u * 32u * 14u * 14u);

  EXPECT_THROW(lts::build_model<float>("resnet", {1, 28, 28}, 10, 4, true),
               lts::ConfigError);
}

TEST(Models, ForwardShapes) {
  Model<float> cnn = lts::build_model<float>("convnet-s", {1, 28, 28}, 10, 4, true);
  std::mt19937 rng(51);
  init_weights(cnn, rng);
  init_weight_bounds(cnn);
  Tensor<float> x({2, 1, 28, 28});
  testutil::fill_uniform(x, rng);
  Tensor<float> y = cnn.forward(x, PassMode::Train);
  EXPECT_EQ(y.shape(), (lts::Shape{2, 10}));
}
