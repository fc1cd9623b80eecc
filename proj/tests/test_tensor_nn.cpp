#include "lodnn/autodiff.hpp"

#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "lodnn/adam.hpp"
#include "lodnn/model.hpp"
#include "test_util.hpp"

using namespace lodnn;
using namespace lodnn::nn;

namespace {

// ---------------------------------------------------------------------------
// Test-only helpers: deterministic fills, a weighted-sum loss head (so every
// output element receives a distinct gradient), a finite-difference checker,
// and a naive six-loop convolution oracle.
// ---------------------------------------------------------------------------

template <typename T>
void fill_random(Tensor<T>& t, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
}

template <typename T>
TensorPtr<T> weighted_sum(Tape<T>* tape, const TensorPtr<T>& x, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.25, 1.75);
  auto weights = std::make_shared<std::vector<double>>(x->size());
  for (auto& w : *weights) w = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < x->size(); ++i)
    acc += static_cast<double>(x->data[i]) * (*weights)[i];
  auto out = make_tensor<T>(1, 1, 1, 1);
  out->data[0] = static_cast<T>(acc);
  if (tape) {
    x->ensure_grad();
    out->ensure_grad();
    tape->record([x, out, weights]() {
      const double g = static_cast<double>(out->grad[0]);
      for (std::size_t i = 0; i < x->size(); ++i)
        x->grad[i] += static_cast<T>(g * (*weights)[i]);
    });
  }
  return out;
}

// Central finite differences against the analytic gradients of `leaves`.
// `forward` must rebuild the graph from the leaves' current data.
void check_gradients(const std::vector<TensorPtr<double>>& leaves,
                     const std::function<TensorPtr<double>(Tape<double>*)>& forward,
                     double h = 1e-5, double tol = 1e-4, int samples_per_tensor = 8) {
  Tape<double> tape;
  auto loss = forward(&tape);
  for (const auto& leaf : leaves) {
    leaf->ensure_grad();
    leaf->zero_grad();
  }
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) analytic.push_back(leaf->grad);

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = *leaves[li];
    const int samples = std::min<std::size_t>(samples_per_tensor, leaf.size());
    for (int s = 0; s < samples; ++s) {
      const std::size_t idx =
          samples == 1 ? 0 : s * (leaf.size() - 1) / static_cast<std::size_t>(samples - 1);
      const double saved = leaf.data[idx];
      leaf.data[idx] = saved + h;
      const double f_plus = forward(nullptr)->data[0];
      leaf.data[idx] = saved - h;
      const double f_minus = forward(nullptr)->data[0];
      leaf.data[idx] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[li][idx];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
      EXPECT_LE(std::abs(a - numeric) / scale, tol)
          << "leaf " << li << " index " << idx << ": analytic " << a << " vs numeric " << numeric;
    }
  }
}

// Direct six-nested-loop convolution, independent of the library kernels.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                      const ConvSpec& spec) {
  Tensor<T> out(x.n, spec.out_channels, x.h, x.w);
  const int ph = spec.pad_h(), pw = spec.pad_w();
  for (int n = 0; n < x.n; ++n)
    for (int oc = 0; oc < spec.out_channels; ++oc)
      for (int oy = 0; oy < x.h; ++oy)
        for (int ox = 0; ox < x.w; ++ox) {
          double acc = static_cast<double>(b.data[static_cast<std::size_t>(oc)]);
          for (int ic = 0; ic < spec.in_channels; ++ic)
            for (int ky = 0; ky < spec.kernel_h; ++ky)
              for (int kx = 0; kx < spec.kernel_w; ++kx) {
                const int iy = oy + spec.dilation_h * ky - ph;
                const int ix = ox + spec.dilation_w * kx - pw;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += static_cast<double>(x.at(n, ic, iy, ix)) *
                       static_cast<double>(w.at(oc, ic, ky, kx));
              }
          out.at(n, oc, oy, ox) = static_cast<T>(acc);
        }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST(Conv2d, IdentityOneByOneKernel) {
  auto x = make_tensor<float>(1, 1, 4, 4);
  fill_random(*x, 1);
  auto w = make_tensor<float>(1, 1, 1, 1);
  w->data[0] = 1.0f;
  auto b = make_tensor<float>(1, 1, 1, 1);
  ConvSpec spec{1, 1, 1, 1, 1, 1};
  auto y = conv2d<float>(nullptr, x, w, b, spec);
  for (std::size_t i = 0; i < x->size(); ++i) EXPECT_FLOAT_EQ(y->data[i], x->data[i]);
}

TEST(Conv2d, ZeroKernelGivesBiasEverywhere) {
  auto x = make_tensor<float>(1, 2, 5, 5);
  fill_random(*x, 2);
  auto w = make_tensor<float>(3, 2, 3, 3);
  auto b = make_tensor<float>(1, 3, 1, 1);
  b->data = {0.5f, -1.0f, 2.0f};
  ConvSpec spec{2, 3, 3, 3, 1, 1};
  auto y = conv2d<float>(nullptr, x, w, b, spec);
  for (int oc = 0; oc < 3; ++oc)
    for (int i = 0; i < 25; ++i)
      EXPECT_FLOAT_EQ(y->data[static_cast<std::size_t>(oc) * 25 + i], b->data[oc]);
}

TEST(Conv2d, DilatedMatchesNaiveLoopOracle) {
  auto x = make_tensor<float>(1, 1, 8, 8);
  fill_random(*x, 3);
  auto w = make_tensor<float>(1, 1, 3, 3);
  fill_random(*w, 4);
  auto b = make_tensor<float>(1, 1, 1, 1);
  b->data[0] = 0.3f;
  ConvSpec spec{1, 1, 3, 3, /*dilation_w=*/2, /*dilation_h=*/4};
  auto y = conv2d<float>(nullptr, x, w, b, spec);
  const Tensor<float> expected = conv_oracle(*x, *w, *b, spec);
  EXPECT_EQ(y->h, 8);
  EXPECT_EQ(y->w, 8);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y->data[i], expected.data[i], 1e-5);
}

TEST(Conv2d, MultiChannelBatchMatchesOracle) {
  auto x = make_tensor<float>(2, 3, 6, 5);
  fill_random(*x, 5);
  auto w = make_tensor<float>(4, 3, 3, 3);
  fill_random(*w, 6);
  auto b = make_tensor<float>(1, 4, 1, 1);
  fill_random(*b, 7);
  ConvSpec spec{3, 4, 3, 3, 1, 2};
  auto y = conv2d<float>(nullptr, x, w, b, spec);
  const Tensor<float> expected = conv_oracle(*x, *w, *b, spec);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y->data[i], expected.data[i], 1e-5);
}

TEST(Conv2d, SamePaddingPreservesSizeForAllContextPairs) {
  for (const auto& [dw, dh] : ModelConfig::context_dilations()) {
    auto x = make_tensor<float>(1, 2, 10, 12);
    fill_random(*x, 8);
    auto w = make_tensor<float>(2, 2, 3, 3);
    fill_random(*w, 9);
    auto b = make_tensor<float>(1, 2, 1, 1);
    ConvSpec spec{2, 2, 3, 3, dw, dh};
    auto y = conv2d<float>(nullptr, x, w, b, spec);
    EXPECT_EQ(y->h, x->h);
    EXPECT_EQ(y->w, x->w);
  }
}

TEST(Conv2d, ShapeMismatchReportsBothShapes) {
  auto x = make_tensor<float>(1, 2, 4, 4);
  auto w = make_tensor<float>(1, 3, 3, 3);
  auto b = make_tensor<float>(1, 1, 1, 1);
  ConvSpec spec{3, 1, 3, 3, 1, 1};
  try {
    conv2d<float>(nullptr, x, w, b, spec);
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("1x2x4x4"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
  }
}

TEST(Conv2d, GradientsPassFiniteDifferences) {
  auto x = make_tensor<double>(1, 2, 6, 6);
  fill_random(*x, 10);
  auto w = make_tensor<double>(3, 2, 3, 3);
  fill_random(*w, 11);
  auto b = make_tensor<double>(1, 3, 1, 1);
  fill_random(*b, 12);
  ConvSpec spec{2, 3, 3, 3, 2, 1};
  check_gradients({x, w, b}, [&](Tape<double>* tape) {
    return weighted_sum(tape, conv2d<double>(tape, x, w, b, spec), 100);
  });
}

// ---------------------------------------------------------------------------
// elu
// ---------------------------------------------------------------------------

TEST(Elu, ClosedFormValues) {
  auto x = make_tensor<float>(1, 1, 1, 3);
  x->data = {0.0f, 2.5f, -1.0f};
  auto y = elu<float>(nullptr, x);
  EXPECT_FLOAT_EQ(y->data[0], 0.0f);
  EXPECT_FLOAT_EQ(y->data[1], 2.5f);
  EXPECT_NEAR(y->data[2], std::exp(-1.0) - 1.0, 1e-6);
}

TEST(Elu, GradientsPassFiniteDifferences) {
  auto x = make_tensor<double>(1, 1, 4, 4);
  fill_random(*x, 13);
  check_gradients({x}, [&](Tape<double>* tape) {
    return weighted_sum(tape, elu<double>(tape, x), 101);
  });
}

// ---------------------------------------------------------------------------
// maxpool2 / maxunpool2
// ---------------------------------------------------------------------------

TEST(MaxPool2, ConstantInputTiesTowardFirstElement) {
  auto x = make_tensor<float>(1, 1, 4, 4);
  std::fill(x->data.begin(), x->data.end(), 3.5f);
  auto [y, idx] = maxpool2<float>(nullptr, x);
  EXPECT_EQ(y->h, 2);
  EXPECT_EQ(y->w, 2);
  for (float v : y->data) EXPECT_FLOAT_EQ(v, 3.5f);
  EXPECT_EQ(idx.flat[0], 0);       // window (0,0): flat index of (0,0)
  EXPECT_EQ(idx.flat[1], 2);       // window (0,1): flat index of (0,2)
  EXPECT_EQ(idx.flat[2], 8);       // window (1,0): flat index of (2,0)
  EXPECT_EQ(idx.flat[3], 10);      // window (1,1): flat index of (2,2)
}

TEST(MaxPool2, PicksWindowMaximum) {
  auto x = make_tensor<float>(1, 1, 2, 2);
  x->data = {1.0f, 2.0f, 3.0f, 4.0f};
  auto [y, idx] = maxpool2<float>(nullptr, x);
  EXPECT_FLOAT_EQ(y->data[0], 4.0f);
  EXPECT_EQ(idx.flat[0], 3);  // position (1,1)
}

TEST(MaxPool2, MatchesWindowScanOracle) {
  auto x = make_tensor<float>(1, 2, 4, 6);
  fill_random(*x, 17);
  auto [y, idx] = maxpool2<float>(nullptr, x);
  for (int c = 0; c < 2; ++c)
    for (int oy = 0; oy < 2; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        float best = -1e30f;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            best = std::max(best, x->at(0, c, 2 * oy + a, 2 * ox + b));
        EXPECT_FLOAT_EQ(y->at(0, c, oy, ox), best);
      }
}

TEST(MaxPool2, RejectsOddSpatialSize) {
  auto x = make_tensor<float>(1, 1, 3, 4);
  EXPECT_THROW(maxpool2<float>(nullptr, x), ContractViolation);
}

TEST(MaxUnpool2, ScatterStructureAndMassConservation) {
  auto x = make_tensor<float>(1, 1, 4, 4);
  fill_random(*x, 19, 0.1, 1.0);
  // make all values distinct
  for (std::size_t i = 0; i < x->size(); ++i) x->data[i] += static_cast<float>(i) * 1e-3f;
  auto [pooled, idx] = maxpool2<float>(nullptr, x);
  auto un = maxunpool2<float>(nullptr, pooled, idx);
  EXPECT_EQ(un->h, 4);
  EXPECT_EQ(un->w, 4);
  double pooled_sum = 0, unpooled_sum = 0;
  int nonzeros = 0;
  for (float v : pooled->data) pooled_sum += v;
  for (std::size_t i = 0; i < un->size(); ++i) {
    unpooled_sum += un->data[i];
    if (un->data[i] != 0.0f) {
      ++nonzeros;
      EXPECT_FLOAT_EQ(un->data[i], x->data[i]);  // value restored in place
    }
  }
  EXPECT_EQ(nonzeros, 4);
  EXPECT_NEAR(pooled_sum, unpooled_sum, 1e-6);
}

TEST(MaxUnpool2, PoolUnpoolPoolIsIdempotent) {
  // zero-fill unpooling makes this exact whenever window maxima are >= 0
  // (always true downstream of the nonnegative input stack); an all-negative
  // window would re-pool one of the fill zeros instead
  auto x = make_tensor<float>(1, 2, 6, 8);
  fill_random(*x, 23, 0.0, 1.0);
  auto [p1, idx] = maxpool2<float>(nullptr, x);
  auto un = maxunpool2<float>(nullptr, p1, idx);
  auto [p2, idx2] = maxpool2<float>(nullptr, un);
  for (std::size_t i = 0; i < p1->size(); ++i) EXPECT_EQ(p1->data[i], p2->data[i]);
}

TEST(MaxUnpool2, PoolChainGradientsPassFiniteDifferences) {
  auto x = make_tensor<double>(1, 1, 4, 4);
  fill_random(*x, 29);
  for (std::size_t i = 0; i < x->size(); ++i) x->data[i] += static_cast<double>(i) * 0.05;
  check_gradients({x}, [&](Tape<double>* tape) {
    auto [pooled, idx] = maxpool2<double>(tape, x);
    auto un = maxunpool2<double>(tape, pooled, idx);
    return weighted_sum(tape, un, 102);
  });
}

// ---------------------------------------------------------------------------
// spatial_dropout
// ---------------------------------------------------------------------------

TEST(SpatialDropout, InferenceAndZeroRateAreIdentity) {
  auto x = make_tensor<float>(2, 8, 3, 3);
  fill_random(*x, 31);
  auto y = spatial_dropout<float>(nullptr, x, 0.25, /*training=*/false, {7, 1, 0});
  for (std::size_t i = 0; i < x->size(); ++i) EXPECT_EQ(y->data[i], x->data[i]);
  auto z = spatial_dropout<float>(nullptr, x, 0.0, /*training=*/true, {7, 1, 0});
  for (std::size_t i = 0; i < x->size(); ++i) EXPECT_EQ(z->data[i], x->data[i]);
}

TEST(SpatialDropout, DropsWholeChannelsAndRescales) {
  auto x = make_tensor<float>(1, 64, 4, 4);
  std::fill(x->data.begin(), x->data.end(), 1.0f);
  auto y = spatial_dropout<float>(nullptr, x, 0.25, /*training=*/true, {3, 2, 5});
  int dropped = 0;
  for (int c = 0; c < 64; ++c) {
    const float first = y->at(0, c, 0, 0);
    for (int i = 0; i < 16; ++i)
      EXPECT_EQ(y->data[static_cast<std::size_t>(c) * 16 + i], first);  // whole channel
    if (first == 0.0f)
      ++dropped;
    else
      EXPECT_NEAR(first, 1.0f / 0.75f, 1e-6);
  }
  EXPECT_GT(dropped, 0);
}

TEST(SpatialDropout, DropFractionConcentratesAroundRate) {
  const double frac = dropout_drop_fraction(0.25, {42, 3, 11}, 10000);
  EXPECT_NEAR(frac, 0.25, 0.02);
}

TEST(SpatialDropout, DeterministicGivenKey) {
  auto x = make_tensor<float>(1, 32, 2, 2);
  fill_random(*x, 37);
  auto a = spatial_dropout<float>(nullptr, x, 0.5, true, {11, 4, 9});
  auto b = spatial_dropout<float>(nullptr, x, 0.5, true, {11, 4, 9});
  for (std::size_t i = 0; i < a->size(); ++i) EXPECT_EQ(a->data[i], b->data[i]);
  auto c = spatial_dropout<float>(nullptr, x, 0.5, true, {11, 4, 10});
  bool any_diff = false;
  for (std::size_t i = 0; i < a->size(); ++i) any_diff |= a->data[i] != c->data[i];
  EXPECT_TRUE(any_diff);
}

TEST(SpatialDropout, FixedMaskGradientsPassFiniteDifferences) {
  auto x = make_tensor<double>(1, 8, 3, 3);
  fill_random(*x, 41);
  check_gradients({x}, [&](Tape<double>* tape) {
    auto y = spatial_dropout<double>(tape, x, 0.25, true, {5, 0, 0});
    return weighted_sum(tape, y, 103);
  });
}

// ---------------------------------------------------------------------------
// softmax_channels
// ---------------------------------------------------------------------------

TEST(SoftmaxChannels, SymmetryAndOverflowStability) {
  auto x = make_tensor<float>(1, 2, 1, 2);
  x->data = {1.0f, 1000.0f, 1.0f, 1000.0f};  // channel-major: c0 = {1,1000}, c1 = {1,1000}
  auto y = softmax_channels<float>(nullptr, x);
  for (float v : y->data) EXPECT_NEAR(v, 0.5f, 1e-6);
}

TEST(SoftmaxChannels, SumsToOnePerPixel) {
  auto x = make_tensor<float>(2, 3, 5, 4);
  fill_random(*x, 43, -5.0, 5.0);
  auto y = softmax_channels<float>(nullptr, x);
  const std::size_t plane = 20;
  for (int n = 0; n < 2; ++n)
    for (std::size_t px = 0; px < plane; ++px) {
      double sum = 0;
      for (int c = 0; c < 3; ++c) sum += y->data[(static_cast<std::size_t>(n) * 3 + c) * plane + px];
      EXPECT_NEAR(sum, 1.0, 1e-6);
      for (int c = 0; c < 3; ++c) {
        const float v = y->data[(static_cast<std::size_t>(n) * 3 + c) * plane + px];
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
      }
    }
}

TEST(SoftmaxChannels, RejectsSingleChannel) {
  auto x = make_tensor<float>(1, 1, 2, 2);
  EXPECT_THROW(softmax_channels<float>(nullptr, x), ContractViolation);
}

TEST(SoftmaxChannels, GradientsPassFiniteDifferences) {
  auto x = make_tensor<double>(1, 3, 3, 3);
  fill_random(*x, 47, -2.0, 2.0);
  check_gradients({x}, [&](Tape<double>* tape) {
    return weighted_sum(tape, softmax_channels<double>(tape, x), 104);
  });
}

// ---------------------------------------------------------------------------
// cross_entropy
// ---------------------------------------------------------------------------

TEST(CrossEntropy, PerfectPredictionGivesZeroLoss) {
  auto probs = make_tensor<float>(1, 2, 2, 2);
  std::vector<std::uint8_t> labels = {1, 0, 1, 0};
  for (int px = 0; px < 4; ++px) {
    probs->data[static_cast<std::size_t>(labels[px]) * 4 + px] = 1.0f;
    probs->data[static_cast<std::size_t>(1 - labels[px]) * 4 + px] = 0.0f;
  }
  auto loss = cross_entropy<float>(nullptr, probs, labels);
  EXPECT_FLOAT_EQ(loss->data[0], 0.0f);
}

TEST(CrossEntropy, UniformTwoClassGivesLog2) {
  auto probs = make_tensor<float>(1, 2, 3, 3);
  std::fill(probs->data.begin(), probs->data.end(), 0.5f);
  std::vector<std::uint8_t> labels(9, 1);
  auto loss = cross_entropy<float>(nullptr, probs, labels);
  EXPECT_NEAR(loss->data[0], std::log(2.0), 1e-6);
}

TEST(CrossEntropy, MatchesLoopOracleWithMask) {
  auto probs = make_tensor<double>(2, 2, 3, 3);
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<std::uint8_t> labels(18);
  std::uniform_int_distribution<int> lab(0, 2);  // includes Unknown
  for (int n = 0; n < 2; ++n)
    for (int px = 0; px < 9; ++px) {
      const double p = u(rng);
      probs->data[(static_cast<std::size_t>(n) * 2 + 0) * 9 + px] = p;
      probs->data[(static_cast<std::size_t>(n) * 2 + 1) * 9 + px] = 1.0 - p;
      labels[static_cast<std::size_t>(n) * 9 + px] = static_cast<std::uint8_t>(lab(rng));
    }
  CrossEntropyStats stats;
  auto loss = cross_entropy<double>(nullptr, probs, labels, &stats);

  // independent scalar-loop reference
  double sum = 0;
  int counted = 0;
  for (int n = 0; n < 2; ++n)
    for (int px = 0; px < 9; ++px) {
      const std::uint8_t l = labels[static_cast<std::size_t>(n) * 9 + px];
      if (l == 2) continue;
      sum += -std::log(probs->data[(static_cast<std::size_t>(n) * 2 + l) * 9 + px]);
      ++counted;
    }
  EXPECT_EQ(stats.counted_pixels, counted);
  EXPECT_EQ(stats.masked_pixels, 18 - counted);
  EXPECT_NEAR(loss->data[0], sum / counted, 1e-6);
}

TEST(CrossEntropy, ClampsZeroProbabilityAndCounts) {
  auto probs = make_tensor<float>(1, 2, 1, 1);
  probs->data = {1.0f, 0.0f};
  std::vector<std::uint8_t> labels = {1};  // correct class has probability 0
  CrossEntropyStats stats;
  auto loss = cross_entropy<float>(nullptr, probs, labels, &stats);
  EXPECT_EQ(stats.clamp_events, 1);
  EXPECT_NEAR(loss->data[0], -std::log(1e-12), 1.0);
}

TEST(CrossEntropy, GradientsPassFiniteDifferences) {
  auto logits = make_tensor<double>(1, 2, 3, 3);
  fill_random(*logits, 59, -1.5, 1.5);
  std::vector<std::uint8_t> labels = {1, 0, 2, 1, 1, 0, 2, 0, 1};
  check_gradients({logits}, [&](Tape<double>* tape) {
    auto probs = softmax_channels<double>(tape, logits);
    return cross_entropy<double>(tape, probs, labels);
  });
}

// ---------------------------------------------------------------------------
// adam_step
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientsAreNoOp) {
  std::vector<Parameter<float>> params;
  auto w = make_tensor<float>(1, 1, 2, 2);
  fill_random(*w, 61);
  const auto snapshot = w->data;
  params.push_back({"w", w});
  auto state = AdamState<float>::init(params);
  zero_gradients(params);
  AdamConfig cfg;
  adam_step(params, state, cfg);
  EXPECT_EQ(w->data, snapshot);
  EXPECT_EQ(state.t, 1);
}

TEST(Adam, SingleStepMatchesHandComputation) {
  std::vector<Parameter<float>> params;
  auto w = make_tensor<float>(1, 1, 1, 1);
  w->data[0] = 1.0f;
  params.push_back({"w", w});
  auto state = AdamState<float>::init(params);
  w->ensure_grad();
  w->grad[0] = 1.0f;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(params, state, cfg);
  // by hand: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1,
  // w' = 1 - 0.1 * 1 / (sqrt(1) + 1e-8)
  const double expected = 1.0 - 0.1 * 1.0 / (std::sqrt(1.0) + 1e-8);
  EXPECT_NEAR(w->data[0], expected, 1e-7);
  EXPECT_NEAR(state.m[0].data[0], 0.1, 1e-7);
  EXPECT_NEAR(state.v[0].data[0], 0.001, 1e-9);
}

TEST(Adam, DescendsOnQuadratic) {
  std::vector<Parameter<float>> params;
  auto w = make_tensor<float>(1, 1, 1, 1);
  w->data[0] = 1.0f;
  params.push_back({"w", w});
  auto state = AdamState<float>::init(params);
  AdamConfig cfg;
  cfg.lr = 0.1;
  double prev_f = 1.0;
  for (int step = 0; step < 2; ++step) {
    w->ensure_grad();
    w->grad[0] = 2.0f * w->data[0];  // d/dw of w^2
    adam_step(params, state, cfg);
    const double f = static_cast<double>(w->data[0]) * w->data[0];
    EXPECT_LT(f, prev_f);
    prev_f = f;
  }
}

TEST(Adam, AbortsOnNonFiniteGradientNamingParameter) {
  std::vector<Parameter<float>> params;
  auto w = make_tensor<float>(1, 1, 1, 1);
  params.push_back({"conv7.weight", w});
  auto state = AdamState<float>::init(params);
  w->ensure_grad();
  w->grad[0] = std::numeric_limits<float>::infinity();
  AdamConfig cfg;
  try {
    adam_step(params, state, cfg);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("conv7.weight"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

TEST(Backward, SumGivesAllOnesGradient) {
  auto x = make_tensor<float>(1, 1, 2, 3);
  fill_random(*x, 67);
  Tape<float> tape;
  auto loss = reduce_sum<float>(&tape, x);
  tape.backward(loss);
  for (float g : x->grad) EXPECT_FLOAT_EQ(g, 1.0f);
}

TEST(Backward, CompositeConvEluLossPassesFiniteDifferences) {
  auto x = make_tensor<double>(1, 1, 1, 5);
  fill_random(*x, 71);
  auto w = make_tensor<double>(1, 1, 1, 1);
  w->data[0] = 0.8;
  auto b = make_tensor<double>(1, 1, 1, 1);
  b->data[0] = -0.1;
  ConvSpec spec{1, 1, 1, 1, 1, 1};
  check_gradients({x, w, b}, [&](Tape<double>* tape) {
    auto h = conv2d<double>(tape, x, w, b, spec);
    auto a = elu<double>(tape, h);
    return weighted_sum(tape, a, 105);
  });
}

TEST(Backward, DisconnectedParameterGetsZeroGradient) {
  auto x = make_tensor<float>(1, 1, 2, 2);
  fill_random(*x, 73);
  auto unused = make_tensor<float>(1, 1, 2, 2);
  unused->ensure_grad();
  Tape<float> tape;
  auto loss = reduce_sum<float>(&tape, x);
  tape.backward(loss);
  for (float g : unused->grad) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, SecondCallWithoutForwardIsContractViolation) {
  auto x = make_tensor<float>(1, 1, 2, 2);
  fill_random(*x, 79);
  Tape<float> tape;
  auto loss = reduce_sum<float>(&tape, x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractViolation);
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

TEST(Checkpoint, BitExactRoundTripWithAdamState) {
  testutil::TempDir dir("ckpt");
  std::vector<Parameter<float>> params;
  auto w1 = make_tensor<float>(4, 2, 3, 3);
  fill_random(*w1, 83);
  auto b1 = make_tensor<float>(1, 4, 1, 1);
  fill_random(*b1, 89);
  params.push_back({"layer1.weight", w1});
  params.push_back({"layer1.bias", b1});
  auto state = AdamState<float>::init(params);
  state.t = 17;
  fill_random(state.m[0], 97);
  fill_random(state.v[0], 101, 0.0, 1.0);

  const std::string path = dir.path("model.ldnn");
  save_checkpoint(path, params, &state, 0.0025f);
  const Checkpoint ck = load_checkpoint(path);
  ASSERT_EQ(ck.params.size(), 2u);
  EXPECT_EQ(ck.params[0].name, "layer1.weight");
  EXPECT_EQ(ck.params[0].value->data, w1->data);
  EXPECT_EQ(ck.params[1].value->data, b1->data);
  ASSERT_TRUE(ck.has_adam);
  EXPECT_EQ(ck.adam.t, 17);
  EXPECT_EQ(ck.adam.m[0].data, state.m[0].data);
  EXPECT_EQ(ck.adam.v[0].data, state.v[0].data);
  EXPECT_EQ(ck.lr, 0.0025f);

  // byte-for-byte stability of a rewrite
  const std::string path2 = dir.path("model2.ldnn");
  save_checkpoint(path2, ck.params, &ck.adam, ck.lr);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(s1, s2);
}

TEST(Checkpoint, RejectsBadMagic) {
  testutil::TempDir dir("ckpt");
  std::ofstream os(dir.path("bad.ldnn"), std::ios::binary);
  os << "NOPE00000000";
  os.close();
  EXPECT_THROW(load_checkpoint(dir.path("bad.ldnn")), FormatError);
}

}  // namespace
