#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "atpnet/errors.hpp"
#include "atpnet/ops.hpp"
#include "atpnet/optim.hpp"
#include "atpnet/tensor.hpp"
#include "gradcheck.hpp"

namespace atp {
namespace {

using testing::gradcheck;
using testing::random_tensor;

constexpr double kGradTolerance = 1e-3;

// Direct loop oracle for a single-group, dilated, strided, padded convolution.
std::vector<double> conv_oracle(const Tensor<double>& in, const Tensor<double>& w, const Conv2dOptions& o) {
  const Shape& s = in.shape();
  const Shape& k = w.shape();
  const std::int64_t cpg = s.c() / o.groups;
  const std::int64_t opg = k.n() / o.groups;
  const std::int64_t oh = conv_output_extent(s.h(), k.h(), o.stride[0], o.padding[0], o.dilation[0]);
  const std::int64_t ow = conv_output_extent(s.w(), k.w(), o.stride[1], o.padding[1], o.dilation[1]);
  std::vector<double> out(static_cast<std::size_t>(s.n() * k.n() * oh * ow), 0.0);
  for (std::int64_t n = 0; n < s.n(); ++n)
    for (std::int64_t oc = 0; oc < k.n(); ++oc)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
          double acc = 0;
          const std::int64_t g = oc / opg;
          for (std::int64_t c = 0; c < cpg; ++c)
            for (std::int64_t ky = 0; ky < k.h(); ++ky)
              for (std::int64_t kx = 0; kx < k.w(); ++kx) {
                const std::int64_t iy = y * o.stride[0] - o.padding[0] + ky * o.dilation[0];
                const std::int64_t ix = x * o.stride[1] - o.padding[1] + kx * o.dilation[1];
                if (iy < 0 || ix < 0 || iy >= s.h() || ix >= s.w()) continue;
                acc += w.at(oc, c, ky, kx) * in.at(n, g * cpg + c, iy, ix);
              }
          out[static_cast<std::size_t>(((n * k.n() + oc) * oh + y) * ow + x)] = acc;
        }
  return out;
}

TEST(Shape, NumelIsProductOfExtents) {
  Shape s{2, 3, 4, 5};
  EXPECT_EQ(s.numel(), 120);
  Tensor<float> t(s);
  EXPECT_EQ(t.data().size(), 120u);
}

TEST(Tensor, RejectsMismatchedValueCount) {
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Conv2d, DilatedOneDimensionalSliceConvention) {
  // Taps at offsets 0 and r from the anchor: the output anchored at index 2
  // covers x[2] + x[4].
  Tensor<double> x(Shape{1, 1, 1, 5}, {1, 2, 3, 4, 5});
  Tensor<double> w(Shape{1, 1, 1, 2}, {1, 1});
  Conv2dOptions options;
  options.dilation = {1, 2};
  const Tensor<double> y = conv2d<double>(x, w, std::nullopt, options);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 3}));
  EXPECT_DOUBLE_EQ(y.data()[0], 1 + 3);
  EXPECT_DOUBLE_EQ(y.data()[2], 8);
  double oracle = 0;
  for (int k = 0; k < 2; ++k) oracle += w.data()[static_cast<std::size_t>(k)] * x.data()[static_cast<std::size_t>(2 + k * 2)];
  EXPECT_DOUBLE_EQ(y.data()[2], oracle);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(1);
  const Tensor<double> x = random_tensor(Shape{2, 1, 5, 6}, rng);
  const Tensor<double> y = conv2d<double>(x, Tensor<double>::full(Shape{1, 1, 1, 1}, 1.0), std::nullopt);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Conv2d, ZeroWeightGivesBias) {
  std::mt19937_64 rng(2);
  const Tensor<double> x = random_tensor(Shape{1, 2, 4, 4}, rng);
  const Tensor<double> w(Shape{3, 2, 3, 3});
  const Tensor<double> b(Shape{1, 3, 1, 1}, {0.5, -1.0, 2.0});
  Conv2dOptions options;
  options.padding = {1, 1};
  const Tensor<double> y = conv2d<double>(x, w, b, options);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < 16; ++i) EXPECT_EQ(y.data()[static_cast<std::size_t>(c * 16 + i)], b.data()[static_cast<std::size_t>(c)]);
}

struct ConvCase {
  Shape input;
  Shape weight;
  Conv2dOptions options;
};

TEST(Conv2d, MatchesLoopOracleAcrossConfigurations) {
  std::vector<ConvCase> cases;
  cases.push_back({{2, 3, 7, 6}, {4, 3, 3, 3}, {}});
  Conv2dOptions strided;
  strided.stride = {2, 3};
  strided.padding = {1, 2};
  cases.push_back({{1, 2, 9, 10}, {3, 2, 3, 2}, strided});
  Conv2dOptions dilated;
  dilated.dilation = {2, 3};
  dilated.padding = {2, 3};
  cases.push_back({{1, 2, 8, 8}, {2, 2, 3, 3}, dilated});
  Conv2dOptions grouped;
  grouped.groups = 2;
  grouped.padding = {1, 1};
  cases.push_back({{2, 4, 5, 5}, {6, 2, 3, 3}, grouped});
  Conv2dOptions depthwise;
  depthwise.groups = 3;
  depthwise.padding = {2, 2};
  depthwise.dilation = {2, 2};
  cases.push_back({{1, 3, 6, 7}, {3, 1, 3, 3}, depthwise});
  Conv2dOptions pointwise;
  cases.push_back({{2, 5, 4, 3}, {2, 5, 1, 1}, pointwise});
  std::mt19937_64 rng(3);
  for (const ConvCase& c : cases) {
    const Tensor<double> x = random_tensor(c.input, rng);
    const Tensor<double> w = random_tensor(c.weight, rng);
    const Tensor<double> y = conv2d<double>(x, w, std::nullopt, c.options);
    const std::vector<double> expected = conv_oracle(x, w, c.options);
    ASSERT_EQ(y.data().size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.data()[i], expected[i], 1e-12);
  }
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  Tensor<float> x(Shape{1, 3, 4, 4});
  Tensor<float> w(Shape{2, 2, 3, 3});
  try {
    conv2d<float>(x, w, std::nullopt);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
  Conv2dOptions bad_groups;
  bad_groups.groups = 2;
  EXPECT_THROW(conv2d<float>(x, Tensor<float>(Shape{2, 1, 1, 1}), std::nullopt, bad_groups), ShapeError);
  EXPECT_THROW(conv2d<float>(Tensor<float>(Shape{1, 1, 2, 2}), Tensor<float>(Shape{1, 1, 3, 3}), std::nullopt),
               ShapeError);
}

TEST(DepthwiseSeparable, IdentityWeightsPassThrough) {
  std::mt19937_64 rng(4);
  const Tensor<double> x = random_tensor(Shape{1, 3, 5, 5}, rng);
  std::vector<double> depth(27, 0.0);
  for (int c = 0; c < 3; ++c) depth[static_cast<std::size_t>(c * 9 + 4)] = 1.0;
  std::vector<double> point(9, 0.0);
  for (int c = 0; c < 3; ++c) point[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  const Tensor<double> y = depthwise_separable_conv<double>(x, Tensor<double>(Shape{3, 1, 3, 3}, depth),
                                                            Tensor<double>(Shape{3, 3, 1, 1}, point), std::nullopt, 1);
  for (std::size_t i = 0; i < x.data().size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(DepthwiseSeparable, EqualsComposedConvolutions) {
  std::mt19937_64 rng(5);
  const Tensor<double> x = random_tensor(Shape{2, 3, 6, 6}, rng);
  const Tensor<double> dw = random_tensor(Shape{3, 1, 3, 3}, rng);
  const Tensor<double> pw = random_tensor(Shape{4, 3, 1, 1}, rng);
  const Tensor<double> b = random_tensor(Shape{1, 4, 1, 1}, rng);
  Conv2dOptions depth;
  depth.groups = 3;
  depth.padding = {2, 2};
  depth.dilation = {2, 2};
  const Tensor<double> expected = conv2d<double>(conv2d<double>(x, dw, std::nullopt, depth), pw, b);
  const Tensor<double> y = depthwise_separable_conv<double>(x, dw, pw, b, 2, 2);
  ASSERT_EQ(y.shape(), expected.shape());
  for (std::size_t i = 0; i < y.data().size(); ++i) EXPECT_NEAR(y.data()[i], expected.data()[i], 1e-12);
}

TEST(DepthwiseSeparable, ZeroDepthKernelsGiveBias) {
  std::mt19937_64 rng(6);
  const Tensor<double> x = random_tensor(Shape{1, 2, 4, 4}, rng);
  const Tensor<double> b(Shape{1, 3, 1, 1}, {1.0, 2.0, 3.0});
  const Tensor<double> y = depthwise_separable_conv<double>(x, Tensor<double>(Shape{2, 1, 3, 3}),
                                                            random_tensor(Shape{3, 2, 1, 1}, rng), b, 1);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y.data()[static_cast<std::size_t>(c * 16 + i)], c + 1.0);
}

TEST(PixelShuffle, ShapeAndIndexPermutation) {
  const Tensor<float> x(Shape{1, 1024, 3, 3});
  EXPECT_EQ(pixel_shuffle<float>(x, 32).shape(), (Shape{1, 1, 96, 96}));

  std::mt19937_64 rng(7);
  const Tensor<double> small = random_tensor(Shape{2, 8, 3, 2}, rng);
  const Tensor<double> out = pixel_shuffle<double>(small, 2);
  ASSERT_EQ(out.shape(), (Shape{2, 2, 6, 4}));
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t y = 0; y < 3; ++y)
        for (std::int64_t x = 0; x < 2; ++x)
          for (std::int64_t i = 0; i < 2; ++i)
            for (std::int64_t j = 0; j < 2; ++j)
              EXPECT_EQ(out.at(n, c, y * 2 + i, x * 2 + j), small.at(n, c * 4 + i * 2 + j, y, x));
}

TEST(PixelShuffle, UnitScaleIsIdentityAndInverseRestores) {
  std::mt19937_64 rng(8);
  const Tensor<double> x = random_tensor(Shape{1, 9, 4, 5}, rng);
  const Tensor<double> same = pixel_shuffle<double>(x, 1);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), same.data().begin()));
  const Tensor<double> back = pixel_unshuffle<double>(pixel_shuffle<double>(x, 3), 3);
  ASSERT_EQ(back.shape(), x.shape());
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), back.data().begin()));
  std::vector<double> a(x.data().begin(), x.data().end());
  const Tensor<double> shuffled = pixel_shuffle<double>(x, 3);
  std::vector<double> b(shuffled.data().begin(), shuffled.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(PixelShuffle, RejectsIndivisibleChannels) {
  EXPECT_THROW(pixel_shuffle<float>(Tensor<float>(Shape{1, 5, 2, 2}), 2), ShapeError);
}

TEST(LeakyRelu, ValuesAndGradient) {
  Tensor<double> x(Shape{1, 1, 1, 3}, {2.0, -1.0, -3.0}, true);
  const Tensor<double> y = leaky_relu<double>(x, 0.2);
  EXPECT_DOUBLE_EQ(y.data()[0], 2.0);
  EXPECT_DOUBLE_EQ(y.data()[1], -0.2);
  backward(sum<double>(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.2);
}

TEST(Concat, ShapesAndLeadingChannels) {
  const Tensor<float> a = Tensor<float>::full(Shape{1, 3, 8, 8}, 1.0f);
  const Tensor<float> b = Tensor<float>::full(Shape{1, 5, 8, 8}, 2.0f);
  const Tensor<float> c = concat_channels<float>(a, b);
  ASSERT_EQ(c.shape(), (Shape{1, 8, 8, 8}));
  EXPECT_EQ(c.at(0, 2, 7, 7), 1.0f);
  EXPECT_EQ(c.at(0, 3, 0, 0), 2.0f);
  const Tensor<float> empty(Shape{1, 0, 8, 8});
  const Tensor<float> same = concat_channels<float>(a, empty);
  EXPECT_EQ(same.shape(), a.shape());
  EXPECT_THROW(concat_channels<float>(a, Tensor<float>(Shape{1, 1, 4, 8})), ShapeError);
}

TEST(Concat, GradientSplitsByChannelRange) {
  std::mt19937_64 rng(9);
  Tensor<double> a = random_tensor(Shape{1, 2, 3, 3}, rng);
  Tensor<double> b = random_tensor(Shape{1, 3, 3, 3}, rng);
  const Tensor<double> target = random_tensor(Shape{1, 5, 3, 3}, rng);
  const auto result = gradcheck([&] { return mse_loss<double>(concat_channels<double>(a, b), target); }, {a, b});
  EXPECT_LE(result.worst_relative_error, kGradTolerance);
}

TEST(MseLoss, ValuesAndOracle) {
  const Tensor<float> p = Tensor<float>::full(Shape{1, 2, 3, 3}, 5.0f);
  EXPECT_EQ(mse_loss<float>(p, p).item(), 0.0f);
  EXPECT_FLOAT_EQ(mse_loss<float>(p, Tensor<float>::full(Shape{1, 2, 3, 3}, 3.0f)).item(), 4.0f);
  std::mt19937_64 rng(10);
  const Tensor<double> a = random_tensor(Shape{2, 3, 4, 4}, rng);
  const Tensor<double> b = random_tensor(Shape{2, 3, 4, 4}, rng);
  double oracle = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) oracle += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  EXPECT_NEAR(mse_loss<double>(a, b).item(), oracle / 96.0, 1e-14);
  EXPECT_THROW(mse_loss<double>(a, Tensor<double>(Shape{1, 3, 4, 4})), ShapeError);
}

TEST(Backward, SumOfProductGivesInput) {
  Tensor<double> w(Shape{1, 1, 1, 3}, {0.5, -0.25, 2.0}, true);
  // A 1x3 kernel over a 1x3 input is a single dot product.
  const Tensor<double> row(Shape{1, 1, 1, 3}, {3.0, -1.0, 4.0});
  backward(sum<double>(conv2d<double>(row, w, std::nullopt)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], -1.0);
  EXPECT_DOUBLE_EQ(w.grad()[2], 4.0);
}

TEST(Backward, SecondCallRaises) {
  Tensor<double> w = Tensor<double>::scalar(2.0, true);
  const Tensor<double> loss = sum<double>(scale<double>(w, 3.0));
  backward(loss);
  EXPECT_THROW(backward(loss), GraphError);
}

TEST(Backward, ConstantLossLeavesZeroGradients) {
  Tensor<double> w(Shape{1, 1, 2, 2}, {1, 2, 3, 4}, true);
  backward(sum<double>(scale<double>(w, 0.0)));
  for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, UnreachableLeavesUntouched) {
  Tensor<double> used = Tensor<double>::scalar(1.0, true);
  Tensor<double> unused = Tensor<double>::scalar(1.0, true);
  backward(sum<double>(used));
  EXPECT_TRUE(used.has_grad());
  EXPECT_FALSE(unused.has_grad());
}

TEST(Backward, NoGradModeRecordsNothing) {
  Tensor<double> w = Tensor<double>::scalar(1.0, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = scale<double>(w, 2.0);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Tensor<double> x = random_tensor(Shape{2, 4, 6, 6}, rng);
  Conv2dOptions o;
  o.groups = 2;
  o.stride = {2, 1};
  o.padding = {2, 2};
  o.dilation = {2, 2};
  Tensor<double> w2 = random_tensor(Shape{4, 2, 3, 3}, rng);
  Tensor<double> b2 = random_tensor(Shape{1, 4, 1, 1}, rng);
  const Tensor<double> conv_target = random_tensor(Shape{2, 4, 3, 6}, rng);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(conv2d<double>(x, w2, b2, o), conv_target); }, {x, w2, b2})
                .worst_relative_error,
            kGradTolerance);

  Tensor<double> dw = random_tensor(Shape{4, 1, 3, 3}, rng);
  Tensor<double> pw = random_tensor(Shape{3, 4, 1, 1}, rng);
  Tensor<double> pb = random_tensor(Shape{1, 3, 1, 1}, rng);
  const Tensor<double> ds_target = random_tensor(Shape{2, 3, 6, 6}, rng);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(depthwise_separable_conv<double>(x, dw, pw, pb, 2, 2), ds_target); },
                      {x, dw, pw, pb})
                .worst_relative_error,
            kGradTolerance);

  const Tensor<double> shuffle_target = random_tensor(Shape{2, 1, 12, 12}, rng);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(pixel_shuffle<double>(x, 2), shuffle_target); }, {x})
                .worst_relative_error,
            kGradTolerance);
  const Tensor<double> unshuffle_target = random_tensor(Shape{2, 16, 3, 3}, rng);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(pixel_unshuffle<double>(x, 2), unshuffle_target); }, {x})
                .worst_relative_error,
            kGradTolerance);

  const Tensor<double> relu_target = random_tensor(Shape{2, 4, 6, 6}, rng);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(leaky_relu<double>(x, 0.2), relu_target); }, {x})
                .worst_relative_error,
            kGradTolerance);

  Tensor<double> y = random_tensor(Shape{2, 4, 6, 6}, rng);
  Tensor<double> factor = Tensor<double>::scalar(0.7);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(add<double>(x, scale_by<double>(y, factor)), relu_target); },
                      {x, y, factor})
                .worst_relative_error,
            kGradTolerance);
  EXPECT_LE(gradcheck([&] { return sum<double>(scale<double>(x, -1.5)); }, {x}).worst_relative_error, kGradTolerance);

  Tensor<double> q = random_tensor(Shape{2, 2, 3, 3}, rng);
  Tensor<double> k = random_tensor(Shape{2, 2, 3, 3}, rng);
  Tensor<double> v = random_tensor(Shape{2, 5, 3, 3}, rng);
  const Tensor<double> attn_target = random_tensor(Shape{2, 5, 3, 3}, rng);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(spatial_attention<double>(q, k, v), attn_target); }, {q, k, v})
                .worst_relative_error,
            kGradTolerance);

  Tensor<double> p = random_tensor(Shape{1, 2, 3, 3}, rng);
  const Tensor<double> t = random_tensor(Shape{1, 2, 3, 3}, rng);
  EXPECT_LE(gradcheck([&] { return mse_loss<double>(p, t); }, {p}).worst_relative_error, kGradTolerance);
}

TEST(Attention, AffinityRowsSumToOne) {
  std::mt19937_64 rng(12);
  const Tensor<double> q = random_tensor(Shape{2, 3, 2, 3}, rng);
  const Tensor<double> k = random_tensor(Shape{2, 3, 2, 3}, rng);
  const Tensor<double> a = attention_affinity<double>(q, k);
  ASSERT_EQ(a.shape(), (Shape{2, 1, 6, 6}));
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < 6; ++i) {
      std::vector<double> logits(6);
      double peak = -1e300;
      for (std::int64_t j = 0; j < 6; ++j) {
        double dot = 0;
        for (std::int64_t c = 0; c < 3; ++c) dot += q.at(n, c, i / 3, i % 3) * k.at(n, c, j / 3, j % 3);
        logits[static_cast<std::size_t>(j)] = dot;
        peak = std::max(peak, dot);
      }
      double z = 0;
      for (double l : logits) z += std::exp(l - peak);
      double row = 0;
      for (std::int64_t j = 0; j < 6; ++j) {
        EXPECT_NEAR(a.at(n, 0, i, j), std::exp(logits[static_cast<std::size_t>(j)] - peak) / z, 1e-12);
        row += a.at(n, 0, i, j);
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
}

TEST(Adam, SingleStepMovesByLearningRate) {
  Parameter<double> p("p", Tensor<double>::scalar(0.5));
  p.value.mutable_grad()[0] = 1.0;
  AdamOptions options;
  options.lr = 1e-4;
  Parameter<double>* params[] = {&p};
  adam_step<double>(params, options);
  EXPECT_NEAR(0.5 - p.value.item(), 1e-4, 1e-9);
  EXPECT_EQ(p.step, 1u);
}

TEST(Adam, ZeroGradientLeavesValue) {
  Parameter<double> p("p", Tensor<double>(Shape{1, 1, 1, 2}, {0.5, -0.5}));
  p.value.mutable_grad();
  Parameter<double>* params[] = {&p};
  adam_step<double>(params, AdamOptions{});
  EXPECT_EQ(p.value.data()[0], 0.5);
  EXPECT_EQ(p.value.data()[1], -0.5);
}

TEST(Adam, MissingGradientNamesParameter) {
  Parameter<double> p("deep.tail.weight", Shape{1, 1, 1, 1});
  Parameter<double>* params[] = {&p};
  try {
    adam_step<double>(params, AdamOptions{});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("deep.tail.weight"), std::string::npos);
  }
}

TEST(Adam, IdenticalRunsAreIdentical) {
  const auto run = [] {
    std::mt19937_64 rng(13);
    Parameter<float> p("p", Shape{1, 2, 3, 3});
    init_uniform_fan_in(p, 18, rng);
    for (int step = 0; step < 5; ++step) {
      auto g = p.value.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(uniform(rng, -1, 1));
      Parameter<float>* params[] = {&p};
      adam_step<float>(params, AdamOptions{});
    }
    return std::vector<float>(p.value.data().begin(), p.value.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Ops, ForwardIsPure) {
  std::mt19937_64 rng(14);
  const Tensor<float> x = random_tensor(Shape{1, 2, 8, 8}, rng).cast<float>();
  const Tensor<float> w = random_tensor(Shape{3, 2, 3, 3}, rng).cast<float>();
  Conv2dOptions o;
  o.padding = {1, 1};
  const Tensor<float> a = conv2d<float>(x, w, std::nullopt, o);
  const Tensor<float> b = conv2d<float>(x, w, std::nullopt, o);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

}  // namespace
}  // namespace atp
