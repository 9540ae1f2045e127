#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "hrank/error.hpp"
#include "hrank/graph.hpp"
#include "hrank/tensor.hpp"
#include "oracles.hpp"

using namespace hrank;
namespace k = hrank::kernels;

TEST(Tensor4, ShapeAndIndexing) {
  Tensor4 t({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t.data().back(), 7.0);
  EXPECT_EQ(t.plane(1, 2).size(), 20u);
  EXPECT_EQ(t.plane(1, 2).back(), 7.0);
  EXPECT_THROW(Tensor4({1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(FilterTensor, RejectsEmptyAndMismatchedBanks) {
  EXPECT_THROW(FilterTensor(0, 1, 3, false), ShapeError);
  EXPECT_THROW(FilterTensor(1, 1, 3, std::vector<double>(8), {}), ShapeError);
  EXPECT_THROW(FilterTensor(2, 1, 1, std::vector<double>(2), std::vector<double>(3)), ShapeError);
}

TEST(Conv2d, ScalarFilterDoublesInput) {
  const Tensor4 x({1, 1, 3, 3}, 1.0);
  const FilterTensor f(1, 1, 1, {2.0}, {});
  const Tensor4 y = k::conv2d_forward(x, f, {1, 0});
  EXPECT_EQ(y.shape(), (Shape4{1, 1, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, FullWindowIsDotProduct) {
  const std::vector<double> v{1, -2, 3, 0.5, 4, -1, 2, 2, 0};
  const Tensor4 x({1, 1, 3, 3}, v);
  const FilterTensor f(1, 1, 3, v, {});
  const Tensor4 y = k::conv2d_forward(x, f, {1, 0});
  double ss = 0.0;
  for (double e : v) ss += e * e;
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y.data()[0], ss);
}

TEST(Conv2d, MatchesNaiveLoopOnFixedCase) {
  std::mt19937_64 rng(11);
  const Tensor4 x = oracle::random_tensor({2, 3, 8, 8}, rng);
  FilterTensor f(4, 3, 3, true);
  for (auto& w : f.weights()) w = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (auto& b : f.bias()) b = std::uniform_real_distribution<double>(-1, 1)(rng);
  const Tensor4 fast = k::conv2d_forward(x, f, {1, 1});
  const Tensor4 ref = oracle::naive_conv(x, f, 1, 1);
  ASSERT_EQ(fast.shape(), ref.shape());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fast.data()[i], ref.data()[i], 1e-12);
}

TEST(Conv2d, MatchesNaiveLoopOnRandomShapes) {
  std::mt19937_64 rng(12);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t kk = pick(1, 5);
    const std::size_t stride = pick(1, 3);
    const std::size_t pad = pick(0, kk);
    const Shape4 s{pick(1, 3), pick(1, 4), pick(kk, 10), pick(kk, 10)};
    FilterTensor f(pick(1, 5), s.c, kk, pick(0, 1) == 1);
    for (auto& w : f.weights()) w = std::uniform_real_distribution<double>(-1, 1)(rng);
    for (auto& b : f.bias()) b = std::uniform_real_distribution<double>(-1, 1)(rng);
    const Tensor4 x = oracle::random_tensor(s, rng);
    const Tensor4 a = k::conv2d_forward(x, f, {stride, pad});
    const Tensor4 b = oracle::naive_conv(x, f, stride, pad);
    ASSERT_EQ(a.shape(), b.shape()) << "case " << t;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Conv2d, ShapeErrorsNameBothShapes) {
  const Tensor4 x({1, 2, 4, 4});
  const FilterTensor f(1, 3, 3, false);
  try {
    k::conv2d_forward(x, f, {1, 0});
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
  }
  EXPECT_THROW(k::conv2d_forward(Tensor4({1, 1, 2, 2}), FilterTensor(1, 1, 3, false), {1, 0}), ShapeError);
}

TEST(Conv2d, IsPure) {
  std::mt19937_64 rng(3);
  const Tensor4 x = oracle::random_tensor({2, 3, 9, 9}, rng);
  FilterTensor f(5, 3, 3, true);
  for (auto& w : f.weights()) w = std::uniform_real_distribution<double>(-1, 1)(rng);
  EXPECT_EQ(k::conv2d_forward(x, f, {2, 1}), k::conv2d_forward(x, f, {2, 1}));
}

TEST(Kernels, Relu) {
  const Tensor4 x({1, 1, 1, 3}, {-1.0, 0.0, 2.0});
  EXPECT_EQ(k::relu_forward(x).vec(), (std::vector<double>{0.0, 0.0, 2.0}));
  const Tensor4 g = k::relu_backward(x, Tensor4({1, 1, 1, 3}, 1.0));
  EXPECT_EQ(g.vec()[0], 0.0);
  EXPECT_EQ(g.vec()[2], 1.0);
}

TEST(Kernels, MaxPool2x2) {
  const Tensor4 x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor4 y = k::maxpool2x2_forward(x);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y.data()[0], 4.0);
}

TEST(Kernels, ConcatKeepsSourceBlocksInOrder) {
  std::mt19937_64 rng(5);
  const Tensor4 a = oracle::random_tensor({2, 3, 4, 4}, rng);
  const Tensor4 b = oracle::random_tensor({2, 5, 4, 4}, rng);
  const std::vector<Tensor4> parts{a, b};
  const Tensor4 y = k::concat_channels(parts);
  EXPECT_EQ(y.shape(), (Shape4{2, 8, 4, 4}));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(n, c, 1, 2), a.at(n, c, 1, 2));
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(y.at(n, 3 + c, 3, 0), b.at(n, c, 3, 0));
  }
  EXPECT_THROW(k::concat_channels(std::vector<Tensor4>{a, Tensor4({2, 1, 3, 4})}), ShapeError);
}

TEST(Kernels, AddRequiresIdenticalShapes) {
  EXPECT_THROW(k::add_forward(Tensor4({1, 2, 3, 3}), Tensor4({1, 3, 3, 3})), ShapeError);
}

TEST(Kernels, BatchNormInferenceMode) {
  BatchNormParams bn{{2.0}, {1.0}, {0.5}, {4.0}, 0.0};
  const Tensor4 y = k::batchnorm_forward(Tensor4({1, 1, 1, 2}, {0.5, 2.5}), bn);
  EXPECT_DOUBLE_EQ(y.vec()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.vec()[1], 3.0);
}

TEST(Kernels, GlobalAveragePool) {
  const Tensor4 y = k::avgpool_global_forward(Tensor4({1, 2, 2, 2}, {1, 2, 3, 4, 0, 0, 0, 8}));
  EXPECT_EQ(y.shape(), (Shape4{1, 2, 1, 1}));
  EXPECT_DOUBLE_EQ(y.vec()[0], 2.5);
  EXPECT_DOUBLE_EQ(y.vec()[1], 2.0);
}

TEST(Kernels, DenseFlattensEachImage) {
  DenseParams d{4, 2, {1, 0, 0, 0, 0, 1, 1, 1}, {0.5, -0.5}};
  const Tensor4 y = k::dense_forward(Tensor4({1, 1, 2, 2}, {1, 2, 3, 4}), d);
  EXPECT_EQ(y.shape(), (Shape4{1, 2, 1, 1}));
  EXPECT_DOUBLE_EQ(y.vec()[0], 1.5);
  EXPECT_DOUBLE_EQ(y.vec()[1], 8.5);
}

TEST(Kernels, DownsamplePadsChannelsSymmetrically) {
  std::mt19937_64 rng(9);
  const Tensor4 x = oracle::random_tensor({1, 2, 4, 4}, rng);
  const Tensor4 y = k::downsample_forward(x, 2, 1);
  EXPECT_EQ(y.shape(), (Shape4{1, 4, 2, 2}));
  EXPECT_EQ(y.at(0, 0, 1, 1), 0.0);
  EXPECT_EQ(y.at(0, 3, 0, 0), 0.0);
  EXPECT_EQ(y.at(0, 1, 1, 0), x.at(0, 0, 2, 0));
}

TEST(Kernels, AddBackwardReachesBothBranchesUnchanged) {
  // input -> relu -> add(input, relu): d/dx = 1 + relu'(x)
  NetworkGraph net({1, 2, 2}, 4);
  const int x = net.add_input();
  const int r = net.add_relu("r", x);
  net.add_output(net.add_add("sum", x, r));
  const Tensor4 in({1, 1, 2, 2}, {-1.0, 2.0, 3.0, -4.0});
  const auto tape = forward_train(net, in);
  const Tensor4 up({1, 4, 1, 1}, {1.0, 10.0, 100.0, 1000.0});
  const auto g = backward(net, tape, up);
  EXPECT_EQ(g.input.vec(), (std::vector<double>{1.0, 20.0, 200.0, 1000.0}));
}

TEST(Kernels, BackwardWithoutForwardIsStateError) {
  NetworkGraph net({1, 1, 1}, 1);
  net.add_output(net.add_input());
  EXPECT_THROW(backward(net, ForwardTape{}, Tensor4({1, 1, 1, 1})), StateError);
}

TEST(Gradients, ConvParameterGradientOnSmallInput) {
  std::mt19937_64 rng(21);
  const Tensor4 x = oracle::random_tensor({1, 1, 4, 4}, rng);
  FilterTensor f(2, 1, 3, true);
  for (auto& w : f.weights()) w = std::uniform_real_distribution<double>(-1, 1)(rng);
  const Tensor4 r = oracle::random_tensor({1, 2, 4, 4}, rng);
  const auto g = k::conv2d_backward(x, f, {1, 1}, r);
  const auto num = oracle::numeric_gradient(
      [&](const std::vector<double>& v) {
        FilterTensor ff(2, 1, 3, v, std::vector<double>(f.bias().begin(), f.bias().end()));
        const Tensor4 y = k::conv2d_forward(x, ff, {1, 1});
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
        return s;
      },
      std::vector<double>(f.weights().begin(), f.weights().end()), 1e-5);
  EXPECT_LT(oracle::relative_error(g.weights, num), 1e-5);
}

TEST(Gradients, AllKernelsMatchFiniteDifferences) {
  const auto checks = oracle::run_gradient_checks(10, 77);
  ASSERT_FALSE(checks.empty());
  for (const auto& c : checks) EXPECT_LT(c.worst, 1e-4) << c.name;
}
