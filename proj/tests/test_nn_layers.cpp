#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "vncseg/loss.hpp"
#include "vncseg/nn/layers.hpp"
#include "vncseg/rng.hpp"
#include "vncseg/threadpool.hpp"

using namespace vncseg;

namespace {

template <typename T>
Tensor<T> random_tensor(std::initializer_list<int> shape, std::uint64_t seed,
                        double scale = 1.0) {
  Tensor<T> t(shape);
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

template <typename T>
double max_rel_err(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, testutil::rel_err(static_cast<double>(a.data[i]),
                                              static_cast<double>(b.data[i])));
  return worst;
}

// Scalar objective sum(out * c) with a fixed random weighting c, so every
// output element contributes to the gradient.
struct WeightedSum {
  Tensor<double> c;
  explicit WeightedSum(const Tensor<double>& like, std::uint64_t seed) {
    c = Tensor<double>();
    c.rank = like.rank;
    c.shape = like.shape;
    c.data.resize(like.data.size());
    Rng rng(seed);
    for (auto& v : c.data) v = rng.uniform() * 2.0 - 1.0;
  }
  double operator()(const Tensor<double>& out) const {
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      s += out.data[i] * c.data[i];
    return s;
  }
};

// Indices spread across a buffer, always including both ends.
std::vector<std::size_t> probe_indices(std::size_t n, std::size_t want,
                                       std::uint64_t seed) {
  std::vector<std::size_t> idx;
  if (n == 0) return idx;
  idx.push_back(0);
  if (n > 1) idx.push_back(n - 1);
  Rng rng(seed);
  while (idx.size() < std::min(want, n)) idx.push_back(rng.below(n));
  return idx;
}

}  // namespace

TEST_CASE("conv forward matches a plain reference on small planes") {
  struct Shape {
    int B, C, H, W, OC, K, stride, pad;
  };
  // All routed through the patch-matrix path.
  const Shape shapes[] = {
      {2, 5, 32, 32, 8, 7, 1, 3},  {2, 8, 32, 32, 16, 3, 2, 1},
      {1, 64, 8, 8, 64, 3, 1, 1},  {2, 8, 16, 16, 8, 1, 1, 0},
      {1, 4, 20, 20, 6, 7, 1, 0},  {3, 3, 10, 14, 5, 3, 2, 1},
  };
  std::uint64_t seed = 100;
  for (const auto& s : shapes) {
    CAPTURE(s.C);
    CAPTURE(s.H);
    CAPTURE(s.K);
    CAPTURE(s.stride);
    Conv2d<float> conv(s.C, s.OC, s.K, s.stride, s.pad);
    conv.weight = random_tensor<float>({s.OC, s.C, s.K, s.K}, seed++, 0.2);
    conv.bias = random_tensor<float>({s.OC}, seed++, 0.5);
    Tensor<float> x = random_tensor<float>({s.B, s.C, s.H, s.W}, seed++);
    REQUIRE(conv.use_cols(s.B, conv.out_dim(s.H), conv.out_dim(s.W)));
    Tensor<float> got = conv.forward(x, false);
    Tensor<float> ref = testutil::naive_conv2d(x, conv.weight, conv.bias, s.stride, s.pad);
    CHECK(max_rel_err(got, ref) < 1e-4);
  }
}

TEST_CASE("conv forward matches the reference on planes too large to lower") {
  struct Shape {
    int B, C, H, W, OC, K, stride, pad;
  };
  const Shape shapes[] = {
      {2, 16, 96, 96, 8, 3, 1, 1},
      {1, 32, 128, 128, 16, 3, 2, 1},
  };
  std::uint64_t seed = 200;
  for (const auto& s : shapes) {
    CAPTURE(s.C);
    CAPTURE(s.stride);
    Conv2d<float> conv(s.C, s.OC, s.K, s.stride, s.pad);
    conv.weight = random_tensor<float>({s.OC, s.C, s.K, s.K}, seed++, 0.1);
    conv.bias = random_tensor<float>({s.OC}, seed++, 0.5);
    Tensor<float> x = random_tensor<float>({s.B, s.C, s.H, s.W}, seed++);
    REQUIRE_FALSE(conv.use_cols(s.B, conv.out_dim(s.H), conv.out_dim(s.W)));
    Tensor<float> got = conv.forward(x, false);
    Tensor<float> ref = testutil::naive_conv2d(x, conv.weight, conv.bias, s.stride, s.pad);
    CHECK(max_rel_err(got, ref) < 1e-4);
  }
}

TEST_CASE("conv rejects wrong channel count and too-small inputs") {
  Conv2d<float> conv(3, 4, 3, 1, 0);
  Tensor<float> bad({1, 2, 8, 8});
  CHECK_THROWS_WITH_AS(conv.forward(bad, false), doctest::Contains("wants 3 channels"),
                       std::runtime_error);
  Tensor<float> tiny({1, 3, 2, 2});
  CHECK_THROWS_AS(conv.forward(tiny, false), std::runtime_error);
  CHECK_THROWS_AS(conv.backward(bad), std::logic_error);
}

TEST_CASE("conv gradients agree with central differences") {
  struct Shape {
    int B, C, H, W, OC, K, stride, pad;
    bool cols;
  };
  const Shape shapes[] = {
      {2, 3, 8, 8, 4, 3, 1, 1, true},      // lowered, stride 1
      {1, 4, 9, 9, 3, 3, 2, 1, true},      // lowered, stride 2
      {2, 3, 12, 12, 4, 7, 1, 3, true},    // lowered, big kernel
      {1, 2, 6, 6, 3, 1, 1, 0, true},      // 1x1 head
      {1, 9, 120, 120, 2, 3, 1, 1, false}, // direct row path
  };
  std::uint64_t seed = 300;
  for (const auto& s : shapes) {
    CAPTURE(s.C);
    CAPTURE(s.K);
    CAPTURE(s.stride);
    CAPTURE(s.cols);
    Conv2d<double> conv(s.C, s.OC, s.K, s.stride, s.pad);
    conv.weight = random_tensor<double>({s.OC, s.C, s.K, s.K}, seed++, 0.3);
    conv.bias = random_tensor<double>({s.OC}, seed++, 0.5);
    Tensor<double> x = random_tensor<double>({s.B, s.C, s.H, s.W}, seed++);
    REQUIRE(conv.use_cols(s.B, conv.out_dim(s.H), conv.out_dim(s.W)) == s.cols);

    conv.zero_grad();
    Tensor<double> out = conv.forward(x, true);
    WeightedSum obj(out, seed++);
    Tensor<double> gout = obj.c;
    Tensor<double> gin = conv.backward(gout);

    auto loss = [&]() { return obj(conv.forward(x, false)); };
    double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i : probe_indices(x.data.size(), 24, seed++)) {
      double num = testutil::central_diff(x.data[i], loss, h);
      worst = std::max(worst, testutil::rel_err(num, gin.data[i]));
    }
    for (std::size_t i : probe_indices(conv.weight.data.size(), 24, seed++)) {
      double num = testutil::central_diff(conv.weight.data[i], loss, h);
      worst = std::max(worst, testutil::rel_err(num, conv.grad_weight.data[i]));
    }
    for (std::size_t i = 0; i < conv.bias.data.size(); ++i) {
      double num = testutil::central_diff(conv.bias.data[i], loss, h);
      worst = std::max(worst, testutil::rel_err(num, conv.grad_bias.data[i]));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("conv backward accumulates into existing gradients") {
  Conv2d<double> conv(2, 3, 3, 1, 1);
  conv.weight = random_tensor<double>({3, 2, 3, 3}, 41, 0.3);
  conv.bias = random_tensor<double>({3}, 42, 0.5);
  Tensor<double> x = random_tensor<double>({1, 2, 6, 6}, 43);
  Tensor<double> g = random_tensor<double>({1, 3, 6, 6}, 44);

  conv.zero_grad();
  conv.forward(x, true);
  conv.backward(g);
  Tensor<double> once_w = conv.grad_weight, once_b = conv.grad_bias;

  conv.forward(x, true);
  conv.backward(g);
  for (std::size_t i = 0; i < once_w.data.size(); ++i)
    CHECK(conv.grad_weight.data[i] == doctest::Approx(2.0 * once_w.data[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < once_b.data.size(); ++i)
    CHECK(conv.grad_bias.data[i] == doctest::Approx(2.0 * once_b.data[i]).epsilon(1e-12));
}

TEST_CASE("conv results do not depend on the worker count") {
  int saved = worker_count();
  struct Shape {
    int B, C, H, W, OC, K, stride, pad;
  };
  const Shape shapes[] = {
      {4, 6, 16, 16, 8, 3, 1, 1},   // lowered
      {2, 16, 96, 96, 4, 3, 1, 1},  // direct
  };
  for (const auto& s : shapes) {
    Tensor<float> x = random_tensor<float>({s.B, s.C, s.H, s.W}, 71);
    Tensor<float> g = random_tensor<float>(
        {s.B, s.OC, (s.H + 2 * s.pad - s.K) / s.stride + 1,
         (s.W + 2 * s.pad - s.K) / s.stride + 1},
        72);
    auto run = [&](int workers) {
      set_worker_count(workers);
      Conv2d<float> conv(s.C, s.OC, s.K, s.stride, s.pad);
      conv.weight = random_tensor<float>({s.OC, s.C, s.K, s.K}, 73, 0.2);
      conv.bias = random_tensor<float>({s.OC}, 74, 0.5);
      conv.zero_grad();
      Tensor<float> out = conv.forward(x, true);
      Tensor<float> gin = conv.backward(g);
      return std::make_tuple(out.data, gin.data, conv.grad_weight.data,
                             conv.grad_bias.data);
    };
    auto one = run(1);
    auto four = run(4);
    CHECK(std::get<0>(one) == std::get<0>(four));
    CHECK(std::get<1>(one) == std::get<1>(four));
    CHECK(std::get<2>(one) == std::get<2>(four));
    CHECK(std::get<3>(one) == std::get<3>(four));
  }
  set_worker_count(saved);
}

TEST_CASE("batchnorm standardizes batches and tracks running statistics") {
  int B = 4, C = 3, H = 6, W = 6;
  BatchNorm2d<float> bn(C);
  Tensor<float> x = random_tensor<float>({B, C, H, W}, 91, 2.0);
  for (auto& v : x.data) v += 5.0f;

  // independent batch statistics
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  std::size_t n = static_cast<std::size_t>(B) * H * W;
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) s += x(b, c, h, w);
    mean[c] = s / static_cast<double>(n);
    double q = 0.0;
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          double d = x(b, c, h, w) - mean[c];
          q += d * d;
        }
    var[c] = q / static_cast<double>(n);  // biased
  }

  Tensor<float> out = bn.forward(x, true);
  for (int c = 0; c < C; ++c) {
    double s = 0.0, q = 0.0;
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) s += out(b, c, h, w);
    double m = s / static_cast<double>(n);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          double d = out(b, c, h, w) - m;
          q += d * d;
        }
    CHECK(std::abs(m) < 1e-6);
    CHECK(q / static_cast<double>(n) == doctest::Approx(1.0).epsilon(1e-3));
    // running = 0.9 * running + 0.1 * batch, from mean 0 / var 1
    CHECK(bn.running_mean.data[c] == doctest::Approx(0.1 * mean[c]).epsilon(1e-5));
    CHECK(bn.running_var.data[c] == doctest::Approx(0.9 + 0.1 * var[c]).epsilon(1e-5));
  }

  // eval mode applies the running statistics elementwise
  Tensor<float> y = random_tensor<float>({2, C, H, W}, 92);
  Tensor<float> e = bn.forward(y, false);
  for (int c = 0; c < C; ++c) {
    double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_var.data[c]) + bn.eps);
    for (int b = 0; b < 2; ++b)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          double want = (y(b, c, h, w) - bn.running_mean.data[c]) * inv;
          CHECK(e(b, c, h, w) == doctest::Approx(want).epsilon(1e-5));
        }
  }
}

TEST_CASE("batchnorm gradients agree with central differences") {
  int B = 3, C = 2, H = 5, W = 4;
  BatchNorm2d<double> bn(C);
  bn.gamma = random_tensor<double>({C}, 101, 0.5);
  for (auto& v : bn.gamma.data) v += 1.0;
  bn.beta = random_tensor<double>({C}, 102, 0.5);
  Tensor<double> x = random_tensor<double>({B, C, H, W}, 103, 1.5);

  bn.zero_grad();
  Tensor<double> out = bn.forward(x, true);
  WeightedSum obj(out, 104);
  Tensor<double> gin = bn.backward(obj.c);

  auto loss = [&]() { return obj(bn.forward(x, true)); };
  double worst = 0.0;
  for (std::size_t i : probe_indices(x.data.size(), 30, 105)) {
    double num = testutil::central_diff(x.data[i], loss, 1e-5);
    worst = std::max(worst, testutil::rel_err(num, gin.data[i]));
  }
  for (int c = 0; c < C; ++c) {
    double numg = testutil::central_diff(bn.gamma.data[c], loss, 1e-5);
    double numb = testutil::central_diff(bn.beta.data[c], loss, 1e-5);
    worst = std::max(worst, testutil::rel_err(numg, bn.grad_gamma.data[c]));
    worst = std::max(worst, testutil::rel_err(numb, bn.grad_beta.data[c]));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("relu keeps positives, zeroes the rest, and gates gradients") {
  Tensor<float> x({1, 1, 2, 3});
  x.data = {-1.5f, 0.0f, 2.0f, -0.0f, 1e-30f, -3.0f};
  Tensor<float> y = relu(x);
  CHECK(y.data == std::vector<float>{0.0f, 0.0f, 2.0f, 0.0f, 1e-30f, 0.0f});

  Tensor<float> g({1, 1, 2, 3});
  g.fill(1.0f);
  Tensor<float> gx = relu_backward(g, x);
  // the gradient at exactly zero is zero
  CHECK(gx.data == std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f, 1.0f, 0.0f});

  Tensor<double> xd = random_tensor<double>({2, 3, 4, 4}, 111);
  for (auto& v : xd.data)
    if (std::abs(v) < 0.05) v = 0.1;  // keep clear of the kink
  auto loss = [&]() {
    Tensor<double> o = relu(xd);
    double s = 0.0;
    for (std::size_t i = 0; i < o.data.size(); ++i)
      s += o.data[i] * static_cast<double>(i % 7);
    return s;
  };
  Tensor<double> gd({2, 3, 4, 4});
  for (std::size_t i = 0; i < gd.data.size(); ++i)
    gd.data[i] = static_cast<double>(i % 7);
  Tensor<double> gxd = relu_backward(gd, xd);
  double worst = 0.0;
  for (std::size_t i : probe_indices(xd.data.size(), 30, 112)) {
    double num = testutil::central_diff(xd.data[i], loss, 1e-6);
    worst = std::max(worst, testutil::rel_err(num, gxd.data[i]));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("nearest upsampling replicates 2x2 blocks and its adjoint sums them") {
  Tensor<float> x = random_tensor<float>({2, 3, 4, 5}, 121);
  Tensor<float> y = upsample_nearest2x(x);
  REQUIRE(y.shape[2] == 8);
  REQUIRE(y.shape[3] == 10);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 8; ++h)
        for (int w = 0; w < 10; ++w)
          CHECK(y(b, c, h, w) == x(b, c, h / 2, w / 2));

  Tensor<float> g = random_tensor<float>({2, 3, 8, 10}, 122);
  Tensor<float> gx = upsample_nearest2x_backward(g);
  REQUIRE(gx.same_shape(x));
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 5; ++w) {
          float want = (g(b, c, 2 * h, 2 * w) + g(b, c, 2 * h, 2 * w + 1)) +
                       (g(b, c, 2 * h + 1, 2 * w) + g(b, c, 2 * h + 1, 2 * w + 1));
          CHECK(gx(b, c, h, w) == doctest::Approx(want).epsilon(1e-6));
        }

  Tensor<double> xd = random_tensor<double>({1, 2, 3, 3}, 123);
  Tensor<double> gd = random_tensor<double>({1, 2, 6, 6}, 124);
  auto loss = [&]() {
    Tensor<double> o = upsample_nearest2x(xd);
    double s = 0.0;
    for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * gd.data[i];
    return s;
  };
  Tensor<double> gxd = upsample_nearest2x_backward(gd);
  double worst = 0.0;
  for (std::size_t i = 0; i < xd.data.size(); ++i) {
    double num = testutil::central_diff(xd.data[i], loss, 1e-6);
    worst = std::max(worst, testutil::rel_err(num, gxd.data[i]));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("channel softmax normalizes rows and shrugs off constant shifts") {
  Tensor<float> x = random_tensor<float>({2, 8, 4, 4}, 131, 3.0);
  Tensor<float> p = softmax_channels(x);
  for (int b = 0; b < 2; ++b)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) {
        double s = 0.0;
        for (int c = 0; c < 8; ++c) {
          CHECK(p(b, c, h, w) >= 0.0f);
          s += p(b, c, h, w);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
      }

  Tensor<float> shifted = x;
  for (auto& v : shifted.data) v += 50.0f;
  Tensor<float> p2 = softmax_channels(shifted);
  for (std::size_t i = 0; i < p.data.size(); ++i)
    CHECK(p2.data[i] == doctest::Approx(p.data[i]).epsilon(1e-5));

  // big logits stay finite
  Tensor<float> hot({1, 8, 1, 1});
  hot.fill(-2000.0f);
  hot(0, 3, 0, 0) = 2000.0f;
  Tensor<float> ph = softmax_channels(hot);
  CHECK(ph(0, 3, 0, 0) == doctest::Approx(1.0));
  for (int c = 0; c < 8; ++c) CHECK(std::isfinite(ph(0, c, 0, 0)));
}

TEST_CASE("softmax plus soft Dice gradient agrees with central differences") {
  int B = 2, C = kNumClasses, H = 6, W = 6;
  Tensor<double> x = random_tensor<double>({B, C, H, W}, 141);
  Tensor<double> target({B, C, H, W});
  Rng rng(142);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        target(b, static_cast<int>(rng.below(C)), h, w) = 1.0;

  auto loss = [&]() {
    Tensor<double> p = softmax_channels(x);
    return soft_dice_loss(p, target, 1e-5).loss;
  };
  Tensor<double> probs = softmax_channels(x);
  auto res = soft_dice_loss(probs, target, 1e-5);
  Tensor<double> gx = softmax_channels_backward(probs, res.grad_probs);

  double worst = 0.0;
  for (std::size_t i : probe_indices(x.data.size(), 50, 143)) {
    double num = testutil::central_diff(x.data[i], loss, 1e-5);
    worst = std::max(worst, testutil::rel_err(num, gx.data[i]));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("residual block output is input plus branch and gradients check out") {
  ResidualBlock<double> blk(4);
  Rng rng(151);
  for (auto& p : {&blk.conv1, &blk.conv2}) {
    for (auto& v : p->weight.data) v = rng.normal(0.0, 0.2);
    for (auto& v : p->bias.data) v = rng.normal(0.0, 0.1);
  }
  Tensor<double> x = random_tensor<double>({2, 4, 6, 6}, 152);

  // residual wiring: zero second-stage scale must pass the input through
  ResidualBlock<double> idblk(4);
  for (auto& v : idblk.conv1.weight.data) v = rng.normal(0.0, 0.2);
  idblk.bn2.gamma.fill(0.0);
  Tensor<double> y = idblk.forward(x, true);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));

  blk.zero_grad();
  Tensor<double> out = blk.forward(x, true);
  WeightedSum obj(out, 153);
  Tensor<double> gin = blk.backward(obj.c);
  auto loss = [&]() { return obj(blk.forward(x, true)); };
  double worst = 0.0;
  for (std::size_t i : probe_indices(x.data.size(), 24, 154)) {
    double num = testutil::central_diff(x.data[i], loss, 1e-5);
    worst = std::max(worst, testutil::rel_err(num, gin.data[i]));
  }
  for (std::size_t i : probe_indices(blk.conv1.weight.data.size(), 12, 155)) {
    double num = testutil::central_diff(blk.conv1.weight.data[i], loss, 1e-5);
    worst = std::max(worst, testutil::rel_err(num, blk.conv1.grad_weight.data[i]));
  }
  for (int c = 0; c < 4; ++c) {
    double num = testutil::central_diff(blk.bn1.gamma.data[c], loss, 1e-5);
    worst = std::max(worst, testutil::rel_err(num, blk.bn1.grad_gamma.data[c]));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("perfect one-hot probabilities score a Dice loss of minus eight") {
  int B = 2, H = 8, W = 8;
  Tensor<float> target({B, kNumClasses, H, W});
  Rng rng(161);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        // leave a couple of classes absent on purpose
        int c = static_cast<int>(rng.below(kNumClasses - 2));
        target(b, c, h, w) = 1.0f;
      }
  auto res = soft_dice_loss(target, target, 1e-5);
  CHECK(std::abs(res.loss + 8.0) < 1e-4);
  for (double d : res.per_class) CHECK(d == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("soft Dice loss is bounded and shape-checked") {
  Tensor<float> p({1, kNumClasses, 4, 4});
  for (auto& v : p.data) v = 1.0f / kNumClasses;
  Tensor<float> t({1, kNumClasses, 4, 4});
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 4; ++w) t(0, 0, h, w) = 1.0f;
  auto res = soft_dice_loss(p, t, 1e-5);
  CHECK(res.loss > -8.0);
  CHECK(res.loss < 0.0);

  Tensor<float> wrong({1, kNumClasses, 4, 5});
  CHECK_THROWS_WITH_AS(soft_dice_loss(p, wrong, 1e-5), doctest::Contains("shapes differ"),
                       std::runtime_error);
}
