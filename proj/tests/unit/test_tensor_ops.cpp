#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ddrnet/ops.hpp"
#include "oracles.hpp"

using namespace ddrnet;

namespace {

Tensor64 iota(const Shape& s, double start = 1.0) {
  Tensor64 t(s);
  std::iota(t.data().begin(), t.data().end(), start);
  return t;
}

}  // namespace

TEST_CASE("shape rejects bad extents") {
  CHECK_THROWS_AS(Shape({1, 0, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Shape({1, 2, 3, 4, 5}), ShapeError);
  CHECK(Shape({2, 3, 4, 5}).numel() == 120);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("conv: unit weight doubles the input") {
  const Tensor64 x = iota(Shape{1, 1, 3, 3});
  const Tensor64 w(Shape{1, 1, 1, 1}, 2.0);
  const auto y = ops::conv2d<double>(x, w, {}, Conv2dParams::square(1, 1, 1));
  for (int64_t i = 0; i < 9; ++i) CHECK(y[i] == 2.0 * x[i]);
}

TEST_CASE("conv: all-ones 3x3 with padding 1") {
  const Tensor64 x(Shape{1, 1, 3, 3}, 1.0);
  const Tensor64 w(Shape{1, 1, 3, 3}, 1.0);
  const auto y = ops::conv2d<double>(x, w, {}, Conv2dParams::square(1, 1, 3));
  const auto ref = oracle::conv(x, w, {}, 1, 1, 1, 1);
  CHECK(oracle::max_abs_diff(y, ref) == 0.0);
  const double expect[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (int i = 0; i < 9; ++i) CHECK(ref[i] == expect[i]);
}

TEST_CASE("conv: stride 2 on conv2 signature") {
  const Tensor x(Shape{1, 32, 112, 112});
  const Tensor w(Shape{32, 32, 3, 3});
  CHECK(ops::conv2d<float>(x, w, {}, Conv2dParams::square(32, 32, 3, 2)).shape() == Shape({1, 32, 56, 56}));
}

TEST_CASE("conv: random signatures agree with the loop oracle") {
  struct Sig {
    int64_t n, c, h, w, o;
    int k, s, p;
    bool bias;
  };
  const Sig sigs[] = {{1, 3, 9, 11, 4, 3, 2, 1, true}, {2, 5, 7, 7, 3, 1, 1, 0, false},
                      {1, 4, 8, 6, 6, 3, 1, 1, true},  {1, 2, 10, 10, 2, 5, 2, 2, false}};
  uint64_t seed = 1;
  for (const auto& s : sigs) {
    const auto x = oracle::random_tensor<double>(Shape{s.n, s.c, s.h, s.w}, seed++);
    const auto w = oracle::random_tensor<double>(Shape{s.o, s.c, s.k, s.k}, seed++);
    std::vector<double> b;
    if (s.bias) {
      const auto bt = oracle::random_tensor<double>(Shape{s.o}, seed++);
      b.assign(bt.data().begin(), bt.data().end());
    }
    Conv2dParams p = Conv2dParams::square(s.c, s.o, s.k, s.s, s.bias);
    p.ph = p.pw = s.p;
    const auto y = ops::conv2d<double>(x, w, b, p);
    CHECK(oracle::max_abs_diff(y, oracle::conv(x, w, b, s.s, s.s, s.p, s.p)) < 1e-12);
  }
}

TEST_CASE("conv: shape mismatch names the dimension") {
  const Tensor x(Shape{1, 3, 8, 8});
  const Tensor w(Shape{4, 2, 3, 3});
  try {
    ops::conv2d<float>(x, w, {}, Conv2dParams::square(2, 4, 3));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
}

TEST_CASE("batch norm") {
  const Tensor64 x = iota(Shape{1, 2, 2, 2}, -3.0);
  const auto id = ops::batch_norm_infer<double>(x, BatchNormParams<double>::identity(2, 0.0));
  CHECK(id == x);

  BatchNormParams<double> bn{{3.0}, {1.0}, {1.0}, {4.0}, 0.0};
  const auto y = ops::batch_norm_infer<double>(Tensor64(Shape{1, 1, 1, 1}, 2.0), bn);
  CHECK(y[0] == doctest::Approx(2.5).epsilon(1e-15));

  bn.running_var = {-1.0};
  CHECK_THROWS_AS(ops::batch_norm_infer<double>(Tensor64(Shape{1, 1, 1, 1}, 2.0), bn), ValueError);
}

TEST_CASE("relu") {
  const Tensor64 x(Shape{3}, std::vector<double>{-1, 0, 2});
  CHECK(ops::relu(x) == Tensor64(Shape{3}, std::vector<double>{0, 0, 2}));
  const Tensor64 neg(Shape{1, 2, 3, 3}, -0.5);
  const auto r = ops::relu(neg);
  for (double v : r.data()) CHECK(v == 0.0);
}

TEST_CASE("avg pool") {
  const Tensor64 c(Shape{1, 2, 9, 9}, 1.75);
  const auto pooled = ops::avg_pool2d(c, Pool2dParams::square(5, 2, 2));
  for (double v : pooled.data()) CHECK(v == doctest::Approx(1.75));

  const Tensor64 x = iota(Shape{1, 1, 4, 4});
  const auto y = ops::avg_pool2d(x, Pool2dParams::square(2, 2, 0));
  const auto ref = oracle::avg_pool(x, 2, 2, 0);
  const double expect[4] = {3.5, 5.5, 11.5, 13.5};
  for (int i = 0; i < 4; ++i) {
    CHECK(ref[i] == expect[i]);
    CHECK(y[i] == ref[i]);
  }

  CHECK(ops::avg_pool2d(Tensor64(Shape{1, 1, 16, 16}), Pool2dParams::square(5, 2, 2)).shape() ==
        Shape({1, 1, 8, 8}));
  const auto r = oracle::random_tensor<double>(Shape{2, 3, 13, 11}, 7);
  for (int k : {3, 5, 9, 17}) {
    const int s = (k - 1) / 2, p = (k - 1) / 2;
    CHECK(oracle::max_abs_diff(ops::avg_pool2d(r, Pool2dParams::square(k, s, p)), oracle::avg_pool(r, k, s, p)) <
          1e-12);
  }
  CHECK_THROWS_AS(ops::avg_pool2d(Tensor64(Shape{1, 1, 2, 2}), Pool2dParams::square(5, 1, 0)), ShapeError);
}

TEST_CASE("global average pool") {
  const auto y = ops::global_avg_pool(iota(Shape{1, 1, 3, 3}));
  CHECK(y.shape() == Shape({1, 1, 1, 1}));
  CHECK(y[0] == 5.0);
  const auto c = ops::global_avg_pool(Tensor64(Shape{2, 3, 4, 5}, -2.0));
  CHECK(c.shape() == Shape({2, 3, 1, 1}));
  for (double v : c.data()) CHECK(v == doctest::Approx(-2.0));
}

TEST_CASE("bilinear resize") {
  const Tensor64 c(Shape{1, 2, 3, 5}, 0.3);
  const auto resized = ops::bilinear_resize(c, 7, 2);
  for (double v : resized.data()) CHECK(v == doctest::Approx(0.3));

  const auto r = oracle::random_tensor<double>(Shape{1, 2, 5, 6}, 3);
  CHECK(ops::bilinear_resize(r, 5, 6) == r);

  const Tensor64 x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto y = ops::bilinear_resize(x, 4, 4);
  CHECK(oracle::max_abs_diff(y, oracle::bilinear(x, 4, 4)) < 1e-15);
  // top row: column weights 0, 0.25, 0.75, 1 between 1 and 2
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 1.25);
  CHECK(y[2] == 1.75);
  CHECK(y[3] == 2.0);

  for (auto [h, w] : {std::pair<int64_t, int64_t>{13, 3}, {2, 17}, {40, 48}}) {
    CHECK(oracle::max_abs_diff(ops::bilinear_resize(r, h, w), oracle::bilinear(r, h, w)) < 1e-12);
  }
}

TEST_CASE("add, concat, softmax, argmax, flip") {
  const Tensor64 a(Shape{1, 128, 2, 2}, 1.0);
  const Tensor64 b(Shape{1, 64, 2, 2}, 2.0);
  const auto cat = ops::concat_channels<double>({&a, &b});
  CHECK(cat.shape() == Shape({1, 192, 2, 2}));
  CHECK(cat.at(0, 127, 1, 1) == 1.0);
  CHECK(cat.at(0, 128, 0, 0) == 2.0);
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);

  const auto p = ops::softmax_channels(Tensor64(Shape{1, 19, 2, 3}, 4.0));
  for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 19));

  Tensor64 z(Shape{1, 3, 1, 2});
  z.at(0, 1, 0, 0) = 5;
  z.at(0, 2, 0, 1) = 1;
  z.at(0, 0, 0, 1) = 1;  // tie goes to the lower index
  const auto m = ops::argmax_channels(z);
  CHECK(m.shape() == Shape({1, 1, 2}));
  CHECK(m[0] == 1);
  CHECK(m[1] == 0);

  const Tensor64 row = iota(Shape{1, 1, 1, 3});
  CHECK(ops::flip_horizontal(row) == Tensor64(Shape{1, 1, 1, 3}, std::vector<double>{3, 2, 1}));
}

TEST_CASE("linear") {
  const Tensor64 x(Shape{1, 2}, std::vector<double>{1, 2});
  const Tensor64 w(Shape{3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1});
  const std::vector<double> b{0.5, 0, -1};
  const auto y = ops::linear<double>(x, w, b);
  CHECK(y == Tensor64(Shape{1, 3}, std::vector<double>{1.5, 2, 2}));
}
