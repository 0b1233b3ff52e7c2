#include <doctest.h>

#include "ddrnet/engine.hpp"
#include "ddrnet/gemm.hpp"
#include "ddrnet/parallel.hpp"
#include "oracles.hpp"

using namespace ddrnet;

TEST_CASE("gemm matches a triple loop on ragged sizes") {
  const int64_t dims[][3] = {{1, 1, 1}, {7, 5, 3}, {8, 32, 256}, {9, 33, 257}, {70, 19, 600}, {3, 200, 31}};
  uint64_t seed = 10;
  for (const auto& d : dims) {
    const int64_t m = d[0], n = d[1], k = d[2];
    const auto a = oracle::random_tensor<float>(Shape{m, k}, seed++);
    const auto b = oracle::random_tensor<float>(Shape{k, n}, seed++);
    std::vector<float> c(static_cast<size_t>(m * n), 123.0f);
    gemm::multiply(m, n, k, a.ptr(), k, b.ptr(), n, c.data(), n);
    double worst = 0;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double s = 0, mag = 0;
        for (int64_t t = 0; t < k; ++t) {
          s += double(a[i * k + t]) * b[t * n + j];
          mag += std::abs(double(a[i * k + t]) * b[t * n + j]);
        }
        worst = std::max(worst, std::abs(c[static_cast<size_t>(i * n + j)] - s) / std::max(mag, 1e-12));
      }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("gemm column split does not change results") {
  const int64_t m = 21, n = 77, k = 300;
  const auto a = oracle::random_tensor<float>(Shape{m, k}, 1);
  const auto b = oracle::random_tensor<float>(Shape{k, n}, 2);
  const auto pa = gemm::pack_a(a.ptr(), m, k, k);
  std::vector<float> whole(static_cast<size_t>(m * n)), split(static_cast<size_t>(m * n));
  gemm::multiply(pa, b.ptr(), n, n, whole.data(), n);
  gemm::multiply(pa, b.ptr(), n, 13, split.data(), n);
  gemm::multiply(pa, b.ptr() + 13, n, n - 13, split.data() + 13, n);
  CHECK(whole == split);
}

TEST_CASE("im2col conv matches the loop oracle") {
  struct Sig {
    int64_t c, h, w, o;
    int k, s;
  };
  const Sig sigs[] = {{3, 17, 13, 8, 3, 2}, {16, 9, 9, 40, 1, 1}, {5, 8, 8, 3, 3, 1}, {8, 14, 14, 16, 1, 2}};
  uint64_t seed = 50;
  for (const auto& s : sigs) {
    const auto x = oracle::random_tensor<float>(Shape{2, s.c, s.h, s.w}, seed++);
    const auto w = oracle::random_tensor<float>(Shape{s.o, s.c, s.k, s.k}, seed++);
    const auto bt = oracle::random_tensor<float>(Shape{s.o}, seed++);
    const std::vector<float> b(bt.data().begin(), bt.data().end());
    const auto p = Conv2dParams::square(s.c, s.o, s.k, s.s, true);
    const Tensor y = conv2d_gemm(x, w, b, p);
    const std::vector<double> bd(b.begin(), b.end());
    const Tensor64 ref = oracle::conv(x.cast<double>(), w.cast<double>(), bd, s.s, s.s, p.ph, p.pw);
    CHECK(max_relative_error(y, ref) < 1e-5);

    const Tensor yr = conv2d_gemm(x, w, b, p, true);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(yr[i] == std::max(y[i], 0.0f));
  }
}

TEST_CASE("conv result is independent of the thread count") {
  const auto x = oracle::random_tensor<float>(Shape{1, 16, 33, 31}, 4);
  const auto w = oracle::random_tensor<float>(Shape{24, 16, 3, 3}, 5);
  const auto p = Conv2dParams::square(16, 24, 3);
  const int before = num_threads();
  set_num_threads(1);
  const Tensor one = conv2d_gemm(x, w, {}, p);
  set_num_threads(4);
  const Tensor four = conv2d_gemm(x, w, {}, p);
  set_num_threads(before);
  CHECK(one == four);
}
