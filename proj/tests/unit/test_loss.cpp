#include <doctest.h>

#include <cmath>

#include "ddrnet/loss.hpp"
#include "oracles.hpp"

using namespace ddrnet;

namespace {

// 1 x K x 1 x P logits whose softmax has the given true-class probability for
// label 0 (two classes).
Tensor64 two_class(const std::vector<double>& p0) {
  const auto n = static_cast<int64_t>(p0.size());
  Tensor64 z(Shape{1, 2, 1, n});
  for (int64_t i = 0; i < n; ++i) {
    z.at(0, 0, 0, i) = std::log(p0[static_cast<size_t>(i)]);
    z.at(0, 1, 0, i) = std::log(1 - p0[static_cast<size_t>(i)]);
  }
  return z;
}

IndexTensor labels_of(std::vector<int32_t> v, int64_t h, int64_t w) {
  return IndexTensor(Shape{1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("cross entropy identities") {
  const IndexTensor lab = labels_of({0, 5, 18, 7, 3, 255}, 2, 3);
  CHECK(cross_entropy(Tensor64(Shape{1, 19, 2, 3}, 0.25), lab) == doctest::Approx(std::log(19.0)).epsilon(1e-12));

  Tensor64 sat(Shape{1, 3, 1, 2});
  sat.at(0, 2, 0, 0) = 1000;
  sat.at(0, 0, 0, 1) = 1000;
  CHECK(cross_entropy(sat, labels_of({2, 0}, 1, 2)) < 1e-6);

  CHECK(cross_entropy(Tensor64(Shape{1, 4, 2, 2}, 1.0), labels_of({255, 255, 255, 255}, 2, 2)) == 0.0);
  CHECK_THROWS_AS(cross_entropy(Tensor64(Shape{1, 4, 1, 1}), labels_of({4}, 1, 1)), ValueError);
  CHECK_THROWS_AS(cross_entropy(Tensor64(Shape{1, 4, 1, 1}), labels_of({-1}, 1, 1)), ValueError);
}

TEST_CASE("logits are resized to the labels") {
  const auto z = oracle::random_tensor<double>(Shape{1, 3, 4, 4}, 1);
  IndexTensor lab(Shape{1, 16, 16}, 1);
  const auto up = logits_at_label_resolution(z, lab);
  CHECK(up.shape() == Shape({1, 3, 16, 16}));
  CHECK(oracle::max_abs_diff(up, oracle::bilinear(z, 16, 16)) < 1e-12);
  CHECK(cross_entropy(z, lab) == doctest::Approx(cross_entropy(up, lab)).epsilon(1e-14));
}

TEST_CASE("OHEM") {
  const Tensor64 z = two_class({0.9, 0.1});
  const IndexTensor lab = labels_of({0, 0}, 1, 2);
  LossConfig c;
  c.ohem = true;
  c.ohem_threshold = 0.7;
  c.ohem_min_kept = 1;
  CHECK(ohem_cross_entropy(z, lab, c) == doctest::Approx(-std::log(0.1)).epsilon(1e-12));

  const auto r = oracle::random_tensor<double>(Shape{2, 5, 3, 4}, 2);
  IndexTensor lr(Shape{2, 3, 4});
  for (int64_t i = 0; i < lr.numel(); ++i) lr[i] = i % 7 == 0 ? 255 : static_cast<int32_t>(i % 5);
  const double plain = cross_entropy(r, lr);

  LossConfig all = c;
  all.ohem_threshold = 1.0;
  all.ohem_min_kept = 1;
  CHECK(ohem_cross_entropy(r, lr, all) == doctest::Approx(plain).epsilon(1e-12));

  LossConfig every = c;
  every.ohem_threshold = 0.01;
  every.ohem_min_kept = lr.numel();
  CHECK(ohem_cross_entropy(r, lr, every) == doctest::Approx(plain).epsilon(1e-12));

  // min_kept above the qualifying count tops up with the hardest pixels
  const Tensor64 z3 = two_class({0.95, 0.2, 0.8, 0.6});
  LossConfig two = c;
  two.ohem_threshold = 0.5;
  two.ohem_min_kept = 2;
  const auto keep = ohem_keep_mask(z3, labels_of({0, 0, 0, 0}, 1, 4), two);
  CHECK(keep == std::vector<uint8_t>{0, 1, 0, 1});

  LossConfig bad;
  bad.ohem_threshold = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValueError);
}

TEST_CASE("deep supervision") {
  const auto main = oracle::random_tensor<double>(Shape{1, 3, 2, 2}, 3);
  const auto aux = oracle::random_tensor<double>(Shape{1, 3, 2, 2}, 4);
  const IndexTensor lab = labels_of({0, 1, 2, 1}, 2, 2);
  LossConfig c;
  const auto l = deep_supervision_loss(main, aux, lab, c);
  CHECK(l.main == doctest::Approx(cross_entropy(main, lab)));
  CHECK(l.aux == doctest::Approx(cross_entropy(aux, lab)));
  CHECK(l.total == doctest::Approx(l.main + 0.4 * l.aux).epsilon(1e-15));

  c.alpha = 0.0;
  CHECK(deep_supervision_loss(main, aux, lab, c).total == l.main);
  CHECK_THROWS_AS(deep_supervision_loss(main, Tensor64(Shape{1, 4, 2, 2}), lab, c), ValueError);

  const double ln = 1.0, la = 0.5, alpha = 0.4;
  CHECK(ln + alpha * la == doctest::Approx(1.2));
}
