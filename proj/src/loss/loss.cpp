#include "ddrnet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddrnet/ops.hpp"

namespace ddrnet {

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw ValueError("loss: alpha must be >= 0, got " + std::to_string(alpha));
  if (!(ohem_threshold > 0.0 && ohem_threshold <= 1.0)) {
    throw ValueError("loss: ohem_threshold must be in (0, 1], got " + std::to_string(ohem_threshold));
  }
  if (ohem_min_kept && *ohem_min_kept < 1) {
    throw ValueError("loss: ohem_min_kept must be >= 1, got " + std::to_string(*ohem_min_kept));
  }
}

namespace {

void check_labels(const Shape& logits, const IndexTensor& labels, int32_t ignore_index) {
  if (logits.rank() != 4) throw ShapeError("loss: logits must be N x K x H x W, got " + logits.str());
  if (labels.rank() != 3 || labels.shape()[0] != logits.n()) {
    throw ShapeError("loss: labels must be N x H x W with N = " + std::to_string(logits.n()) + ", got " +
                     labels.shape().str());
  }
  const int64_t k = logits.c();
  for (int64_t i = 0; i < labels.numel(); ++i) {
    const int32_t l = labels[i];
    if (l == ignore_index) continue;
    if (l < 0 || l >= k) {
      throw ValueError("loss: label " + std::to_string(l) + " at pixel " + std::to_string(i) + " is outside [0, " +
                       std::to_string(k) + ") and is not the ignore index " + std::to_string(ignore_index));
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> logits_at_label_resolution(const BasicTensor<T>& logits, const IndexTensor& labels) {
  if (logits.rank() != 4 || labels.rank() != 3) {
    throw ShapeError("loss: expected N x K x H x W logits and N x H x W labels, got " + logits.shape().str() +
                     " and " + labels.shape().str());
  }
  return ops::bilinear_resize(logits, labels.shape()[1], labels.shape()[2]);
}

template <typename T>
void pixel_nll(const BasicTensor<T>& logits, const IndexTensor& labels, int32_t ignore_index, std::vector<double>& nll,
               std::vector<double>& prob) {
  check_labels(logits.shape(), labels, ignore_index);
  if (labels.shape()[1] != logits.h() || labels.shape()[2] != logits.w()) {
    throw ShapeError("loss: logits " + logits.shape().str() + " do not match labels " + labels.shape().str());
  }
  const int64_t K = logits.c();
  const int64_t hw = logits.h() * logits.w();
  nll.assign(static_cast<size_t>(labels.numel()), 0.0);
  prob.assign(static_cast<size_t>(labels.numel()), -1.0);
  for (int64_t n = 0; n < logits.n(); ++n) {
    const T* z = logits.plane(n, 0);
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t px = n * hw + i;
      const int32_t l = labels[px];
      if (l == ignore_index) continue;
      double mx = -INFINITY;
      for (int64_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(z[k * hw + i]));
      double se = 0.0;
      for (int64_t k = 0; k < K; ++k) se += std::exp(static_cast<double>(z[k * hw + i]) - mx);
      const double lse = mx + std::log(se);
      const double v = lse - static_cast<double>(z[l * hw + i]);
      nll[static_cast<size_t>(px)] = v;
      prob[static_cast<size_t>(px)] = std::exp(-v);
    }
  }
}

template <typename T>
double cross_entropy(const BasicTensor<T>& logits, const IndexTensor& labels, int32_t ignore_index) {
  const auto z = logits_at_label_resolution(logits, labels);
  std::vector<double> nll, prob;
  pixel_nll(z, labels, ignore_index, nll, prob);
  double sum = 0.0;
  int64_t count = 0;
  for (size_t i = 0; i < nll.size(); ++i) {
    if (prob[i] < 0.0) continue;
    sum += nll[i];
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

namespace {

std::vector<uint8_t> keep_mask(const std::vector<double>& prob, const LossConfig& config) {
  const int64_t total = static_cast<int64_t>(prob.size());
  const int64_t min_kept = config.ohem_min_kept ? *config.ohem_min_kept : std::max<int64_t>(total / 16, 1);
  std::vector<uint8_t> keep(prob.size(), 0);
  std::vector<int64_t> valid;
  int64_t kept = 0;
  for (int64_t i = 0; i < total; ++i) {
    const double p = prob[static_cast<size_t>(i)];
    if (p < 0.0) continue;
    valid.push_back(i);
    if (p < config.ohem_threshold) {
      keep[static_cast<size_t>(i)] = 1;
      ++kept;
    }
  }
  if (kept < min_kept) {
    std::stable_sort(valid.begin(), valid.end(),
                     [&](int64_t a, int64_t b) { return prob[static_cast<size_t>(a)] < prob[static_cast<size_t>(b)]; });
    const auto take = std::min<int64_t>(min_kept, static_cast<int64_t>(valid.size()));
    for (int64_t j = 0; j < take; ++j) keep[static_cast<size_t>(valid[static_cast<size_t>(j)])] = 1;
  }
  return keep;
}

}  // namespace

template <typename T>
std::vector<uint8_t> ohem_keep_mask(const BasicTensor<T>& logits, const IndexTensor& labels, const LossConfig& config) {
  config.validate();
  const auto z = logits_at_label_resolution(logits, labels);
  std::vector<double> nll, prob;
  pixel_nll(z, labels, config.ignore_index, nll, prob);
  return keep_mask(prob, config);
}

template <typename T>
double ohem_cross_entropy(const BasicTensor<T>& logits, const IndexTensor& labels, const LossConfig& config) {
  config.validate();
  const auto z = logits_at_label_resolution(logits, labels);
  std::vector<double> nll, prob;
  pixel_nll(z, labels, config.ignore_index, nll, prob);
  const auto keep = keep_mask(prob, config);
  double sum = 0.0;
  int64_t count = 0;
  for (size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    sum += nll[i];
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

template <typename T>
DeepSupervisionLoss deep_supervision_loss(const BasicTensor<T>& main_logits, const BasicTensor<T>& aux_logits,
                                          const IndexTensor& labels, const LossConfig& config) {
  config.validate();
  if (main_logits.rank() != 4 || aux_logits.rank() != 4 || main_logits.c() != aux_logits.c()) {
    throw ValueError("deep supervision: main head " + main_logits.shape().str() + " and auxiliary head " +
                     aux_logits.shape().str() + " disagree on the class count");
  }
  auto criterion = [&](const BasicTensor<T>& z) {
    return config.ohem ? ohem_cross_entropy(z, labels, config) : cross_entropy(z, labels, config.ignore_index);
  };
  DeepSupervisionLoss r;
  r.main = criterion(main_logits);
  r.aux = criterion(aux_logits);
  r.total = r.main + config.alpha * r.aux;
  return r;
}

#define DDRNET_INSTANTIATE_LOSS(T)                                                                                 \
  template BasicTensor<T> logits_at_label_resolution(const BasicTensor<T>&, const IndexTensor&);                 \
  template void pixel_nll(const BasicTensor<T>&, const IndexTensor&, int32_t, std::vector<double>&,             \
                          std::vector<double>&);                                                                  \
  template double cross_entropy(const BasicTensor<T>&, const IndexTensor&, int32_t);                             \
  template std::vector<uint8_t> ohem_keep_mask(const BasicTensor<T>&, const IndexTensor&, const LossConfig&);    \
  template double ohem_cross_entropy(const BasicTensor<T>&, const IndexTensor&, const LossConfig&);             \
  template DeepSupervisionLoss deep_supervision_loss(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                                     const IndexTensor&, const LossConfig&);

DDRNET_INSTANTIATE_LOSS(float)
DDRNET_INSTANTIATE_LOSS(double)

#undef DDRNET_INSTANTIATE_LOSS

}  // namespace ddrnet
