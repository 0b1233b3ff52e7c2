#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ddrnet/tensor.hpp"

namespace ddrnet {

struct LossConfig {
  double alpha = 0.4;          // auxiliary head weight
  int32_t ignore_index = 255;  // label excluded from every loss
  bool ohem = false;           // use OHEM instead of plain cross-entropy
  double ohem_threshold = 0.7;
  /// Unset: (batch pixels) / 16, at least 1.
  std::optional<int64_t> ohem_min_kept;

  void validate() const;
};

/// Logits are bilinearly resized to the label extents when they differ.
/// Labels must be N x H x W with values in [0, K) or ignore_index.
template <typename T>
BasicTensor<T> logits_at_label_resolution(const BasicTensor<T>& logits, const IndexTensor& labels);

/// Per-pixel -log softmax(z)[label] (0 at ignored pixels) and true-class
/// probability (-1 at ignored pixels). Logits must already match the labels.
template <typename T>
void pixel_nll(const BasicTensor<T>& logits, const IndexTensor& labels, int32_t ignore_index, std::vector<double>& nll,
               std::vector<double>& prob);

/// Mean NLL over non-ignored pixels; 0 when every pixel is ignored.
template <typename T>
double cross_entropy(const BasicTensor<T>& logits, const IndexTensor& labels, int32_t ignore_index = 255);

/// Pixels kept by OHEM: true-class probability below the threshold; when
/// fewer than min_kept qualify, the min_kept lowest-probability pixels
/// (ties to the lower index). Ignored pixels are never kept.
template <typename T>
std::vector<uint8_t> ohem_keep_mask(const BasicTensor<T>& logits, const IndexTensor& labels, const LossConfig& config);

/// Mean NLL over the kept pixels; 0 when none are kept.
template <typename T>
double ohem_cross_entropy(const BasicTensor<T>& logits, const IndexTensor& labels, const LossConfig& config);

struct DeepSupervisionLoss {
  double total = 0.0;  // main + alpha * aux
  double main = 0.0;
  double aux = 0.0;
};

template <typename T>
DeepSupervisionLoss deep_supervision_loss(const BasicTensor<T>& main_logits, const BasicTensor<T>& aux_logits,
                                          const IndexTensor& labels, const LossConfig& config);

}  // namespace ddrnet
