#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ddrnet/blocks.hpp"
#include "ddrnet/graph.hpp"

namespace ddrnet {

/// Widths and depths of one dual-resolution network.
///
/// The trunk is stem (two stride-2 3x3 convs) -> conv2 -> conv3, after which
/// a high-resolution branch (1/8, fixed width) runs next to the low-resolution
/// branch (1/16 after conv4, 1/32 after conv5_1). Each branch ends with one
/// bottleneck.
struct VariantConfig {
  std::string name;
  int64_t stem_width = 32;
  /// conv2, conv3, low-branch conv4, low-branch conv5_1.
  std::array<int64_t, 4> stage_widths{32, 64, 128, 256};
  int64_t high_width = 64;
  /// Residual basic blocks in conv2, conv3, each conv4 unit and conv5_1.
  std::array<int, 4> blocks_per_stage{2, 2, 2, 2};
  int conv4_repeats = 1;
  int64_t dappm_branch_width = 128;
  int dappm_scales = 5;
  int64_t head_mid_width = 64;
  /// Width of the 1x1 conv before global pooling (classification only).
  int64_t classifier_width = 1024;
  /// Intermediate width of the two-step high-to-low fusion feeding the
  /// classifier. 0 means double the high bottleneck output.
  int64_t classifier_fusion_mid_width = 0;
  FusionMode fusion_mode = FusionMode::Bilateral;
  int64_t num_classes = 19;

  int64_t high_out_width() const { return 2 * high_width; }
  int64_t low_out_width() const { return 2 * stage_widths[3]; }

  /// Throws ShapeError/ValueError on inconsistent widths or depths.
  void validate() const;
};

/// The four named variants: ddrnet-23-slim, ddrnet-23, ddrnet-39, ddrnet-39-1.5x.
const std::vector<VariantConfig>& list_variants();

/// Tiny dual-resolution net for gradient checks: stem 4, one block per stage,
/// one conv4 unit, 3-scale pyramid pooling, 3 classes. Not in list_variants().
VariantConfig micro_variant();

/// Looks a variant up by name (case-sensitive); throws UnknownVariantError naming the
/// unknown variant.
VariantConfig find_variant(std::string_view name);

/// ImageNet classifier: trunk -> conv5_2 high-to-low fusion -> 1x1 conv ->
/// global average pool -> 1000-way fc. Output "logits" (N x 1000 x 1 x 1).
/// Input extents must be divisible by 32.
Graph build_classifier(const VariantConfig& config, int64_t num_outputs = 1000);

/// Segmenter with logits at output stride 8 (output "logits"). When
/// `with_aux` is set an auxiliary head taps the high branch after the last
/// conv4 fusion (output "aux_logits"). Input extents must be divisible by 64.
Graph build_segmenter(const VariantConfig& config, bool with_aux = false);

}  // namespace ddrnet
