#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ddrnet/graph.hpp"

namespace ddrnet {

enum class FusionMode { None, LowToHighOnly, Bilateral };

std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view text);

/// Two 3x3 conv+BN stages with an identity or 1x1 projection shortcut.
struct ResidualBasicSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int stride = 1;

  bool has_projection() const { return stride != 1 || in_channels != out_channels; }
};

/// 1x1 -> 3x3 (strided) -> 1x1 chain; expansion is 2x, not the classic 4x.
struct BottleneckSpec {
  int64_t in_channels = 0;
  int64_t mid_channels = 0;
  int stride = 1;

  int64_t out_channels() const { return 2 * mid_channels; }
  bool has_projection() const { return stride != 1 || in_channels != out_channels(); }
};

struct BilateralFusionSpec {
  int64_t high_channels = 0;
  int64_t low_channels = 0;
  int downsample_steps = 1;  // low resolution = high resolution / 2^steps
  FusionMode mode = FusionMode::Bilateral;
  /// Output widths of the stride-2 convs in the high->low chain. Empty means
  /// the default: double at every step, which must land on low_channels.
  std::vector<int64_t> h2l_widths;

  std::vector<int64_t> resolved_h2l_widths() const;
};

/// Pooling ladder: scale 1 is a 1x1 unit on the input, scale i in [2, n)
/// pools with kernel 2^i+1 / stride 2^(i-1) / padding 2^(i-1), scale n pools
/// globally. Every conv unit is BN -> ReLU -> conv.
struct DappmSpec {
  int64_t in_channels = 0;
  int64_t branch_channels = 0;
  int64_t out_channels = 0;
  int scales = 5;

  void validate() const;
  static Pool2dParams pool_for_scale(int i) {
    const int k = (1 << i) + 1;
    const int s = 1 << (i - 1);
    return Pool2dParams::square(k, s, (k - 1) / 2);
  }
};

/// 3x3 conv + BN + ReLU, then a biased 1x1 conv to the class logits.
struct HeadSpec {
  int64_t in_channels = 0;
  int64_t mid_channels = 0;
  int64_t num_classes = 0;
};

struct FusionNodes {
  int high = -1;
  int low = -1;
};

/// Graph emitters. Each appends nodes named under `prefix` and returns the
/// block's output node(s).
namespace blocks {

/// conv -> BN [-> ReLU] with nodes `<prefix>.conv`, `<prefix>.bn`, `<prefix>.relu`.
int conv_bn(GraphBuilder& b, const std::string& prefix, int in, const Conv2dParams& conv, bool relu);

/// BN -> ReLU -> conv, the pre-activation unit used inside the pyramid pooling module.
int bn_relu_conv(GraphBuilder& b, const std::string& prefix, int in, const Conv2dParams& conv);

int residual_basic(GraphBuilder& b, const std::string& prefix, int in, const ResidualBasicSpec& spec);

/// `count` basic blocks named `<prefix>.0 .. <prefix>.{count-1}`; only the first may stride.
int residual_stage(GraphBuilder& b, const std::string& prefix, int in, int64_t out_channels, int count, int stride);

int bottleneck(GraphBuilder& b, const std::string& prefix, int in, const BottleneckSpec& spec);

/// Stride-2 3x3 conv+BN chain with a ReLU between steps and none after the last.
/// Nodes `<prefix>.{j}.conv|bn|relu`.
int downsample_chain(GraphBuilder& b, const std::string& prefix, int in, const std::vector<int64_t>& widths);

/// high_out = relu(high + resize(BN(conv1x1(low)))), low_out = relu(low + chain(high)).
/// Transform nodes live under `<prefix>.l2h` and `<prefix>.h2l`.
FusionNodes bilateral_fusion(GraphBuilder& b, const std::string& prefix, int high, int low,
                             const BilateralFusionSpec& spec);

int dappm(GraphBuilder& b, const std::string& prefix, int in, const DappmSpec& spec);

int seg_head(GraphBuilder& b, const std::string& prefix, int in, const HeadSpec& spec);

}  // namespace blocks

/// Single-block graphs (input -> block -> output "out"), used for analysis
/// and tests. Parameter slots are named relative to the block.
Graph residual_basic_graph(const ResidualBasicSpec& spec);
Graph bottleneck_graph(const BottleneckSpec& spec);
Graph dappm_graph(const DappmSpec& spec);
Graph seg_head_graph(const HeadSpec& spec);

// Functional forms over explicit parameter sets (slot names relative to the
// block, matching the single-block graphs above).

template <typename T>
BasicTensor<T> residual_basic(const BasicTensor<T>& input, const ResidualBasicSpec& spec, const ParamSet<T>& params);

template <typename T>
BasicTensor<T> bottleneck(const BasicTensor<T>& input, const BottleneckSpec& spec, const ParamSet<T>& params);

/// Parameters named `l2h.conv.weight`, `l2h.bn.*`, `h2l.{j}.conv.weight`, `h2l.{j}.bn.*`.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> bilateral_fusion(const BasicTensor<T>& high, const BasicTensor<T>& low,
                                                           const BilateralFusionSpec& spec,
                                                           const ParamSet<T>& params);

template <typename T>
BasicTensor<T> dappm(const BasicTensor<T>& input, const DappmSpec& spec, const ParamSet<T>& params);

template <typename T>
BasicTensor<T> seg_head(const BasicTensor<T>& input, const HeadSpec& spec, const ParamSet<T>& params);

/// Slot names and shapes of a fusion's transforms, for building parameter sets.
std::vector<ParamSlot> bilateral_fusion_slots(const BilateralFusionSpec& spec);

}  // namespace ddrnet
