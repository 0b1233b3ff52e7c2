#include "ddrnet/blocks.hpp"

#include "ddrnet/reference.hpp"

namespace ddrnet {

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::None: return "none";
    case FusionMode::LowToHighOnly: return "low_to_high_only";
    case FusionMode::Bilateral: return "bilateral";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "none") return FusionMode::None;
  if (text == "low_to_high_only" || text == "l2h") return FusionMode::LowToHighOnly;
  if (text == "bilateral") return FusionMode::Bilateral;
  throw ValueError("unknown fusion mode '" + std::string(text) + "'");
}

std::vector<int64_t> BilateralFusionSpec::resolved_h2l_widths() const {
  if (downsample_steps < 1) throw ShapeError("bilateral fusion: downsample_steps must be >= 1");
  if (!h2l_widths.empty()) {
    if (static_cast<int>(h2l_widths.size()) != downsample_steps) {
      throw ShapeError("bilateral fusion: " + std::to_string(h2l_widths.size()) + " chain widths for " +
                       std::to_string(downsample_steps) + " steps");
    }
    if (h2l_widths.back() != low_channels) {
      throw ShapeError("bilateral fusion: chain ends at " + std::to_string(h2l_widths.back()) +
                       " channels, low branch has " + std::to_string(low_channels));
    }
    return h2l_widths;
  }
  std::vector<int64_t> widths;
  int64_t c = high_channels;
  for (int j = 0; j < downsample_steps; ++j) {
    c *= 2;
    widths.push_back(c);
  }
  if (widths.back() != low_channels) {
    throw ShapeError("bilateral fusion: doubling " + std::to_string(high_channels) + " channels " +
                     std::to_string(downsample_steps) + " times gives " + std::to_string(widths.back()) +
                     ", low branch has " + std::to_string(low_channels));
  }
  return widths;
}

void DappmSpec::validate() const {
  if (scales < 2) throw ValueError("dappm: number of scales must be >= 2, got " + std::to_string(scales));
  if (in_channels < 1 || branch_channels < 1 || out_channels < 1) throw ShapeError("dappm: widths must be >= 1");
}

namespace blocks {

int conv_bn(GraphBuilder& b, const std::string& prefix, int in, const Conv2dParams& conv, bool relu) {
  int x = b.conv(join_name(prefix, "conv"), in, conv);
  x = b.batch_norm(join_name(prefix, "bn"), x);
  if (relu) x = b.relu(join_name(prefix, "relu"), x);
  return x;
}

int bn_relu_conv(GraphBuilder& b, const std::string& prefix, int in, const Conv2dParams& conv) {
  int x = b.batch_norm(join_name(prefix, "bn"), in);
  x = b.relu(join_name(prefix, "relu"), x);
  return b.conv(join_name(prefix, "conv"), x, conv);
}

int residual_basic(GraphBuilder& b, const std::string& prefix, int in, const ResidualBasicSpec& spec) {
  if (b.channels(in) != spec.in_channels) {
    throw ShapeError("block '" + prefix + "': expects " + std::to_string(spec.in_channels) + " channels, got " +
                     std::to_string(b.channels(in)));
  }
  const auto c3 = [](int64_t i, int64_t o, int s) { return Conv2dParams::square(i, o, 3, s); };
  int x = b.conv(join_name(prefix, "conv1"), in, c3(spec.in_channels, spec.out_channels, spec.stride));
  x = b.batch_norm(join_name(prefix, "bn1"), x);
  x = b.relu(join_name(prefix, "relu1"), x);
  x = b.conv(join_name(prefix, "conv2"), x, c3(spec.out_channels, spec.out_channels, 1));
  x = b.batch_norm(join_name(prefix, "bn2"), x);
  int shortcut = in;
  if (spec.has_projection()) {
    Conv2dParams proj = Conv2dParams::square(spec.in_channels, spec.out_channels, 1, spec.stride);
    shortcut = conv_bn(b, join_name(prefix, "proj"), in, proj, false);
  }
  x = b.add(join_name(prefix, "add"), x, shortcut);
  return b.relu(join_name(prefix, "relu"), x);
}

int residual_stage(GraphBuilder& b, const std::string& prefix, int in, int64_t out_channels, int count,
                   int stride) {
  if (count < 1) throw ShapeError("stage '" + prefix + "': block count must be >= 1");
  int x = in;
  for (int i = 0; i < count; ++i) {
    ResidualBasicSpec spec{b.channels(x), out_channels, i == 0 ? stride : 1};
    x = residual_basic(b, join_name(prefix, std::to_string(i)), x, spec);
  }
  return x;
}

int bottleneck(GraphBuilder& b, const std::string& prefix, int in, const BottleneckSpec& spec) {
  if (b.channels(in) != spec.in_channels) {
    throw ShapeError("block '" + prefix + "': expects " + std::to_string(spec.in_channels) + " channels, got " +
                     std::to_string(b.channels(in)));
  }
  const int64_t mid = spec.mid_channels, out = spec.out_channels();
  int x = b.conv(join_name(prefix, "conv1"), in, Conv2dParams::square(spec.in_channels, mid, 1));
  x = b.batch_norm(join_name(prefix, "bn1"), x);
  x = b.relu(join_name(prefix, "relu1"), x);
  x = b.conv(join_name(prefix, "conv2"), x, Conv2dParams::square(mid, mid, 3, spec.stride));
  x = b.batch_norm(join_name(prefix, "bn2"), x);
  x = b.relu(join_name(prefix, "relu2"), x);
  x = b.conv(join_name(prefix, "conv3"), x, Conv2dParams::square(mid, out, 1));
  x = b.batch_norm(join_name(prefix, "bn3"), x);
  int shortcut = in;
  if (spec.has_projection()) {
    Conv2dParams proj = Conv2dParams::square(spec.in_channels, out, 1, spec.stride);
    shortcut = conv_bn(b, join_name(prefix, "proj"), in, proj, false);
  }
  x = b.add(join_name(prefix, "add"), x, shortcut);
  return b.relu(join_name(prefix, "relu"), x);
}

int downsample_chain(GraphBuilder& b, const std::string& prefix, int in, const std::vector<int64_t>& widths) {
  int x = in;
  for (size_t j = 0; j < widths.size(); ++j) {
    const bool last = j + 1 == widths.size();
    Conv2dParams p = Conv2dParams::square(b.channels(x), widths[j], 3, 2);
    x = conv_bn(b, join_name(prefix, std::to_string(j)), x, p, !last);
  }
  return x;
}

FusionNodes bilateral_fusion(GraphBuilder& b, const std::string& prefix, int high, int low,
                             const BilateralFusionSpec& spec) {
  if (b.channels(high) != spec.high_channels || b.channels(low) != spec.low_channels) {
    throw ShapeError("fusion '" + prefix + "': branch widths " + std::to_string(b.channels(high)) + "/" +
                     std::to_string(b.channels(low)) + " do not match spec " +
                     std::to_string(spec.high_channels) + "/" + std::to_string(spec.low_channels));
  }
  FusionNodes out;
  int high_sum = high;
  int low_sum = low;
  if (spec.mode != FusionMode::None) {
    Conv2dParams compress = Conv2dParams::square(spec.low_channels, spec.high_channels, 1);
    int t = conv_bn(b, join_name(prefix, "l2h"), low, compress, false);
    t = b.resize_like(join_name(prefix, "l2h.resize"), t, high);
    high_sum = b.add(join_name(prefix, "high_add"), high, t);
  }
  if (spec.mode == FusionMode::Bilateral) {
    int t = downsample_chain(b, join_name(prefix, "h2l"), high, spec.resolved_h2l_widths());
    low_sum = b.add(join_name(prefix, "low_add"), low, t);
  }
  out.high = b.relu(join_name(prefix, "high_relu"), high_sum);
  out.low = b.relu(join_name(prefix, "low_relu"), low_sum);
  return out;
}

int dappm(GraphBuilder& b, const std::string& prefix, int in, const DappmSpec& spec) {
  spec.validate();
  if (b.channels(in) != spec.in_channels) {
    throw ShapeError("dappm '" + prefix + "': expects " + std::to_string(spec.in_channels) + " channels, got " +
                     std::to_string(b.channels(in)));
  }
  const int64_t cin = spec.in_channels, cb = spec.branch_channels;
  std::vector<int> ys;
  ys.push_back(bn_relu_conv(b, join_name(prefix, "scale1"), in, Conv2dParams::square(cin, cb, 1)));
  for (int i = 2; i <= spec.scales; ++i) {
    const std::string scale = join_name(prefix, "scale" + std::to_string(i));
    int pooled = i < spec.scales ? b.avg_pool(join_name(scale, "pool"), in, DappmSpec::pool_for_scale(i))
                                 : b.global_avg_pool(join_name(scale, "pool"), in);
    int t = bn_relu_conv(b, scale, pooled, Conv2dParams::square(cin, cb, 1));
    t = b.resize_like(join_name(scale, "up"), t, in);
    t = b.add(join_name(scale, "add"), t, ys.back());
    ys.push_back(bn_relu_conv(b, join_name(scale, "fuse"), t, Conv2dParams::square(cb, cb, 3)));
  }
  int cat = b.concat(join_name(prefix, "concat"), ys);
  int compressed = bn_relu_conv(b, join_name(prefix, "compress"), cat,
                                Conv2dParams::square(cb * spec.scales, spec.out_channels, 1));
  int shortcut = bn_relu_conv(b, join_name(prefix, "shortcut"), in, Conv2dParams::square(cin, spec.out_channels, 1));
  return b.add(join_name(prefix, "add"), compressed, shortcut);
}

int seg_head(GraphBuilder& b, const std::string& prefix, int in, const HeadSpec& spec) {
  if (spec.num_classes < 1) throw ValueError("segmentation head: num_classes must be >= 1");
  if (b.channels(in) != spec.in_channels) {
    throw ShapeError("head '" + prefix + "': expects " + std::to_string(spec.in_channels) + " channels, got " +
                     std::to_string(b.channels(in)));
  }
  int x = b.conv(join_name(prefix, "conv3x3"), in, Conv2dParams::square(spec.in_channels, spec.mid_channels, 3));
  x = b.batch_norm(join_name(prefix, "bn"), x);
  x = b.relu(join_name(prefix, "relu"), x);
  return b.conv(join_name(prefix, "conv1x1"), x,
                Conv2dParams::square(spec.mid_channels, spec.num_classes, 1, 1, /*bias=*/true));
}

}  // namespace blocks

namespace {

template <typename Emit>
Graph single_block_graph(const std::string& name, int64_t in_channels, Emit emit) {
  GraphBuilder b(name);
  int x = b.input(in_channels);
  b.mark_output("out", emit(b, x));
  return std::move(b).finish();
}

}  // namespace

Graph residual_basic_graph(const ResidualBasicSpec& spec) {
  return single_block_graph("residual_basic", spec.in_channels,
                            [&](GraphBuilder& b, int x) { return blocks::residual_basic(b, "", x, spec); });
}

Graph bottleneck_graph(const BottleneckSpec& spec) {
  return single_block_graph("bottleneck", spec.in_channels,
                            [&](GraphBuilder& b, int x) { return blocks::bottleneck(b, "", x, spec); });
}

Graph dappm_graph(const DappmSpec& spec) {
  return single_block_graph("dappm", spec.in_channels,
                            [&](GraphBuilder& b, int x) { return blocks::dappm(b, "", x, spec); });
}

Graph seg_head_graph(const HeadSpec& spec) {
  return single_block_graph("seg_head", spec.in_channels,
                            [&](GraphBuilder& b, int x) { return blocks::seg_head(b, "", x, spec); });
}

namespace {

template <typename T>
BasicTensor<T> run_block(const Graph& g, const BasicTensor<T>& input, const ParamSet<T>& params) {
  require_params(g, params);
  return run_reference(g, params, input).at("out");
}

template <typename T>
BasicTensor<T> conv_bn_apply(const BasicTensor<T>& x, const std::string& prefix, const Conv2dParams& p,
                             const ParamSet<T>& params) {
  auto get = [&](const std::string& leaf) -> const BasicTensor<T>& {
    const std::string name = join_name(prefix, leaf);
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  };
  const auto& w = get("conv.weight");
  if (w.shape() != p.weight_shape()) {
    throw ShapeError("parameter '" + join_name(prefix, "conv.weight") + "' has shape " + w.shape().str() +
                     ", expected " + p.weight_shape().str());
  }
  auto vec = [&](const std::string& leaf) {
    const auto d = get(leaf).data();
    return std::vector<T>(d.begin(), d.end());
  };
  BatchNormParams<T> bn{vec("bn.gamma"), vec("bn.beta"), vec("bn.mean"), vec("bn.var"), 1e-5};
  return ops::batch_norm_infer(ops::conv2d(x, w, {}, p), bn);
}

}  // namespace

template <typename T>
BasicTensor<T> residual_basic(const BasicTensor<T>& input, const ResidualBasicSpec& spec, const ParamSet<T>& params) {
  return run_block(residual_basic_graph(spec), input, params);
}

template <typename T>
BasicTensor<T> bottleneck(const BasicTensor<T>& input, const BottleneckSpec& spec, const ParamSet<T>& params) {
  return run_block(bottleneck_graph(spec), input, params);
}

template <typename T>
BasicTensor<T> dappm(const BasicTensor<T>& input, const DappmSpec& spec, const ParamSet<T>& params) {
  return run_block(dappm_graph(spec), input, params);
}

template <typename T>
BasicTensor<T> seg_head(const BasicTensor<T>& input, const HeadSpec& spec, const ParamSet<T>& params) {
  return run_block(seg_head_graph(spec), input, params);
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> bilateral_fusion(const BasicTensor<T>& high, const BasicTensor<T>& low,
                                                           const BilateralFusionSpec& spec,
                                                           const ParamSet<T>& params) {
  if (high.rank() != 4 || low.rank() != 4) throw ShapeError("bilateral_fusion: inputs must be rank 4");
  if (high.c() != spec.high_channels || low.c() != spec.low_channels) {
    throw ShapeError("bilateral_fusion: branch channels " + std::to_string(high.c()) + "/" +
                     std::to_string(low.c()) + " do not match spec " + std::to_string(spec.high_channels) + "/" +
                     std::to_string(spec.low_channels));
  }
  const int64_t ratio = int64_t{1} << spec.downsample_steps;
  if (low.h() * ratio != high.h() || low.w() * ratio != high.w() || low.n() != high.n()) {
    throw ShapeError("bilateral_fusion: low branch " + low.shape().str() + " is not high branch " +
                     high.shape().str() + " downsampled by " + std::to_string(ratio));
  }
  BasicTensor<T> high_sum = high;
  BasicTensor<T> low_sum = low;
  if (spec.mode != FusionMode::None) {
    auto t = conv_bn_apply(low, "l2h", Conv2dParams::square(spec.low_channels, spec.high_channels, 1), params);
    high_sum = ops::add(high, ops::bilinear_resize(t, high.h(), high.w()));
  }
  if (spec.mode == FusionMode::Bilateral) {
    const auto widths = spec.resolved_h2l_widths();
    BasicTensor<T> t = high;
    for (size_t j = 0; j < widths.size(); ++j) {
      t = conv_bn_apply(t, "h2l." + std::to_string(j), Conv2dParams::square(t.c(), widths[j], 3, 2), params);
      if (j + 1 < widths.size()) t = ops::relu(t);
    }
    low_sum = ops::add(low, t);
  }
  return {ops::relu(high_sum), ops::relu(low_sum)};
}

std::vector<ParamSlot> bilateral_fusion_slots(const BilateralFusionSpec& spec) {
  std::vector<ParamSlot> slots;
  auto conv_bn_slots = [&](const std::string& prefix, Shape w, int64_t c) {
    slots.push_back({prefix + ".conv.weight", w, SlotRole::Weight});
    slots.push_back({prefix + ".bn.gamma", Shape{c}, SlotRole::Gamma});
    slots.push_back({prefix + ".bn.beta", Shape{c}, SlotRole::Beta});
    slots.push_back({prefix + ".bn.mean", Shape{c}, SlotRole::RunningMean});
    slots.push_back({prefix + ".bn.var", Shape{c}, SlotRole::RunningVar});
  };
  if (spec.mode != FusionMode::None) {
    conv_bn_slots("l2h", Shape{spec.high_channels, spec.low_channels, 1, 1}, spec.high_channels);
  }
  if (spec.mode == FusionMode::Bilateral) {
    int64_t c = spec.high_channels;
    const auto widths = spec.resolved_h2l_widths();
    for (size_t j = 0; j < widths.size(); ++j) {
      conv_bn_slots("h2l." + std::to_string(j), Shape{widths[j], c, 3, 3}, widths[j]);
      c = widths[j];
    }
  }
  return slots;
}

#define DDRNET_INSTANTIATE_BLOCKS(T)                                                                          \
  template BasicTensor<T> residual_basic(const BasicTensor<T>&, const ResidualBasicSpec&, const ParamSet<T>&); \
  template BasicTensor<T> bottleneck(const BasicTensor<T>&, const BottleneckSpec&, const ParamSet<T>&);        \
  template BasicTensor<T> dappm(const BasicTensor<T>&, const DappmSpec&, const ParamSet<T>&);                  \
  template BasicTensor<T> seg_head(const BasicTensor<T>&, const HeadSpec&, const ParamSet<T>&);                \
  template std::pair<BasicTensor<T>, BasicTensor<T>> bilateral_fusion(                                         \
      const BasicTensor<T>&, const BasicTensor<T>&, const BilateralFusionSpec&, const ParamSet<T>&);

DDRNET_INSTANTIATE_BLOCKS(float)
DDRNET_INSTANTIATE_BLOCKS(double)

#undef DDRNET_INSTANTIATE_BLOCKS

}  // namespace ddrnet
