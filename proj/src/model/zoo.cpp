#include "ddrnet/model_zoo.hpp"

namespace ddrnet {

void VariantConfig::validate() const {
  auto positive = [&](int64_t v, const char* what) {
    if (v < 1) throw ShapeError("variant '" + name + "': " + what + " must be >= 1");
  };
  positive(stem_width, "stem_width");
  for (int64_t w : stage_widths) positive(w, "stage width");
  positive(high_width, "high_width");
  for (int b : blocks_per_stage) positive(b, "blocks per stage");
  positive(conv4_repeats, "conv4_repeats");
  positive(dappm_branch_width, "dappm_branch_width");
  positive(head_mid_width, "head_mid_width");
  positive(classifier_width, "classifier_width");
  if (classifier_fusion_mid_width < 0) throw ShapeError("variant '" + name + "': negative fusion mid width");
  if (num_classes < 1) throw ValueError("variant '" + name + "': num_classes must be >= 1");
  if (dappm_scales < 2) throw ValueError("variant '" + name + "': dappm needs at least 2 scales");
  // High-to-low chains double the width at every stride-2 step.
  if (stage_widths[2] != 2 * high_width) {
    throw ShapeError("variant '" + name + "': conv4 low width " + std::to_string(stage_widths[2]) +
                     " must be twice the high width " + std::to_string(high_width));
  }
  if (stage_widths[3] != 4 * high_width) {
    throw ShapeError("variant '" + name + "': conv5 low width " + std::to_string(stage_widths[3]) +
                     " must be four times the high width " + std::to_string(high_width));
  }
}

const std::vector<VariantConfig>& list_variants() {
  static const std::vector<VariantConfig> variants = [] {
    std::vector<VariantConfig> v;
    VariantConfig slim;
    slim.name = "ddrnet-23-slim";
    v.push_back(slim);

    VariantConfig d23 = slim;
    d23.name = "ddrnet-23";
    d23.stem_width = 64;
    d23.stage_widths = {64, 128, 256, 512};
    d23.high_width = 128;
    d23.head_mid_width = 128;
    d23.classifier_width = 2048;
    v.push_back(d23);

    VariantConfig d39 = d23;
    d39.name = "ddrnet-39";
    d39.blocks_per_stage = {3, 4, 3, 3};
    d39.conv4_repeats = 2;
    d39.head_mid_width = 256;
    v.push_back(d39);

    VariantConfig wide = d39;
    wide.name = "ddrnet-39-1.5x";
    wide.stem_width = 96;
    wide.stage_widths = {96, 192, 384, 768};
    wide.high_width = 192;
    wide.classifier_width = 1024;
    wide.classifier_fusion_mid_width = 384;
    v.push_back(wide);
    return v;
  }();
  return variants;
}

VariantConfig micro_variant() {
  VariantConfig c;
  c.name = "ddrnet-micro";
  c.stem_width = 4;
  c.stage_widths = {4, 8, 16, 32};
  c.high_width = 8;
  c.blocks_per_stage = {1, 1, 1, 1};
  c.conv4_repeats = 1;
  c.dappm_branch_width = 16;
  c.dappm_scales = 3;
  c.head_mid_width = 8;
  c.classifier_width = 64;
  c.num_classes = 3;
  return c;
}

VariantConfig find_variant(std::string_view name) {
  for (const auto& v : list_variants()) {
    if (v.name == name) return v;
  }
  if (name == "ddrnet-micro") return micro_variant();
  std::string known;
  for (const auto& v : list_variants()) known += (known.empty() ? "" : ", ") + v.name;
  throw UnknownVariantError("unknown variant '" + std::string(name) + "' (known: " + known + ")");
}

namespace {

struct Trunk {
  int high = -1;
  int low = -1;
  int aux_tap = -1;
};

/// Stem through conv5_1 including both bottlenecks.
Trunk build_trunk(GraphBuilder& b, const VariantConfig& c, int low_bottleneck_stride) {
  Trunk t;
  const int in = b.input(3, low_bottleneck_stride == 2 ? 64 : 32);
  int x = blocks::conv_bn(b, "stem.0", in, Conv2dParams::square(3, c.stem_width, 3, 2), true);
  x = blocks::conv_bn(b, "stem.1", x, Conv2dParams::square(c.stem_width, c.stem_width, 3, 2), true);
  x = blocks::residual_stage(b, "conv2", x, c.stage_widths[0], c.blocks_per_stage[0], 1);
  x = blocks::residual_stage(b, "conv3", x, c.stage_widths[1], c.blocks_per_stage[1], 2);

  int high = x;
  int low = x;
  for (int rep = 0; rep < c.conv4_repeats; ++rep) {
    const std::string r = std::to_string(rep);
    low = blocks::residual_stage(b, "conv4." + r + ".low", low, c.stage_widths[2], c.blocks_per_stage[2],
                                 rep == 0 ? 2 : 1);
    high = blocks::residual_stage(b, "conv4." + r + ".high", high, c.high_width, c.blocks_per_stage[2], 1);
    BilateralFusionSpec fs{c.high_width, c.stage_widths[2], 1, c.fusion_mode, {}};
    const FusionNodes f = blocks::bilateral_fusion(b, "fusion4." + r, high, low, fs);
    high = f.high;
    low = f.low;
  }
  t.aux_tap = high;

  low = blocks::residual_stage(b, "conv5.low", low, c.stage_widths[3], c.blocks_per_stage[3], 2);
  high = blocks::residual_stage(b, "conv5.high", high, c.high_width, c.blocks_per_stage[3], 1);
  BilateralFusionSpec fs{c.high_width, c.stage_widths[3], 2, c.fusion_mode, {}};
  const FusionNodes f = blocks::bilateral_fusion(b, "fusion5", high, low, fs);

  t.high = blocks::bottleneck(b, "bottleneck.high", f.high, {c.high_width, c.high_width, 1});
  t.low = blocks::bottleneck(b, "bottleneck.low", f.low, {c.stage_widths[3], c.stage_widths[3], low_bottleneck_stride});
  return t;
}

}  // namespace

Graph build_classifier(const VariantConfig& config, int64_t num_outputs) {
  config.validate();
  GraphBuilder b(config.name + "/cls");
  const Trunk t = build_trunk(b, config, 1);

  const int64_t mid = config.classifier_fusion_mid_width > 0 ? config.classifier_fusion_mid_width
                                                             : 2 * config.high_out_width();
  int down = blocks::downsample_chain(b, "classifier.h2l", t.high, {mid, config.low_out_width()});
  int x = b.add("classifier.add", t.low, down);
  x = b.relu("classifier.relu", x);
  x = blocks::conv_bn(b, "classifier.conv1x1", x,
                      Conv2dParams::square(config.low_out_width(), config.classifier_width, 1), true);
  x = b.global_avg_pool("classifier.pool", x);
  x = b.linear("classifier.fc", x, num_outputs, true);
  b.mark_output("logits", x);
  return std::move(b).finish();
}

Graph build_segmenter(const VariantConfig& config, bool with_aux) {
  config.validate();
  GraphBuilder b(config.name + "/seg");
  const Trunk t = build_trunk(b, config, 2);

  DappmSpec ds{config.low_out_width(), config.dappm_branch_width, config.high_out_width(), config.dappm_scales};
  int context = blocks::dappm(b, "dappm", t.low, ds);
  context = b.resize_like("final.up", context, t.high);
  int x = b.add("final.add", t.high, context);
  x = b.relu("final.relu", x);
  const int logits =
      blocks::seg_head(b, "head", x, {config.high_out_width(), config.head_mid_width, config.num_classes});
  b.mark_output("logits", logits);
  if (with_aux) {
    const int aux =
        blocks::seg_head(b, "aux_head", t.aux_tap, {config.high_width, config.head_mid_width, config.num_classes});
    b.mark_output("aux_logits", aux);
  }
  return std::move(b).finish();
}

}  // namespace ddrnet
