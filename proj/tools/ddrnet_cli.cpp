#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ddrnet/analyzer.hpp"
#include "ddrnet/checkpoint.hpp"
#include "ddrnet/engine.hpp"
#include "ddrnet/gradient_suite.hpp"
#include "ddrnet/image.hpp"
#include "ddrnet/model_zoo.hpp"
#include "ddrnet/parallel.hpp"

using namespace ddrnet;
using json = nlohmann::ordered_json;

namespace {

// exit codes, see docs/cli.md
enum Exit : int {
  kOk = 0,
  kFailed = 1,
  kUsage = 2,
  kUnknownVariant = 3,
  kIo = 4,
  kFormat = 5,
  kShape = 6,
  kValue = 7,
};

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  int threads = 0;
  bool json = false;

  std::string variant;
  std::string task;
  std::string input;
  int64_t classes = 0;
  std::string convention = "mac1";
  uint64_t seed = 0;
  std::string out;
  std::string weights;
  std::string image;
  std::string palette;
  bool ms_flip = false;
  std::vector<double> scales;
  std::vector<double> mean{kImageNetMean.begin(), kImageNetMean.end()};
  std::vector<double> std{kImageNetStd.begin(), kImageNetStd.end()};
  int warmup = 1;
  int iters = 5;
  bool no_fold = false;
  int samples = 256;
};

json shape_json(const Shape& s) {
  json a = json::array();
  for (int64_t d : s.dims()) a.push_back(d);
  return a;
}

bool is_seg(const std::string& task) { return task == "seg"; }

std::string task_or(const Options& o, const char* fallback) { return o.task.empty() ? fallback : o.task; }

// "HxW" -> {H, W}
std::pair<int64_t, int64_t> parse_hw(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    size_t a = 0, b = 0;
    const long long h = std::stoll(text.substr(0, x), &a);
    const long long w = std::stoll(text.substr(x + 1), &b);
    if (a != x || b != text.size() - x - 1 || h < 1 || w < 1) throw std::invalid_argument("");
    return {h, w};
  } catch (const std::logic_error&) {
    throw UsageError("--input expects HxW with positive integers, got '" + text + "'");
  }
}

std::array<double, 3> triple(const std::vector<double>& v, const char* flag) {
  if (v.size() != 3) throw UsageError(std::string(flag) + " expects three comma-separated values");
  return {v[0], v[1], v[2]};
}

std::string default_input(const std::string& task) { return is_seg(task) ? "1024x2048" : "224x224"; }

int64_t default_classes(const std::string& task) { return is_seg(task) ? 19 : 1000; }

Graph build(const VariantConfig& base, const std::string& task, int64_t classes) {
  if (is_seg(task)) {
    VariantConfig c = base;
    c.num_classes = classes;
    return build_segmenter(c);
  }
  return build_classifier(base, classes);
}

Shape input_shape(const Graph& g, const std::string& text) {
  const auto [h, w] = parse_hw(text);
  const Shape s{1, g.input_channels(), h, w};
  g.check_input_shape(s);
  return s;
}

void print(const Options& o, const json& doc, const std::string& text) {
  if (o.json) {
    std::cout << doc.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

std::string config_line(const VariantConfig& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "stem %lld | stages %lld/%lld/%lld/%lld | high %lld | blocks %d/%d/%d/%d | conv4 x%d | dappm %lld x%d | "
                "head %lld | fusion %s\n",
                (long long)c.stem_width, (long long)c.stage_widths[0], (long long)c.stage_widths[1],
                (long long)c.stage_widths[2], (long long)c.stage_widths[3], (long long)c.high_width,
                c.blocks_per_stage[0], c.blocks_per_stage[1], c.blocks_per_stage[2], c.blocks_per_stage[3],
                c.conv4_repeats, (long long)c.dappm_branch_width, c.dappm_scales, (long long)c.head_mid_width,
                std::string(to_string(c.fusion_mode)).c_str());
  return buf;
}

int cmd_list(const Options& o) {
  json doc = json::array();
  std::string text;
  for (const auto& v : list_variants()) {
    doc.push_back({{"name", v.name}, {"conv4_repeats", v.conv4_repeats}, {"high_width", v.high_width}});
    text += v.name + ": " + config_line(v);
  }
  print(o, doc, text);
  return kOk;
}

int cmd_describe(const Options& o) {
  const VariantConfig config = find_variant(o.variant);
  const std::string task = task_or(o, "cls");
  const int64_t classes = o.classes ? o.classes : default_classes(task);
  const Graph g = build(config, task, classes);
  const Shape in = input_shape(g, o.input.empty() ? default_input(task) : o.input);
  const auto shapes = infer_shapes(g, in);

  json nodes = json::array();
  std::ostringstream text;
  text << g.name() << "  input " << in.str() << "\n" << config_line(config);
  char line[256];
  std::snprintf(line, sizeof line, "%-40s %-14s %s\n", "node", "kind", "output");
  text << line;
  for (const Node& n : g.nodes()) {
    const Shape& s = shapes[static_cast<size_t>(n.id)];
    std::snprintf(line, sizeof line, "%-40s %-14s %s\n", n.name.c_str(), std::string(to_string(n.kind)).c_str(),
                  s.str().c_str());
    text << line;
    json inputs = json::array();
    for (int i : n.inputs) inputs.push_back(g.node(i).name);
    nodes.push_back({{"name", n.name}, {"kind", to_string(n.kind)}, {"inputs", inputs}, {"output", shape_json(s)}});
  }
  json outputs = json::object();
  for (const auto& out : g.outputs()) outputs[out.name] = shape_json(shapes[static_cast<size_t>(out.node)]);
  for (const auto& out : g.outputs()) {
    text << "output " << out.name << ": " << shapes[static_cast<size_t>(out.node)].str() << "\n";
  }
  json doc = {{"graph", g.name()}, {"variant", config.name},      {"task", task},
              {"input", shape_json(in)}, {"conv4_repeats", config.conv4_repeats}, {"nodes", nodes},
              {"outputs", outputs}};
  print(o, doc, text.str());
  return kOk;
}

int cmd_analyze(const Options& o) {
  const FlopConvention conv = parse_convention(o.convention);
  const VariantConfig config = find_variant(o.variant);
  const std::string task = task_or(o, "seg");
  const int64_t classes = o.classes ? o.classes : default_classes(task);
  const Graph g = build(config, task, classes);
  const Shape in = input_shape(g, o.input.empty() ? default_input(task) : o.input);
  const CostReport r = count_flops(g, in, conv);

  json nodes = json::array();
  for (const auto& n : r.nodes) {
    nodes.push_back({{"name", n.name},
                     {"kind", to_string(n.kind)},
                     {"output", shape_json(n.output)},
                     {"params", n.params},
                     {"macs", n.macs},
                     {"elementwise", n.elementwise}});
  }
  json doc = {{"graph", r.graph},
              {"variant", config.name},
              {"task", task},
              {"input", shape_json(r.input)},
              {"convention", to_string(r.convention)},
              {"total_params", r.total_params},
              {"total_macs", r.total_macs},
              {"total_elementwise", r.total_elementwise},
              {"gflops", r.gflops()},
              {"nodes", nodes}};
  print(o, doc, summarize(r));
  return kOk;
}

int cmd_init(const Options& o) {
  const VariantConfig config = find_variant(o.variant);
  const std::string task = task_or(o, "seg");
  const int64_t classes = o.classes ? o.classes : default_classes(task);
  const Graph g = build(config, task, classes);
  const ParamSet<float> params = he_init(g, o.seed);
  save_checkpoint(o.out, params, &g);
  CheckpointEntries entries;
  for (const auto& s : g.slots()) entries.emplace_back(s.name, params.at(s.name));
  json doc = {{"graph", g.name()},
              {"seed", o.seed},
              {"path", o.out},
              {"slots", g.slots().size()},
              {"trainable_params", count_params(g)},
              {"bytes", checkpoint_size(entries)}};
  print(o, doc,
        "wrote " + o.out + ": " + std::to_string(g.slots().size()) + " slots, " + std::to_string(count_params(g)) +
            " trainable params (" + g.name() + ", seed " + std::to_string(o.seed) + ")\n");
  return kOk;
}

int cmd_infer(const Options& o) {
  const VariantConfig config = find_variant(o.variant);
  const auto mean = triple(o.mean, "--mean");
  const auto stdv = triple(o.std, "--std");
  const int64_t classes = o.classes ? o.classes : default_classes("seg");
  const std::vector<double> scales = !o.scales.empty() ? o.scales : o.ms_flip ? default_tta_scales() : std::vector{1.0};
  for (double s : scales) {
    if (!(s > 0.0)) throw UsageError("--scales must be positive");
  }

  std::optional<Palette> palette;
  if (!o.palette.empty()) {
    palette = read_palette(o.palette);
    if (static_cast<int64_t>(palette->size()) < classes) {
      throw ValueError("palette has " + std::to_string(palette->size()) + " colours for " + std::to_string(classes) +
                       " classes");
    }
  } else if (classes > 256) {
    throw ValueError("P5 masks hold at most 256 classes; pass --palette");
  }
  const Image img = read_netpbm(o.image);
  if (img.channels != 3) throw FormatError(o.image + ": expected a colour (P6) image");
  VariantConfig c = config;
  c.num_classes = classes;
  const Graph g = build_segmenter(c);
  const ParamSet<float> params = load_checkpoint(o.weights, g);

  const CompiledModel model = compile(g, params);
  const Tensor prob = ms_flip_infer(model, image_to_tensor(img, mean, stdv), scales, o.ms_flip);
  const IndexTensor mask = ops::argmax_channels(prob);
  write_netpbm(o.out, palette ? mask_to_ppm(mask, *palette) : mask_to_pgm(mask));

  std::vector<int64_t> hist(static_cast<size_t>(classes), 0);
  for (int32_t v : mask.data()) ++hist[static_cast<size_t>(v)];
  json doc = {{"image", o.image},
              {"width", img.width},
              {"height", img.height},
              {"classes", classes},
              {"scales", scales},
              {"flip", o.ms_flip},
              {"passes", scales.size() * (o.ms_flip ? 2 : 1)},
              {"out", o.out},
              {"format", palette ? "P6" : "P5"},
              {"class_pixels", hist}};
  std::string text = "wrote " + o.out + " (" + (palette ? "P6" : "P5") + ", " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + ", " + std::to_string(scales.size() * (o.ms_flip ? 2 : 1)) +
                     " passes)\n";
  print(o, doc, text);
  return kOk;
}

int cmd_bench(const Options& o) {
  if (o.warmup < 0) throw UsageError("--warmup must be >= 0");
  if (o.iters < 1) throw UsageError("--iters must be >= 1");
  const VariantConfig config = find_variant(o.variant);
  const std::string task = task_or(o, "seg");
  const int64_t classes = o.classes ? o.classes : default_classes(task);
  const Graph g = build(config, task, classes);
  const Shape in = input_shape(g, o.input.empty() ? default_input(task) : o.input);
  const ParamSet<float> params = o.weights.empty() ? he_init(g, o.seed) : load_checkpoint(o.weights, g);
  CompileOptions co;
  co.fold_batchnorm = !o.no_fold;
  const CompiledModel model = compile(g, params, co);
  const BenchReport r = benchmark(model, in, o.warmup, o.iters, o.seed);
  const double gflops = count_flops(g, in).gflops();

  json doc = {{"graph", g.name()},    {"input", shape_json(r.input)}, {"folded", r.folded},
              {"threads", r.threads}, {"warmup", r.warmup_iters},     {"iters", r.timed_iters},
              {"mean_ms", r.mean_ms}, {"median_ms", r.median_ms},     {"min_ms", r.min_ms},
              {"fps", r.fps},         {"gflops", gflops},             {"samples_ms", r.samples_ms}};
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s  input %s  batch 1  %s  threads %d\nwarmup %d  iters %d\nlatency mean %.2f ms  median %.2f ms  "
                "min %.2f ms\nthroughput %.3f FPS  (%.2f GFLOPs/frame)\n",
                g.name().c_str(), r.input.str().c_str(), r.folded ? "bn-folded" : "unfolded", r.threads,
                r.warmup_iters, r.timed_iters, r.mean_ms, r.median_ms, r.min_ms, r.fps, gflops);
  print(o, doc, buf);
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  if (o.samples < 1) throw UsageError("--samples must be >= 1");
  GradientSuiteOptions go;
  go.seed = o.seed;
  go.samples = o.samples;
  const GradientSuiteReport r = run_gradient_suite(go);
  json failures = json::array();
  for (const auto& e : r.fd.entries) {
    if (!e.skipped && e.rel_error > r.fd.tolerance) {
      failures.push_back({{"param", e.param.name}, {"index", e.param.index}, {"analytic", e.analytic},
                          {"numeric", e.numeric}, {"rel_error", e.rel_error}});
    }
  }
  json doc = {{"seed", o.seed},
              {"trainable_params", r.trainable_params},
              {"loss", {{"main", r.loss_main}, {"aux", r.loss_aux}, {"total", r.loss_total}}},
              {"loss_agreement", r.loss_agreement},
              {"checked", r.fd.checked},
              {"skipped", r.fd.skipped},
              {"max_rel_error", r.fd.max_rel_error},
              {"tolerance", r.fd.tolerance},
              {"step", r.fd.step},
              {"linearity_error", r.linearity_error},
              {"seconds", r.seconds},
              {"pass", r.pass},
              {"failures", failures}};
  print(o, doc, r.str());
  if (!r.pass) {
    std::cerr << "ddrnet: gradient check failed\n";
    return kFailed;
  }
  return kOk;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n') c = ';';
  }
  return s;
}

int fail(int code, const std::string& kind, const std::string& what) {
  std::cerr << "ddrnet: " << kind << ": " << one_line(what) << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"DDRNet model tool"};
  app.name("ddrnet");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--threads", o.threads, "worker threads (default: hardware concurrency)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--json", o.json, "emit a JSON document instead of text");

  const std::vector<std::string> tasks{"seg", "cls"};
  auto add_task = [&](CLI::App* sub) {
    sub->add_option("--task", o.task, "seg (default) or cls")->check(CLI::IsMember(tasks));
    sub->add_option("--classes", o.classes, "output classes (default 19 seg / 1000 cls)")->check(CLI::PositiveNumber);
  };

  auto* list = app.add_subcommand("list", "list the named variants");

  auto* describe = app.add_subcommand("describe", "layer table with output shapes");
  describe->add_option("variant", o.variant)->required();
  describe->add_option("--task", o.task, "cls (default) or seg")->check(CLI::IsMember(tasks));
  describe->add_option("--classes", o.classes)->check(CLI::PositiveNumber);
  describe->add_option("--input", o.input, "HxW (default 224x224 cls, 1024x2048 seg)");

  auto* analyze = app.add_subcommand("analyze", "parameter and FLOP report");
  analyze->add_option("variant", o.variant)->required();
  add_task(analyze);
  analyze->add_option("--input", o.input, "HxW (default 1024x2048 seg, 224x224 cls)");
  analyze->add_option("--convention", o.convention, "mac1 or mac2")
      ->check(CLI::IsMember({"mac1", "mac2"}))
      ->capture_default_str();

  auto* init = app.add_subcommand("init", "He-initialised checkpoint");
  init->add_option("variant", o.variant)->required();
  init->add_option("--seed", o.seed)->capture_default_str();
  init->add_option("-o,--out", o.out, "output .ddrw file")->required();
  init->add_option("--task", o.task, "seg (default) or cls")->check(CLI::IsMember(tasks));
  init->add_option("--classes", o.classes)->check(CLI::PositiveNumber);

  auto* infer = app.add_subcommand("infer", "segment a P6 image into a class mask");
  infer->add_option("--variant", o.variant)->required();
  infer->add_option("--weights", o.weights, "DDRW checkpoint")->required();
  infer->add_option("--image", o.image, "P6 input")->required();
  infer->add_option("--out", o.out, "P5 class map, or P6 with --palette")->required();
  infer->add_flag("--ms-flip", o.ms_flip, "multi-scale + horizontal flip averaging");
  infer->add_option("--scales", o.scales, "scale list (default 0.5..2.0 with --ms-flip, else 1)")->delimiter(',');
  infer->add_option("--palette", o.palette, "text file, one 'R G B' per class");
  infer->add_option("--classes", o.classes)->check(CLI::PositiveNumber);
  infer->add_option("--mean", o.mean, "per-channel mean, r,g,b")->delimiter(',')->capture_default_str();
  infer->add_option("--std", o.std, "per-channel std, r,g,b")->delimiter(',')->capture_default_str();

  auto* bench = app.add_subcommand("bench", "batch-1 latency");
  bench->add_option("--variant", o.variant)->required();
  add_task(bench);
  bench->add_option("--input", o.input, "HxW (default 1024x2048 seg, 224x224 cls)");
  bench->add_option("--warmup", o.warmup)->capture_default_str();
  bench->add_option("--iters", o.iters)->capture_default_str();
  bench->add_flag("--no-fold", o.no_fold, "keep batch norms as separate nodes");
  bench->add_option("--weights", o.weights, "DDRW checkpoint (default: He init)");
  bench->add_option("--seed", o.seed)->capture_default_str();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the micro network");
  gradcheck->add_option("--seed", o.seed)->capture_default_str();
  gradcheck->add_option("--samples", o.samples)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, "usage", std::string(e.what()) + " (run with --help)");
  }

  try {
    if (o.threads > 0) set_num_threads(o.threads);
    if (*list) return cmd_list(o);
    if (*describe) return cmd_describe(o);
    if (*analyze) return cmd_analyze(o);
    if (*init) return cmd_init(o);
    if (*infer) return cmd_infer(o);
    if (*bench) return cmd_bench(o);
    if (*gradcheck) return cmd_gradcheck(o);
  } catch (const UsageError& e) {
    return fail(kUsage, "usage", e.what());
  } catch (const UnknownVariantError& e) {
    return fail(kUnknownVariant, "unknown variant", e.what());
  } catch (const IoError& e) {
    return fail(kIo, "io", e.what());
  } catch (const FormatError& e) {
    return fail(kFormat, "format", e.what());
  } catch (const SlotMismatchError& e) {
    const SlotDiff& d = e.diff;
    std::string first = !d.missing.empty() ? "missing " + d.missing.front()
                        : !d.extra.empty() ? "extra " + d.extra.front()
                                           : "mis-shaped " + d.misshaped.front();
    std::string head = std::string(e.what()).substr(0, std::string(e.what()).find('\n'));
    if (!head.empty() && head.back() == ':') head.pop_back();
    return fail(kShape, "shape",
                head + ": " + std::to_string(d.missing.size()) + " missing, " + std::to_string(d.extra.size()) +
                    " extra, " + std::to_string(d.misshaped.size()) + " mis-shaped slots (first: " + first + ")");
  } catch (const ShapeError& e) {
    return fail(kShape, "shape", e.what());
  } catch (const ValueError& e) {
    return fail(kValue, "value", e.what());
  } catch (const std::exception& e) {
    return fail(kFailed, "error", e.what());
  }
  return kFailed;
}
