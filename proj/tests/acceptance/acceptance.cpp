// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria (0 = all pass). Optional arguments select criteria by number.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "../unit/oracles.hpp"
#include "ddrnet/analyzer.hpp"
#include "ddrnet/checkpoint.hpp"
#include "ddrnet/engine.hpp"
#include "ddrnet/gradient_suite.hpp"
#include "ddrnet/loss.hpp"
#include "ddrnet/model_zoo.hpp"
#include "ddrnet/ops.hpp"
#include "ddrnet/parallel.hpp"

using namespace ddrnet;
using Clock = std::chrono::steady_clock;

namespace {

double cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

double rel(double got, double want) { return std::abs(got - want) / want; }

Graph segmenter(const std::string& name) { return build_segmenter(find_variant(name)); }

const std::vector<std::string> kSegVariants{"ddrnet-23-slim", "ddrnet-23", "ddrnet-39"};
const std::vector<std::string> kClsVariants{"ddrnet-23-slim", "ddrnet-23", "ddrnet-39", "ddrnet-39-1.5x"};

// ---------------------------------------------------------------- 1
Outcome parameter_counts() {
  Outcome o;
  const auto t0 = Clock::now();
  const double cls_target[] = {7.57e6, 28.22e6, 40.13e6, 76.86e6};  // classification table
  const double seg_target[] = {5.7e6, 20.1e6, 32.3e6};               // Cityscapes table
  for (size_t i = 0; i < kClsVariants.size(); ++i) {
    const auto n = static_cast<double>(count_params(build_classifier(find_variant(kClsVariants[i]))));
    o.note(fmt("cls %s %.3fM (%+.2f%%)", kClsVariants[i].c_str(), n / 1e6, 100 * (n - cls_target[i]) / cls_target[i]));
    o.require(rel(n, cls_target[i]) <= 0.02, kClsVariants[i] + " classifier within 2%");
  }
  for (size_t i = 0; i < kSegVariants.size(); ++i) {
    const auto n = static_cast<double>(count_params(segmenter(kSegVariants[i])));
    o.note(fmt("seg %s %.3fM (%+.2f%%)", kSegVariants[i].c_str(), n / 1e6, 100 * (n - seg_target[i]) / seg_target[i]));
    o.require(rel(n, seg_target[i]) <= 0.02, kSegVariants[i] + " segmenter within 2%");
  }
  const double s = seconds_since(t0);
  o.note(fmt("%.3f s", s));
  o.require(s < 1.0, "runtime < 1 s");
  return o;
}

// ---------------------------------------------------------------- 2
Outcome flop_counts() {
  Outcome o;
  const auto t0 = Clock::now();
  const double cls_target[] = {0.98, 3.88, 6.95, 14.85};
  const double seg_target[] = {36.3, 143.1, 281.2};
  for (size_t i = 0; i < kClsVariants.size(); ++i) {
    const double g = count_flops(build_classifier(find_variant(kClsVariants[i])), Shape{1, 3, 224, 224}).gflops();
    o.note(fmt("cls %s %.3fG (%+.2f%%)", kClsVariants[i].c_str(), g, 100 * (g - cls_target[i]) / cls_target[i]));
    o.require(rel(g, cls_target[i]) <= 0.10, kClsVariants[i] + " classifier within 10%");
  }
  for (size_t i = 0; i < kSegVariants.size(); ++i) {
    const double g = count_flops(segmenter(kSegVariants[i]), Shape{1, 3, 1024, 2048}).gflops();
    o.note(fmt("seg %s %.3fG (%+.2f%%)", kSegVariants[i].c_str(), g, 100 * (g - seg_target[i]) / seg_target[i]));
    o.require(rel(g, seg_target[i]) <= 0.10, kSegVariants[i] + " segmenter within 10%");
  }
  const double s = seconds_since(t0);
  o.note(fmt("mac1, %.3f s", s));
  o.require(s < 1.0, "runtime < 1 s");
  return o;
}

// ---------------------------------------------------------------- 3
Outcome pyramid_ladder() {
  Outcome o;
  for (const auto& v : kSegVariants) {
    const Graph g = segmenter(v);
    const auto shapes = infer_shapes(g, Shape{1, 3, 1024, 1024});
    std::vector<int64_t> ladder;
    for (const auto& n : g.nodes()) {
      if (n.name == "dappm.scale1.bn") ladder.push_back(shapes[static_cast<size_t>(n.id)].h());
      if (n.kind == OpKind::AvgPool || n.kind == OpKind::GlobalAvgPool) {
        if (n.name.rfind("dappm.", 0) == 0) {
          const Shape& s = shapes[static_cast<size_t>(n.id)];
          o.require(s.h() == s.w(), v + " " + n.name + " square");
          ladder.push_back(s.h());
        }
      }
    }
    std::string text;
    for (int64_t e : ladder) text += (text.empty() ? "" : ",") + std::to_string(e);
    o.note(v + " [" + text + "]");
    o.require(ladder == std::vector<int64_t>{16, 8, 4, 2, 1}, v + " ladder is [16,8,4,2,1]");
  }
  return o;
}

// ---------------------------------------------------------------- 4
struct TableRow {
  const char* node;
  int64_t c, hw;
};

Outcome shape_suite() {
  Outcome o;
  // stage outputs at 224x224 for the two architectures listed stage by stage
  struct Arch {
    const char* variant;
    std::vector<TableRow> rows;
  };
  const std::vector<Arch> archs{
      {"ddrnet-23-slim",
       {{"stem.0.relu", 32, 112},
        {"conv2.1.relu", 32, 56},
        {"conv3.1.relu", 64, 28},
        {"fusion4.0.low_relu", 128, 14},
        {"fusion4.0.high_relu", 64, 28},
        {"bottleneck.low.relu", 512, 7},
        {"bottleneck.high.relu", 128, 28},
        {"classifier.conv1x1.relu", 1024, 7},
        {"classifier.fc", 1000, 1}}},
      {"ddrnet-39",
       {{"stem.0.relu", 64, 112},
        {"conv2.2.relu", 64, 56},
        {"conv3.3.relu", 128, 28},
        {"fusion4.0.low_relu", 256, 14},
        {"fusion4.1.low_relu", 256, 14},
        {"fusion4.1.high_relu", 128, 28},
        {"bottleneck.low.relu", 1024, 7},
        {"bottleneck.high.relu", 256, 28},
        {"classifier.conv1x1.relu", 2048, 7},
        {"classifier.fc", 1000, 1}}},
  };
  int checked = 0;
  for (const auto& a : archs) {
    const Graph g = build_classifier(find_variant(a.variant));
    const auto shapes = infer_shapes(g, Shape{1, 3, 224, 224});
    for (const auto& row : a.rows) {
      const Node* node = nullptr;
      for (const auto& n : g.nodes()) {
        if (n.name == row.node) node = &n;
      }
      if (!node) {
        o.require(false, std::string(a.variant) + " has node " + row.node);
        continue;
      }
      const Shape& s = shapes[static_cast<size_t>(node->id)];
      o.require(s == Shape({1, row.c, row.hw, row.hw}),
                fmt("%s %s = %s, want %lldx%lldx%lld", a.variant, row.node, s.str().c_str(), (long long)row.c,
                    (long long)row.hw, (long long)row.hw));
      ++checked;
    }
  }
  o.note(fmt("%d stage outputs checked", checked));
  for (const auto& v : kSegVariants) {
    const Graph g = segmenter(v);
    const Shape s = infer_shapes(g, Shape{1, 3, 1024, 2048})[static_cast<size_t>(g.output("logits"))];
    o.require(s == Shape({1, 19, 128, 256}), v + " logits at stride 8, got " + s.str());
  }
  o.note("segmenter logits 1x19x128x256 for 1024x2048 input (stride 8)");
  return o;
}

// ---------------------------------------------------------------- 5
Outcome bn_folding() {
  Outcome o;
  const Graph g = segmenter("ddrnet-23-slim");
  ParamSet<float> params = he_init(g, 21);
  randomize_batchnorm(g, params, 22);
  const Tensor x = oracle::random_tensor<float>(Shape{1, 3, 256, 256}, 23);

  const Tensor64 ref = run_reference(g, cast_params<double>(params), x.cast<double>()).at("logits");
  const CompiledModel folded = compile(g, params, {true, true});
  const CompiledModel unfolded = compile(g, params, {false, true});
  const double err = max_relative_error(run_forward(folded, x).at("logits"), ref);
  const double err_unfolded = max_relative_error(run_forward(unfolded, x).at("logits"), ref);
  o.note(fmt("folded vs reference %.2e (unfolded %.2e)", err, err_unfolded));
  o.require(err < 1e-5, "max relative error < 1e-5");

  // interleaved, process CPU time, best of N for each; 1% is the timing resolution
  std::vector<double> tf, tu;
  for (int i = 0; i < 15; ++i) {
    double t0 = cpu_seconds();
    run_forward(folded, x);
    tf.push_back(cpu_seconds() - t0);
    t0 = cpu_seconds();
    run_forward(unfolded, x);
    tu.push_back(cpu_seconds() - t0);
  }
  const double bf = *std::min_element(tf.begin(), tf.end());
  const double bu = *std::min_element(tu.begin(), tu.end());
  o.note(fmt("best of 15: folded %.2f ms, unfolded %.2f ms, ratio %.3f (%zu vs %zu steps)", bf * 1e3, bu * 1e3,
             bf / bu, folded.schedule().size(), unfolded.schedule().size()));
  o.require(bf <= bu * 1.01, "folded not slower (within 1%)");
  return o;
}

// ---------------------------------------------------------------- 6
Outcome conv_oracle() {
  Outcome o;
  // every distinct conv signature of the two stage-by-stage architectures at 224x224
  struct Sig {
    Conv2dParams p;
    int64_t h, w;
    bool operator<(const Sig& s) const {
      return std::tie(p.in_channels, p.out_channels, p.kh, p.sh, h, w) <
             std::tie(s.p.in_channels, s.p.out_channels, s.p.kh, s.p.sh, s.h, s.w);
    }
  };
  std::set<Sig> pool;
  for (const char* v : {"ddrnet-23-slim", "ddrnet-39"}) {
    const Graph g = build_classifier(find_variant(v));
    const auto shapes = infer_shapes(g, Shape{1, 3, 224, 224});
    for (const auto& n : g.nodes()) {
      if (n.kind != OpKind::Conv) continue;
      const Shape& in = shapes[static_cast<size_t>(n.inputs[0])];
      pool.insert({std::get<Conv2dParams>(n.attrs), in.h(), in.w()});
    }
  }
  const std::vector<Sig> sigs(pool.begin(), pool.end());
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<size_t> pick(0, sigs.size() - 1);
  double worst = 0;
  std::string worst_sig;
  const auto t0 = Clock::now();
  for (int i = 0; i < 50; ++i) {
    Sig s = sigs[pick(rng)];
    s.p.has_bias = true;
    const Tensor x = oracle::random_tensor<float>(Shape{1, s.p.in_channels, s.h, s.w}, 100 + i);
    const Tensor w = oracle::random_tensor<float>(s.p.weight_shape(), 200 + i, 0.1);
    const Tensor b = oracle::random_tensor<float>(Shape{s.p.out_channels}, 300 + i);
    const std::vector<float> bias(b.data().begin(), b.data().end());
    const Tensor y = conv2d_gemm(x, w, bias, s.p);
    const Tensor64 ref = oracle::conv(x.cast<double>(), w.cast<double>(), std::vector<double>(bias.begin(), bias.end()),
                                      s.p.sh, s.p.sw, s.p.ph, s.p.pw);
    const double e = max_relative_error(y, ref);
    if (e > worst) {
      worst = e;
      worst_sig = fmt("%lld->%lld k%d s%d @%lldx%lld", (long long)s.p.in_channels, (long long)s.p.out_channels, s.p.kh,
                      s.p.sh, (long long)s.h, (long long)s.w);
    }
  }
  o.note(fmt("50 draws from %zu signatures, max relative error %.2e (%s), %.1f s", sigs.size(), worst,
             worst_sig.c_str(), seconds_since(t0)));
  o.require(worst < 1e-5, "relative error < 1e-5");
  return o;
}

// ---------------------------------------------------------------- 7
Outcome gradient_suite() {
  Outcome o;
  const GradientSuiteReport r = run_gradient_suite();
  o.note(fmt("%d checked, %d skipped, max rel %.2e, linearity %.2e, %.1f s", r.fd.checked, r.fd.skipped,
             r.fd.max_rel_error, r.linearity_error, r.seconds));
  o.require(r.fd.checked >= 200, ">= 200 parameters checked");
  o.require(r.fd.max_rel_error < 1e-3 && r.fd.pass, "max relative error < 1e-3");
  o.require(r.linearity_error <= 1e-6, "deep-supervision linearity within 1e-6");
  o.require(r.seconds < 60, "runtime < 60 s");
  return o;
}

// ---------------------------------------------------------------- 8
Outcome tta_symmetry() {
  Outcome o;
  const Graph g = segmenter("ddrnet-23-slim");
  const CompiledModel model = compile(g, he_init(g, 31));
  const int64_t H = 256, W = 512;
  Tensor x = oracle::random_tensor<float>(Shape{1, 3, H, W}, 32);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W / 2; ++j) x.at(0, c, i, W - 1 - j) = x.at(0, c, i, j);

  const Tensor p = ms_flip_infer(model, x, default_tta_scales(), true);
  const double asym = max_relative_error(p, ops::flip_horizontal(p));
  o.note(fmt("7 scales x flip: |p - flip(p)| / max p = %.2e", asym));
  o.require(asym < 1e-5, "symmetric within 1e-5");

  const Tensor a = oracle::random_tensor<float>(Shape{1, 3, H, W}, 33);
  const Tensor plain = ops::bilinear_resize(ops::softmax_channels(run_forward(model, a).at("logits")), H, W);
  const double d = max_relative_error(ms_flip_infer(model, a, {1.0}, false), plain);
  o.note(fmt("scales=[1], no flip vs forward+softmax+upsample: %.2e", d));
  o.require(d == 0.0, "degenerate case equals plain forward");
  return o;
}

// ---------------------------------------------------------------- 9
Outcome loss_identities() {
  Outcome o;
  double worst = 0;
  for (int64_t k : {2, 3, 19, 150}) {
    const Tensor64 z(Shape{2, k, 4, 5}, 0.37);
    IndexTensor lab(Shape{2, 4, 5});
    for (int64_t i = 0; i < lab.numel(); ++i) lab[i] = i % 9 == 4 ? 255 : static_cast<int32_t>(i % k);
    worst = std::max(worst, std::abs(cross_entropy(z, lab) - std::log(static_cast<double>(k))));
  }
  o.note(fmt("uniform logits |CE - ln K| max %.1e over K=2,3,19,150", worst));
  o.require(worst <= 1e-9, "uniform CE = ln K within 1e-9");

  const auto z = oracle::random_tensor<double>(Shape{2, 19, 8, 8}, 41, 2.0);
  IndexTensor lab(Shape{2, 8, 8});
  std::mt19937 rng(42);
  for (auto& l : lab.data()) l = rng() % 10 == 0 ? 255 : static_cast<int32_t>(rng() % 19);
  const double plain = cross_entropy(z, lab);

  LossConfig all;
  all.ohem = true;
  all.ohem_threshold = 1.0;
  all.ohem_min_kept = 1;
  const double d1 = std::abs(ohem_cross_entropy(z, lab, all) - plain);
  LossConfig every;
  every.ohem = true;
  every.ohem_threshold = 0.05;
  every.ohem_min_kept = lab.numel();
  const double d2 = std::abs(ohem_cross_entropy(z, lab, every) - plain);

  Tensor64 two(Shape{1, 2, 1, 2});
  two.at(0, 0, 0, 0) = std::log(0.9);
  two.at(0, 1, 0, 0) = std::log(0.1);
  two.at(0, 0, 0, 1) = std::log(0.1);
  two.at(0, 1, 0, 1) = std::log(0.9);
  LossConfig hand;
  hand.ohem = true;
  hand.ohem_threshold = 0.7;
  hand.ohem_min_kept = 1;
  const double d3 = std::abs(ohem_cross_entropy(two, IndexTensor(Shape{1, 1, 2}, 0), hand) + std::log(0.1));
  o.note(fmt("OHEM vs CE: threshold 1 %.1e, min_kept=all %.1e; hand-picked -ln 0.1 %.1e", d1, d2, d3));
  o.require(d1 <= 1e-12 && d2 <= 1e-12, "OHEM degenerates to cross-entropy");
  o.require(d3 <= 1e-12, "OHEM hand-selection");
  return o;
}

// ---------------------------------------------------------------- 10
Outcome checkpoint_io() {
  Outcome o;
  const Graph g = segmenter("ddrnet-23-slim");
  ParamSet<float> p = he_init(g, 51);
  randomize_batchnorm(g, p, 52);
  const std::string path = "acceptance_roundtrip.ddrw";
  save_checkpoint(path, p, &g);
  const ParamSet<float> back = load_checkpoint(path, g);
  bool bits = back.size() == p.size();
  for (const auto& [name, t] : p) {
    const Tensor& u = back.at(name);
    bits = bits && u.shape() == t.shape() &&
           std::equal(t.data().begin(), t.data().end(), u.data().begin(),
                      [](float a, float b) { return std::bit_cast<uint32_t>(a) == std::bit_cast<uint32_t>(b); });
  }
  o.note(fmt("%zu tensors round trip %s", p.size(), bits ? "bit-exact" : "CHANGED"));
  o.require(bits, "round trip bit-exact");

  ParamSet<float> bad = p;
  bad.erase("head.conv1x1.weight");
  bad.emplace("head.extra.weight", Tensor(Shape{4}));
  bad.at("dappm.compress.conv.weight") = Tensor(Shape{128, 640, 3, 3});
  save_checkpoint(path, bad);
  try {
    load_checkpoint(path, g);
    o.require(false, "mismatch detected");
  } catch (const SlotMismatchError& e) {
    const SlotDiff& d = e.diff;
    o.require(d.missing == std::vector<std::string>{"head.conv1x1.weight"}, "missing slot named");
    o.require(d.extra == std::vector<std::string>{"head.extra.weight"}, "extra slot named");
    o.require(d.misshaped.size() == 1 && d.misshaped[0].rfind("dappm.compress.conv.weight", 0) == 0,
              "mis-shaped slot named");
    o.note(fmt("diff: %zu missing, %zu extra, %zu mis-shaped", d.missing.size(), d.extra.size(), d.misshaped.size()));
  }
  std::remove(path.c_str());
  return o;
}

// ---------------------------------------------------------------- 11
Outcome benchmark_ordering() {
  Outcome o;
  std::vector<double> fps;
  for (const auto& v : kSegVariants) {
    const Graph g = segmenter(v);
    const CompiledModel model = compile(g, he_init(g, 61));
    const BenchReport r = benchmark(model, Shape{1, 3, 1024, 1024}, 1, 3);
    fps.push_back(r.fps);
    o.note(fmt("%s %.3f FPS (median %.0f ms)", v.c_str(), r.fps, r.median_ms));
  }
  o.note(fmt("%d thread(s)", num_threads()));
  o.require(fps[0] > fps[1] && fps[1] > fps[2], "slim > 23 > 39");
  return o;
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"parameter counts", parameter_counts}, {"FLOP counts", flop_counts},
      {"pyramid pooling ladder", pyramid_ladder}, {"shape suite", shape_suite},
      {"BN folding", bn_folding},             {"conv oracle", conv_oracle},
      {"gradient suite", gradient_suite},     {"ms_flip_infer symmetry", tta_symmetry},
      {"loss identities", loss_identities},   {"checkpoint round trip", checkpoint_io},
      {"benchmark ordering", benchmark_ordering},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s [%2d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed;
}
