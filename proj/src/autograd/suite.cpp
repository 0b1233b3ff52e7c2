#include "ddrnet/gradient_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "ddrnet/analyzer.hpp"
#include "ddrnet/checkpoint.hpp"
#include "ddrnet/loss.hpp"
#include "ddrnet/model_zoo.hpp"
#include "ddrnet/reference.hpp"

namespace ddrnet {

using autograd::Tape;
using autograd::ValueId;

namespace {

struct Heads {
  ValueId main = -1;
  ValueId aux = -1;
  ValueId total = -1;
};

Heads record_losses(Tape& tape, const Graph& graph, const ParamSet<double>& params, const Tensor64& input,
                    const IndexTensor& labels, double alpha) {
  const auto rg = autograd::record_graph(tape, graph, params, input);
  const int64_t h = labels.shape()[1];
  const int64_t w = labels.shape()[2];
  Heads heads;
  heads.main = tape.cross_entropy(tape.resize(rg.outputs.at("logits"), h, w), labels, 255);
  heads.aux = tape.cross_entropy(tape.resize(rg.outputs.at("aux_logits"), h, w), labels, 255);
  heads.total = tape.add(heads.main, tape.scale(heads.aux, alpha));
  return heads;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  GradientSuiteReport report;

  const VariantConfig config = micro_variant();
  const Graph graph = build_segmenter(config, true);
  ParamSet<float> init = he_init(graph, options.seed);
  randomize_batchnorm(graph, init, options.seed + 1);
  const ParamSet<double> params = cast_params<double>(init);
  report.trainable_params = count_params(graph);

  std::mt19937_64 rng(options.seed + 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor64 input(Shape{1, 3, 64, 64});
  for (auto& v : input.data()) v = normal(rng);
  IndexTensor labels(Shape{1, 64, 64});
  std::uniform_int_distribution<int32_t> cls(0, static_cast<int32_t>(config.num_classes) - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& l : labels.data()) l = u(rng) < 0.05 ? 255 : cls(rng);

  // Gradient linearity and loss-module agreement on one tape.
  Tape tape;
  const Heads heads = record_losses(tape, graph, params, input, labels, options.alpha);
  report.loss_main = tape.value(heads.main)[0];
  report.loss_aux = tape.value(heads.aux)[0];
  report.loss_total = tape.value(heads.total)[0];
  {
    const auto outs = run_reference(graph, params, input);
    LossConfig lc;
    lc.alpha = options.alpha;
    const auto ds = deep_supervision_loss(outs.at("logits"), outs.at("aux_logits"), labels, lc);
    report.loss_agreement = std::abs(ds.total - report.loss_total) / std::max(std::abs(ds.total), 1e-12);
  }
  const auto gn = tape.backward(heads.main);
  const auto ga = tape.backward(heads.aux);
  const auto gf = tape.backward(heads.total);
  for (const auto& [name, g] : gf) {
    const Tensor64& a = gn.at(name);
    const Tensor64& b = ga.at(name);
    for (int64_t i = 0; i < g.numel(); ++i) {
      report.linearity_error = std::max(report.linearity_error, rel(g[i], a[i] + options.alpha * b[i]));
    }
  }

  const autograd::Objective objective = [&](Tape& t, const ParamSet<double>& p) {
    return record_losses(t, graph, p, input, labels, options.alpha).total;
  };
  const auto subset = autograd::sample_params(graph, options.samples, options.seed + 3);
  report.fd = autograd::finite_diff_check(objective, params, subset, options.step, options.tolerance);

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.pass = report.fd.pass && report.linearity_error <= options.linearity_tolerance &&
                report.loss_agreement <= 1e-9;
  return report;
}

std::string GradientSuiteReport::str() const {
  char line[320];
  std::snprintf(line, sizeof line,
                "micro net: %lld trainable params, L_n %.6f L_a %.6f L_f %.6f (loss module agreement %.2e)\n",
                static_cast<long long>(trainable_params), loss_main, loss_aux, loss_total, loss_agreement);
  std::string s = line;
  s += "finite differences " + fd.str();
  std::snprintf(line, sizeof line, "deep supervision linearity: max rel error %.3e\n%s in %.2f s\n", linearity_error,
                pass ? "PASS" : "FAIL", seconds);
  s += line;
  return s;
}

}  // namespace ddrnet
