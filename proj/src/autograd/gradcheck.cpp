#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "ddrnet/autograd.hpp"
#include "ddrnet/reference.hpp"

namespace ddrnet::autograd {

RecordedGraph record_graph(Tape& tape, const Graph& graph, const ParamSet<double>& params, const Tensor64& input) {
  graph.check_input_shape(input.shape());
  require_params(graph, params);
  RecordedGraph rg;
  rg.nodes.resize(graph.nodes().size(), -1);
  auto param = [&](const Node& node, size_t k) {
    const auto& slot = graph.slots()[static_cast<size_t>(node.slots[k])];
    return tape.parameter(slot.name, params.find(slot.name)->second);
  };
  for (const Node& node : graph.nodes()) {
    auto in = [&](size_t k) { return rg.nodes[static_cast<size_t>(node.inputs[k])]; };
    ValueId v = -1;
    switch (node.kind) {
      case OpKind::Input:
        v = tape.constant(input);
        break;
      case OpKind::Conv: {
        const auto& p = std::get<Conv2dParams>(node.attrs);
        const ValueId w = param(node, 0);
        std::optional<ValueId> b;
        if (p.has_bias) b = param(node, 1);
        v = tape.conv2d(in(0), w, b, p);
        break;
      }
      case OpKind::BatchNorm: {
        const auto bn = batch_norm_params(graph, node, params);
        const ValueId gamma = param(node, 0);
        const ValueId beta = param(node, 1);
        v = tape.batch_norm(in(0), gamma, beta, bn.running_mean, bn.running_var, bn.epsilon);
        break;
      }
      case OpKind::Affine:
        throw Error("record_graph: affine node '" + node.name + "' (differentiate the unfolded graph)");
      case OpKind::Relu:
        v = tape.relu(in(0));
        break;
      case OpKind::Add:
        v = tape.add(in(0), in(1));
        break;
      case OpKind::AvgPool:
        v = tape.avg_pool(in(0), std::get<Pool2dParams>(node.attrs));
        break;
      case OpKind::GlobalAvgPool:
        v = tape.global_avg_pool(in(0));
        break;
      case OpKind::ResizeLike: {
        const Tensor64& ref = tape.value(in(1));
        v = tape.resize(in(0), ref.h(), ref.w());
        break;
      }
      case OpKind::Concat: {
        std::vector<ValueId> parts;
        for (size_t k = 0; k < node.inputs.size(); ++k) parts.push_back(in(k));
        v = tape.concat(parts);
        break;
      }
      case OpKind::Linear: {
        const auto& a = std::get<LinearAttrs>(node.attrs);
        const ValueId w = param(node, 0);
        std::optional<ValueId> b;
        if (a.has_bias) b = param(node, 1);
        v = tape.linear(in(0), w, b);
        break;
      }
    }
    rg.nodes[static_cast<size_t>(node.id)] = v;
  }
  for (const auto& o : graph.outputs()) rg.outputs.emplace(o.name, rg.nodes[static_cast<size_t>(o.node)]);
  return rg;
}

namespace {

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

struct Eval {
  double loss = 0.0;
  std::vector<Tensor64> relu_in;
};

Eval evaluate(const Objective& objective, const ParamSet<double>& params) {
  Tape tape;
  const ValueId loss = objective(tape, params);
  Eval e;
  e.loss = tape.value(loss)[0];
  for (ValueId id : tape.relu_inputs()) e.relu_in.push_back(tape.value(id));
  return e;
}

bool crosses_kink(const Eval& a, const Eval& b) {
  if (a.relu_in.size() != b.relu_in.size()) return true;
  for (size_t r = 0; r < a.relu_in.size(); ++r) {
    const Tensor64& x = a.relu_in[r];
    const Tensor64& y = b.relu_in[r];
    for (int64_t i = 0; i < x.numel(); ++i) {
      if ((x[i] > 0.0) != (y[i] > 0.0)) return true;
    }
  }
  return false;
}

}  // namespace

FdReport finite_diff_check(const Objective& objective, const ParamSet<double>& params,
                           const std::vector<ParamRef>& subset, double step, double tolerance) {
  FdReport report;
  report.step = step;
  report.tolerance = tolerance;
  if (subset.empty()) return report;

  Tape tape;
  const ValueId loss = objective(tape, params);
  const Gradients grads = tape.backward(loss);

  ParamSet<double> work = params;
  for (const ParamRef& ref : subset) {
    auto it = work.find(ref.name);
    if (it == work.end()) throw Error("finite_diff_check: unknown parameter '" + ref.name + "'");
    if (ref.index < 0 || ref.index >= it->second.numel()) {
      throw Error("finite_diff_check: index " + std::to_string(ref.index) + " out of range for '" + ref.name + "'");
    }
    double& slot = it->second[ref.index];
    const double orig = slot;
    slot = orig + step;
    const double up = slot - orig;
    const Eval plus = evaluate(objective, work);
    slot = orig - step;
    const double down = orig - slot;
    const Eval minus = evaluate(objective, work);
    slot = orig;

    FdEntry e;
    e.param = ref;
    auto g = grads.find(ref.name);
    e.analytic = g == grads.end() ? 0.0 : g->second[ref.index];
    e.numeric = (plus.loss - minus.loss) / (up + down);
    e.rel_error = rel_error(e.analytic, e.numeric);
    e.skipped = crosses_kink(plus, minus);
    if (e.skipped) {
      ++report.skipped;
    } else {
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      if (!(e.rel_error <= tolerance)) report.pass = false;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

FdReport finite_diff_check(const Graph& graph, const ParamSet<double>& params, const Tensor64& input,
                           const std::vector<ParamRef>& subset, double step, double tolerance) {
  const Objective objective = [&](Tape& tape, const ParamSet<double>& p) {
    const RecordedGraph rg = record_graph(tape, graph, p, input);
    ValueId total = -1;
    for (const auto& [name, id] : rg.outputs) {
      const ValueId m = tape.mean(id);
      total = total < 0 ? m : tape.add(total, m);
    }
    return total;
  };
  return finite_diff_check(objective, params, subset, step, tolerance);
}

std::vector<ParamRef> sample_params(const Graph& graph, int count, uint64_t seed) {
  std::vector<const ParamSlot*> slots;
  std::vector<int64_t> starts;
  int64_t total = 0;
  for (const auto& s : graph.slots()) {
    if (!s.trainable()) continue;
    slots.push_back(&s);
    starts.push_back(total);
    total += s.shape.numel();
  }
  std::vector<int64_t> picks;
  if (count >= total) {
    for (int64_t i = 0; i < total; ++i) picks.push_back(i);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> dist(0, total - 1);
    std::set<int64_t> seen;
    while (static_cast<int>(picks.size()) < count) {
      const int64_t f = dist(rng);
      if (seen.insert(f).second) picks.push_back(f);
    }
  }
  std::vector<ParamRef> out;
  for (int64_t f : picks) {
    const auto it = std::upper_bound(starts.begin(), starts.end(), f) - 1;
    const auto k = static_cast<size_t>(it - starts.begin());
    out.push_back({slots[k]->name, f - *it});
  }
  return out;
}

std::string FdReport::str() const {
  char line[256];
  std::snprintf(line, sizeof line, "%s: %d checked, %d skipped (kink), max rel error %.3e (tolerance %.1e, step %.1e)\n",
                pass ? "pass" : "FAIL", checked, skipped, max_rel_error, tolerance, step);
  std::string s = line;
  for (const auto& e : entries) {
    if (e.skipped || e.rel_error <= tolerance) continue;
    std::snprintf(line, sizeof line, "  %s[%lld]: analytic %.9e numeric %.9e rel %.3e\n", e.param.name.c_str(),
                  static_cast<long long>(e.param.index), e.analytic, e.numeric, e.rel_error);
    s += line;
  }
  return s;
}

}  // namespace ddrnet::autograd
