#include <cmath>
#include <variant>

#include "ddrnet/engine.hpp"

namespace ddrnet {

template <typename T>
FoldedGraph<T> fold_batchnorm(const Graph& graph, const ParamSet<T>& params) {
  require_params(graph, params);
  const auto& nodes = graph.nodes();
  const size_t n = nodes.size();
  const auto consumers = graph.consumers();
  std::vector<bool> is_output(n, false);
  for (const auto& o : graph.outputs()) is_output[static_cast<size_t>(o.node)] = true;

  std::vector<int> bn_of_conv(n, -1);
  std::vector<bool> folds(n, false);
  for (const Node& node : nodes) {
    if (node.kind != OpKind::BatchNorm) continue;
    const int src = node.inputs[0];
    const auto s = static_cast<size_t>(src);
    if (nodes[s].kind == OpKind::Conv && consumers[s].size() == 1 && !is_output[s]) {
      bn_of_conv[s] = node.id;
      folds[static_cast<size_t>(node.id)] = true;
    }
  }

  auto value = [&](const Node& node, size_t k) -> const BasicTensor<T>& {
    return slot_value(graph, node, k, params);
  };
  // Per-channel scale g / sqrt(v + eps) and shift beta - mu * scale, in double.
  auto bn_coeffs = [&](const Node& bn, std::vector<double>& scale, std::vector<double>& shift) {
    const auto& attrs = std::get<BatchNormAttrs>(bn.attrs);
    const auto g = value(bn, 0).data();
    const auto beta = value(bn, 1).data();
    const auto mu = value(bn, 2).data();
    const auto var = value(bn, 3).data();
    scale.resize(g.size());
    shift.resize(g.size());
    for (size_t c = 0; c < g.size(); ++c) {
      if (var[c] < 0) throw ValueError("batch norm '" + bn.name + "' has negative running variance");
      scale[c] = static_cast<double>(g[c]) / std::sqrt(static_cast<double>(var[c]) + attrs.epsilon);
      shift[c] = static_cast<double>(beta[c]) - static_cast<double>(mu[c]) * scale[c];
    }
  };

  FoldedGraph<T> out;
  GraphBuilder b(graph.name());
  std::vector<int> remap(n, -1);
  auto src = [&](const Node& node, size_t k) { return remap[static_cast<size_t>(node.inputs[k])]; };
  auto copy_slots = [&](const Node& from) {
    for (size_t k = 0; k < from.slots.size(); ++k) {
      out.params.emplace(graph.slots()[static_cast<size_t>(from.slots[k])].name, value(from, k));
    }
  };

  for (const Node& node : nodes) {
    const auto id = static_cast<size_t>(node.id);
    switch (node.kind) {
      case OpKind::Input:
        remap[id] = b.input(node.channels, graph.input_multiple());
        break;
      case OpKind::Conv: {
        Conv2dParams p = std::get<Conv2dParams>(node.attrs);
        const int bn_id = bn_of_conv[id];
        if (bn_id < 0) {
          remap[id] = b.conv(node.name, src(node, 0), p);
          copy_slots(node);
          break;
        }
        const Node& bn = nodes[static_cast<size_t>(bn_id)];
        std::vector<double> scale, shift;
        bn_coeffs(bn, scale, shift);
        const bool had_bias = p.has_bias;
        p.has_bias = true;
        remap[id] = b.conv(node.name, src(node, 0), p);
        BasicTensor<T> w = value(node, 0);
        BasicTensor<T> bias(Shape{p.out_channels});
        const int64_t per_out = p.in_channels * p.kh * p.kw;
        for (int64_t oc = 0; oc < p.out_channels; ++oc) {
          const double s = scale[static_cast<size_t>(oc)];
          T* row = w.ptr() + oc * per_out;
          for (int64_t i = 0; i < per_out; ++i) row[i] = static_cast<T>(static_cast<double>(row[i]) * s);
          double bv = shift[static_cast<size_t>(oc)];
          if (had_bias) bv += static_cast<double>(value(node, 1)[oc]) * s;
          bias[oc] = static_cast<T>(bv);
        }
        out.params.emplace(join_name(node.name, "weight"), std::move(w));
        out.params.emplace(join_name(node.name, "bias"), std::move(bias));
        out.log.push_back("folded " + bn.name + " into " + node.name);
        break;
      }
      case OpKind::BatchNorm: {
        if (folds[id]) {
          remap[id] = remap[static_cast<size_t>(node.inputs[0])];
          break;
        }
        std::vector<double> scale, shift;
        bn_coeffs(node, scale, shift);
        remap[id] = b.affine(node.name, src(node, 0));
        BasicTensor<T> sc(Shape{node.channels});
        BasicTensor<T> sh(Shape{node.channels});
        for (int64_t c = 0; c < node.channels; ++c) {
          sc[c] = static_cast<T>(scale[static_cast<size_t>(c)]);
          sh[c] = static_cast<T>(shift[static_cast<size_t>(c)]);
        }
        out.params.emplace(join_name(node.name, "scale"), std::move(sc));
        out.params.emplace(join_name(node.name, "shift"), std::move(sh));
        const Node& in = nodes[static_cast<size_t>(node.inputs[0])];
        out.log.push_back("kept " + node.name + " as affine (input '" + in.name + "' is " +
                          (in.kind == OpKind::Conv ? "a shared conv" : std::string(to_string(in.kind))) + ")");
        break;
      }
      case OpKind::Affine:
        remap[id] = b.affine(node.name, src(node, 0));
        copy_slots(node);
        break;
      case OpKind::Relu:
        remap[id] = b.relu(node.name, src(node, 0));
        break;
      case OpKind::Add:
        remap[id] = b.add(node.name, src(node, 0), src(node, 1));
        break;
      case OpKind::AvgPool:
        remap[id] = b.avg_pool(node.name, src(node, 0), std::get<Pool2dParams>(node.attrs));
        break;
      case OpKind::GlobalAvgPool:
        remap[id] = b.global_avg_pool(node.name, src(node, 0));
        break;
      case OpKind::ResizeLike:
        remap[id] = b.resize_like(node.name, src(node, 0), src(node, 1));
        break;
      case OpKind::Concat: {
        std::vector<int> ins;
        for (size_t k = 0; k < node.inputs.size(); ++k) ins.push_back(src(node, k));
        remap[id] = b.concat(node.name, ins);
        break;
      }
      case OpKind::Linear: {
        const auto& a = std::get<LinearAttrs>(node.attrs);
        remap[id] = b.linear(node.name, src(node, 0), a.out_features, a.has_bias);
        copy_slots(node);
        break;
      }
    }
  }
  for (const auto& o : graph.outputs()) b.mark_output(o.name, remap[static_cast<size_t>(o.node)]);
  out.graph = std::move(b).finish();
  return out;
}

template FoldedGraph<float> fold_batchnorm(const Graph&, const ParamSet<float>&);
template FoldedGraph<double> fold_batchnorm(const Graph&, const ParamSet<double>&);

}  // namespace ddrnet
