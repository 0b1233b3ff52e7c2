#include "ddrnet/reference.hpp"

#include <variant>

namespace ddrnet {

template <typename T>
const BasicTensor<T>& slot_value(const Graph& graph, const Node& node, size_t k, const ParamSet<T>& params) {
  const std::string& name = graph.slots().at(static_cast<size_t>(node.slots.at(k))).name;
  auto it = params.find(name);
  if (it == params.end()) throw ShapeError("missing parameter '" + name + "' for node '" + node.name + "'");
  return it->second;
}

template <typename T>
BatchNormParams<T> batch_norm_params(const Graph& graph, const Node& node, const ParamSet<T>& params) {
  const auto& attrs = std::get<BatchNormAttrs>(node.attrs);
  auto vec = [&](size_t k) {
    const auto d = slot_value(graph, node, k, params).data();
    return std::vector<T>(d.begin(), d.end());
  };
  return {vec(0), vec(1), vec(2), vec(3), attrs.epsilon};
}

template <typename T>
std::vector<BasicTensor<T>> run_reference_all(const Graph& graph, const ParamSet<T>& params,
                                              const BasicTensor<T>& input) {
  graph.check_input_shape(input.shape());
  std::vector<BasicTensor<T>> values(graph.nodes().size());
  for (const Node& node : graph.nodes()) {
    auto in = [&](size_t k) -> const BasicTensor<T>& {
      return values[static_cast<size_t>(node.inputs.at(k))];
    };
    BasicTensor<T> out;
    switch (node.kind) {
      case OpKind::Input:
        out = input;
        break;
      case OpKind::Conv: {
        const auto& p = std::get<Conv2dParams>(node.attrs);
        std::span<const T> bias;
        if (p.has_bias) bias = slot_value(graph, node, 1, params).data();
        out = ops::conv2d(in(0), slot_value(graph, node, 0, params), bias, p);
        break;
      }
      case OpKind::BatchNorm:
        out = ops::batch_norm_infer(in(0), batch_norm_params(graph, node, params));
        break;
      case OpKind::Relu:
        out = ops::relu(in(0));
        break;
      case OpKind::Add:
        out = ops::add(in(0), in(1));
        break;
      case OpKind::AvgPool:
        out = ops::avg_pool2d(in(0), std::get<Pool2dParams>(node.attrs));
        break;
      case OpKind::GlobalAvgPool:
        out = ops::global_avg_pool(in(0));
        break;
      case OpKind::ResizeLike:
        out = ops::bilinear_resize(in(0), in(1).h(), in(1).w());
        break;
      case OpKind::Concat: {
        std::vector<const BasicTensor<T>*> parts;
        for (int id : node.inputs) parts.push_back(&values[static_cast<size_t>(id)]);
        out = ops::concat_channels<T>(std::span<const BasicTensor<T>* const>(parts));
        break;
      }
      case OpKind::Linear: {
        const auto& a = std::get<LinearAttrs>(node.attrs);
        std::span<const T> bias;
        if (a.has_bias) bias = slot_value(graph, node, 1, params).data();
        out = ops::linear(in(0), slot_value(graph, node, 0, params), bias);
        break;
      }
      case OpKind::Affine:
        out = ops::affine_channels(in(0), slot_value(graph, node, 0, params).data(),
                                   slot_value(graph, node, 1, params).data());
        break;
    }
    values[static_cast<size_t>(node.id)] = std::move(out);
  }
  return values;
}

template <typename T>
NamedTensors<T> run_reference(const Graph& graph, const ParamSet<T>& params, const BasicTensor<T>& input) {
  auto values = run_reference_all(graph, params, input);
  NamedTensors<T> out;
  for (const auto& o : graph.outputs()) out.emplace(o.name, values[static_cast<size_t>(o.node)]);
  return out;
}

#define DDRNET_INSTANTIATE_REF(T)                                                                            \
  template const BasicTensor<T>& slot_value(const Graph&, const Node&, size_t, const ParamSet<T>&);        \
  template BatchNormParams<T> batch_norm_params(const Graph&, const Node&, const ParamSet<T>&);            \
  template std::vector<BasicTensor<T>> run_reference_all(const Graph&, const ParamSet<T>&,                 \
                                                         const BasicTensor<T>&);                           \
  template NamedTensors<T> run_reference(const Graph&, const ParamSet<T>&, const BasicTensor<T>&);

DDRNET_INSTANTIATE_REF(float)
DDRNET_INSTANTIATE_REF(double)

#undef DDRNET_INSTANTIATE_REF

}  // namespace ddrnet
