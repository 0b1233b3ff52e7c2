#pragma once

#include <map>
#include <string>
#include <vector>

#include "ddrnet/graph.hpp"

namespace ddrnet {

/// k-th slot value of `node` (slot order as declared by the builder).
template <typename T>
const BasicTensor<T>& slot_value(const Graph& graph, const Node& node, size_t k, const ParamSet<T>& params);

template <typename T>
BatchNormParams<T> batch_norm_params(const Graph& graph, const Node& node, const ParamSet<T>& params);

template <typename T>
using NamedTensors = std::map<std::string, BasicTensor<T>, std::less<>>;

/// Straightforward graph interpreter over the tensor-core primitives: direct
/// convolution, explicit batch norm, no folding. Serves as the numerical
/// reference for the optimized engine.
template <typename T>
NamedTensors<T> run_reference(const Graph& graph, const ParamSet<T>& params, const BasicTensor<T>& input);

/// Same as run_reference but returns every node's value, indexed by node id.
template <typename T>
std::vector<BasicTensor<T>> run_reference_all(const Graph& graph, const ParamSet<T>& params,
                                              const BasicTensor<T>& input);

}  // namespace ddrnet
