#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ddrnet/ops.hpp"
#include "ddrnet/tensor.hpp"

namespace ddrnet {

enum class OpKind {
  Input,
  Conv,
  BatchNorm,
  Affine,  // per-channel scale/shift; only produced by the engine's BN folding
  Relu,
  Add,
  AvgPool,
  GlobalAvgPool,
  ResizeLike,  // bilinear resize of inputs[0] to the spatial extents of inputs[1]
  Concat,
  Linear,
};

std::string_view to_string(OpKind kind);

struct BatchNormAttrs {
  int64_t channels = 0;
  double epsilon = 1e-5;
};

struct LinearAttrs {
  int64_t in_features = 0;
  int64_t out_features = 0;
  bool has_bias = true;
};

using NodeAttrs = std::variant<std::monostate, Conv2dParams, BatchNormAttrs, Pool2dParams, LinearAttrs>;

enum class SlotRole { Weight, Bias, Gamma, Beta, RunningMean, RunningVar };

struct ParamSlot {
  std::string name;
  Shape shape;
  SlotRole role = SlotRole::Weight;

  /// Running statistics are buffers, not learned parameters.
  bool trainable() const { return role != SlotRole::RunningMean && role != SlotRole::RunningVar; }
};

struct Node {
  int id = -1;
  OpKind kind = OpKind::Input;
  std::string name;
  std::vector<int> inputs;
  NodeAttrs attrs;
  std::vector<int> slots;  // indices into Graph::slots(), in role order
  int64_t channels = 0;    // output channel count, known at build time
};

struct GraphOutput {
  std::string name;
  int node = -1;
};

template <typename T>
using ParamSet = std::map<std::string, BasicTensor<T>, std::less<>>;

/// Immutable DAG of primitive layer nodes. Nodes are stored in topological
/// order; slot names are unique dotted paths.
class Graph {
 public:
  const std::string& name() const { return name_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }
  const std::vector<ParamSlot>& slots() const { return slots_; }
  const ParamSlot* find_slot(std::string_view name) const;
  const std::vector<GraphOutput>& outputs() const { return outputs_; }
  /// Node id of a named output; throws when absent.
  int output(std::string_view name) const;
  bool has_output(std::string_view name) const;

  int input_id() const { return input_; }
  int64_t input_channels() const { return nodes_.at(static_cast<size_t>(input_)).channels; }
  /// Input spatial extents must be divisible by this value.
  int input_multiple() const { return input_multiple_; }
  /// Throws ShapeError unless `shape` is N x input_channels x H x W with H, W
  /// divisible by input_multiple().
  void check_input_shape(const Shape& shape) const;

  /// consumers()[i] lists the nodes reading node i.
  std::vector<std::vector<int>> consumers() const;

  /// Node and slot structure equality (names, kinds, wiring, attributes, shapes).
  bool structurally_equal(const Graph& other) const;

 private:
  friend class GraphBuilder;
  std::string name_;
  std::vector<Node> nodes_;
  std::vector<ParamSlot> slots_;
  std::vector<GraphOutput> outputs_;
  int input_ = -1;
  int input_multiple_ = 1;
};

/// Appends nodes in topological order. Channel counts are validated as nodes
/// are added, so width inconsistencies fail at build time.
class GraphBuilder {
 public:
  explicit GraphBuilder(std::string graph_name);

  int input(int64_t channels, int spatial_multiple = 1);
  /// Slots: `<name>.weight` and, when params.has_bias, `<name>.bias`.
  int conv(const std::string& name, int in, const Conv2dParams& params);
  /// Slots: `<name>.{gamma,beta,mean,var}`.
  int batch_norm(const std::string& name, int in, double epsilon = 1e-5);
  /// Slots: `<name>.scale` and `<name>.shift`, one value per channel.
  int affine(const std::string& name, int in);
  int relu(const std::string& name, int in);
  int add(const std::string& name, int a, int b);
  int avg_pool(const std::string& name, int in, const Pool2dParams& params);
  int global_avg_pool(const std::string& name, int in);
  int resize_like(const std::string& name, int src, int ref);
  int concat(const std::string& name, const std::vector<int>& inputs);
  /// Slots: `<name>.weight` (out x in) and optionally `<name>.bias`.
  int linear(const std::string& name, int in, int64_t out_features, bool has_bias = true);

  void mark_output(const std::string& name, int node);
  int64_t channels(int node) const;

  Graph finish() &&;

 private:
  int push(Node node);
  int add_slot(const std::string& name, Shape shape, SlotRole role);
  void check_input(int id, const std::string& who) const;

  Graph g_;
  std::map<std::string, int, std::less<>> slot_index_;
  std::map<std::string, int, std::less<>> node_names_;
};

/// Joins dotted name components, skipping empty ones.
std::string join_name(std::string_view prefix, std::string_view leaf);

/// Differences between a graph's slots and a named set of shapes.
struct SlotDiff {
  std::vector<std::string> missing;
  std::vector<std::string> extra;
  std::vector<std::string> misshaped;  // "name: expected AxB, got CxD"

  bool empty() const { return missing.empty() && extra.empty() && misshaped.empty(); }
  std::string str() const;
};

SlotDiff diff_slots(const Graph& graph, const std::map<std::string, Shape, std::less<>>& shapes);

template <typename T>
SlotDiff diff_slots(const Graph& graph, const ParamSet<T>& params) {
  std::map<std::string, Shape, std::less<>> shapes;
  for (const auto& [name, t] : params) shapes.emplace(name, t.shape());
  return diff_slots(graph, shapes);
}

/// Throws ShapeError listing every missing/extra/mis-shaped slot.
template <typename T>
void require_params(const Graph& graph, const ParamSet<T>& params) {
  const SlotDiff d = diff_slots(graph, params);
  if (!d.empty()) throw ShapeError("parameter set does not match graph '" + graph.name() + "':\n" + d.str());
}

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& params) {
  ParamSet<To> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<To>());
  return out;
}

}  // namespace ddrnet
