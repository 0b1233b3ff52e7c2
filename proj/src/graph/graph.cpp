#include "ddrnet/graph.hpp"

#include <algorithm>

namespace ddrnet {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Conv: return "conv";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Affine: return "affine";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::AvgPool: return "avg_pool";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::ResizeLike: return "resize";
    case OpKind::Concat: return "concat";
    case OpKind::Linear: return "linear";
  }
  return "?";
}

std::string join_name(std::string_view prefix, std::string_view leaf) {
  if (prefix.empty()) return std::string(leaf);
  if (leaf.empty()) return std::string(prefix);
  std::string s(prefix);
  s += '.';
  s += leaf;
  return s;
}

const ParamSlot* Graph::find_slot(std::string_view name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

int Graph::output(std::string_view name) const {
  for (const auto& o : outputs_) {
    if (o.name == name) return o.node;
  }
  throw Error("graph '" + name_ + "' has no output named '" + std::string(name) + "'");
}

bool Graph::has_output(std::string_view name) const {
  return std::any_of(outputs_.begin(), outputs_.end(), [&](const GraphOutput& o) { return o.name == name; });
}

void Graph::check_input_shape(const Shape& shape) const {
  if (shape.rank() != 4) throw ShapeError("graph '" + name_ + "': input must be rank 4 NCHW, got " + shape.str());
  if (shape.c() != input_channels()) {
    throw ShapeError("graph '" + name_ + "': input has " + std::to_string(shape.c()) + " channels, expected " +
                     std::to_string(input_channels()));
  }
  if (shape.h() % input_multiple_ != 0 || shape.w() % input_multiple_ != 0) {
    throw ShapeError("graph '" + name_ + "': input spatial extents " + std::to_string(shape.h()) + "x" +
                     std::to_string(shape.w()) + " must be divisible by " + std::to_string(input_multiple_));
  }
}

std::vector<std::vector<int>> Graph::consumers() const {
  std::vector<std::vector<int>> out(nodes_.size());
  for (const auto& n : nodes_) {
    for (int in : n.inputs) out[static_cast<size_t>(in)].push_back(n.id);
  }
  return out;
}

namespace {

bool attrs_equal(const NodeAttrs& a, const NodeAttrs& b) {
  if (a.index() != b.index()) return false;
  if (const auto* c = std::get_if<Conv2dParams>(&a)) {
    const auto& d = std::get<Conv2dParams>(b);
    return c->out_channels == d.out_channels && c->in_channels == d.in_channels && c->kh == d.kh &&
           c->kw == d.kw && c->sh == d.sh && c->sw == d.sw && c->ph == d.ph && c->pw == d.pw &&
           c->has_bias == d.has_bias;
  }
  if (const auto* p = std::get_if<Pool2dParams>(&a)) {
    const auto& q = std::get<Pool2dParams>(b);
    return p->kh == q.kh && p->kw == q.kw && p->sh == q.sh && p->sw == q.sw && p->ph == q.ph && p->pw == q.pw;
  }
  if (const auto* bn = std::get_if<BatchNormAttrs>(&a)) {
    const auto& o = std::get<BatchNormAttrs>(b);
    return bn->channels == o.channels && bn->epsilon == o.epsilon;
  }
  if (const auto* l = std::get_if<LinearAttrs>(&a)) {
    const auto& o = std::get<LinearAttrs>(b);
    return l->in_features == o.in_features && l->out_features == o.out_features && l->has_bias == o.has_bias;
  }
  return true;
}

}  // namespace

bool Graph::structurally_equal(const Graph& other) const {
  if (nodes_.size() != other.nodes_.size() || slots_.size() != other.slots_.size()) return false;
  if (input_ != other.input_ || input_multiple_ != other.input_multiple_) return false;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& a = nodes_[i];
    const Node& b = other.nodes_[i];
    if (a.kind != b.kind || a.name != b.name || a.inputs != b.inputs || a.slots != b.slots ||
        a.channels != b.channels || !attrs_equal(a.attrs, b.attrs)) {
      return false;
    }
  }
  for (size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].name != other.slots_[i].name || slots_[i].shape != other.slots_[i].shape ||
        slots_[i].role != other.slots_[i].role) {
      return false;
    }
  }
  if (outputs_.size() != other.outputs_.size()) return false;
  for (size_t i = 0; i < outputs_.size(); ++i) {
    if (outputs_[i].name != other.outputs_[i].name || outputs_[i].node != other.outputs_[i].node) return false;
  }
  return true;
}

GraphBuilder::GraphBuilder(std::string graph_name) { g_.name_ = std::move(graph_name); }

int GraphBuilder::push(Node node) {
  if (node.name.empty()) throw Error("graph node names must be non-empty");
  if (node_names_.count(node.name)) throw Error("duplicate graph node name '" + node.name + "'");
  node.id = static_cast<int>(g_.nodes_.size());
  node_names_.emplace(node.name, node.id);
  g_.nodes_.push_back(std::move(node));
  return g_.nodes_.back().id;
}

int GraphBuilder::add_slot(const std::string& name, Shape shape, SlotRole role) {
  if (slot_index_.count(name)) throw Error("duplicate parameter slot '" + name + "'");
  const int idx = static_cast<int>(g_.slots_.size());
  g_.slots_.push_back({name, shape, role});
  slot_index_.emplace(name, idx);
  return idx;
}

void GraphBuilder::check_input(int id, const std::string& who) const {
  if (id < 0 || id >= static_cast<int>(g_.nodes_.size())) {
    throw Error("node '" + who + "' references unknown input id " + std::to_string(id));
  }
}

int64_t GraphBuilder::channels(int node) const {
  check_input(node, "channels()");
  return g_.nodes_[static_cast<size_t>(node)].channels;
}

int GraphBuilder::input(int64_t channels, int spatial_multiple) {
  if (g_.input_ >= 0) throw Error("graph already has an input");
  if (channels < 1 || spatial_multiple < 1) throw ShapeError("input channels and multiple must be >= 1");
  Node n;
  n.kind = OpKind::Input;
  n.name = "input";
  n.channels = channels;
  g_.input_ = push(std::move(n));
  g_.input_multiple_ = spatial_multiple;
  return g_.input_;
}

int GraphBuilder::conv(const std::string& name, int in, const Conv2dParams& p) {
  check_input(in, name);
  p.validate();
  if (channels(in) != p.in_channels) {
    throw ShapeError("node '" + name + "': conv expects " + std::to_string(p.in_channels) +
                     " input channels but '" + g_.nodes_[static_cast<size_t>(in)].name + "' produces " +
                     std::to_string(channels(in)));
  }
  Node n;
  n.kind = OpKind::Conv;
  n.name = name;
  n.inputs = {in};
  n.attrs = p;
  n.channels = p.out_channels;
  n.slots.push_back(add_slot(join_name(name, "weight"), p.weight_shape(), SlotRole::Weight));
  if (p.has_bias) n.slots.push_back(add_slot(join_name(name, "bias"), Shape{p.out_channels}, SlotRole::Bias));
  return push(std::move(n));
}

int GraphBuilder::batch_norm(const std::string& name, int in, double epsilon) {
  check_input(in, name);
  const int64_t c = channels(in);
  Node n;
  n.kind = OpKind::BatchNorm;
  n.name = name;
  n.inputs = {in};
  n.attrs = BatchNormAttrs{c, epsilon};
  n.channels = c;
  n.slots.push_back(add_slot(join_name(name, "gamma"), Shape{c}, SlotRole::Gamma));
  n.slots.push_back(add_slot(join_name(name, "beta"), Shape{c}, SlotRole::Beta));
  n.slots.push_back(add_slot(join_name(name, "mean"), Shape{c}, SlotRole::RunningMean));
  n.slots.push_back(add_slot(join_name(name, "var"), Shape{c}, SlotRole::RunningVar));
  return push(std::move(n));
}

int GraphBuilder::affine(const std::string& name, int in) {
  check_input(in, name);
  const int64_t c = channels(in);
  Node n;
  n.kind = OpKind::Affine;
  n.name = name;
  n.inputs = {in};
  n.channels = c;
  n.slots.push_back(add_slot(join_name(name, "scale"), Shape{c}, SlotRole::Weight));
  n.slots.push_back(add_slot(join_name(name, "shift"), Shape{c}, SlotRole::Bias));
  return push(std::move(n));
}

int GraphBuilder::relu(const std::string& name, int in) {
  check_input(in, name);
  Node n;
  n.kind = OpKind::Relu;
  n.name = name;
  n.inputs = {in};
  n.channels = channels(in);
  return push(std::move(n));
}

int GraphBuilder::add(const std::string& name, int a, int b) {
  check_input(a, name);
  check_input(b, name);
  if (channels(a) != channels(b)) {
    throw ShapeError("node '" + name + "': add of " + std::to_string(channels(a)) + " and " +
                     std::to_string(channels(b)) + " channels");
  }
  Node n;
  n.kind = OpKind::Add;
  n.name = name;
  n.inputs = {a, b};
  n.channels = channels(a);
  return push(std::move(n));
}

int GraphBuilder::avg_pool(const std::string& name, int in, const Pool2dParams& p) {
  check_input(in, name);
  if (p.kh < 1 || p.kw < 1 || p.sh < 1 || p.sw < 1 || p.ph < 0 || p.pw < 0) {
    throw ShapeError("node '" + name + "': invalid pooling window");
  }
  Node n;
  n.kind = OpKind::AvgPool;
  n.name = name;
  n.inputs = {in};
  n.attrs = p;
  n.channels = channels(in);
  return push(std::move(n));
}

int GraphBuilder::global_avg_pool(const std::string& name, int in) {
  check_input(in, name);
  Node n;
  n.kind = OpKind::GlobalAvgPool;
  n.name = name;
  n.inputs = {in};
  n.channels = channels(in);
  return push(std::move(n));
}

int GraphBuilder::resize_like(const std::string& name, int src, int ref) {
  check_input(src, name);
  check_input(ref, name);
  Node n;
  n.kind = OpKind::ResizeLike;
  n.name = name;
  n.inputs = {src, ref};
  n.channels = channels(src);
  return push(std::move(n));
}

int GraphBuilder::concat(const std::string& name, const std::vector<int>& inputs) {
  if (inputs.empty()) throw ShapeError("node '" + name + "': concat needs at least one input");
  int64_t c = 0;
  for (int i : inputs) {
    check_input(i, name);
    c += channels(i);
  }
  Node n;
  n.kind = OpKind::Concat;
  n.name = name;
  n.inputs = inputs;
  n.channels = c;
  return push(std::move(n));
}

int GraphBuilder::linear(const std::string& name, int in, int64_t out_features, bool has_bias) {
  check_input(in, name);
  if (out_features < 1) throw ShapeError("node '" + name + "': out_features must be >= 1");
  const int64_t c = channels(in);
  Node n;
  n.kind = OpKind::Linear;
  n.name = name;
  n.inputs = {in};
  n.attrs = LinearAttrs{c, out_features, has_bias};
  n.channels = out_features;
  n.slots.push_back(add_slot(join_name(name, "weight"), Shape{out_features, c}, SlotRole::Weight));
  if (has_bias) n.slots.push_back(add_slot(join_name(name, "bias"), Shape{out_features}, SlotRole::Bias));
  return push(std::move(n));
}

void GraphBuilder::mark_output(const std::string& name, int node) {
  check_input(node, name);
  for (const auto& o : g_.outputs_) {
    if (o.name == name) throw Error("duplicate graph output '" + name + "'");
  }
  g_.outputs_.push_back({name, node});
}

Graph GraphBuilder::finish() && {
  if (g_.input_ < 0) throw Error("graph '" + g_.name_ + "' has no input");
  if (g_.outputs_.empty()) throw Error("graph '" + g_.name_ + "' has no outputs");
  return std::move(g_);
}

std::string SlotDiff::str() const {
  std::string s;
  for (const auto& m : missing) s += "  missing: " + m + "\n";
  for (const auto& e : extra) s += "  extra: " + e + "\n";
  for (const auto& m : misshaped) s += "  shape mismatch: " + m + "\n";
  return s;
}

SlotDiff diff_slots(const Graph& graph, const std::map<std::string, Shape, std::less<>>& shapes) {
  SlotDiff d;
  for (const auto& slot : graph.slots()) {
    auto it = shapes.find(slot.name);
    if (it == shapes.end()) {
      d.missing.push_back(slot.name);
    } else if (it->second != slot.shape) {
      d.misshaped.push_back(slot.name + ": expected " + slot.shape.str() + ", got " + it->second.str());
    }
  }
  for (const auto& [name, shape] : shapes) {
    if (!graph.find_slot(name)) d.extra.push_back(name);
  }
  return d;
}

}  // namespace ddrnet
