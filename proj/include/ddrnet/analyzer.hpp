#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ddrnet/graph.hpp"

namespace ddrnet {

enum class FlopConvention { Mac1, Mac2 };

std::string_view to_string(FlopConvention c);
FlopConvention parse_convention(std::string_view text);

struct NodeCost {
  int node = -1;
  std::string name;
  OpKind kind = OpKind::Input;
  Shape output;
  int64_t params = 0;       // trainable slot elements owned by the node
  int64_t macs = 0;         // conv: out_elems * in_c * kh * kw; linear: N * in * out
  int64_t elementwise = 0;  // BN/ReLU/add/affine: out_elems; pools: window reads; resize: 4 taps per output
};

/// Per-node and total cost of one graph at one input shape.
struct CostReport {
  std::string graph;
  Shape input;
  FlopConvention convention = FlopConvention::Mac1;
  std::vector<NodeCost> nodes;
  int64_t total_params = 0;
  int64_t total_macs = 0;
  int64_t total_elementwise = 0;

  /// Headline figure: conv/linear MACs under the chosen convention, in 1e9.
  /// Elementwise work is reported separately and not included.
  double gflops() const {
    return static_cast<double>(total_macs) * (convention == FlopConvention::Mac2 ? 2.0 : 1.0) / 1e9;
  }
};

/// Output shape of every node, indexed by node id. Fails fast on the first
/// inconsistent node, naming it together with the expected and actual shapes.
std::vector<Shape> infer_shapes(const Graph& graph, const Shape& input);

/// Sum of trainable slot element counts (BN running statistics excluded).
int64_t count_params(const Graph& graph);

CostReport count_flops(const Graph& graph, const Shape& input, FlopConvention convention = FlopConvention::Mac1);

/// Fixed-column text table: header row, one row per node, totals row last.
std::string summarize(const CostReport& report);

}  // namespace ddrnet
