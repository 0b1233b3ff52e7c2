#include "ddrnet/analyzer.hpp"

#include <cstdio>
#include <variant>

namespace ddrnet {

std::string_view to_string(FlopConvention c) { return c == FlopConvention::Mac2 ? "mac2" : "mac1"; }

FlopConvention parse_convention(std::string_view text) {
  if (text == "mac1") return FlopConvention::Mac1;
  if (text == "mac2") return FlopConvention::Mac2;
  throw ValueError("unknown FLOP convention '" + std::string(text) + "' (expected mac1 or mac2)");
}

namespace {

[[noreturn]] void fail(const Node& node, const std::string& what) {
  throw ShapeError("node '" + node.name + "' (" + std::string(to_string(node.kind)) + "): " + what);
}

Shape window_shape(const Node& node, const Shape& in, int kh, int kw, int sh, int sw, int ph, int pw, int64_t c) {
  try {
    return Shape{in.n(), c, window_out_extent(in.h(), kh, sh, ph), window_out_extent(in.w(), kw, sw, pw)};
  } catch (const ShapeError& e) {
    fail(node, e.what());
  }
}

}  // namespace

std::vector<Shape> infer_shapes(const Graph& graph, const Shape& input) {
  if (input.rank() != 4) throw ShapeError("input shape must be rank 4 NCHW, got " + input.str());
  std::vector<Shape> shapes(graph.nodes().size());
  for (const Node& node : graph.nodes()) {
    auto in = [&](size_t k) -> const Shape& { return shapes[static_cast<size_t>(node.inputs.at(k))]; };
    Shape out;
    switch (node.kind) {
      case OpKind::Input: {
        const int m = graph.input_multiple();
        if (input.h() % m != 0 || input.w() % m != 0) {
          fail(node, "spatial extents " + std::to_string(input.h()) + "x" + std::to_string(input.w()) +
                         " must be divisible by " + std::to_string(m));
        }
        out = input;
        break;
      }
      case OpKind::Conv: {
        const auto& p = std::get<Conv2dParams>(node.attrs);
        if (in(0).c() != p.in_channels) {
          fail(node, "expected " + std::to_string(p.in_channels) + " input channels, got " +
                         std::to_string(in(0).c()) + " (input shape " + in(0).str() + ")");
        }
        out = window_shape(node, in(0), p.kh, p.kw, p.sh, p.sw, p.ph, p.pw, p.out_channels);
        break;
      }
      case OpKind::BatchNorm:
      case OpKind::Affine:
      case OpKind::Relu:
        if (in(0).c() != node.channels) {
          fail(node, "expected " + std::to_string(node.channels) + " channels, got " + in(0).str());
        }
        out = in(0);
        break;
      case OpKind::Add:
        if (in(0) != in(1)) fail(node, "operands differ: " + in(0).str() + " vs " + in(1).str());
        out = in(0);
        break;
      case OpKind::AvgPool: {
        const auto& p = std::get<Pool2dParams>(node.attrs);
        out = window_shape(node, in(0), p.kh, p.kw, p.sh, p.sw, p.ph, p.pw, in(0).c());
        break;
      }
      case OpKind::GlobalAvgPool:
        out = Shape{in(0).n(), in(0).c(), 1, 1};
        break;
      case OpKind::ResizeLike:
        if (in(0).n() != in(1).n()) fail(node, "batch mismatch " + in(0).str() + " vs " + in(1).str());
        out = Shape{in(0).n(), in(0).c(), in(1).h(), in(1).w()};
        break;
      case OpKind::Concat: {
        int64_t c = 0;
        for (size_t k = 0; k < node.inputs.size(); ++k) {
          const Shape& s = in(k);
          if (s.n() != in(0).n() || s.h() != in(0).h() || s.w() != in(0).w()) {
            fail(node, "N/H/W mismatch " + s.str() + " vs " + in(0).str());
          }
          c += s.c();
        }
        out = Shape{in(0).n(), c, in(0).h(), in(0).w()};
        break;
      }
      case OpKind::Linear: {
        const auto& a = std::get<LinearAttrs>(node.attrs);
        if (in(0).h() != 1 || in(0).w() != 1 || in(0).c() != a.in_features) {
          fail(node, "expected N x " + std::to_string(a.in_features) + " x 1 x 1, got " + in(0).str());
        }
        out = Shape{in(0).n(), a.out_features, 1, 1};
        break;
      }
    }
    shapes[static_cast<size_t>(node.id)] = out;
  }
  return shapes;
}

int64_t count_params(const Graph& graph) {
  int64_t total = 0;
  for (const auto& slot : graph.slots()) {
    if (slot.trainable()) total += slot.shape.numel();
  }
  return total;
}

CostReport count_flops(const Graph& graph, const Shape& input, FlopConvention convention) {
  const auto shapes = infer_shapes(graph, input);
  CostReport r;
  r.graph = graph.name();
  r.input = input;
  r.convention = convention;
  for (const Node& node : graph.nodes()) {
    NodeCost nc;
    nc.node = node.id;
    nc.name = node.name;
    nc.kind = node.kind;
    nc.output = shapes[static_cast<size_t>(node.id)];
    for (int s : node.slots) {
      const ParamSlot& slot = graph.slots()[static_cast<size_t>(s)];
      if (slot.trainable()) nc.params += slot.shape.numel();
    }
    const int64_t out_elems = nc.output.numel();
    auto in = [&](size_t k) -> const Shape& { return shapes[static_cast<size_t>(node.inputs.at(k))]; };
    switch (node.kind) {
      case OpKind::Conv: {
        const auto& p = std::get<Conv2dParams>(node.attrs);
        nc.macs = out_elems * p.in_channels * p.kh * p.kw;
        break;
      }
      case OpKind::Linear: {
        const auto& a = std::get<LinearAttrs>(node.attrs);
        nc.macs = nc.output.n() * a.in_features * a.out_features;
        break;
      }
      case OpKind::BatchNorm:
      case OpKind::Affine:
      case OpKind::Relu:
      case OpKind::Add:
        nc.elementwise = out_elems;
        break;
      case OpKind::AvgPool: {
        const auto& p = std::get<Pool2dParams>(node.attrs);
        nc.elementwise = out_elems * p.kh * p.kw;
        break;
      }
      case OpKind::GlobalAvgPool:
        nc.elementwise = in(0).numel();
        break;
      case OpKind::ResizeLike:
        nc.elementwise = 4 * out_elems;
        break;
      case OpKind::Input:
      case OpKind::Concat:
        break;
    }
    r.total_params += nc.params;
    r.total_macs += nc.macs;
    r.total_elementwise += nc.elementwise;
    r.nodes.push_back(std::move(nc));
  }
  return r;
}

std::string summarize(const CostReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-40s %-16s %-20s %12s %16s %14s\n", "node", "kind", "output", "params", "MACs",
                "elementwise");
  out += line;
  for (const auto& n : report.nodes) {
    std::snprintf(line, sizeof line, "%-40s %-16s %-20s %12lld %16lld %14lld\n", n.name.c_str(),
                  std::string(to_string(n.kind)).c_str(), n.output.str().c_str(), static_cast<long long>(n.params),
                  static_cast<long long>(n.macs), static_cast<long long>(n.elementwise));
    out += line;
  }
  std::snprintf(line, sizeof line, "%-40s %-16s %-20s %12lld %16lld %14lld\n", "TOTAL", "", report.input.str().c_str(),
                static_cast<long long>(report.total_params), static_cast<long long>(report.total_macs),
                static_cast<long long>(report.total_elementwise));
  out += line;
  std::snprintf(line, sizeof line, "params %.3fM  GFLOPs %.3f (%s)\n", static_cast<double>(report.total_params) / 1e6,
                report.gflops(), std::string(to_string(report.convention)).c_str());
  out += line;
  return out;
}

}  // namespace ddrnet
