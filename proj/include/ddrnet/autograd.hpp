#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ddrnet/graph.hpp"
#include "ddrnet/loss.hpp"

namespace ddrnet::autograd {

using ValueId = int;
using Gradients = std::map<std::string, Tensor64, std::less<>>;

/// Backward rule of a custom op: output gradient -> one gradient per input.
using CustomBackward = std::function<std::vector<Tensor64>(const Tensor64& grad_out)>;

enum class TapeOp {
  Parameter,
  Constant,
  Conv2d,
  BatchNorm,
  Relu,
  Add,
  AvgPool,
  GlobalAvgPool,
  Resize,
  Concat,
  Linear,
  CrossEntropy,
  Sum,
  Mean,
  Scale,
  Square,
  Custom,
};

/// Forward values are computed eagerly while recording (64-bit). A finished
/// tape is read-only; backward() may run concurrently on it.
class Tape {
 public:
  ValueId parameter(const std::string& name, Tensor64 value);
  ValueId constant(Tensor64 value);

  ValueId conv2d(ValueId x, ValueId weight, std::optional<ValueId> bias, const Conv2dParams& params);
  /// Inference-mode BN: running statistics are fixed constants.
  ValueId batch_norm(ValueId x, ValueId gamma, ValueId beta, std::vector<double> mean, std::vector<double> var,
                     double epsilon);
  ValueId relu(ValueId x);
  ValueId add(ValueId a, ValueId b);
  ValueId avg_pool(ValueId x, const Pool2dParams& params);
  ValueId global_avg_pool(ValueId x);
  ValueId resize(ValueId x, int64_t out_h, int64_t out_w);
  ValueId concat(const std::vector<ValueId>& parts);
  ValueId linear(ValueId x, ValueId weight, std::optional<ValueId> bias);
  /// Mean NLL over pixels with keep[i] != 0 (all non-ignored pixels when
  /// `keep` is empty). Logits must match the label extents.
  ValueId cross_entropy(ValueId logits, const IndexTensor& labels, int32_t ignore_index,
                        std::vector<uint8_t> keep = {});
  ValueId sum(ValueId x);
  ValueId mean(ValueId x);
  ValueId scale(ValueId x, double factor);
  ValueId square(ValueId x);
  ValueId custom(const std::vector<ValueId>& inputs, Tensor64 output, CustomBackward backward);

  const Tensor64& value(ValueId id) const { return values_.at(static_cast<size_t>(id)); }
  size_t size() const { return values_.size(); }
  /// Parameter names in registration order.
  std::vector<std::string> parameter_names() const;
  /// Values fed to relu(), in recording order (used to detect kinks).
  std::vector<ValueId> relu_inputs() const;

  /// Gradient of a scalar value with respect to every parameter; parameters
  /// the loss does not reach get zeros. Throws ShapeError for a non-scalar loss.
  Gradients backward(ValueId loss) const;

 private:
  struct CeAttrs {
    IndexTensor labels;
    int32_t ignore_index = 255;
    std::vector<uint8_t> keep;
    int64_t count = 0;
  };
  struct BnAttrs {
    std::vector<double> mean, var;
    double epsilon = 0.0;
  };
  struct Record {
    TapeOp op = TapeOp::Constant;
    std::vector<ValueId> inputs;
    ValueId output = -1;
    std::variant<std::monostate, Conv2dParams, Pool2dParams, BnAttrs, CeAttrs, double, std::string> attrs;
    CustomBackward custom;
  };

  ValueId push(Record r, Tensor64 value);
  void check(ValueId id) const;

  std::vector<Tensor64> values_;
  std::vector<Record> records_;  // records_[i].output == i
};

/// Graph values recorded on a tape.
struct RecordedGraph {
  std::map<std::string, ValueId, std::less<>> outputs;
  std::vector<ValueId> nodes;  // value of every graph node
};

/// Records a graph's forward pass. Trainable slots become parameters named
/// after the slot; BN running statistics stay constants. Affine nodes are not
/// supported (differentiate the unfolded graph).
RecordedGraph record_graph(Tape& tape, const Graph& graph, const ParamSet<double>& params, const Tensor64& input);

/// Builds a scalar objective on a fresh tape from a parameter set.
using Objective = std::function<ValueId(Tape& tape, const ParamSet<double>& params)>;

struct ParamRef {
  std::string name;
  int64_t index = 0;
};

struct FdEntry {
  ParamRef param;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool skipped = false;  // perturbation moved a ReLU input across zero
};

struct FdReport {
  std::vector<FdEntry> entries;
  double step = 0.0;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;
  bool pass = true;

  std::string str() const;
};

/// Central differences (f(p+h) - f(p-h)) / 2h against backward(); relative
/// error |a - b| / max(|a|, |b|, 1e-8). Parameters whose perturbation changes
/// the sign of any ReLU input are reported as skipped.
FdReport finite_diff_check(const Objective& objective, const ParamSet<double>& params,
                           const std::vector<ParamRef>& subset, double step = 1e-4, double tolerance = 1e-3);

/// Graph form: objective is the sum over graph outputs of their mean.
FdReport finite_diff_check(const Graph& graph, const ParamSet<double>& params, const Tensor64& input,
                           const std::vector<ParamRef>& subset, double step = 1e-4, double tolerance = 1e-3);

/// `count` distinct (slot, element) pairs drawn uniformly over trainable elements.
std::vector<ParamRef> sample_params(const Graph& graph, int count, uint64_t seed);

}  // namespace ddrnet::autograd
