#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddrnet/gemm.hpp"
#include "ddrnet/graph.hpp"
#include "ddrnet/reference.hpp"

namespace ddrnet {

/// Graph rewritten with batch norms absorbed into the preceding convolutions.
/// A BN whose input is not a convolution owned solely by that BN becomes an
/// Affine node `<bn name>` with slots `.scale` / `.shift`.
template <typename T>
struct FoldedGraph {
  Graph graph;
  ParamSet<T> params;
  std::vector<std::string> log;
};

/// w' = w * g / sqrt(v + eps), b' = beta - g * mu / sqrt(v + eps) + b * g / sqrt(v + eps).
template <typename T>
FoldedGraph<T> fold_batchnorm(const Graph& graph, const ParamSet<T>& params);

struct CompileOptions {
  bool fold_batchnorm = true;
  /// Merge a ReLU into the conv/add/affine/BN producing its sole input.
  bool fuse_relu = true;
};

struct Step {
  int node = -1;
  bool fused_relu = false;
  /// Input slot whose buffer this step may overwrite (its last use), or -1.
  int inplace_input = -1;
  /// Values dead after this step.
  std::vector<int> release;
};

/// Read-only after compile(); share freely between threads.
class CompiledModel {
 public:
  const Graph& graph() const { return graph_; }
  const ParamSet<float>& params() const { return params_; }
  bool folded() const { return folded_; }
  const std::vector<Step>& schedule() const { return schedule_; }
  const std::vector<std::string>& log() const { return log_; }

  /// Peak bytes of live activations for one forward at `input`.
  int64_t peak_workspace_bytes(const Shape& input) const;

 private:
  friend CompiledModel compile(const Graph&, const ParamSet<float>&, const CompileOptions&);
  friend struct EngineAccess;
  Graph graph_;
  ParamSet<float> params_;
  bool folded_ = false;
  std::vector<Step> schedule_;
  std::vector<std::string> log_;
  std::vector<int> alias_;             // node id -> node holding its value (fused ReLUs)
  std::vector<gemm::PackedA> packed_;  // per node id; empty for non-conv nodes
};

CompiledModel compile(const Graph& graph, const ParamSet<float>& params, const CompileOptions& options = {});

struct RunStats {
  int64_t macs = 0;  // multiplies issued by conv and linear kernels
};

/// Deterministic forward pass; outputs keyed by graph output name.
NamedTensors<float> run_forward(const CompiledModel& model, const Tensor& input, RunStats* stats = nullptr);

/// im2col + packed GEMM convolution, the engine's conv kernel on its own.
Tensor conv2d_gemm(const Tensor& input, const Tensor& weight, std::span<const float> bias,
                   const Conv2dParams& params, bool relu = false);

std::vector<double> default_tta_scales();

/// round(x / 64) * 64 with halves rounded up, at least 64.
int64_t snap_to_64(double extent);

/// Multi-scale (+ horizontal flip) test-time augmentation over output
/// "logits". Per pass: resize image, forward, softmax, undo the flip, resize
/// probabilities to the image size; result is the mean over passes.
Tensor ms_flip_infer(const CompiledModel& model, const Tensor& image, const std::vector<double>& scales, bool flip);

struct BenchReport {
  Shape input;
  bool folded = false;
  int threads = 1;
  int warmup_iters = 0;
  int timed_iters = 0;
  double total_seconds = 0.0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double min_ms = 0.0;
  double fps = 0.0;
  std::vector<double> samples_ms;
};

/// Batch-1 latency: warmup runs are discarded, FPS = timed_iters / total timed seconds.
BenchReport benchmark(const CompiledModel& model, const Shape& input, int warmup_iters, int timed_iters,
                      uint64_t seed = 0);

}  // namespace ddrnet
