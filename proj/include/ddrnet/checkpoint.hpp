#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ddrnet/graph.hpp"

namespace ddrnet {

/// Conv weights ~ N(0, sqrt(2 / (out * kh * kw))), fc weights ~ N(0, 0.01),
/// biases 0, BN gamma 1 / beta 0 / mean 0 / var 1. Slots are drawn in graph
/// order from one mt19937_64 stream, so the result depends only on the seed.
ParamSet<float> he_init(const Graph& graph, uint64_t seed);

/// Replaces every BN's statistics and affine terms with non-trivial random
/// values (gamma, var in [0.5, 1.5], beta, mean ~ N(0, 0.1)). Test fixture for
/// folding and gradient checks, where identity BNs would hide mistakes.
void randomize_batchnorm(const Graph& graph, ParamSet<float>& params, uint64_t seed);

// DDRW container, little-endian:
//   "DDRW" | u32 version (1) | u32 count | count x entry
//   entry: u16 name bytes | name | u8 dtype (0 = f32) | u8 rank | rank x u32 extent | values
inline constexpr uint32_t kCheckpointVersion = 1;

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Loaded entries disagree with the graph's slots; the message lists every
/// missing, extra and mis-shaped name.
class SlotMismatchError : public ShapeError {
 public:
  SlotMismatchError(const std::string& what, SlotDiff d) : ShapeError(what), diff(std::move(d)) {}
  SlotDiff diff;
};

using CheckpointEntries = std::vector<std::pair<std::string, Tensor>>;

/// Entries in the order given.
std::vector<uint8_t> encode_checkpoint(const CheckpointEntries& entries);
CheckpointEntries decode_checkpoint(const std::vector<uint8_t>& bytes);

/// Exact encoded size: 12 + sum(2 + name + 2 + 4 * rank + 4 * numel).
int64_t checkpoint_size(const CheckpointEntries& entries);

/// Writes params in the graph's slot order when a graph is given (all slots
/// must be present), otherwise in name order.
void save_checkpoint(const std::string& path, const ParamSet<float>& params, const Graph* graph = nullptr);

/// Reads a file and checks it against the graph's slots.
ParamSet<float> load_checkpoint(const std::string& path, const Graph& graph);

/// Reads a file without a graph check.
CheckpointEntries read_checkpoint(const std::string& path);

}  // namespace ddrnet
