#include "ddrnet/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <variant>

namespace ddrnet {

ParamSet<float> he_init(const Graph& graph, uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet<float> out;
  for (const Node& node : graph.nodes()) {
    for (int s : node.slots) {
      const ParamSlot& slot = graph.slots()[static_cast<size_t>(s)];
      Tensor t(slot.shape);
      switch (slot.role) {
        case SlotRole::Weight: {
          if (node.kind == OpKind::Affine) {
            std::fill(t.data().begin(), t.data().end(), 1.0f);
            break;
          }
          double std = 0.01;
          if (node.kind == OpKind::Conv) {
            const auto& p = std::get<Conv2dParams>(node.attrs);
            std = std::sqrt(2.0 / static_cast<double>(p.out_channels * p.kh * p.kw));
          }
          std::normal_distribution<double> dist(0.0, std);
          for (auto& v : t.data()) v = static_cast<float>(dist(rng));
          break;
        }
        case SlotRole::Gamma:
        case SlotRole::RunningVar:
          std::fill(t.data().begin(), t.data().end(), 1.0f);
          break;
        case SlotRole::Bias:
        case SlotRole::Beta:
        case SlotRole::RunningMean:
          break;
      }
      out.emplace(slot.name, std::move(t));
    }
  }
  return out;
}

void randomize_batchnorm(const Graph& graph, ParamSet<float>& params, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.5, 1.5);
  std::normal_distribution<double> small(0.0, 0.1);
  for (const Node& node : graph.nodes()) {
    if (node.kind != OpKind::BatchNorm) continue;
    for (int s : node.slots) {
      const ParamSlot& slot = graph.slots()[static_cast<size_t>(s)];
      auto it = params.find(slot.name);
      if (it == params.end()) throw ShapeError("randomize_batchnorm: missing parameter '" + slot.name + "'");
      const bool positive = slot.role == SlotRole::Gamma || slot.role == SlotRole::RunningVar;
      for (auto& v : it->second.data()) v = static_cast<float>(positive ? unit(rng) : small(rng));
    }
  }
}

namespace {

void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }
void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v));
  b.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& b) : b_(b) {}
  void need(size_t n, const std::string& what) const {
    if (b_.size() - pos_ < n) {
      throw TruncatedError("truncated checkpoint: need " + std::to_string(n) + " bytes for " + what + " at offset " +
                           std::to_string(pos_) + ", file has " + std::to_string(b_.size()));
    }
  }
  uint8_t u8(const std::string& what) {
    need(1, what);
    return b_[pos_++];
  }
  uint16_t u16(const std::string& what) {
    need(2, what);
    const uint16_t v = static_cast<uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32(const std::string& what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }
  size_t size() const { return b_.size(); }

 private:
  const std::vector<uint8_t>& b_;
  size_t pos_ = 0;
};

}  // namespace

int64_t checkpoint_size(const CheckpointEntries& entries) {
  int64_t n = 12;
  for (const auto& [name, t] : entries) n += 2 + static_cast<int64_t>(name.size()) + 2 + 4 * t.rank() + 4 * t.numel();
  return n;
}

std::vector<uint8_t> encode_checkpoint(const CheckpointEntries& entries) {
  std::vector<uint8_t> b;
  b.reserve(static_cast<size_t>(checkpoint_size(entries)));
  for (char c : std::string("DDRW")) b.push_back(static_cast<uint8_t>(c));
  put_u32(b, kCheckpointVersion);
  put_u32(b, static_cast<uint32_t>(entries.size()));
  std::set<std::string> seen;
  for (const auto& [name, t] : entries) {
    if (name.empty() || name.size() > 0xFFFF) throw ValueError("checkpoint entry name length out of range: '" + name + "'");
    if (!seen.insert(name).second) throw ValueError("duplicate checkpoint entry '" + name + "'");
    put_u16(b, static_cast<uint16_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    put_u8(b, 0);
    put_u8(b, static_cast<uint8_t>(t.rank()));
    for (int64_t d : t.shape().dims()) put_u32(b, static_cast<uint32_t>(d));
    for (float v : t.data()) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(b, bits);
    }
  }
  return b;
}

CheckpointEntries decode_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 && std::memcmp(bytes.data(), "DDRW", bytes.size()) == 0) {
    throw TruncatedError("truncated checkpoint: " + std::to_string(bytes.size()) + " bytes");
  }
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "DDRW", 4) != 0) {
    throw BadMagicError("bad magic: not a DDRW checkpoint");
  }
  r.bytes(4, "magic");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const uint32_t count = r.u32("entry count");
  CheckpointEntries out;
  std::set<std::string> seen;
  for (uint32_t e = 0; e < count; ++e) {
    const std::string where = "entry " + std::to_string(e);
    const uint16_t len = r.u16(where + " name length");
    std::string name = r.bytes(len, where + " name");
    const uint8_t dtype = r.u8(where + " dtype");
    if (dtype != 0) throw FormatError("entry '" + name + "': unsupported dtype code " + std::to_string(dtype));
    const uint8_t rank = r.u8(where + " rank");
    if (rank < 1 || rank > Shape::kMaxRank) {
      throw FormatError("entry '" + name + "': rank " + std::to_string(rank) + " out of range");
    }
    std::vector<int64_t> dims;
    for (int i = 0; i < rank; ++i) dims.push_back(r.u32(where + " extent"));
    const Shape shape(dims);
    r.need(static_cast<size_t>(shape.numel()) * 4, "values of '" + name + "'");
    std::vector<float> values(static_cast<size_t>(shape.numel()));
    for (auto& v : values) {
      const uint32_t bits = r.u32("value");
      std::memcpy(&v, &bits, 4);
    }
    if (!seen.insert(name).second) throw FormatError("duplicate checkpoint entry '" + name + "'");
    out.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  if (r.pos() != r.size()) {
    throw FormatError("checkpoint has " + std::to_string(r.size() - r.pos()) + " trailing bytes");
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamSet<float>& params, const Graph* graph) {
  CheckpointEntries entries;
  if (graph) {
    require_params(*graph, params);
    for (const auto& slot : graph->slots()) entries.emplace_back(slot.name, params.find(slot.name)->second);
  } else {
    for (const auto& [name, t] : params) entries.emplace_back(name, t);
  }
  const auto bytes = encode_checkpoint(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

CheckpointEntries read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

ParamSet<float> load_checkpoint(const std::string& path, const Graph& graph) {
  ParamSet<float> params;
  for (auto& [name, t] : read_checkpoint(path)) params.emplace(std::move(name), std::move(t));
  SlotDiff d = diff_slots(graph, params);
  if (!d.empty()) {
    std::string what = "checkpoint '" + path + "' does not match graph '" + graph.name() + "':\n" + d.str();
    throw SlotMismatchError(what, std::move(d));
  }
  return params;
}

}  // namespace ddrnet
