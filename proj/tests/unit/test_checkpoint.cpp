#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ddrnet/checkpoint.hpp"
#include "ddrnet/model_zoo.hpp"

using namespace ddrnet;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("ddrnet_unit_" + name); }

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("he init") {
  const Graph g = build_segmenter(find_variant("ddrnet-23-slim"));
  const auto a = he_init(g, 5);
  const auto b = he_init(g, 5);
  CHECK(a == b);
  CHECK(he_init(g, 6) != a);
  for (const auto& s : g.slots()) {
    if (s.role == SlotRole::Gamma || s.role == SlotRole::RunningVar) {
      for (float v : a.at(s.name).data()) REQUIRE(v == 1.0f);
    }
    if (s.role == SlotRole::Beta || s.role == SlotRole::RunningMean || s.role == SlotRole::Bias) {
      for (float v : a.at(s.name).data()) REQUIRE(v == 0.0f);
    }
  }
  GraphBuilder gb("w");
  const int x = gb.input(256);
  gb.mark_output("out", gb.conv("c", x, Conv2dParams::square(256, 256, 3)));
  const Graph cg = std::move(gb).finish();
  const Tensor w = he_init(cg, 1).at("c.weight");
  double ss = 0;
  for (float v : w.data()) ss += double(v) * v;
  CHECK(std::sqrt(ss / w.numel()) == doctest::Approx(std::sqrt(2.0 / (256 * 9))).epsilon(0.05));
}

TEST_CASE("checkpoint round trip is bit exact") {
  const Graph g = build_segmenter(find_variant("ddrnet-23-slim"));
  ParamSet<float> p = he_init(g, 9);
  randomize_batchnorm(g, p, 10);
  const auto path = tmp("rt.ddrw");
  save_checkpoint(path.string(), p, &g);
  CHECK(load_checkpoint(path.string(), g) == p);

  CheckpointEntries entries;
  for (const auto& s : g.slots()) entries.emplace_back(s.name, p.at(s.name));
  const auto bytes = slurp(path);
  CHECK(static_cast<int64_t>(bytes.size()) == checkpoint_size(entries));
  CHECK(bytes == encode_checkpoint(entries));
  fs::remove(path);
}

TEST_CASE("wire format") {
  const CheckpointEntries e{{"a.b", Tensor(Shape{2}, std::vector<float>{1.0f, -2.0f})}};
  const auto bytes = encode_checkpoint(e);
  const std::vector<uint8_t> expect{'D', 'D', 'R', 'W', 1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 'a', '.', 'b', 0, 1,
                                    2,   0,   0,   0,   0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0};
  CHECK(bytes == expect);
  CHECK(decode_checkpoint(bytes) == e);
}

TEST_CASE("decode errors are distinct") {
  const CheckpointEntries e{{"w", Tensor(Shape{2, 2}, 1.5f)}, {"b", Tensor(Shape{2}, 0.5f)}};
  const auto good = encode_checkpoint(e);

  auto magic = good;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(magic), doctest::Contains("bad magic"), BadMagicError);

  for (size_t cut : {size_t{3}, size_t{10}, good.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint(std::vector<uint8_t>(good.begin(), good.begin() + cut)), TruncatedError);
  }
  auto version = good;
  version[4] = 2;
  CHECK_THROWS_AS(decode_checkpoint(version), FormatError);
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
  CHECK_THROWS_AS(encode_checkpoint({{"w", Tensor(Shape{1})}, {"w", Tensor(Shape{1})}}), ValueError);
}

TEST_CASE("load diffs against the graph") {
  const Graph g = build_segmenter(find_variant("ddrnet-23-slim"));
  const ParamSet<float> p = he_init(g, 1);
  const auto path = tmp("diff.ddrw").string();

  ParamSet<float> missing = p;
  missing.erase("head.conv1x1.weight");
  save_checkpoint(path, missing);
  try {
    load_checkpoint(path, g);
    FAIL("expected SlotMismatchError");
  } catch (const SlotMismatchError& err) {
    CHECK(err.diff.missing == std::vector<std::string>{"head.conv1x1.weight"});
    CHECK(std::string(err.what()).find("head.conv1x1.weight") != std::string::npos);
  }

  ParamSet<float> extra = p;
  extra.emplace("bogus.weight", Tensor(Shape{3}));
  extra.at("stem.0.conv.weight") = Tensor(Shape{32, 3, 5, 5});
  save_checkpoint(path, extra);
  try {
    load_checkpoint(path, g);
    FAIL("expected SlotMismatchError");
  } catch (const SlotMismatchError& err) {
    CHECK(err.diff.missing.empty());
    CHECK(err.diff.extra == std::vector<std::string>{"bogus.weight"});
    REQUIRE(err.diff.misshaped.size() == 1);
    CHECK(err.diff.misshaped[0].find("stem.0.conv.weight") == 0);
  }
  CHECK_THROWS_AS(load_checkpoint((tmp("none") / "x.ddrw").string(), g), IoError);
  CHECK_THROWS_AS(save_checkpoint(path, missing, &g), ShapeError);
  fs::remove(path);
}
