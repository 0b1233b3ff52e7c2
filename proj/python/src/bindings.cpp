#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>

#include "ddrnet/analyzer.hpp"
#include "ddrnet/checkpoint.hpp"
#include "ddrnet/engine.hpp"
#include "ddrnet/gradient_suite.hpp"
#include "ddrnet/loss.hpp"
#include "ddrnet/model_zoo.hpp"
#include "ddrnet/parallel.hpp"

namespace py = pybind11;
using namespace ddrnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IndexArray = py::array_t<int32_t, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
BasicTensor<T> to_tensor(const A& a) {
  std::vector<int64_t> dims(a.shape(), a.shape() + a.ndim());
  const Shape shape{std::span<const int64_t>(dims)};
  return BasicTensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const BasicTensor<T>& t) {
  std::vector<py::ssize_t> dims(t.shape().dims().begin(), t.shape().dims().end());
  py::array_t<T> a(dims);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Graph build(const VariantConfig& config, const std::string& task, bool aux) {
  if (task == "cls") return build_classifier(config);
  if (task == "seg") return build_segmenter(config, aux);
  throw ValueError("task must be 'cls' or 'seg', got '" + task + "'");
}

VariantConfig variant(const std::string& name, std::optional<int64_t> classes) {
  VariantConfig c = find_variant(name);
  if (classes) c.num_classes = *classes;
  return c;
}

py::dict variant_dict(const VariantConfig& c) {
  py::dict d;
  d["name"] = c.name;
  d["stem_width"] = c.stem_width;
  d["stage_widths"] = std::vector<int64_t>(c.stage_widths.begin(), c.stage_widths.end());
  d["high_width"] = c.high_width;
  d["blocks_per_stage"] = std::vector<int>(c.blocks_per_stage.begin(), c.blocks_per_stage.end());
  d["conv4_repeats"] = c.conv4_repeats;
  d["dappm_branch_width"] = c.dappm_branch_width;
  d["head_mid_width"] = c.head_mid_width;
  d["classifier_width"] = c.classifier_width;
  d["num_classes"] = c.num_classes;
  return d;
}

py::dict cost_dict(const CostReport& r) {
  py::list nodes;
  for (const auto& n : r.nodes) {
    py::dict d;
    d["name"] = n.name;
    d["kind"] = std::string(to_string(n.kind));
    d["output"] = std::vector<int64_t>(n.output.dims().begin(), n.output.dims().end());
    d["params"] = n.params;
    d["macs"] = n.macs;
    d["elementwise"] = n.elementwise;
    nodes.append(d);
  }
  py::dict d;
  d["graph"] = r.graph;
  d["convention"] = std::string(to_string(r.convention));
  d["total_params"] = r.total_params;
  d["total_macs"] = r.total_macs;
  d["total_elementwise"] = r.total_elementwise;
  d["gflops"] = r.gflops();
  d["nodes"] = nodes;
  return d;
}

class Model {
 public:
  Model(const std::string& name, const std::string& task, std::optional<int64_t> classes, bool aux,
        std::optional<std::string> weights, uint64_t seed, bool fold)
      : config_(variant(name, classes)),
        graph_(build(config_, task, aux)),
        params_(weights ? load_checkpoint(*weights, graph_) : he_init(graph_, seed)),
        model_(compile(graph_, params_, CompileOptions{fold, true})) {}

  py::dict forward(const FloatArray& x) const {
    const Tensor input = to_tensor<float>(x);
    NamedTensors<float> outs;
    {
      py::gil_scoped_release release;
      outs = run_forward(model_, input);
    }
    py::dict d;
    for (const auto& [k, v] : outs) d[py::str(k)] = to_array(v);
    return d;
  }

  py::array_t<float> infer(const FloatArray& x, std::vector<double> scales, bool flip) const {
    const Tensor input = to_tensor<float>(x);
    Tensor probs;
    {
      py::gil_scoped_release release;
      probs = ms_flip_infer(model_, input, scales, flip);
    }
    return to_array(probs);
  }

  py::dict analyze(int64_t h, int64_t w, const std::string& convention) const {
    return cost_dict(count_flops(graph_, Shape{1, 3, h, w}, parse_convention(convention)));
  }

  void save(const std::string& path) const { save_checkpoint(path, params_, &graph_); }

  std::string name() const { return config_.name; }
  std::string graph_name() const { return graph_.name(); }
  int64_t param_count() const { return count_params(graph_); }
  bool folded() const { return model_.folded(); }
  size_t steps() const { return model_.schedule().size(); }
  std::vector<std::string> outputs() const {
    std::vector<std::string> out;
    for (const auto& o : graph_.outputs()) out.push_back(o.name);
    return out;
  }

 private:
  VariantConfig config_;
  Graph graph_;
  ParamSet<float> params_;
  CompiledModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual-resolution segmentation networks: model zoo, analyzer, CPU engine, losses, DDRW checkpoints";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  auto value_error = py::register_exception<ValueError>(m, "ValueError", PyExc_ValueError);
  py::register_exception<UnknownVariantError>(m, "UnknownVariantError", value_error.ptr());
  auto format_error = py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  (void)format_error;

  m.def("set_num_threads", &set_num_threads, py::arg("threads"));
  m.def("num_threads", &num_threads);

  m.def("list_variants", [] {
    std::vector<std::string> names;
    for (const auto& v : list_variants()) names.push_back(v.name);
    return names;
  });
  m.def("variant", [](const std::string& name) { return variant_dict(find_variant(name)); }, py::arg("name"));

  m.def(
      "analyze",
      [](const std::string& name, const std::string& task, int64_t h, int64_t w, std::optional<int64_t> classes,
         const std::string& convention) {
        const Graph g = build(variant(name, classes), task, false);
        return cost_dict(count_flops(g, Shape{1, 3, h, w}, parse_convention(convention)));
      },
      py::arg("variant"), py::arg("task") = "seg", py::arg("height") = 1024, py::arg("width") = 2048,
      py::arg("classes") = py::none(), py::arg("convention") = "mac1");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, const std::string&, std::optional<int64_t>, bool, std::optional<std::string>,
                    uint64_t, bool>(),
           py::arg("variant"), py::arg("task") = "seg", py::arg("classes") = py::none(), py::arg("aux") = false,
           py::arg("weights") = py::none(), py::arg("seed") = 0, py::arg("fold") = true)
      .def("forward", &Model::forward, py::arg("input"), "NCHW float32 input -> dict of output arrays")
      .def("infer", &Model::infer, py::arg("image"), py::arg("scales") = std::vector<double>{1.0},
           py::arg("flip") = false, "class probabilities at the image size")
      .def("analyze", &Model::analyze, py::arg("height"), py::arg("width"), py::arg("convention") = "mac1")
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("name", &Model::name)
      .def_property_readonly("graph_name", &Model::graph_name)
      .def_property_readonly("param_count", &Model::param_count)
      .def_property_readonly("folded", &Model::folded)
      .def_property_readonly("steps", &Model::steps)
      .def_property_readonly("outputs", &Model::outputs);

  m.def(
      "read_checkpoint",
      [](const std::string& path) {
        py::dict d;
        for (const auto& [k, v] : read_checkpoint(path)) d[py::str(k)] = to_array(v);
        return d;
      },
      py::arg("path"));
  m.def(
      "encode_checkpoint",
      [](const py::dict& entries) {
        CheckpointEntries e;
        for (const auto& [k, v] : entries) e.emplace_back(py::cast<std::string>(k), to_tensor<float>(py::cast<FloatArray>(v)));
        const auto bytes = encode_checkpoint(e);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("entries"));
  m.def(
      "decode_checkpoint",
      [](const py::bytes& data) {
        const std::string s = data;
        py::dict d;
        for (const auto& [k, v] : decode_checkpoint(std::vector<uint8_t>(s.begin(), s.end()))) d[py::str(k)] = to_array(v);
        return d;
      },
      py::arg("data"));

  m.def(
      "cross_entropy",
      [](const FloatArray& logits, const IndexArray& labels, int32_t ignore_index) {
        return cross_entropy(to_tensor<float>(logits), to_tensor<int32_t>(labels), ignore_index);
      },
      py::arg("logits"), py::arg("labels"), py::arg("ignore_index") = 255);
  m.def(
      "ohem_cross_entropy",
      [](const FloatArray& logits, const IndexArray& labels, double threshold, std::optional<int64_t> min_kept,
         int32_t ignore_index) {
        LossConfig c;
        c.ohem = true;
        c.ohem_threshold = threshold;
        c.ohem_min_kept = min_kept;
        c.ignore_index = ignore_index;
        return ohem_cross_entropy(to_tensor<float>(logits), to_tensor<int32_t>(labels), c);
      },
      py::arg("logits"), py::arg("labels"), py::arg("threshold") = 0.7, py::arg("min_kept") = py::none(),
      py::arg("ignore_index") = 255);
  m.def(
      "deep_supervision_loss",
      [](const FloatArray& main, const FloatArray& aux, const IndexArray& labels, double alpha, bool ohem) {
        LossConfig c;
        c.alpha = alpha;
        c.ohem = ohem;
        const auto r = deep_supervision_loss(to_tensor<float>(main), to_tensor<float>(aux), to_tensor<int32_t>(labels), c);
        return py::make_tuple(r.total, r.main, r.aux);
      },
      py::arg("main"), py::arg("aux"), py::arg("labels"), py::arg("alpha") = 0.4, py::arg("ohem") = false);

  m.def(
      "gradient_check",
      [](uint64_t seed, int samples) {
        GradientSuiteOptions o;
        o.seed = seed;
        o.samples = samples;
        GradientSuiteReport r;
        {
          py::gil_scoped_release release;
          r = run_gradient_suite(o);
        }
        py::dict d;
        d["pass"] = r.pass;
        d["checked"] = r.fd.checked;
        d["skipped"] = r.fd.skipped;
        d["max_rel_error"] = r.fd.max_rel_error;
        d["linearity_error"] = r.linearity_error;
        return d;
      },
      py::arg("seed") = 0, py::arg("samples") = 64);
}
