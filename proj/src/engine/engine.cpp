#include "ddrnet/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <random>
#include <variant>

#include "ddrnet/analyzer.hpp"
#include "ddrnet/parallel.hpp"

namespace ddrnet {

struct EngineAccess {
  static const std::vector<int>& alias(const CompiledModel& m) { return m.alias_; }
  static const gemm::PackedA& packed(const CompiledModel& m, int node) {
    return m.packed_[static_cast<size_t>(node)];
  }
};

namespace {

bool is_pointwise_1x1(const Conv2dParams& p) {
  return p.kh == 1 && p.kw == 1 && p.sh == 1 && p.sw == 1 && p.ph == 0 && p.pw == 0;
}

// Output pixels per GEMM call: keeps the im2col panel near 2 MB. Fixed per
// layer, independent of the thread count.
int64_t pixel_chunk(int64_t k, int64_t npix) {
  int64_t chunk = ((int64_t{1} << 19) / std::max<int64_t>(k, 1)) / 64 * 64;
  chunk = std::clamp<int64_t>(chunk, 64, 4096);
  return std::min(chunk, npix);
}

// Rows (ic, ky, kx) x columns (output pixels p0 .. p0+nc) of image n.
void im2col(const Tensor& x, int64_t n, const Conv2dParams& p, int64_t ow, int64_t p0, int64_t nc, float* col) {
  const int64_t H = x.h();
  const int64_t W = x.w();
  int64_t row = 0;
  for (int64_t ic = 0; ic < p.in_channels; ++ic) {
    const float* plane = x.plane(n, ic);
    for (int ky = 0; ky < p.kh; ++ky) {
      for (int kx = 0; kx < p.kw; ++kx, ++row) {
        float* dst = col + row * nc;
        int64_t j = 0;
        int64_t oy = p0 / ow;
        int64_t ox = p0 % ow;
        while (j < nc) {
          const int64_t run = std::min(nc - j, ow - ox);
          const int64_t iy = oy * p.sh - p.ph + ky;
          if (iy < 0 || iy >= H) {
            std::fill(dst + j, dst + j + run, 0.0f);
          } else {
            const float* src = plane + iy * W;
            const int64_t shift = kx - p.pw;
            for (int64_t t = 0; t < run; ++t) {
              const int64_t ix = (ox + t) * p.sw + shift;
              dst[j + t] = (ix >= 0 && ix < W) ? src[ix] : 0.0f;
            }
          }
          j += run;
          ox = 0;
          ++oy;
        }
      }
    }
  }
}

Tensor conv_exec(const Tensor& x, const gemm::PackedA& a, const float* bias, const Conv2dParams& p, bool relu,
                 RunStats* stats) {
  if (x.rank() != 4 || x.c() != p.in_channels) {
    throw ShapeError("conv expects " + std::to_string(p.in_channels) + " input channels, got shape " +
                     x.shape().str());
  }
  const int64_t oh = window_out_extent(x.h(), p.kh, p.sh, p.ph, "conv kernel height");
  const int64_t ow = window_out_extent(x.w(), p.kw, p.sw, p.pw, "conv kernel width");
  const int64_t N = x.n();
  const int64_t M = p.out_channels;
  const int64_t K = p.in_channels * p.kh * p.kw;
  const int64_t npix = oh * ow;
  Tensor out(Shape{N, M, oh, ow});
  const bool direct = is_pointwise_1x1(p);
  const int64_t chunk = pixel_chunk(K, npix);
  const int64_t nchunks = (npix + chunk - 1) / chunk;

  parallel_for(0, N * nchunks, [&](int64_t begin, int64_t end) {
    thread_local std::vector<float> col;
    for (int64_t t = begin; t < end; ++t) {
      const int64_t n = t / nchunks;
      const int64_t p0 = (t % nchunks) * chunk;
      const int64_t nc = std::min(chunk, npix - p0);
      const float* bsrc;
      int64_t ldb;
      if (direct) {
        bsrc = x.plane(n, 0) + p0;
        ldb = npix;
      } else {
        col.resize(static_cast<size_t>(K * nc));
        im2col(x, n, p, ow, p0, nc, col.data());
        bsrc = col.data();
        ldb = nc;
      }
      float* c = out.plane(n, 0) + p0;
      gemm::multiply(a, bsrc, ldb, nc, c, npix);
      if (bias || relu) {
        for (int64_t oc = 0; oc < M; ++oc) {
          float* r = c + oc * npix;
          const float bv = bias ? bias[oc] : 0.0f;
          if (bias && relu) {
            for (int64_t j = 0; j < nc; ++j) r[j] = std::max(r[j] + bv, 0.0f);
          } else if (bias) {
            for (int64_t j = 0; j < nc; ++j) r[j] += bv;
          } else {
            for (int64_t j = 0; j < nc; ++j) r[j] = std::max(r[j], 0.0f);
          }
        }
      }
    }
  });
  if (stats) stats->macs += N * M * K * npix;
  return out;
}

// y = x * scale[c] + shift[c], optionally rectified, in place.
void channel_affine_inplace(Tensor& x, const std::vector<float>& scale, const std::vector<float>& shift, bool relu) {
  const int64_t hw = x.h() * x.w();
  parallel_for(0, x.n() * x.c(), [&](int64_t b, int64_t e) {
    for (int64_t nc = b; nc < e; ++nc) {
      const auto c = static_cast<size_t>(nc % x.c());
      float* d = x.ptr() + nc * hw;
      const float s = scale[c];
      const float t = shift[c];
      if (relu) {
        for (int64_t i = 0; i < hw; ++i) d[i] = std::max(d[i] * s + t, 0.0f);
      } else {
        for (int64_t i = 0; i < hw; ++i) d[i] = d[i] * s + t;
      }
    }
  });
}

void relu_inplace(Tensor& x) {
  float* d = x.ptr();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) d[i] = std::max(d[i], 0.0f);
}

std::vector<float> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

CompiledModel compile(const Graph& graph, const ParamSet<float>& params, const CompileOptions& options) {
  CompiledModel m;
  if (options.fold_batchnorm) {
    auto f = fold_batchnorm(graph, params);
    m.graph_ = std::move(f.graph);
    m.params_ = std::move(f.params);
    m.log_ = std::move(f.log);
    m.folded_ = true;
  } else {
    require_params(graph, params);
    m.graph_ = graph;
    m.params_ = params;
    m.log_.push_back("batch norm folding disabled");
  }
  const Graph& g = m.graph_;
  const auto& nodes = g.nodes();
  const size_t n = nodes.size();
  const auto consumers = g.consumers();
  std::vector<bool> is_output(n, false);
  for (const auto& o : g.outputs()) is_output[static_cast<size_t>(o.node)] = true;

  m.alias_.resize(n);
  for (size_t i = 0; i < n; ++i) m.alias_[i] = static_cast<int>(i);
  std::vector<bool> fused(n, false);
  std::vector<bool> skipped(n, false);
  if (options.fuse_relu) {
    for (const Node& node : nodes) {
      if (node.kind != OpKind::Relu) continue;
      const auto s = static_cast<size_t>(node.inputs[0]);
      const OpKind k = nodes[s].kind;
      const bool fusable = k == OpKind::Conv || k == OpKind::Add || k == OpKind::Affine || k == OpKind::BatchNorm;
      if (fusable && consumers[s].size() == 1 && !is_output[s] && !fused[s]) {
        fused[s] = true;
        skipped[static_cast<size_t>(node.id)] = true;
        m.alias_[static_cast<size_t>(node.id)] = static_cast<int>(s);
        m.log_.push_back("fused " + node.name + " into " + nodes[s].name);
      }
    }
  }

  std::vector<int> last_use(n, -1);
  for (const Node& node : nodes) {
    if (skipped[static_cast<size_t>(node.id)]) continue;
    Step st;
    st.node = node.id;
    st.fused_relu = fused[static_cast<size_t>(node.id)];
    const int idx = static_cast<int>(m.schedule_.size());
    for (int in : node.inputs) last_use[static_cast<size_t>(m.alias_[static_cast<size_t>(in)])] = idx;
    m.schedule_.push_back(std::move(st));
  }
  std::vector<bool> keep(n, false);
  for (const auto& o : g.outputs()) keep[static_cast<size_t>(m.alias_[static_cast<size_t>(o.node)])] = true;
  for (size_t s = 0; s < m.schedule_.size(); ++s) {
    const int v = m.schedule_[s].node;
    if (keep[static_cast<size_t>(v)]) continue;
    const int lu = last_use[static_cast<size_t>(v)];
    m.schedule_[static_cast<size_t>(lu >= 0 ? lu : static_cast<int>(s))].release.push_back(v);
  }
  for (size_t s = 0; s < m.schedule_.size(); ++s) {
    Step& st = m.schedule_[s];
    const Node& node = nodes[static_cast<size_t>(st.node)];
    const bool elementwise = node.kind == OpKind::Relu || node.kind == OpKind::Add ||
                             node.kind == OpKind::Affine || node.kind == OpKind::BatchNorm;
    if (!elementwise) continue;
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      const int v = m.alias_[static_cast<size_t>(node.inputs[k])];
      const bool dies_here = std::find(st.release.begin(), st.release.end(), v) != st.release.end();
      const bool unique =
          std::count_if(node.inputs.begin(), node.inputs.end(), [&](int o) { return m.alias_[static_cast<size_t>(o)] == v; }) == 1;
      if (dies_here && unique && nodes[static_cast<size_t>(v)].kind != OpKind::Input) {
        st.inplace_input = static_cast<int>(k);
        break;
      }
    }
  }

  m.packed_.resize(n);
  for (const Node& node : nodes) {
    if (node.kind != OpKind::Conv) continue;
    const auto& p = std::get<Conv2dParams>(node.attrs);
    const Tensor& w = slot_value(g, node, 0, m.params_);
    const int64_t k = p.in_channels * p.kh * p.kw;
    m.packed_[static_cast<size_t>(node.id)] = gemm::pack_a(w.ptr(), p.out_channels, k, k);
  }
  m.log_.push_back("schedule: " + std::to_string(m.schedule_.size()) + " steps over " + std::to_string(n) +
                   " graph nodes");
  return m;
}

int64_t CompiledModel::peak_workspace_bytes(const Shape& input) const {
  const auto shapes = infer_shapes(graph_, input);
  int64_t live = 0;
  int64_t peak = 0;
  for (const Step& st : schedule_) {
    if (st.inplace_input < 0) live += shapes[static_cast<size_t>(st.node)].numel() * 4;
    peak = std::max(peak, live);
    for (int v : st.release) {
      const bool reused = st.inplace_input >= 0 &&
                          alias_[static_cast<size_t>(graph_.node(st.node).inputs[static_cast<size_t>(st.inplace_input)])] == v;
      if (!reused) live -= shapes[static_cast<size_t>(v)].numel() * 4;
    }
  }
  return peak;
}

NamedTensors<float> run_forward(const CompiledModel& model, const Tensor& input, RunStats* stats) {
  const Graph& g = model.graph();
  g.check_input_shape(input.shape());
  const auto& alias = EngineAccess::alias(model);
  const auto& params = model.params();
  std::vector<Tensor> values(g.nodes().size());

  for (const Step& st : model.schedule()) {
    const Node& node = g.node(st.node);
    auto in = [&](size_t k) -> Tensor& { return values[static_cast<size_t>(alias[static_cast<size_t>(node.inputs[k])])]; };
    auto take_or_copy = [&](size_t k) -> Tensor {
      if (st.inplace_input == static_cast<int>(k)) return std::move(in(k));
      return in(k);
    };
    Tensor out;
    switch (node.kind) {
      case OpKind::Input:
        out = input;
        break;
      case OpKind::Conv: {
        const auto& p = std::get<Conv2dParams>(node.attrs);
        const float* bias = p.has_bias ? slot_value(g, node, 1, params).ptr() : nullptr;
        out = conv_exec(in(0), EngineAccess::packed(model, node.id), bias, p, st.fused_relu, stats);
        break;
      }
      case OpKind::BatchNorm: {
        const auto bn = batch_norm_params(g, node, params);
        std::vector<float> scale(bn.gamma.size()), shift(bn.gamma.size());
        for (size_t c = 0; c < scale.size(); ++c) {
          const double s = static_cast<double>(bn.gamma[c]) / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.epsilon);
          scale[c] = static_cast<float>(s);
          shift[c] = static_cast<float>(static_cast<double>(bn.beta[c]) - static_cast<double>(bn.running_mean[c]) * s);
        }
        out = take_or_copy(0);
        channel_affine_inplace(out, scale, shift, st.fused_relu);
        break;
      }
      case OpKind::Affine:
        out = take_or_copy(0);
        channel_affine_inplace(out, to_vec(slot_value(g, node, 0, params)), to_vec(slot_value(g, node, 1, params)),
                               st.fused_relu);
        break;
      case OpKind::Relu:
        out = take_or_copy(0);
        relu_inplace(out);
        break;
      case OpKind::Add: {
        if (in(0).shape() != in(1).shape()) {
          throw ShapeError("node '" + node.name + "': add of " + in(0).shape().str() + " and " + in(1).shape().str());
        }
        const size_t k = st.inplace_input == 1 ? 1 : 0;
        out = take_or_copy(k);
        const Tensor& other = in(1 - k);
        float* d = out.ptr();
        const float* o = other.ptr();
        const int64_t cnt = out.numel();
        if (st.fused_relu) {
          for (int64_t i = 0; i < cnt; ++i) d[i] = std::max(d[i] + o[i], 0.0f);
        } else {
          for (int64_t i = 0; i < cnt; ++i) d[i] += o[i];
        }
        break;
      }
      case OpKind::AvgPool:
        out = ops::avg_pool2d(in(0), std::get<Pool2dParams>(node.attrs));
        break;
      case OpKind::GlobalAvgPool:
        out = ops::global_avg_pool(in(0));
        break;
      case OpKind::ResizeLike:
        out = ops::bilinear_resize(in(0), in(1).h(), in(1).w());
        break;
      case OpKind::Concat: {
        std::vector<const Tensor*> parts;
        for (size_t k = 0; k < node.inputs.size(); ++k) parts.push_back(&in(k));
        out = ops::concat_channels<float>(std::span<const Tensor* const>(parts));
        break;
      }
      case OpKind::Linear: {
        const auto& a = std::get<LinearAttrs>(node.attrs);
        std::span<const float> bias;
        if (a.has_bias) bias = slot_value(g, node, 1, params).data();
        out = ops::linear(in(0), slot_value(g, node, 0, params), bias);
        if (stats) stats->macs += in(0).n() * a.in_features * a.out_features;
        break;
      }
    }
    values[static_cast<size_t>(st.node)] = std::move(out);
    for (int v : st.release) values[static_cast<size_t>(v)] = Tensor();
  }

  NamedTensors<float> result;
  for (const auto& o : g.outputs()) {
    result.emplace(o.name, values[static_cast<size_t>(alias[static_cast<size_t>(o.node)])]);
  }
  return result;
}

Tensor conv2d_gemm(const Tensor& input, const Tensor& weight, std::span<const float> bias, const Conv2dParams& params,
                   bool relu) {
  params.validate();
  if (weight.shape() != params.weight_shape()) {
    throw ShapeError("conv weight shape " + weight.shape().str() + " does not match expected " +
                     params.weight_shape().str());
  }
  if (params.has_bias && static_cast<int64_t>(bias.size()) != params.out_channels) {
    throw ShapeError("conv bias has " + std::to_string(bias.size()) + " values, expected " +
                     std::to_string(params.out_channels));
  }
  const int64_t k = params.in_channels * params.kh * params.kw;
  const auto packed = gemm::pack_a(weight.ptr(), params.out_channels, k, k);
  return conv_exec(input, packed, params.has_bias ? bias.data() : nullptr, params, relu, nullptr);
}

std::vector<double> default_tta_scales() { return {0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0}; }

int64_t snap_to_64(double extent) {
  const auto k = static_cast<int64_t>(std::floor(extent / 64.0 + 0.5));
  return std::max<int64_t>(k, 1) * 64;
}

Tensor ms_flip_infer(const CompiledModel& model, const Tensor& image, const std::vector<double>& scales, bool flip) {
  if (scales.empty()) throw ValueError("ms_flip_infer: scale list is empty");
  for (double s : scales) {
    if (!(s > 0.0)) throw ValueError("ms_flip_infer: scales must be positive, got " + std::to_string(s));
  }
  if (image.rank() != 4) throw ShapeError("ms_flip_infer: image must be N x C x H x W, got " + image.shape().str());
  const int64_t H = image.h();
  const int64_t W = image.w();
  std::vector<double> acc;
  Shape out_shape;
  int passes = 0;
  for (double s : scales) {
    const int64_t h = snap_to_64(static_cast<double>(H) * s);
    const int64_t w = snap_to_64(static_cast<double>(W) * s);
    const Tensor x = (h == H && w == W) ? image : ops::bilinear_resize(image, h, w);
    for (int f = 0; f < (flip ? 2 : 1); ++f) {
      const Tensor xi = f ? ops::flip_horizontal(x) : x;
      Tensor prob = ops::softmax_channels(run_forward(model, xi).at("logits"));
      if (f) prob = ops::flip_horizontal(prob);
      prob = ops::bilinear_resize(prob, H, W);
      if (acc.empty()) {
        out_shape = prob.shape();
        acc.assign(static_cast<size_t>(prob.numel()), 0.0);
      }
      for (int64_t i = 0; i < prob.numel(); ++i) acc[static_cast<size_t>(i)] += prob[i];
      ++passes;
    }
  }
  Tensor out(out_shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(acc[static_cast<size_t>(i)] / passes);
  return out;
}

BenchReport benchmark(const CompiledModel& model, const Shape& input, int warmup_iters, int timed_iters,
                      uint64_t seed) {
  if (timed_iters < 1) throw ValueError("benchmark: timed_iters must be >= 1");
  if (warmup_iters < 0) throw ValueError("benchmark: warmup_iters must be >= 0");
  if (input.rank() != 4 || input.n() != 1) throw ValueError("benchmark: batch size is fixed at 1, got " + input.str());
  model.graph().check_input_shape(input);

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Tensor x(input);
  for (auto& v : x.data()) v = dist(rng);

  for (int i = 0; i < warmup_iters; ++i) run_forward(model, x);
  BenchReport r;
  r.input = input;
  r.folded = model.folded();
  r.threads = num_threads();
  r.warmup_iters = warmup_iters;
  r.timed_iters = timed_iters;
  for (int i = 0; i < timed_iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_forward(model, x);
    const auto t1 = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(t1 - t0).count();
    r.total_seconds += s;
    r.samples_ms.push_back(s * 1e3);
  }
  std::vector<double> sorted = r.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  const size_t m = sorted.size();
  r.median_ms = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  r.min_ms = sorted.front();
  r.mean_ms = r.total_seconds * 1e3 / timed_iters;
  r.fps = timed_iters / r.total_seconds;
  return r;
}

}  // namespace ddrnet
