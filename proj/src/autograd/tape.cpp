#include <algorithm>
#include <cmath>

#include "ddrnet/autograd.hpp"
#include "ddrnet/ops.hpp"

namespace ddrnet::autograd {

namespace {

Tensor64 zeros_like(const Tensor64& t) { return Tensor64(t.shape()); }

void accumulate(Tensor64& into, const Tensor64& d) {
  if (into.empty()) {
    into = d;
    return;
  }
  if (into.shape() != d.shape()) {
    throw ShapeError("gradient shape " + d.shape().str() + " does not match value shape " + into.shape().str());
  }
  for (int64_t i = 0; i < d.numel(); ++i) into[i] += d[i];
}

void conv_backward(const Tensor64& x, const Tensor64& w, const Tensor64& g, const Conv2dParams& p, Tensor64* dx,
                   Tensor64* dw) {
  const int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int64_t O = g.c(), OH = g.h(), OW = g.w();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t o = 0; o < O; ++o) {
      const double* go = g.plane(n, o);
      for (int64_t c = 0; c < C; ++c) {
        const double* xc = x.plane(n, c);
        double* dxc = dx ? dx->plane(n, c) : nullptr;
        for (int ky = 0; ky < p.kh; ++ky) {
          for (int kx = 0; kx < p.kw; ++kx) {
            const double wv = w.at(o, c, ky, kx);
            double dwv = 0.0;
            for (int64_t oy = 0; oy < OH; ++oy) {
              const int64_t iy = oy * p.sh - p.ph + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t ox = 0; ox < OW; ++ox) {
                const int64_t ix = ox * p.sw - p.pw + kx;
                if (ix < 0 || ix >= W) continue;
                const double gv = go[oy * OW + ox];
                dwv += gv * xc[iy * W + ix];
                if (dxc) dxc[iy * W + ix] += gv * wv;
              }
            }
            if (dw) dw->at(o, c, ky, kx) += dwv;
          }
        }
      }
    }
  }
}

}  // namespace

ValueId Tape::push(Record r, Tensor64 value) {
  const auto id = static_cast<ValueId>(values_.size());
  r.output = id;
  values_.push_back(std::move(value));
  records_.push_back(std::move(r));
  return id;
}

void Tape::check(ValueId id) const {
  if (id < 0 || id >= static_cast<ValueId>(values_.size())) {
    throw Error("tape: unknown value id " + std::to_string(id));
  }
}

ValueId Tape::parameter(const std::string& name, Tensor64 value) {
  for (const auto& r : records_) {
    if (r.op == TapeOp::Parameter && std::get<std::string>(r.attrs) == name) {
      throw Error("tape: parameter '" + name + "' registered twice");
    }
  }
  Record r;
  r.op = TapeOp::Parameter;
  r.attrs = name;
  return push(std::move(r), std::move(value));
}

ValueId Tape::constant(Tensor64 value) {
  Record r;
  r.op = TapeOp::Constant;
  return push(std::move(r), std::move(value));
}

ValueId Tape::conv2d(ValueId x, ValueId weight, std::optional<ValueId> bias, const Conv2dParams& params) {
  check(x);
  check(weight);
  Record r;
  r.op = TapeOp::Conv2d;
  r.inputs = {x, weight};
  std::span<const double> b;
  Conv2dParams p = params;
  p.has_bias = bias.has_value();
  if (bias) {
    check(*bias);
    r.inputs.push_back(*bias);
    b = value(*bias).data();
  }
  r.attrs = p;
  Tensor64 out = ops::conv2d(value(x), value(weight), b, p);
  return push(std::move(r), std::move(out));
}

ValueId Tape::batch_norm(ValueId x, ValueId gamma, ValueId beta, std::vector<double> mean, std::vector<double> var,
                         double epsilon) {
  check(x);
  check(gamma);
  check(beta);
  BatchNormParams<double> bn;
  bn.gamma.assign(value(gamma).data().begin(), value(gamma).data().end());
  bn.beta.assign(value(beta).data().begin(), value(beta).data().end());
  bn.running_mean = mean;
  bn.running_var = var;
  bn.epsilon = epsilon;
  Tensor64 out = ops::batch_norm_infer(value(x), bn);
  Record r;
  r.op = TapeOp::BatchNorm;
  r.inputs = {x, gamma, beta};
  r.attrs = BnAttrs{std::move(mean), std::move(var), epsilon};
  return push(std::move(r), std::move(out));
}

ValueId Tape::relu(ValueId x) {
  check(x);
  Record r;
  r.op = TapeOp::Relu;
  r.inputs = {x};
  return push(std::move(r), ops::relu(value(x)));
}

ValueId Tape::add(ValueId a, ValueId b) {
  check(a);
  check(b);
  Record r;
  r.op = TapeOp::Add;
  r.inputs = {a, b};
  return push(std::move(r), ops::add(value(a), value(b)));
}

ValueId Tape::avg_pool(ValueId x, const Pool2dParams& params) {
  check(x);
  Record r;
  r.op = TapeOp::AvgPool;
  r.inputs = {x};
  r.attrs = params;
  return push(std::move(r), ops::avg_pool2d(value(x), params));
}

ValueId Tape::global_avg_pool(ValueId x) {
  check(x);
  Record r;
  r.op = TapeOp::GlobalAvgPool;
  r.inputs = {x};
  return push(std::move(r), ops::global_avg_pool(value(x)));
}

ValueId Tape::resize(ValueId x, int64_t out_h, int64_t out_w) {
  check(x);
  Record r;
  r.op = TapeOp::Resize;
  r.inputs = {x};
  return push(std::move(r), ops::bilinear_resize(value(x), out_h, out_w));
}

ValueId Tape::concat(const std::vector<ValueId>& parts) {
  std::vector<const Tensor64*> ptrs;
  for (ValueId id : parts) {
    check(id);
    ptrs.push_back(&value(id));
  }
  Record r;
  r.op = TapeOp::Concat;
  r.inputs = parts;
  return push(std::move(r), ops::concat_channels<double>(std::span<const Tensor64* const>(ptrs)));
}

ValueId Tape::linear(ValueId x, ValueId weight, std::optional<ValueId> bias) {
  check(x);
  check(weight);
  Record r;
  r.op = TapeOp::Linear;
  r.inputs = {x, weight};
  std::span<const double> b;
  if (bias) {
    check(*bias);
    r.inputs.push_back(*bias);
    b = value(*bias).data();
  }
  return push(std::move(r), ops::linear(value(x), value(weight), b));
}

ValueId Tape::cross_entropy(ValueId logits, const IndexTensor& labels, int32_t ignore_index,
                            std::vector<uint8_t> keep) {
  check(logits);
  std::vector<double> nll, prob;
  pixel_nll(value(logits), labels, ignore_index, nll, prob);
  if (keep.empty()) {
    keep.resize(nll.size());
    for (size_t i = 0; i < nll.size(); ++i) keep[i] = prob[i] >= 0.0 ? 1 : 0;
  } else if (keep.size() != nll.size()) {
    throw ShapeError("cross_entropy: keep mask has " + std::to_string(keep.size()) + " entries for " +
                     std::to_string(nll.size()) + " pixels");
  }
  double sum = 0.0;
  int64_t count = 0;
  for (size_t i = 0; i < nll.size(); ++i) {
    if (!keep[i] || prob[i] < 0.0) {
      keep[i] = 0;
      continue;
    }
    sum += nll[i];
    ++count;
  }
  Record r;
  r.op = TapeOp::CrossEntropy;
  r.inputs = {logits};
  r.attrs = CeAttrs{labels, ignore_index, std::move(keep), count};
  return push(std::move(r), Tensor64(Shape{1}, count ? sum / static_cast<double>(count) : 0.0));
}

ValueId Tape::sum(ValueId x) {
  check(x);
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  Record r;
  r.op = TapeOp::Sum;
  r.inputs = {x};
  return push(std::move(r), Tensor64(Shape{1}, s));
}

ValueId Tape::mean(ValueId x) {
  check(x);
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  Record r;
  r.op = TapeOp::Mean;
  r.inputs = {x};
  return push(std::move(r), Tensor64(Shape{1}, s / static_cast<double>(value(x).numel())));
}

ValueId Tape::scale(ValueId x, double factor) {
  check(x);
  Tensor64 out = value(x);
  for (auto& v : out.data()) v *= factor;
  Record r;
  r.op = TapeOp::Scale;
  r.inputs = {x};
  r.attrs = factor;
  return push(std::move(r), std::move(out));
}

ValueId Tape::square(ValueId x) {
  check(x);
  Tensor64 out = value(x);
  for (auto& v : out.data()) v *= v;
  Record r;
  r.op = TapeOp::Square;
  r.inputs = {x};
  return push(std::move(r), std::move(out));
}

ValueId Tape::custom(const std::vector<ValueId>& inputs, Tensor64 output, CustomBackward backward) {
  for (ValueId id : inputs) check(id);
  if (!backward) throw Error("tape: custom op needs a backward rule");
  Record r;
  r.op = TapeOp::Custom;
  r.inputs = inputs;
  r.custom = std::move(backward);
  return push(std::move(r), std::move(output));
}

std::vector<std::string> Tape::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& r : records_) {
    if (r.op == TapeOp::Parameter) names.push_back(std::get<std::string>(r.attrs));
  }
  return names;
}

std::vector<ValueId> Tape::relu_inputs() const {
  std::vector<ValueId> ids;
  for (const auto& r : records_) {
    if (r.op == TapeOp::Relu) ids.push_back(r.inputs[0]);
  }
  return ids;
}

Gradients Tape::backward(ValueId loss) const {
  check(loss);
  if (value(loss).numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + value(loss).shape().str());
  }
  const size_t n = values_.size();
  // Only values that depend on a parameter carry gradients.
  std::vector<bool> live(n, false);
  for (size_t i = 0; i < n; ++i) {
    const Record& r = records_[i];
    if (r.op == TapeOp::Parameter) live[i] = true;
    for (ValueId in : r.inputs) live[i] = live[i] || live[static_cast<size_t>(in)];
  }

  std::vector<Tensor64> grads(n);
  grads[static_cast<size_t>(loss)] = Tensor64(value(loss).shape(), 1.0);
  for (ValueId i = loss; i >= 0; --i) {
    const auto ui = static_cast<size_t>(i);
    if (grads[ui].empty() || !live[ui]) continue;
    const Record& r = records_[ui];
    const Tensor64& g = grads[ui];
    auto wants = [&](size_t k) { return live[static_cast<size_t>(r.inputs[k])]; };
    auto give = [&](size_t k, const Tensor64& d) { accumulate(grads[static_cast<size_t>(r.inputs[k])], d); };
    auto in = [&](size_t k) -> const Tensor64& { return value(r.inputs[k]); };

    switch (r.op) {
      case TapeOp::Parameter:
      case TapeOp::Constant:
        break;
      case TapeOp::Conv2d: {
        const auto& p = std::get<Conv2dParams>(r.attrs);
        Tensor64 dx = zeros_like(in(0));
        Tensor64 dw = zeros_like(in(1));
        conv_backward(in(0), in(1), g, p, wants(0) ? &dx : nullptr, wants(1) ? &dw : nullptr);
        if (wants(0)) give(0, dx);
        if (wants(1)) give(1, dw);
        if (r.inputs.size() > 2 && wants(2)) {
          Tensor64 db(in(2).shape());
          const int64_t hw = g.h() * g.w();
          for (int64_t b = 0; b < g.n(); ++b) {
            for (int64_t o = 0; o < g.c(); ++o) {
              const double* go = g.plane(b, o);
              for (int64_t k = 0; k < hw; ++k) db[o] += go[k];
            }
          }
          give(2, db);
        }
        break;
      }
      case TapeOp::BatchNorm: {
        const auto& a = std::get<BnAttrs>(r.attrs);
        const Tensor64& x = in(0);
        const Tensor64& gamma = in(1);
        Tensor64 dx(x.shape());
        Tensor64 dgamma(gamma.shape());
        Tensor64 dbeta(gamma.shape());
        const int64_t hw = x.h() * x.w();
        for (int64_t b = 0; b < x.n(); ++b) {
          for (int64_t c = 0; c < x.c(); ++c) {
            const auto uc = static_cast<size_t>(c);
            const double s = 1.0 / std::sqrt(a.var[uc] + a.epsilon);
            const double* xc = x.plane(b, c);
            const double* gc = g.plane(b, c);
            double* dxc = dx.plane(b, c);
            for (int64_t k = 0; k < hw; ++k) {
              dxc[k] = gc[k] * gamma[c] * s;
              dgamma[c] += gc[k] * (xc[k] - a.mean[uc]) * s;
              dbeta[c] += gc[k];
            }
          }
        }
        if (wants(0)) give(0, dx);
        if (wants(1)) give(1, dgamma);
        if (wants(2)) give(2, dbeta);
        break;
      }
      case TapeOp::Relu: {
        Tensor64 dx(g.shape());
        const Tensor64& x = in(0);
        for (int64_t k = 0; k < g.numel(); ++k) dx[k] = x[k] > 0.0 ? g[k] : 0.0;
        give(0, dx);
        break;
      }
      case TapeOp::Add:
        if (wants(0)) give(0, g);
        if (wants(1)) give(1, g);
        break;
      case TapeOp::AvgPool: {
        const auto& p = std::get<Pool2dParams>(r.attrs);
        const Tensor64& x = in(0);
        Tensor64 dx(x.shape());
        const int64_t H = x.h(), W = x.w(), OH = g.h(), OW = g.w();
        for (int64_t b = 0; b < x.n(); ++b) {
          for (int64_t c = 0; c < x.c(); ++c) {
            const double* gc = g.plane(b, c);
            double* dxc = dx.plane(b, c);
            for (int64_t oy = 0; oy < OH; ++oy) {
              const int64_t h0 = std::max<int64_t>(oy * p.sh - p.ph, 0);
              const int64_t h1 = std::min<int64_t>(oy * p.sh - p.ph + p.kh, H);
              for (int64_t ox = 0; ox < OW; ++ox) {
                const int64_t w0 = std::max<int64_t>(ox * p.sw - p.pw, 0);
                const int64_t w1 = std::min<int64_t>(ox * p.sw - p.pw + p.kw, W);
                const int64_t count = std::max<int64_t>(h1 - h0, 0) * std::max<int64_t>(w1 - w0, 0);
                if (count == 0) continue;
                const double share = gc[oy * OW + ox] / static_cast<double>(count);
                for (int64_t y = h0; y < h1; ++y) {
                  for (int64_t xx = w0; xx < w1; ++xx) dxc[y * W + xx] += share;
                }
              }
            }
          }
        }
        give(0, dx);
        break;
      }
      case TapeOp::GlobalAvgPool: {
        const Tensor64& x = in(0);
        Tensor64 dx(x.shape());
        const int64_t hw = x.h() * x.w();
        for (int64_t b = 0; b < x.n(); ++b) {
          for (int64_t c = 0; c < x.c(); ++c) {
            const double share = g.at(b, c, 0, 0) / static_cast<double>(hw);
            double* dxc = dx.plane(b, c);
            for (int64_t k = 0; k < hw; ++k) dxc[k] = share;
          }
        }
        give(0, dx);
        break;
      }
      case TapeOp::Resize: {
        const Tensor64& x = in(0);
        if (x.shape() == g.shape()) {
          give(0, g);
          break;
        }
        Tensor64 dx(x.shape());
        const auto ty = ops::half_pixel_taps(x.h(), g.h());
        const auto tx = ops::half_pixel_taps(x.w(), g.w());
        const int64_t W = x.w(), OW = g.w();
        for (int64_t b = 0; b < x.n(); ++b) {
          for (int64_t c = 0; c < x.c(); ++c) {
            const double* gc = g.plane(b, c);
            double* dxc = dx.plane(b, c);
            for (int64_t oy = 0; oy < g.h(); ++oy) {
              const auto& y = ty[static_cast<size_t>(oy)];
              for (int64_t ox = 0; ox < OW; ++ox) {
                const auto& xt = tx[static_cast<size_t>(ox)];
                const double v = gc[oy * OW + ox];
                dxc[y.i0 * W + xt.i0] += v * (1.0 - y.frac) * (1.0 - xt.frac);
                dxc[y.i0 * W + xt.i1] += v * (1.0 - y.frac) * xt.frac;
                dxc[y.i1 * W + xt.i0] += v * y.frac * (1.0 - xt.frac);
                dxc[y.i1 * W + xt.i1] += v * y.frac * xt.frac;
              }
            }
          }
        }
        give(0, dx);
        break;
      }
      case TapeOp::Concat: {
        int64_t offset = 0;
        const int64_t hw = g.h() * g.w();
        for (size_t k = 0; k < r.inputs.size(); ++k) {
          const Tensor64& part = in(k);
          if (wants(k)) {
            Tensor64 d(part.shape());
            for (int64_t b = 0; b < g.n(); ++b) {
              std::copy(g.plane(b, offset), g.plane(b, offset) + part.c() * hw, d.plane(b, 0));
            }
            give(k, d);
          }
          offset += part.c();
        }
        break;
      }
      case TapeOp::Linear: {
        const Tensor64& x = in(0);
        const Tensor64& w = in(1);
        const int64_t N = x.shape()[0];
        const int64_t C = x.numel() / N;
        const int64_t O = w.shape()[0];
        Tensor64 dx(x.shape());
        Tensor64 dw(w.shape());
        for (int64_t b = 0; b < N; ++b) {
          for (int64_t o = 0; o < O; ++o) {
            const double gv = g[b * O + o];
            for (int64_t c = 0; c < C; ++c) {
              dx[b * C + c] += gv * w[o * C + c];
              dw[o * C + c] += gv * x[b * C + c];
            }
          }
        }
        if (wants(0)) give(0, dx);
        if (wants(1)) give(1, dw);
        if (r.inputs.size() > 2 && wants(2)) {
          Tensor64 db(in(2).shape());
          for (int64_t b = 0; b < N; ++b) {
            for (int64_t o = 0; o < O; ++o) db[o] += g[b * O + o];
          }
          give(2, db);
        }
        break;
      }
      case TapeOp::CrossEntropy: {
        const auto& a = std::get<CeAttrs>(r.attrs);
        const Tensor64& z = in(0);
        Tensor64 dz(z.shape());
        if (a.count > 0) {
          const int64_t K = z.c();
          const int64_t hw = z.h() * z.w();
          const double scale = g[0] / static_cast<double>(a.count);
          for (int64_t b = 0; b < z.n(); ++b) {
            const double* zb = z.plane(b, 0);
            double* db = dz.plane(b, 0);
            for (int64_t k = 0; k < hw; ++k) {
              const int64_t px = b * hw + k;
              if (!a.keep[static_cast<size_t>(px)]) continue;
              double mx = -INFINITY;
              for (int64_t c = 0; c < K; ++c) mx = std::max(mx, zb[c * hw + k]);
              double se = 0.0;
              for (int64_t c = 0; c < K; ++c) se += std::exp(zb[c * hw + k] - mx);
              const int32_t label = a.labels[px];
              for (int64_t c = 0; c < K; ++c) {
                const double p = std::exp(zb[c * hw + k] - mx) / se;
                db[c * hw + k] = scale * (p - (c == label ? 1.0 : 0.0));
              }
            }
          }
        }
        give(0, dz);
        break;
      }
      case TapeOp::Sum:
        give(0, Tensor64(in(0).shape(), g[0]));
        break;
      case TapeOp::Mean:
        give(0, Tensor64(in(0).shape(), g[0] / static_cast<double>(in(0).numel())));
        break;
      case TapeOp::Scale: {
        const double f = std::get<double>(r.attrs);
        Tensor64 d = g;
        for (auto& v : d.data()) v *= f;
        give(0, d);
        break;
      }
      case TapeOp::Square: {
        Tensor64 d = g;
        const Tensor64& x = in(0);
        for (int64_t k = 0; k < d.numel(); ++k) d[k] *= 2.0 * x[k];
        give(0, d);
        break;
      }
      case TapeOp::Custom: {
        const auto ds = r.custom(g);
        if (ds.size() != r.inputs.size()) {
          throw Error("custom backward returned " + std::to_string(ds.size()) + " gradients for " +
                      std::to_string(r.inputs.size()) + " inputs");
        }
        for (size_t k = 0; k < ds.size(); ++k) {
          if (!wants(k)) continue;
          if (ds[k].shape() != in(k).shape()) {
            throw ShapeError("custom backward gradient " + std::to_string(k) + " has shape " + ds[k].shape().str() +
                             ", expected " + in(k).shape().str());
          }
          give(k, ds[k]);
        }
        break;
      }
    }
  }

  Gradients out;
  for (size_t i = 0; i < n; ++i) {
    const Record& r = records_[i];
    if (r.op != TapeOp::Parameter) continue;
    out.emplace(std::get<std::string>(r.attrs), grads[i].empty() ? zeros_like(values_[i]) : grads[i]);
  }
  return out;
}

}  // namespace ddrnet::autograd
