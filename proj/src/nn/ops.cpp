#include "ldfuse/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "ldfuse/errors.hpp"
#include "ldfuse/filters.hpp"

namespace ldfuse::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void accumulate(Node* node, const Tensor& g) {
  if (node->requires_grad) node->grad_buffer() += g;
}

template <typename Fn>
void accumulate_each(Node* node, Fn&& fn) {
  if (!node->requires_grad) return;
  Tensor& dst = node->grad_buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += fn(i);
}

template <typename Value, typename Deriv>
Var unary(const Var& x, Value&& value_fn, Deriv&& deriv_fn) {
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = value_fn(in[i]);
  Node* xn = x.node();
  return make_op(std::move(out), {x}, [xn, deriv_fn](const Tensor& g) {
    const Tensor& in = xn->value;
    accumulate_each(xn, [&](std::size_t i) { return g[i] * deriv_fn(in[i]); });
  });
}

double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_scalar(double v) {
  return v > 30.0 ? v : std::log1p(std::exp(v));
}

AlignedBuffer im2col(const Tensor& x, int k, int pad, int ho, int wo) {
  const int cin = x.channels(), h = x.height(), w = x.width();
  AlignedBuffer cols(static_cast<std::size_t>(cin) * k * k * ho * wo, 0.0);
  std::size_t row = 0;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = cols.data() + row * ho * wo;
        for (int y = 0; y < ho; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* src = x.data() + (static_cast<std::size_t>(c) * h + sy) * w;
          for (int xo = 0; xo < wo; ++xo) {
            const int sx = xo + kx - pad;
            if (sx >= 0 && sx < w) dst[y * wo + xo] = src[sx];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const double* cols, Tensor& dx, int k, int pad, int ho, int wo) {
  const int cin = dx.channels(), h = dx.height(), w = dx.width();
  std::size_t row = 0;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = cols + row * ho * wo;
        for (int y = 0; y < ho; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(c) * h + sy) * w;
          for (int xo = 0; xo < wo; ++xo) {
            const int sx = xo + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[y * wo + xo];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  Node *an = a.node(), *bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& g) {
    accumulate(an, g);
    accumulate(bn, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  Node *an = a.node(), *bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& g) {
    accumulate(an, g);
    accumulate_each(bn, [&](std::size_t i) { return -g[i]; });
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Node *an = a.node(), *bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& g) {
    accumulate_each(an, [&](std::size_t i) { return g[i] * bn->value[i]; });
    accumulate_each(bn, [&](std::size_t i) { return g[i] * an->value[i]; });
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  Node* an = a.node();
  return make_op(std::move(out), {a}, [an, s](const Tensor& g) {
    accumulate_each(an, [&](std::size_t i) { return g[i] * s; });
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  Node* an = a.node();
  return make_op(std::move(out), {a}, [an](const Tensor& g) { accumulate(an, g); });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 - s);
      });
}

Var softplus(const Var& x) {
  return unary(
      x, [](double v) { return softplus_scalar(v); },
      [](double v) { return sigmoid_scalar(v); });
}

Var log(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value");
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var maximum(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "maximum");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(a.value()[i], b.value()[i]);
  }
  Node *an = a.node(), *bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& g) {
    auto a_wins = [&](std::size_t i) { return an->value[i] >= bn->value[i]; };
    accumulate_each(an, [&](std::size_t i) { return a_wins(i) ? g[i] : 0.0; });
    accumulate_each(bn, [&](std::size_t i) { return a_wins(i) ? 0.0 : g[i]; });
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  const Shape s = x.shape();
  if (bias.shape() != Shape{s.c, 1, 1}) {
    throw ShapeError("channel bias " + to_string(bias.shape()) + " for input " +
                     to_string(s));
  }
  Tensor out = x.value();
  for (int c = 0; c < s.c; ++c) {
    for (double& v : out.channel(c)) v += bias.value()[c];
  }
  Node *xn = x.node(), *bn = bias.node();
  return make_op(std::move(out), {x, bias}, [xn, bn, s](const Tensor& g) {
    accumulate(xn, g);
    if (bn->requires_grad) {
      Tensor& db = bn->grad_buffer();
      for (int c = 0; c < s.c; ++c) {
        for (double v : g.channel(c)) db[c] += v;
      }
    }
  });
}

Var channel_affine(const Var& x, const Var& scale_v, const Var& shift) {
  const Shape s = x.shape();
  if (scale_v.shape() != Shape{s.c, 1, 1} || shift.shape() != Shape{s.c, 1, 1}) {
    throw ShapeError("modulation parameters " + to_string(scale_v.shape()) + "/" +
                     to_string(shift.shape()) + " for features " + to_string(s));
  }
  Tensor out = x.value();
  for (int c = 0; c < s.c; ++c) {
    const double factor = 1.0 + scale_v.value()[c];
    const double offset = shift.value()[c];
    for (double& v : out.channel(c)) {
      v *= factor;
      if (offset != 0.0) v += offset;
    }
  }
  Node *xn = x.node(), *sn = scale_v.node(), *tn = shift.node();
  return make_op(std::move(out), {x, scale_v, shift}, [xn, sn, tn, s](const Tensor& g) {
    if (xn->requires_grad) {
      Tensor& dx = xn->grad_buffer();
      for (int c = 0; c < s.c; ++c) {
        const double factor = 1.0 + sn->value[c];
        auto gc = g.channel(c);
        auto dc = dx.channel(c);
        for (std::size_t i = 0; i < gc.size(); ++i) dc[i] += gc[i] * factor;
      }
    }
    if (sn->requires_grad) {
      Tensor& ds = sn->grad_buffer();
      for (int c = 0; c < s.c; ++c) {
        auto gc = g.channel(c);
        auto xc = xn->value.channel(c);
        double acc = 0.0;
        for (std::size_t i = 0; i < gc.size(); ++i) acc += gc[i] * xc[i];
        ds[c] += acc;
      }
    }
    if (tn->requires_grad) {
      Tensor& dt = tn->grad_buffer();
      for (int c = 0; c < s.c; ++c) {
        for (double v : g.channel(c)) dt[c] += v;
      }
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(ws.w))));
  if (k * k != ws.w || ws.h != xs.c) {
    throw ShapeError("conv2d weight " + to_string(ws) + " incompatible with input " +
                     to_string(xs));
  }
  if (bias.shape() != Shape{ws.c, 1, 1}) {
    throw ShapeError("conv2d bias " + to_string(bias.shape()));
  }
  const int ho = xs.h + 2 * pad - k + 1;
  const int wo = xs.w + 2 * pad - k + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty");
  const int cout = ws.c;
  const int kdim = xs.c * k * k;
  const int npix = ho * wo;

  auto cols = std::make_shared<AlignedBuffer>(im2col(x.value(), k, pad, ho, wo));
  Tensor out({cout, ho, wo});
  MatMap om(out.data(), cout, npix);
  ConstMatMap wm(weight.value().data(), cout, kdim);
  ConstMatMap cm(cols->data(), kdim, npix);
  om.noalias() = wm * cm;
  for (int c = 0; c < cout; ++c) om.row(c).array() += bias.value()[c];

  Node *xn = x.node(), *wn = weight.node(), *bn = bias.node();
  return make_op(std::move(out), {x, weight, bias},
                 [xn, wn, bn, cols, cout, kdim, npix, k, pad, ho, wo](const Tensor& g) {
                   ConstMatMap gm(g.data(), cout, npix);
                   ConstMatMap cm(cols->data(), kdim, npix);
                   if (wn->requires_grad) {
                     MatMap dw(wn->grad_buffer().data(), cout, kdim);
                     dw.noalias() += gm * cm.transpose();
                   }
                   if (bn->requires_grad) {
                     Tensor& db = bn->grad_buffer();
                     for (int c = 0; c < cout; ++c) db[c] += gm.row(c).sum();
                   }
                   if (xn->requires_grad) {
                     ConstMatMap wm(wn->value.data(), cout, kdim);
                     RowMatrix dcols = wm.transpose() * gm;
                     col2im_add(dcols.data(), xn->grad_buffer(), k, pad, ho, wo);
                   }
                 });
}

Var avg_pool2(const Var& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("avg_pool2 needs even spatial extent, got " + to_string(s));
  }
  const Shape os{s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  const Tensor& in = x.value();
  for (int c = 0; c < s.c; ++c) {
    for (int y = 0; y < os.h; ++y) {
      for (int xo = 0; xo < os.w; ++xo) {
        out(c, y, xo) = 0.25 * (in(c, 2 * y, 2 * xo) + in(c, 2 * y, 2 * xo + 1) +
                                in(c, 2 * y + 1, 2 * xo) + in(c, 2 * y + 1, 2 * xo + 1));
      }
    }
  }
  Node* xn = x.node();
  return make_op(std::move(out), {x}, [xn, os](const Tensor& g) {
    if (!xn->requires_grad) return;
    Tensor& dx = xn->grad_buffer();
    for (int c = 0; c < os.c; ++c) {
      for (int y = 0; y < os.h; ++y) {
        for (int xo = 0; xo < os.w; ++xo) {
          const double v = 0.25 * g(c, y, xo);
          dx(c, 2 * y, 2 * xo) += v;
          dx(c, 2 * y, 2 * xo + 1) += v;
          dx(c, 2 * y + 1, 2 * xo) += v;
          dx(c, 2 * y + 1, 2 * xo + 1) += v;
        }
      }
    }
  });
}

Var upsample_nearest(const Var& x, int factor) {
  if (factor < 1) throw ParameterError("upsample factor must be >= 1");
  if (factor == 1) return x;
  const Shape s = x.shape();
  const Shape os{s.c, s.h * factor, s.w * factor};
  Tensor out(os);
  const Tensor& in = x.value();
  for (int c = 0; c < os.c; ++c) {
    for (int y = 0; y < os.h; ++y) {
      for (int xo = 0; xo < os.w; ++xo) out(c, y, xo) = in(c, y / factor, xo / factor);
    }
  }
  Node* xn = x.node();
  return make_op(std::move(out), {x}, [xn, os, factor](const Tensor& g) {
    if (!xn->requires_grad) return;
    Tensor& dx = xn->grad_buffer();
    for (int c = 0; c < os.c; ++c) {
      for (int y = 0; y < os.h; ++y) {
        for (int xo = 0; xo < os.w; ++xo) dx(c, y / factor, xo / factor) += g(c, y, xo);
      }
    }
  });
}

Var concat(std::span<const Var> parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  Tensor out = concat_channels(values);
  std::vector<Node*> nodes;
  for (const Var& p : parts) nodes.push_back(p.node());
  return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                 [nodes](const Tensor& g) {
                   std::size_t offset = 0;
                   for (Node* n : nodes) {
                     const std::size_t count = n->value.size();
                     if (n->requires_grad) {
                       Tensor& d = n->grad_buffer();
                       for (std::size_t i = 0; i < count; ++i) d[i] += g[offset + i];
                     }
                     offset += count;
                   }
                 });
}

Var slice_channels(const Var& x, int first, int count) {
  Tensor out = x.value().channel_slice(first, count);
  Node* xn = x.node();
  const std::size_t offset = static_cast<std::size_t>(first) * x.shape().plane();
  return make_op(std::move(out), {x}, [xn, offset](const Tensor& g) {
    if (!xn->requires_grad) return;
    Tensor& d = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
  });
}

Var repeat_channels(const Var& x, int channels) {
  const Shape s = x.shape();
  if (s.c != 1) throw ShapeError("repeat_channels expects one channel, got " + to_string(s));
  Tensor out({channels, s.h, s.w});
  for (int c = 0; c < channels; ++c) {
    std::copy_n(x.value().data(), s.plane(), out.channel(c).data());
  }
  Node* xn = x.node();
  return make_op(std::move(out), {x}, [xn, channels](const Tensor& g) {
    if (!xn->requires_grad) return;
    Tensor& d = xn->grad_buffer();
    for (int c = 0; c < channels; ++c) {
      auto gc = g.channel(c);
      for (std::size_t i = 0; i < gc.size(); ++i) d[i] += gc[i];
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape ws = weight.shape();
  if (x.shape() != Shape{ws.h, 1, 1} || ws.w != 1 || bias.shape() != Shape{ws.c, 1, 1}) {
    throw ShapeError("linear: input " + to_string(x.shape()) + ", weight " +
                     to_string(ws) + ", bias " + to_string(bias.shape()));
  }
  const int nout = ws.c, nin = ws.h;
  Tensor out({nout, 1, 1});
  ConstMatMap wm(weight.value().data(), nout, nin);
  Eigen::Map<const Eigen::VectorXd> xv(x.value().data(), nin);
  Eigen::Map<Eigen::VectorXd> ov(out.data(), nout);
  ov.noalias() = wm * xv;
  for (int i = 0; i < nout; ++i) out[i] += bias.value()[i];
  Node *xn = x.node(), *wn = weight.node(), *bn = bias.node();
  return make_op(std::move(out), {x, weight, bias}, [xn, wn, bn, nout, nin](const Tensor& g) {
    Eigen::Map<const Eigen::VectorXd> gv(g.data(), nout);
    if (wn->requires_grad) {
      MatMap dw(wn->grad_buffer().data(), nout, nin);
      Eigen::Map<const Eigen::VectorXd> xv(xn->value.data(), nin);
      dw.noalias() += gv * xv.transpose();
    }
    accumulate(bn, g);
    if (xn->requires_grad) {
      ConstMatMap wm(wn->value.data(), nout, nin);
      Eigen::Map<Eigen::VectorXd> dx(xn->grad_buffer().data(), nin);
      dx.noalias() += wm.transpose() * gv;
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  Node* xn = x.node();
  return make_op(Tensor::scalar(acc), {x}, [xn](const Tensor& g) {
    const double v = g[0];
    accumulate_each(xn, [v](std::size_t) { return v; });
  });
}

Var mean(const Var& x) {
  if (x.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var sobel_magnitude(const Var& x) {
  const Shape s = x.shape();
  Tensor gx(s), gy(s), mag(s);
  for (int c = 0; c < s.c; ++c) {
    sobel_xy(x.value().channel(c), s.h, s.w, gx.channel(c), gy.channel(c));
  }
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(gx[i], gy[i]);
  Node* xn = x.node();
  auto cache = std::make_shared<std::pair<Tensor, Tensor>>(std::move(gx), std::move(gy));
  Tensor out = mag;
  return make_op(std::move(out), {x}, [xn, s, cache, mag = std::move(mag)](const Tensor& g) {
    if (!xn->requires_grad) return;
    const Tensor& gx = cache->first;
    const Tensor& gy = cache->second;
    // d(loss)/d(gx), d(loss)/d(gy); the Sobel transpose then scatters them.
    Tensor& dx = xn->grad_buffer();
    static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        for (int xo = 0; xo < s.w; ++xo) {
          const double m = mag(c, y, xo);
          if (m == 0.0) continue;
          const double go = g(c, y, xo);
          const double dgx = go * gx(c, y, xo) / m;
          const double dgy = go * gy(c, y, xo) / m;
          for (int dy = -1; dy <= 1; ++dy) {
            const int sy = std::clamp(y + dy, 0, s.h - 1);
            for (int ddx = -1; ddx <= 1; ++ddx) {
              const int sx = std::clamp(xo + ddx, 0, s.w - 1);
              dx(c, sy, sx) += dgx * kx[dy + 1][ddx + 1] + dgy * ky[dy + 1][ddx + 1];
            }
          }
        }
      }
    }
  });
}

Var luminance(const Var& rgb) {
  const Shape s = rgb.shape();
  if (s.c != 3) throw ShapeError("luminance expects 3 channels, got " + to_string(s));
  static constexpr double kWeights[3] = {0.299, 0.587, 0.114};
  Tensor out({1, s.h, s.w});
  for (int c = 0; c < 3; ++c) {
    auto src = rgb.value().channel(c);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += kWeights[c] * src[i];
  }
  Node* xn = rgb.node();
  return make_op(std::move(out), {rgb}, [xn, s](const Tensor& g) {
    if (!xn->requires_grad) return;
    Tensor& d = xn->grad_buffer();
    for (int c = 0; c < 3; ++c) {
      auto dc = d.channel(c);
      for (std::size_t i = 0; i < s.plane(); ++i) dc[i] += kWeights[c] * g[i];
    }
  });
}

}  // namespace ldfuse::nn
