#include "mvr/diff/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mvr::diff {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, errc::parameter,
          std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
              shape_str(b.shape));
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(Tape& tp, Var a, Var b) {
  const Tensor& ta = tp.val(a);
  const Tensor& tb = tp.val(b);
  check_same_shape(ta, tb, "add");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i];
  return tp.make(std::move(out), {a, b}, [a, b](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(Tape& tp, Var a, Var b) {
  const Tensor& ta = tp.val(a);
  const Tensor& tb = tp.val(b);
  check_same_shape(ta, tb, "sub");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - tb[i];
  return tp.make(std::move(out), {a, b}, [a, b](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Tape& tp, Var a, Var b) {
  const Tensor& ta = tp.val(a);
  const Tensor& tb = tp.val(b);
  check_same_shape(ta, tb, "mul");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * tb[i];
  return tp.make(std::move(out), {a, b}, [a, b](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    const Tensor& ta = t.val(a);
    const Tensor& tb = t.val(b);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * tb[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * ta[i];
    }
  });
}

Var scale(Tape& tp, Var a, double s) {
  const Tensor& ta = tp.val(a);
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * s;
  return tp.make(std::move(out), {a}, [a, s](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
  });
}

Var add_scalar(Tape& tp, Var a, double s) {
  const Tensor& ta = tp.val(a);
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + s;
  return tp.make(std::move(out), {a}, [a](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

Var square(Tape& tp, Var a) { return mul(tp, a, a); }

Var relu(Tape& tp, Var a) {
  const Tensor& ta = tp.val(a);
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  return tp.make(std::move(out), {a}, [a](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    const Tensor& ta = t.val(a);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (ta[i] > 0.0) ga[i] += g[i];
  });
}

Var leaky_relu(Tape& tp, Var a, double slope) {
  const Tensor& ta = tp.val(a);
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : slope * ta[i];
  return tp.make(std::move(out), {a}, [a, slope](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    const Tensor& ta = t.val(a);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += ta[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var sigmoid(Tape& tp, Var a) {
  const Tensor& ta = tp.val(a);
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ta[i]));
  return tp.make(std::move(out), {a}, [a](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    const Tensor& y = t.val(Var{id});
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var sub_const(Tape& tp, Var a, const Tensor& c) {
  const Tensor& ta = tp.val(a);
  check_same_shape(ta, c, "sub_const");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - c[i];
  return tp.make(std::move(out), {a}, [a](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

// --------------------------------------------------------------- reductions

Var sum_all(Tape& tp, Var a) {
  const Tensor& ta = tp.val(a);
  double s = 0.0;
  for (double v : ta.data) s += v;
  return tp.make(Tensor::scalar(s), {a}, [a](Tape& t, int id) {
    const double g = t.grad(Var{id})[0];
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var mean_all(Tape& tp, Var a) {
  const Tensor& ta = tp.val(a);
  const double inv_n = 1.0 / static_cast<double>(ta.numel());
  double s = 0.0;
  for (double v : ta.data) s += v;
  return tp.make(Tensor::scalar(s * inv_n), {a}, [a, inv_n](Tape& t, int id) {
    const double g = t.grad(Var{id})[0] * inv_n;
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var add_many(Tape& tp, const std::vector<Var>& xs) {
  require(!xs.empty(), errc::parameter, "add_many: empty input");
  double s = 0.0;
  for (Var x : xs) s += tp.scalar(x);
  return tp.make(Tensor::scalar(s), xs, [xs](Tape& t, int id) {
    const double g = t.grad(Var{id})[0];
    for (Var x : xs)
      if (t.needs_grad(x)) t.grad(x)[0] += g;
  });
}

Var mean_axis(Tape& tp, Var a, int axis) {
  const Tensor& ta = tp.val(a);
  require(axis >= 0 && axis < ta.rank(), errc::parameter, "mean_axis: bad axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(ta.shape[i]);
  for (int i = axis + 1; i < ta.rank(); ++i) inner *= static_cast<std::size_t>(ta.shape[i]);
  const std::size_t n = static_cast<std::size_t>(ta.shape[axis]);
  Shape out_shape;
  for (int i = 0; i < ta.rank(); ++i)
    if (i != axis) out_shape.push_back(ta.shape[i]);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = ta.data.data() + (o * n + k) * inner;
      double* dst = out.data.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv_n;
    }
  return tp.make(std::move(out), {a}, [a, outer, n, inner, inv_n](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k) {
        double* dst = ga.data.data() + (o * n + k) * inner;
        const double* src = g.data.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv_n;
      }
  });
}

Var reshape(Tape& tp, Var a, Shape s) {
  const Tensor& ta = tp.val(a);
  require(numel_of(s) == ta.numel(), errc::parameter, "reshape: element count mismatch");
  Tensor out(std::move(s), ta.data);
  return tp.make(std::move(out), {a}, [a](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

Var permute(Tape& tp, Var a, const std::vector<int>& perm) {
  const Tensor& ta = tp.val(a);
  const int r = ta.rank();
  require(static_cast<int>(perm.size()) == r, errc::parameter, "permute: rank mismatch");
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = ta.shape[perm[i]];

  std::vector<std::size_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * static_cast<std::size_t>(ta.shape[i + 1]);

  auto mapping = std::make_shared<std::vector<std::size_t>>(ta.numel());
  Tensor out(out_shape);
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  for (std::size_t o = 0; o < out.numel(); ++o) {
    std::size_t src = 0;
    for (int i = 0; i < r; ++i) src += static_cast<std::size_t>(idx[i]) * in_strides[perm[i]];
    out[o] = ta[src];
    (*mapping)[o] = src;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return tp.make(std::move(out), {a}, [a, mapping](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t o = 0; o < g.numel(); ++o) ga[(*mapping)[o]] += g[o];
  });
}

Var slice_lastdim(Tape& tp, Var a, int start, int len) {
  const Tensor& ta = tp.val(a);
  const int t_dim = ta.shape.back();
  require(start >= 0 && len > 0 && start + len <= t_dim, errc::parameter,
          "slice_lastdim: out of range");
  const std::size_t rows = ta.numel() / static_cast<std::size_t>(t_dim);
  Shape out_shape = ta.shape;
  out_shape.back() = len;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(ta.data.data() + r * static_cast<std::size_t>(t_dim) + start, len,
                out.data.data() + r * static_cast<std::size_t>(len));
  return tp.make(std::move(out), {a}, [a, start, len, rows, t_dim](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = g.data.data() + r * static_cast<std::size_t>(len);
      double* dst = ga.data.data() + r * static_cast<std::size_t>(t_dim) + start;
      for (int i = 0; i < len; ++i) dst[i] += src[i];
    }
  });
}

Var slice_row_segment(Tape& tp, Var a, int row, int start, int len) {
  const Tensor& ta = tp.val(a);
  require(ta.rank() == 2, errc::parameter, "slice_row_segment: input must be (R,T)");
  const int t_dim = ta.shape[1];
  require(row >= 0 && row < ta.shape[0], errc::parameter, "slice_row_segment: bad row");
  require(start >= 0 && len > 0 && start + len <= t_dim, errc::parameter,
          "slice_row_segment: segment out of range");
  const std::size_t base = static_cast<std::size_t>(row) * t_dim + start;
  Tensor out({len});
  std::copy_n(ta.data.data() + base, len, out.data.data());
  return tp.make(std::move(out), {a}, [a, base, len](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad(a);
    for (int i = 0; i < len; ++i) ga[base + static_cast<std::size_t>(i)] += g[i];
  });
}

Var stack_rows(Tape& tp, const std::vector<Var>& xs) {
  require(!xs.empty(), errc::parameter, "stack_rows: empty input");
  const Tensor& first = tp.val(xs[0]);
  for (Var x : xs) check_same_shape(tp.val(x), first, "stack_rows");
  Shape out_shape;
  out_shape.push_back(static_cast<int>(xs.size()));
  for (int d : first.shape) out_shape.push_back(d);
  Tensor out(out_shape);
  const std::size_t stride = first.numel();
  for (std::size_t k = 0; k < xs.size(); ++k)
    std::copy_n(tp.val(xs[k]).data.data(), stride, out.data.data() + k * stride);
  return tp.make(std::move(out), xs, [xs, stride](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!t.needs_grad(xs[k])) continue;
      Tensor& ga = t.grad(xs[k]);
      const double* src = g.data.data() + k * stride;
      for (std::size_t i = 0; i < stride; ++i) ga[i] += src[i];
    }
  });
}

// ------------------------------------------------------- softmax / layernorm

Var softmax_lastdim(Tape& tp, Var a) {
  const Tensor& ta = tp.val(a);
  const std::size_t n = static_cast<std::size_t>(ta.shape.back());
  const std::size_t rows = ta.numel() / n;
  Tensor out(ta.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ta.data.data() + r * n;
    double* y = out.data.data() + r * n;
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      s += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= s;
  }
  return tp.make(std::move(out), {a}, [a, rows, n](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(a)) return;
    const Tensor& y = t.val(Var{id});
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data.data() + r * n;
      const double* gr = g.data.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
      double* gar = ga.data.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) gar[i] += yr[i] * (gr[i] - dot);
    }
  });
}

namespace {

// Shared layer-norm core over layout (outer, C, inner); gamma/beta shape (C).
Var layer_norm_core(Tape& tp, Var x, Var gamma, Var beta, double eps, std::size_t outer,
                    std::size_t channels, std::size_t inner) {
  const Tensor& tx = tp.val(x);
  const Tensor& tg = tp.val(gamma);
  const Tensor& tb = tp.val(beta);
  require(tg.numel() == channels && tb.numel() == channels, errc::parameter,
          "layer_norm: gamma/beta size mismatch");

  Tensor out(tx.shape);
  auto mu = std::make_shared<std::vector<double>>(outer * inner);
  auto inv_s = std::make_shared<std::vector<double>>(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double m = 0.0;
      for (std::size_t c = 0; c < channels; ++c) m += tx[(o * channels + c) * inner + i];
      m /= static_cast<double>(channels);
      double var = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = tx[(o * channels + c) * inner + i] - m;
        var += d * d;
      }
      var /= static_cast<double>(channels);
      const double is = 1.0 / std::sqrt(var + eps);
      (*mu)[o * inner + i] = m;
      (*inv_s)[o * inner + i] = is;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t idx = (o * channels + c) * inner + i;
        out[idx] = tg[c] * (tx[idx] - m) * is + tb[c];
      }
    }

  return tp.make(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, outer, channels, inner, mu, inv_s](Tape& t, int id) {
                   const Tensor& g = t.grad(Var{id});
                   const Tensor& tx = t.val(x);
                   const Tensor& tg = t.val(gamma);
                   const bool need_x = t.needs_grad(x);
                   const bool need_g = t.needs_grad(gamma);
                   const bool need_b = t.needs_grad(beta);
                   Tensor* gx = need_x ? &t.grad(x) : nullptr;
                   Tensor* gg = need_g ? &t.grad(gamma) : nullptr;
                   Tensor* gb = need_b ? &t.grad(beta) : nullptr;
                   std::vector<double> xhat(channels), gh(channels);
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t i = 0; i < inner; ++i) {
                       const double m = (*mu)[o * inner + i];
                       const double is = (*inv_s)[o * inner + i];
                       double mean_gh = 0.0, mean_ghx = 0.0;
                       for (std::size_t c = 0; c < channels; ++c) {
                         const std::size_t idx = (o * channels + c) * inner + i;
                         xhat[c] = (tx[idx] - m) * is;
                         gh[c] = g[idx] * tg[c];
                         mean_gh += gh[c];
                         mean_ghx += gh[c] * xhat[c];
                         if (need_g) (*gg)[c] += g[idx] * xhat[c];
                         if (need_b) (*gb)[c] += g[idx];
                       }
                       mean_gh /= static_cast<double>(channels);
                       mean_ghx /= static_cast<double>(channels);
                       if (need_x)
                         for (std::size_t c = 0; c < channels; ++c) {
                           const std::size_t idx = (o * channels + c) * inner + i;
                           (*gx)[idx] += is * (gh[c] - mean_gh - xhat[c] * mean_ghx);
                         }
                     }
                 });
}

}  // namespace

Var layer_norm_dim1(Tape& tp, Var x, Var gamma, Var beta, double eps) {
  const Tensor& tx = tp.val(x);
  require(tx.rank() >= 2, errc::parameter, "layer_norm_dim1: rank must be >= 2");
  const std::size_t outer = static_cast<std::size_t>(tx.shape[0]);
  const std::size_t channels = static_cast<std::size_t>(tx.shape[1]);
  std::size_t inner = 1;
  for (int i = 2; i < tx.rank(); ++i) inner *= static_cast<std::size_t>(tx.shape[i]);
  return layer_norm_core(tp, x, gamma, beta, eps, outer, channels, inner);
}

Var layer_norm_lastdim(Tape& tp, Var x, Var gamma, Var beta, double eps) {
  const Tensor& tx = tp.val(x);
  const std::size_t channels = static_cast<std::size_t>(tx.shape.back());
  const std::size_t outer = tx.numel() / channels;
  return layer_norm_core(tp, x, gamma, beta, eps, outer, channels, 1);
}

Var standardize_lastdim(Tape& tp, Var x, double eps) {
  const Tensor& tx = tp.val(x);
  const std::size_t n = static_cast<std::size_t>(tx.shape.back());
  const std::size_t rows = tx.numel() / n;
  Tensor out(tx.shape);
  auto inv_s = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = tx.data.data() + r * n;
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += xr[i];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_s)[r] = is;
    double* yr = out.data.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) yr[i] = (xr[i] - m) * is;
  }
  return tp.make(std::move(out), {x}, [x, rows, n, inv_s](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(x)) return;
    const Tensor& y = t.val(Var{id});
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data.data() + r * n;
      const double* gr = g.data.data() + r * n;
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        mean_g += gr[i];
        mean_gy += gr[i] * yr[i];
      }
      mean_g /= static_cast<double>(n);
      mean_gy /= static_cast<double>(n);
      const double is = (*inv_s)[r];
      double* gxr = gx.data.data() + r * n;
      for (std::size_t i = 0; i < n; ++i)
        gxr[i] += is * (gr[i] - mean_g - yr[i] * mean_gy);
    }
  });
}

// ------------------------------------------------------------------ attention

namespace {

// y += a (rows x k) * b (k x cols)
void matmul_acc(const double* a, const double* b, double* y, std::size_t rows, std::size_t k,
                std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * k;
    double* yr = y + r * cols;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = ar[i];
      const double* br = b + i * cols;
      for (std::size_t c = 0; c < cols; ++c) yr[c] += av * br[c];
    }
  }
}

// y += a (rows x k) * b^T where b is (cols x k)
void matmul_bt_acc(const double* a, const double* b, double* y, std::size_t rows, std::size_t k,
                   std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * k;
    double* yr = y + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const double* br = b + c * k;
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += ar[i] * br[i];
      yr[c] += s;
    }
  }
}

// y += a^T (a is k x rows) * b (k x cols)
void matmul_at_acc(const double* a, const double* b, double* y, std::size_t rows, std::size_t k,
                   std::size_t cols) {
  for (std::size_t i = 0; i < k; ++i) {
    const double* ar = a + i * rows;
    const double* br = b + i * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const double av = ar[r];
      double* yr = y + r * cols;
      for (std::size_t c = 0; c < cols; ++c) yr[c] += av * br[c];
    }
  }
}

void softmax_rows(double* m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* x = m + r * cols;
    double mx = x[0];
    for (std::size_t i = 1; i < cols; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < cols; ++i) {
      x[i] = std::exp(x[i] - mx);
      s += x[i];
    }
    for (std::size_t i = 0; i < cols; ++i) x[i] /= s;
  }
}

// gS = A .* (gA - rowdot(gA, A)); in place over gA
void softmax_rows_backward(const double* a, double* ga, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * cols;
    double* gr = ga + r * cols;
    double dot = 0.0;
    for (std::size_t i = 0; i < cols; ++i) dot += gr[i] * ar[i];
    for (std::size_t i = 0; i < cols; ++i) gr[i] = ar[i] * (gr[i] - dot);
  }
}

}  // namespace

Var mha_time(Tape& tp, Var x, Var wq, Var wk, Var wv, Var wo, int heads) {
  const Tensor& tx = tp.val(x);
  require(tx.rank() == 3, errc::parameter, "mha_time: x must be (B,T,D)");
  const std::size_t B = static_cast<std::size_t>(tx.shape[0]);
  const std::size_t T = static_cast<std::size_t>(tx.shape[1]);
  const std::size_t D = static_cast<std::size_t>(tx.shape[2]);
  require(heads > 0 && D % static_cast<std::size_t>(heads) == 0, errc::parameter,
          "mha_time: heads must divide D");
  const std::size_t H = static_cast<std::size_t>(heads);
  const std::size_t dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (Var w : {wq, wk, wv, wo})
    require(tp.val(w).shape == Shape{static_cast<int>(D), static_cast<int>(D)}, errc::parameter,
            "mha_time: weight must be (D,D)");

  auto q_all = std::make_shared<std::vector<double>>(B * T * D);
  auto k_all = std::make_shared<std::vector<double>>(B * T * D);
  auto v_all = std::make_shared<std::vector<double>>(B * T * D);
  auto o_all = std::make_shared<std::vector<double>>(B * T * D, 0.0);
  auto a_all = std::make_shared<std::vector<double>>(B * H * T * T);

  const double* wq_p = tp.val(wq).data.data();
  const double* wk_p = tp.val(wk).data.data();
  const double* wv_p = tp.val(wv).data.data();
  const double* wo_p = tp.val(wo).data.data();

  Tensor out(tx.shape);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = tx.data.data() + b * T * D;
    double* qb = q_all->data() + b * T * D;
    double* kb = k_all->data() + b * T * D;
    double* vb = v_all->data() + b * T * D;
    // Q = X Wq^T etc (weights stored (out,in))
    matmul_bt_acc(xb, wq_p, qb, T, D, D);
    matmul_bt_acc(xb, wk_p, kb, T, D, D);
    matmul_bt_acc(xb, wv_p, vb, T, D, D);
    double* ob = o_all->data() + b * T * D;
    for (std::size_t h = 0; h < H; ++h) {
      double* ab = a_all->data() + (b * H + h) * T * T;
      std::fill(ab, ab + T * T, 0.0);
      // S = Qh Kh^T * scale; heads are column blocks of Q/K/V
      for (std::size_t r = 0; r < T; ++r) {
        const double* qr = qb + r * D + h * dh;
        double* sr = ab + r * T;
        for (std::size_t c = 0; c < T; ++c) {
          const double* kr = kb + c * D + h * dh;
          double s = 0.0;
          for (std::size_t i = 0; i < dh; ++i) s += qr[i] * kr[i];
          sr[c] = s * scale;
        }
      }
      softmax_rows(ab, T, T);
      for (std::size_t r = 0; r < T; ++r) {
        const double* ar = ab + r * T;
        double* orow = ob + r * D + h * dh;
        for (std::size_t c = 0; c < T; ++c) {
          const double av = ar[c];
          const double* vr = vb + c * D + h * dh;
          for (std::size_t i = 0; i < dh; ++i) orow[i] += av * vr[i];
        }
      }
    }
    // Y = O Wo^T
    double* yb = out.data.data() + b * T * D;
    matmul_bt_acc(ob, wo_p, yb, T, D, D);
  }
  require(out.all_finite(), errc::numeric, "mha_time: non-finite output");

  return tp.make(
      std::move(out), {x, wq, wk, wv, wo},
      [x, wq, wk, wv, wo, B, T, D, H, dh, scale, q_all, k_all, v_all, o_all, a_all](Tape& t,
                                                                                    int id) {
        const Tensor& g = t.grad(Var{id});
        const Tensor& tx = t.val(x);
        const double* wq_p = t.val(wq).data.data();
        const double* wk_p = t.val(wk).data.data();
        const double* wv_p = t.val(wv).data.data();
        const double* wo_p = t.val(wo).data.data();
        const bool need_x = t.needs_grad(x);

        Tensor* gx = need_x ? &t.grad(x) : nullptr;
        Tensor& gwq = t.grad(wq);
        Tensor& gwk = t.grad(wk);
        Tensor& gwv = t.grad(wv);
        Tensor& gwo = t.grad(wo);

        std::vector<double> go(T * D), gq(T * D), gk(T * D), gv(T * D), ga(T * T);
        for (std::size_t b = 0; b < B; ++b) {
          const double* xb = tx.data.data() + b * T * D;
          const double* gy = g.data.data() + b * T * D;
          const double* qb = q_all->data() + b * T * D;
          const double* kb = k_all->data() + b * T * D;
          const double* vb = v_all->data() + b * T * D;
          const double* ob = o_all->data() + b * T * D;

          // Y = O Wo^T: gO = gY Wo; gWo += gY^T O
          std::fill(go.begin(), go.end(), 0.0);
          matmul_acc(gy, wo_p, go.data(), T, D, D);
          matmul_at_acc(gy, ob, gwo.data.data(), D, T, D);

          std::fill(gq.begin(), gq.end(), 0.0);
          std::fill(gk.begin(), gk.end(), 0.0);
          std::fill(gv.begin(), gv.end(), 0.0);
          for (std::size_t h = 0; h < H; ++h) {
            const double* ab = a_all->data() + (b * H + h) * T * T;
            // gA = gOh Vh^T; gVh = A^T gOh
            for (std::size_t r = 0; r < T; ++r) {
              const double* gor = go.data() + r * D + h * dh;
              double* gar = ga.data() + r * T;
              for (std::size_t c = 0; c < T; ++c) {
                const double* vr = vb + c * D + h * dh;
                double s = 0.0;
                for (std::size_t i = 0; i < dh; ++i) s += gor[i] * vr[i];
                gar[c] = s;
              }
            }
            for (std::size_t c = 0; c < T; ++c) {
              double* gvr = gv.data() + c * D + h * dh;
              for (std::size_t r = 0; r < T; ++r) {
                const double av = ab[r * T + c];
                const double* gor = go.data() + r * D + h * dh;
                for (std::size_t i = 0; i < dh; ++i) gvr[i] += av * gor[i];
              }
            }
            softmax_rows_backward(ab, ga.data(), T, T);
            // gQh += (gS Kh) * scale; gKh += (gS^T Qh) * scale
            for (std::size_t r = 0; r < T; ++r) {
              const double* gsr = ga.data() + r * T;
              double* gqr = gq.data() + r * D + h * dh;
              for (std::size_t c = 0; c < T; ++c) {
                const double gsv = gsr[c] * scale;
                const double* kr = kb + c * D + h * dh;
                for (std::size_t i = 0; i < dh; ++i) gqr[i] += gsv * kr[i];
                double* gkr = gk.data() + c * D + h * dh;
                const double* qr = qb + r * D + h * dh;
                for (std::size_t i = 0; i < dh; ++i) gkr[i] += gsv * qr[i];
              }
            }
          }
          // Q = X Wq^T: gX += gQ Wq; gWq += gQ^T X
          if (need_x) {
            double* gxb = gx->data.data() + b * T * D;
            matmul_acc(gq.data(), wq_p, gxb, T, D, D);
            matmul_acc(gk.data(), wk_p, gxb, T, D, D);
            matmul_acc(gv.data(), wv_p, gxb, T, D, D);
          }
          matmul_at_acc(gq.data(), xb, gwq.data.data(), D, T, D);
          matmul_at_acc(gk.data(), xb, gwk.data.data(), D, T, D);
          matmul_at_acc(gv.data(), xb, gwv.data.data(), D, T, D);
        }
      });
}

Var cross_view_attention_core(Tape& tp, Var f, Var wq, Var wk, Var wv) {
  const Tensor& tf = tp.val(f);
  require(tf.rank() == 4, errc::parameter, "cross_view_attention: f must be (B,V,D,T)");
  const std::size_t B = static_cast<std::size_t>(tf.shape[0]);
  const std::size_t V = static_cast<std::size_t>(tf.shape[1]);
  const std::size_t D = static_cast<std::size_t>(tf.shape[2]);
  const std::size_t T = static_cast<std::size_t>(tf.shape[3]);
  for (Var w : {wq, wk, wv})
    require(tp.val(w).shape == Shape{static_cast<int>(D), static_cast<int>(D)}, errc::parameter,
            "cross_view_attention: weight must be (D,D)");
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));

  const double* wq_p = tp.val(wq).data.data();
  const double* wk_p = tp.val(wk).data.data();
  const double* wv_p = tp.val(wv).data.data();

  auto a_all = std::make_shared<std::vector<double>>(B * T * V * V);
  Tensor out(tf.shape);

  std::vector<double> m(V * D), q(V * D), k(V * D), vv(V * D), o(V * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t0 = 0; t0 < T; ++t0) {
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t d = 0; d < D; ++d)
          m[v * D + d] = tf[((b * V + v) * D + d) * T + t0];
      std::fill(q.begin(), q.end(), 0.0);
      std::fill(k.begin(), k.end(), 0.0);
      std::fill(vv.begin(), vv.end(), 0.0);
      matmul_bt_acc(m.data(), wq_p, q.data(), V, D, D);
      matmul_bt_acc(m.data(), wk_p, k.data(), V, D, D);
      matmul_bt_acc(m.data(), wv_p, vv.data(), V, D, D);
      double* a = a_all->data() + (b * T + t0) * V * V;
      for (std::size_t r = 0; r < V; ++r)
        for (std::size_t c = 0; c < V; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < D; ++i) s += q[r * D + i] * k[c * D + i];
          a[r * V + c] = s * scale;
        }
      for (std::size_t i = 0; i < V * V; ++i)
        require(std::isfinite(a[i]), errc::numeric,
                "cross_view_attention: non-finite attention logits");
      softmax_rows(a, V, V);
      std::fill(o.begin(), o.end(), 0.0);
      matmul_acc(a, vv.data(), o.data(), V, V, D);
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t d = 0; d < D; ++d)
          out[((b * V + v) * D + d) * T + t0] = o[v * D + d];
    }

  return tp.make(
      std::move(out), {f, wq, wk, wv},
      [f, wq, wk, wv, B, V, D, T, scale, a_all](Tape& t, int id) {
        const Tensor& g = t.grad(Var{id});
        const Tensor& tf = t.val(f);
        const double* wq_p = t.val(wq).data.data();
        const double* wk_p = t.val(wk).data.data();
        const double* wv_p = t.val(wv).data.data();
        const bool need_f = t.needs_grad(f);
        Tensor* gf = need_f ? &t.grad(f) : nullptr;
        Tensor& gwq = t.grad(wq);
        Tensor& gwk = t.grad(wk);
        Tensor& gwv = t.grad(wv);

        std::vector<double> m(V * D), q(V * D), k(V * D), vv(V * D);
        std::vector<double> go(V * D), ga(V * V), gq(V * D), gk(V * D), gv(V * D), gm(V * D);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t0 = 0; t0 < T; ++t0) {
            for (std::size_t v = 0; v < V; ++v)
              for (std::size_t d = 0; d < D; ++d) {
                m[v * D + d] = tf[((b * V + v) * D + d) * T + t0];
                go[v * D + d] = g[((b * V + v) * D + d) * T + t0];
              }
            std::fill(q.begin(), q.end(), 0.0);
            std::fill(k.begin(), k.end(), 0.0);
            std::fill(vv.begin(), vv.end(), 0.0);
            matmul_bt_acc(m.data(), wq_p, q.data(), V, D, D);
            matmul_bt_acc(m.data(), wk_p, k.data(), V, D, D);
            matmul_bt_acc(m.data(), wv_p, vv.data(), V, D, D);
            const double* a = a_all->data() + (b * T + t0) * V * V;

            // gA = gO V^T; gV = A^T gO
            std::fill(ga.begin(), ga.end(), 0.0);
            matmul_bt_acc(go.data(), vv.data(), ga.data(), V, D, V);
            std::fill(gv.begin(), gv.end(), 0.0);
            matmul_at_acc(a, go.data(), gv.data(), V, V, D);
            softmax_rows_backward(a, ga.data(), V, V);
            // gQ = gS K * scale; gK = gS^T Q * scale
            std::fill(gq.begin(), gq.end(), 0.0);
            std::fill(gk.begin(), gk.end(), 0.0);
            for (std::size_t i = 0; i < V * V; ++i) ga[i] *= scale;
            matmul_acc(ga.data(), k.data(), gq.data(), V, V, D);
            matmul_at_acc(ga.data(), q.data(), gk.data(), V, V, D);
            // gM = gQ Wq + gK Wk + gV Wv
            std::fill(gm.begin(), gm.end(), 0.0);
            matmul_acc(gq.data(), wq_p, gm.data(), V, D, D);
            matmul_acc(gk.data(), wk_p, gm.data(), V, D, D);
            matmul_acc(gv.data(), wv_p, gm.data(), V, D, D);
            if (need_f)
              for (std::size_t v = 0; v < V; ++v)
                for (std::size_t d = 0; d < D; ++d)
                  (*gf)[((b * V + v) * D + d) * T + t0] += gm[v * D + d];
            matmul_at_acc(gq.data(), m.data(), gwq.data.data(), D, V, D);
            matmul_at_acc(gk.data(), m.data(), gwk.data.data(), D, V, D);
            matmul_at_acc(gv.data(), m.data(), gwv.data.data(), D, V, D);
          }
      });
}

// --------------------------------------------------------------- dense / conv

Var linear(Tape& tp, Var x, Var w, Var b) {
  const Tensor& tx = tp.val(x);
  const Tensor& tw = tp.val(w);
  const Tensor& tb = tp.val(b);
  require(tw.rank() == 2, errc::parameter, "linear: w must be (Dout, Din)");
  const std::size_t din = static_cast<std::size_t>(tw.shape[1]);
  const std::size_t dout = static_cast<std::size_t>(tw.shape[0]);
  require(static_cast<std::size_t>(tx.shape.back()) == din, errc::parameter,
          "linear: input feature size mismatch");
  require(tb.numel() == dout, errc::parameter, "linear: bias size mismatch");
  const std::size_t rows = tx.numel() / din;

  Shape out_shape = tx.shape;
  out_shape.back() = static_cast<int>(dout);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = tx.data.data() + r * din;
    double* yr = out.data.data() + r * dout;
    for (std::size_t o = 0; o < dout; ++o) {
      const double* wr = tw.data.data() + o * din;
      double s = tb[o];
      for (std::size_t i = 0; i < din; ++i) s += xr[i] * wr[i];
      yr[o] = s;
    }
  }
  return tp.make(std::move(out), {x, w, b}, [x, w, b, rows, din, dout](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    const Tensor& tx = t.val(x);
    const Tensor& tw = t.val(w);
    const bool need_x = t.needs_grad(x);
    Tensor* gx = need_x ? &t.grad(x) : nullptr;
    Tensor& gw = t.grad(w);
    Tensor& gb = t.grad(b);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data.data() + r * dout;
      const double* xr = tx.data.data() + r * din;
      for (std::size_t o = 0; o < dout; ++o) {
        const double gv = gr[o];
        if (gv == 0.0) continue;
        gb[o] += gv;
        double* gwr = gw.data.data() + o * din;
        for (std::size_t i = 0; i < din; ++i) gwr[i] += gv * xr[i];
        if (need_x) {
          const double* wr = tw.data.data() + o * din;
          double* gxr = gx->data.data() + r * din;
          for (std::size_t i = 0; i < din; ++i) gxr[i] += gv * wr[i];
        }
      }
    }
  });
}

Var conv1d(Tape& tp, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& tx = tp.val(x);
  const Tensor& tw = tp.val(w);
  const Tensor& tb = tp.val(b);
  require(tx.rank() == 3 && tw.rank() == 3, errc::parameter, "conv1d: x (B,C,T), w (Co,Ci,K)");
  const int B = tx.shape[0], Ci = tx.shape[1], T = tx.shape[2];
  const int Co = tw.shape[0], K = tw.shape[2];
  require(tw.shape[1] == Ci, errc::parameter, "conv1d: channel mismatch");
  require(tb.numel() == static_cast<std::size_t>(Co), errc::parameter, "conv1d: bias mismatch");
  require(stride >= 1, errc::parameter, "conv1d: bad stride");
  const int To = (T + 2 * pad - K) / stride + 1;
  require(To >= 1, errc::parameter, "conv1d: empty output");

  Tensor out({B, Co, To});
  for (int bi = 0; bi < B; ++bi)
    for (int co = 0; co < Co; ++co) {
      double* orow = out.data.data() + (static_cast<std::size_t>(bi) * Co + co) * To;
      for (int to = 0; to < To; ++to) orow[to] = tb[static_cast<std::size_t>(co)];
      for (int ci = 0; ci < Ci; ++ci) {
        const double* xrow = tx.data.data() + (static_cast<std::size_t>(bi) * Ci + ci) * T;
        const double* wrow = tw.data.data() + (static_cast<std::size_t>(co) * Ci + ci) * K;
        for (int k = 0; k < K; ++k) {
          const double wv = wrow[k];
          const int lo = std::max(0, ceil_div(pad - k, stride));
          const int hi = std::min(To - 1, (T - 1 + pad - k) / stride);
          for (int to = lo; to <= hi; ++to) orow[to] += wv * xrow[to * stride + k - pad];
        }
      }
    }

  return tp.make(std::move(out), {x, w, b},
                 [x, w, b, B, Ci, T, Co, K, To, stride, pad](Tape& t, int id) {
                   const Tensor& g = t.grad(Var{id});
                   const Tensor& tx = t.val(x);
                   const Tensor& tw = t.val(w);
                   const bool need_x = t.needs_grad(x);
                   Tensor* gx = need_x ? &t.grad(x) : nullptr;
                   Tensor& gw = t.grad(w);
                   Tensor& gb = t.grad(b);
                   for (int bi = 0; bi < B; ++bi)
                     for (int co = 0; co < Co; ++co) {
                       const double* grow =
                           g.data.data() + (static_cast<std::size_t>(bi) * Co + co) * To;
                       for (int to = 0; to < To; ++to) gb[static_cast<std::size_t>(co)] += grow[to];
                       for (int ci = 0; ci < Ci; ++ci) {
                         const double* xrow =
                             tx.data.data() + (static_cast<std::size_t>(bi) * Ci + ci) * T;
                         const double* wrow =
                             tw.data.data() + (static_cast<std::size_t>(co) * Ci + ci) * K;
                         double* gwrow =
                             gw.data.data() + (static_cast<std::size_t>(co) * Ci + ci) * K;
                         double* gxrow =
                             need_x ? gx->data.data() + (static_cast<std::size_t>(bi) * Ci + ci) * T
                                    : nullptr;
                         for (int k = 0; k < K; ++k) {
                           const int lo = std::max(0, ceil_div(pad - k, stride));
                           const int hi = std::min(To - 1, (T - 1 + pad - k) / stride);
                           double acc = 0.0;
                           for (int to = lo; to <= hi; ++to) {
                             const int ti = to * stride + k - pad;
                             acc += grow[to] * xrow[ti];
                             if (need_x) gxrow[ti] += grow[to] * wrow[k];
                           }
                           gwrow[k] += acc;
                         }
                       }
                     }
                 });
}

Var conv3d(Tape& tp, Var x, Var w, Var b, std::array<int, 3> stride, std::array<int, 3> pad) {
  const Tensor& tx = tp.val(x);
  const Tensor& tw = tp.val(w);
  const Tensor& tb = tp.val(b);
  require(tx.rank() == 5 && tw.rank() == 5, errc::parameter,
          "conv3d: x (B,C,H,W,T), w (Co,Ci,Kh,Kw,Kt)");
  const int B = tx.shape[0], Ci = tx.shape[1], H = tx.shape[2], W = tx.shape[3], T = tx.shape[4];
  const int Co = tw.shape[0], Kh = tw.shape[2], Kw = tw.shape[3], Kt = tw.shape[4];
  require(tw.shape[1] == Ci, errc::parameter, "conv3d: channel mismatch");
  require(tb.numel() == static_cast<std::size_t>(Co), errc::parameter, "conv3d: bias mismatch");
  const int sh = stride[0], sw = stride[1], st = stride[2];
  const int ph = pad[0], pw = pad[1], pt = pad[2];
  const int Ho = (H + 2 * ph - Kh) / sh + 1;
  const int Wo = (W + 2 * pw - Kw) / sw + 1;
  const int To = (T + 2 * pt - Kt) / st + 1;
  require(Ho >= 1 && Wo >= 1 && To >= 1, errc::parameter, "conv3d: empty output");

  auto xrow_at = [Ci, H, W, T](int bi, int ci, int hi, int wi) {
    return (((static_cast<std::size_t>(bi) * Ci + ci) * H + hi) * W + wi) *
           static_cast<std::size_t>(T);
  };
  auto orow_at = [Co, Ho, Wo, To](int bi, int co, int ho, int wo) {
    return (((static_cast<std::size_t>(bi) * Co + co) * Ho + ho) * Wo + wo) *
           static_cast<std::size_t>(To);
  };
  auto wrow_at = [Ci, Kh, Kw, Kt](int co, int ci, int kh, int kw) {
    return (((static_cast<std::size_t>(co) * Ci + ci) * Kh + kh) * Kw + kw) *
           static_cast<std::size_t>(Kt);
  };

  Tensor out({B, Co, Ho, Wo, To});
  for (int bi = 0; bi < B; ++bi)
    for (int co = 0; co < Co; ++co) {
      const double bias = tb[static_cast<std::size_t>(co)];
      double* oplane = out.data.data() + orow_at(bi, co, 0, 0);
      std::fill(oplane, oplane + static_cast<std::size_t>(Ho) * Wo * To, bias);
      for (int ci = 0; ci < Ci; ++ci)
        for (int kh = 0; kh < Kh; ++kh)
          for (int kw = 0; kw < Kw; ++kw) {
            const double* wrow = tw.data.data() + wrow_at(co, ci, kh, kw);
            for (int ho = 0; ho < Ho; ++ho) {
              const int hi = ho * sh + kh - ph;
              if (hi < 0 || hi >= H) continue;
              for (int wo = 0; wo < Wo; ++wo) {
                const int wi = wo * sw + kw - pw;
                if (wi < 0 || wi >= W) continue;
                const double* xrow = tx.data.data() + xrow_at(bi, ci, hi, wi);
                double* orow = out.data.data() + orow_at(bi, co, ho, wo);
                for (int kt = 0; kt < Kt; ++kt) {
                  const double wv = wrow[kt];
                  const int lo = std::max(0, ceil_div(pt - kt, st));
                  const int hi2 = std::min(To - 1, (T - 1 + pt - kt) / st);
                  const double* xr = xrow + kt - pt;
                  if (st == 1) {
                    const double* xs = xr + lo;
                    double* os = orow + lo;
                    const int n = hi2 - lo + 1;
                    for (int i = 0; i < n; ++i) os[i] += wv * xs[i];
                  } else {
                    for (int to = lo; to <= hi2; ++to) orow[to] += wv * xr[to * st];
                  }
                }
              }
            }
          }
    }

  return tp.make(
      std::move(out), {x, w, b},
      [=](Tape& t, int id) {
        const Tensor& g = t.grad(Var{id});
        const Tensor& tx = t.val(x);
        const Tensor& tw = t.val(w);
        const bool need_x = t.needs_grad(x);
        Tensor* gx = need_x ? &t.grad(x) : nullptr;
        Tensor& gw = t.grad(w);
        Tensor& gb = t.grad(b);
        for (int bi = 0; bi < B; ++bi)
          for (int co = 0; co < Co; ++co) {
            const double* gplane = g.data.data() + orow_at(bi, co, 0, 0);
            double gbias = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo * To; ++i)
              gbias += gplane[i];
            gb[static_cast<std::size_t>(co)] += gbias;
            for (int ci = 0; ci < Ci; ++ci)
              for (int kh = 0; kh < Kh; ++kh)
                for (int kw = 0; kw < Kw; ++kw) {
                  const double* wrow = tw.data.data() + wrow_at(co, ci, kh, kw);
                  double* gwrow = gw.data.data() + wrow_at(co, ci, kh, kw);
                  for (int ho = 0; ho < Ho; ++ho) {
                    const int hi = ho * sh + kh - ph;
                    if (hi < 0 || hi >= H) continue;
                    for (int wo = 0; wo < Wo; ++wo) {
                      const int wi = wo * sw + kw - pw;
                      if (wi < 0 || wi >= W) continue;
                      const double* xrow = tx.data.data() + xrow_at(bi, ci, hi, wi);
                      const double* grow = g.data.data() + orow_at(bi, co, ho, wo);
                      double* gxrow =
                          need_x ? gx->data.data() + xrow_at(bi, ci, hi, wi) : nullptr;
                      for (int kt = 0; kt < Kt; ++kt) {
                        const int lo = std::max(0, ceil_div(pt - kt, st));
                        const int hi2 = std::min(To - 1, (T - 1 + pt - kt) / st);
                        const double wv = wrow[kt];
                        const double* xr = xrow + kt - pt;
                        double acc = 0.0;
                        if (need_x) {
                          double* gxr = gxrow + kt - pt;
                          if (st == 1) {
                            const int n = hi2 - lo + 1;
                            const double* xs = xr + lo;
                            const double* gs = grow + lo;
                            double* gxs = gxr + lo;
                            for (int i = 0; i < n; ++i) {
                              acc += gs[i] * xs[i];
                              gxs[i] += gs[i] * wv;
                            }
                          } else {
                            for (int to = lo; to <= hi2; ++to) {
                              const double gv = grow[to];
                              acc += gv * xr[to * st];
                              gxr[to * st] += gv * wv;
                            }
                          }
                        } else {
                          if (st == 1) {
                            const int n = hi2 - lo + 1;
                            const double* xs = xr + lo;
                            const double* gs = grow + lo;
                            for (int i = 0; i < n; ++i) acc += gs[i] * xs[i];
                          } else {
                            for (int to = lo; to <= hi2; ++to) acc += grow[to] * xr[to * st];
                          }
                        }
                        gwrow[kt] += acc;
                      }
                    }
                  }
                }
          }
      });
}

Var channel_affine(Tape& tp, Var x, Var w, Var b) {
  const Tensor& tx = tp.val(x);
  const Tensor& tw = tp.val(w);
  const Tensor& tb = tp.val(b);
  require(tx.rank() == 3, errc::parameter, "channel_affine: x must be (B,C,T)");
  const std::size_t B = static_cast<std::size_t>(tx.shape[0]);
  const std::size_t C = static_cast<std::size_t>(tx.shape[1]);
  const std::size_t T = static_cast<std::size_t>(tx.shape[2]);
  require(tw.numel() == C && tb.numel() == C, errc::parameter,
          "channel_affine: weight/bias size mismatch");
  Tensor out(tx.shape);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t c = 0; c < C; ++c) {
      const double wv = tw[c], bv = tb[c];
      const double* xr = tx.data.data() + (bi * C + c) * T;
      double* yr = out.data.data() + (bi * C + c) * T;
      for (std::size_t i = 0; i < T; ++i) yr[i] = wv * xr[i] + bv;
    }
  return tp.make(std::move(out), {x, w, b}, [x, w, b, B, C, T](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    const Tensor& tx = t.val(x);
    const Tensor& tw = t.val(w);
    const bool need_x = t.needs_grad(x);
    Tensor* gx = need_x ? &t.grad(x) : nullptr;
    Tensor& gw = t.grad(w);
    Tensor& gb = t.grad(b);
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t c = 0; c < C; ++c) {
        const double* gr = g.data.data() + (bi * C + c) * T;
        const double* xr = tx.data.data() + (bi * C + c) * T;
        double acc_w = 0.0, acc_b = 0.0;
        for (std::size_t i = 0; i < T; ++i) {
          acc_w += gr[i] * xr[i];
          acc_b += gr[i];
        }
        gw[c] += acc_w;
        gb[c] += acc_b;
        if (need_x) {
          double* gxr = gx->data.data() + (bi * C + c) * T;
          const double wv = tw[c];
          for (std::size_t i = 0; i < T; ++i) gxr[i] += gr[i] * wv;
        }
      }
  });
}

// --------------------------------------------------------- pooling / resizing

Var avg_pool_spatial(Tape& tp, Var x, int oh, int ow) {
  const Tensor& tx = tp.val(x);
  require(tx.rank() == 5, errc::parameter, "avg_pool_spatial: x must be (B,C,H,W,T)");
  const int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3], T = tx.shape[4];
  require(oh >= 1 && ow >= 1 && oh <= H && ow <= W, errc::parameter,
          "avg_pool_spatial: bad output size");
  Tensor out({B, C, oh, ow, T});
  auto bounds = [](int i, int n_in, int n_out) {
    return std::pair<int, int>{i * n_in / n_out, (i + 1) * n_in / n_out};
  };
  const std::size_t bc = static_cast<std::size_t>(B) * C;
  const std::size_t tstep = static_cast<std::size_t>(T);
  for (std::size_t p = 0; p < bc; ++p) {
    const double* xp = tx.data.data() + p * static_cast<std::size_t>(H) * W * tstep;
    double* yp = out.data.data() + p * static_cast<std::size_t>(oh) * ow * tstep;
    for (int i = 0; i < oh; ++i) {
      auto [h0, h1] = bounds(i, H, oh);
      for (int j = 0; j < ow; ++j) {
        auto [w0, w1] = bounds(j, W, ow);
        double* yrow = yp + (static_cast<std::size_t>(i) * ow + j) * tstep;
        std::fill(yrow, yrow + tstep, 0.0);
        const double inv = 1.0 / static_cast<double>((h1 - h0) * (w1 - w0));
        for (int h = h0; h < h1; ++h)
          for (int w2 = w0; w2 < w1; ++w2) {
            const double* xrow = xp + (static_cast<std::size_t>(h) * W + w2) * tstep;
            for (std::size_t t0 = 0; t0 < tstep; ++t0) yrow[t0] += xrow[t0] * inv;
          }
      }
    }
  }
  return tp.make(std::move(out), {x}, [x, B, C, H, W, T, oh, ow](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(x)) return;
    Tensor& gx = t.grad(x);
    auto bounds = [](int i, int n_in, int n_out) {
      return std::pair<int, int>{i * n_in / n_out, (i + 1) * n_in / n_out};
    };
    const std::size_t bc = static_cast<std::size_t>(B) * C;
    const std::size_t tstep = static_cast<std::size_t>(T);
    for (std::size_t p = 0; p < bc; ++p) {
      double* gxp = gx.data.data() + p * static_cast<std::size_t>(H) * W * tstep;
      const double* gp = g.data.data() + p * static_cast<std::size_t>(oh) * ow * tstep;
      for (int i = 0; i < oh; ++i) {
        auto [h0, h1] = bounds(i, H, oh);
        for (int j = 0; j < ow; ++j) {
          auto [w0, w1] = bounds(j, W, ow);
          const double* grow = gp + (static_cast<std::size_t>(i) * ow + j) * tstep;
          const double inv = 1.0 / static_cast<double>((h1 - h0) * (w1 - w0));
          for (int h = h0; h < h1; ++h)
            for (int w2 = w0; w2 < w1; ++w2) {
              double* gxrow = gxp + (static_cast<std::size_t>(h) * W + w2) * tstep;
              for (std::size_t t0 = 0; t0 < tstep; ++t0) gxrow[t0] += grow[t0] * inv;
            }
        }
      }
    }
  });
}

Var upsample_lastdim(Tape& tp, Var x, int out_t) {
  const Tensor& tx = tp.val(x);
  require(tx.rank() >= 1, errc::parameter, "upsample_lastdim: bad input");
  const int T = tx.shape.back();
  require(out_t >= T, errc::parameter, "upsample_lastdim: output must not shrink");
  const std::size_t rows = tx.numel() / static_cast<std::size_t>(T);
  Shape out_shape = tx.shape;
  out_shape.back() = out_t;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xs = tx.data.data() + r * static_cast<std::size_t>(T);
    double* yd = out.data.data() + r * static_cast<std::size_t>(out_t);
    for (int t0 = 0; t0 < out_t; ++t0) yd[t0] = xs[std::min(T - 1, t0 * T / out_t)];
  }
  return tp.make(std::move(out), {x}, [x, rows, T, out_t](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(x)) return;
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double* gd = gx.data.data() + r * static_cast<std::size_t>(T);
      const double* gs = g.data.data() + r * static_cast<std::size_t>(out_t);
      for (int t0 = 0; t0 < out_t; ++t0) gd[std::min(T - 1, t0 * T / out_t)] += gs[t0];
    }
  });
}

// ------------------------------------------------------------ gating / losses

Var gated_blend(Tape& tp, Var a, Var b, Var beta) {
  const Tensor& ta = tp.val(a);
  const Tensor& tb = tp.val(b);
  check_same_shape(ta, tb, "gated_blend");
  require(tp.val(beta).numel() == 1, errc::parameter, "gated_blend: beta must be scalar");
  const double s = 1.0 / (1.0 + std::exp(-tp.val(beta)[0]));
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = s * ta[i] + (1.0 - s) * tb[i];
  return tp.make(std::move(out), {a, b, beta}, [a, b, beta, s](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    const Tensor& ta = t.val(a);
    const Tensor& tb = t.val(b);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += (1.0 - s) * g[i];
    }
    if (t.needs_grad(beta)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * (ta[i] - tb[i]);
      t.grad(beta)[0] += s * (1.0 - s) * acc;
    }
  });
}

Var pearson_corr(Tape& tp, Var f, const Tensor& g_target, int* degenerate_count) {
  const Tensor& tf = tp.val(f);
  require(tf.numel() == g_target.numel(), errc::parameter, "pearson_corr: length mismatch");
  require(tf.numel() >= 2, errc::parameter, "pearson_corr: need at least 2 samples");
  const std::size_t n = tf.numel();
  const double inv_n = 1.0 / static_cast<double>(n);
  double mf = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mf += tf[i];
    mg += g_target[i];
  }
  mf *= inv_n;
  mg *= inv_n;
  auto u = std::make_shared<std::vector<double>>(n);
  auto v = std::make_shared<std::vector<double>>(n);
  double sff = 0.0, sgg = 0.0, c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    (*u)[i] = tf[i] - mf;
    (*v)[i] = g_target[i] - mg;
    sff += (*u)[i] * (*u)[i];
    sgg += (*v)[i] * (*v)[i];
    c += (*u)[i] * (*v)[i];
  }
  constexpr double kEps = 1e-8;  // Pearson denominator epsilon
  if (sff <= 1e-24 || sgg <= 1e-24) {
    if (degenerate_count) ++*degenerate_count;
    return tp.constant(Tensor::scalar(0.0));
  }
  const double den = std::sqrt(sff * sgg) + kEps;
  const double r = c / den;
  return tp.make(Tensor::scalar(r), {f}, [f, u, v, sff, sgg, c, den, n](Tape& t, int id) {
    const double gr = t.grad(Var{id})[0];
    if (!t.needs_grad(f)) return;
    Tensor& gf = t.grad(f);
    const double ratio = std::sqrt(sgg / sff);
    const double den2 = den * den;
    for (std::size_t i = 0; i < n; ++i)
      gf[i] += gr * ((*v)[i] / den - c * (*u)[i] * ratio / den2);
  });
}

BandMatrix make_band_matrix(int n, double fs, double lo_hz, double hi_hz) {
  require(n >= 2 && fs > 0.0, errc::parameter, "band matrix: bad size or rate");
  BandMatrix bm;
  bm.n = n;
  bm.fs = fs;
  for (int k = 0; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f < lo_hz || f > hi_hz) continue;
    bm.freqs.push_back(f);
    for (int j = 0; j < n; ++j) {
      const double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(j) /
                         static_cast<double>(n);
      bm.cos_rows.push_back(std::cos(ang));
      bm.sin_rows.push_back(std::sin(ang));
    }
  }
  require(!bm.freqs.empty(), errc::parameter, "band matrix: no bins inside the band");
  return bm;
}

Var band_power(Tape& tp, Var x, const BandMatrix& bm) {
  const Tensor& tx = tp.val(x);
  require(tx.numel() == static_cast<std::size_t>(bm.n), errc::parameter,
          "band_power: length mismatch");
  const int bins = bm.bins();
  const std::size_t n = static_cast<std::size_t>(bm.n);
  auto re = std::make_shared<std::vector<double>>(bins);
  auto im = std::make_shared<std::vector<double>>(bins);
  Tensor out({bins});
  for (int k = 0; k < bins; ++k) {
    const double* cr = bm.cos_rows.data() + static_cast<std::size_t>(k) * n;
    const double* sr = bm.sin_rows.data() + static_cast<std::size_t>(k) * n;
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      a += cr[j] * tx[j];
      b += sr[j] * tx[j];
    }
    (*re)[k] = a;
    (*im)[k] = b;
    out[static_cast<std::size_t>(k)] = a * a + b * b;
  }
  auto cos_rows = std::make_shared<std::vector<double>>(bm.cos_rows);
  auto sin_rows = std::make_shared<std::vector<double>>(bm.sin_rows);
  return tp.make(std::move(out), {x}, [x, re, im, bins, n, cos_rows, sin_rows](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(x)) return;
    Tensor& gx = t.grad(x);
    for (int k = 0; k < bins; ++k) {
      const double gk = g[static_cast<std::size_t>(k)];
      if (gk == 0.0) continue;
      const double a = (*re)[k], b = (*im)[k];
      const double* cr = cos_rows->data() + static_cast<std::size_t>(k) * n;
      const double* sr = sin_rows->data() + static_cast<std::size_t>(k) * n;
      for (std::size_t j = 0; j < n; ++j) gx[j] += gk * 2.0 * (a * cr[j] + b * sr[j]);
    }
  });
}

Var normalize_sum(Tape& tp, Var p, int* degenerate_count) {
  const Tensor& tpv = tp.val(p);
  const std::size_t n = tpv.numel();
  double s = 0.0;
  for (double v : tpv.data) s += v;
  if (s <= 1e-30) {
    if (degenerate_count) ++*degenerate_count;
    // all-zero spectrum: uniform distribution, gradient blocked
    Tensor out(tpv.shape);
    std::fill(out.data.begin(), out.data.end(), 1.0 / static_cast<double>(n));
    return tp.make(std::move(out), {p}, [](Tape&, int) {});
  }
  Tensor out(tpv.shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = tpv[i] / s;
  return tp.make(std::move(out), {p}, [p, s, n](Tape& t, int id) {
    const Tensor& g = t.grad(Var{id});
    if (!t.needs_grad(p)) return;
    const Tensor& y = t.val(Var{id});
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
    Tensor& gp = t.grad(p);
    for (std::size_t i = 0; i < n; ++i) gp[i] += (g[i] - dot) / s;
  });
}

}  // namespace mvr::diff
