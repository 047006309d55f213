#include "hyneter/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hyneter::ops {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Range of output positions o with 0 <= o*stride + k - pad < extent.
struct Span {
  std::size_t lo;
  std::size_t hi;  // exclusive
};

Span valid_outputs(std::size_t extent, std::size_t out_extent, std::size_t k, std::size_t stride,
                   std::size_t pad) {
  // o*stride >= pad - k
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  // o*stride <= extent - 1 + pad - k
  std::size_t hi = 0;
  if (extent + pad > k) hi = std::min(out_extent, (extent - 1 + pad - k) / stride + 1);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

}  // namespace

Var conv2d(const Var& input, const Var& weights, const std::optional<Var>& bias, std::size_t stride,
           std::size_t padding) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  require(xs.size() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(xs));
  require(ws.size() == 4 && ws[2] == ws[3], "conv2d: weights must be [Cout,Cin,k,k], got " + shape_str(ws));
  require(ws[1] == xs[1], "conv2d: weights " + shape_str(ws) + " expect " + std::to_string(ws[1]) +
                              " input channels but input " + shape_str(xs) + " has " + std::to_string(xs[1]));
  require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t n_batch = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const std::size_t cout = ws[0], k = ws[2];
  require(h + 2 * padding >= k && w + 2 * padding >= k,
          "conv2d: kernel " + std::to_string(k) + " larger than padded input " + shape_str(xs));
  if (bias) {
    require(bias->shape() == Shape{cout}, "conv2d: bias " + shape_str(bias->shape()) + " vs weights " + shape_str(ws));
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;

  // Patch matrix col[r][n*P + p] with r = (ci, ky, kx); zero where the tap
  // falls in the padding. Every reduction below runs over r or co ascending.
  const std::size_t taps = cin * k * k;
  const std::size_t plane = ho * wo;
  const std::size_t cols_n = n_batch * plane;
  auto col = std::make_shared<std::vector<double>>(taps * cols_n, 0.0);
  {
    const double* x = input.value().data().data();
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span rs = valid_outputs(h, ho, ky, stride, padding);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Span cs = valid_outputs(w, wo, kx, stride, padding);
          double* crow = col->data() + ((ci * k + ky) * k + kx) * cols_n;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const double* src = x + (n * cin + ci) * h * w;
            for (std::size_t oy = rs.lo; oy < rs.hi; ++oy) {
              const double* srow = src + (oy * stride + ky - padding) * w;
              double* dst = crow + n * plane + oy * wo;
              for (std::size_t ox = cs.lo; ox < cs.hi; ++ox) dst[ox] = srow[ox * stride + kx - padding];
            }
          }
        }
      }
    }
  }

  Tensor out(Shape{n_batch, cout, ho, wo});
  {
    const double* wt = weights.value().data().data();
    std::vector<double> acc(cols_n);
    double* y = out.data().data();
    for (std::size_t co = 0; co < cout; ++co) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t r = 0; r < taps; ++r) {
        const double wv = wt[co * taps + r];
        const double* crow = col->data() + r * cols_n;
        for (std::size_t j = 0; j < cols_n; ++j) acc[j] += wv * crow[j];
      }
      const double b = bias ? bias->value()[co] : 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        double* dst = y + (n * cout + co) * plane;
        const double* a = acc.data() + n * plane;
        if (bias) {
          for (std::size_t p = 0; p < plane; ++p) dst[p] = a[p] + b;
        } else {
          std::copy(a, a + plane, dst);
        }
      }
    }
  }

  std::vector<Var> inputs{input, weights};
  if (bias) inputs.push_back(*bias);
  const NodeId xid = input.id(), wid = weights.id();
  const std::optional<NodeId> bid = bias ? std::optional<NodeId>(bias->id()) : std::nullopt;
  return input.tape().record(
      "conv2d", inputs, std::move(out), [=](Tape& tape, NodeId self) {
        const auto g = tape.grad(self);
        // Gradient rearranged to [Cout, N*P] to match the patch matrix.
        std::vector<double> gt(cout * cols_n);
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t co = 0; co < cout; ++co) {
            std::copy_n(g.data() + (n * cout + co) * plane, plane, gt.data() + co * cols_n + n * plane);
          }
        }
        const double* wt = tape.value(wid).data().data();
        if (tape.requires_grad(xid)) {
          std::vector<double> dcol(taps * cols_n, 0.0);
          for (std::size_t r = 0; r < taps; ++r) {
            double* drow = dcol.data() + r * cols_n;
            for (std::size_t co = 0; co < cout; ++co) {
              const double wv = wt[co * taps + r];
              const double* grow = gt.data() + co * cols_n;
              for (std::size_t j = 0; j < cols_n; ++j) drow[j] += wv * grow[j];
            }
          }
          double* dx = tape.grad_buffer(xid).data();
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const Span rs = valid_outputs(h, ho, ky, stride, padding);
              for (std::size_t kx = 0; kx < k; ++kx) {
                const Span cs = valid_outputs(w, wo, kx, stride, padding);
                const double* crow = dcol.data() + ((ci * k + ky) * k + kx) * cols_n;
                for (std::size_t n = 0; n < n_batch; ++n) {
                  double* dst = dx + (n * cin + ci) * h * w;
                  for (std::size_t oy = rs.lo; oy < rs.hi; ++oy) {
                    double* drow = dst + (oy * stride + ky - padding) * w;
                    const double* src = crow + n * plane + oy * wo;
                    for (std::size_t ox = cs.lo; ox < cs.hi; ++ox) drow[ox * stride + kx - padding] += src[ox];
                  }
                }
              }
            }
          }
        }
        if (tape.requires_grad(wid)) {
          // Transposed patch matrix keeps the inner loop contiguous over taps.
          std::vector<double> colt(cols_n * taps);
          for (std::size_t r = 0; r < taps; ++r) {
            const double* crow = col->data() + r * cols_n;
            for (std::size_t j = 0; j < cols_n; ++j) colt[j * taps + r] = crow[j];
          }
          double* dw = tape.grad_buffer(wid).data();
          for (std::size_t co = 0; co < cout; ++co) {
            const double* grow = gt.data() + co * cols_n;
            double* dwr = dw + co * taps;
            for (std::size_t j = 0; j < cols_n; ++j) {
              const double gv = grow[j];
              const double* ct = colt.data() + j * taps;
              for (std::size_t r = 0; r < taps; ++r) dwr[r] += gv * ct[r];
            }
          }
        }
        if (bid && tape.requires_grad(*bid)) {
          double* db = tape.grad_buffer(*bid).data();
          for (std::size_t co = 0; co < cout; ++co) {
            const double* grow = gt.data() + co * cols_n;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols_n; ++j) acc += grow[j];
            db[co] += acc;
          }
        }
      });
}

Var linear(const Var& input, const Var& weights, const std::optional<Var>& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[0],
          "linear: input " + shape_str(xs) + " incompatible with weights " + shape_str(ws));
  const std::size_t rows = xs[0], din = xs[1], dout = ws[1];
  if (bias) {
    require(bias->shape() == Shape{dout}, "linear: bias " + shape_str(bias->shape()) + " vs weights " + shape_str(ws));
  }
  Tensor out(Shape{rows, dout});
  const double* x = input.value().data().data();
  const double* wt = weights.value().data().data();
  double* y = out.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    double* yr = y + i * dout;
    for (std::size_t kk = 0; kk < din; ++kk) {
      const double xv = x[i * din + kk];
      const double* wr = wt + kk * dout;
      for (std::size_t j = 0; j < dout; ++j) yr[j] += xv * wr[j];
    }
    if (bias) {
      const double* b = bias->value().data().data();
      for (std::size_t j = 0; j < dout; ++j) yr[j] += b[j];
    }
  }
  std::vector<Var> inputs{input, weights};
  if (bias) inputs.push_back(*bias);
  const NodeId xid = input.id(), wid = weights.id();
  const std::optional<NodeId> bid = bias ? std::optional<NodeId>(bias->id()) : std::nullopt;
  return input.tape().record("linear", inputs, std::move(out), [=](Tape& tape, NodeId self) {
    const double* g = tape.grad(self).data();
    const double* x = tape.value(xid).data().data();
    const double* wt = tape.value(wid).data().data();
    if (tape.requires_grad(xid)) {
      std::vector<double> wtt(dout * din);
      for (std::size_t kk = 0; kk < din; ++kk) {
        for (std::size_t j = 0; j < dout; ++j) wtt[j * din + kk] = wt[kk * dout + j];
      }
      double* dx = tape.grad_buffer(xid).data();
      for (std::size_t i = 0; i < rows; ++i) {
        double* dxr = dx + i * din;
        for (std::size_t j = 0; j < dout; ++j) {
          const double gv = g[i * dout + j];
          const double* wr = wtt.data() + j * din;
          for (std::size_t kk = 0; kk < din; ++kk) dxr[kk] += gv * wr[kk];
        }
      }
    }
    if (tape.requires_grad(wid)) {
      double* dw = tape.grad_buffer(wid).data();
      for (std::size_t i = 0; i < rows; ++i) {
        const double* gr = g + i * dout;
        for (std::size_t kk = 0; kk < din; ++kk) {
          const double xv = x[i * din + kk];
          double* dwr = dw + kk * dout;
          for (std::size_t j = 0; j < dout; ++j) dwr[j] += xv * gr[j];
        }
      }
    }
    if (bid && tape.requires_grad(*bid)) {
      double* db = tape.grad_buffer(*bid).data();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < dout; ++j) db[j] += g[i * dout + j];
      }
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1],
          "bmm: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  const std::size_t batch = as[0], m = as[1], kdim = as[2], n = bs[2];
  Tensor out(Shape{batch, m, n});
  const double* ap = a.value().data().data();
  const double* bp = b.value().data().data();
  double* y = out.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < m; ++i) {
      double* yr = y + (s * m + i) * n;
      for (std::size_t kk = 0; kk < kdim; ++kk) {
        const double av = ap[(s * m + i) * kdim + kk];
        const double* br = bp + (s * kdim + kk) * n;
        for (std::size_t j = 0; j < n; ++j) yr[j] += av * br[j];
      }
    }
  }
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record("bmm", {a, b}, std::move(out), [=](Tape& tape, NodeId self) {
    const double* g = tape.grad(self).data();
    const double* ap = tape.value(aid).data().data();
    const double* bp = tape.value(bid).data().data();
    if (tape.requires_grad(aid)) {
      double* da = tape.grad_buffer(aid).data();
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* gr = g + (s * m + i) * n;
          for (std::size_t kk = 0; kk < kdim; ++kk) {
            const double* br = bp + (s * kdim + kk) * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
            da[(s * m + i) * kdim + kk] += acc;
          }
        }
      }
    }
    if (tape.requires_grad(bid)) {
      double* db = tape.grad_buffer(bid).data();
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* gr = g + (s * m + i) * n;
          for (std::size_t kk = 0; kk < kdim; ++kk) {
            const double av = ap[(s * m + i) * kdim + kk];
            double* dbr = db + (s * kdim + kk) * n;
            for (std::size_t j = 0; j < n; ++j) dbr[j] += av * gr[j];
          }
        }
      }
    }
  });
}

Var scaled_scores(const Var& queries, const Var& keys, std::optional<double> delta) {
  const Shape& qs = queries.shape();
  const Shape& ks = keys.shape();
  require(qs.size() == 3 && qs == ks, "scaled_scores: queries " + shape_str(qs) + " vs keys " + shape_str(ks));
  if (delta) require(*delta > 0.0, "scaled_scores: delta must be positive");
  const std::size_t batch = qs[0], len = qs[1], dh = qs[2];
  const double root = std::sqrt(static_cast<double>(dh));
  Tensor out(Shape{batch, len, len});
  const double* q = queries.value().data().data();
  const double* kp = keys.value().data().data();
  double* y = out.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < len; ++i) {
      const double* qi = q + (s * len + i) * dh;
      for (std::size_t l = 0; l < len; ++l) {
        const double* kl = kp + (s * len + l) * dh;
        double dot = 0.0;
        for (std::size_t e = 0; e < dh; ++e) dot += qi[e] * kl[e];
        double score = dot / root;
        if (delta && i != l) score *= *delta;
        y[(s * len + i) * len + l] = score;
      }
    }
  }
  const NodeId qid = queries.id(), kid = keys.id();
  return queries.tape().record("scaled_scores", {queries, keys}, std::move(out), [=](Tape& tape, NodeId self) {
    const double* g = tape.grad(self).data();
    const double* q = tape.value(qid).data().data();
    const double* kp = tape.value(kid).data().data();
    const bool want_q = tape.requires_grad(qid), want_k = tape.requires_grad(kid);
    double* dq = want_q ? tape.grad_buffer(qid).data() : nullptr;
    double* dk = want_k ? tape.grad_buffer(kid).data() : nullptr;
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t l = 0; l < len; ++l) {
          double gs = g[(s * len + i) * len + l];
          if (delta && i != l) gs *= *delta;
          gs /= root;
          const double* qi = q + (s * len + i) * dh;
          const double* kl = kp + (s * len + l) * dh;
          if (dq) {
            double* dqi = dq + (s * len + i) * dh;
            for (std::size_t e = 0; e < dh; ++e) dqi[e] += gs * kl[e];
          }
          if (dk) {
            double* dkl = dk + (s * len + l) * dh;
            for (std::size_t e = 0; e < dh; ++e) dkl[e] += gs * qi[e];
          }
        }
      }
    }
  });
}

Var softmax_rows(const Var& scores) {
  const Tensor& in = scores.value();
  require(in.rank() >= 1, "softmax_rows: needs at least one axis");
  const std::size_t len = in.shape().back();
  const std::size_t rows = in.numel() / len;
  Tensor out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data().data() + r * len;
    double* y = out.data().data() + r * len;
    double top = x[0];
    for (std::size_t j = 1; j < len; ++j) top = std::max(top, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      y[j] = std::exp(x[j] - top);
      total += y[j];
    }
    for (std::size_t j = 0; j < len; ++j) y[j] /= total;
  }
  const NodeId xid = scores.id();
  return scores.tape().record("softmax_rows", {scores}, std::move(out), [=](Tape& tape, NodeId self) {
    const double* g = tape.grad(self).data();
    const double* y = tape.value(self).data().data();
    double* dx = tape.grad_buffer(xid).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g + r * len;
      const double* yr = y + r * len;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < len; ++j) dx[r * len + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps) {
  const Tensor& in = x.value();
  require(in.rank() >= 1, "layer_norm: needs at least one axis");
  const std::size_t channels = in.shape().back();
  require(gain.shape() == Shape{channels} && shift.shape() == Shape{channels},
          "layer_norm: gain/shift must be [" + std::to_string(channels) + "], got " + shape_str(gain.shape()) +
              " and " + shape_str(shift.shape()));
  require(eps > 0.0, "layer_norm: eps must be positive");
  const std::size_t rows = in.numel() / channels;
  const double count = static_cast<double>(channels);
  Tensor out(in.shape());
  auto normalized = std::make_shared<std::vector<double>>(in.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* gp = gain.value().data().data();
  const double* sp = shift.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data().data() + r * channels;
    double mean = 0.0;
    for (std::size_t c = 0; c < channels; ++c) mean += xr[c];
    mean /= count;
    double var = 0.0;
    for (std::size_t c = 0; c < channels; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= count;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* nr = normalized->data() + r * channels;
    double* yr = out.data().data() + r * channels;
    for (std::size_t c = 0; c < channels; ++c) {
      nr[c] = (xr[c] - mean) * is;
      yr[c] = nr[c] * gp[c] + sp[c];
    }
  }
  const NodeId xid = x.id(), gid = gain.id(), sid = shift.id();
  return x.tape().record("layer_norm", {x, gain, shift}, std::move(out), [=](Tape& tape, NodeId self) {
    const double* g = tape.grad(self).data();
    const double* gp = tape.value(gid).data().data();
    if (tape.requires_grad(xid)) {
      double* dx = tape.grad_buffer(xid).data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g + r * channels;
        const double* nr = normalized->data() + r * channels;
        double mean_d = 0.0, mean_dn = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const double d = gr[c] * gp[c];
          mean_d += d;
          mean_dn += d * nr[c];
        }
        mean_d /= count;
        mean_dn /= count;
        for (std::size_t c = 0; c < channels; ++c) {
          const double d = gr[c] * gp[c];
          dx[r * channels + c] += (*inv_std)[r] * (d - mean_d - nr[c] * mean_dn);
        }
      }
    }
    if (tape.requires_grad(gid)) {
      double* dg = tape.grad_buffer(gid).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < channels; ++c) dg[c] += g[r * channels + c] * (*normalized)[r * channels + c];
      }
    }
    if (tape.requires_grad(sid)) {
      double* ds = tape.grad_buffer(sid).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < channels; ++c) ds[c] += g[r * channels + c];
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record("add", {a, b}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    for (NodeId id : {aid, bid}) {
      if (!tape.requires_grad(id)) continue;
      auto d = tape.grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record("mul", {a, b}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    const auto av = tape.value(aid).data();
    const auto bv = tape.value(bid).data();
    if (tape.requires_grad(aid)) {
      auto d = tape.grad_buffer(aid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(bid)) {
      auto d = tape.grad_buffer(bid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out(x.shape());
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * factor;
  const NodeId xid = x.id();
  return x.tape().record("scale", {x}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    auto d = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
  });
}

Var tanh(const Var& x) {
  Tensor out(x.shape());
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(xv[i]);
  const NodeId xid = x.id();
  return x.tape().record("tanh", {x}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    const auto y = tape.value(self).data();
    auto d = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var gelu(const Var& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Tensor out(x.shape());
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  const NodeId xid = x.id();
  return x.tape().record("gelu", {x}, std::move(out), [=](Tape& tape, NodeId self) {
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const auto g = tape.grad(self);
    const auto xv = tape.value(xid).data();
    auto d = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      d[i] += g[i] * (cdf + xv[i] * pdf);
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const Shape& xs = x.shape();
  const Shape& bs = bias.shape();
  require(bs.size() <= xs.size() && std::equal(bs.begin(), bs.end(), xs.end() - static_cast<long>(bs.size())),
          "add_bias: bias " + shape_str(bs) + " does not match trailing dims of " + shape_str(xs));
  const std::size_t inner = bias.value().numel();
  const std::size_t outer = x.value().numel() / inner;
  Tensor out(xs);
  const double* xv = x.value().data().data();
  const double* bv = bias.value().data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = xv[o * inner + i] + bv[i];
  }
  const NodeId xid = x.id(), bid = bias.id();
  return x.tape().record("add_bias", {x, bias}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    if (tape.requires_grad(xid)) {
      auto d = tape.grad_buffer(xid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (tape.requires_grad(bid)) {
      auto d = tape.grad_buffer(bid);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) d[i] += g[o * inner + i];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const NodeId xid = x.id();
  return x.tape().record("reshape", {x}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    auto d = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

Var gather(const Var& x, IndexMap index, Shape shape) {
  require(index != nullptr, "gather: null index map");
  require(shape_numel(shape) == index->size(),
          "gather: index map of size " + std::to_string(index->size()) + " does not fill " + shape_str(shape));
  const auto xv = x.value().data();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < index->size(); ++i) {
    const std::size_t src = (*index)[i];
    require(src < xv.size(), "gather: index out of range");
    out[i] = xv[src];
  }
  const NodeId xid = x.id();
  return x.tape().record("gather", {x}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    auto d = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < index->size(); ++i) d[(*index)[i]] += g[i];
  });
}

Var mean_tokens(const Var& x) {
  const Shape& xs = x.shape();
  require(xs.size() == 3, "mean_tokens: expected [N,L,C], got " + shape_str(xs));
  const std::size_t n_batch = xs[0], len = xs[1], channels = xs[2];
  Tensor out(Shape{n_batch, channels});
  const double* xv = x.value().data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t c = 0; c < channels; ++c) out[n * channels + c] += xv[(n * len + l) * channels + c];
    }
    for (std::size_t c = 0; c < channels; ++c) out[n * channels + c] /= static_cast<double>(len);
  }
  const NodeId xid = x.id();
  return x.tape().record("mean_tokens", {x}, std::move(out), [=](Tape& tape, NodeId self) {
    const auto g = tape.grad(self);
    auto d = tape.grad_buffer(xid);
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t c = 0; c < channels; ++c) d[(n * len + l) * channels + c] += g[n * channels + c] * inv;
      }
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const NodeId xid = x.id();
  return x.tape().record("sum", {x}, Tensor(Shape{1}, total), [=](Tape& tape, NodeId self) {
    const double g = tape.grad(self)[0];
    auto d = tape.grad_buffer(xid);
    for (double& v : d) v += g;
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.shape() == x.shape(),
          "weighted_sum: weights " + shape_str(weights.shape()) + " vs input " + shape_str(x.shape()));
  double total = 0.0;
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i] * weights[i];
  const NodeId xid = x.id();
  return x.tape().record("weighted_sum", {x}, Tensor(Shape{1}, total), [=](Tape& tape, NodeId self) {
    const double g = tape.grad(self)[0];
    auto d = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * weights[i];
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Shape& ls = logits.shape();
  require(ls.size() == 2 && ls[0] == labels.size(),
          "cross_entropy: logits " + shape_str(ls) + " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t n_batch = ls[0], classes = ls[1];
  auto probs = std::make_shared<std::vector<double>>(n_batch * classes);
  std::vector<int> targets(labels.begin(), labels.end());
  const double* z = logits.value().data().data();
  double total = 0.0;
  for (std::size_t n = 0; n < n_batch; ++n) {
    require(targets[n] >= 0 && static_cast<std::size_t>(targets[n]) < classes,
            "cross_entropy: label " + std::to_string(targets[n]) + " out of range for " + std::to_string(classes) +
                " classes");
    const double* zr = z + n * classes;
    double top = zr[0];
    for (std::size_t c = 1; c < classes; ++c) top = std::max(top, zr[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(zr[c] - top);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[n * classes + c] = std::exp(zr[c] - top) / denom;
    total += std::log(denom) + top - zr[targets[n]];
  }
  const double mean = total / static_cast<double>(n_batch);
  const NodeId zid = logits.id();
  return logits.tape().record("cross_entropy", {logits}, Tensor(Shape{1}, mean), [=](Tape& tape, NodeId self) {
    const double g = tape.grad(self)[0] / static_cast<double>(n_batch);
    auto d = tape.grad_buffer(zid);
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot = static_cast<std::size_t>(targets[n]) == c ? 1.0 : 0.0;
        d[n * classes + c] += g * ((*probs)[n * classes + c] - onehot);
      }
    }
  });
}

}  // namespace hyneter::ops
