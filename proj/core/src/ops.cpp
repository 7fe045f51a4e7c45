#include "fer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "fer/autograd.hpp"
#include "fer/errors.hpp"
#include "fer/rng.hpp"
#include "gemm.hpp"

namespace fer {

using autograd::input_grad;
using autograd::make_result;
using autograd::Node;

namespace {

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t d = shape.size(); d > 1; --d) s[d - 2] = s[d - 1] * shape[d - 1];
  return s;
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t nd = std::max(a.size(), b.size());
  Broadcast p;
  p.out.resize(nd);
  p.sa.assign(nd, 0);
  p.sb.assign(nd, 0);
  const auto stra = strides_of(a);
  const auto strb = strides_of(b);
  for (std::size_t d = 0; d < nd; ++d) {
    const std::size_t oa = nd - a.size();
    const std::size_t ob = nd - b.size();
    const std::size_t ea = d >= oa ? a[d - oa] : 1;
    const std::size_t eb = d >= ob ? b[d - ob] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    p.out[d] = std::max(ea, eb);
    if (d >= oa && ea != 1) p.sa[d] = stra[d - oa];
    if (d >= ob && eb != 1) p.sb[d] = strb[d - ob];
  }
  return p;
}

// Calls f(out_offset, a_offset, b_offset) for every output element in order.
template <typename F>
void visit(const Broadcast& p, F&& f) {
  const std::size_t nd = p.out.size();
  const std::size_t n = shape_numel(p.out);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * p.out[d];
      ib -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const char* name = kind == BinaryKind::add ? "add" : kind == BinaryKind::sub ? "sub" : "mul";
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = kind == BinaryKind::add ? ad[i] + bd[i]
               : kind == BinaryKind::sub ? ad[i] - bd[i]
                                         : ad[i] * bd[i];
    }
    return make_result(name, a.shape(), std::move(out), {a, b}, [kind](Node& self) {
      const auto& g = self.grad;
      const auto& x = self.inputs[0]->data;
      const auto& y = self.inputs[1]->data;
      if (auto* ga = input_grad(self, 0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += kind == BinaryKind::mul ? g[i] * y[i] : g[i];
      }
      if (auto* gb = input_grad(self, 1)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*gb)[i] += kind == BinaryKind::add ? g[i] : kind == BinaryKind::sub ? -g[i] : g[i] * x[i];
        }
      }
    });
  }
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(plan.out));
  visit(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = kind == BinaryKind::add ? ad[ia] + bd[ib]
             : kind == BinaryKind::sub ? ad[ia] - bd[ib]
                                       : ad[ia] * bd[ib];
  });
  Shape shape = plan.out;
  return make_result(name, std::move(shape), std::move(out), {a, b},
                     [kind, plan = std::move(plan)](Node& self) {
                       const auto& g = self.grad;
                       const auto& x = self.inputs[0]->data;
                       const auto& y = self.inputs[1]->data;
                       auto* ga = input_grad(self, 0);
                       auto* gb = input_grad(self, 1);
                       visit(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         if (ga) (*ga)[ia] += kind == BinaryKind::mul ? g[o] * y[ib] : g[o];
                         if (gb) {
                           (*gb)[ib] += kind == BinaryKind::add   ? g[o]
                                        : kind == BinaryKind::sub ? -g[o]
                                                                  : g[o] * x[ia];
                         }
                       });
                     });
}

// In-offsets of every output element of a permutation, in output order.
std::vector<std::size_t> permute_offsets(const Shape& in, const std::vector<std::size_t>& order) {
  const auto in_strides = strides_of(in);
  const std::size_t nd = in.size();
  Shape out(nd);
  std::vector<std::size_t> st(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    out[i] = in[order[i]];
    st[i] = in_strides[order[i]];
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t off = 0;
  for (std::size_t o = 0; o < n; ++o) {
    offsets[o] = off;
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      off += st[d];
      if (idx[d] < out[d]) break;
      off -= st[d] * out[d];
      idx[d] = 0;
    }
  }
  return offsets;
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  return make_result(name, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& in = self.inputs[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      (*gx)[i] += self.grad[i] * deriv(in[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t n = bs[bs.size() - 1];
  if (bs[bs.size() - 2] != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(as) + " x " + shape_str(bs));
  }
  Shape abatch(as.begin(), as.end() - 2);
  Shape bbatch(bs.begin(), bs.end() - 2);
  if (abatch.empty()) abatch.push_back(1);
  if (bbatch.empty()) bbatch.push_back(1);
  const auto plan = plan_broadcast(abatch, bbatch, "matmul");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  visit(plan, [&](std::size_t, std::size_t ia, std::size_t ib) { pairs.emplace_back(ia, ib); });

  Shape out_shape;
  if (as.size() > 2 || bs.size() > 2) out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(pairs.size() * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t o = 0; o < pairs.size(); ++o) {
    detail::gemm_nn(m, n, k, ad + pairs[o].first * m * k, bd + pairs[o].second * k * n, out.data() + o * m * n);
  }
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [pairs = std::move(pairs), m, n, k](Node& self) {
                       const double* g = self.grad.data();
                       const double* ad = self.inputs[0]->data.data();
                       const double* bd = self.inputs[1]->data.data();
                       auto* ga = input_grad(self, 0);
                       auto* gb = input_grad(self, 1);
                       for (std::size_t o = 0; o < pairs.size(); ++o) {
                         const double* go = g + o * m * n;
                         if (ga) detail::gemm_nt(m, k, n, go, bd + pairs[o].second * k * n, ga->data() + pairs[o].first * m * k);
                         if (gb) detail::gemm_tn(k, n, m, ad + pairs[o].first * m * k, go, gb->data() + pairs[o].second * k * n);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 2 || xs.back() != ws[0]) {
    throw DimensionError("linear: input " + shape_str(xs) + " does not match weight " + shape_str(ws));
  }
  const std::size_t in = ws[0];
  const std::size_t out_dim = ws[1];
  if (bias.defined() && (bias.dim() != 1 || bias.shape()[0] != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(ws));
  }
  const std::size_t rows = x.numel() / in;
  std::vector<double> out(rows * out_dim, 0.0);
  detail::gemm_nn(rows, out_dim, in, x.data().data(), weight.data().data(), out.data());
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bd[j];
    }
  }
  Shape shape = xs;
  shape.back() = out_dim;
  std::vector<Tensor> inputs{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return make_result("linear", std::move(shape), std::move(out), inputs,
                     [rows, in, out_dim, has_bias](Node& self) {
                       const double* g = self.grad.data();
                       if (auto* gx = input_grad(self, 0)) {
                         detail::gemm_nt(rows, in, out_dim, g, self.inputs[1]->data.data(), gx->data());
                       }
                       if (auto* gw = input_grad(self, 1)) {
                         detail::gemm_tn(in, out_dim, rows, self.inputs[0]->data.data(), g, gw->data());
                       }
                       if (has_bias) {
                         if (auto* gb = input_grad(self, 2)) {
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += g[r * out_dim + j];
                           }
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x, int axis) {
  const auto& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "softmax");
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t n = s[ax];
  const std::size_t inner = prod(s, ax + 1, s.size());
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = xd[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result("softmax", s, std::move(out), {x}, [outer, n, inner](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t q = base + j * inner;
          (*gx)[q] += y[q] * (g[q] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto& s = x.shape();
  const std::size_t c = s.back();
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match channel extent of " + shape_str(s));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / c;
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<double> xhat(xd.size());
  std::vector<double> rstd(rows);
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * rs;
      xhat[r * c + j] = h;
      out[r * c + j] = h * gd[j] + bd[j];
    }
  }
  return make_result("layer_norm", s, std::move(out), {x, gain, bias},
                     [rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       const auto& g = self.grad;
                       const auto& gd = self.inputs[1]->data;
                       auto* gx = input_grad(self, 0);
                       auto* gg = input_grad(self, 1);
                       auto* gb = input_grad(self, 2);
                       const double inv_c = 1.0 / static_cast<double>(c);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * c;
                         if (gx) {
                           double m1 = 0.0;
                           double m2 = 0.0;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = g[base + j] * gd[j];
                             m1 += dh;
                             m2 += dh * xhat[base + j];
                           }
                           m1 *= inv_c;
                           m2 *= inv_c;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = g[base + j] * gd[j];
                             (*gx)[base + j] += rstd[r] * (dh - m1 - xhat[base + j] * m2);
                           }
                         }
                         for (std::size_t j = 0; j < c; ++j) {
                           if (gg) (*gg)[j] += g[base + j] * xhat[base + j];
                           if (gb) (*gb)[j] += g[base + j];
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * std::erfc(-v * std::numbers::sqrt2 / 2.0); },
      [](double v, double) {
        const double cdf = 0.5 * std::erfc(-v * std::numbers::sqrt2 / 2.0);
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const auto& s = logits.shape();
  if (s.size() != 2) throw DimensionError("cross_entropy: logits must be [B, K], got " + shape_str(s));
  const std::size_t batch = s[0];
  const std::size_t k = s[1];
  if (targets.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(batch));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw LabelError("cross_entropy: target " + std::to_string(targets[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto ld = logits.data();
  std::vector<double> probs(ld.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = ld.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      total += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= total;
    loss += (mx + std::log(total)) - row[targets[i]];
  }
  loss /= static_cast<double>(batch);
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result("cross_entropy", Shape{1}, {loss}, {logits},
                     [batch, k, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                       auto* gl = input_grad(self, 0);
                       if (!gl) return;
                       const double g = self.grad[0] / static_cast<double>(batch);
                       for (std::size_t i = 0; i < batch; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const double onehot = static_cast<int>(j) == tgt[i] ? 1.0 : 0.0;
                           (*gl)[i * k + j] += g * (probs[i * k + j] - onehot);
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  for (auto e : shape) {
    if (e == 0) throw DimensionError("reshape: zero extent in " + shape_str(shape));
  }
  const auto xd = x.data();
  return make_result("reshape", std::move(shape), std::vector<double>(xd.begin(), xd.end()), {x}, [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  if (order.size() != s.size()) {
    throw DimensionError("permute: order of length " + std::to_string(order.size()) + " for shape " + shape_str(s));
  }
  std::vector<bool> used(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= s.size() || used[order[i]]) throw DimensionError("permute: order is not a permutation");
    used[order[i]] = true;
    out_shape[i] = s[order[i]];
  }
  const auto offsets = permute_offsets(s, order);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xd[offsets[o]];
  return make_result("permute", std::move(out_shape), std::move(out), {x}, [in_shape = s, order](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    const auto offsets = permute_offsets(in_shape, order);
    for (std::size_t o = 0; o < offsets.size(); ++o) (*gx)[offsets[o]] += self.grad[o];
  });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  const auto a0 = norm_axis(axis0, x.dim(), "transpose");
  const auto a1 = norm_axis(axis1, x.dim(), "transpose");
  std::vector<std::size_t> order(x.dim());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[a0], order[a1]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size(), "concat");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == ax || s[d] == s0[d];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    extents.push_back(s[ax]);
    total += s[ax];
  }
  const std::size_t outer = prod(s0, 0, ax);
  const std::size_t inner = prod(s0, ax + 1, s0.size());
  Shape out_shape = s0;
  out_shape[ax] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pd = parts[p].data();
    const std::size_t block = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.data() + o * block, block, out.data() + o * total * inner + col * inner);
    }
    col += extents[p];
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [outer, inner, total, extents = std::move(extents)](Node& self) {
                       std::size_t col = 0;
                       for (std::size_t p = 0; p < extents.size(); ++p) {
                         const std::size_t block = extents[p] * inner;
                         if (auto* gp = input_grad(self, p)) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = self.grad.data() + o * total * inner + col * inner;
                             double* dst = gp->data() + o * block;
                             for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                           }
                         }
                         col += extents[p];
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const auto& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "slice");
  if (begin >= end || end > s[ax]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for extent " + std::to_string(s[ax]) + " of " + shape_str(s));
  }
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t inner = prod(s, ax + 1, s.size());
  const std::size_t n = s[ax];
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[ax] = len;
  const auto xd = x.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xd.data() + (o * n + begin) * inner, len * inner, out.data() + o * len * inner);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x}, [outer, inner, n, len, begin](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = self.grad.data() + o * len * inner;
      double* dst = gx->data() + (o * n + begin) * inner;
      for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
}

namespace {
Tensor reduce_axis(const Tensor& x, int axis, bool average) {
  const auto& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size(), average ? "mean" : "sum");
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t n = s[ax];
  const std::size_t inner = prod(s, ax + 1, s.size());
  const double factor = average ? 1.0 / static_cast<double>(n) : 1.0;
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d != ax) out_shape.push_back(s[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const auto xd = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* src = xd.data() + (o * n + j) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (average) {
    for (auto& v : out) v *= factor;
  }
  return make_result(average ? "mean" : "sum", std::move(out_shape), std::move(out), {x},
                     [outer, n, inner, factor](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < n; ++j) {
                           double* dst = gx->data() + (o * n + j) * inner;
                           const double* src = self.grad.data() + o * inner;
                           for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * factor;
                         }
                       }
                     });
}
}  // namespace

Tensor sum(const Tensor& x, int axis) { return reduce_axis(x, axis, false); }
Tensor mean(const Tensor& x, int axis) { return reduce_axis(x, axis, true); }
Tensor sum_all(const Tensor& x) { return reduce_axis(reshape(x, Shape{x.numel()}), 0, false); }
Tensor mean_all(const Tensor& x) { return reduce_axis(reshape(x, Shape{x.numel()}), 0, true); }

Tensor cyclic_roll(const Tensor& x, const std::vector<int>& shifts, const std::vector<int>& axes) {
  if (shifts.size() != axes.size()) throw DimensionError("cyclic_roll: shifts and axes differ in length");
  const auto& s = x.shape();
  const std::size_t nd = s.size();
  // dest[d][c]: output coordinate of input coordinate c along axis d.
  std::vector<std::vector<std::size_t>> dest(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    dest[d].resize(s[d]);
    std::iota(dest[d].begin(), dest[d].end(), 0);
  }
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const std::size_t ax = norm_axis(axes[i], nd, "cyclic_roll");
    const long n = static_cast<long>(s[ax]);
    const long sh = ((shifts[i] % n) + n) % n;
    for (long c = 0; c < n; ++c) {
      dest[ax][static_cast<std::size_t>(c)] = static_cast<std::size_t>((static_cast<long>(dest[ax][static_cast<std::size_t>(c)]) + sh) % n);
    }
  }
  const auto strides = strides_of(s);
  const std::size_t total = x.numel();
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t in = 0; in < total; ++in) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < nd; ++d) off += dest[d][idx[d]] * strides[d];
    map[in] = off;
    for (std::size_t d = nd; d-- > 0;) {
      if (++idx[d] < s[d]) break;
      idx[d] = 0;
    }
  }
  const auto xd = x.data();
  std::vector<double> out(total);
  for (std::size_t in = 0; in < total; ++in) out[map[in]] = xd[in];
  return make_result("cyclic_roll", s, std::move(out), {x}, [map = std::move(map)](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t in = 0; in < map.size(); ++in) (*gx)[in] += self.grad[map[in]];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  const auto& s = table.shape();
  if (s.size() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(s));
  const std::size_t rows = s[0];
  const std::size_t cols = s[1];
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (auto i : idx) {
    if (i >= rows) throw DimensionError("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(rows));
  }
  const auto td = table.data();
  std::vector<double> out(idx.size() * cols);
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(td.data() + idx[r] * cols, cols, out.data() + r * cols);
  Shape out_shape{idx.size(), cols};
  return make_result("gather_rows", std::move(out_shape), std::move(out), {table},
                     [cols, idx = std::move(idx)](Node& self) {
                       auto* gt = input_grad(self, 0);
                       if (!gt) return;
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t j = 0; j < cols; ++j) (*gt)[idx[r] * cols + j] += self.grad[r * cols + j];
                       }
                     });
}

Tensor dropout(const Tensor& x, double p, CounterRng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (p == 0.0) return x;
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

std::vector<int> argmax_rows(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw DimensionError("argmax_rows: expected [B, K], got " + shape_str(s));
  const auto d = x.data();
  std::vector<int> out(s[0]);
  for (std::size_t i = 0; i < s[0]; ++i) {
    const double* row = d.data() + i * s[1];
    out[i] = static_cast<int>(std::max_element(row, row + s[1]) - row);
  }
  return out;
}

}  // namespace fer
