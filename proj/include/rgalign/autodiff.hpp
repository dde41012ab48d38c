// Copyright (c) 2026 rgalign contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over Dense tensors. A Tape records each
// operation eagerly (forward values are computed at construction); backward()
// replays the recorded closures in reverse. Inference paths simply never call
// backward. Everything is double precision so finite-difference checks are
// meaningful.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rgalign/rng.hpp"
#include "rgalign/tensor.hpp"

namespace rgalign::diff {

// ---------------------------------------------------------------------------
// Plain math kernels. Tape ops call these for their forward pass, so values
// computed with and without a tape are bit-identical.
// ---------------------------------------------------------------------------
namespace kernels {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty logits");
  double m = x[0];
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
    if (v > m) m = v;
  }
  std::vector<double> out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

inline std::vector<double> log_softmax(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("log_softmax: empty logits");
  double m = x[0];
  for (double v : x)
    if (v > m) m = v;
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  const double lz = std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - m - lz;
  return out;
}

inline double kl_divergence(const std::vector<double>& p,
                            const std::vector<double>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl_divergence: length mismatch");
  if (p.empty()) throw std::invalid_argument("kl_divergence: empty input");
  double sp = 0.0, sq = 0.0;
  for (double v : p) sp += v;
  for (double v : q) sq += v;
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
    throw std::invalid_argument("kl_divergence: inputs must sum to 1");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;  // 0 * ln(0/q) = 0
    if (q[i] <= 0.0)
      throw std::invalid_argument("kl_divergence: q entry <= 0 with p > 0");
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

inline double cosine_sim(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_sim: length mismatch");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na < 1e-150 || nb < 1e-150)
    throw std::invalid_argument("cosine_sim: degenerate vector");
  return dot(a, b) / (na * nb);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace kernels

// Convenience vector-level API mirroring the kernels.
inline std::vector<double> softmax(const std::vector<double>& x) {
  return kernels::softmax(x);
}
inline double kl_divergence(const std::vector<double>& p,
                            const std::vector<double>& q) {
  return kernels::kl_divergence(p, q);
}
inline double cosine_sim(const std::vector<double>& a,
                         const std::vector<double>& b) {
  return kernels::cosine_sim(a, b);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------
struct Param {
  std::string name;
  Dense value;
  Dense grad;
};

class ParamStore {
 public:
  Param& add(const std::string& name, Dense init) {
    if (index_.count(name))
      throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back(Param{name, init, Dense(init.rows, init.cols)});
    return params_.back();
  }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return params_[it->second];
  }
  const Param& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Param>& items() { return params_; }
  const std::vector<Param>& items() const { return params_; }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double g : p.grad.data) s += g * g;
    return std::sqrt(s);
  }

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------
struct Var {
  std::uint32_t i = 0;
};

class Tape {
 public:
  const Dense& value(Var v) const { return nodes_[v.i].value; }
  const Dense& grad(Var v) const { return nodes_[v.i].grad; }
  double scalar(Var v) const {
    const Dense& d = nodes_[v.i].value;
    if (d.size() != 1) throw std::invalid_argument("Tape::scalar: not a scalar");
    return d.data[0];
  }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Dense v) { return push(std::move(v), nullptr); }

  Var zeros(std::size_t rows, std::size_t cols = 1) {
    return push(Dense(rows, cols), nullptr);
  }

  Var param(Param& p) {
    Var out = push(p.value, nullptr);
    Param* pp = &p;
    nodes_[out.i].backward = [this, out, pp] {
      for (std::size_t k = 0; k < pp->grad.data.size(); ++k)
        pp->grad.data[k] += nodes_[out.i].grad.data[k];
    };
    return out;
  }

  // Embedding lookup: row r of a parameter table as a column vector.
  Var row(Param& table, std::size_t r) {
    if (r >= table.value.rows)
      throw std::invalid_argument("Tape::row: row out of range in " + table.name);
    const std::size_t d = table.value.cols;
    Dense v(d, 1);
    for (std::size_t j = 0; j < d; ++j) v[j] = table.value.at(r, j);
    Var out = push(std::move(v), nullptr);
    Param* pt = &table;
    nodes_[out.i].backward = [this, out, pt, r, d] {
      for (std::size_t j = 0; j < d; ++j)
        pt->grad.at(r, j) += nodes_[out.i].grad[j];
    };
    return out;
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Dense v = nodes_[a.i].value;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += nodes_[b.i].value[k];
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, b] {
      accumulate(a, nodes_[out.i].grad, 1.0);
      accumulate(b, nodes_[out.i].grad, 1.0);
    };
    return out;
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Dense v = nodes_[a.i].value;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= nodes_[b.i].value[k];
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, b] {
      accumulate(a, nodes_[out.i].grad, 1.0);
      accumulate(b, nodes_[out.i].grad, -1.0);
    };
    return out;
  }

  Var scale(Var a, double k) {
    Dense v = nodes_[a.i].value;
    for (auto& x : v.data) x *= k;
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, k] {
      accumulate(a, nodes_[out.i].grad, k);
    };
    return out;
  }

  Var add_const(Var a, const Dense& c) {
    if (!nodes_[a.i].value.same_shape(c))
      throw std::invalid_argument("Tape::add_const: shape mismatch");
    Dense v = nodes_[a.i].value;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += c[k];
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      accumulate(a, nodes_[out.i].grad, 1.0);
    };
    return out;
  }

  Var hadamard(Var a, Var b) {
    check_same(a, b, "hadamard");
    Dense v = nodes_[a.i].value;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] *= nodes_[b.i].value[k];
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, b] {
      const Dense& g = nodes_[out.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) {
        nodes_[a.i].grad[k] += g[k] * nodes_[b.i].value[k];
        nodes_[b.i].grad[k] += g[k] * nodes_[a.i].value[k];
      }
    };
    return out;
  }

  Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("Tape::concat: empty");
    std::size_t n = 0;
    for (Var p : parts) {
      if (nodes_[p.i].value.cols != 1)
        throw std::invalid_argument("Tape::concat: vector inputs required");
      n += nodes_[p.i].value.rows;
    }
    Dense v(n, 1);
    std::size_t off = 0;
    for (Var p : parts)
      for (double x : nodes_[p.i].value.data) v[off++] = x;
    Var out = push(std::move(v), nullptr);
    std::vector<Var> ps = parts;
    nodes_[out.i].backward = [this, out, ps] {
      std::size_t o = 0;
      for (Var p : ps)
        for (std::size_t k = 0; k < nodes_[p.i].value.size(); ++k)
          nodes_[p.i].grad[k] += nodes_[out.i].grad[o++];
    };
    return out;
  }

  // y = W x  (W: m x n, x: n x 1)
  Var matvec(Var W, Var x) {
    const Dense& w = nodes_[W.i].value;
    const Dense& xv = nodes_[x.i].value;
    if (xv.cols != 1 || w.cols != xv.rows)
      throw std::invalid_argument("Tape::matvec: shape mismatch");
    Dense v(w.rows, 1);
    for (std::size_t r = 0; r < w.rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < w.cols; ++c) s += w.at(r, c) * xv[c];
      v[r] = s;
    }
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, W, x] {
      const Dense& g = nodes_[out.i].grad;
      const Dense& w = nodes_[W.i].value;
      const Dense& xv = nodes_[x.i].value;
      for (std::size_t r = 0; r < w.rows; ++r) {
        const double gr = g[r];
        for (std::size_t c = 0; c < w.cols; ++c) {
          nodes_[W.i].grad.at(r, c) += gr * xv[c];
          nodes_[x.i].grad[c] += gr * w.at(r, c);
        }
      }
    };
    return out;
  }

  // y = W x + b
  Var affine(Var W, Var b, Var x) { return add(matvec(W, x), b); }

  Var tanh(Var a) {
    Dense v = nodes_[a.i].value;
    for (auto& x : v.data) x = std::tanh(x);
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      const Dense& y = nodes_[out.i].value;
      const Dense& g = nodes_[out.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k)
        nodes_[a.i].grad[k] += g[k] * (1.0 - y[k] * y[k]);
    };
    return out;
  }

  Var sigmoid(Var a) {
    Dense v = nodes_[a.i].value;
    for (auto& x : v.data) x = kernels::sigmoid(x);
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      const Dense& y = nodes_[out.i].value;
      const Dense& g = nodes_[out.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k)
        nodes_[a.i].grad[k] += g[k] * y[k] * (1.0 - y[k]);
    };
    return out;
  }

  Var softmax(Var a) {
    Dense v(nodes_[a.i].value.rows, 1, kernels::softmax(nodes_[a.i].value.data));
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      const Dense& y = nodes_[out.i].value;
      const Dense& g = nodes_[out.i].grad;
      double gy = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) gy += g[k] * y[k];
      for (std::size_t k = 0; k < g.size(); ++k)
        nodes_[a.i].grad[k] += y[k] * (g[k] - gy);
    };
    return out;
  }

  Var log_softmax(Var a) {
    Dense v(nodes_[a.i].value.rows, 1,
            kernels::log_softmax(nodes_[a.i].value.data));
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      const Dense& ls = nodes_[out.i].value;
      const Dense& g = nodes_[out.i].grad;
      double gs = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) gs += g[k];
      for (std::size_t k = 0; k < g.size(); ++k)
        nodes_[a.i].grad[k] += g[k] - std::exp(ls[k]) * gs;
    };
    return out;
  }

  Var dot(Var a, Var b) {
    check_same(a, b, "dot");
    Dense v(1, 1);
    v[0] = kernels::dot(nodes_[a.i].value.data, nodes_[b.i].value.data);
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, b] {
      const double g = nodes_[out.i].grad[0];
      for (std::size_t k = 0; k < nodes_[a.i].value.size(); ++k) {
        nodes_[a.i].grad[k] += g * nodes_[b.i].value[k];
        nodes_[b.i].grad[k] += g * nodes_[a.i].value[k];
      }
    };
    return out;
  }

  Var dot_const(Var a, const Dense& c) {
    if (!nodes_[a.i].value.same_shape(c))
      throw std::invalid_argument("Tape::dot_const: shape mismatch");
    Dense v(1, 1);
    v[0] = kernels::dot(nodes_[a.i].value.data, c.data);
    Var out = push(std::move(v), nullptr);
    Dense cc = c;
    nodes_[out.i].backward = [this, out, a, cc] {
      const double g = nodes_[out.i].grad[0];
      for (std::size_t k = 0; k < cc.size(); ++k)
        nodes_[a.i].grad[k] += g * cc[k];
    };
    return out;
  }

  // n scalars -> one n-vector.
  Var pack(const std::vector<Var>& scalars) {
    Dense v(scalars.size(), 1);
    for (std::size_t k = 0; k < scalars.size(); ++k) {
      if (nodes_[scalars[k].i].value.size() != 1)
        throw std::invalid_argument("Tape::pack: inputs must be scalars");
      v[k] = nodes_[scalars[k].i].value[0];
    }
    Var out = push(std::move(v), nullptr);
    std::vector<Var> ss = scalars;
    nodes_[out.i].backward = [this, out, ss] {
      for (std::size_t k = 0; k < ss.size(); ++k)
        nodes_[ss[k].i].grad[0] += nodes_[out.i].grad[k];
    };
    return out;
  }

  Var pick(Var v, std::size_t k) {
    if (k >= nodes_[v.i].value.size())
      throw std::invalid_argument("Tape::pick: index out of range");
    Dense s(1, 1);
    s[0] = nodes_[v.i].value[k];
    Var out = push(std::move(s), nullptr);
    nodes_[out.i].backward = [this, out, v, k] {
      nodes_[v.i].grad[k] += nodes_[out.i].grad[0];
    };
    return out;
  }

  Var mean_vecs(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("Tape::mean_vecs: empty");
    Dense v = nodes_[xs[0].i].value;
    for (std::size_t t = 1; t < xs.size(); ++t) {
      check_same(xs[0], xs[t], "mean_vecs");
      for (std::size_t k = 0; k < v.size(); ++k)
        v[k] += nodes_[xs[t].i].value[k];
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (auto& x : v.data) x *= inv;
    Var out = push(std::move(v), nullptr);
    std::vector<Var> xx = xs;
    nodes_[out.i].backward = [this, out, xx, inv] {
      for (Var x : xx)
        for (std::size_t k = 0; k < nodes_[x.i].value.size(); ++k)
          nodes_[x.i].grad[k] += inv * nodes_[out.i].grad[k];
    };
    return out;
  }

  // out = sum_k weights[k] * items[k]; weights is an n-vector node.
  Var lincomb(Var weights, const std::vector<Var>& items) {
    if (nodes_[weights.i].value.size() != items.size())
      throw std::invalid_argument("Tape::lincomb: weight/item count mismatch");
    if (items.empty()) throw std::invalid_argument("Tape::lincomb: empty");
    const std::size_t d = nodes_[items[0].i].value.size();
    Dense v(d, 1);
    for (std::size_t k = 0; k < items.size(); ++k) {
      const double w = nodes_[weights.i].value[k];
      for (std::size_t j = 0; j < d; ++j)
        v[j] += w * nodes_[items[k].i].value[j];
    }
    Var out = push(std::move(v), nullptr);
    std::vector<Var> its = items;
    nodes_[out.i].backward = [this, out, weights, its] {
      const Dense& g = nodes_[out.i].grad;
      for (std::size_t k = 0; k < its.size(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
          s += g[j] * nodes_[its[k].i].value[j];
          nodes_[its[k].i].grad[j] += nodes_[weights.i].value[k] * g[j];
        }
        nodes_[weights.i].grad[k] += s;
      }
    };
    return out;
  }

  Var mul(Var a, Var b) {
    if (nodes_[a.i].value.size() != 1 || nodes_[b.i].value.size() != 1)
      throw std::invalid_argument("Tape::mul: scalars required");
    Dense v(1, 1);
    v[0] = nodes_[a.i].value[0] * nodes_[b.i].value[0];
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, b] {
      const double g = nodes_[out.i].grad[0];
      nodes_[a.i].grad[0] += g * nodes_[b.i].value[0];
      nodes_[b.i].grad[0] += g * nodes_[a.i].value[0];
    };
    return out;
  }

  Var div(Var a, Var b) {
    if (nodes_[a.i].value.size() != 1 || nodes_[b.i].value.size() != 1)
      throw std::invalid_argument("Tape::div: scalars required");
    const double bv = nodes_[b.i].value[0];
    if (bv == 0.0) throw std::invalid_argument("Tape::div: division by zero");
    Dense v(1, 1);
    v[0] = nodes_[a.i].value[0] / bv;
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, b] {
      const double g = nodes_[out.i].grad[0];
      const double av = nodes_[a.i].value[0];
      const double bv2 = nodes_[b.i].value[0];
      nodes_[a.i].grad[0] += g / bv2;
      nodes_[b.i].grad[0] -= g * av / (bv2 * bv2);
    };
    return out;
  }

  Var sqrt(Var a) {
    if (nodes_[a.i].value.size() != 1)
      throw std::invalid_argument("Tape::sqrt: scalar required");
    const double av = nodes_[a.i].value[0];
    if (av < 0.0) throw std::invalid_argument("Tape::sqrt: negative input");
    Dense v(1, 1);
    v[0] = std::sqrt(av);
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      const double y = nodes_[out.i].value[0];
      if (y > 0.0) nodes_[a.i].grad[0] += nodes_[out.i].grad[0] / (2.0 * y);
    };
    return out;
  }

  Var log(Var a) {
    if (nodes_[a.i].value.size() != 1)
      throw std::invalid_argument("Tape::log: scalar required");
    const double av = nodes_[a.i].value[0];
    if (av <= 0.0) throw std::invalid_argument("Tape::log: non-positive input");
    Dense v(1, 1);
    v[0] = std::log(av);
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      nodes_[a.i].grad[0] += nodes_[out.i].grad[0] / nodes_[a.i].value[0];
    };
    return out;
  }

  // log(1 + e^x), elementwise on a scalar.
  Var softplus(Var a) {
    if (nodes_[a.i].value.size() != 1)
      throw std::invalid_argument("Tape::softplus: scalar required");
    Dense v(1, 1);
    v[0] = kernels::softplus(nodes_[a.i].value[0]);
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a] {
      nodes_[a.i].grad[0] +=
          nodes_[out.i].grad[0] * kernels::sigmoid(nodes_[a.i].value[0]);
    };
    return out;
  }

  // Inverted dropout with a caller-owned generator; call only in training.
  Var dropout(Var a, double rate, rng::Xoshiro256pp& gen) {
    if (rate < 0.0 || rate >= 1.0)
      throw std::invalid_argument("Tape::dropout: rate must be in [0,1)");
    if (rate == 0.0) return a;
    const double keep_scale = 1.0 / (1.0 - rate);
    Dense v = nodes_[a.i].value;
    auto mask = std::make_shared<std::vector<double>>(v.size(), 0.0);
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double m = gen.uniform() >= rate ? keep_scale : 0.0;
      (*mask)[k] = m;
      v[k] *= m;
    }
    Var out = push(std::move(v), nullptr);
    nodes_[out.i].backward = [this, out, a, mask] {
      for (std::size_t k = 0; k < mask->size(); ++k)
        nodes_[a.i].grad[k] += nodes_[out.i].grad[k] * (*mask)[k];
    };
    return out;
  }

  void backward(Var loss) {
    if (nodes_[loss.i].value.size() != 1)
      throw std::invalid_argument("Tape::backward: loss must be scalar");
    if (!std::isfinite(nodes_[loss.i].value[0]))
      throw std::runtime_error("Tape::backward: non-finite loss");
    nodes_[loss.i].grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].backward) nodes_[i].backward();
  }

 private:
  struct Node {
    Dense value;
    Dense grad;
    std::function<void()> backward;
  };

  Var push(Dense v, std::function<void()> bw) {
    Node n;
    n.grad = Dense(v.rows, v.cols);
    n.value = std::move(v);
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!nodes_[a.i].value.same_shape(nodes_[b.i].value))
      throw std::invalid_argument(std::string("Tape::") + op + ": shape mismatch");
  }

  void accumulate(Var target, const Dense& g, double k) {
    for (std::size_t j = 0; j < g.size(); ++j)
      nodes_[target.i].grad[j] += k * g[j];
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Composite differentiable ops
// ---------------------------------------------------------------------------

inline Var cosine(Tape& t, Var a, Var b) {
  const double na = t.value(a).norm();
  const double nb = t.value(b).norm();
  if (na < 1e-150 || nb < 1e-150)
    throw std::invalid_argument("cosine: degenerate vector");
  Var num = t.dot(a, b);
  Var den = t.mul(t.sqrt(t.dot(a, a)), t.sqrt(t.dot(b, b)));
  return t.div(num, den);
}

inline Var cosine_const(Tape& t, Var a, const Dense& b) {
  const double na = t.value(a).norm();
  const double nb = b.norm();
  if (na < 1e-150 || nb < 1e-150)
    throw std::invalid_argument("cosine: degenerate vector");
  Var num = t.dot_const(a, b);
  Var den = t.scale(t.sqrt(t.dot(a, a)), nb);
  return t.div(num, den);
}

// Single-head scaled dot-product self-attention (q = k = v = seq) followed by
// mean pooling over positions.
inline Var self_attention(Tape& t, const std::vector<Var>& seq) {
  if (seq.empty()) throw std::invalid_argument("self_attention: empty sequence");
  if (seq.size() == 1) return seq[0];
  const double scale = 1.0 / std::sqrt(static_cast<double>(t.value(seq[0]).size()));
  std::vector<Var> pooled;
  pooled.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::vector<Var> scores;
    scores.reserve(seq.size());
    for (std::size_t j = 0; j < seq.size(); ++j)
      scores.push_back(t.scale(t.dot(seq[i], seq[j]), scale));
    Var w = t.softmax(t.pack(scores));
    pooled.push_back(t.lincomb(w, seq));
  }
  return t.mean_vecs(pooled);
}

// Cross-attention over paired groups: queries from group_a, keys and values
// from group_b, mean-pooled.
inline Var cross_attention(Tape& t, const std::vector<Var>& group_a,
                           const std::vector<Var>& group_b) {
  if (group_a.empty() || group_a.size() != group_b.size())
    throw std::invalid_argument("cross_attention: empty or mismatched lengths");
  const double scale =
      1.0 / std::sqrt(static_cast<double>(t.value(group_a[0]).size()));
  std::vector<Var> pooled;
  pooled.reserve(group_a.size());
  for (std::size_t i = 0; i < group_a.size(); ++i) {
    std::vector<Var> scores;
    scores.reserve(group_b.size());
    for (std::size_t j = 0; j < group_b.size(); ++j)
      scores.push_back(t.scale(t.dot(group_a[i], group_b[j]), scale));
    Var w = t.softmax(t.pack(scores));
    pooled.push_back(t.lincomb(w, group_b));
  }
  return t.mean_vecs(pooled);
}

// Plain-value attention wrappers; these run the same tape ops and discard the
// tape, so values match the differentiable path exactly.
inline Dense self_attention_pooled(const std::vector<Dense>& seq) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(seq.size());
  for (const auto& v : seq) vars.push_back(t.constant(v));
  return t.value(self_attention(t, vars));
}

inline Dense cross_attention_pooled(const std::vector<Dense>& group_a,
                                    const std::vector<Dense>& group_b) {
  Tape t;
  std::vector<Var> va, vb;
  for (const auto& v : group_a) va.push_back(t.constant(v));
  for (const auto& v : group_b) vb.push_back(t.constant(v));
  return t.value(cross_attention(t, va, vb));
}

// KL(target || softmax(logits)) with a constant target distribution; the
// target's entropy term is folded in so the value is a true KL divergence.
inline Var kl_to_softmax(Tape& t, const std::vector<double>& target, Var logits) {
  if (target.size() != t.value(logits).size())
    throw std::invalid_argument("kl_to_softmax: length mismatch");
  double entropy = 0.0;  // sum p ln p
  for (double p : target)
    if (p > 0.0) entropy += p * std::log(p);
  Var ls = t.log_softmax(logits);
  Var cross = t.dot_const(ls, Dense(target.size(), 1, std::vector<double>(target)));
  return t.add_const(t.scale(cross, -1.0), Dense(1, 1, {entropy}));
}

}  // namespace rgalign::diff
