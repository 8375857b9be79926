#pragma once

// Template definitions for numerics.hpp.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

namespace itct::nn {

namespace kernel {

// out += W * v, W row-major rows x cols.
template <typename T>
inline void matvec_acc(const T* W, std::size_t rows, std::size_t cols, const T* v, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* w = W + r * cols;
    T acc = T(0);
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * v[c];
    out[r] += acc;
  }
}

// out += W^T * g.
template <typename T>
inline void matvec_t_acc(const T* W, std::size_t rows, std::size_t cols, const T* g, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* w = W + r * cols;
    const T gr = g[r];
    for (std::size_t c = 0; c < cols; ++c) out[c] += w[c] * gr;
  }
}

// dW += g * v^T.
template <typename T>
inline void outer_acc(const T* g, std::size_t rows, const T* v, std::size_t cols, T* dW) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* d = dW + r * cols;
    const T gr = g[r];
    for (std::size_t c = 0; c < cols; ++c) d[c] += gr * v[c];
  }
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Values of one GRU step, kept for the reverse sweep.
template <typename T>
struct GruStep {
  std::vector<T> r, u, c, rh, h_next;
};

template <typename T>
struct GruWeights {
  const T *W_r, *W_u, *W_c, *U_r, *U_u, *U_c, *b_r, *b_u, *b_c;
  std::size_t hidden, input;
};

template <typename T>
inline void gru_step_forward(const GruWeights<T>& w, const T* h, const T* v, GruStep<T>& s) {
  const std::size_t H = w.hidden, D = w.input;
  s.r.assign(w.b_r, w.b_r + H);
  s.u.assign(w.b_u, w.b_u + H);
  s.c.assign(w.b_c, w.b_c + H);
  matvec_acc(w.W_r, H, D, v, s.r.data());
  matvec_acc(w.U_r, H, H, h, s.r.data());
  matvec_acc(w.W_u, H, D, v, s.u.data());
  matvec_acc(w.U_u, H, H, h, s.u.data());
  s.rh.resize(H);
  for (std::size_t i = 0; i < H; ++i) {
    s.r[i] = sigmoid(s.r[i]);
    s.u[i] = sigmoid(s.u[i]);
    s.rh[i] = s.r[i] * h[i];
  }
  matvec_acc(w.W_c, H, D, v, s.c.data());
  matvec_acc(w.U_c, H, H, s.rh.data(), s.c.data());
  s.h_next.resize(H);
  for (std::size_t i = 0; i < H; ++i) {
    s.c[i] = std::tanh(s.c[i]);
    s.h_next[i] = s.u[i] * h[i] + (T(1) - s.u[i]) * s.c[i];
  }
}

}  // namespace kernel

// ---- ParamStore -------------------------------------------------------------

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::add(std::string name, std::size_t rows,
                                                  std::size_t cols) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  Entry e;
  e.name = std::move(name);
  e.rows = rows;
  e.cols = cols;
  e.value.assign(rows * cols, T(0));
  e.grad.assign(rows * cols, T(0));
  entries_.push_back(std::move(e));
  return entries_.back();
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second];
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second];
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), T(0));
}

template <typename T>
std::size_t ParamStore<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.size();
  return n;
}

// ---- Tape -------------------------------------------------------------------

template <typename T>
Var Tape<T>::constant(std::vector<T> value, std::size_t rows, std::size_t cols) {
  if (value.size() != rows * cols) throw ShapeError("constant: value size does not match shape");
  Node n;
  n.value = std::move(value);
  n.rows = rows;
  n.cols = cols;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::param(typename ParamStore<T>::Entry& entry) {
  Node n;
  n.ext_value = entry.value.data();
  n.ext_grad = entry.grad.data();
  n.rows = entry.rows;
  n.cols = entry.cols;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::push(std::vector<T> value, std::size_t rows, std::size_t cols, Backward backward) {
  if (value.size() != rows * cols) throw ShapeError("push: value size does not match shape");
  Node n;
  n.value = std::move(value);
  n.rows = rows;
  n.cols = cols;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::detach(Var v) {
  auto val = value(v);
  return constant(std::vector<T>(val.begin(), val.end()), rows(v), cols(v));
}

template <typename T>
std::span<const T> Tape<T>::value(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.ext_value) return {n.ext_value, n.rows * n.cols};
  return n.value;
}

template <typename T>
std::span<T> Tape<T>::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.ext_grad) return {n.ext_grad, n.rows * n.cols};
  if (n.grad.empty()) n.grad.assign(n.rows * n.cols, T(0));
  return n.grad;
}

template <typename T>
T Tape<T>::scalar(Var v) const {
  auto val = value(v);
  if (val.size() != 1) throw ShapeError("scalar: node is not a scalar");
  return val[0];
}

template <typename T>
void Tape<T>::backward(Var root) {
  if (rows(root) * cols(root) != 1) throw ShapeError("backward: root must be a scalar");
  for (auto& n : nodes_) n.grad.clear();
  grad(root)[0] = T(1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, Var{static_cast<std::uint32_t>(i)});
  }
}

// ---- primitives -------------------------------------------------------------

template <typename T>
Var affine(Tape<T>& tape, Var W, Var b, Var v) {
  const std::size_t rows = tape.rows(W), cols = tape.cols(W);
  if (tape.value(b).size() != rows || tape.value(v).size() != cols)
    throw ShapeError("affine: shapes do not conform");
  auto bv = tape.value(b);
  std::vector<T> out(bv.begin(), bv.end());
  kernel::matvec_acc(tape.value(W).data(), rows, cols, tape.value(v).data(), out.data());
  return tape.push(std::move(out), rows, 1, [W, b, v, rows, cols](Tape<T>& t, Var self) {
    auto g = t.grad(self);
    std::vector<T> gs(g.begin(), g.end());
    kernel::outer_acc(gs.data(), rows, t.value(v).data(), cols, t.grad(W).data());
    auto gb = t.grad(b);
    for (std::size_t i = 0; i < rows; ++i) gb[i] += gs[i];
    kernel::matvec_t_acc(t.value(W).data(), rows, cols, gs.data(), t.grad(v).data());
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  auto av = tape.value(a), bv = tape.value(b);
  if (av.size() != bv.size()) throw ShapeError("add: size mismatch");
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.push(std::move(out), tape.rows(a), tape.cols(a), [a, b](Tape<T>& t, Var self) {
    std::vector<T> g(t.grad(self).begin(), t.grad(self).end());
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  auto av = tape.value(a), bv = tape.value(b);
  if (av.size() != bv.size()) throw ShapeError("sub: size mismatch");
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.push(std::move(out), tape.rows(a), tape.cols(a), [a, b](Tape<T>& t, Var self) {
    std::vector<T> g(t.grad(self).begin(), t.grad(self).end());
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  auto av = tape.value(a);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return tape.push(std::move(out), tape.rows(a), tape.cols(a), [a, factor](Tape<T>& t, Var self) {
    std::vector<T> g(t.grad(self).begin(), t.grad(self).end());
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var a, std::vector<T> weights) {
  auto av = tape.value(a);
  if (av.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * weights[i];
  return tape.push({s}, 1, 1, [a, w = std::move(weights)](Tape<T>& t, Var self) {
    const T g = t.grad(self)[0];
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < w.size(); ++i) ga[i] += g * w[i];
  });
}

template <typename T>
Var softmax(Tape<T>& tape, Var logits) {
  auto l = tape.value(logits);
  if (l.empty()) throw ShapeError("softmax: empty input");
  T m = l[0];
  for (T v : l) {
    if (!std::isfinite(v)) throw Error("softmax: non-finite logit");
    m = std::max(m, v);
  }
  std::vector<T> p(l.size());
  T s = T(0);
  for (std::size_t i = 0; i < l.size(); ++i) {
    p[i] = std::exp(l[i] - m);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  const auto n = p.size();
  return tape.push(std::move(p), n, 1, [logits](Tape<T>& t, Var self) {
    auto p = t.value(self);
    auto g = t.grad(self);
    T dot = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) dot += g[i] * p[i];
    std::vector<T> d(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) d[i] = p[i] * (g[i] - dot);
    auto gl = t.grad(logits);
    for (std::size_t i = 0; i < d.size(); ++i) gl[i] += d[i];
  });
}

template <typename T>
void add_gru_params(ParamStore<T>& store, const std::string& prefix, std::size_t input_dim,
                    std::size_t hidden_dim) {
  for (const char* g : {"W_r", "W_u", "W_c"}) store.add(prefix + g, hidden_dim, input_dim);
  for (const char* g : {"U_r", "U_u", "U_c"}) store.add(prefix + g, hidden_dim, hidden_dim);
  for (const char* g : {"b_r", "b_u", "b_c"}) store.add(prefix + g, hidden_dim, 1);
  store.add(prefix + "h0", hidden_dim, 1);
}

template <typename T>
GruVars bind_gru(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix) {
  GruVars p;
  p.W_r = tape.param(store, prefix + "W_r");
  p.W_u = tape.param(store, prefix + "W_u");
  p.W_c = tape.param(store, prefix + "W_c");
  p.U_r = tape.param(store, prefix + "U_r");
  p.U_u = tape.param(store, prefix + "U_u");
  p.U_c = tape.param(store, prefix + "U_c");
  p.b_r = tape.param(store, prefix + "b_r");
  p.b_u = tape.param(store, prefix + "b_u");
  p.b_c = tape.param(store, prefix + "b_c");
  p.h0 = tape.param(store, prefix + "h0");
  return p;
}

namespace detail {

template <typename T>
kernel::GruWeights<T> weights_of(const Tape<T>& t, const GruVars& p) {
  return {t.value(p.W_r).data(), t.value(p.W_u).data(), t.value(p.W_c).data(),
          t.value(p.U_r).data(), t.value(p.U_u).data(), t.value(p.U_c).data(),
          t.value(p.b_r).data(), t.value(p.b_u).data(), t.value(p.b_c).data(),
          t.rows(p.W_r),         t.cols(p.W_r)};
}

}  // namespace detail

template <typename T>
Var gru_cell(Tape<T>& tape, const GruVars& p, Var h, Var v) {
  const auto w = detail::weights_of(tape, p);
  if (tape.value(h).size() != w.hidden || tape.value(v).size() != w.input ||
      tape.cols(p.U_r) != w.hidden)
    throw ShapeError("gru_cell: shapes do not conform");
  auto step = std::make_shared<kernel::GruStep<T>>();
  kernel::gru_step_forward(w, tape.value(h).data(), tape.value(v).data(), *step);
  std::vector<T> out = step->h_next;
  const std::size_t H = w.hidden, D = w.input;
  return tape.push(std::move(out), H, 1, [p, h, v, step, H, D](Tape<T>& t, Var self) {
    const auto& s = *step;
    std::vector<T> g(t.grad(self).begin(), t.grad(self).end());
    auto hv = t.value(h);
    auto vv = t.value(v);
    std::vector<T> da_c(H), da_u(H), da_r(H), drh(H, T(0));
    std::vector<T> dh(H);
    for (std::size_t i = 0; i < H; ++i) {
      dh[i] = g[i] * s.u[i];
      const T du = g[i] * (hv[i] - s.c[i]);
      const T dc = g[i] * (T(1) - s.u[i]);
      da_c[i] = dc * (T(1) - s.c[i] * s.c[i]);
      da_u[i] = du * s.u[i] * (T(1) - s.u[i]);
    }
    kernel::matvec_t_acc(t.value(p.U_c).data(), H, H, da_c.data(), drh.data());
    for (std::size_t i = 0; i < H; ++i) {
      const T dr = drh[i] * hv[i];
      dh[i] += drh[i] * s.r[i];
      da_r[i] = dr * s.r[i] * (T(1) - s.r[i]);
    }
    kernel::outer_acc(da_c.data(), H, vv.data(), D, t.grad(p.W_c).data());
    kernel::outer_acc(da_c.data(), H, s.rh.data(), H, t.grad(p.U_c).data());
    kernel::outer_acc(da_u.data(), H, vv.data(), D, t.grad(p.W_u).data());
    kernel::outer_acc(da_u.data(), H, hv.data(), H, t.grad(p.U_u).data());
    kernel::outer_acc(da_r.data(), H, vv.data(), D, t.grad(p.W_r).data());
    kernel::outer_acc(da_r.data(), H, hv.data(), H, t.grad(p.U_r).data());
    {
      auto gb_c = t.grad(p.b_c);
      auto gb_u = t.grad(p.b_u);
      auto gb_r = t.grad(p.b_r);
      for (std::size_t i = 0; i < H; ++i) {
        gb_c[i] += da_c[i];
        gb_u[i] += da_u[i];
        gb_r[i] += da_r[i];
      }
    }
    kernel::matvec_t_acc(t.value(p.U_u).data(), H, H, da_u.data(), dh.data());
    kernel::matvec_t_acc(t.value(p.U_r).data(), H, H, da_r.data(), dh.data());
    {
      std::vector<T> dv(D, T(0));
      kernel::matvec_t_acc(t.value(p.W_c).data(), H, D, da_c.data(), dv.data());
      kernel::matvec_t_acc(t.value(p.W_u).data(), H, D, da_u.data(), dv.data());
      kernel::matvec_t_acc(t.value(p.W_r).data(), H, D, da_r.data(), dv.data());
      auto gv = t.grad(v);
      for (std::size_t i = 0; i < D; ++i) gv[i] += dv[i];
    }
    auto gh = t.grad(h);
    for (std::size_t i = 0; i < H; ++i) gh[i] += dh[i];
  });
}

template <typename T>
Var gru_sequence(Tape<T>& tape, const GruVars& p, const Matrix<T>& frames) {
  if (frames.rows == 0) throw ShapeError("gru_sequence: empty sequence");
  Var h = p.h0;
  for (std::size_t t = 0; t < frames.rows; ++t) {
    auto row = frames.row(t);
    Var v = tape.constant(std::vector<T>(row.begin(), row.end()));
    h = gru_cell(tape, p, h, v);
  }
  return h;
}

template <typename T>
std::vector<T> gru_sequence_forward(const ParamStore<T>& store, const std::string& prefix,
                                    const Matrix<T>& frames) {
  if (frames.rows == 0) throw ShapeError("gru_sequence: empty sequence");
  const auto& W_r = store.at(prefix + "W_r");
  const kernel::GruWeights<T> w{W_r.value.data(),
                                store.at(prefix + "W_u").value.data(),
                                store.at(prefix + "W_c").value.data(),
                                store.at(prefix + "U_r").value.data(),
                                store.at(prefix + "U_u").value.data(),
                                store.at(prefix + "U_c").value.data(),
                                store.at(prefix + "b_r").value.data(),
                                store.at(prefix + "b_u").value.data(),
                                store.at(prefix + "b_c").value.data(),
                                W_r.rows,
                                W_r.cols};
  if (frames.cols != w.input) throw ShapeError("gru_sequence: frame dimension mismatch");
  std::vector<T> h = store.at(prefix + "h0").value;
  kernel::GruStep<T> s;
  for (std::size_t t = 0; t < frames.rows; ++t) {
    kernel::gru_step_forward(w, h.data(), frames.row(t).data(), s);
    h.swap(s.h_next);
  }
  return h;
}

template <typename T>
void sgd_apply(ParamStore<T>& store, T lr) {
  for (auto& e : store.entries()) {
    for (std::size_t i = 0; i < e.size(); ++i) e.value[i] -= lr * e.grad[i];
    std::fill(e.grad.begin(), e.grad.end(), T(0));
  }
}

template <typename T>
void sgd_apply(ParamStore<T>& store, T lr, std::string_view prefix) {
  for (auto& e : store.entries()) {
    if (e.name.compare(0, prefix.size(), prefix) != 0) continue;
    for (std::size_t i = 0; i < e.size(); ++i) e.value[i] -= lr * e.grad[i];
    std::fill(e.grad.begin(), e.grad.end(), T(0));
  }
}

template <typename T, typename Rng>
void init_uniform_fan_in(typename ParamStore<T>::Entry& e, Rng& rng) {
  if (e.cols <= 1) {
    std::fill(e.value.begin(), e.value.end(), T(0));
    return;
  }
  const double a = 1.0 / std::sqrt(static_cast<double>(e.cols));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : e.value) v = static_cast<T>(dist(rng));
}

}  // namespace itct::nn
