#pragma once

// Minimal reverse-mode differentiation for the co-training encoders.
//
// A Tape records nodes in creation order. Each node owns (or, for parameters,
// borrows from a ParamStore) a value and a gradient buffer, plus a closure that
// pushes its gradient into its inputs. backward() walks the nodes in exact
// reverse order, so gradients of values with fan-out are summed.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "itct/matrix.hpp"

namespace itct::nn {

template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> value;
    std::vector<T> grad;

    std::size_t size() const { return value.size(); }
  };

  // Adds a zero-filled entry; throws ConfigError on a duplicate name. The
  // returned reference is invalidated by the next add.
  Entry& add(std::string name, std::size_t rows, std::size_t cols);

  bool contains(std::string_view name) const;
  Entry& at(std::string_view name);
  const Entry& at(std::string_view name) const;

  std::span<Entry> entries() { return entries_; }
  std::span<const Entry> entries() const { return entries_; }

  void zero_grad();
  std::size_t total_size() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      auto& o = out.add(e.name, e.rows, e.cols);
      for (std::size_t i = 0; i < e.size(); ++i) o.value[i] = static_cast<U>(e.value[i]);
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  std::uint32_t id = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  // A leaf that receives no gradient flow out of the tape.
  Var constant(std::vector<T> value, std::size_t rows, std::size_t cols = 1);
  Var constant(std::vector<T> value) {
    const auto n = value.size();
    return constant(std::move(value), n, 1);
  }

  // A leaf aliasing a parameter entry; its gradient accumulates directly into
  // the store's gradient slot.
  Var param(typename ParamStore<T>::Entry& entry);
  Var param(ParamStore<T>& store, std::string_view name) { return param(store.at(name)); }

  // A computed node. `backward` reads grad(self) and accumulates into inputs.
  Var push(std::vector<T> value, std::size_t rows, std::size_t cols, Backward backward);

  // Copies the value of `v` into a new constant: gradients stop here.
  Var detach(Var v);

  std::span<const T> value(Var v) const;
  std::span<T> grad(Var v);
  T scalar(Var v) const;
  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and runs the reverse sweep over every node
  // created before `root`. Owned gradients are cleared first, so backward may
  // be called more than once on one tape; parameter gradients accumulate.
  void backward(Var root);

 private:
  struct Node {
    std::vector<T> value;
    std::vector<T> grad;
    const T* ext_value = nullptr;
    T* ext_grad = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// ---- primitives ------------------------------------------------------------

// W (rows x cols) * v + b.
template <typename T>
Var affine(Tape<T>& tape, Var W, Var b, Var v);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);
template <typename T>
Var sub(Tape<T>& tape, Var a, Var b);
template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);
// Dot product with a constant weight vector: a scalar.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var a, std::vector<T> weights);

// Max-shifted softmax. Throws on non-finite input.
template <typename T>
Var softmax(Tape<T>& tape, Var logits);

// Tape handles for one GRU's parameters:
//   r = sigmoid(W_r v + U_r h + b_r)
//   u = sigmoid(W_u v + U_u h + b_u)
//   c = tanh(W_c v + U_c (r * h) + b_c)
//   h' = u * h + (1 - u) * c
struct GruVars {
  Var W_r, W_u, W_c;
  Var U_r, U_u, U_c;
  Var b_r, b_u, b_c;
  Var h0;
};

// Entry names "<prefix>W_r", ..., "<prefix>h0".
template <typename T>
void add_gru_params(ParamStore<T>& store, const std::string& prefix, std::size_t input_dim,
                    std::size_t hidden_dim);
template <typename T>
GruVars bind_gru(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix);

template <typename T>
Var gru_cell(Tape<T>& tape, const GruVars& p, Var h, Var v);

// Folds gru_cell over the rows of `frames`, starting from the learned h0.
template <typename T>
Var gru_sequence(Tape<T>& tape, const GruVars& p, const Matrix<T>& frames);

// Tape-free forward pass with the same arithmetic as gru_sequence.
template <typename T>
std::vector<T> gru_sequence_forward(const ParamStore<T>& store, const std::string& prefix,
                                    const Matrix<T>& frames);

// ---- optimisation and checking --------------------------------------------

// p <- p - lr * grad(p) for every entry, then zero the gradients.
template <typename T>
void sgd_apply(ParamStore<T>& store, T lr);
// Same, restricted to entries whose name starts with `prefix`; only those
// gradients are zeroed.
template <typename T>
void sgd_apply(ParamStore<T>& store, T lr, std::string_view prefix);

// Evaluates the loss at the store's current values and accumulates its
// analytic gradient into the store's gradient slots.
using LossAndGrad = std::function<double(ParamStore<double>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Relative error per coordinate is |analytic - numeric| / max(|analytic|,
// |numeric|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-6;

// Compares every analytic gradient coordinate with the central difference
// (loss(p + eps) - loss(p - eps)) / (2 eps). Leaves values unchanged and
// gradients zeroed.
GradCheckResult finite_diff_check(const LossAndGrad& loss, ParamStore<double>& params,
                                  double epsilon);

// Uniform(-a, a) with a = 1/sqrt(cols) for matrices; vectors stay zero.
template <typename T, typename Rng>
void init_uniform_fan_in(typename ParamStore<T>::Entry& e, Rng& rng);

}  // namespace itct::nn

#include "itct/numerics_impl.hpp"
