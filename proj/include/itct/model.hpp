#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "itct/numerics.hpp"

namespace itct {

// A probability vector over the symbol alphabet.
using SymbolDistribution = std::vector<double>;

struct Alphabet {
  std::size_t size = 64;
  std::vector<bool> live_mask;  // true = live

  explicit Alphabet(std::size_t n = 64) : size(n), live_mask(n, true) {}
  std::size_t live_count() const;
  void validate() const;
};

// Psi reads the future side y (confirmation model), Phi the past side x
// (predictor model).
enum class Side { Psi, Phi };

const char* side_prefix(Side side);  // "psi." or "phi."

struct ModelDims {
  std::size_t input_dim = 39;
  std::size_t hidden_dim = 64;
  std::size_t alphabet_size = 64;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Entry names for one side: "<side>gru.{W_r,...,h0}", "<side>out.W" (|Z| x H),
// "<side>out.b" (|Z|). The adversarial marginal is "theta.logits" (|Z|).
std::string gru_prefix(Side side);
std::string out_weight_name(Side side);
std::string out_bias_name(Side side);
inline constexpr const char* kThetaLogits = "theta.logits";

template <typename T>
nn::ParamStore<T> make_encoder_params(const ModelDims& dims);

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases, initial state
// and Theta logits zero.
template <typename T>
nn::ParamStore<T> init_encoder_params(const ModelDims& dims, std::uint64_t seed);

template <typename T>
ModelDims dims_of(const nn::ParamStore<T>& params);

struct EncoderVars {
  nn::GruVars gru;
  nn::Var out_W;
  nn::Var out_b;
};

template <typename T>
EncoderVars bind_encoder(nn::Tape<T>& tape, nn::ParamStore<T>& params, Side side);

// softmax(out.W * gru_sequence(frames) + out.b) on the tape.
template <typename T>
nn::Var encode(nn::Tape<T>& tape, const EncoderVars& enc, const Matrix<T>& frames);

// Tape-free evaluation; same arithmetic as the tape path.
template <typename T>
std::vector<T> encode_forward(const nn::ParamStore<T>& params, Side side, const Matrix<T>& frames);

// softmax of the Theta logits.
template <typename T>
nn::Var marginal_theta(nn::Tape<T>& tape, nn::ParamStore<T>& params);
template <typename T>
std::vector<T> marginal_theta(const nn::ParamStore<T>& params);

// Softmax of a logit vector without a tape.
template <typename T>
std::vector<T> softmax_values(std::span<const T> logits);

std::size_t argmax_first(std::span<const float> p);

}  // namespace itct
