#include "itct/model.hpp"

#include <random>

namespace itct {

std::size_t Alphabet::live_count() const {
  std::size_t n = 0;
  for (bool b : live_mask) n += b ? 1 : 0;
  return n;
}

void Alphabet::validate() const {
  if (size < 2) throw ConfigError("alphabet needs at least 2 symbols");
  if (live_mask.size() != size) throw ConfigError("live mask length differs from alphabet size");
  if (live_count() == 0) throw ConfigError("alphabet has no live symbol");
}

const char* side_prefix(Side side) { return side == Side::Psi ? "psi." : "phi."; }
std::string gru_prefix(Side side) { return std::string(side_prefix(side)) + "gru."; }
std::string out_weight_name(Side side) { return std::string(side_prefix(side)) + "out.W"; }
std::string out_bias_name(Side side) { return std::string(side_prefix(side)) + "out.b"; }

template <typename T>
nn::ParamStore<T> make_encoder_params(const ModelDims& dims) {
  if (dims.input_dim == 0 || dims.hidden_dim == 0) throw ConfigError("model dimensions must be positive");
  if (dims.alphabet_size < 2) throw ConfigError("alphabet needs at least 2 symbols");
  nn::ParamStore<T> store;
  for (Side side : {Side::Psi, Side::Phi}) {
    nn::add_gru_params(store, gru_prefix(side), dims.input_dim, dims.hidden_dim);
    store.add(out_weight_name(side), dims.alphabet_size, dims.hidden_dim);
    store.add(out_bias_name(side), dims.alphabet_size, 1);
  }
  store.add(kThetaLogits, dims.alphabet_size, 1);
  return store;
}

template <typename T>
nn::ParamStore<T> init_encoder_params(const ModelDims& dims, std::uint64_t seed) {
  auto store = make_encoder_params<T>(dims);
  std::mt19937_64 rng(seed);
  for (auto& e : store.entries()) nn::init_uniform_fan_in<T>(e, rng);
  return store;
}

template <typename T>
ModelDims dims_of(const nn::ParamStore<T>& params) {
  const auto& w = params.at(gru_prefix(Side::Psi) + "W_r");
  const auto& out = params.at(out_weight_name(Side::Psi));
  return {w.cols, w.rows, out.rows};
}

template <typename T>
EncoderVars bind_encoder(nn::Tape<T>& tape, nn::ParamStore<T>& params, Side side) {
  EncoderVars e;
  e.gru = nn::bind_gru(tape, params, gru_prefix(side));
  e.out_W = tape.param(params, out_weight_name(side));
  e.out_b = tape.param(params, out_bias_name(side));
  return e;
}

template <typename T>
nn::Var encode(nn::Tape<T>& tape, const EncoderVars& enc, const Matrix<T>& frames) {
  const nn::Var h = nn::gru_sequence(tape, enc.gru, frames);
  return nn::softmax(tape, nn::affine(tape, enc.out_W, enc.out_b, h));
}

template <typename T>
std::vector<T> softmax_values(std::span<const T> logits) {
  T m = logits[0];
  for (T v : logits) {
    if (!std::isfinite(v)) throw Error("softmax: non-finite logit");
    m = std::max(m, v);
  }
  std::vector<T> p(logits.size());
  T s = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

template <typename T>
std::vector<T> encode_forward(const nn::ParamStore<T>& params, Side side, const Matrix<T>& frames) {
  const auto h = nn::gru_sequence_forward(params, gru_prefix(side), frames);
  const auto& W = params.at(out_weight_name(side));
  std::vector<T> logits = params.at(out_bias_name(side)).value;
  if (W.cols != h.size()) throw ShapeError("encode: output layer does not match hidden size");
  nn::kernel::matvec_acc(W.value.data(), W.rows, W.cols, h.data(), logits.data());
  return softmax_values<T>(logits);
}

template <typename T>
nn::Var marginal_theta(nn::Tape<T>& tape, nn::ParamStore<T>& params) {
  return nn::softmax(tape, tape.param(params, kThetaLogits));
}

template <typename T>
std::vector<T> marginal_theta(const nn::ParamStore<T>& params) {
  return softmax_values<T>(params.at(kThetaLogits).value);
}

std::size_t argmax_first(std::span<const float> p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

#define ITCT_INSTANTIATE(T)                                                                   \
  template nn::ParamStore<T> make_encoder_params<T>(const ModelDims&);                        \
  template nn::ParamStore<T> init_encoder_params<T>(const ModelDims&, std::uint64_t);         \
  template ModelDims dims_of<T>(const nn::ParamStore<T>&);                                    \
  template EncoderVars bind_encoder<T>(nn::Tape<T>&, nn::ParamStore<T>&, Side);               \
  template nn::Var encode<T>(nn::Tape<T>&, const EncoderVars&, const Matrix<T>&);             \
  template std::vector<T> encode_forward<T>(const nn::ParamStore<T>&, Side, const Matrix<T>&); \
  template nn::Var marginal_theta<T>(nn::Tape<T>&, nn::ParamStore<T>&);                       \
  template std::vector<T> marginal_theta<T>(const nn::ParamStore<T>&);                        \
  template std::vector<T> softmax_values<T>(std::span<const T>);

ITCT_INSTANTIATE(float)
ITCT_INSTANTIATE(double)

#undef ITCT_INSTANTIATE

}  // namespace itct
