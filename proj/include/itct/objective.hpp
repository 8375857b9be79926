#pragma once

// The co-training objective for one minibatch (one utterance):
//
//   loss = H+_{Psi,Phi}(z|x) - H_Psi(z|u)
//
// where H+ is the cross-entropy of Phi's prediction against Psi's
// confirmation, averaged over windows, and H_Psi(z|u) is the entropy of the
// batch-average Psi distribution. Expectations over z are exact sums over the
// alphabet. Everything is in bits.

#include <optional>
#include <span>
#include <vector>

#include "itct/model.hpp"
#include "itct/numerics.hpp"

namespace itct {

inline constexpr double kLogClamp = 1e-30;

struct ObjectiveTerms {
  double cross_entropy_bits = 0.0;
  double marginal_entropy_bits = 0.0;
  std::optional<double> adversarial_marginal_bits;
  double loss = 0.0;
  double mi_bound_bits = 0.0;
  std::size_t saturation_count = 0;  // log arguments clamped at kLogClamp
  std::size_t windows = 0;
};

// ---- values ------------------------------------------------------------------

double entropy_bits(std::span<const double> p);

// (1/N) sum_i sum_z psi_i[z] * -log2 phi_i[z]. Throws on length mismatch or
// an empty batch.
double cross_entropy_term(std::span<const SymbolDistribution> psi,
                          std::span<const SymbolDistribution> phi,
                          std::size_t* saturation = nullptr);

// H((1/N) sum_i psi_i).
double entropy_of_mean(std::span<const SymbolDistribution> psi);

double mean_entropy(std::span<const SymbolDistribution> dists);

// marginal_entropy_bits - cross_entropy_bits, reported as-is (may be negative).
double mi_lower_bound(const ObjectiveTerms& terms);

// ---- tape nodes ----------------------------------------------------------------

// Mass from earlier utterances folded into the marginal in global-entropy
// mode: q = (mass + sum_i psi_i) / (count + N). The prior carries no gradient.
struct MarginalPrior {
  std::vector<double> mass;
  double count = 0.0;
};

template <typename T>
nn::Var cross_entropy_node(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                           std::span<const nn::Var> phi, std::size_t* saturation = nullptr);

template <typename T>
nn::Var entropy_of_mean_node(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                             const MarginalPrior* prior = nullptr);

// (1/N) sum_i sum_z psi_i[z] * -log2 theta[z].
template <typename T>
nn::Var marginal_cross_entropy_node(nn::Tape<T>& tape, std::span<const nn::Var> psi, nn::Var theta,
                                    std::size_t* saturation = nullptr);

template <typename T>
struct LossResult {
  nn::Var loss;
  ObjectiveTerms terms;
};

// Gradients reach Psi through both terms and Phi through the cross-entropy only.
template <typename T>
LossResult<T> utterance_loss(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                             std::span<const nn::Var> phi, const MarginalPrior* prior = nullptr);

template <typename T>
struct AdversarialResult {
  nn::Var psi_phi_loss;  // H+(z|x) - H+_{Psi,Theta}(z), Theta detached
  nn::Var theta_loss;    // H+_{Psi,Theta}(z), Psi detached
  ObjectiveTerms terms;
};

template <typename T>
AdversarialResult<T> adversarial_loss(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                                      std::span<const nn::Var> phi, nn::Var theta,
                                      const MarginalPrior* prior = nullptr);

}  // namespace itct
