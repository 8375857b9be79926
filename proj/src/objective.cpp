#include "itct/objective.hpp"

#include <cmath>
#include <numbers>

namespace itct {

namespace {

constexpr double kInvLn2 = 1.0 / std::numbers::ln2;

void check_batch(std::size_t n_psi, std::size_t n_phi) {
  if (n_psi == 0) throw ShapeError("objective: empty batch");
  if (n_psi != n_phi) throw ShapeError("objective: psi and phi batches differ in length");
}

template <typename T>
double clamped_neg_log2(T p, std::size_t* saturation) {
  if (static_cast<double>(p) < kLogClamp) {
    if (saturation) ++*saturation;
    return -std::log2(kLogClamp);
  }
  return -std::log2(static_cast<double>(p));
}

}  // namespace

double entropy_bits(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

double cross_entropy_term(std::span<const SymbolDistribution> psi,
                          std::span<const SymbolDistribution> phi, std::size_t* saturation) {
  check_batch(psi.size(), phi.size());
  double total = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    if (psi[i].size() != phi[i].size()) throw ShapeError("objective: alphabet sizes differ");
    for (std::size_t z = 0; z < psi[i].size(); ++z) {
      if (psi[i][z] == 0.0) continue;
      total += psi[i][z] * clamped_neg_log2(phi[i][z], saturation);
    }
  }
  return total / static_cast<double>(psi.size());
}

double entropy_of_mean(std::span<const SymbolDistribution> psi) {
  if (psi.empty()) throw ShapeError("objective: empty batch");
  std::vector<double> q(psi[0].size(), 0.0);
  for (const auto& p : psi) {
    if (p.size() != q.size()) throw ShapeError("objective: alphabet sizes differ");
    for (std::size_t z = 0; z < q.size(); ++z) q[z] += p[z];
  }
  for (auto& v : q) v /= static_cast<double>(psi.size());
  return entropy_bits(q);
}

double mean_entropy(std::span<const SymbolDistribution> dists) {
  if (dists.empty()) return 0.0;
  double s = 0.0;
  for (const auto& d : dists) s += entropy_bits(d);
  return s / static_cast<double>(dists.size());
}

double mi_lower_bound(const ObjectiveTerms& terms) {
  return terms.marginal_entropy_bits - terms.cross_entropy_bits;
}

// ---- tape nodes ----------------------------------------------------------------

template <typename T>
nn::Var cross_entropy_node(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                           std::span<const nn::Var> phi, std::size_t* saturation) {
  check_batch(psi.size(), phi.size());
  const double inv_n = 1.0 / static_cast<double>(psi.size());
  double total = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    auto ps = tape.value(psi[i]);
    auto ph = tape.value(phi[i]);
    if (ps.size() != ph.size()) throw ShapeError("objective: alphabet sizes differ");
    for (std::size_t z = 0; z < ps.size(); ++z) {
      if (ps[z] == T(0)) continue;
      total += static_cast<double>(ps[z]) * clamped_neg_log2(ph[z], saturation);
    }
  }
  std::vector<nn::Var> psi_v(psi.begin(), psi.end()), phi_v(phi.begin(), phi.end());
  return tape.push({static_cast<T>(total * inv_n)}, 1, 1,
                   [psi_v, phi_v, inv_n](nn::Tape<T>& t, nn::Var self) {
                     const double g = static_cast<double>(t.grad(self)[0]) * inv_n;
                     for (std::size_t i = 0; i < psi_v.size(); ++i) {
                       auto ps = t.value(psi_v[i]);
                       auto ph = t.value(phi_v[i]);
                       std::vector<T> d_psi(ps.size()), d_phi(ps.size());
                       for (std::size_t z = 0; z < ps.size(); ++z) {
                         const double p = static_cast<double>(ph[z]);
                         if (p < kLogClamp) {
                           d_psi[z] = static_cast<T>(g * -std::log2(kLogClamp));
                           d_phi[z] = T(0);
                         } else {
                           d_psi[z] = static_cast<T>(g * -std::log2(p));
                           d_phi[z] = static_cast<T>(-g * static_cast<double>(ps[z]) * kInvLn2 / p);
                         }
                       }
                       auto gps = t.grad(psi_v[i]);
                       for (std::size_t z = 0; z < d_psi.size(); ++z) gps[z] += d_psi[z];
                       auto gph = t.grad(phi_v[i]);
                       for (std::size_t z = 0; z < d_phi.size(); ++z) gph[z] += d_phi[z];
                     }
                   });
}

template <typename T>
nn::Var entropy_of_mean_node(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                             const MarginalPrior* prior) {
  if (psi.empty()) throw ShapeError("objective: empty batch");
  const std::size_t z_count = tape.value(psi[0]).size();
  std::vector<double> q(z_count, 0.0);
  double count = static_cast<double>(psi.size());
  if (prior && prior->count > 0.0) {
    if (prior->mass.size() != z_count) throw ShapeError("objective: prior mass size differs");
    for (std::size_t z = 0; z < z_count; ++z) q[z] = prior->mass[z];
    count += prior->count;
  }
  for (auto v : psi) {
    auto p = tape.value(v);
    if (p.size() != z_count) throw ShapeError("objective: alphabet sizes differ");
    for (std::size_t z = 0; z < z_count; ++z) q[z] += static_cast<double>(p[z]);
  }
  for (auto& v : q) v /= count;
  const double h = entropy_bits(q);
  // dH/dq_z = -(log2 q_z + 1/ln 2); each psi_i[z] enters q_z with weight 1/count.
  std::vector<double> dq(z_count);
  for (std::size_t z = 0; z < z_count; ++z)
    dq[z] = -(std::log2(std::max(q[z], kLogClamp)) + kInvLn2) / count;
  std::vector<nn::Var> psi_v(psi.begin(), psi.end());
  return tape.push({static_cast<T>(h)}, 1, 1,
                   [psi_v, dq = std::move(dq)](nn::Tape<T>& t, nn::Var self) {
                     const double g = static_cast<double>(t.grad(self)[0]);
                     std::vector<T> d(dq.size());
                     for (std::size_t z = 0; z < dq.size(); ++z) d[z] = static_cast<T>(g * dq[z]);
                     for (auto v : psi_v) {
                       auto gp = t.grad(v);
                       for (std::size_t z = 0; z < d.size(); ++z) gp[z] += d[z];
                     }
                   });
}

template <typename T>
nn::Var marginal_cross_entropy_node(nn::Tape<T>& tape, std::span<const nn::Var> psi, nn::Var theta,
                                    std::size_t* saturation) {
  if (psi.empty()) throw ShapeError("objective: empty batch");
  auto th = tape.value(theta);
  const std::size_t z_count = th.size();
  std::vector<double> nl(z_count);
  for (std::size_t z = 0; z < z_count; ++z) nl[z] = clamped_neg_log2(th[z], nullptr);
  std::vector<double> mean_psi(z_count, 0.0);
  for (auto v : psi) {
    auto p = tape.value(v);
    if (p.size() != z_count) throw ShapeError("objective: alphabet sizes differ");
    for (std::size_t z = 0; z < z_count; ++z) mean_psi[z] += static_cast<double>(p[z]);
  }
  const double inv_n = 1.0 / static_cast<double>(psi.size());
  double total = 0.0;
  for (std::size_t z = 0; z < z_count; ++z) {
    mean_psi[z] *= inv_n;
    total += mean_psi[z] * nl[z];
    if (saturation && static_cast<double>(th[z]) < kLogClamp && mean_psi[z] > 0.0) ++*saturation;
  }
  std::vector<nn::Var> psi_v(psi.begin(), psi.end());
  return tape.push({static_cast<T>(total)}, 1, 1,
                   [psi_v, theta, nl = std::move(nl), mean_psi = std::move(mean_psi), inv_n](
                       nn::Tape<T>& t, nn::Var self) {
                     const double g = static_cast<double>(t.grad(self)[0]);
                     std::vector<T> d(nl.size());
                     for (std::size_t z = 0; z < nl.size(); ++z) d[z] = static_cast<T>(g * inv_n * nl[z]);
                     for (auto v : psi_v) {
                       auto gp = t.grad(v);
                       for (std::size_t z = 0; z < d.size(); ++z) gp[z] += d[z];
                     }
                     auto th = t.value(theta);
                     auto gt = t.grad(theta);
                     for (std::size_t z = 0; z < nl.size(); ++z) {
                       const double p = static_cast<double>(th[z]);
                       if (p >= kLogClamp) gt[z] += static_cast<T>(-g * mean_psi[z] * kInvLn2 / p);
                     }
                   });
}

template <typename T>
LossResult<T> utterance_loss(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                             std::span<const nn::Var> phi, const MarginalPrior* prior) {
  LossResult<T> r;
  const nn::Var ce = cross_entropy_node(tape, psi, phi, &r.terms.saturation_count);
  const nn::Var h = entropy_of_mean_node(tape, psi, prior);
  r.loss = nn::sub(tape, ce, h);
  r.terms.cross_entropy_bits = static_cast<double>(tape.scalar(ce));
  r.terms.marginal_entropy_bits = static_cast<double>(tape.scalar(h));
  r.terms.loss = static_cast<double>(tape.scalar(r.loss));
  r.terms.mi_bound_bits = mi_lower_bound(r.terms);
  r.terms.windows = psi.size();
  return r;
}

template <typename T>
AdversarialResult<T> adversarial_loss(nn::Tape<T>& tape, std::span<const nn::Var> psi,
                                      std::span<const nn::Var> phi, nn::Var theta,
                                      const MarginalPrior* prior) {
  AdversarialResult<T> r;
  const nn::Var ce = cross_entropy_node(tape, psi, phi, &r.terms.saturation_count);
  const nn::Var theta_fixed = tape.detach(theta);
  const nn::Var h_plus = marginal_cross_entropy_node(tape, psi, theta_fixed, &r.terms.saturation_count);
  r.psi_phi_loss = nn::sub(tape, ce, h_plus);

  std::vector<nn::Var> psi_fixed;
  psi_fixed.reserve(psi.size());
  for (auto v : psi) psi_fixed.push_back(tape.detach(v));
  r.theta_loss = marginal_cross_entropy_node<T>(tape, psi_fixed, theta);

  // The reported marginal entropy is the plain batch entropy; the node below
  // carries no gradient into the losses above.
  const nn::Var h = entropy_of_mean_node<T>(tape, psi_fixed, prior);
  r.terms.cross_entropy_bits = static_cast<double>(tape.scalar(ce));
  r.terms.marginal_entropy_bits = static_cast<double>(tape.scalar(h));
  r.terms.adversarial_marginal_bits = static_cast<double>(tape.scalar(h_plus));
  r.terms.loss = static_cast<double>(tape.scalar(r.psi_phi_loss));
  r.terms.mi_bound_bits = mi_lower_bound(r.terms);
  r.terms.windows = psi.size();
  return r;
}

#define ITCT_INSTANTIATE(T)                                                                      \
  template nn::Var cross_entropy_node<T>(nn::Tape<T>&, std::span<const nn::Var>,                 \
                                         std::span<const nn::Var>, std::size_t*);                \
  template nn::Var entropy_of_mean_node<T>(nn::Tape<T>&, std::span<const nn::Var>,               \
                                           const MarginalPrior*);                                \
  template nn::Var marginal_cross_entropy_node<T>(nn::Tape<T>&, std::span<const nn::Var>,        \
                                                  nn::Var, std::size_t*);                        \
  template LossResult<T> utterance_loss<T>(nn::Tape<T>&, std::span<const nn::Var>,               \
                                           std::span<const nn::Var>, const MarginalPrior*);      \
  template AdversarialResult<T> adversarial_loss<T>(nn::Tape<T>&, std::span<const nn::Var>,      \
                                                    std::span<const nn::Var>, nn::Var,           \
                                                    const MarginalPrior*);

ITCT_INSTANTIATE(float)
ITCT_INSTANTIATE(double)

#undef ITCT_INSTANTIATE

}  // namespace itct
