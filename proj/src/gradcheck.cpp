#include "itct/gradcheck.hpp"

#include <functional>
#include <random>

#include "itct/model.hpp"
#include "itct/numerics.hpp"
#include "itct/objective.hpp"

namespace itct {

namespace {

using Store = nn::ParamStore<double>;
using Tape = nn::Tape<double>;

enum class TrainModeForCheck { Base, Global, AdversarialPsiPhi, AdversarialTheta };

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void randomize(Store& store, std::mt19937_64& rng, double scale) {
  for (auto& e : store.entries()) e.value = random_vector(rng, e.size(), scale);
}

Matrix<double> random_frames(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Matrix<double> m(rows, cols);
  m.data = random_vector(rng, rows * cols);
  return m;
}

struct Case {
  const char* name;
  std::function<nn::LossAndGrad(Store&, std::mt19937_64&)> build;
};

std::vector<Case> cases() {
  std::vector<Case> out;

  out.push_back({"affine", [](Store& s, std::mt19937_64& rng) {
                   s.add("W", 4, 3);
                   s.add("b", 4, 1);
                   s.add("v", 3, 1);
                   randomize(s, rng, 1.0);
                   auto c = random_vector(rng, 4);
                   return nn::LossAndGrad([c](Store& p) {
                     Tape t;
                     auto y = nn::affine(t, t.param(p, "W"), t.param(p, "b"), t.param(p, "v"));
                     auto l = nn::weighted_sum(t, y, c);
                     t.backward(l);
                     return t.scalar(l);
                   });
                 }});

  out.push_back({"softmax", [](Store& s, std::mt19937_64& rng) {
                   s.add("logits", 8, 1);
                   randomize(s, rng, 2.0);
                   auto c = random_vector(rng, 8);
                   return nn::LossAndGrad([c](Store& p) {
                     Tape t;
                     auto l = nn::weighted_sum(t, nn::softmax(t, t.param(p, "logits")), c);
                     t.backward(l);
                     return t.scalar(l);
                   });
                 }});

  out.push_back({"gru_cell", [](Store& s, std::mt19937_64& rng) {
                   nn::add_gru_params(s, "g.", 3, 4);
                   s.add("h", 4, 1);
                   s.add("v", 3, 1);
                   randomize(s, rng, 0.7);
                   auto c = random_vector(rng, 4);
                   return nn::LossAndGrad([c](Store& p) {
                     Tape t;
                     auto g = nn::bind_gru(t, p, "g.");
                     auto h = nn::gru_cell(t, g, t.param(p, "h"), t.param(p, "v"));
                     auto l = nn::weighted_sum(t, h, c);
                     t.backward(l);
                     return t.scalar(l);
                   });
                 }});

  out.push_back({"gru_sequence_15", [](Store& s, std::mt19937_64& rng) {
                   nn::add_gru_params(s, "g.", 3, 5);
                   randomize(s, rng, 0.5);
                   auto frames = random_frames(rng, 15, 3);
                   auto c = random_vector(rng, 5);
                   return nn::LossAndGrad([c, frames](Store& p) {
                     Tape t;
                     auto g = nn::bind_gru(t, p, "g.");
                     auto l = nn::weighted_sum(t, nn::gru_sequence(t, g, frames), c);
                     t.backward(l);
                     return t.scalar(l);
                   });
                 }});

  out.push_back({"cross_entropy", [](Store& s, std::mt19937_64& rng) {
                   for (int i = 0; i < 3; ++i) {
                     s.add("psi" + std::to_string(i), 6, 1);
                     s.add("phi" + std::to_string(i), 6, 1);
                   }
                   randomize(s, rng, 1.5);
                   return nn::LossAndGrad([](Store& p) {
                     Tape t;
                     std::vector<nn::Var> psi, phi;
                     for (int i = 0; i < 3; ++i) {
                       psi.push_back(nn::softmax(t, t.param(p, "psi" + std::to_string(i))));
                       phi.push_back(nn::softmax(t, t.param(p, "phi" + std::to_string(i))));
                     }
                     auto l = cross_entropy_node<double>(t, psi, phi);
                     t.backward(l);
                     return t.scalar(l);
                   });
                 }});

  out.push_back({"entropy_of_mean", [](Store& s, std::mt19937_64& rng) {
                   for (int i = 0; i < 4; ++i) s.add("psi" + std::to_string(i), 6, 1);
                   randomize(s, rng, 1.5);
                   return nn::LossAndGrad([](Store& p) {
                     Tape t;
                     std::vector<nn::Var> psi;
                     for (int i = 0; i < 4; ++i)
                       psi.push_back(nn::softmax(t, t.param(p, "psi" + std::to_string(i))));
                     auto l = entropy_of_mean_node<double>(t, psi);
                     t.backward(l);
                     return t.scalar(l);
                   });
                 }});

  // Full co-training loss on a 2-window toy batch with 15-frame sides.
  //
  // In adversarial form each loss carries gradient to one parameter group only
  // (the other side is detached), so each is checked against its own group with
  // the remaining parameters held in a separate, fixed store.
  auto full = [](const char* name, TrainModeForCheck mode) {
    return Case{name, [mode](Store& s, std::mt19937_64& rng) {
                  const ModelDims dims{3, 5, 6};
                  Store model = make_encoder_params<double>(dims);
                  randomize(model, rng, 0.6);
                  std::vector<Matrix<double>> xs, ys;
                  for (int w = 0; w < 2; ++w) {
                    xs.push_back(random_frames(rng, 15, 3));
                    ys.push_back(random_frames(rng, 15, 3));
                  }
                  MarginalPrior prior;
                  prior.mass = random_vector(rng, 6);
                  for (auto& v : prior.mass) v = std::abs(v) + 0.1;
                  prior.count = 3.0;
                  double mass = 0.0;
                  for (double v : prior.mass) mass += v;
                  for (auto& v : prior.mass) v *= prior.count / mass;

                  // `s` holds the checked group, `fixed` everything else.
                  Store fixed;
                  for (const auto& e : model.entries()) {
                    const bool is_theta = e.name == kThetaLogits;
                    const bool checked = mode == TrainModeForCheck::AdversarialTheta ? is_theta : !is_theta;
                    auto& dst = (checked ? s : fixed).add(e.name, e.rows, e.cols);
                    dst.value = e.value;
                  }
                  return nn::LossAndGrad([=](Store& p) mutable {
                    Store& enc_store = mode == TrainModeForCheck::AdversarialTheta ? fixed : p;
                    Store& theta_store = mode == TrainModeForCheck::AdversarialTheta ? p : fixed;
                    Tape t;
                    auto pe = bind_encoder(t, enc_store, Side::Psi);
                    auto fe = bind_encoder(t, enc_store, Side::Phi);
                    std::vector<nn::Var> psi, phi;
                    for (int w = 0; w < 2; ++w) {
                      psi.push_back(encode(t, pe, ys[w]));
                      phi.push_back(encode(t, fe, xs[w]));
                    }
                    nn::Var l;
                    switch (mode) {
                      case TrainModeForCheck::AdversarialPsiPhi:
                        l = adversarial_loss<double>(t, psi, phi, marginal_theta(t, theta_store)).psi_phi_loss;
                        break;
                      case TrainModeForCheck::AdversarialTheta:
                        l = adversarial_loss<double>(t, psi, phi, marginal_theta(t, theta_store)).theta_loss;
                        break;
                      case TrainModeForCheck::Global:
                        l = utterance_loss<double>(t, psi, phi, &prior).loss;
                        break;
                      case TrainModeForCheck::Base:
                        l = utterance_loss<double>(t, psi, phi).loss;
                        break;
                    }
                    t.backward(l);
                    fixed.zero_grad();
                    return t.scalar(l);
                  });
                }};
  };
  out.push_back(full("utterance_loss", TrainModeForCheck::Base));
  out.push_back(full("utterance_loss_global", TrainModeForCheck::Global));
  out.push_back(full("adversarial_psi_phi_loss", TrainModeForCheck::AdversarialPsiPhi));
  out.push_back(full("adversarial_theta_loss", TrainModeForCheck::AdversarialTheta));
  return out;
}

}  // namespace

bool GradCheckReport::passed() const {
  for (const auto& c : cases)
    if (!c.passed) return false;
  return !cases.empty();
}

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
  GradCheckReport report;
  report.threshold = options.threshold;
  const auto all = cases();
  for (std::size_t k = 0; k < options.seeds; ++k) {
    const std::uint64_t seed = options.seed + k;
    for (std::size_t ci = 0; ci < all.size(); ++ci) {
      std::mt19937_64 rng(seed * 1000003ULL + ci);
      Store store;
      nn::LossAndGrad loss = all[ci].build(store, rng);
      if (options.inject_fault) {
        loss = [inner = loss](Store& p) {
          const double v = inner(p);
          p.entries()[0].grad[0] += 0.5;
          return v;
        };
      }
      const auto r = nn::finite_diff_check(loss, store, options.epsilon);
      GradCheckCase c;
      c.name = all[ci].name;
      c.seed = seed;
      c.max_rel_error = r.max_rel_error;
      c.worst_entry = r.worst_entry;
      c.coordinates = r.coordinates;
      c.passed = r.max_rel_error < options.threshold;
      report.cases.push_back(std::move(c));
    }
  }
  return report;
}

}  // namespace itct
