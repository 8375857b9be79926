#include "itct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace itct {

const char* to_string(TrainMode m) { return m == TrainMode::Base ? "base" : "adversarial"; }
const char* to_string(EntropyMode m) {
  return m == EntropyMode::PerUtterance ? "per_utterance" : "global";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "base") return TrainMode::Base;
  if (s == "adversarial") return TrainMode::Adversarial;
  throw ConfigError("unknown mode '" + s + "' (expected base or adversarial)");
}

EntropyMode parse_entropy_mode(const std::string& s) {
  std::string t = s;
  std::replace(t.begin(), t.end(), '-', '_');
  if (t == "per_utterance") return EntropyMode::PerUtterance;
  if (t == "global") return EntropyMode::Global;
  throw ConfigError("unknown entropy mode '" + s + "' (expected per-utterance or global)");
}

std::vector<LrSegment> parse_lr_schedule(const std::string& text) {
  std::vector<LrSegment> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    LrSegment seg;
    char c1 = 0, c2 = 0;
    std::istringstream f(item);
    if (!(f >> seg.begin >> c1 >> seg.end >> c2 >> seg.lr) || c1 != ':' || c2 != ':')
      throw ConfigError("bad lr schedule segment '" + item + "' (expected begin:end:lr)");
    out.push_back(seg);
  }
  if (out.empty()) throw ConfigError("empty lr schedule");
  return out;
}

void TrainConfig::validate() const {
  geometry.validate();
  if (alphabet_size < 2) throw ConfigError("alphabet_size must be >= 2");
  if (hidden_dim == 0) throw ConfigError("hidden_dim must be >= 1");
  if (lr_schedule.empty()) throw ConfigError("lr schedule is empty");
  if (lr_schedule.front().begin != 0.0) throw ConfigError("lr schedule must start at 0");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    const auto& s = lr_schedule[i];
    if (!(s.lr > 0.0)) throw ConfigError("lr schedule rates must be positive");
    if (!(s.end > s.begin)) throw ConfigError("lr schedule segments must have end > begin");
    if (i > 0 && lr_schedule[i - 1].end != s.begin)
      throw ConfigError("lr schedule segments must be contiguous");
  }
  if (clone_at && (*clone_at < 0.0 || *clone_at > schedule_end()))
    throw ConfigError("clone_at must fall inside the schedule");
  if (!(dead_threshold > 0.0 && dead_threshold < 1.0))
    throw ConfigError("dead_threshold must lie in (0, 1)");
  if (!(clone_noise_sigma >= 0.0)) throw ConfigError("clone_noise_sigma must be >= 0");
}

double TrainConfig::lr_at(double hundreds) const {
  for (const auto& s : lr_schedule)
    if (hundreds >= s.begin && hundreds < s.end) return s.lr;
  return lr_schedule.back().lr;
}

nlohmann::json to_json(const TrainConfig& c) {
  auto sched = nlohmann::json::array();
  for (const auto& s : c.lr_schedule) sched.push_back({s.begin, s.end, s.lr});
  return {{"geometry",
           {{"total", c.geometry.total},
            {"past", c.geometry.past},
            {"gap", c.geometry.gap},
            {"future", c.geometry.future}}},
          {"alphabet_size", c.alphabet_size},
          {"hidden_dim", c.hidden_dim},
          {"lr_schedule", sched},
          {"clone_at", c.clone_at ? nlohmann::json(*c.clone_at) : nlohmann::json(nullptr)},
          {"dead_threshold", c.dead_threshold},
          {"clone_noise_sigma", c.clone_noise_sigma},
          {"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"entropy_mode", to_string(c.entropy_mode)},
          {"global_buffer", c.global_buffer},
          {"normalize", c.normalize}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      c.geometry.total = g.value("total", c.geometry.total);
      c.geometry.past = g.value("past", c.geometry.past);
      c.geometry.gap = g.value("gap", c.geometry.gap);
      c.geometry.future = g.value("future", c.geometry.future);
    }
    c.alphabet_size = j.value("alphabet_size", c.alphabet_size);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    if (j.contains("lr_schedule")) {
      const auto& s = j.at("lr_schedule");
      c.lr_schedule.clear();
      if (s.is_string()) {
        c.lr_schedule = parse_lr_schedule(s.get<std::string>());
      } else {
        for (const auto& seg : s) {
          if (seg.is_array())
            c.lr_schedule.push_back({seg.at(0).get<double>(), seg.at(1).get<double>(),
                                     seg.at(2).get<double>()});
          else
            c.lr_schedule.push_back({seg.at("begin").get<double>(), seg.at("end").get<double>(),
                                     seg.at("lr").get<double>()});
        }
      }
    }
    if (j.contains("clone_at")) {
      if (j.at("clone_at").is_null())
        c.clone_at.reset();
      else
        c.clone_at = j.at("clone_at").get<double>();
    }
    c.dead_threshold = j.value("dead_threshold", c.dead_threshold);
    c.clone_noise_sigma = j.value("clone_noise_sigma", c.clone_noise_sigma);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
    if (j.contains("entropy_mode"))
      c.entropy_mode = parse_entropy_mode(j.at("entropy_mode").get<std::string>());
    c.global_buffer = j.value("global_buffer", c.global_buffer);
    c.normalize = j.value("normalize", c.normalize);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  return c;
}

TrainState initial_state(const TrainConfig& config, std::size_t input_dim) {
  config.validate();
  TrainState s;
  s.config = config;
  s.dims = {input_dim, config.hidden_dim, config.alphabet_size};
  s.params = init_encoder_params<float>(s.dims, config.seed);
  s.rng.seed(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t z = config.alphabet_size;
  s.max_psi.assign(z, 0.0f);
  s.max_phi.assign(z, 0.0f);
  s.mass_psi.assign(z, 0.0);
  s.live_mask.assign(z, true);
  return s;
}

// ---- death and cloning ---------------------------------------------------------

std::vector<bool> live_mask_from_maxima(std::span<const float> max_psi,
                                        std::span<const float> max_phi, double threshold) {
  std::vector<bool> live(max_psi.size());
  for (std::size_t z = 0; z < live.size(); ++z)
    live[z] = !(max_psi[z] < threshold && max_phi[z] < threshold);
  return live;
}

std::vector<bool> detect_dead_symbols(const nn::ParamStore<float>& params,
                                      std::span<const WindowPair> sample, double threshold) {
  const std::size_t z = dims_of(params).alphabet_size;
  std::vector<float> max_psi(z, 0.0f), max_phi(z, 0.0f);
  for (const auto& w : sample) {
    const auto p = encode_forward(params, Side::Psi, w.y);
    const auto q = encode_forward(params, Side::Phi, w.x);
    for (std::size_t k = 0; k < z; ++k) {
      max_psi[k] = std::max(max_psi[k], p[k]);
      max_phi[k] = std::max(max_phi[k], q[k]);
    }
  }
  return live_mask_from_maxima(max_psi, max_phi, threshold);
}

std::vector<CloneEvent> clone_symbols(nn::ParamStore<float>& params, std::vector<bool>& live_mask,
                                      std::span<const double> marginal, double sigma,
                                      std::mt19937_64& rng, std::uint64_t step) {
  const std::size_t z = live_mask.size();
  if (marginal.size() != z) throw ShapeError("clone_symbols: marginal size differs from alphabet");
  std::vector<std::size_t> live, dead;
  for (std::size_t k = 0; k < z; ++k) (live_mask[k] ? live : dead).push_back(k);
  std::stable_sort(live.begin(), live.end(),
                   [&](std::size_t a, std::size_t b) { return marginal[a] > marginal[b]; });
  const std::size_t pairs = std::min(live.size(), dead.size());

  std::normal_distribution<double> noise(0.0, 1.0);
  auto jitter = [&]() { return sigma > 0.0 ? static_cast<float>(sigma * noise(rng)) : 0.0f; };

  std::vector<CloneEvent> events;
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t src = live[i], dst = dead[i];
    for (Side side : {Side::Psi, Side::Phi}) {
      auto& W = params.at(out_weight_name(side));
      for (std::size_t c = 0; c < W.cols; ++c)
        W.value[dst * W.cols + c] = W.value[src * W.cols + c] + jitter();
      auto& b = params.at(out_bias_name(side));
      b.value[dst] = b.value[src] + jitter();
    }
    auto& theta = params.at(kThetaLogits);
    theta.value[dst] = theta.value[src] + jitter();
    live_mask[dst] = true;
    events.push_back({step, src, dst});
  }
  return events;
}

std::vector<CloneEvent> clone_symbols(TrainState& state) {
  const bool have_last = !state.last_marginal.empty();
  std::vector<double> marginal = have_last ? state.last_marginal : state.mass_psi;
  if (!have_last && state.mass_count > 0.0)
    for (auto& v : marginal) v /= state.mass_count;
  if (!have_last && state.mass_count > 0.0)
    state.live_mask =
        live_mask_from_maxima(state.max_psi, state.max_phi, state.config.dead_threshold);
  auto events = clone_symbols(state.params, state.live_mask, marginal,
                              state.config.clone_noise_sigma, state.rng, state.step);
  state.cloned = true;
  state.clone_history.insert(state.clone_history.end(), events.begin(), events.end());
  return events;
}

// ---- trainer -------------------------------------------------------------------

Trainer::Trainer(const Corpus& corpus, const TrainConfig& config) {
  config.validate();
  if (corpus.utterances.empty()) throw DataError("training corpus is empty");
  state_ = initial_state(config, corpus.utterances.front().dim());
  prepare(corpus);
  reshuffle();
}

Trainer::Trainer(const Corpus& corpus, TrainState state) : state_(std::move(state)) {
  state_.config.validate();
  if (corpus.utterances.empty()) throw DataError("training corpus is empty");
  if (corpus.utterances.front().dim() != state_.dims.input_dim)
    throw DataError("corpus feature dimension " + std::to_string(corpus.utterances.front().dim()) +
                    " does not match the checkpoint's " + std::to_string(state_.dims.input_dim));
  prepare(corpus);
  if (state_.order.size() != utterances_.size())
    throw DataError("checkpoint was taken on a corpus with a different number of usable utterances");
}

void Trainer::prepare(const Corpus& corpus) {
  const auto& g = state_.config.geometry;
  stride_ = corpus.placement_stride;
  for (const auto& u : corpus.utterances) {
    if (u.dim() != state_.dims.input_dim)
      throw DataError("utterance '" + u.id + "' has feature dimension " + std::to_string(u.dim()) +
                      ", expected " + std::to_string(state_.dims.input_dim));
    if (u.num_frames() < g.total) {
      warnings_.push_back("skipping utterance '" + u.id + "': " + std::to_string(u.num_frames()) +
                          " frames is shorter than the " + std::to_string(g.total) +
                          "-frame window");
      continue;
    }
    utterances_.push_back(state_.config.normalize ? normalize_utterance(u) : u);
  }
  if (utterances_.empty()) throw DataError("no utterance is long enough for the window geometry");
}

void Trainer::reshuffle() {
  state_.order.resize(utterances_.size());
  std::iota(state_.order.begin(), state_.order.end(), std::size_t{0});
  std::shuffle(state_.order.begin(), state_.order.end(), state_.rng);
  state_.position = 0;
}

bool Trainer::done() const { return state_.hundreds() >= state_.config.schedule_end(); }

ObjectiveTerms Trainer::step(const MetricsSink& sink) {
  if (done()) throw Error("training schedule already finished");
  auto& s = state_;
  const auto& cfg = s.config;
  const Utterance& u = utterances_[s.order[s.position]];
  const auto windows = windows_of(u, cfg.geometry, stride_);
  const float lr = static_cast<float>(cfg.lr_at(s.hundreds()));
  const std::size_t z_count = cfg.alphabet_size;

  nn::Tape<float> tape;
  const EncoderVars psi_enc = bind_encoder(tape, s.params, Side::Psi);
  const EncoderVars phi_enc = bind_encoder(tape, s.params, Side::Phi);
  std::vector<nn::Var> psi, phi;
  psi.reserve(windows.size());
  phi.reserve(windows.size());
  for (const auto& w : windows) {
    psi.push_back(encode(tape, psi_enc, w.y));
    phi.push_back(encode(tape, phi_enc, w.x));
  }

  MarginalPrior prior;
  const MarginalPrior* prior_ptr = nullptr;
  if (cfg.entropy_mode == EntropyMode::Global && !s.global_buffer.empty()) {
    prior.mass.assign(z_count, 0.0);
    for (const auto& b : s.global_buffer) {
      for (std::size_t k = 0; k < z_count; ++k) prior.mass[k] += b.mass[k];
      prior.count += b.count;
    }
    prior_ptr = &prior;
  }

  ObjectiveTerms terms;
  if (cfg.mode == TrainMode::Base) {
    auto r = utterance_loss<float>(tape, psi, phi, prior_ptr);
    tape.backward(r.loss);
    nn::sgd_apply(s.params, lr);
    terms = r.terms;
  } else {
    // Theta steps first against this batch, then Psi and Phi step against the
    // updated Theta.
    auto first = adversarial_loss<float>(tape, psi, phi, marginal_theta(tape, s.params), prior_ptr);
    tape.backward(first.theta_loss);
    nn::sgd_apply(s.params, lr, "theta.");
    auto second = adversarial_loss<float>(tape, psi, phi, marginal_theta(tape, s.params), prior_ptr);
    tape.backward(second.psi_phi_loss);
    nn::sgd_apply(s.params, lr, "psi.");
    nn::sgd_apply(s.params, lr, "phi.");
    terms = second.terms;
  }

  std::vector<double> utt_mass(z_count, 0.0);
  for (std::size_t i = 0; i < psi.size(); ++i) {
    auto p = tape.value(psi[i]);
    auto q = tape.value(phi[i]);
    for (std::size_t k = 0; k < z_count; ++k) {
      s.max_psi[k] = std::max(s.max_psi[k], p[k]);
      s.max_phi[k] = std::max(s.max_phi[k], q[k]);
      utt_mass[k] += static_cast<double>(p[k]);
    }
  }
  for (std::size_t k = 0; k < z_count; ++k) s.mass_psi[k] += utt_mass[k];
  s.mass_count += static_cast<double>(psi.size());
  if (cfg.entropy_mode == EntropyMode::Global) {
    s.global_buffer.push_back({std::move(utt_mass), static_cast<double>(psi.size())});
    while (s.global_buffer.size() > cfg.global_buffer) s.global_buffer.pop_front();
  }

  auto& acc = s.epoch_stats;
  acc.cross_entropy += terms.cross_entropy_bits;
  acc.marginal_entropy += terms.marginal_entropy_bits;
  acc.mi_bound += terms.mi_bound_bits;
  acc.loss += terms.loss;
  acc.minibatches += 1;
  acc.windows += terms.windows;
  acc.saturation += terms.saturation_count;

  if (sink) {
    nlohmann::json rec = {{"type", "minibatch"},
                          {"utterance_id", u.id},
                          {"step", s.step},
                          {"epoch", s.epoch},
                          {"lr", static_cast<double>(lr)},
                          {"cross_entropy_bits", terms.cross_entropy_bits},
                          {"marginal_entropy_bits", terms.marginal_entropy_bits},
                          {"mi_bound_bits", terms.mi_bound_bits},
                          {"loss_bits", terms.loss},
                          {"saturation_count", terms.saturation_count},
                          {"windows", terms.windows}};
    if (terms.adversarial_marginal_bits)
      rec["adversarial_marginal_bits"] = *terms.adversarial_marginal_bits;
    sink(rec);
  }

  s.step += 1;
  s.position += 1;
  if (s.position == s.order.size()) finish_epoch(sink);

  if (cfg.clone_at && !s.cloned && s.hundreds() >= *cfg.clone_at) {
    const auto events = clone_symbols(s);
    if (sink) {
      auto pairs = nlohmann::json::array();
      for (const auto& e : events) pairs.push_back({e.source, e.target});
      std::size_t live = 0;
      for (bool b : s.live_mask) live += b ? 1 : 0;
      sink({{"type", "clone"}, {"step", s.step}, {"pairs", pairs}, {"live_symbols", live}});
    }
  }

  if (done() && s.position > 0) finish_epoch(sink);
  return terms;
}

void Trainer::finish_epoch(const MetricsSink& sink) {
  auto& s = state_;
  const bool partial = s.position != s.order.size();
  s.live_mask = live_mask_from_maxima(s.max_psi, s.max_phi, s.config.dead_threshold);
  std::size_t live = 0;
  for (bool b : s.live_mask) live += b ? 1 : 0;
  if (sink) {
    const auto& a = s.epoch_stats;
    const double n = a.minibatches > 0 ? static_cast<double>(a.minibatches) : 1.0;
    sink({{"type", "epoch"},
          {"epoch", s.epoch},
          {"step", s.step},
          {"partial", partial},
          {"minibatches", a.minibatches},
          {"windows", a.windows},
          {"cross_entropy_bits", a.cross_entropy / n},
          {"marginal_entropy_bits", a.marginal_entropy / n},
          {"mi_bound_bits", a.mi_bound / n},
          {"loss_bits", a.loss / n},
          {"saturation_count", a.saturation},
          {"live_symbols", live}});
  }
  s.last_max_psi = s.max_psi;
  s.last_max_phi = s.max_phi;
  s.last_marginal = s.mass_psi;
  if (s.mass_count > 0.0)
    for (auto& v : s.last_marginal) v /= s.mass_count;
  std::fill(s.max_psi.begin(), s.max_psi.end(), 0.0f);
  std::fill(s.max_phi.begin(), s.max_phi.end(), 0.0f);
  std::fill(s.mass_psi.begin(), s.mass_psi.end(), 0.0);
  s.mass_count = 0.0;
  s.epoch_stats = {};
  s.epoch += 1;
  reshuffle();
}

void Trainer::run(const MetricsSink& sink, std::optional<std::uint64_t> max_steps) {
  std::uint64_t n = 0;
  while (!done() && (!max_steps || n < *max_steps)) {
    step(sink);
    ++n;
  }
}

TrainState train(const Corpus& corpus, const TrainConfig& config, const MetricsSink& sink) {
  Trainer t(corpus, config);
  t.run(sink);
  return t.state();
}

}  // namespace itct
