#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "itct/corpus.hpp"
#include "itct/model.hpp"
#include "itct/objective.hpp"

namespace itct {

enum class TrainMode { Base, Adversarial };
enum class EntropyMode { PerUtterance, Global };

const char* to_string(TrainMode m);
const char* to_string(EntropyMode m);
TrainMode parse_train_mode(const std::string& s);
EntropyMode parse_entropy_mode(const std::string& s);  // accepts '-' or '_'

// Learning rate `lr` while the count of processed utterances, in hundreds,
// lies in [begin, end).
struct LrSegment {
  double begin = 0.0;
  double end = 0.0;
  double lr = 0.0;

  friend bool operator==(const LrSegment&, const LrSegment&) = default;
};

// Parses "begin:end:lr,begin:end:lr,...".
std::vector<LrSegment> parse_lr_schedule(const std::string& text);

struct TrainConfig {
  WindowGeometry geometry;
  std::size_t alphabet_size = 64;
  std::size_t hidden_dim = 64;
  std::vector<LrSegment> lr_schedule = {
      {0, 432, 0.4}, {432, 540, 0.2}, {540, 900, 0.1}, {900, 1080, 0.05}};
  std::optional<double> clone_at = 216.0;  // hundreds of utterances; nullopt disables
  double dead_threshold = 1e-3;
  double clone_noise_sigma = 0.01;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Base;
  EntropyMode entropy_mode = EntropyMode::PerUtterance;
  std::size_t global_buffer = 16;  // earlier utterances folded into the global marginal
  bool normalize = true;

  void validate() const;
  double schedule_end() const { return lr_schedule.back().end; }
  double lr_at(double hundreds) const;
};

nlohmann::json to_json(const TrainConfig& c);
// Fields absent from `j` keep the values of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct CloneEvent {
  std::uint64_t step = 0;
  std::size_t source = 0;
  std::size_t target = 0;
};

struct EpochAccumulator {
  double cross_entropy = 0.0;
  double marginal_entropy = 0.0;
  double mi_bound = 0.0;
  double loss = 0.0;
  std::uint64_t minibatches = 0;
  std::uint64_t windows = 0;
  std::uint64_t saturation = 0;
};

struct TrainState {
  TrainConfig config;
  ModelDims dims;
  nn::ParamStore<float> params;

  std::uint64_t step = 0;   // utterances processed
  std::uint64_t epoch = 0;  // completed epochs
  std::size_t position = 0; // next index into `order`
  std::vector<std::size_t> order;

  // Per-symbol running maxima of P_Psi(z|y), P_Phi(z|x) and the summed Psi
  // mass over the current epoch, and the same for the last completed epoch.
  std::vector<float> max_psi, max_phi;
  std::vector<double> mass_psi;
  double mass_count = 0.0;
  std::vector<float> last_max_psi, last_max_phi;
  std::vector<double> last_marginal;

  std::vector<bool> live_mask;
  bool cloned = false;
  std::vector<CloneEvent> clone_history;
  EpochAccumulator epoch_stats;

  struct BufferedMass {
    std::vector<double> mass;
    double count = 0.0;
  };
  std::deque<BufferedMass> global_buffer;

  std::mt19937_64 rng;

  double hundreds() const { return static_cast<double>(step) / 100.0; }
};

// Fresh state: parameters initialised from the seed, every symbol live.
TrainState initial_state(const TrainConfig& config, std::size_t input_dim);

using MetricsSink = std::function<void(const nlohmann::json&)>;

class Trainer {
 public:
  Trainer(const Corpus& corpus, const TrainConfig& config);
  // Resume; the state's config governs.
  Trainer(const Corpus& corpus, TrainState state);

  bool done() const;
  // Trains on the next utterance. Emits a minibatch record, plus epoch and
  // clone records when those events fire.
  ObjectiveTerms step(const MetricsSink& sink);
  // Steps until the schedule ends or `max_steps` further steps have run.
  void run(const MetricsSink& sink, std::optional<std::uint64_t> max_steps = std::nullopt);

  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  std::size_t usable_utterances() const { return utterances_.size(); }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  void prepare(const Corpus& corpus);
  void finish_epoch(const MetricsSink& sink);
  void reshuffle();

  TrainState state_;
  std::vector<Utterance> utterances_;
  std::size_t stride_ = 1;
  std::vector<std::string> warnings_;
};

// Symbol z is dead iff max_window P_Psi(z|y) < threshold and max_window
// P_Phi(z|x) < threshold. Returns the live mask.
std::vector<bool> detect_dead_symbols(const nn::ParamStore<float>& params,
                                      std::span<const WindowPair> sample, double threshold);
std::vector<bool> live_mask_from_maxima(std::span<const float> max_psi,
                                        std::span<const float> max_phi, double threshold);

// Copies the output-layer rows and biases (Psi, Phi) and the Theta logit of
// live symbols into dead slots, then perturbs the copies with N(0, sigma).
// Live symbols are taken in descending `marginal` order (ties by index) and
// paired with dead slots in ascending index order; min(live, dead) pairs are
// cloned. Targets become live.
std::vector<CloneEvent> clone_symbols(nn::ParamStore<float>& params, std::vector<bool>& live_mask,
                                      std::span<const double> marginal, double sigma,
                                      std::mt19937_64& rng, std::uint64_t step = 0);
// Uses the last completed epoch's statistics (or the current epoch's when no
// epoch has completed) and records history.
std::vector<CloneEvent> clone_symbols(TrainState& state);

// Versioned binary checkpoint: "ITCK", u32 version, u32 header length, JSON
// header, u32 entry count, then per entry (name, u32 rows, u32 cols, f32
// data), then a CRC32 of everything before it. Little-endian.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

// Convenience: runs training to the end of the schedule.
TrainState train(const Corpus& corpus, const TrainConfig& config, const MetricsSink& sink);

}  // namespace itct
