#include "doctest.h"

#include <fstream>

#include "itct/error.hpp"
#include "itct/objective.hpp"
#include "itct/trainer.hpp"
#include "oracles.hpp"

using namespace itct;
using nlohmann::json;

namespace {

Corpus small_corpus(std::size_t utterances = 6, std::size_t windows = 4, std::uint64_t seed = 3) {
  auto spec = SyntheticSpec::identity(4);
  spec.num_utterances = utterances;
  spec.windows_per_utterance = windows;
  spec.seed = seed;
  return synth_corpus(spec).corpus;
}

TrainConfig small_config() {
  TrainConfig c;
  c.alphabet_size = 16;
  c.hidden_dim = 8;
  c.lr_schedule = {{0, 0.24, 0.4}, {0.24, 0.36, 0.2}};
  c.clone_at = 0.12;
  c.seed = 9;
  return c;
}

std::vector<std::string> run_records(const Corpus& corpus, const TrainConfig& cfg) {
  std::vector<std::string> out;
  train(corpus, cfg, [&](const json& r) { out.push_back(r.dump()); });
  return out;
}

bool same_params(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.value.size() != y.value.size()) return false;
    if (std::memcmp(x.value.data(), y.value.data(), x.value.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

// Psi and Phi outputs, in double, for a fixed list of windows.
std::pair<std::vector<SymbolDistribution>, std::vector<SymbolDistribution>> outputs(
    const nn::ParamStore<float>& params, const std::vector<WindowPair>& windows) {
  const auto p = params.cast<double>();
  std::vector<SymbolDistribution> psi, phi;
  for (const auto& w : windows) {
    psi.push_back(encode_forward(p, Side::Psi, w.y.cast<double>()));
    phi.push_back(encode_forward(p, Side::Phi, w.x.cast<double>()));
  }
  return {psi, phi};
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const auto s = parse_lr_schedule("0:432:0.4,432:540:0.2,540:900:0.1,900:1080:0.05");
  REQUIRE(s.size() == 4);
  CHECK(s[2] == LrSegment{540, 900, 0.1});
  TrainConfig c;
  CHECK(c.lr_schedule == s);
  CHECK(c.lr_at(0) == 0.4);
  CHECK(c.lr_at(431.99) == 0.4);
  CHECK(c.lr_at(432) == 0.2);
  CHECK(c.lr_at(1000) == 0.05);
  CHECK(c.schedule_end() == 1080);
  CHECK(*c.clone_at == 216);
  CHECK_THROWS_AS(parse_lr_schedule("0:1"), ConfigError);
  CHECK_THROWS_AS(parse_lr_schedule(""), ConfigError);

  c.lr_schedule = {{0, 1, 0.4}, {2, 3, 0.2}};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.lr_schedule = {{0, 1, -0.4}};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.clone_at = 5000;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.dead_threshold = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config JSON round trip and overrides") {
  auto c = small_config();
  c.mode = TrainMode::Adversarial;
  c.entropy_mode = EntropyMode::Global;
  c.clone_at.reset();
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  const auto partial = train_config_from_json({{"seed", 77}, {"lr_schedule", "0:2:0.1"}});
  CHECK(partial.seed == 77);
  CHECK(partial.lr_schedule == std::vector<LrSegment>{{0, 2, 0.1}});
  CHECK(partial.alphabet_size == 64);
  CHECK_THROWS_AS(train_config_from_json({{"mode", "sideways"}}), ConfigError);
  CHECK(parse_entropy_mode("per-utterance") == EntropyMode::PerUtterance);
  CHECK(parse_entropy_mode("per_utterance") == EntropyMode::PerUtterance);
}

TEST_CASE("identical seeds give identical metrics streams") {
  const auto corpus = small_corpus();
  for (auto mode : {TrainMode::Base, TrainMode::Adversarial})
    for (auto em : {EntropyMode::PerUtterance, EntropyMode::Global}) {
      auto cfg = small_config();
      cfg.mode = mode;
      cfg.entropy_mode = em;
      const auto a = run_records(corpus, cfg);
      const auto b = run_records(corpus, cfg);
      CHECK(a == b);
      cfg.seed += 1;
      CHECK(a != run_records(corpus, cfg));
    }
}

TEST_CASE("metrics stream contents") {
  const auto corpus = small_corpus();
  std::vector<json> recs;
  train(corpus, small_config(), [&](const json& r) { recs.push_back(r); });
  std::size_t minibatches = 0, epochs = 0, clones = 0;
  for (const auto& r : recs) {
    const auto type = r.at("type").get<std::string>();
    if (type == "minibatch") {
      const auto step = r.at("step").get<std::uint64_t>();
      CHECK(step == minibatches);
      const double want = step < 24 ? 0.4 : 0.2;
      CHECK(r.at("lr").get<double>() == static_cast<double>(static_cast<float>(want)));
      CHECK(r.at("mi_bound_bits").get<double>() ==
            doctest::Approx(r.at("marginal_entropy_bits").get<double>() -
                            r.at("cross_entropy_bits").get<double>()));
      CHECK(r.contains("utterance_id"));
      CHECK(r.contains("saturation_count"));
      ++minibatches;
    } else if (type == "epoch") {
      CHECK(r.at("epoch").get<std::uint64_t>() == epochs);
      CHECK_FALSE(r.at("partial").get<bool>());
      CHECK(r.at("minibatches").get<std::uint64_t>() == 6);
      ++epochs;
    } else if (type == "clone") {
      CHECK(r.at("step").get<std::uint64_t>() == 12);
      ++clones;
    }
  }
  CHECK(minibatches == 36);
  CHECK(epochs == 6);
  CHECK(clones == 1);
}

TEST_CASE("a schedule ending mid-epoch emits a partial epoch record") {
  auto cfg = small_config();
  cfg.lr_schedule = {{0, 0.08, 0.4}};
  cfg.clone_at.reset();
  std::vector<json> epochs;
  train(small_corpus(), cfg, [&](const json& r) {
    if (r.at("type") == "epoch") epochs.push_back(r);
  });
  REQUIRE(epochs.size() == 2);
  CHECK(epochs[1].at("partial").get<bool>());
  CHECK(epochs[1].at("minibatches").get<std::uint64_t>() == 2);
}

TEST_CASE("short utterances are skipped with a warning") {
  auto corpus = small_corpus();
  Utterance tiny{"tiny", FrameMatrix(20, 4), std::nullopt, std::nullopt};
  tiny.frames.data.assign(80, 1.0f);
  corpus.utterances.push_back(tiny);
  Trainer t(corpus, small_config());
  CHECK(t.usable_utterances() == 6);
  REQUIRE(t.warnings().size() == 1);
  CHECK(t.warnings()[0].find("tiny") != std::string::npos);
}

TEST_CASE("checkpoint round trip") {
  oracle::TempDir dir("ckpt");
  const auto corpus = small_corpus();
  auto cfg = small_config();
  cfg.entropy_mode = EntropyMode::Global;
  Trainer t(corpus, cfg);
  t.run({}, 15);
  save_checkpoint(t.state(), dir.path / "a.itck");
  const auto back = load_checkpoint(dir.path / "a.itck");
  CHECK(same_params(back.params, t.state().params));
  CHECK(back.step == 15);
  CHECK(back.epoch == 2);
  CHECK(back.position == 3);
  CHECK(back.order == t.state().order);
  CHECK(back.max_psi == t.state().max_psi);
  CHECK(back.mass_psi == t.state().mass_psi);
  CHECK(back.live_mask == t.state().live_mask);
  CHECK(back.cloned == t.state().cloned);
  CHECK(back.clone_history.size() == t.state().clone_history.size());
  CHECK(back.global_buffer.size() == t.state().global_buffer.size());
  CHECK(back.rng == t.state().rng);
  CHECK(to_json(back.config) == to_json(t.state().config));

  // Corruptions.
  auto bytes = [&] {
    std::ifstream in(dir.path / "a.itck", std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }();
  auto write = [&](const std::string& name, const std::string& b) {
    std::ofstream(dir.path / name, std::ios::binary) << b;
    return dir.path / name;
  };
  auto magic = bytes;
  magic[0] = 'X';
  try {
    load_checkpoint(write("m.itck", magic));
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  try {
    load_checkpoint(write("c.itck", flipped));
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("corrupt") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint(write("t.itck", bytes.substr(0, 40))), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "none.itck"), DataError);
}

TEST_CASE("resume mid-epoch reproduces the uninterrupted run exactly") {
  oracle::TempDir dir("resume");
  const auto corpus = small_corpus();
  for (auto mode : {TrainMode::Base, TrainMode::Adversarial}) {
    auto cfg = small_config();
    cfg.mode = mode;
    cfg.entropy_mode = mode == TrainMode::Base ? EntropyMode::Global : EntropyMode::PerUtterance;
    cfg.clone_noise_sigma = 0.05;

    std::vector<std::string> full;
    Trainer whole(corpus, cfg);
    whole.run([&](const json& r) { full.push_back(r.dump()); });

    // Stop in the middle of epoch 3 (steps 12..17), before and after the clone.
    for (std::uint64_t stop : {10u, 15u}) {
      std::vector<std::string> first, second;
      Trainer a(corpus, cfg);
      a.run([&](const json& r) { first.push_back(r.dump()); }, stop);
      save_checkpoint(a.state(), dir.path / "mid.itck");
      Trainer b(corpus, load_checkpoint(dir.path / "mid.itck"));
      b.run([&](const json& r) { second.push_back(r.dump()); });
      first.insert(first.end(), second.begin(), second.end());
      CHECK(first == full);
      CHECK(same_params(b.state().params, whole.state().params));
    }
  }
}

TEST_CASE("resume rejects a corpus of the wrong dimension") {
  const auto corpus = small_corpus();
  Trainer a(corpus, small_config());
  a.run({}, 3);
  auto spec = SyntheticSpec::identity(5);
  spec.num_utterances = 6;
  spec.windows_per_utterance = 4;
  const auto other = synth_corpus(spec).corpus;
  CHECK_THROWS_AS(Trainer(other, a.state()), DataError);
}

TEST_CASE("clone_symbols pairs by descending marginal and copies output rows") {
  auto p = init_encoder_params<float>({3, 4, 6}, 1);
  auto& th = p.at(kThetaLogits);
  th.value = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
  std::vector<bool> live = {true, false, true, false, true, false};
  const std::vector<double> marginal = {0.2, 0.0, 0.5, 0.0, 0.3, 0.0};
  std::mt19937_64 rng(1);
  const auto events = clone_symbols(p, live, marginal, 0.0, rng, 7);
  REQUIRE(events.size() == 3);
  CHECK(events[0].source == 2);
  CHECK(events[0].target == 1);
  CHECK(events[1].source == 4);
  CHECK(events[1].target == 3);
  CHECK(events[2].source == 0);
  CHECK(events[2].target == 5);
  CHECK(events[0].step == 7);
  for (bool b : live) CHECK(b);
  const auto& W = p.at("psi.out.W");
  for (std::size_t c = 0; c < 4; ++c) CHECK(W.value[1 * 4 + c] == W.value[2 * 4 + c]);
  CHECK(th.value[5] == th.value[0]);

  // Fewer dead than live: only the strongest live symbols are cloned.
  std::vector<bool> live2 = {true, true, true, true, false, true};
  const auto e2 = clone_symbols(p, live2, std::vector<double>{0.1, 0.3, 0.1, 0.2, 0.0, 0.3}, 0.0, rng);
  REQUIRE(e2.size() == 1);
  CHECK(e2[0].source == 1);
  CHECK(e2[0].target == 4);

  // With noise the copy differs.
  std::vector<bool> live3 = {true, false, false, false, false, false};
  clone_symbols(p, live3, std::vector<double>(6, 0.0), 0.1, rng);
  CHECK(p.at("phi.out.b").value[1] != p.at("phi.out.b").value[0]);
}

TEST_CASE("cloning at zero noise adds exactly one bit to both terms") {
  // Half the alphabet is silenced (dead), every live symbol is cloned, so each
  // live symbol's mass splits exactly in two.
  auto p = init_encoder_params<float>({4, 8, 16}, 5);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto side : {Side::Psi, Side::Phi}) {
    for (auto& v : p.at(out_weight_name(side)).value) v = 2.0f * u(rng);
    auto& b = p.at(out_bias_name(side));
    for (std::size_t z = 0; z < 16; ++z) b.value[z] = z % 2 == 0 ? u(rng) : -1000.0f;
  }
  std::vector<bool> live(16);
  for (std::size_t z = 0; z < 16; ++z) live[z] = z % 2 == 0;
  const auto corpus = small_corpus(2, 5);
  std::vector<WindowPair> windows;
  for (const auto& utt : corpus.utterances)
    for (auto& w : windows_of(normalize_utterance(utt), WindowGeometry{}, 35)) windows.push_back(w);

  const auto [psi0, phi0] = outputs(p, windows);
  std::vector<double> marginal(16, 0.0);
  for (const auto& d : psi0)
    for (std::size_t z = 0; z < 16; ++z) marginal[z] += d[z];
  clone_symbols(p, live, marginal, 0.0, rng);
  const auto [psi1, phi1] = outputs(p, windows);

  const double dh = entropy_of_mean(psi1) - entropy_of_mean(psi0);
  const double dce = cross_entropy_term(psi1, phi1) - cross_entropy_term(psi0, phi0);
  CHECK(std::abs(dh - 1.0) < 1e-6);
  CHECK(std::abs(dce - 1.0) < 1e-6);
  CHECK(std::abs(dh - dce) < 1e-6);
}

TEST_CASE("detect_dead_symbols finds the unused symbols") {
  const auto p = oracle::perfect_params<float>(4, 16, {3, 9, 11, 14});
  const auto corpus = small_corpus(3, 6);
  std::vector<WindowPair> windows;
  for (const auto& utt : corpus.utterances)
    for (auto& w : windows_of(utt, WindowGeometry{}, 35)) windows.push_back(w);
  const auto live = detect_dead_symbols(p, windows, 1e-3);
  std::size_t n = 0;
  for (std::size_t z = 0; z < 16; ++z) {
    n += live[z] ? 1 : 0;
    if (z == 3 || z == 9 || z == 11 || z == 14) CHECK(live[z]);
  }
  CHECK(n == 4);
  CHECK(live_mask_from_maxima(std::vector<float>{0.5f, 1e-4f, 1e-4f},
                              std::vector<float>{1e-4f, 0.2f, 1e-4f}, 1e-3) ==
        std::vector<bool>{true, true, false});
}

TEST_CASE("training on the easy synthetic task makes progress") {
  const auto corpus = small_corpus(20, 8, 4);
  TrainConfig cfg;
  cfg.alphabet_size = 16;
  cfg.hidden_dim = 16;
  cfg.lr_schedule = {{0, 3, 0.4}};
  cfg.clone_at.reset();
  std::vector<double> bounds;
  train(corpus, cfg, [&](const json& r) {
    if (r.at("type") == "epoch") bounds.push_back(r.at("mi_bound_bits").get<double>());
  });
  REQUIRE(bounds.size() == 15);
  CHECK(bounds.back() > bounds.front());
  CHECK(bounds.back() > 1.0);
}
