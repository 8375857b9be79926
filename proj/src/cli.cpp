#include "itct/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <openssl/evp.h>

#include "CLI11.hpp"

#include "itct/error.hpp"
#include "itct/evaluation.hpp"
#include "itct/gradcheck.hpp"
#include "itct/trainer.hpp"

namespace itct::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update(const std::string& s) {
    u64(s.size());
    update(s.data(), s.size());
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    update(b, 8);
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    std::ostringstream o;
    for (unsigned i = 0; i < len; ++i) o << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return o.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string artifact(const fs::path& p) { return p.lexically_normal().string(); }

// Keeps records written up to and including the point where the checkpoint at
// `step` utterances was taken. Minibatch records carry the 0-based index of
// their utterance; epoch and clone records carry the count processed so far.
void truncate_metrics(const fs::path& path, std::uint64_t step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      throw DataError(path.string() + ": unreadable metrics record, cannot resume into it");
    }
    const auto s = rec.value("step", std::uint64_t{0});
    const bool minibatch = rec.value("type", std::string()) == "minibatch";
    if (minibatch ? s < step : s <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

std::vector<Utterance> eval_utterances(const Corpus& corpus, bool normalize) {
  std::vector<Utterance> out;
  out.reserve(corpus.utterances.size());
  for (const auto& u : corpus.utterances) out.push_back(normalize ? normalize_utterance(u) : u);
  return out;
}

}  // namespace

std::string corpus_hash(const Corpus& corpus) {
  Sha256 h;
  h.u64(corpus.placement_stride);
  h.u64(corpus.utterances.size());
  for (const auto& u : corpus.utterances) {
    h.update(u.id);
    h.u64(u.frames.rows);
    h.u64(u.frames.cols);
    h.update(u.frames.data.data(), u.frames.data.size() * sizeof(float));
    h.u64(u.gold_labels ? u.gold_labels->size() + 1 : 0);
    if (u.gold_labels)
      for (const auto& l : *u.gold_labels) h.update(l);
    h.update(u.speaker.value_or(""));
  }
  return h.hex();
}

json RunManifest::to_json() const {
  return {{"command", command},     {"argv", argv},
          {"tool_version", kToolVersion}, {"seed", seed},
          {"config", config},       {"corpus_hash", corpus_hash},
          {"artifacts", artifacts}};
}

void RunManifest::write(const fs::path& dir) const { write_json(dir / "run_manifest.json", to_json()); }

// ---- synth ---------------------------------------------------------------------

int cmd_synth(const SynthArgs& a, std::ostream& log, const std::vector<std::string>& argv) {
  auto spec = synthetic_spec_from_json(read_json(a.spec));
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const auto sc = synth_corpus(spec);
  const double mi = true_mi_oracle(sc.joint_table);

  make_dir(a.out);
  RunManifest m;
  m.command = "synth";
  m.argv = argv;
  m.config = to_json(spec);
  m.seed = spec.seed;
  m.corpus_hash = corpus_hash(sc.corpus);
  m.artifacts = {artifact(a.out / "manifest.tsv"), artifact(a.out / "features"),
                 artifact(a.out / "labels"), artifact(a.out / "oracle.json")};
  m.write(a.out);

  write_corpus(a.out, sc.corpus);
  json table = json::array();
  for (std::size_t r = 0; r < sc.joint_table.rows; ++r) {
    auto row = sc.joint_table.row(r);
    table.push_back(std::vector<double>(row.begin(), row.end()));
  }
  write_json(a.out / "oracle.json", {{"true_mi_bits", mi}, {"joint_table", table}});
  log << "wrote " << sc.corpus.utterances.size() << " utterances to " << a.out.string()
      << "; true MI " << mi << " bits\n";
  return kOk;
}

// ---- train ---------------------------------------------------------------------

int cmd_train(const TrainArgs& a, std::ostream& log, const std::vector<std::string>& argv) {
  const Corpus corpus = load_corpus(resolve_manifest(a.corpus));
  make_dir(a.out);
  make_dir(a.out / "checkpoints");
  const fs::path metrics_path = a.out / "metrics.jsonl";

  std::optional<Trainer> trainer;
  if (a.resume) {
    // The checkpoint's config governs; overrides would change the run.
    if (a.config || a.seed || a.mode || a.entropy_mode || a.lr_schedule || a.clone_at)
      throw ConfigError("--resume takes its configuration from the checkpoint; drop the overrides");
    TrainState st = load_checkpoint(*a.resume);
    const auto step = st.step;
    trainer.emplace(corpus, std::move(st));
    truncate_metrics(metrics_path, step);
  } else {
    TrainConfig cfg;
    if (a.config) cfg = train_config_from_json(read_json(*a.config));
    if (a.seed) cfg.seed = *a.seed;
    if (a.mode) cfg.mode = parse_train_mode(*a.mode);
    if (a.entropy_mode) cfg.entropy_mode = parse_entropy_mode(*a.entropy_mode);
    if (a.lr_schedule) cfg.lr_schedule = parse_lr_schedule(*a.lr_schedule);
    if (a.clone_at) {
      if (*a.clone_at == "none") {
        cfg.clone_at.reset();
      } else {
        try {
          cfg.clone_at = std::stod(*a.clone_at);
        } catch (const std::exception&) {
          throw ConfigError("--clone-at expects a number or 'none'");
        }
      }
    }
    cfg.validate();
    trainer.emplace(corpus, cfg);
    std::ofstream(metrics_path, std::ios::trunc);
  }
  for (const auto& w : trainer->warnings()) log << "warning: " << w << '\n';

  const auto& cfg = trainer->state().config;
  RunManifest m;
  m.command = "train";
  m.argv = argv;
  m.config = to_json(cfg);
  m.seed = cfg.seed;
  m.corpus_hash = corpus_hash(corpus);
  m.artifacts = {artifact(metrics_path), artifact(a.out / "checkpoints"),
                 artifact(a.out / "last.itck")};
  m.write(a.out);

  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw DataError("cannot write " + metrics_path.string());
  const MetricsSink sink = [&metrics](const json& rec) { metrics << rec.dump() << '\n'; };

  std::uint64_t ran = 0;
  while (!trainer->done() && (!a.stop_after || ran < *a.stop_after)) {
    trainer->step(sink);
    ++ran;
    const auto step = trainer->state().step;
    if (a.checkpoint_every > 0 && step % a.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%08llu.itck", static_cast<unsigned long long>(step));
      metrics.flush();
      save_checkpoint(trainer->state(), a.out / "checkpoints" / name);
    }
  }
  metrics.flush();
  if (!metrics) throw DataError("failed writing " + metrics_path.string());
  save_checkpoint(trainer->state(), a.out / "last.itck");

  const auto& s = trainer->state();
  std::size_t live = 0;
  for (bool b : s.live_mask) live += b ? 1 : 0;
  log << (trainer->done() ? "finished" : "stopped") << " at step " << s.step << " (epoch "
      << s.epoch << "), " << live << " live symbols\n";
  return kOk;
}

// ---- eval ----------------------------------------------------------------------

int cmd_eval(const EvalArgs& a, std::ostream& log, const std::vector<std::string>& argv) {
  const TrainState st = load_checkpoint(a.checkpoint);
  const Corpus corpus = load_corpus(resolve_manifest(a.corpus));
  for (const auto& u : corpus.utterances)
    if (u.dim() != st.dims.input_dim)
      throw DataError("utterance '" + u.id + "' has feature dimension " + std::to_string(u.dim()) +
                      " but the checkpoint expects " + std::to_string(st.dims.input_dim));

  make_dir(a.out);
  RunManifest m;
  m.command = "eval";
  m.argv = argv;
  m.config = to_json(st.config);
  m.config["checkpoint"] = artifact(a.checkpoint);
  m.seed = st.config.seed;
  m.corpus_hash = corpus_hash(corpus);
  m.artifacts = {artifact(a.out / "metrics.json"), artifact(a.out / "confusion.csv"),
                 artifact(a.out / "symbol_stats.csv")};
  m.write(a.out);

  const auto& g = st.config.geometry;
  const auto utts = eval_utterances(corpus, st.config.normalize);
  const auto labelings = label_corpus(st.params, utts, g, corpus.placement_stride);
  const auto tags = majority_tag(labelings, utts);
  const auto result = evaluate(labelings, tags, utts);
  const auto outputs = collect_outputs(st.params, utts, g, corpus.placement_stride);
  const auto stats = symbol_stats(outputs);

  std::vector<float> max_psi(st.dims.alphabet_size, 0.0f), max_phi(st.dims.alphabet_size, 0.0f);
  for (std::size_t u = 0; u < outputs.psi.size(); ++u)
    for (std::size_t i = 0; i < outputs.psi[u].size(); ++i)
      for (std::size_t z = 0; z < max_psi.size(); ++z) {
        max_psi[z] = std::max(max_psi[z], static_cast<float>(outputs.psi[u][i][z]));
        max_phi[z] = std::max(max_phi[z], static_cast<float>(outputs.phi[u][i][z]));
      }
  const auto live = live_mask_from_maxima(max_psi, max_phi, st.config.dead_threshold);
  std::size_t live_count = 0;
  for (bool b : live) live_count += b ? 1 : 0;

  json summary = {{"overall_acc", result.overall_acc},
                  {"covered_acc", result.covered_acc},
                  {"coverage", result.coverage},
                  {"agreement_rate", agreement_rate(outputs)},
                  {"mean_entropy_psi_bits", stats.mean_entropy_psi_bits},
                  {"mean_entropy_phi_bits", stats.mean_entropy_phi_bits},
                  {"live_symbols", live_count},
                  {"tags_used", tags.tags_used().size()},
                  {"frames", result.frames},
                  {"tie_symbols", tags.ties}};
  if (outputs.windows() > 0) {
    const auto h = held_out_terms(outputs);
    summary["mi_bound_bits"] = h.mi_bound_bits;
    summary["cross_entropy_bits"] = h.cross_entropy_bits;
    summary["marginal_entropy_bits"] = h.marginal_entropy_bits;
    summary["windows"] = h.windows;
  }
  write_json(a.out / "metrics.json", summary);
  write_confusion_csv(a.out / "confusion.csv", result.confusion);
  write_symbol_stats_csv(a.out / "symbol_stats.csv", stats, tags, live);
  log << "overall_acc " << result.overall_acc << ", covered_acc " << result.covered_acc
      << ", coverage " << result.coverage << ", " << live_count << " live symbols\n";
  return kOk;
}

// ---- gradcheck -----------------------------------------------------------------

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& log, const std::vector<std::string>& argv) {
  GradCheckOptions opt;
  opt.seed = a.seed;
  opt.seeds = a.seeds;
  opt.inject_fault = a.inject_fault;
  if (a.out) {
    make_dir(*a.out);
    RunManifest m;
    m.command = "gradcheck";
    m.argv = argv;
    m.config = {{"seeds", a.seeds}, {"epsilon", opt.epsilon}, {"threshold", opt.threshold},
                {"inject_fault", a.inject_fault}};
    m.seed = a.seed;
    m.artifacts = {artifact(*a.out / "gradcheck.json")};
    m.write(*a.out);
  }
  const auto report = run_gradcheck(opt);

  // Worst case per check name across seeds.
  std::map<std::string, const GradCheckCase*> worst;
  for (const auto& c : report.cases) {
    auto& w = worst[c.name];
    if (!w || c.max_rel_error > w->max_rel_error) w = &c;
  }
  for (const auto& [name, c] : worst)
    log << (c->passed ? "ok   " : "FAIL ") << std::left << std::setw(26) << name
        << " max rel err " << std::scientific << std::setprecision(3) << c->max_rel_error
        << std::defaultfloat << " (seed " << c->seed << ", " << c->worst_entry << ")\n";

  if (a.out) {
    json cases = json::array();
    for (const auto& c : report.cases)
      cases.push_back({{"name", c.name}, {"seed", c.seed}, {"max_rel_error", c.max_rel_error},
                       {"worst_entry", c.worst_entry}, {"coordinates", c.coordinates},
                       {"passed", c.passed}});
    write_json(*a.out / "gradcheck.json",
               {{"passed", report.passed()}, {"threshold", report.threshold}, {"cases", cases}});
  }
  log << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return report.passed() ? kOk : kCheckFailed;
}

// ---- dispatch ------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Information-theoretic co-training of predictor and confirmation models", "itct"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SynthArgs sa;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus and its exact MI");
  synth->add_option("spec", sa.spec, "synthetic spec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", sa.out, "output corpus directory")->required();
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "override the spec seed");

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  std::string config_path, mode, entropy_mode, schedule, clone_at, resume;
  std::uint64_t stop_after = 0;
  auto* train = app.add_subcommand("train", "Train Psi and Phi on a corpus");
  train->add_option("corpus", ta.corpus, "corpus directory or manifest")->required();
  auto* config_opt = train->add_option("config", config_path, "training config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "output directory")->required();
  auto* train_seed_opt = train->add_option("--seed", train_seed);
  auto* mode_opt = train->add_option("--mode", mode)->check(CLI::IsMember({"base", "adversarial"}));
  auto* entropy_opt = train->add_option("--entropy-mode", entropy_mode)
                          ->check(CLI::IsMember({"per-utterance", "per_utterance", "global"}));
  auto* schedule_opt = train->add_option("--lr-schedule", schedule, "begin:end:lr,... in hundreds of utterances");
  auto* clone_opt = train->add_option("--clone-at", clone_at, "hundreds of utterances, or 'none'");
  auto* resume_opt = train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--checkpoint-every", ta.checkpoint_every, "steps between checkpoints (0: end only)");
  auto* stop_opt = train->add_option("--stop-after", stop_after, "stop after this many steps");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Label, tag and score a corpus with a checkpoint");
  eval->add_option("corpus", ea.corpus, "corpus directory or manifest")->required();
  eval->add_option("checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", ea.out, "output directory")->required();

  GradcheckArgs ga;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gc->add_option("--seed", ga.seed);
  gc->add_option("--seeds", ga.seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  gc->add_flag("--inject-fault", ga.inject_fault, "corrupt one gradient coordinate (self-test)");
  auto* gc_out_opt = gc->add_option("--out", gc_out, "directory for the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      if (*synth_seed_opt) sa.seed = synth_seed;
      return cmd_synth(sa, out, args);
    }
    if (*train) {
      if (*config_opt) ta.config = config_path;
      if (*train_seed_opt) ta.seed = train_seed;
      if (*mode_opt) ta.mode = mode;
      if (*entropy_opt) ta.entropy_mode = entropy_mode;
      if (*schedule_opt) ta.lr_schedule = schedule;
      if (*clone_opt) ta.clone_at = clone_at;
      if (*resume_opt) ta.resume = resume;
      if (*stop_opt) ta.stop_after = stop_after;
      return cmd_train(ta, out, args);
    }
    if (*eval) return cmd_eval(ea, out, args);
    if (*gc) {
      if (*gc_out_opt) ga.out = gc_out;
      return cmd_gradcheck(ga, out, args);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace itct::cli
