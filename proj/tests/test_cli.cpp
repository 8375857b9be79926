#include "doctest.h"

#include <fstream>
#include <sstream>

#include "itct/cli.hpp"
#include "itct/trainer.hpp"
#include "oracles.hpp"

using namespace itct;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result itct_run(std::vector<std::string> args) {
  args.insert(args.begin(), "itct");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<json> records(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

void write_file(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

// Synthetic identity corpus: 6 utterances of 4 windows.
fs::path make_corpus(const oracle::TempDir& dir, int k = 4) {
  const auto spec = dir.path / ("spec" + std::to_string(k) + ".json");
  write_file(spec, json{{"preset", "identity"}, {"num_latent", k}, {"num_utterances", 6},
                        {"windows_per_utterance", 4}, {"seed", 3}}
                       .dump());
  const auto out = dir.path / ("corpus" + std::to_string(k));
  const auto r = itct_run({"synth", spec.string(), "--out", out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return out;
}

fs::path make_config(const oracle::TempDir& dir) {
  const auto p = dir.path / "train.json";
  write_file(p, json{{"alphabet_size", 16}, {"hidden_dim", 8}, {"lr_schedule", "0:0.36:0.4"},
                     {"clone_at", 0.12}, {"seed", 4}}
                    .dump());
  return p;
}

}  // namespace

TEST_CASE("synth writes the corpus, the oracle and a manifest") {
  oracle::TempDir dir("cli_synth");
  const auto c = make_corpus(dir);
  const auto oracle_json = read_json(c / "oracle.json");
  CHECK(oracle_json.at("true_mi_bits").get<double>() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(oracle_json.at("joint_table").size() == 4);
  const auto m = read_json(c / "run_manifest.json");
  CHECK(m.at("command") == "synth");
  CHECK(m.at("corpus_hash").get<std::string>().size() == 64);
  CHECK(m.at("corpus_hash") == cli::corpus_hash(load_corpus(c / "manifest.tsv")));
  CHECK(m.at("tool_version") == cli::kToolVersion);
  CHECK(load_corpus(c).placement_stride == 35);

  // The seed flag changes the data and the hash.
  const auto r = itct_run({"synth", (dir.path / "spec4.json").string(), "--out",
                           (dir.path / "other").string(), "--seed", "99"});
  CHECK(r.code == 0);
  CHECK(read_json(dir.path / "other" / "run_manifest.json").at("corpus_hash") != m.at("corpus_hash"));
}

TEST_CASE("train, resume and eval") {
  oracle::TempDir dir("cli_train");
  const auto c = make_corpus(dir);
  const auto cfg = make_config(dir);
  const auto full = dir.path / "full";
  auto r = itct_run({"train", c.string(), cfg.string(), "--out", full.string(), "--checkpoint-every", "5"});
  REQUIRE_MESSAGE(r.code == 0, r.err);

  const auto recs = records(full / "metrics.jsonl");
  std::size_t epochs = 0, minibatches = 0, clones = 0;
  for (const auto& rec : recs) {
    const auto t = rec.at("type").get<std::string>();
    epochs += t == "epoch";
    minibatches += t == "minibatch";
    clones += t == "clone";
  }
  CHECK(epochs == 6);
  CHECK(minibatches == 36);
  CHECK(clones == 1);
  CHECK(fs::exists(full / "last.itck"));
  CHECK(fs::exists(full / "checkpoints" / "step_00000015.itck"));
  CHECK(fs::exists(full / "checkpoints" / "step_00000035.itck"));
  const auto manifest = read_json(full / "run_manifest.json");
  CHECK(manifest.at("config").at("alphabet_size") == 16);
  CHECK(manifest.at("seed") == 4);

  SUBCASE("same seed, same bytes") {
    const auto again = dir.path / "again";
    r = itct_run({"train", c.string(), cfg.string(), "--out", again.string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(again / "metrics.jsonl") == slurp(full / "metrics.jsonl"));
    CHECK(slurp(again / "last.itck") == slurp(full / "last.itck"));
  }

  SUBCASE("resume from a mid-epoch checkpoint reproduces the metrics") {
    const auto part = dir.path / "part";
    r = itct_run({"train", c.string(), cfg.string(), "--out", part.string(), "--checkpoint-every", "5",
                  "--stop-after", "22"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("stopped at step 22") != std::string::npos);
    // Resume from step 15 into a directory that already holds records up to 22.
    r = itct_run({"train", c.string(), "--out", part.string(), "--resume",
                  (part / "checkpoints" / "step_00000015.itck").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(slurp(part / "metrics.jsonl") == slurp(full / "metrics.jsonl"));
    CHECK(slurp(part / "last.itck") == slurp(full / "last.itck"));

    r = itct_run({"train", c.string(), "--out", part.string(), "--seed", "1", "--resume",
                  (part / "checkpoints" / "step_00000015.itck").string()});
    CHECK(r.code == 1);
  }

  SUBCASE("learning-rate override") {
    const auto lr = dir.path / "lr";
    r = itct_run({"train", c.string(), cfg.string(), "--out", lr.string(), "--lr-schedule",
                  "0:0.1:0.2", "--clone-at", "none"});
    REQUIRE(r.code == 0);
    std::size_t n = 0;
    for (const auto& rec : records(lr / "metrics.jsonl")) {
      CHECK(rec.at("type") != "clone");
      if (rec.at("type") == "minibatch") {
        CHECK(rec.at("lr").get<double>() == doctest::Approx(0.2));
        ++n;
      }
    }
    CHECK(n == 10);
  }

  SUBCASE("eval") {
    const auto ev = dir.path / "eval";
    r = itct_run({"eval", c.string(), (full / "last.itck").string(), "--out", ev.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto m = read_json(ev / "metrics.json");
    for (const char* key : {"overall_acc", "covered_acc", "coverage", "agreement_rate",
                            "mean_entropy_psi_bits", "mean_entropy_phi_bits", "live_symbols",
                            "mi_bound_bits"})
      CHECK_MESSAGE(m.contains(key), key);
    CHECK(m.at("frames") == 24);
    CHECK(m.at("overall_acc").get<double>() >= 0.25 - 1e-12);
    CHECK(m.at("covered_acc").get<double>() >= m.at("overall_acc").get<double>());
    CHECK(slurp(ev / "confusion.csv").rfind("predicted,", 0) == 0);
    CHECK(slurp(ev / "symbol_stats.csv").rfind("symbol,avg_psi,avg_phi,tag,live\n", 0) == 0);
    CHECK(read_json(ev / "run_manifest.json").at("command") == "eval");

    const auto c5 = make_corpus(dir, 5);
    r = itct_run({"eval", c5.string(), (full / "last.itck").string(), "--out", (dir.path / "bad").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("dimension") != std::string::npos);
  }
}

TEST_CASE("gradcheck exit codes") {
  oracle::TempDir dir("cli_gc");
  auto r = itct_run({"gradcheck", "--seeds", "1", "--out", dir.path.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("gradcheck passed") != std::string::npos);
  CHECK(read_json(dir.path / "gradcheck.json").at("passed") == true);
  r = itct_run({"gradcheck", "--seeds", "1", "--inject-fault"});
  CHECK(r.code == 3);
  CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("usage and data errors") {
  oracle::TempDir dir("cli_err");
  CHECK(itct_run({}).code == 1);
  CHECK(itct_run({"bogus"}).code == 1);
  CHECK(itct_run({"train"}).code == 1);
  CHECK(itct_run({"train", "x", "--out", "y", "--mode", "sideways"}).code == 1);
  CHECK(itct_run({"gradcheck", "--seeds", "0"}).code == 1);
  CHECK(itct_run({"--version"}).code == 0);

  const auto c = make_corpus(dir);
  auto r = itct_run({"train", c.string(), "--out", (dir.path / "t").string(), "--lr-schedule", "0:1"});
  CHECK(r.code == 1);
  r = itct_run({"train", c.string(), "--out", (dir.path / "t").string(), "--clone-at", "soon"});
  CHECK(r.code == 1);
  r = itct_run({"train", (dir.path / "nowhere").string(), "--out", (dir.path / "t").string()});
  CHECK(r.code == 2);
  write_file(dir.path / "bad.json", "{not json");
  r = itct_run({"synth", (dir.path / "bad.json").string(), "--out", (dir.path / "s").string()});
  CHECK(r.code == 2);
}
