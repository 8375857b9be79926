#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "itct/corpus.hpp"

namespace itct::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kCheckFailed = 3 };

// SHA-256 over ids, frame bytes, labels, speakers and placement stride, in
// manifest order. Hex encoded.
std::string corpus_hash(const Corpus& corpus);

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string corpus_hash;
  std::vector<std::string> artifacts;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir) const;  // <dir>/run_manifest.json
};

struct SynthArgs {
  std::filesystem::path spec;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::filesystem::path corpus;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> entropy_mode;
  std::optional<std::string> lr_schedule;
  std::optional<std::string> clone_at;  // number of hundreds, or "none"
  std::optional<std::filesystem::path> resume;
  std::uint64_t checkpoint_every = 0;  // steps; 0 = only at the end
  std::optional<std::uint64_t> stop_after;
};

struct EvalArgs {
  std::filesystem::path corpus;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t seeds = 20;
  bool inject_fault = false;
  std::optional<std::filesystem::path> out;
};

// Each returns an exit code; errors propagate as exceptions and are mapped by run().
int cmd_synth(const SynthArgs& a, std::ostream& log, const std::vector<std::string>& argv = {});
int cmd_train(const TrainArgs& a, std::ostream& log, const std::vector<std::string>& argv = {});
int cmd_eval(const EvalArgs& a, std::ostream& log, const std::vector<std::string>& argv = {});
int cmd_gradcheck(const GradcheckArgs& a, std::ostream& log,
                  const std::vector<std::string>& argv = {});

// Parses argv and dispatches; never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace itct::cli
