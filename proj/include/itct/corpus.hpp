#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "itct/matrix.hpp"

namespace itct {

struct Utterance {
  std::string id;
  FrameMatrix frames;  // T x d
  std::optional<std::vector<std::string>> gold_labels;
  std::optional<std::string> speaker;

  std::size_t num_frames() const { return frames.rows; }
  std::size_t dim() const { return frames.cols; }

  // Throws DataError naming the utterance when T == 0 or labels do not match T.
  void validate() const;
};

struct WindowGeometry {
  std::size_t total = 35;
  std::size_t past = 15;
  std::size_t gap = 5;
  std::size_t future = 15;

  void validate() const;
  std::size_t center_offset() const { return total / 2; }

  friend bool operator==(const WindowGeometry&, const WindowGeometry&) = default;
};

struct WindowPair {
  FrameMatrix x;  // past x d
  FrameMatrix y;  // future x d
  std::string utterance_id;
  std::size_t center_frame = 0;
};

// A loaded corpus. placement_stride > 1 restricts training placements to
// window starts that are multiples of the stride (used by synthetic corpora,
// whose generated windows sit back to back).
struct Corpus {
  std::vector<Utterance> utterances;
  std::size_t placement_stride = 1;
};

// ---- feature / label / manifest files ------------------------------------

// Binary feature file: "ITCF", u32 version (1), u32 T, u32 d, T*d float32,
// all little-endian, row-major.
FrameMatrix read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FrameMatrix& frames);

std::vector<std::string> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<std::string>& labels);

// Manifest: UTF-8 TSV, one row per utterance:
//   id <TAB> features-path [<TAB> labels-path [<TAB> speaker]]
// Paths are relative to the manifest's directory. Lines starting with '#' are
// comments, except the directive "#placement_stride <TAB> N". A directory is
// read through its manifest.tsv.
Corpus load_corpus(const std::filesystem::path& corpus_path);

// Writes <dir>/manifest.tsv, <dir>/features/<id>.itcf and, when labels are
// present, <dir>/labels/<id>.txt. Returns the manifest path.
std::filesystem::path write_corpus(const std::filesystem::path& dir, const Corpus& corpus);

// Accepts either a manifest file or a directory holding manifest.tsv.
std::filesystem::path resolve_manifest(const std::filesystem::path& corpus_path);

// ---- preprocessing -------------------------------------------------------

// Scales frames so the mean over the utterance of the squared frame norm is 1.
Utterance normalize_utterance(const Utterance& u);

// Every placement with stride `stride` (a start t exists iff t + total <= T and
// t % stride == 0). Windows never cross utterance boundaries.
std::vector<WindowPair> windows_of(const Utterance& u, const WindowGeometry& g,
                                   std::size_t stride = 1);

std::size_t count_windows(std::size_t num_frames, const WindowGeometry& g,
                          std::size_t stride = 1);

// ---- synthetic ground truth ----------------------------------------------

struct SyntheticSpec {
  std::size_t num_latent = 4;
  Matrix<double> x_channel;  // K x A, row-stochastic
  Matrix<double> y_channel;  // K x A, row-stochastic
  std::vector<double> latent_prior;
  std::size_t frames_per_side = 15;
  std::size_t gap_frames = 5;
  double jitter_sigma = 0.0;
  std::size_t num_utterances = 100;
  std::size_t windows_per_utterance = 32;
  std::uint64_t seed = 0;

  std::size_t num_symbols() const { return x_channel.cols; }
  std::size_t window_frames() const { return 2 * frames_per_side + gap_frames; }
  WindowGeometry geometry() const {
    return {window_frames(), frames_per_side, gap_frames, frames_per_side};
  }
  void validate() const;

  // K latent classes observed noiselessly on both sides, uniform prior.
  static SyntheticSpec identity(std::size_t k);
  // Each side reports the latent class with probability 1 - flip, otherwise a
  // uniformly chosen other class.
  static SyntheticSpec symmetric(std::size_t k, double flip);
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

struct SyntheticCorpus {
  Corpus corpus;
  Matrix<double> joint_table;  // A x A, p(x_sym, y_sym)
};

SyntheticCorpus synth_corpus(const SyntheticSpec& spec);

// Exact analytic joint p(a, b) = sum_s prior[s] x[s][a] y[s][b].
Matrix<double> joint_table_of(const SyntheticSpec& spec);

std::string latent_name(std::size_t k);

// Mutual information of a joint probability table, in bits.
double true_mi_oracle(const Matrix<double>& joint);

}  // namespace itct
