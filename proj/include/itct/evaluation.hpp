#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "itct/corpus.hpp"
#include "itct/model.hpp"

namespace itct {

// Per-frame symbol ids; empty where no full window centred on the frame fits.
struct FrameLabeling {
  std::string utterance_id;
  std::vector<std::optional<std::size_t>> symbols;
};

// Labels frame t with argmax_z P_Psi(z|y) of the window starting at
// t - total/2 (ties to the smallest id). With placement_stride > 1 only frames
// whose window start is a multiple of the stride are labeled.
FrameLabeling label_frames(const nn::ParamStore<float>& params, const Utterance& u,
                           const WindowGeometry& g, std::size_t placement_stride = 1);

std::vector<FrameLabeling> label_corpus(const nn::ParamStore<float>& params,
                                        std::span<const Utterance> utterances,
                                        const WindowGeometry& g, std::size_t placement_stride = 1);

struct TagMap {
  std::map<std::size_t, std::string> tag;
  std::map<std::size_t, std::map<std::string, std::size_t>> counts;
  std::vector<std::size_t> ties;  // symbols whose majority was tied
  std::set<std::string> tags_used() const;
};

// Tags each symbol with the most frequent gold label among the frames it
// labels; ties go to the lexicographically smallest label.
TagMap majority_tag(std::span<const FrameLabeling> labelings, std::span<const Utterance> gold);

struct ConfusionMatrix {
  std::vector<std::string> predicted;  // row labels
  std::vector<std::string> gold;       // column labels
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::vector<std::vector<double>> row_normalized() const;
};

struct EvalResult {
  ConfusionMatrix confusion;
  double overall_acc = 0.0;
  double covered_acc = 0.0;
  double coverage = 0.0;
  std::size_t frames = 0;
};

inline constexpr const char* kUntagged = "<untagged>";

// Throws DataError when there is no frame with both a symbol and a gold label.
EvalResult evaluate(std::span<const FrameLabeling> labelings, const TagMap& tags,
                    std::span<const Utterance> gold);

// Psi and Phi outputs for every placement, grouped by utterance.
struct WindowOutputs {
  std::vector<std::vector<SymbolDistribution>> psi;
  std::vector<std::vector<SymbolDistribution>> phi;
  std::size_t windows() const;
};

WindowOutputs collect_outputs(const nn::ParamStore<float>& params,
                              std::span<const Utterance> utterances, const WindowGeometry& g,
                              std::size_t stride = 1);

// Fraction of placements where argmax P_Psi(z|y) == argmax P_Phi(z|x).
double agreement_rate(const WindowOutputs& out);
double agreement_rate(const nn::ParamStore<float>& params, std::span<const Utterance> utterances,
                      const WindowGeometry& g, std::size_t stride = 1);

struct SymbolStats {
  std::vector<double> avg_psi;
  std::vector<double> avg_phi;
  double mean_entropy_psi_bits = 0.0;
  double mean_entropy_phi_bits = 0.0;
};

SymbolStats symbol_stats(const WindowOutputs& out);
SymbolStats symbol_stats(const nn::ParamStore<float>& params, std::span<const Utterance> utterances,
                         const WindowGeometry& g, std::size_t stride = 1);

// Held-out bound terms: cross-entropy averaged over all placements, the
// entropy of the Psi marginal over all placements, and the mean per-utterance
// marginal entropy H_Psi(z|u).
struct HeldOutTerms {
  double cross_entropy_bits = 0.0;
  double marginal_entropy_bits = 0.0;
  double utterance_entropy_bits = 0.0;
  double mi_bound_bits = 0.0;  // marginal_entropy_bits - cross_entropy_bits
  std::size_t windows = 0;
};

HeldOutTerms held_out_terms(const WindowOutputs& out);

// ---- output files ------------------------------------------------------------

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm);
void write_symbol_stats_csv(const std::filesystem::path& path, const SymbolStats& stats,
                            const TagMap& tags, const std::vector<bool>& live_mask);

}  // namespace itct
