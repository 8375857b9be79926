#include "itct/evaluation.hpp"

#include <algorithm>
#include <fstream>

#include "itct/objective.hpp"

namespace itct {

FrameLabeling label_frames(const nn::ParamStore<float>& params, const Utterance& u,
                           const WindowGeometry& g, std::size_t placement_stride) {
  g.validate();
  FrameLabeling out;
  out.utterance_id = u.id;
  out.symbols.assign(u.num_frames(), std::nullopt);
  const std::size_t half = g.center_offset();
  for (std::size_t start = 0; start + g.total <= u.num_frames(); start += placement_stride) {
    const auto y = u.frames.slice_rows(start + g.past + g.gap, start + g.total);
    const auto p = encode_forward(params, Side::Psi, y);
    out.symbols[start + half] = argmax_first(p);
  }
  return out;
}

std::vector<FrameLabeling> label_corpus(const nn::ParamStore<float>& params,
                                        std::span<const Utterance> utterances,
                                        const WindowGeometry& g, std::size_t placement_stride) {
  std::vector<FrameLabeling> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) out.push_back(label_frames(params, u, g, placement_stride));
  return out;
}

std::set<std::string> TagMap::tags_used() const {
  std::set<std::string> s;
  for (const auto& [sym, t] : tag) s.insert(t);
  return s;
}

namespace {

const Utterance& find_gold(std::span<const Utterance> gold, std::size_t i, const FrameLabeling& l) {
  if (i >= gold.size() || gold[i].id != l.utterance_id)
    throw DataError("labeling for '" + l.utterance_id + "' does not line up with the gold corpus");
  if (!gold[i].gold_labels) throw DataError("utterance '" + l.utterance_id + "' has no gold labels");
  if (gold[i].gold_labels->size() != l.symbols.size())
    throw DataError("utterance '" + l.utterance_id + "': labeling length differs from gold");
  return gold[i];
}

}  // namespace

TagMap majority_tag(std::span<const FrameLabeling> labelings, std::span<const Utterance> gold) {
  TagMap tm;
  for (std::size_t i = 0; i < labelings.size(); ++i) {
    const auto& u = find_gold(gold, i, labelings[i]);
    for (std::size_t t = 0; t < labelings[i].symbols.size(); ++t)
      if (labelings[i].symbols[t]) ++tm.counts[*labelings[i].symbols[t]][(*u.gold_labels)[t]];
  }
  for (const auto& [sym, by_label] : tm.counts) {
    // std::map iterates labels in lexicographic order, so strict > keeps the
    // smallest label among equals.
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    bool tie = false;
    for (const auto& [label, n] : by_label) {
      if (n > best_count) {
        best = &label;
        best_count = n;
        tie = false;
      } else if (n == best_count) {
        tie = true;
      }
    }
    if (best) {
      tm.tag[sym] = *best;
      if (tie) tm.ties.push_back(sym);
    }
  }
  return tm;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (auto c : row) n += c;
  return n;
}

std::vector<std::vector<double>> ConfusionMatrix::row_normalized() const {
  std::vector<std::vector<double>> out;
  for (const auto& row : counts) {
    std::size_t s = 0;
    for (auto c : row) s += c;
    std::vector<double> r(row.size(), 0.0);
    if (s > 0)
      for (std::size_t j = 0; j < row.size(); ++j) r[j] = static_cast<double>(row[j]) / static_cast<double>(s);
    out.push_back(std::move(r));
  }
  return out;
}

EvalResult evaluate(std::span<const FrameLabeling> labelings, const TagMap& tags,
                    std::span<const Utterance> gold) {
  struct Pair {
    std::string predicted, gold;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < labelings.size(); ++i) {
    const auto& u = find_gold(gold, i, labelings[i]);
    for (std::size_t t = 0; t < labelings[i].symbols.size(); ++t) {
      const auto& sym = labelings[i].symbols[t];
      if (!sym) continue;
      auto it = tags.tag.find(*sym);
      pairs.push_back({it == tags.tag.end() ? std::string(kUntagged) : it->second,
                       (*u.gold_labels)[t]});
    }
  }
  if (pairs.empty()) throw DataError("no evaluable frames");

  const auto used = tags.tags_used();
  std::set<std::string> pred_set, gold_set;
  for (const auto& p : pairs) {
    pred_set.insert(p.predicted);
    gold_set.insert(p.gold);
  }
  EvalResult r;
  r.confusion.predicted.assign(pred_set.begin(), pred_set.end());
  r.confusion.gold.assign(gold_set.begin(), gold_set.end());
  r.confusion.counts.assign(pred_set.size(), std::vector<std::size_t>(gold_set.size(), 0));
  auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), s) - v.begin());
  };
  std::size_t correct = 0, covered = 0, covered_correct = 0;
  for (const auto& p : pairs) {
    ++r.confusion.counts[index_of(r.confusion.predicted, p.predicted)]
                        [index_of(r.confusion.gold, p.gold)];
    const bool ok = p.predicted == p.gold;
    correct += ok ? 1 : 0;
    if (used.count(p.gold)) {
      ++covered;
      covered_correct += ok ? 1 : 0;
    }
  }
  r.frames = pairs.size();
  r.overall_acc = static_cast<double>(correct) / static_cast<double>(pairs.size());
  r.coverage = static_cast<double>(covered) / static_cast<double>(pairs.size());
  r.covered_acc = covered > 0 ? static_cast<double>(covered_correct) / static_cast<double>(covered) : 0.0;
  return r;
}

// ---- window-level statistics ---------------------------------------------------

std::size_t WindowOutputs::windows() const {
  std::size_t n = 0;
  for (const auto& u : psi) n += u.size();
  return n;
}

WindowOutputs collect_outputs(const nn::ParamStore<float>& params,
                              std::span<const Utterance> utterances, const WindowGeometry& g,
                              std::size_t stride) {
  WindowOutputs out;
  for (const auto& u : utterances) {
    std::vector<SymbolDistribution> ps, ph;
    for (const auto& w : windows_of(u, g, stride)) {
      const auto p = encode_forward(params, Side::Psi, w.y);
      const auto q = encode_forward(params, Side::Phi, w.x);
      ps.emplace_back(p.begin(), p.end());
      ph.emplace_back(q.begin(), q.end());
    }
    out.psi.push_back(std::move(ps));
    out.phi.push_back(std::move(ph));
  }
  return out;
}

namespace {

std::size_t argmax_d(const SymbolDistribution& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

}  // namespace

double agreement_rate(const WindowOutputs& out) {
  std::size_t n = 0, agree = 0;
  for (std::size_t u = 0; u < out.psi.size(); ++u)
    for (std::size_t i = 0; i < out.psi[u].size(); ++i) {
      ++n;
      agree += argmax_d(out.psi[u][i]) == argmax_d(out.phi[u][i]) ? 1 : 0;
    }
  return n > 0 ? static_cast<double>(agree) / static_cast<double>(n) : 0.0;
}

double agreement_rate(const nn::ParamStore<float>& params, std::span<const Utterance> utterances,
                      const WindowGeometry& g, std::size_t stride) {
  return agreement_rate(collect_outputs(params, utterances, g, stride));
}

SymbolStats symbol_stats(const WindowOutputs& out) {
  SymbolStats s;
  std::size_t n = 0;
  double hp = 0.0, hq = 0.0;
  for (std::size_t u = 0; u < out.psi.size(); ++u)
    for (std::size_t i = 0; i < out.psi[u].size(); ++i) {
      const auto& p = out.psi[u][i];
      const auto& q = out.phi[u][i];
      if (s.avg_psi.empty()) {
        s.avg_psi.assign(p.size(), 0.0);
        s.avg_phi.assign(q.size(), 0.0);
      }
      for (std::size_t z = 0; z < p.size(); ++z) {
        s.avg_psi[z] += p[z];
        s.avg_phi[z] += q[z];
      }
      hp += entropy_bits(p);
      hq += entropy_bits(q);
      ++n;
    }
  if (n > 0) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : s.avg_psi) v *= inv;
    for (auto& v : s.avg_phi) v *= inv;
    s.mean_entropy_psi_bits = hp * inv;
    s.mean_entropy_phi_bits = hq * inv;
  }
  return s;
}

SymbolStats symbol_stats(const nn::ParamStore<float>& params, std::span<const Utterance> utterances,
                         const WindowGeometry& g, std::size_t stride) {
  return symbol_stats(collect_outputs(params, utterances, g, stride));
}

HeldOutTerms held_out_terms(const WindowOutputs& out) {
  HeldOutTerms h;
  std::vector<SymbolDistribution> all_psi, all_phi;
  double utt_entropy = 0.0;
  std::size_t utt_count = 0;
  for (std::size_t u = 0; u < out.psi.size(); ++u) {
    if (out.psi[u].empty()) continue;
    utt_entropy += entropy_of_mean(out.psi[u]);
    ++utt_count;
    all_psi.insert(all_psi.end(), out.psi[u].begin(), out.psi[u].end());
    all_phi.insert(all_phi.end(), out.phi[u].begin(), out.phi[u].end());
  }
  if (all_psi.empty()) throw DataError("held-out set has no window placements");
  h.cross_entropy_bits = cross_entropy_term(all_psi, all_phi);
  h.marginal_entropy_bits = entropy_of_mean(all_psi);
  h.utterance_entropy_bits = utt_entropy / static_cast<double>(utt_count);
  h.mi_bound_bits = h.marginal_entropy_bits - h.cross_entropy_bits;
  h.windows = all_psi.size();
  return h;
}

// ---- files ---------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "predicted";
  for (const auto& g : cm.gold) out << ',' << csv_field(g);
  out << '\n';
  for (std::size_t i = 0; i < cm.predicted.size(); ++i) {
    out << csv_field(cm.predicted[i]);
    for (auto c : cm.counts[i]) out << ',' << c;
    out << '\n';
  }
}

void write_symbol_stats_csv(const std::filesystem::path& path, const SymbolStats& stats,
                            const TagMap& tags, const std::vector<bool>& live_mask) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "symbol,avg_psi,avg_phi,tag,live\n";
  for (std::size_t z = 0; z < stats.avg_psi.size(); ++z) {
    auto it = tags.tag.find(z);
    out << z << ',' << stats.avg_psi[z] << ',' << stats.avg_phi[z] << ','
        << csv_field(it == tags.tag.end() ? std::string() : it->second) << ','
        << (z < live_mask.size() && live_mask[z] ? 1 : 0) << '\n';
  }
}

}  // namespace itct
