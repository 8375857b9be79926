#include "itct/corpus.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "itct/binary_io.hpp"

namespace itct {

namespace fs = std::filesystem;

namespace {

constexpr char kFeatureMagic[4] = {'I', 'T', 'C', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

void check_stochastic_rows(const Matrix<double>& m, const char* what) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (double v : m.row(r)) {
      if (v < 0.0) throw ConfigError(std::string(what) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw ConfigError(std::string(what) + " row " + std::to_string(r) + " does not sum to 1");
  }
}

Matrix<double> matrix_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + " must be a non-empty array");
  Matrix<double> m(j.size(), j[0].size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != m.cols) throw ConfigError(std::string(what) + " rows differ in length");
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

nlohmann::json matrix_to_json(const Matrix<double>& m) {
  auto j = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    j.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return j;
}

}  // namespace

void Utterance::validate() const {
  if (frames.rows == 0) throw DataError("utterance '" + id + "' has no frames");
  if (frames.data.size() != frames.rows * frames.cols)
    throw DataError("utterance '" + id + "' frame storage does not match its shape");
  if (gold_labels && gold_labels->size() != frames.rows)
    throw DataError("utterance '" + id + "' has " + std::to_string(gold_labels->size()) +
                    " labels for " + std::to_string(frames.rows) + " frames");
}

void WindowGeometry::validate() const {
  if (past < 1 || future < 1) throw ConfigError("window geometry needs past >= 1 and future >= 1");
  if (past + gap + future != total)
    throw ConfigError("window geometry: past + gap + future must equal total");
}

// ---- files ---------------------------------------------------------------

FrameMatrix read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader reader(bytes, path.string());
  auto magic = reader.take(4);
  if (!std::equal(magic.begin(), magic.end(), kFeatureMagic))
    throw DataError(path.string() + ": bad magic, not an ITCF feature file");
  const auto version = reader.u32();
  if (version != kFeatureVersion)
    throw DataError(path.string() + ": unsupported feature file version " + std::to_string(version));
  const std::size_t t = reader.u32();
  const std::size_t d = reader.u32();
  if (reader.remaining() != t * d * 4)
    throw DataError(path.string() + ": header says " + std::to_string(t) + "x" + std::to_string(d) +
                    " but payload holds " + std::to_string(reader.remaining()) + " bytes");
  FrameMatrix frames(t, d);
  for (auto& v : frames.data) v = reader.f32();
  return frames;
}

void write_features(const fs::path& path, const FrameMatrix& frames) {
  ByteWriter w;
  w.raw(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(frames.rows));
  w.u32(static_cast<std::uint32_t>(frames.cols));
  for (float v : frames.data) w.f32(v);
  w.save(path);
}

std::vector<std::string> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    labels.push_back(line);
  }
  return labels;
}

void write_labels(const fs::path& path, const std::vector<std::string>& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write label file " + path.string());
  for (const auto& l : labels) out << l << '\n';
}

fs::path resolve_manifest(const fs::path& corpus_path) {
  if (fs::is_directory(corpus_path)) return corpus_path / "manifest.tsv";
  return corpus_path;
}

Corpus load_corpus(const fs::path& corpus_path) {
  const fs::path manifest_path = resolve_manifest(corpus_path);
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  const fs::path base = manifest_path.parent_path();
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto fields = split_tabs(line);
      if (fields[0] == "#placement_stride") {
        if (fields.size() < 2) throw DataError("manifest: #placement_stride needs a value");
        corpus.placement_stride = std::stoul(fields[1]);
        if (corpus.placement_stride == 0) throw DataError("manifest: placement stride must be >= 1");
      }
      continue;
    }
    auto fields = split_tabs(line);
    if (fields.size() < 2 || fields[0].empty() || fields[1].empty())
      throw DataError("manifest line " + std::to_string(line_no) + ": expected id and feature path");
    Utterance u;
    u.id = fields[0];
    const fs::path feature_path = base / fields[1];
    if (!fs::exists(feature_path))
      throw DataError("utterance '" + u.id + "': missing feature file " + feature_path.string());
    try {
      u.frames = read_features(feature_path);
    } catch (const DataError& e) {
      throw DataError("utterance '" + u.id + "': " + e.what());
    }
    if (fields.size() >= 3 && !fields[2].empty()) {
      const fs::path label_path = base / fields[2];
      if (!fs::exists(label_path))
        throw DataError("utterance '" + u.id + "': missing label file " + label_path.string());
      u.gold_labels = read_labels(label_path);
    }
    if (fields.size() >= 4 && !fields[3].empty()) u.speaker = fields[3];
    u.validate();
    if (!corpus.utterances.empty() && corpus.utterances.front().dim() != u.dim())
      throw DataError("utterance '" + u.id + "': feature dimension " + std::to_string(u.dim()) +
                      " differs from the corpus dimension " +
                      std::to_string(corpus.utterances.front().dim()));
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

fs::path write_corpus(const fs::path& dir, const Corpus& corpus) {
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw DataError("cannot create " + (dir / "features").string() + ": " + ec.message());
  const fs::path manifest = dir / "manifest.tsv";
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  if (corpus.placement_stride != 1) out << "#placement_stride\t" << corpus.placement_stride << '\n';
  for (const auto& u : corpus.utterances) {
    u.validate();
    const std::string feat = "features/" + u.id + ".itcf";
    write_features(dir / feat, u.frames);
    out << u.id << '\t' << feat;
    if (u.gold_labels || u.speaker) {
      out << '\t';
      if (u.gold_labels) {
        fs::create_directories(dir / "labels");
        const std::string lab = "labels/" + u.id + ".txt";
        write_labels(dir / lab, *u.gold_labels);
        out << lab;
      }
      if (u.speaker) out << '\t' << *u.speaker;
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + manifest.string());
  return manifest;
}

// ---- preprocessing -------------------------------------------------------

Utterance normalize_utterance(const Utterance& u) {
  u.validate();
  double sum_sq = 0.0;
  for (float v : u.frames.data) sum_sq += static_cast<double>(v) * v;
  const double mean_sq = sum_sq / static_cast<double>(u.num_frames());
  if (mean_sq == 0.0) throw DataError("utterance '" + u.id + "' is all zeros; cannot normalize");
  const double scale = 1.0 / std::sqrt(mean_sq);
  Utterance out = u;
  for (auto& v : out.frames.data) v = static_cast<float>(v * scale);
  return out;
}

std::size_t count_windows(std::size_t num_frames, const WindowGeometry& g, std::size_t stride) {
  if (num_frames < g.total) return 0;
  return (num_frames - g.total) / stride + 1;
}

std::vector<WindowPair> windows_of(const Utterance& u, const WindowGeometry& g, std::size_t stride) {
  g.validate();
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  std::vector<WindowPair> out;
  out.reserve(count_windows(u.num_frames(), g, stride));
  for (std::size_t t = 0; t + g.total <= u.num_frames(); t += stride) {
    WindowPair w;
    w.x = u.frames.slice_rows(t, t + g.past);
    w.y = u.frames.slice_rows(t + g.past + g.gap, t + g.total);
    w.utterance_id = u.id;
    w.center_frame = t + g.center_offset();
    out.push_back(std::move(w));
  }
  return out;
}

// ---- synthetic -----------------------------------------------------------

std::string latent_name(std::size_t k) { return "c" + std::to_string(k); }

void SyntheticSpec::validate() const {
  if (num_latent == 0) throw ConfigError("synthetic spec: num_latent must be >= 1");
  if (x_channel.rows != num_latent || y_channel.rows != num_latent)
    throw ConfigError("synthetic spec: channel rows must equal num_latent");
  if (x_channel.cols == 0 || x_channel.cols != y_channel.cols)
    throw ConfigError("synthetic spec: channels must share a non-empty observation alphabet");
  if (latent_prior.size() != num_latent)
    throw ConfigError("synthetic spec: latent_prior length must equal num_latent");
  check_stochastic_rows(x_channel, "x_channel");
  check_stochastic_rows(y_channel, "y_channel");
  double s = 0.0;
  for (double p : latent_prior) {
    if (p < 0.0) throw ConfigError("latent_prior has a negative entry");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-12) throw ConfigError("latent_prior does not sum to 1");
  if (frames_per_side == 0) throw ConfigError("synthetic spec: frames_per_side must be >= 1");
  if (!(jitter_sigma >= 0.0)) throw ConfigError("synthetic spec: jitter_sigma must be >= 0");
  if (num_utterances == 0 || windows_per_utterance == 0)
    throw ConfigError("synthetic spec: need at least one utterance and one window");
}

SyntheticSpec SyntheticSpec::identity(std::size_t k) { return symmetric(k, 0.0); }

SyntheticSpec SyntheticSpec::symmetric(std::size_t k, double flip) {
  SyntheticSpec s;
  s.num_latent = k;
  s.x_channel = Matrix<double>(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      s.x_channel(a, b) = a == b ? 1.0 - flip : (k > 1 ? flip / static_cast<double>(k - 1) : 0.0);
  s.y_channel = s.x_channel;
  s.latent_prior.assign(k, 1.0 / static_cast<double>(k));
  return s;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    const auto k = j.value("num_latent", std::size_t{4});
    if (preset == "identity") {
      s = SyntheticSpec::identity(k);
    } else if (preset == "symmetric") {
      s = SyntheticSpec::symmetric(k, j.at("flip").get<double>());
    } else {
      throw ConfigError("synthetic spec: unknown preset '" + preset + "'");
    }
  } else {
    s.num_latent = j.at("num_latent").get<std::size_t>();
    s.x_channel = matrix_from_json(j.at("x_channel"), "x_channel");
    s.y_channel = matrix_from_json(j.at("y_channel"), "y_channel");
    s.latent_prior = j.at("latent_prior").get<std::vector<double>>();
  }
  s.frames_per_side = j.value("frames_per_side", s.frames_per_side);
  s.gap_frames = j.value("gap_frames", s.gap_frames);
  s.jitter_sigma = j.value("jitter_sigma", s.jitter_sigma);
  s.num_utterances = j.value("num_utterances", s.num_utterances);
  s.windows_per_utterance = j.value("windows_per_utterance", s.windows_per_utterance);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"num_latent", s.num_latent},
          {"x_channel", matrix_to_json(s.x_channel)},
          {"y_channel", matrix_to_json(s.y_channel)},
          {"latent_prior", s.latent_prior},
          {"frames_per_side", s.frames_per_side},
          {"gap_frames", s.gap_frames},
          {"jitter_sigma", s.jitter_sigma},
          {"num_utterances", s.num_utterances},
          {"windows_per_utterance", s.windows_per_utterance},
          {"seed", s.seed}};
}

Matrix<double> joint_table_of(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t a_count = spec.num_symbols();
  Matrix<double> joint(a_count, a_count);
  for (std::size_t s = 0; s < spec.num_latent; ++s)
    for (std::size_t a = 0; a < a_count; ++a)
      for (std::size_t b = 0; b < a_count; ++b)
        joint(a, b) += spec.latent_prior[s] * spec.x_channel(s, a) * spec.y_channel(s, b);
  return joint;
}

SyntheticCorpus synth_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<std::size_t> latent(spec.latent_prior.begin(), spec.latent_prior.end());
  std::vector<std::discrete_distribution<std::size_t>> x_side, y_side;
  for (std::size_t s = 0; s < spec.num_latent; ++s) {
    auto xr = spec.x_channel.row(s);
    auto yr = spec.y_channel.row(s);
    x_side.emplace_back(xr.begin(), xr.end());
    y_side.emplace_back(yr.begin(), yr.end());
  }
  std::normal_distribution<double> jitter(0.0, 1.0);

  const std::size_t dim = spec.num_symbols();
  const std::size_t per_window = spec.window_frames();
  SyntheticCorpus out;
  out.corpus.placement_stride = per_window;
  for (std::size_t n = 0; n < spec.num_utterances; ++n) {
    Utterance u;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", n);
    u.id = id;
    u.frames = FrameMatrix(per_window * spec.windows_per_utterance, dim);
    std::vector<std::string> labels;
    labels.reserve(u.frames.rows);
    for (std::size_t w = 0; w < spec.windows_per_utterance; ++w) {
      const std::size_t s = latent(rng);
      const std::size_t xs = x_side[s](rng);
      const std::size_t ys = y_side[s](rng);
      const std::size_t base = w * per_window;
      auto fill_side = [&](std::size_t first, std::size_t sym) {
        for (std::size_t f = 0; f < spec.frames_per_side; ++f) {
          auto row = u.frames.row(first + f);
          for (std::size_t c = 0; c < dim; ++c) {
            double v = c == sym ? 1.0 : 0.0;
            if (spec.jitter_sigma > 0.0) v += spec.jitter_sigma * jitter(rng);
            row[c] = static_cast<float>(v);
          }
        }
      };
      fill_side(base, xs);
      fill_side(base + spec.frames_per_side + spec.gap_frames, ys);
      for (std::size_t f = 0; f < per_window; ++f) labels.push_back(latent_name(s));
    }
    u.gold_labels = std::move(labels);
    out.corpus.utterances.push_back(std::move(u));
  }
  out.joint_table = joint_table_of(spec);
  return out;
}

double true_mi_oracle(const Matrix<double>& joint) {
  if (joint.empty()) throw DataError("joint table is empty");
  double total = 0.0;
  for (double p : joint.data) {
    if (!(p >= 0.0)) throw DataError("joint table has a negative or NaN entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("joint table does not sum to 1");
  std::vector<double> row_m(joint.rows, 0.0), col_m(joint.cols, 0.0);
  for (std::size_t a = 0; a < joint.rows; ++a)
    for (std::size_t b = 0; b < joint.cols; ++b) {
      row_m[a] += joint(a, b);
      col_m[b] += joint(a, b);
    }
  double mi = 0.0;
  for (std::size_t a = 0; a < joint.rows; ++a)
    for (std::size_t b = 0; b < joint.cols; ++b) {
      const double p = joint(a, b);
      if (p > 0.0) mi += p * std::log2(p / (row_m[a] * col_m[b]));
    }
  return mi;
}

}  // namespace itct
