#pragma once

// Reference implementations written straight from the formulas, plus shared
// fixtures. Nothing here calls the library's objective code.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "itct/corpus.hpp"
#include "itct/model.hpp"

namespace oracle {

using Dist = std::vector<double>;

inline long double log2l_clamped(long double v) { return std::log2(v < 1e-30L ? 1e-30L : v); }

// (1/N) sum_i sum_z psi_i(z) * (-log2 phi_i(z)), terms with psi_i(z) == 0 skipped.
inline double cross_entropy(const std::vector<Dist>& psi, const std::vector<Dist>& phi) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    long double row = 0.0L;
    for (std::size_t z = 0; z < psi[i].size(); ++z)
      if (psi[i][z] != 0.0) row -= static_cast<long double>(psi[i][z]) * log2l_clamped(phi[i][z]);
    total += row;
  }
  return static_cast<double>(total / static_cast<long double>(psi.size()));
}

// H of the average distribution, 0 log 0 = 0.
inline double entropy_of_mean(const std::vector<Dist>& psi) {
  const std::size_t z_count = psi.front().size();
  long double h = 0.0L;
  for (std::size_t z = 0; z < z_count; ++z) {
    long double m = 0.0L;
    for (const auto& p : psi) m += p[z];
    m /= static_cast<long double>(psi.size());
    if (m > 0.0L) h -= m * std::log2(m);
  }
  return static_cast<double>(h);
}

// I(a;b) = sum_{a,b} p(a,b) log2 p(a,b) / (p(a) p(b)), by explicit enumeration.
inline double mutual_information(const itct::Matrix<double>& joint) {
  std::vector<long double> pa(joint.rows, 0.0L), pb(joint.cols, 0.0L);
  for (std::size_t a = 0; a < joint.rows; ++a)
    for (std::size_t b = 0; b < joint.cols; ++b) {
      pa[a] += joint(a, b);
      pb[b] += joint(a, b);
    }
  long double mi = 0.0L;
  for (std::size_t a = 0; a < joint.rows; ++a)
    for (std::size_t b = 0; b < joint.cols; ++b) {
      const long double p = joint(a, b);
      if (p > 0.0L) mi += p * std::log2(p / (pa[a] * pb[b]));
    }
  return static_cast<double>(mi);
}

// A random distribution; with `sparse`, roughly a quarter of the entries are
// exactly zero.
inline Dist random_dist(std::mt19937_64& rng, std::size_t n, bool sparse = false) {
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution drop(0.25);
  Dist d(n);
  double s = 0.0;
  for (auto& v : d) {
    v = (sparse && drop(rng)) ? 0.0 : e(rng);
    s += v;
  }
  if (s == 0.0) {
    d[0] = 1.0;
    return d;
  }
  for (auto& v : d) v /= s;
  return d;
}

inline itct::Matrix<double> random_joint(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  const auto flat = random_dist(rng, rows * cols, true);
  itct::Matrix<double> m(rows, cols);
  m.data = flat;
  return m;
}

// Encoder parameters that read a one-hot input held over the whole window and
// put (almost) all mass on symbol map[input index]. The update gate is pinned
// open so the state tracks tanh(gain * input).
template <typename T>
itct::nn::ParamStore<T> perfect_params(std::size_t input_dim, std::size_t alphabet,
                                       const std::vector<std::size_t>& map, T gain = 4,
                                       T sharp = 40) {
  const itct::ModelDims dims{input_dim, input_dim, alphabet};
  auto p = itct::make_encoder_params<T>(dims);
  for (auto side : {itct::Side::Psi, itct::Side::Phi}) {
    const auto g = itct::gru_prefix(side);
    auto& bu = p.at(g + "b_u");
    for (auto& v : bu.value) v = T(-30);
    auto& wc = p.at(g + "W_c");
    for (std::size_t i = 0; i < input_dim; ++i) wc.value[i * input_dim + i] = gain;
    auto& w = p.at(itct::out_weight_name(side));
    for (std::size_t a = 0; a < input_dim; ++a) w.value[map[a] * input_dim + a] = sharp;
  }
  return p;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("itct_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace oracle
