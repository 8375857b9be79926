#include "doctest.h"

#include <random>

#include "itct/model.hpp"
#include "oracles.hpp"

using namespace itct;

TEST_CASE("encoder parameter layout") {
  const ModelDims dims{39, 64, 64};
  const auto p = make_encoder_params<float>(dims);
  CHECK(p.at("psi.out.W").rows == 64);
  CHECK(p.at("psi.out.W").cols == 64);
  CHECK(p.at("phi.gru.W_r").rows == 64);
  CHECK(p.at("phi.gru.W_r").cols == 39);
  CHECK(p.at("phi.gru.U_c").cols == 64);
  CHECK(p.at("psi.gru.h0").size() == 64);
  CHECK(p.at(kThetaLogits).size() == 64);
  CHECK(dims_of(p) == dims);
  CHECK(std::string(side_prefix(Side::Psi)) == "psi.");
  CHECK(out_bias_name(Side::Phi) == "phi.out.b");
}

TEST_CASE("initialisation is seeded") {
  const ModelDims dims{4, 8, 16};
  const auto a = init_encoder_params<float>(dims, 1);
  const auto b = init_encoder_params<float>(dims, 1);
  const auto c = init_encoder_params<float>(dims, 2);
  CHECK(a.at("psi.out.W").value == b.at("psi.out.W").value);
  CHECK(a.at("psi.out.W").value != c.at("psi.out.W").value);
  for (float v : a.at("phi.out.b").value) CHECK(v == 0.0f);
  for (float v : a.at(kThetaLogits).value) CHECK(v == 0.0f);
}

TEST_CASE("tape and tape-free encoders agree exactly") {
  const ModelDims dims{5, 12, 10};
  auto p = init_encoder_params<float>(dims, 7);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (auto& v : p.at("psi.out.b").value) v = d(rng);
  Matrix<float> frames(15, 5);
  for (auto& v : frames.data) v = d(rng);
  for (auto side : {Side::Psi, Side::Phi}) {
    nn::Tape<float> t;
    auto enc = bind_encoder(t, p, side);
    auto out = encode(t, enc, frames);
    const auto fwd = encode_forward(p, side, frames);
    REQUIRE(fwd.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(fwd[i] == t.value(out)[i]);
  }
}

TEST_CASE("zero output layer gives the uniform distribution, argmax ties go to 0") {
  const ModelDims dims{3, 4, 8};
  auto p = init_encoder_params<float>(dims, 3);
  for (auto& v : p.at("psi.out.W").value) v = 0.0f;
  Matrix<float> frames(15, 3);
  frames.data.assign(45, 0.5f);
  const auto out = encode_forward(p, Side::Psi, frames);
  for (float v : out) CHECK(v == doctest::Approx(0.125f));
  CHECK(argmax_first(out) == 0);
  const std::vector<float> tie = {0.1f, 0.4f, 0.4f, 0.1f};
  CHECK(argmax_first(tie) == 1);

  const auto theta = marginal_theta(p);
  for (float v : theta) CHECK(v == doctest::Approx(0.125f));
}

TEST_CASE("handcrafted encoder is essentially deterministic") {
  const auto p = oracle::perfect_params<float>(4, 64, {3, 9, 27, 40});
  for (std::size_t a = 0; a < 4; ++a) {
    Matrix<float> frames(15, 4);
    for (std::size_t t = 0; t < 15; ++t) frames(t, a) = 1.0f;
    const auto q = encode_forward(p, Side::Phi, frames);
    CHECK(argmax_first(q) == std::vector<std::size_t>{3, 9, 27, 40}[a]);
    CHECK(q[argmax_first(q)] > 0.999f);
  }
}

TEST_CASE("softmax_values") {
  const std::vector<double> l = {0.0, std::log(3.0)};
  const auto s = softmax_values<double>(l);
  CHECK(s[0] == doctest::Approx(0.25));
  CHECK(s[1] == doctest::Approx(0.75));
}

TEST_CASE("alphabet") {
  Alphabet a(8);
  CHECK(a.live_count() == 8);
  a.live_mask[2] = false;
  CHECK(a.live_count() == 7);
  a.live_mask.pop_back();
  CHECK_THROWS(a.validate());
}
