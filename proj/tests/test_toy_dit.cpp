#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ditf/modulation.hpp"
#include "ditf/toy_dit.hpp"
#include "helpers.hpp"

using namespace ditf;
using testing::error_of;

namespace {

ConditionEmbedding condition(std::uint64_t seed, int t, std::size_t dim = 16) {
  FixtureRng rng(seed);
  ConditionEmbedding c{t, std::vector<float>(dim)};
  for (auto& v : c.condition) v = rng.uniform_pm1();
  return c;
}

bool all_zero(const std::vector<float>& v) {
  for (float x : v)
    if (x != 0.0f) return false;
  return true;
}

bool bitwise(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (testing::float_bits(a[i]) != testing::float_bits(b[i])) return false;
  return true;
}

// One line per value: "<name> <index> <hex bits>".
std::string golden_text(const BlockModulation& m) {
  std::ostringstream out;
  const std::pair<const char*, const std::vector<float>*> parts[] = {
      {"gamma1", &m.gamma1}, {"beta1", &m.beta1}, {"alpha1", &m.alpha1},
      {"gamma2", &m.gamma2}, {"beta2", &m.beta2}, {"alpha2", &m.alpha2}};
  for (const auto& [name, values] : parts) {
    for (std::size_t i = 0; i < values->size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s %zu %08x\n", name, i, testing::float_bits((*values)[i]));
      out << buf;
    }
  }
  return out.str();
}

}  // namespace

TEST_CASE("init is deterministic and seed dependent") {
  const ToyBlockConfig cfg;
  const auto a = init_toy_block(cfg, 5, false);
  const auto b = init_toy_block(cfg, 5, false);
  const auto c = init_toy_block(cfg, 6, false);
  CHECK(a.query.values == b.query.values);
  CHECK(a.mod_out.values == b.mod_out.values);
  CHECK(a.query.values != c.query.values);
  CHECK(weights_from_container(weights_to_container(a)).mod_out_bias == a.mod_out_bias);
}

TEST_CASE("config validation") {
  ToyBlockConfig cfg;
  cfg.heads = 3;
  CHECK(error_of([&] { init_toy_block(cfg, 0, false); }) == ErrorCode::invalid_argument);
  cfg = {};
  cfg.tokens = 0;
  CHECK(error_of([&] { init_toy_block(cfg, 0, false); }) == ErrorCode::invalid_argument);
}

TEST_CASE("zero init regresses zero modulation") {
  const auto w = init_toy_block({}, 9, true);
  for (int t : {0, 260, 999}) {
    const auto m = regress_modulation(w, condition(1, t));
    CHECK(all_zero(m.gamma1));
    CHECK(all_zero(m.beta1));
    CHECK(all_zero(m.alpha1));
    CHECK(all_zero(m.gamma2));
    CHECK(all_zero(m.beta2));
    CHECK(all_zero(m.alpha2));
  }
}

TEST_CASE("regression depends on the timestep") {
  const auto w = init_toy_block({}, 9, false);
  const auto a = regress_modulation(w, condition(1, 141));
  const auto b = regress_modulation(w, condition(1, 260));
  CHECK(a.gamma1 != b.gamma1);
  CHECK(error_of([&] { regress_modulation(w, condition(1, 1000)); }) == ErrorCode::invalid_argument);
  CHECK(error_of([&] { regress_modulation(w, condition(1, 10, 15)); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("golden modulation at t = 260") {
  const auto w = init_toy_block({}, 2024, false);
  const std::string actual = golden_text(regress_modulation(w, condition(7, 260)));
  const std::string path = std::string(DITF_GOLDEN_DIR) + "/regress_modulation_t260.txt";
  if (std::getenv("DITF_UPDATE_GOLDEN") != nullptr) {
    std::ofstream(path) << actual;
  }
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path << " (run with DITF_UPDATE_GOLDEN=1)");
  std::stringstream expected;
  expected << in.rdbuf();
  CHECK(expected.str() == actual);
}

TEST_CASE("timestep embedding closed form") {
  const auto e = timestep_embedding(260, 16);
  for (std::size_t i = 0; i < 8; ++i) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / 8.0);
    CHECK(e[i] == doctest::Approx(std::cos(260.0 * f)).epsilon(1e-6));
    CHECK(e[8 + i] == doctest::Approx(std::sin(260.0 * f)).epsilon(1e-6));
  }
  CHECK(timestep_embedding(3, 5)[4] == 0.0f);
}

TEST_CASE("softmax rows sum to one") {
  std::vector<double> s{1, 2, 3, -1000, 0, 1000, 5, 5, 5};
  softmax_rows(s, 3, 3);
  for (int r = 0; r < 3; ++r) CHECK(std::fabs(s[r * 3] + s[r * 3 + 1] + s[r * 3 + 2] - 1.0) <= 1e-6);
  CHECK(s[6] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("single-token attention is value then output projection") {
  ToyBlockConfig cfg;
  cfg.tokens = 1;
  const auto w = init_toy_block(cfg, 3, false);
  const auto x = testing::noise_feature(4, 1, 16);
  const auto y = self_attention(w, x);
  for (std::size_t j = 0; j < 16; ++j) {
    double expected = 0;
    for (std::size_t k = 0; k < 16; ++k) {
      double v = 0;
      for (std::size_t i = 0; i < 16; ++i) v += static_cast<double>(x.at(0, i)) * w.value.at(i, k);
      expected += static_cast<double>(static_cast<float>(v)) * w.output.at(k, j);
    }
    CHECK(y.at(0, j) == doctest::Approx(expected).epsilon(1e-5));
  }
}

TEST_CASE("attention is token permutation equivariant") {
  const auto w = init_toy_block({}, 3, false);
  const auto x = testing::noise_feature(8, 16, 16);
  std::vector<float> rev(x.data().size());
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t d = 0; d < 16; ++d) rev[(15 - t) * 16 + d] = x.at(t, d);
  const auto y = self_attention(w, x);
  const auto yr = self_attention(w, FeatureMap(rev, 16, 16, x.grid(), x.image_size()));
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t d = 0; d < 16; ++d) CHECK(yr.at(15 - t, d) == doctest::Approx(y.at(t, d)).epsilon(1e-5));
}

TEST_CASE("trace stages are consistent") {
  const auto w = init_toy_block({}, 12, false);
  const auto z = testing::noise_feature(13, 16, 16);
  const auto out = block_forward(w, z, condition(2, 260));
  CHECK(out.trace.pre_adaln_1.stage() == Stage::pre_adaln);
  CHECK(out.trace.post_adaln_1.stage() == Stage::post_adaln);
  CHECK(out.trace.pre_adaln_2.stage() == Stage::pre_adaln);
  CHECK(out.trace.post_adaln_2.stage() == Stage::post_adaln);
  const auto re = adaln(out.trace.pre_adaln_1, out.modulation.gamma1, out.modulation.beta1, kToyLayerNormEps);
  CHECK(bitwise(re.data(), out.trace.post_adaln_1.data()));
  const auto re2 = adaln(out.trace.pre_adaln_2, out.modulation.gamma2, out.modulation.beta2, kToyLayerNormEps);
  CHECK(bitwise(re2.data(), out.trace.post_adaln_2.data()));
  CHECK(error_of([&] { block_forward(w, testing::noise_feature(1, 15, 16), condition(2, 1)); }) ==
        ErrorCode::shape_mismatch);
}

TEST_CASE("gated-branch mode with zero init is the identity") {
  const auto w = init_toy_block({}, 21, true);
  ForwardOptions o;
  o.mode = ForwardMode::eq2;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto z = testing::noise_feature(s, 16, 16, 4.0f);
    CHECK(bitwise(block_forward(w, z, condition(s, 500), o).next.data(), z.data()));
  }
}

TEST_CASE("identity-path gates recompose exactly") {
  const auto w = init_toy_block({}, 31, false);
  const auto z = testing::noise_feature(32, 16, 16);
  const auto cond = condition(3, 260);
  const auto full = block_forward(w, z, cond);
  ForwardOptions gated;
  gated.zero_gates = true;
  const auto zeroed = block_forward(w, z, cond, gated);

  // With zero gates the output is the ungated branch.
  const auto branch = block_branch(w, z, zeroed.modulation);
  CHECK(bitwise(zeroed.next.data(), branch.data()));

  // Adding alpha1*z to the attention output recovers the full pre_adaln_2.
  const std::size_t C = 16;
  const auto& attn = zeroed.trace.pre_adaln_2;
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t d = 0; d < C; ++d) {
      const float expected = attn.at(t, d) + full.modulation.alpha1[d] * z.at(t, d);
      CHECK(testing::float_bits(full.trace.pre_adaln_2.at(t, d)) == testing::float_bits(expected));
    }

  // Removing alpha2*z2 from the output leaves exactly the feedforward term.
  const auto ff = feedforward(w, full.trace.post_adaln_2);
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t d = 0; d < C; ++d) {
      const float expected = ff.at(t, d) + full.modulation.alpha2[d] * full.trace.pre_adaln_2.at(t, d);
      CHECK(testing::float_bits(full.next.at(t, d)) == testing::float_bits(expected));
    }
}

TEST_CASE("planted alpha peaks") {
  auto w = init_toy_block({}, 41, true);
  const std::vector<std::size_t> dims{3, 11};
  plant_alpha_peaks(w, dims, 50.0f);
  CHECK_FALSE(w.zero_init);
  const auto m = regress_modulation(w, condition(1, 260));
  CHECK(m.alpha2[3] == 50.0f);
  CHECK(m.alpha2[11] == 50.0f);
  CHECK(m.alpha2[0] == 0.0f);
  CHECK(error_of([&] { plant_alpha_peaks(w, std::vector<std::size_t>{16}, 1.0f); }) == ErrorCode::invalid_argument);
}
