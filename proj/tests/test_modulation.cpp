#include <doctest.h>

#include <cmath>
#include <limits>

#include "ditf/modulation.hpp"
#include "helpers.hpp"

using namespace ditf;
using testing::error_of;

namespace {

FeatureMap planted(std::uint64_t seed, std::vector<std::size_t> dims, float scale = 200.0f) {
  SynthOptions o;
  o.seed = seed;
  o.planted_dims = std::move(dims);
  o.scale = scale;
  return synthesize_massive_feature(o);
}

double max_ratio(const FeatureMap& f) {
  double peak = 0;
  for (float v : f.data()) peak = std::max(peak, std::fabs(static_cast<double>(v)));
  return peak / median_abs(f);
}

}  // namespace

TEST_CASE("layer norm closed form") {
  const auto out = layer_norm(testing::from_rows({{1, 2, 3}}), 0.0);
  CHECK(out.at(0, 0) == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(out.at(0, 1) == 0.0f);
  CHECK(out.at(0, 2) == doctest::Approx(1.224745).epsilon(1e-6));

  const auto flat = layer_norm(testing::from_rows({{4, 4, 4}}), 1e-6);
  for (float v : flat.data()) CHECK(v == 0.0f);
  const auto flat0 = layer_norm(testing::from_rows({{4, 4, 4}}), 0.0);
  for (float v : flat0.data()) CHECK(v == 0.0f);

  CHECK(error_of([] { layer_norm(testing::from_rows({{1}}), 1e-6); }) == ErrorCode::invalid_argument);
}

TEST_CASE("layer norm moments and shift invariance") {
  const auto f = testing::noise_feature(13, 40, 24, 5.0f);
  const auto out = layer_norm(f, 1e-6);
  for (std::size_t t = 0; t < f.tokens(); ++t) {
    double mean = 0;
    for (float v : out.row(t)) mean += v;
    mean /= 24;
    double var = 0;
    for (float v : out.row(t)) var += (v - mean) * (v - mean);
    var /= 24;
    CHECK(std::fabs(mean) <= 1e-6);
    CHECK(std::fabs(var - 1.0) <= 1e-5);
  }
  std::vector<float> shifted(f.data().begin(), f.data().end());
  for (std::size_t t = 0; t < f.tokens(); ++t)
    for (std::size_t d = 0; d < 24; ++d) shifted[t * 24 + d] += 3.0f * static_cast<float>(t);
  const auto out2 = layer_norm(FeatureMap(shifted, 40, 24, f.grid(), f.image_size()), 1e-6);
  for (std::size_t i = 0; i < shifted.size(); ++i) CHECK(std::fabs(out.data()[i] - out2.data()[i]) <= 1e-5);
}

TEST_CASE("adaln identities") {
  const auto f = testing::noise_feature(17, 30, 10, 2.0f);
  const auto ln = layer_norm(f, 1e-6);
  const auto id = adaln(f, ModulationParams::identity(10), 1e-6);
  CHECK(id.stage() == Stage::post_adaln);
  for (std::size_t i = 0; i < ln.data().size(); ++i)
    CHECK(testing::float_bits(ln.data()[i]) == testing::float_bits(id.data()[i]));

  std::vector<float> gamma(10, -1.0f);
  std::vector<float> beta{1, -2, 3, 0.5f, 0, 7, -8, 9, 0.25f, -1};
  const auto annihilated = adaln(f, gamma, beta, 1e-6);
  for (std::size_t t = 0; t < 30; ++t)
    for (std::size_t d = 0; d < 10; ++d) CHECK(annihilated.at(t, d) == beta[d]);

  CHECK(error_of([&] { adaln(f, std::vector<float>(9), std::vector<float>(9), 1e-6); }) ==
        ErrorCode::shape_mismatch);
}

TEST_CASE("small gamma on the planted dim lowers the peak ratio") {
  const auto f = planted(23, {5});
  std::vector<float> gamma(64, 0.0f), beta(64, 0.0f);
  gamma[5] = -0.95f;
  const auto post = adaln(f, gamma, beta, 1e-6);
  CHECK(max_ratio(post) < max_ratio(f));
  CHECK(detect_massive(post).hits.size() < detect_massive(f).hits.size());
}

TEST_CASE("discard channels") {
  const auto f = planted(31, {5});
  const auto same = discard_channels(f, {});
  CHECK(same.bitwise_equal(f));

  const std::vector<std::size_t> dims{5};
  const auto once = discard_channels(f, dims);
  for (std::size_t t = 0; t < f.tokens(); ++t) {
    CHECK(once.at(t, 5) == 0.0f);
    CHECK(once.at(t, 4) == f.at(t, 4));
  }
  for (const auto& h : detect_massive(once).hits) CHECK(h.dim != 5);
  CHECK(discard_channels(once, dims).bitwise_equal(once));
  CHECK(error_of([&] { discard_channels(f, std::vector<std::size_t>{64}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("auto discard") {
  // Residual 50x dim on a post-AdaLN map.
  auto f = testing::noise_feature(41, 64, 32);
  const double med = median_abs(f);
  for (std::size_t t = 0; t < 64; ++t) f.at(t, 9) = static_cast<float>(50.0 * med);
  f.set_stage(Stage::post_adaln);

  AutoDiscardOptions o;
  const auto r = auto_discard(f, o);
  CHECK(r.discarded == std::vector<std::size_t>{9});
  for (std::size_t t = 0; t < 64; ++t) CHECK(r.feature.at(t, 9) == 0.0f);

  o.tau = std::numeric_limits<double>::infinity();
  const auto none = auto_discard(f, o);
  CHECK(none.discarded.empty());
  CHECK(none.feature.bitwise_equal(f));

  auto noise = testing::noise_feature(43, 64, 32);
  noise.set_stage(Stage::post_adaln);
  CHECK(auto_discard(noise, {}).discarded.empty());

  auto raw = f;
  raw.set_stage(Stage::pre_adaln);
  CHECK(error_of([&] { auto_discard(raw, {}); }) == ErrorCode::stage_mismatch);
  AutoDiscardOptions any;
  any.allow_any_stage = true;
  CHECK(auto_discard(raw, any).discarded == std::vector<std::size_t>{9});
}

TEST_CASE("extract composition") {
  auto f = planted(51, {5});

  SUBCASE("identity params without discard equal layer norm") {
    ExtractionConfig cfg;
    cfg.discard_mode = DiscardMode::none;
    const auto r = extract(f, ModulationParams::identity(64), cfg);
    const auto ln = layer_norm(f, cfg.eps);
    for (std::size_t i = 0; i < ln.data().size(); ++i)
      CHECK(testing::float_bits(ln.data()[i]) == testing::float_bits(r.feature.data()[i]));
    CHECK(r.report.discarded_dims.empty());
  }
  SUBCASE("suppressing gamma plus auto discard clears every hit") {
    auto p = ModulationParams::identity(64);
    p.gamma[5] = -0.9f;
    const auto r = extract(f, p, {});
    CHECK(r.report.post.hits.empty());
    CHECK(r.report.post.hits.size() <= r.report.pre.hits.size());
    CHECK(r.report.pre.concentrated_dim_indices() == std::vector<std::size_t>{5});
    CHECK(r.feature.all_finite());
    const auto again = extract(f, p, {});
    CHECK(again.feature.bitwise_equal(r.feature));
  }
  SUBCASE("explicit dims are sorted and deduplicated") {
    ExtractionConfig cfg;
    cfg.discard_mode = DiscardMode::explicit_dims;
    cfg.discard_dims = {7, 5, 7};
    const auto r = extract(f, ModulationParams::identity(64), cfg);
    CHECK(r.report.discarded_dims == std::vector<std::size_t>{5, 7});
  }
  SUBCASE("stage and group checks") {
    f.set_stage(Stage::post_adaln);
    CHECK(error_of([&] { extract(f, ModulationParams::identity(64), {}); }) == ErrorCode::stage_mismatch);
    f.set_stage(Stage::pre_adaln);
    f.meta()["model"] = "flux";
    auto p = ModulationParams::identity(64);
    p.group = 2;
    CHECK(error_of([&] { extract(f, p, {}); }) == ErrorCode::invalid_argument);
    p.group = 1;
    const auto r = extract(f, p, {});
    CHECK(r.feature.meta().at("group") == "1");
  }
}

TEST_CASE("extract never introduces non-finite values and never adds hits") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto f = planted(seed, {seed % 64, (seed * 7) % 64});
    FixtureRng rng(seed + 100);
    auto p = ModulationParams::identity(64);
    for (auto& g : p.gamma) g = 0.5f * rng.uniform_pm1();
    for (auto& b : p.beta) b = 0.1f * rng.uniform_pm1();
    const auto r = extract(f, p, {});
    CHECK(r.feature.all_finite());
    CHECK(r.report.post.hits.size() <= r.report.pre.hits.size());
  }
}

TEST_CASE("extraction config JSON") {
  const auto cfg = parse_extraction_config(
      R"({"eps": 1e-5, "discard_mode": "explicit_dims", "discard_dims": [3, 1], "tau": 30, "coverage_threshold": 0.5})");
  CHECK(cfg.eps == 1e-5);
  CHECK(cfg.discard_mode == DiscardMode::explicit_dims);
  CHECK(cfg.discard_dims == std::vector<std::size_t>{3, 1});
  CHECK(cfg.tau == 30);
  CHECK(cfg.coverage_threshold == 0.5);
  CHECK(parse_extraction_config(extraction_config_to_json(cfg)).discard_dims == cfg.discard_dims);

  const auto partial = parse_extraction_config(R"({"discard_mode": "none"})");
  CHECK(partial.eps == 1e-6);
  CHECK(partial.discard_mode == DiscardMode::none);

  CHECK(std::isinf(parse_extraction_config(R"({"tau": null})").tau));
  CHECK(error_of([] { parse_extraction_config(R"({"bogus": 1})"); }) == ErrorCode::invalid_argument);
  CHECK(error_of([] { parse_extraction_config(R"({"eps": 0})").validate(); }) == ErrorCode::invalid_argument);
  CHECK(error_of([] { parse_extraction_config(R"({"tau": 1})").validate(); }) == ErrorCode::invalid_argument);
  CHECK(error_of([] { parse_extraction_config("not json"); }) == ErrorCode::invalid_argument);
}

TEST_CASE("model group convention") {
  CHECK(expected_group_for_model("flux") == 1);
  CHECK(expected_group_for_model("pixart-alpha") == 2);
  CHECK(expected_group_for_model("sd3") == 2);
  CHECK(expected_group_for_model("sd3-5") == 2);
  CHECK(expected_group_for_model("unknown") == 0);
}
