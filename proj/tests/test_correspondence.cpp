#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ditf/correspondence.hpp"
#include "ditf/modulation.hpp"
#include "helpers.hpp"

using namespace ditf;
using testing::error_of;

namespace {

double recovery(const PermutationFixture& fx, const FeatureMap& src, const FeatureMap& tgt) {
  const auto r = transfer_keypoints(src, tgt, fx.source_keypoints);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < r.matches.size(); ++i) ok += r.matches[i].target_token == fx.permutation[i];
  return static_cast<double>(ok) / static_cast<double>(r.matches.size());
}

MatchResult predictions(std::vector<Point2> pts, ImageSize image) {
  MatchResult r;
  r.target_image = image;
  for (const auto& p : pts) r.matches.push_back({{0, 0}, p, 0, 1.0});
  return r;
}

KeypointSet truth(std::vector<Point2> pts, std::optional<BBox> bbox, ImageSize image) {
  return {std::move(pts), bbox, image};
}

}  // namespace

TEST_CASE("pair PCA on a 2-D line") {
  std::vector<std::vector<float>> a, b;
  for (int i = 0; i < 10; ++i) {
    const float s = static_cast<float>(i) - 4.5f;
    // Noise even in s, so it is uncorrelated with the line direction.
    const float n = (std::min(i, 9 - i) % 2 ? 1e-3f : -1e-3f);
    (i < 5 ? a : b).push_back({s + n, s - n});
  }
  const auto r = pair_pca(testing::from_rows(a), testing::from_rows(b), 1);
  CHECK(std::fabs(r.components[0] - 1.0 / std::sqrt(2.0)) <= 1e-6);
  CHECK(std::fabs(r.components[1] - 1.0 / std::sqrt(2.0)) <= 1e-6);
  CHECK(r.source.channels() == 1);
}

TEST_CASE("full-rank pair PCA preserves centered inner products") {
  const auto a = testing::noise_feature(3, 20, 6);
  const auto b = testing::noise_feature(4, 12, 6);
  const auto r = pair_pca(a, b, 6);
  std::vector<std::vector<double>> centered, projected;
  for (const FeatureMap* f : {&a, &b})
    for (std::size_t t = 0; t < f->tokens(); ++t) {
      std::vector<double> row(6);
      for (std::size_t c = 0; c < 6; ++c) row[c] = f->at(t, c) - r.mean[c];
      centered.push_back(row);
    }
  for (const FeatureMap* f : {&r.source, &r.target})
    for (std::size_t t = 0; t < f->tokens(); ++t) {
      const auto row = f->row(t);
      projected.emplace_back(row.begin(), row.end());
    }
  for (std::size_t i = 0; i < centered.size(); ++i)
    for (std::size_t j = 0; j < centered.size(); ++j) {
      double g = 0, h = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        g += centered[i][c] * centered[j][c];
        h += projected[i][c] * projected[j][c];
      }
      CHECK(std::fabs(g - h) <= 1e-5);
    }
  for (std::size_t k = 1; k < 6; ++k) CHECK(r.eigenvalues[k - 1] >= r.eigenvalues[k]);
}

TEST_CASE("pair PCA symmetry and errors") {
  const auto a = testing::noise_feature(5, 16, 8);
  const auto r = pair_pca(a, a, 4);
  CHECK(r.source.bitwise_equal(r.target));
  CHECK(error_of([&] { pair_pca(a, a, 9); }) == ErrorCode::invalid_argument);
  const auto flat = testing::from_rows({{1, 2}, {1, 2}});
  CHECK(error_of([&] { pair_pca(flat, flat, 1); }) == ErrorCode::degenerate_covariance);
}

TEST_CASE("channel concatenation") {
  const auto m = testing::from_rows({{3, 4}, {1, 0}});
  const auto x = testing::from_rows({{1, 2, 2}, {0, 0, 5}});
  CHECK(fuse_concat(m, nullptr).bitwise_equal(m));
  const auto raw = fuse_concat(m, &x, false);
  CHECK(raw.channels() == 5);
  CHECK(raw.at(0, 0) == 3.0f);
  CHECK(raw.at(0, 4) == 2.0f);
  const auto normed = fuse_concat(m, &x, true);
  for (std::size_t t = 0; t < 2; ++t) {
    double a = 0, b = 0;
    for (std::size_t c = 0; c < 2; ++c) a += normed.at(t, c) * normed.at(t, c);
    for (std::size_t c = 2; c < 5; ++c) b += normed.at(t, c) * normed.at(t, c);
    CHECK(std::fabs(a - 1.0) <= 1e-6);
    CHECK(std::fabs(b - 1.0) <= 1e-6);
  }
  const auto other = testing::noise_feature(1, 3, 3);
  CHECK(error_of([&] { fuse_concat(m, &other); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("grid resampling") {
  const auto f = testing::noise_feature(6, 16, 3);
  CHECK(resample_grid(f, f.grid()).bitwise_equal(f));

  const FeatureMap constant(std::vector<float>(12, 2.5f), 4, 3, {2, 2}, {32, 32});
  const auto spread = resample_grid(constant, {5, 7});
  for (float v : spread.data()) CHECK(v == 2.5f);

  // Ramp value = column index; a 3-wide grid samples at columns 0, 0.5, 1.
  const FeatureMap ramp({0, 1, 0, 1}, 4, 1, {2, 2}, {32, 32});
  const auto up = resample_grid(ramp, {3, 3});
  CHECK(up.at(0, 0) == doctest::Approx(0.0));
  CHECK(up.at(1, 0) == doctest::Approx(0.5));
  CHECK(up.at(2, 0) == doctest::Approx(1.0));
  CHECK(up.at(4, 0) == doctest::Approx(0.5));
  CHECK(error_of([&] { resample_grid(f, {0, 3}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("descriptor sampling") {
  const FeatureMap f({1, 10, 3, 30, 5, 50, 7, 70}, 4, 2, {2, 2}, {20, 20});
  for (auto mode : {SampleMode::nearest_token, SampleMode::bilinear}) {
    const auto d = sample_descriptor(f, {15, 5}, mode);
    CHECK(d == std::vector<float>{3, 30});
  }
  const auto mid = sample_descriptor(f, {10, 5}, SampleMode::bilinear);
  CHECK(mid[0] == doctest::Approx(2.0));
  CHECK(mid[1] == doctest::Approx(20.0));
  CHECK(nearest_token(f, {10, 10}) == 0);
  CHECK(error_of([&] { sample_descriptor(f, {21, 0}, SampleMode::nearest_token); }) == ErrorCode::invalid_argument);
}

TEST_CASE("dense cosine matching") {
  const auto t = testing::from_rows({{0.9f, 0.1f}, {0, 1}});
  const std::vector<float> src{1, 0};
  CHECK(match_dense(src, t).token == 0);
  const std::vector<float> exact{0, 1};
  const auto m = match_dense(exact, t);
  CHECK(m.token == 1);
  CHECK(m.score == doctest::Approx(1.0));

  const std::vector<float> scaled{7, 0};
  CHECK(match_dense(scaled, t).token == match_dense(src, t).token);

  const auto ties = testing::from_rows({{0, 0}, {1, 1}, {2, 2}});
  CHECK(match_dense(std::vector<float>{1, 1}, ties).token == 1);
  CHECK(error_of([&] { match_dense(std::vector<float>{0, 0}, t); }) == ErrorCode::invalid_argument);
  CHECK(error_of([&] { match_dense(std::vector<float>{1}, t); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("self matching is the identity on token centers") {
  const auto f = testing::noise_feature(9, 16, 8);
  KeypointSet k;
  k.image_size = f.image_size();
  for (std::size_t i = 0; i < 16; ++i) {
    const auto [x, y] = f.token_center(i);
    k.points.push_back({x, y});
  }
  const auto r = transfer_keypoints(f, f, k);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(r.matches[i].target_token == i);
    CHECK(r.matches[i].target == k.points[i]);
  }
}

TEST_CASE("permutation fixture: clean, corrupted, discarded") {
  PermutationFixtureOptions o;
  o.seed = 1;
  const auto clean = make_permutation_fixture(o);
  CHECK(recovery(clean, clean.source, clean.target) == 1.0);

  o.massive_dim = 3;
  const auto dirty = make_permutation_fixture(o);
  const double corrupted = recovery(dirty, dirty.source, dirty.target);
  CHECK(corrupted < 1.0);
  const std::vector<std::size_t> dims{3};
  CHECK(recovery(dirty, discard_channels(dirty.source, dims), discard_channels(dirty.target, dims)) == 1.0);
}

TEST_CASE("PCK fixtures") {
  SUBCASE("bbox threshold") {
    const auto p = predictions({{5, 0}, {12, 0}}, {100, 100});
    const auto g = truth({{0, 0}, {0, 0}}, BBox{0, 0, 100, 50}, {100, 100});
    const double alpha = 0.1;
    const auto r = pck(std::span(&p, 1), std::span(&g, 1), std::span(&alpha, 1), PckNorm::bbox_max_side);
    CHECK(r.levels[0].pck_per_point == 0.5);
    CHECK(r.levels[0].images[0].correct == 1);
  }
  SUBCASE("per point versus per image") {
    const std::vector<MatchResult> p{predictions({{1, 1}}, {10, 10}),
                                     predictions({{9, 9}, {9, 9}, {9, 9}}, {10, 10})};
    const std::vector<KeypointSet> g{truth({{1, 1}}, BBox{0, 0, 10, 10}, {10, 10}),
                                     truth({{0, 0}, {0, 0}, {0, 0}}, BBox{0, 0, 10, 10}, {10, 10})};
    const double alpha = 0.1;
    const auto r = pck(p, g, std::span(&alpha, 1), PckNorm::bbox_max_side);
    CHECK(r.levels[0].pck_per_point == 0.25);
    CHECK(r.levels[0].pck_per_image == 0.5);
  }
  SUBCASE("perfect predictions and monotonicity") {
    const auto p = predictions({{3, 4}, {6, 8}, {1, 1}}, {20, 20});
    const auto g = truth({{3, 4}, {0, 0}, {2, 2}}, std::nullopt, {20, 20});
    std::vector<double> alphas;
    for (int i = 0; i <= 9; ++i) alphas.push_back(0.06 * i);
    const auto r = pck(std::span(&p, 1), std::span(&g, 1), alphas, PckNorm::img_max_side);
    for (std::size_t i = 1; i < r.levels.size(); ++i)
      CHECK(r.levels[i].pck_per_point >= r.levels[i - 1].pck_per_point);
    CHECK(r.levels.back().pck_per_point == 1.0);
    const auto same = predictions({{3, 4}}, {20, 20});
    const auto gs = truth({{3, 4}}, std::nullopt, {20, 20});
    for (const auto& level : pck(std::span(&same, 1), std::span(&gs, 1), alphas, PckNorm::img_max_side).levels)
      CHECK(level.pck_per_point == 1.0);
  }
  SUBCASE("bbox norm without bbox") {
    const auto p = predictions({{1, 1}}, {10, 10});
    const auto g = truth({{1, 1}}, std::nullopt, {10, 10});
    const double alpha = 0.1;
    CHECK(error_of([&] { pck(std::span(&p, 1), std::span(&g, 1), std::span(&alpha, 1), PckNorm::bbox_max_side); }) ==
          ErrorCode::invalid_argument);
  }
}
