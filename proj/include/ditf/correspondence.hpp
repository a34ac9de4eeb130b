#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ditf/feature_map.hpp"

namespace ditf {

struct PairPcaResult {
  FeatureMap source;
  FeatureMap target;
  std::vector<double> mean;        // C
  std::vector<double> components;  // out_dim x C, row-major, unit rows
  std::vector<double> eigenvalues;  // out_dim, descending
};

// PCA fit jointly on both token sets. Components come from the eigenvectors
// of the joint covariance ordered by descending eigenvalue (ties keep solver
// order); each is signed so that its largest-|entry| coordinate is positive.
PairPcaResult pair_pca(const FeatureMap& source, const FeatureMap& target, std::size_t out_dim);

// Channel concatenation (main, aux). With `normalize`, each slice of each
// token is L2-normalized first. A null aux returns main unchanged.
FeatureMap fuse_concat(const FeatureMap& main, const FeatureMap* aux, bool normalize = true);

// Bilinear resampling over token centers, edges clamped.
FeatureMap resample_grid(const FeatureMap& feature, Grid new_grid);

enum class SampleMode { nearest_token, bilinear };

std::string_view sample_mode_name(SampleMode mode);
SampleMode parse_sample_mode(std::string_view name);  // "nearest" | "bilinear"

std::size_t nearest_token(const FeatureMap& feature, const Point2& point);
std::vector<float> sample_descriptor(const FeatureMap& feature, const Point2& point, SampleMode mode);

struct DenseMatch {
  std::size_t token = 0;
  double score = 0.0;  // cosine similarity
};

// Cosine argmax over target tokens; zero-norm tokens never win, ties go to the
// lowest token index.
DenseMatch match_dense(std::span<const float> descriptor, const FeatureMap& target);

struct KeypointMatch {
  Point2 source;
  Point2 target;
  std::size_t target_token = 0;
  double score = 0.0;
};

struct MatchResult {
  std::vector<KeypointMatch> matches;
  ImageSize target_image;
};

MatchResult transfer_keypoints(const FeatureMap& source, const FeatureMap& target, const KeypointSet& keypoints,
                               SampleMode mode = SampleMode::nearest_token);

enum class PckNorm { bbox_max_side, img_max_side };

std::string_view pck_norm_name(PckNorm norm);
PckNorm parse_pck_norm(std::string_view name);

struct ImageCount {
  std::size_t correct = 0;
  std::size_t total = 0;
};

struct PckLevel {
  double alpha = 0.0;
  double pck_per_point = 0.0;
  double pck_per_image = 0.0;
  std::vector<ImageCount> images;
};

struct PckReport {
  PckNorm norm = PckNorm::bbox_max_side;
  std::vector<PckLevel> levels;
};

// One (prediction, ground truth) pair per image. Correct at alpha iff the
// euclidean error is <= alpha * max(h, w) of the normalizer. Per-point pools
// every keypoint; per-image averages the fractions of images with >= 1 point.
PckReport pck(std::span<const MatchResult> results, std::span<const KeypointSet> ground_truth,
              std::span<const double> alphas, PckNorm norm);

struct PermutationFixtureOptions {
  std::uint64_t seed = 0;
  Grid grid{8, 8};
  std::size_t channels = 32;
  // When set, this dim of both maps carries massive_ratio * median|x| * (1 + jitter * u)
  // with u ~ U[-1, 1) drawn independently per map and token.
  std::optional<std::size_t> massive_dim;
  double massive_ratio = 100.0;
  double massive_jitter = 0.5;
};

// Source tokens are distinct FixtureRng draws; target token perm[i] is a copy
// of source token i. Keypoints sit on source token centers and the ground
// truth on the matching target centers (16 px per token, no bbox).
struct PermutationFixture {
  FeatureMap source;
  FeatureMap target;
  std::vector<std::size_t> permutation;
  KeypointSet source_keypoints;
  KeypointSet target_keypoints;
};

PermutationFixture make_permutation_fixture(const PermutationFixtureOptions& options);

}  // namespace ditf
