#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ditf/feature_map.hpp"

namespace ditf {

inline constexpr double kDefaultRatioThreshold = 100.0;
inline constexpr double kDefaultCoverageThreshold = 0.9;

// Median of |x| over every scalar; the lower middle element for even counts.
double median_abs(const FeatureMap& feature);
double mean_abs(const FeatureMap& feature);

struct MassiveHit {
  std::size_t token = 0;
  std::size_t dim = 0;
  float value = 0.0f;
  double ratio = 0.0;
  bool operator==(const MassiveHit&) const = default;
};

struct ConcentratedDim {
  std::size_t dim = 0;
  double fraction = 0.0;
  bool operator==(const ConcentratedDim&) const = default;
};

enum class Denominator { median_abs, mean_abs };

struct MassiveActivationReport {
  double median_abs = 0.0;
  // Value each |x| is divided by; equals median_abs unless the mean fallback fired.
  double denominator = 0.0;
  Denominator denominator_kind = Denominator::median_abs;
  std::vector<MassiveHit> hits;  // sorted by (dim, token)
  std::vector<ConcentratedDim> concentrated_dims;
  double ratio_threshold = kDefaultRatioThreshold;
  double coverage_threshold = kDefaultCoverageThreshold;
  std::size_t tokens = 0;
  std::size_t channels = 0;

  std::vector<std::size_t> concentrated_dim_indices() const;
};

struct DetectOptions {
  double ratio_threshold = kDefaultRatioThreshold;
  double coverage_threshold = kDefaultCoverageThreshold;
  // With a zero median, divide by mean_abs instead of failing.
  bool mean_abs_fallback = false;
};

// A scalar is massive when |x| >= ratio_threshold * median_abs. A dim is
// concentrated when its hit count over tokens reaches coverage_threshold * T.
// Throws degenerate_median when the denominator is zero.
MassiveActivationReport detect_massive(const FeatureMap& feature, const DetectOptions& options = {});

struct DimStat {
  double mean = 0.0;
  double std = 0.0;  // population
  double mean_abs = 0.0;
};

struct DimensionStats {
  std::vector<DimStat> dims;
  std::vector<std::size_t> ranking;  // by mean_abs descending, ties to the lower dim
  double median_abs = 0.0;
  bool std_undefined = false;  // T < 2; every std is reported as 0
};

DimensionStats dimension_stats(const FeatureMap& feature);

struct AlignmentReport {
  std::size_t m = 0;
  std::vector<std::size_t> alpha_top;
  std::vector<std::size_t> activation_top;
  std::vector<std::size_t> intersection;
  double jaccard = 0.0;
};

// Compares the m largest |alpha| channels with the m channels of largest
// mean |activation|.
AlignmentReport alpha_alignment(const FeatureMap& feature, std::span<const float> alpha, std::size_t m);

// Indices of the m largest values, ties to the lower index, ascending output.
std::vector<std::size_t> top_m_indices(std::span<const double> values, std::size_t m);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t tokens = 64;
  std::size_t channels = 64;
  std::vector<std::size_t> planted_dims;
  float scale = 200.0f;
  std::optional<Grid> grid;            // defaults to the most square factorization
  std::optional<ImageSize> image_size;  // defaults to 16 px per token
};

// Base entries from FixtureRng in row-major order, then each planted dim is
// overwritten with scale * median_abs(base) on every token.
FeatureMap synthesize_massive_feature(const SynthOptions& options);

Grid default_grid(std::size_t tokens);

}  // namespace ditf
