#include "ditf/forensics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ditf/error.hpp"
#include "ditf/rng.hpp"

namespace ditf {

double median_abs(const FeatureMap& feature) {
  std::vector<float> mags(feature.data().size());
  std::transform(feature.data().begin(), feature.data().end(), mags.begin(), [](float v) { return std::fabs(v); });
  if (mags.empty()) fail(ErrorCode::invalid_argument, "median of an empty feature map");
  const auto mid = mags.begin() + static_cast<std::ptrdiff_t>((mags.size() - 1) / 2);
  std::nth_element(mags.begin(), mid, mags.end());
  return *mid;
}

double mean_abs(const FeatureMap& feature) {
  double sum = 0.0;
  for (float v : feature.data()) sum += std::fabs(static_cast<double>(v));
  return sum / static_cast<double>(feature.data().size());
}

std::vector<std::size_t> MassiveActivationReport::concentrated_dim_indices() const {
  std::vector<std::size_t> out;
  out.reserve(concentrated_dims.size());
  for (const auto& d : concentrated_dims) out.push_back(d.dim);
  return out;
}

MassiveActivationReport detect_massive(const FeatureMap& feature, const DetectOptions& options) {
  if (!(options.ratio_threshold > 0.0)) fail(ErrorCode::invalid_argument, "ratio threshold must be positive");
  if (!(options.coverage_threshold >= 0.0 && options.coverage_threshold <= 1.0)) {
    fail(ErrorCode::invalid_argument, "coverage threshold must lie in [0, 1]");
  }
  MassiveActivationReport report;
  report.ratio_threshold = options.ratio_threshold;
  report.coverage_threshold = options.coverage_threshold;
  report.tokens = feature.tokens();
  report.channels = feature.channels();
  report.median_abs = median_abs(feature);
  report.denominator = report.median_abs;
  if (report.median_abs == 0.0) {
    if (!options.mean_abs_fallback) {
      fail(ErrorCode::degenerate_median, "degenerate median: median |x| is zero, massive criterion undefined");
    }
    report.denominator = mean_abs(feature);
    report.denominator_kind = Denominator::mean_abs;
    if (report.denominator == 0.0) fail(ErrorCode::degenerate_median, "degenerate median: feature map is all zeros");
  }

  const double threshold = options.ratio_threshold * report.denominator;
  const std::size_t T = feature.tokens();
  const std::size_t C = feature.channels();
  std::vector<std::size_t> per_dim(C, 0);
  for (std::size_t d = 0; d < C; ++d) {
    for (std::size_t t = 0; t < T; ++t) {
      const float v = feature.at(t, d);
      const double mag = std::fabs(static_cast<double>(v));
      if (mag >= threshold) {
        report.hits.push_back({t, d, v, mag / report.denominator});
        ++per_dim[d];
      }
    }
  }
  for (std::size_t d = 0; d < C; ++d) {
    const double fraction = static_cast<double>(per_dim[d]) / static_cast<double>(T);
    if (fraction >= options.coverage_threshold) report.concentrated_dims.push_back({d, fraction});
  }
  return report;
}

DimensionStats dimension_stats(const FeatureMap& feature) {
  const std::size_t T = feature.tokens();
  const std::size_t C = feature.channels();
  DimensionStats stats;
  stats.dims.resize(C);
  stats.std_undefined = T < 2;
  for (std::size_t d = 0; d < C; ++d) {
    double sum = 0.0;
    double sum_abs = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      sum += feature.at(t, d);
      sum_abs += std::fabs(static_cast<double>(feature.at(t, d)));
    }
    const double mean = sum / static_cast<double>(T);
    double sq = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double dev = feature.at(t, d) - mean;
      sq += dev * dev;
    }
    stats.dims[d].mean = mean;
    stats.dims[d].mean_abs = sum_abs / static_cast<double>(T);
    stats.dims[d].std = stats.std_undefined ? 0.0 : std::sqrt(sq / static_cast<double>(T));
  }
  stats.ranking.resize(C);
  std::iota(stats.ranking.begin(), stats.ranking.end(), std::size_t{0});
  std::stable_sort(stats.ranking.begin(), stats.ranking.end(), [&](std::size_t a, std::size_t b) {
    return stats.dims[a].mean_abs > stats.dims[b].mean_abs;
  });
  stats.median_abs = median_abs(feature);
  return stats;
}

std::vector<std::size_t> top_m_indices(std::span<const double> values, std::size_t m) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(std::min(m, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

AlignmentReport alpha_alignment(const FeatureMap& feature, std::span<const float> alpha, std::size_t m) {
  const std::size_t C = feature.channels();
  if (alpha.size() != C) {
    fail(ErrorCode::shape_mismatch, "alpha has length " + std::to_string(alpha.size()) + ", feature has " +
                                        std::to_string(C) + " channels");
  }
  if (m < 1 || m > C) fail(ErrorCode::invalid_argument, "m must lie in [1, C]");

  std::vector<double> alpha_mag(C);
  for (std::size_t d = 0; d < C; ++d) alpha_mag[d] = std::fabs(static_cast<double>(alpha[d]));
  const DimensionStats stats = dimension_stats(feature);
  std::vector<double> act_mag(C);
  for (std::size_t d = 0; d < C; ++d) act_mag[d] = stats.dims[d].mean_abs;

  AlignmentReport report;
  report.m = m;
  report.alpha_top = top_m_indices(alpha_mag, m);
  report.activation_top = top_m_indices(act_mag, m);
  std::set_intersection(report.alpha_top.begin(), report.alpha_top.end(), report.activation_top.begin(),
                        report.activation_top.end(), std::back_inserter(report.intersection));
  const std::size_t union_size = 2 * m - report.intersection.size();
  report.jaccard = static_cast<double>(report.intersection.size()) / static_cast<double>(union_size);
  return report;
}

Grid default_grid(std::size_t tokens) {
  if (tokens == 0) fail(ErrorCode::invalid_argument, "token count must be >= 1");
  std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(tokens)));
  while (h > 1 && tokens % h != 0) --h;
  if (h == 0) h = 1;
  return {h, tokens / h};
}

FeatureMap synthesize_massive_feature(const SynthOptions& options) {
  const std::size_t T = options.tokens;
  const std::size_t C = options.channels;
  if (T == 0 || C == 0) fail(ErrorCode::invalid_argument, "synthetic feature needs T >= 1 and C >= 1");
  if (!(options.scale > 1.0f) || !std::isfinite(options.scale)) {
    fail(ErrorCode::invalid_argument, "planting scale must be finite and > 1");
  }
  for (auto d : options.planted_dims) {
    if (d >= C) fail(ErrorCode::invalid_argument, "planted dim " + std::to_string(d) + " is out of range");
  }
  const Grid grid = options.grid.value_or(default_grid(T));
  const ImageSize image = options.image_size.value_or(ImageSize{grid.height * 16, grid.width * 16});

  FixtureRng rng(options.seed);
  std::vector<float> data(T * C);
  for (auto& v : data) v = rng.uniform_pm1();
  FeatureMap feature(std::move(data), T, C, grid, image, Stage::original);
  if (!options.planted_dims.empty()) {
    const float planted = static_cast<float>(options.scale * median_abs(feature));
    for (auto d : options.planted_dims) {
      for (std::size_t t = 0; t < T; ++t) feature.at(t, d) = planted;
    }
  }
  return feature;
}

}  // namespace ditf
