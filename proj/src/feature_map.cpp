#include "ditf/feature_map.hpp"

#include <cmath>
#include <cstring>

#include "ditf/error.hpp"

namespace ditf {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::unsupported_version: return "unsupported version";
    case ErrorCode::unsupported_dtype: return "unsupported dtype";
    case ErrorCode::truncated: return "truncated payload";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::duplicate_name: return "duplicate name";
    case ErrorCode::malformed: return "malformed container";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::degenerate_median: return "degenerate median";
    case ErrorCode::degenerate_covariance: return "degenerate covariance";
    case ErrorCode::not_found: return "not found";
    case ErrorCode::stage_mismatch: return "stage mismatch";
    case ErrorCode::internal: return "internal error";
  }
  return "unknown error";
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::original: return "original";
    case Stage::pre_adaln: return "pre_adaln";
    case Stage::post_adaln: return "post_adaln";
  }
  return "original";
}

std::optional<Stage> parse_stage(std::string_view name) {
  if (name == "original") return Stage::original;
  if (name == "pre_adaln") return Stage::pre_adaln;
  if (name == "post_adaln") return Stage::post_adaln;
  return std::nullopt;
}

FeatureMap::FeatureMap(std::vector<float> data, std::size_t tokens, std::size_t channels, Grid grid,
                       ImageSize image_size, std::optional<Stage> stage, Meta meta)
    : data_(std::move(data)),
      tokens_(tokens),
      channels_(channels),
      grid_(grid),
      image_size_(image_size),
      stage_(stage),
      meta_(std::move(meta)) {
  if (tokens_ == 0 || channels_ == 0) fail(ErrorCode::shape_mismatch, "feature map needs T >= 1 and C >= 1");
  if (data_.size() != tokens_ * channels_) {
    fail(ErrorCode::shape_mismatch, "feature data holds " + std::to_string(data_.size()) + " values, expected " +
                                        std::to_string(tokens_ * channels_));
  }
  if (grid_.size() != tokens_) {
    fail(ErrorCode::shape_mismatch, "grid " + std::to_string(grid_.height) + "x" + std::to_string(grid_.width) +
                                        " does not cover " + std::to_string(tokens_) + " tokens");
  }
  if (image_size_.height == 0 || image_size_.width == 0) fail(ErrorCode::invalid_argument, "empty image size");
}

FeatureMap FeatureMap::zeros(std::size_t tokens, std::size_t channels, Grid grid, ImageSize image_size) {
  return FeatureMap(std::vector<float>(tokens * channels, 0.0f), tokens, channels, grid, image_size);
}

std::pair<double, double> FeatureMap::token_center(std::size_t token) const {
  const std::size_t r = token / grid_.width;
  const std::size_t c = token % grid_.width;
  const double x = (static_cast<double>(c) + 0.5) * static_cast<double>(image_size_.width) /
                   static_cast<double>(grid_.width);
  const double y = (static_cast<double>(r) + 0.5) * static_cast<double>(image_size_.height) /
                   static_cast<double>(grid_.height);
  return {x, y};
}

bool FeatureMap::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool FeatureMap::bitwise_equal(const FeatureMap& other) const {
  return tokens_ == other.tokens_ && channels_ == other.channels_ && grid_ == other.grid_ &&
         image_size_ == other.image_size_ && stage_ == other.stage_ && meta_ == other.meta_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

namespace {

void check_vector(const std::vector<float>& v, std::size_t channels, const char* name) {
  if (v.size() != channels) {
    fail(ErrorCode::shape_mismatch, std::string(name) + " has length " + std::to_string(v.size()) +
                                        ", feature has " + std::to_string(channels) + " channels");
  }
  for (float x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::non_finite, std::string(name) + " contains a non-finite value");
  }
}

}  // namespace

void ModulationParams::validate(std::size_t channels) const {
  check_vector(gamma, channels, "gamma");
  check_vector(beta, channels, "beta");
  if (alpha) check_vector(*alpha, channels, "alpha");
  if (timestep < 0 || timestep >= 1000) fail(ErrorCode::invalid_argument, "timestep must lie in [0, 1000)");
  if (block_index < 0) fail(ErrorCode::invalid_argument, "block index must be >= 0");
  if (group != 1 && group != 2) fail(ErrorCode::invalid_argument, "modulation group must be 1 or 2");
}

ModulationParams ModulationParams::identity(std::size_t channels) {
  ModulationParams p;
  p.gamma.assign(channels, 0.0f);
  p.beta.assign(channels, 0.0f);
  return p;
}

bool point_in_image(const Point2& point, const ImageSize& image) {
  return std::isfinite(point.x) && std::isfinite(point.y) && point.x >= 0.0 && point.y >= 0.0 &&
         point.x <= static_cast<double>(image.width) && point.y <= static_cast<double>(image.height);
}

void KeypointSet::validate() const {
  if (image_size.height == 0 || image_size.width == 0) fail(ErrorCode::invalid_argument, "empty image size");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!point_in_image(points[i], image_size)) {
      fail(ErrorCode::invalid_argument, "keypoint " + std::to_string(i) + " lies outside the image");
    }
  }
  if (bbox && !(bbox->width > 0.0 && bbox->height > 0.0)) {
    fail(ErrorCode::invalid_argument, "bbox needs positive width and height");
  }
}

}  // namespace ditf
