#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ditf {

using Meta = std::map<std::string, std::string>;

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return height * width; }
  bool operator==(const Grid&) const = default;
};

// Pixel dimensions of the image a feature map (or keypoint set) refers to.
struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageSize&) const = default;
};

enum class Stage { original, pre_adaln, post_adaln };

std::string_view stage_name(Stage stage);
std::optional<Stage> parse_stage(std::string_view name);

// Row-major T x C matrix of token descriptors laid out on a token grid.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::vector<float> data, std::size_t tokens, std::size_t channels, Grid grid,
             ImageSize image_size, std::optional<Stage> stage = std::nullopt, Meta meta = {});

  static FeatureMap zeros(std::size_t tokens, std::size_t channels, Grid grid, ImageSize image_size);

  std::size_t tokens() const { return tokens_; }
  std::size_t channels() const { return channels_; }
  const Grid& grid() const { return grid_; }
  const ImageSize& image_size() const { return image_size_; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::span<const float> row(std::size_t token) const {
    return std::span<const float>(data_).subspan(token * channels_, channels_);
  }
  std::span<float> row(std::size_t token) { return std::span<float>(data_).subspan(token * channels_, channels_); }
  float at(std::size_t token, std::size_t channel) const { return data_[token * channels_ + channel]; }
  float& at(std::size_t token, std::size_t channel) { return data_[token * channels_ + channel]; }

  std::optional<Stage> stage() const { return stage_; }
  void set_stage(std::optional<Stage> stage) { stage_ = stage; }
  const Meta& meta() const { return meta_; }
  Meta& meta() { return meta_; }

  // Pixel coordinates (x, y) of a token's center in the image.
  std::pair<double, double> token_center(std::size_t token) const;

  bool all_finite() const;

  // Shape, grid, image size, stage, meta and data bytes all equal.
  bool bitwise_equal(const FeatureMap& other) const;

 private:
  std::vector<float> data_;
  std::size_t tokens_ = 0;
  std::size_t channels_ = 0;
  Grid grid_;
  ImageSize image_size_;
  std::optional<Stage> stage_;
  Meta meta_;
};

// Channel-wise modulation vectors regressed by an AdaLN-zero layer.
struct ModulationParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::optional<std::vector<float>> alpha;
  int timestep = 0;
  int block_index = 0;
  int group = 1;

  std::size_t channels() const { return gamma.size(); }
  // Checks lengths against `channels`, finiteness and the provenance ranges.
  void validate(std::size_t channels) const;

  static ModulationParams identity(std::size_t channels);
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

struct BBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;
  bool operator==(const BBox&) const = default;
};

struct KeypointSet {
  std::vector<Point2> points;
  std::optional<BBox> bbox;
  ImageSize image_size;

  void validate() const;
};

bool point_in_image(const Point2& point, const ImageSize& image);

}  // namespace ditf
