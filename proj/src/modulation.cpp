#include "ditf/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <nlohmann/json.hpp>

#include "ditf/error.hpp"

namespace ditf {

using json = nlohmann::json;

std::string_view discard_mode_name(DiscardMode mode) {
  switch (mode) {
    case DiscardMode::none: return "none";
    case DiscardMode::explicit_dims: return "explicit_dims";
    case DiscardMode::automatic: return "auto";
  }
  return "none";
}

DiscardMode parse_discard_mode(std::string_view name) {
  if (name == "none") return DiscardMode::none;
  if (name == "explicit_dims" || name == "explicit") return DiscardMode::explicit_dims;
  if (name == "auto") return DiscardMode::automatic;
  fail(ErrorCode::invalid_argument, "unknown discard mode '" + std::string(name) + "'");
}

void ExtractionConfig::validate(std::size_t channels) const {
  if (!(eps > 0.0) || !std::isfinite(eps)) fail(ErrorCode::invalid_argument, "eps must be finite and > 0");
  if (!(tau > 1.0)) fail(ErrorCode::invalid_argument, "tau must be > 1");
  if (!(coverage_threshold >= 0.0 && coverage_threshold <= 1.0)) {
    fail(ErrorCode::invalid_argument, "coverage threshold must lie in [0, 1]");
  }
  for (auto d : discard_dims) {
    if (d >= channels) fail(ErrorCode::invalid_argument, "discard dim " + std::to_string(d) + " is out of range");
  }
}

ExtractionConfig parse_extraction_config(const std::string& json_text, ExtractionConfig base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "eps") {
        base.eps = value.get<double>();
      } else if (key == "discard_mode") {
        base.discard_mode = parse_discard_mode(value.get<std::string>());
      } else if (key == "discard_dims") {
        base.discard_dims = value.get<std::vector<std::size_t>>();
      } else if (key == "tau") {
        // JSON has no infinity; null and the string "inf" both disable auto discard.
        if (value.is_null() || (value.is_string() && value.get<std::string>() == "inf")) {
          base.tau = std::numeric_limits<double>::infinity();
        } else {
          base.tau = value.get<double>();
        }
      } else if (key == "coverage_threshold") {
        base.coverage_threshold = value.get<double>();
      } else {
        fail(ErrorCode::invalid_argument, "unknown config field '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("config field has the wrong type: ") + e.what());
  }
  base.validate();
  return base;
}

std::string extraction_config_to_json(const ExtractionConfig& config) {
  json j;
  j["eps"] = config.eps;
  j["discard_mode"] = std::string(discard_mode_name(config.discard_mode));
  j["discard_dims"] = config.discard_dims;
  if (std::isinf(config.tau)) {
    j["tau"] = "inf";
  } else {
    j["tau"] = config.tau;
  }
  j["coverage_threshold"] = config.coverage_threshold;
  return j.dump();
}

FeatureMap layer_norm(const FeatureMap& feature, double eps) {
  const std::size_t C = feature.channels();
  if (C < 2) fail(ErrorCode::invalid_argument, "layer norm needs at least 2 channels");
  if (!(eps >= 0.0)) fail(ErrorCode::invalid_argument, "eps must be >= 0");
  FeatureMap out = feature;
  for (std::size_t t = 0; t < feature.tokens(); ++t) {
    const auto in = feature.row(t);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(C);
    const double denom = std::sqrt(var + eps);
    auto dst = out.row(t);
    for (std::size_t c = 0; c < C; ++c) {
      const double centered = in[c] - mean;
      // + 0.0f folds a rounded -0 into +0 so identity modulation stays bitwise exact.
      dst[c] = denom > 0.0 ? static_cast<float>(centered / denom) + 0.0f : 0.0f;
    }
  }
  return out;
}

FeatureMap adaln(const FeatureMap& feature, std::span<const float> gamma, std::span<const float> beta, double eps) {
  const std::size_t C = feature.channels();
  if (gamma.size() != C || beta.size() != C) {
    fail(ErrorCode::shape_mismatch, "modulation vectors have length " + std::to_string(gamma.size()) + "/" +
                                        std::to_string(beta.size()) + ", feature has " + std::to_string(C) +
                                        " channels");
  }
  FeatureMap out = layer_norm(feature, eps);
  for (std::size_t t = 0; t < out.tokens(); ++t) {
    auto row = out.row(t);
    for (std::size_t c = 0; c < C; ++c) {
      row[c] = static_cast<float>((1.0 + static_cast<double>(gamma[c])) * static_cast<double>(row[c]) +
                                  static_cast<double>(beta[c]));
    }
  }
  out.set_stage(Stage::post_adaln);
  return out;
}

FeatureMap adaln(const FeatureMap& feature, const ModulationParams& params, double eps) {
  return adaln(feature, params.gamma, params.beta, eps);
}

FeatureMap discard_channels(const FeatureMap& feature, std::span<const std::size_t> dims) {
  for (auto d : dims) {
    if (d >= feature.channels()) {
      fail(ErrorCode::invalid_argument, "discard dim " + std::to_string(d) + " is out of range for " +
                                            std::to_string(feature.channels()) + " channels");
    }
  }
  FeatureMap out = feature;
  for (std::size_t t = 0; t < out.tokens(); ++t) {
    for (auto d : dims) out.at(t, d) = 0.0f;
  }
  return out;
}

AutoDiscardResult auto_discard(const FeatureMap& feature, const AutoDiscardOptions& options) {
  if (!options.allow_any_stage && feature.stage() != Stage::post_adaln) {
    fail(ErrorCode::stage_mismatch, "auto discard expects a post_adaln feature map");
  }
  if (!(options.tau > 1.0)) fail(ErrorCode::invalid_argument, "tau must be > 1");

  double denom = median_abs(feature);
  if (denom == 0.0) {
    if (!options.mean_abs_fallback) fail(ErrorCode::degenerate_median, "degenerate median in auto discard");
    denom = mean_abs(feature);
    if (denom == 0.0) fail(ErrorCode::degenerate_median, "degenerate median: feature map is all zeros");
  }
  const double threshold = options.tau * denom;
  const std::size_t T = feature.tokens();

  AutoDiscardResult result;
  for (std::size_t d = 0; d < feature.channels(); ++d) {
    double sum_abs = 0.0;
    std::size_t hits = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double mag = std::fabs(static_cast<double>(feature.at(t, d)));
      sum_abs += mag;
      if (mag >= threshold) ++hits;
    }
    const double mean = sum_abs / static_cast<double>(T);
    const double fraction = static_cast<double>(hits) / static_cast<double>(T);
    if (mean >= threshold && fraction >= options.coverage_threshold) result.discarded.push_back(d);
  }
  result.feature = discard_channels(feature, result.discarded);
  return result;
}

int expected_group_for_model(std::string_view model) {
  if (model == "flux") return 1;
  if (model == "pixart-alpha" || model == "sd3" || model == "sd3-5") return 2;
  return 0;
}

ExtractionResult extract(const FeatureMap& raw, const ModulationParams& params, const ExtractionConfig& config) {
  config.validate(raw.channels());
  params.validate(raw.channels());
  if (raw.stage() == Stage::post_adaln) {
    fail(ErrorCode::stage_mismatch, "extract expects an original or pre_adaln feature map");
  }
  if (auto it = raw.meta().find("model"); it != raw.meta().end()) {
    const int expected = expected_group_for_model(it->second);
    if (expected != 0 && expected != params.group) {
      fail(ErrorCode::invalid_argument, "model '" + it->second + "' takes modulation group " +
                                            std::to_string(expected) + ", params carry group " +
                                            std::to_string(params.group));
    }
  }

  DetectOptions detect;
  detect.coverage_threshold = config.coverage_threshold;
  detect.mean_abs_fallback = true;

  ExtractionResult result;
  result.report.pre = detect_massive(raw, detect);

  FeatureMap post = adaln(raw, params, config.eps);
  switch (config.discard_mode) {
    case DiscardMode::none:
      break;
    case DiscardMode::explicit_dims: {
      std::vector<std::size_t> dims = config.discard_dims;
      std::sort(dims.begin(), dims.end());
      dims.erase(std::unique(dims.begin(), dims.end()), dims.end());
      post = discard_channels(post, dims);
      result.report.discarded_dims = std::move(dims);
      break;
    }
    case DiscardMode::automatic: {
      AutoDiscardOptions opts;
      opts.tau = config.tau;
      opts.coverage_threshold = config.coverage_threshold;
      opts.mean_abs_fallback = true;
      auto discarded = auto_discard(post, opts);
      post = std::move(discarded.feature);
      result.report.discarded_dims = std::move(discarded.discarded);
      break;
    }
  }
  if (!post.all_finite()) fail(ErrorCode::non_finite, "extraction produced a non-finite value");

  post.meta()["timestep"] = std::to_string(params.timestep);
  post.meta()["block_index"] = std::to_string(params.block_index);
  post.meta()["group"] = std::to_string(params.group);
  result.report.post = detect_massive(post, detect);
  result.feature = std::move(post);
  return result;
}

}  // namespace ditf
