#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ditf/feature_map.hpp"
#include "ditf/forensics.hpp"

namespace ditf {

enum class DiscardMode { none, explicit_dims, automatic };

std::string_view discard_mode_name(DiscardMode mode);
DiscardMode parse_discard_mode(std::string_view name);  // "none" | "explicit_dims" | "auto"

struct ExtractionConfig {
  double eps = 1e-6;
  DiscardMode discard_mode = DiscardMode::automatic;
  std::vector<std::size_t> discard_dims;
  double tau = 20.0;
  double coverage_threshold = kDefaultCoverageThreshold;

  // eps > 0, tau > 1, coverage in [0, 1]; discard dims checked against C when known.
  void validate(std::size_t channels = std::numeric_limits<std::size_t>::max()) const;
};

// JSON object with exactly the ExtractionConfig fields; unknown keys are rejected.
// Missing keys keep the values already in `base`.
ExtractionConfig parse_extraction_config(const std::string& json_text, ExtractionConfig base = {});
std::string extraction_config_to_json(const ExtractionConfig& config);

// Affine-free normalization over channels, per token. eps may be 0; a token
// with zero variance and eps == 0 maps to zeros.
FeatureMap layer_norm(const FeatureMap& feature, double eps);

// (1 + gamma) * LayerNorm(x) + beta, per channel. Stage becomes post_adaln.
FeatureMap adaln(const FeatureMap& feature, std::span<const float> gamma, std::span<const float> beta,
                 double eps);
FeatureMap adaln(const FeatureMap& feature, const ModulationParams& params, double eps);

FeatureMap discard_channels(const FeatureMap& feature, std::span<const std::size_t> dims);

struct AutoDiscardResult {
  FeatureMap feature;
  std::vector<std::size_t> discarded;  // ascending
};

struct AutoDiscardOptions {
  double tau = 20.0;
  double coverage_threshold = kDefaultCoverageThreshold;
  bool allow_any_stage = false;
  bool mean_abs_fallback = false;
};

// Zeroes dims whose mean |x| >= tau * median_abs and whose token-hit fraction
// (|x| >= tau * median_abs) reaches coverage_threshold. Requires a post_adaln
// map unless allow_any_stage is set.
AutoDiscardResult auto_discard(const FeatureMap& feature, const AutoDiscardOptions& options);

struct ExtractionReport {
  std::vector<std::size_t> discarded_dims;
  MassiveActivationReport pre;
  MassiveActivationReport post;
};

struct ExtractionResult {
  FeatureMap feature;
  ExtractionReport report;
};

// AdaLN modulation of a raw (original / pre_adaln) map followed by the
// configured channel discard. Detection reports use the mean |x| fallback.
ExtractionResult extract(const FeatureMap& raw, const ModulationParams& params, const ExtractionConfig& config);

// Modulation group a model's features are taken from: 1 for flux, 2 for
// pixart-alpha / sd3 / sd3-5, 0 when the model is unknown.
int expected_group_for_model(std::string_view model);

}  // namespace ditf
