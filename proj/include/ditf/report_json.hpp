#pragma once

// JSON forms of the analysis reports. Keys are emitted in sorted order and
// floating-point values are rounded to 9 significant digits.

#include <string>
#include <vector>

#include "ditf/correspondence.hpp"
#include "ditf/forensics.hpp"
#include "ditf/modulation.hpp"

namespace ditf {

double round_sig9(double value);

std::string massive_report_json(const MassiveActivationReport& report);
std::string dimension_stats_json(const DimensionStats& stats);
std::string alignment_json(const AlignmentReport& report);
std::string extraction_report_json(const ExtractionReport& report, const ExtractionConfig& config);
std::string match_result_json(const MatchResult& result);
std::string pck_report_json(const PckReport& report);

// "dim,mean,std,mean_abs" with one row per channel.
std::string dimension_stats_csv(const DimensionStats& stats);

// Accepts a single MatchResult object or an array of them (one per image).
std::vector<MatchResult> parse_match_results_json(const std::string& text);

}  // namespace ditf
