#include "ditf/report_json.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "ditf/error.hpp"

namespace ditf {

using json = nlohmann::json;

double round_sig9(double value) {
  if (!std::isfinite(value) || value == 0.0) return value;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return std::strtod(buf, nullptr);
}

namespace {

json num(double v) { return round_sig9(v); }

json report_to_json(const MassiveActivationReport& r) {
  json j;
  j["median_abs"] = num(r.median_abs);
  j["denominator"] = num(r.denominator);
  j["denominator_kind"] = r.denominator_kind == Denominator::median_abs ? "median_abs" : "mean_abs";
  j["ratio_threshold"] = num(r.ratio_threshold);
  j["coverage_threshold"] = num(r.coverage_threshold);
  j["tokens"] = r.tokens;
  j["channels"] = r.channels;
  j["hit_count"] = r.hits.size();
  j["hits"] = json::array();
  for (const auto& h : r.hits) {
    j["hits"].push_back({{"token", h.token}, {"dim", h.dim}, {"value", num(h.value)}, {"ratio", num(h.ratio)}});
  }
  j["concentrated_dims"] = json::array();
  for (const auto& d : r.concentrated_dims) {
    j["concentrated_dims"].push_back({{"dim", d.dim}, {"fraction", num(d.fraction)}});
  }
  return j;
}

json point(const Point2& p) { return json::array({num(p.x), num(p.y)}); }

Point2 parse_point(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("point must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

MatchResult match_from(const json& j) {
  MatchResult r;
  const auto& size = j.at("target_image_size");
  if (!size.is_array() || size.size() != 2) throw std::invalid_argument("target_image_size must be [H, W]");
  r.target_image = {size[0].get<std::size_t>(), size[1].get<std::size_t>()};
  for (const auto& m : j.at("matches")) {
    KeypointMatch k;
    k.source = parse_point(m.at("source"));
    k.target = parse_point(m.at("target_point"));
    k.target_token = m.at("target_token").get<std::size_t>();
    k.score = m.at("score").get<double>();
    r.matches.push_back(k);
  }
  return r;
}

}  // namespace

std::string massive_report_json(const MassiveActivationReport& report) { return report_to_json(report).dump(); }

std::string dimension_stats_json(const DimensionStats& stats) {
  json j;
  j["median_abs"] = num(stats.median_abs);
  j["std_undefined"] = stats.std_undefined;
  j["channels"] = stats.dims.size();
  j["dims"] = json::array();
  for (std::size_t d = 0; d < stats.dims.size(); ++d) {
    j["dims"].push_back({{"dim", d},
                         {"mean", num(stats.dims[d].mean)},
                         {"std", num(stats.dims[d].std)},
                         {"mean_abs", num(stats.dims[d].mean_abs)}});
  }
  j["ranking"] = stats.ranking;
  return j.dump();
}

std::string dimension_stats_csv(const DimensionStats& stats) {
  std::string out = "dim,mean,std,mean_abs\n";
  char buf[128];
  for (std::size_t d = 0; d < stats.dims.size(); ++d) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", d, stats.dims[d].mean, stats.dims[d].std,
                  stats.dims[d].mean_abs);
    out += buf;
  }
  return out;
}

std::string alignment_json(const AlignmentReport& report) {
  json j;
  j["m"] = report.m;
  j["alpha_top"] = report.alpha_top;
  j["activation_top"] = report.activation_top;
  j["intersection"] = report.intersection;
  j["jaccard"] = num(report.jaccard);
  return j.dump();
}

std::string extraction_report_json(const ExtractionReport& report, const ExtractionConfig& config) {
  json j;
  j["discarded_dims"] = report.discarded_dims;
  j["pre"] = report_to_json(report.pre);
  j["post"] = report_to_json(report.post);
  j["config"] = json::parse(extraction_config_to_json(config));
  return j.dump();
}

std::string match_result_json(const MatchResult& result) {
  json j;
  j["target_image_size"] = {result.target_image.height, result.target_image.width};
  j["matches"] = json::array();
  for (const auto& m : result.matches) {
    j["matches"].push_back({{"source", point(m.source)},
                            {"target_point", point(m.target)},
                            {"target_token", m.target_token},
                            {"score", num(m.score)}});
  }
  return j.dump();
}

std::string pck_report_json(const PckReport& report) {
  json j;
  j["norm"] = std::string(pck_norm_name(report.norm));
  j["levels"] = json::array();
  for (const auto& level : report.levels) {
    json images = json::array();
    for (const auto& c : level.images) images.push_back({{"correct", c.correct}, {"total", c.total}});
    j["levels"].push_back({{"alpha", num(level.alpha)},
                           {"pck_per_point", num(level.pck_per_point)},
                           {"pck_per_image", num(level.pck_per_image)},
                           {"images", images}});
  }
  return j.dump();
}

std::vector<MatchResult> parse_match_results_json(const std::string& text) {
  std::vector<MatchResult> out;
  try {
    const json j = json::parse(text);
    if (j.is_array()) {
      for (const auto& item : j) out.push_back(match_from(item));
    } else {
      out.push_back(match_from(j));
    }
  } catch (const std::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed match result: ") + e.what());
  }
  return out;
}

}  // namespace ditf
