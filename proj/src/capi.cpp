#include "ditf/ditf.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "ditf/container.hpp"
#include "ditf/correspondence.hpp"
#include "ditf/error.hpp"
#include "ditf/forensics.hpp"
#include "ditf/modulation.hpp"
#include "ditf/report_json.hpp"
#include "ditf/rng.hpp"
#include "ditf/toy_dit.hpp"

struct ditf_container {
  ditf::Container value;
};
struct ditf_feature {
  ditf::FeatureMap value;
};
struct ditf_params {
  ditf::ModulationParams value;
};
struct ditf_config {
  ditf::ExtractionConfig value;
};

namespace {

thread_local std::string g_last_error;

ditf_status set_error(ditf_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <typename Fn>
ditf_status guard(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return DITF_OK;
  } catch (const ditf::Error& e) {
    return set_error(static_cast<ditf_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(DITF_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(DITF_E_INTERNAL, e.what());
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) ditf::fail(ditf::ErrorCode::invalid_argument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const std::string& s) {
  if (out != nullptr) *out = dup_string(s);
}

ditf_feature* wrap(ditf::FeatureMap f) { return new ditf_feature{std::move(f)}; }

}  // namespace

extern "C" {

const char* ditf_version(void) { return "1.0.0"; }

const char* ditf_status_name(ditf_status status) {
  return ditf::error_code_name(static_cast<ditf::ErrorCode>(status));
}

const char* ditf_last_error(void) { return g_last_error.c_str(); }

void ditf_string_free(char* text) { std::free(text); }

ditf_status ditf_container_create(ditf_container** out) {
  return guard([&] {
    require(out, "out");
    *out = new ditf_container{};
  });
}

ditf_status ditf_container_read(const char* path, ditf_container** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ditf_container{ditf::read_container(path)};
  });
}

ditf_status ditf_container_write(const ditf_container* container, const char* path) {
  return guard([&] {
    require(container, "container");
    require(path, "path");
    ditf::write_container(container->value, path);
  });
}

void ditf_container_free(ditf_container* container) { delete container; }

ditf_status ditf_container_add_tensor(ditf_container* container, const char* name, const float* data, size_t ndim,
                                      const uint64_t* shape) {
  return guard([&] {
    require(container, "container");
    require(name, "name");
    if (ndim > 0) require(shape, "shape");
    std::vector<std::uint64_t> dims(shape, shape + ndim);
    ditf::Tensor t{dims, {}};
    const std::size_t n = t.element_count();
    if (n > 0) require(data, "data");
    t.values.assign(data, data + n);
    container->value.add(name, std::move(t));
  });
}

ditf_status ditf_container_entry_count(const ditf_container* container, size_t* count) {
  return guard([&] {
    require(container, "container");
    require(count, "count");
    *count = container->value.entries().size();
  });
}

ditf_status ditf_container_entry_name(const ditf_container* container, size_t index, const char** name) {
  return guard([&] {
    require(container, "container");
    require(name, "name");
    if (index >= container->value.entries().size()) ditf::fail(ditf::ErrorCode::not_found, "entry index out of range");
    *name = container->value.entries()[index].name.c_str();
  });
}

ditf_status ditf_container_entry_shape(const ditf_container* container, const char* name, size_t* ndim,
                                       const uint64_t** shape) {
  return guard([&] {
    require(container, "container");
    require(name, "name");
    const auto& t = container->value.get(name);
    if (ndim) *ndim = t.shape.size();
    if (shape) *shape = t.shape.data();
  });
}

ditf_status ditf_container_entry_data(const ditf_container* container, const char* name, const float** data,
                                      size_t* count) {
  return guard([&] {
    require(container, "container");
    require(name, "name");
    const auto& t = container->value.get(name);
    if (data) *data = t.values.data();
    if (count) *count = t.values.size();
  });
}

ditf_status ditf_container_set_meta(ditf_container* container, const char* key, const char* value) {
  return guard([&] {
    require(container, "container");
    require(key, "key");
    require(value, "value");
    container->value.meta()[key] = value;
  });
}

ditf_status ditf_container_get_meta(const ditf_container* container, const char* key, const char** value) {
  return guard([&] {
    require(container, "container");
    require(key, "key");
    require(value, "value");
    const auto it = container->value.meta().find(key);
    if (it == container->value.meta().end()) ditf::fail(ditf::ErrorCode::not_found, std::string("no meta key ") + key);
    *value = it->second.c_str();
  });
}

ditf_status ditf_feature_create(const float* data, size_t tokens, size_t channels, size_t grid_h, size_t grid_w,
                                size_t image_h, size_t image_w, ditf_feature** out) {
  return guard([&] {
    require(data, "data");
    require(out, "out");
    ditf::FeatureMap f(std::vector<float>(data, data + tokens * channels), tokens, channels, {grid_h, grid_w},
                       {image_h, image_w});
    if (!f.all_finite()) ditf::fail(ditf::ErrorCode::non_finite, "feature data contains a non-finite value");
    *out = wrap(std::move(f));
  });
}

ditf_status ditf_feature_from_container(const ditf_container* container, const char* entry, ditf_feature** out) {
  return guard([&] {
    require(container, "container");
    require(entry, "entry");
    require(out, "out");
    *out = wrap(ditf::get_feature(container->value, entry));
  });
}

ditf_status ditf_feature_load(const char* path, const char* entry, ditf_feature** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    const auto c = ditf::read_container(path);
    *out = wrap(ditf::get_feature(c, entry ? entry : "feature"));
  });
}

ditf_status ditf_feature_to_container(const ditf_feature* feature, ditf_container* container, const char* entry) {
  return guard([&] {
    require(feature, "feature");
    require(container, "container");
    require(entry, "entry");
    ditf::put_feature(container->value, entry, feature->value);
  });
}

ditf_status ditf_feature_shape(const ditf_feature* feature, size_t* tokens, size_t* channels) {
  return guard([&] {
    require(feature, "feature");
    if (tokens) *tokens = feature->value.tokens();
    if (channels) *channels = feature->value.channels();
  });
}

ditf_status ditf_feature_data(const ditf_feature* feature, const float** data) {
  return guard([&] {
    require(feature, "feature");
    require(data, "data");
    *data = feature->value.data().data();
  });
}

ditf_status ditf_feature_stage(const ditf_feature* feature, const char** stage) {
  return guard([&] {
    require(feature, "feature");
    require(stage, "stage");
    *stage = feature->value.stage() ? ditf::stage_name(*feature->value.stage()).data() : "";
  });
}

ditf_status ditf_feature_set_stage(ditf_feature* feature, const char* stage) {
  return guard([&] {
    require(feature, "feature");
    require(stage, "stage");
    if (*stage == '\0') {
      feature->value.set_stage(std::nullopt);
      return;
    }
    const auto s = ditf::parse_stage(stage);
    if (!s) ditf::fail(ditf::ErrorCode::invalid_argument, std::string("unknown stage '") + stage + "'");
    feature->value.set_stage(s);
  });
}

void ditf_feature_free(ditf_feature* feature) { delete feature; }

ditf_status ditf_params_from_container(const ditf_container* container, ditf_params** out) {
  return guard([&] {
    require(container, "container");
    require(out, "out");
    *out = new ditf_params{ditf::get_params(container->value)};
  });
}

ditf_status ditf_params_load(const char* path, ditf_params** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ditf_params{ditf::get_params(ditf::read_container(path))};
  });
}

ditf_status ditf_params_alpha(const ditf_params* params, const float** data, size_t* count) {
  return guard([&] {
    require(params, "params");
    require(data, "data");
    const auto& alpha = params->value.alpha;
    *data = alpha ? alpha->data() : nullptr;
    if (count) *count = alpha ? alpha->size() : 0;
  });
}

void ditf_params_free(ditf_params* params) { delete params; }

ditf_status ditf_config_create(ditf_config** out) {
  return guard([&] {
    require(out, "out");
    *out = new ditf_config{};
  });
}

ditf_status ditf_config_load(const char* path, ditf_config** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ditf_config{ditf::parse_extraction_config(ditf::read_text_file(path))};
  });
}

ditf_status ditf_config_set_eps(ditf_config* config, double eps) {
  return guard([&] {
    require(config, "config");
    config->value.eps = eps;
  });
}

ditf_status ditf_config_set_discard_mode(ditf_config* config, const char* mode) {
  return guard([&] {
    require(config, "config");
    require(mode, "mode");
    config->value.discard_mode = ditf::parse_discard_mode(mode);
  });
}

ditf_status ditf_config_set_discard_dims(ditf_config* config, const size_t* dims, size_t count) {
  return guard([&] {
    require(config, "config");
    if (count > 0) require(dims, "dims");
    config->value.discard_dims.assign(dims, dims + count);
  });
}

ditf_status ditf_config_set_tau(ditf_config* config, double tau) {
  return guard([&] {
    require(config, "config");
    config->value.tau = tau;
  });
}

ditf_status ditf_config_set_coverage(ditf_config* config, double coverage) {
  return guard([&] {
    require(config, "config");
    config->value.coverage_threshold = coverage;
  });
}

ditf_status ditf_config_to_json(const ditf_config* config, char** json) {
  return guard([&] {
    require(config, "config");
    require(json, "json");
    *json = dup_string(ditf::extraction_config_to_json(config->value));
  });
}

void ditf_config_free(ditf_config* config) { delete config; }

ditf_status ditf_analyze(const ditf_feature* feature, double ratio_threshold, double coverage_threshold,
                         int mean_abs_fallback, char** report_json, char** dims_csv) {
  return guard([&] {
    require(feature, "feature");
    ditf::DetectOptions opts{ratio_threshold, coverage_threshold, mean_abs_fallback != 0};
    const auto report = ditf::detect_massive(feature->value, opts);
    std::string csv;
    if (dims_csv) csv = ditf::dimension_stats_csv(ditf::dimension_stats(feature->value));
    emit(report_json, ditf::massive_report_json(report));
    emit(dims_csv, csv);
  });
}

ditf_status ditf_stats(const ditf_feature* feature, char** stats_json, char** dims_csv) {
  return guard([&] {
    require(feature, "feature");
    const auto stats = ditf::dimension_stats(feature->value);
    emit(stats_json, ditf::dimension_stats_json(stats));
    emit(dims_csv, ditf::dimension_stats_csv(stats));
  });
}

ditf_status ditf_align(const ditf_feature* feature, const float* alpha, size_t alpha_len, size_t m,
                       char** alignment_json) {
  return guard([&] {
    require(feature, "feature");
    require(alpha, "alpha");
    require(alignment_json, "alignment_json");
    const auto r = ditf::alpha_alignment(feature->value, std::span<const float>(alpha, alpha_len), m);
    *alignment_json = dup_string(ditf::alignment_json(r));
  });
}

ditf_status ditf_layer_norm(const ditf_feature* feature, double eps, ditf_feature** out) {
  return guard([&] {
    require(feature, "feature");
    require(out, "out");
    *out = wrap(ditf::layer_norm(feature->value, eps));
  });
}

ditf_status ditf_discard_channels(const ditf_feature* feature, const size_t* dims, size_t count, ditf_feature** out) {
  return guard([&] {
    require(feature, "feature");
    require(out, "out");
    if (count > 0) require(dims, "dims");
    *out = wrap(ditf::discard_channels(feature->value, std::span<const std::size_t>(dims, count)));
  });
}

ditf_status ditf_extract(const ditf_feature* raw, const ditf_params* params, const ditf_config* config,
                         ditf_feature** out, char** report_json) {
  return guard([&] {
    require(raw, "raw");
    require(params, "params");
    require(out, "out");
    const ditf::ExtractionConfig cfg = config ? config->value : ditf::ExtractionConfig{};
    auto result = ditf::extract(raw->value, params->value, cfg);
    std::string report = ditf::extraction_report_json(result.report, cfg);
    *out = wrap(std::move(result.feature));
    emit(report_json, report);
  });
}

ditf_status ditf_resample(const ditf_feature* feature, size_t grid_h, size_t grid_w, ditf_feature** out) {
  return guard([&] {
    require(feature, "feature");
    require(out, "out");
    *out = wrap(ditf::resample_grid(feature->value, {grid_h, grid_w}));
  });
}

ditf_status ditf_fuse_concat(const ditf_feature* main_feature, const ditf_feature* aux, int normalize,
                             ditf_feature** out) {
  return guard([&] {
    require(main_feature, "main_feature");
    require(out, "out");
    *out = wrap(ditf::fuse_concat(main_feature->value, aux ? &aux->value : nullptr, normalize != 0));
  });
}

ditf_status ditf_pair_pca(const ditf_feature* source, const ditf_feature* target, size_t out_dim,
                          ditf_feature** source_out, ditf_feature** target_out) {
  return guard([&] {
    require(source, "source");
    require(target, "target");
    require(source_out, "source_out");
    require(target_out, "target_out");
    auto r = ditf::pair_pca(source->value, target->value, out_dim);
    *source_out = wrap(std::move(r.source));
    *target_out = wrap(std::move(r.target));
  });
}

ditf_status ditf_match(const ditf_feature* source, const ditf_feature* target, const char* keypoints_json,
                       const char* mode, char** match_json) {
  return guard([&] {
    require(source, "source");
    require(target, "target");
    require(keypoints_json, "keypoints_json");
    require(match_json, "match_json");
    const auto kps = ditf::parse_keypoints_json(keypoints_json);
    const auto m = mode ? ditf::parse_sample_mode(mode) : ditf::SampleMode::nearest_token;
    *match_json = dup_string(ditf::match_result_json(ditf::transfer_keypoints(source->value, target->value, kps, m)));
  });
}

ditf_status ditf_pck(const char* matches_json, const char* ground_truth_json, const double* alphas,
                     size_t alpha_count, const char* norm, char** report_json) {
  return guard([&] {
    require(matches_json, "matches_json");
    require(ground_truth_json, "ground_truth_json");
    require(report_json, "report_json");
    if (alpha_count > 0) require(alphas, "alphas");
    const auto results = ditf::parse_match_results_json(matches_json);
    const auto gts = ditf::parse_keypoint_list_json(ground_truth_json);
    const auto n = norm ? ditf::parse_pck_norm(norm) : ditf::PckNorm::bbox_max_side;
    const auto report = ditf::pck(results, gts, std::span<const double>(alphas, alpha_count), n);
    *report_json = dup_string(ditf::pck_report_json(report));
  });
}

void ditf_synth_options_default(ditf_synth_options* options) {
  if (options == nullptr) return;
  *options = ditf_synth_options{};
  options->tokens = 64;
  options->channels = 64;
  options->scale = 200.0f;
  options->alpha_peak = 1.0f;
}

ditf_status ditf_synth_massive(const ditf_synth_options* options, ditf_container** out) {
  return guard([&] {
    require(options, "options");
    require(out, "out");
    if (options->planted_count > 0) require(options->planted_dims, "planted_dims");
    ditf::SynthOptions so;
    so.seed = options->seed;
    so.tokens = options->tokens;
    so.channels = options->channels;
    so.planted_dims.assign(options->planted_dims, options->planted_dims + options->planted_count);
    so.scale = options->scale;
    if (options->grid_h != 0 || options->grid_w != 0) so.grid = ditf::Grid{options->grid_h, options->grid_w};
    const auto feature = ditf::synthesize_massive_feature(so);

    ditf::ModulationParams params = ditf::ModulationParams::identity(so.channels);
    params.alpha = std::vector<float>(so.channels, 1.0f);
    for (auto d : so.planted_dims) {
      params.gamma[d] = options->gamma_planted;
      (*params.alpha)[d] = options->alpha_peak;
    }
    auto c = std::make_unique<ditf_container>();
    ditf::put_feature(c->value, "feature", feature);
    ditf::put_params(c->value, params);
    c->value.meta()["seed"] = std::to_string(so.seed);
    *out = c.release();
  });
}

void ditf_permutation_options_default(ditf_permutation_options* options) {
  if (options == nullptr) return;
  *options = ditf_permutation_options{};
  options->grid_h = 8;
  options->grid_w = 8;
  options->channels = 32;
  options->massive_ratio = 100.0;
  options->massive_jitter = 0.5;
}

ditf_status ditf_synth_permutation(const ditf_permutation_options* options, ditf_container** source,
                                   ditf_container** target, char** source_keypoints_json,
                                   char** target_keypoints_json) {
  return guard([&] {
    require(options, "options");
    require(source, "source");
    require(target, "target");
    ditf::PermutationFixtureOptions po;
    po.seed = options->seed;
    po.grid = {options->grid_h, options->grid_w};
    po.channels = options->channels;
    if (options->inject_massive) po.massive_dim = options->massive_dim;
    po.massive_ratio = options->massive_ratio;
    po.massive_jitter = options->massive_jitter;
    const auto fx = ditf::make_permutation_fixture(po);

    auto make = [&](const ditf::FeatureMap& f) {
      auto c = std::make_unique<ditf_container>();
      ditf::put_feature(c->value, "feature", f);
      ditf::put_params(c->value, ditf::ModulationParams::identity(f.channels()));
      return c;
    };
    auto s = make(fx.source);
    auto t = make(fx.target);
    std::string skp = ditf::keypoints_to_json(fx.source_keypoints);
    std::string tkp = ditf::keypoints_to_json(fx.target_keypoints);
    emit(source_keypoints_json, skp);
    emit(target_keypoints_json, tkp);
    *source = s.release();
    *target = t.release();
  });
}

void ditf_toyblock_options_default(ditf_toyblock_options* options) {
  if (options == nullptr) return;
  *options = ditf_toyblock_options{};
  options->channels = 16;
  options->tokens = 16;
  options->heads = 2;
  options->hidden_mult = 4;
  options->cond_dim = 16;
  options->mode = "eqs4_7";
  options->timestep = 260;
  options->input_seed = 1;
  options->alpha_peak_value = 1.0e4f;
}

ditf_status ditf_toyblock_run(const ditf_toyblock_options* options, ditf_container** trace,
                              ditf_container** weights) {
  return guard([&] {
    require(options, "options");
    require(trace, "trace");
    if (options->alpha_peak_count > 0) require(options->alpha_peak_dims, "alpha_peak_dims");
    ditf::ToyBlockConfig cfg{options->channels, options->tokens, options->heads, options->hidden_mult,
                             options->cond_dim};
    auto w = ditf::init_toy_block(cfg, options->seed, options->zero_init != 0);
    ditf::plant_alpha_peaks(w, std::span<const std::size_t>(options->alpha_peak_dims, options->alpha_peak_count),
                            options->alpha_peak_value);

    ditf::FixtureRng rng(options->input_seed);
    std::vector<float> z(cfg.tokens * cfg.channels);
    for (auto& v : z) v = rng.uniform_pm1();
    ditf::ConditionEmbedding cond{options->timestep, std::vector<float>(cfg.cond_dim)};
    for (auto& v : cond.condition) v = rng.uniform_pm1();
    const ditf::Grid grid = ditf::default_grid(cfg.tokens);
    const ditf::FeatureMap input(std::move(z), cfg.tokens, cfg.channels, grid, {grid.height * 16, grid.width * 16},
                                 ditf::Stage::original);

    ditf::ForwardOptions fo;
    fo.mode = ditf::parse_forward_mode(options->mode ? options->mode : "eqs4_7");
    const auto out = ditf::block_forward(w, input, cond, fo);

    auto c = std::make_unique<ditf_container>();
    ditf::put_feature(c->value, "input", input);
    ditf::put_feature(c->value, "pre_adaln_1", out.trace.pre_adaln_1);
    ditf::put_feature(c->value, "post_adaln_1", out.trace.post_adaln_1);
    ditf::put_feature(c->value, "pre_adaln_2", out.trace.pre_adaln_2);
    ditf::put_feature(c->value, "post_adaln_2", out.trace.post_adaln_2);
    ditf::put_feature(c->value, "feature", out.next);
    const std::uint64_t C = cfg.channels;
    c->value.add("gamma1", {C}, out.modulation.gamma1);
    c->value.add("beta1", {C}, out.modulation.beta1);
    c->value.add("alpha1", {C}, out.modulation.alpha1);
    c->value.add("gamma2", {C}, out.modulation.gamma2);
    c->value.add("beta2", {C}, out.modulation.beta2);
    c->value.add("alpha2", {C}, out.modulation.alpha2);
    c->value.add("alpha", {C}, out.modulation.alpha2);
    c->value.meta()["mode"] = std::string(ditf::forward_mode_name(fo.mode));
    c->value.meta()["timestep"] = std::to_string(options->timestep);
    c->value.meta()["seed"] = std::to_string(options->seed);
    c->value.meta()["input_seed"] = std::to_string(options->input_seed);

    std::unique_ptr<ditf_container> wc;
    if (weights) wc.reset(new ditf_container{ditf::weights_to_container(w)});
    *trace = c.release();
    if (weights) *weights = wc.release();
  });
}

}  // extern "C"
