// ditf command-line front end. Every operation goes through the C API.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ditf/ditf.h"

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  validation error (bad flag, argument, shape, stage or config)\n"
    "  2  I/O or format error (missing file, corrupt container, non-finite data)\n"
    "  3  numeric degeneracy (zero median, zero-variance covariance)\n";

struct Failure {
  int exit_code;
  std::string message;
};

int exit_code_for(ditf_status s) {
  switch (s) {
    case DITF_OK:
      return 0;
    case DITF_E_IO:
    case DITF_E_BAD_MAGIC:
    case DITF_E_UNSUPPORTED_VERSION:
    case DITF_E_UNSUPPORTED_DTYPE:
    case DITF_E_TRUNCATED:
    case DITF_E_NON_FINITE:
    case DITF_E_MALFORMED:
      return 2;
    case DITF_E_DEGENERATE_MEDIAN:
    case DITF_E_DEGENERATE_COVARIANCE:
      return 3;
    default:
      return 1;
  }
}

void check(ditf_status s) {
  if (s != DITF_OK) throw Failure{exit_code_for(s), std::string(ditf_status_name(s)) + ": " + ditf_last_error()};
}

[[noreturn]] void invalid(const std::string& message) { throw Failure{1, message}; }

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ContainerPtr = std::unique_ptr<ditf_container, Deleter<ditf_container, ditf_container_free>>;
using FeaturePtr = std::unique_ptr<ditf_feature, Deleter<ditf_feature, ditf_feature_free>>;
using ParamsPtr = std::unique_ptr<ditf_params, Deleter<ditf_params, ditf_params_free>>;
using ConfigPtr = std::unique_ptr<ditf_config, Deleter<ditf_config, ditf_config_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  ditf_string_free(s);
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{2, "cannot open '" + path + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{2, "cannot write '" + path + "'"};
  out << text;
  if (!out) throw Failure{2, "write failed for '" + path + "'"};
}

ContainerPtr read_container(const std::string& path) {
  ditf_container* c = nullptr;
  check(ditf_container_read(path.c_str(), &c));
  return ContainerPtr(c);
}

FeaturePtr load_feature(const std::string& path, const std::string& entry) {
  ditf_feature* f = nullptr;
  check(ditf_feature_load(path.c_str(), entry.c_str(), &f));
  return FeaturePtr(f);
}

std::vector<float> read_vector(const ditf_container* c, const std::string& entry) {
  const float* data = nullptr;
  std::size_t n = 0;
  check(ditf_container_entry_data(c, entry.c_str(), &data, &n));
  return std::vector<float>(data, data + n);
}

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
};

// JSON goes to --out when given, stdout otherwise.
void emit_json(const Globals& g, const std::string& json) {
  if (g.out.empty()) {
    std::cout << json << '\n';
  } else {
    write_text(g.out, json + "\n");
  }
}

std::string require_out(const Globals& g, const char* command) {
  if (g.out.empty()) invalid(std::string(command) + " requires --out");
  return g.out;
}

struct AnalyzeArgs {
  std::string input;
  std::string entry = "feature";
  double ratio = 100.0;
  double coverage = 0.9;
  bool mean_fallback = false;
  std::string csv;
};

void run_analyze(const Globals& g, const AnalyzeArgs& a) {
  auto f = load_feature(a.input, a.entry);
  char* json = nullptr;
  char* csv = nullptr;
  check(ditf_analyze(f.get(), a.ratio, a.coverage, a.mean_fallback, &json, a.csv.empty() ? nullptr : &csv));
  const std::string report = take(json);
  if (!a.csv.empty()) write_text(a.csv, take(csv));
  emit_json(g, report);
}

struct StatsArgs {
  std::string input;
  std::string entry = "feature";
  std::string csv;
};

void run_stats(const Globals& g, const StatsArgs& a) {
  auto f = load_feature(a.input, a.entry);
  char* json = nullptr;
  char* csv = nullptr;
  check(ditf_stats(f.get(), &json, a.csv.empty() ? nullptr : &csv));
  const std::string report = take(json);
  if (!a.csv.empty()) write_text(a.csv, take(csv));
  emit_json(g, report);
}

struct AlignArgs {
  std::string input;
  std::string entry = "feature";
  std::string alpha_file;
  std::string alpha_entry = "alpha";
  std::size_t m = 1;
};

void run_align(const Globals& g, const AlignArgs& a) {
  auto c = read_container(a.input);
  ditf_feature* raw = nullptr;
  check(ditf_feature_from_container(c.get(), a.entry.c_str(), &raw));
  FeaturePtr f(raw);
  std::vector<float> alpha;
  if (a.alpha_file.empty()) {
    alpha = read_vector(c.get(), a.alpha_entry);
  } else {
    alpha = read_vector(read_container(a.alpha_file).get(), a.alpha_entry);
  }
  char* json = nullptr;
  check(ditf_align(f.get(), alpha.data(), alpha.size(), a.m, &json));
  emit_json(g, take(json));
}

struct ExtractArgs {
  std::string input;
  std::string entry = "feature";
  std::string params;
  double eps = 0.0;
  std::string discard_mode;
  std::vector<std::size_t> discard_dims;
  double tau = 0.0;
  double coverage = 0.0;
  std::string report;
  CLI::Option* eps_opt = nullptr;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* dims_opt = nullptr;
  CLI::Option* tau_opt = nullptr;
  CLI::Option* coverage_opt = nullptr;
};

void run_extract(const Globals& g, const ExtractArgs& a) {
  const std::string out = require_out(g, "extract");
  auto c = read_container(a.input);
  ditf_feature* raw = nullptr;
  check(ditf_feature_from_container(c.get(), a.entry.c_str(), &raw));
  FeaturePtr f(raw);

  ditf_params* p = nullptr;
  if (a.params.empty()) {
    check(ditf_params_from_container(c.get(), &p));
  } else {
    check(ditf_params_load(a.params.c_str(), &p));
  }
  ParamsPtr params(p);

  ditf_config* cfg = nullptr;
  if (g.config.empty()) {
    check(ditf_config_create(&cfg));
  } else {
    check(ditf_config_load(g.config.c_str(), &cfg));
  }
  ConfigPtr config(cfg);
  // Explicit flags override the config file.
  if (a.eps_opt->count()) check(ditf_config_set_eps(cfg, a.eps));
  if (a.mode_opt->count()) check(ditf_config_set_discard_mode(cfg, a.discard_mode.c_str()));
  if (a.dims_opt->count()) {
    check(ditf_config_set_discard_dims(cfg, a.discard_dims.data(), a.discard_dims.size()));
    if (!a.mode_opt->count()) check(ditf_config_set_discard_mode(cfg, "explicit_dims"));
  }
  if (a.tau_opt->count()) check(ditf_config_set_tau(cfg, a.tau));
  if (a.coverage_opt->count()) check(ditf_config_set_coverage(cfg, a.coverage));

  ditf_feature* extracted = nullptr;
  char* json = nullptr;
  check(ditf_extract(f.get(), params.get(), cfg, &extracted, &json));
  FeaturePtr result(extracted);
  const std::string report = take(json);

  ditf_container* oc = nullptr;
  check(ditf_container_create(&oc));
  ContainerPtr out_container(oc);
  check(ditf_feature_to_container(result.get(), oc, "feature"));
  check(ditf_container_write(oc, out.c_str()));

  if (a.report.empty()) {
    std::cout << report << '\n';
  } else {
    write_text(a.report, report + "\n");
  }
}

struct MatchArgs {
  std::string source;
  std::string target;
  std::string entry = "feature";
  std::string keypoints;
  std::string mode = "nearest";
  std::size_t pca_dim = 0;
  std::string aux_source;
  std::string aux_target;
  std::string aux_entry = "feature";
  bool no_normalize = false;
};

FeaturePtr fuse(FeaturePtr main, const std::string& aux_path, const std::string& aux_entry, bool normalize) {
  auto aux = load_feature(aux_path, aux_entry);
  // Bring the auxiliary grid onto the main grid before concatenation.
  std::size_t tokens = 0;
  check(ditf_feature_shape(main.get(), &tokens, nullptr));
  ditf_container* tmp = nullptr;
  check(ditf_container_create(&tmp));
  ContainerPtr holder(tmp);
  check(ditf_feature_to_container(main.get(), tmp, "m"));
  const char* gh = nullptr;
  const char* gw = nullptr;
  check(ditf_container_get_meta(tmp, "m.grid_h", &gh));
  check(ditf_container_get_meta(tmp, "m.grid_w", &gw));
  ditf_feature* resampled = nullptr;
  check(ditf_resample(aux.get(), std::stoull(gh), std::stoull(gw), &resampled));
  FeaturePtr aux_on_grid(resampled);
  ditf_feature* fused = nullptr;
  check(ditf_fuse_concat(main.get(), aux_on_grid.get(), normalize ? 1 : 0, &fused));
  return FeaturePtr(fused);
}

void run_match(const Globals& g, const MatchArgs& a) {
  auto src = load_feature(a.source, a.entry);
  auto tgt = load_feature(a.target, a.entry);
  if (a.aux_source.empty() != a.aux_target.empty()) invalid("--aux-source and --aux-target must be given together");
  if (!a.aux_source.empty()) {
    src = fuse(std::move(src), a.aux_source, a.aux_entry, !a.no_normalize);
    tgt = fuse(std::move(tgt), a.aux_target, a.aux_entry, !a.no_normalize);
  }
  if (a.pca_dim > 0) {
    ditf_feature* ps = nullptr;
    ditf_feature* pt = nullptr;
    check(ditf_pair_pca(src.get(), tgt.get(), a.pca_dim, &ps, &pt));
    src.reset(ps);
    tgt.reset(pt);
  }
  const std::string kps = read_text(a.keypoints);
  char* json = nullptr;
  check(ditf_match(src.get(), tgt.get(), kps.c_str(), a.mode.c_str(), &json));
  emit_json(g, take(json));
}

struct PckArgs {
  std::string matches;
  std::string ground_truth;
  std::vector<double> alphas{0.1};
  std::string norm = "bbox";
};

void run_pck(const Globals& g, const PckArgs& a) {
  const std::string matches = read_text(a.matches);
  const std::string gt = read_text(a.ground_truth);
  char* json = nullptr;
  check(ditf_pck(matches.c_str(), gt.c_str(), a.alphas.data(), a.alphas.size(), a.norm.c_str(), &json));
  emit_json(g, take(json));
}

struct SynthArgs {
  std::string kind = "massive";
  std::size_t tokens = 64;
  std::size_t channels = 0;
  std::vector<std::size_t> planted;
  float scale = 200.0f;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  float gamma_planted = 0.0f;
  float alpha_peak = 1.0f;
  bool inject_massive = false;
  std::size_t massive_dim = 0;
  double massive_ratio = 100.0;
  double massive_jitter = 0.5;
};

void run_synth(const Globals& g, const SynthArgs& a) {
  const std::string out = require_out(g, "synth");
  if (a.kind == "massive") {
    ditf_synth_options o;
    ditf_synth_options_default(&o);
    o.seed = g.seed;
    o.tokens = a.tokens;
    o.channels = a.channels ? a.channels : 64;
    o.planted_dims = a.planted.data();
    o.planted_count = a.planted.size();
    o.scale = a.scale;
    o.grid_h = a.grid_h;
    o.grid_w = a.grid_w;
    o.gamma_planted = a.gamma_planted;
    o.alpha_peak = a.alpha_peak;
    ditf_container* c = nullptr;
    check(ditf_synth_massive(&o, &c));
    ContainerPtr holder(c);
    check(ditf_container_write(c, out.c_str()));
    return;
  }
  if (a.kind == "permutation") {
    ditf_permutation_options o;
    ditf_permutation_options_default(&o);
    o.seed = g.seed;
    if (a.grid_h) o.grid_h = a.grid_h;
    if (a.grid_w) o.grid_w = a.grid_w;
    if (a.channels) o.channels = a.channels;
    o.inject_massive = a.inject_massive;
    o.massive_dim = a.massive_dim;
    o.massive_ratio = a.massive_ratio;
    o.massive_jitter = a.massive_jitter;
    ditf_container* s = nullptr;
    ditf_container* t = nullptr;
    char* skp = nullptr;
    char* tkp = nullptr;
    check(ditf_synth_permutation(&o, &s, &t, &skp, &tkp));
    ContainerPtr hs(s), ht(t);
    const std::string source_kps = take(skp);
    const std::string target_kps = take(tkp);
    check(ditf_container_write(s, (out + ".source.ditf").c_str()));
    check(ditf_container_write(t, (out + ".target.ditf").c_str()));
    write_text(out + ".source_kps.json", source_kps + "\n");
    write_text(out + ".target_kps.json", target_kps + "\n");
    return;
  }
  invalid("unknown --kind '" + a.kind + "' (expected massive or permutation)");
}

struct ToyArgs {
  std::size_t channels = 16;
  std::size_t tokens = 16;
  std::size_t heads = 2;
  std::size_t hidden_mult = 4;
  std::size_t cond_dim = 16;
  bool zero_init = false;
  std::string mode = "eqs4_7";
  int timestep = 260;
  std::uint64_t input_seed = 1;
  std::vector<std::size_t> alpha_peaks;
  float alpha_peak_value = 1.0e4f;
  std::string weights;
};

void run_toyblock(const Globals& g, const ToyArgs& a) {
  const std::string out = require_out(g, "toyblock");
  ditf_toyblock_options o;
  ditf_toyblock_options_default(&o);
  o.seed = g.seed;
  o.channels = a.channels;
  o.tokens = a.tokens;
  o.heads = a.heads;
  o.hidden_mult = a.hidden_mult;
  o.cond_dim = a.cond_dim;
  o.zero_init = a.zero_init;
  o.mode = a.mode.c_str();
  o.timestep = a.timestep;
  o.input_seed = a.input_seed;
  o.alpha_peak_dims = a.alpha_peaks.data();
  o.alpha_peak_count = a.alpha_peaks.size();
  o.alpha_peak_value = a.alpha_peak_value;
  ditf_container* trace = nullptr;
  ditf_container* weights = nullptr;
  check(ditf_toyblock_run(&o, &trace, a.weights.empty() ? nullptr : &weights));
  ContainerPtr ht(trace), hw(weights);
  check(ditf_container_write(trace, out.c_str()));
  if (weights) check(ditf_container_write(weights, a.weights.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Massive-activation forensics, AdaLN feature extraction and keypoint matching"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.set_version_flag("--version", ditf_version());

  Globals g;
  app.add_option("--seed", g.seed, "Seed for fixture generation")->capture_default_str();
  app.add_option("--config", g.config, "Extraction config JSON (extract)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output path (JSON for reports, container for extract/synth/toyblock)");

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Detect massive activations; optional per-dim CSV");
  an->add_option("input", analyze.input, "Feature container")->required();
  an->add_option("--entry", analyze.entry, "Feature entry name")->capture_default_str();
  an->add_option("--ratio", analyze.ratio, "Massive ratio threshold")->capture_default_str();
  an->add_option("--coverage", analyze.coverage, "Concentrated-dim token fraction")->capture_default_str();
  an->add_flag("--mean-fallback", analyze.mean_fallback, "Divide by mean |x| when the median is zero");
  an->add_option("--csv", analyze.csv, "Write per-dim mean/std/mean_abs CSV here");

  StatsArgs stats;
  auto* st = app.add_subcommand("stats", "Per-dimension statistics");
  st->add_option("input", stats.input, "Feature container")->required();
  st->add_option("--entry", stats.entry, "Feature entry name")->capture_default_str();
  st->add_option("--csv", stats.csv, "Write per-dim CSV here");

  AlignArgs align;
  auto* al = app.add_subcommand("align", "Compare top-m |alpha| dims with top-m activation dims");
  al->add_option("input", align.input, "Feature container")->required();
  al->add_option("--entry", align.entry, "Feature entry name")->capture_default_str();
  al->add_option("--alpha-file", align.alpha_file, "Container holding alpha (default: input)");
  al->add_option("--alpha-entry", align.alpha_entry, "Alpha entry name")->capture_default_str();
  al->add_option("-m,--top", align.m, "Number of top dims compared")->required();

  ExtractArgs extract;
  auto* ex = app.add_subcommand("extract", "AdaLN modulation plus channel discard");
  ex->add_option("input", extract.input, "Raw feature container")->required();
  ex->add_option("--entry", extract.entry, "Feature entry name")->capture_default_str();
  ex->add_option("--params", extract.params, "Container with gamma/beta (default: input)");
  extract.eps_opt = ex->add_option("--eps", extract.eps, "LayerNorm epsilon");
  extract.mode_opt = ex->add_option("--discard-mode", extract.discard_mode, "none | explicit_dims | auto");
  extract.dims_opt = ex->add_option("--discard-dims", extract.discard_dims, "Dims zeroed in explicit mode")
                         ->delimiter(',');
  extract.tau_opt = ex->add_option("--tau", extract.tau, "Auto-discard ratio threshold");
  extract.coverage_opt = ex->add_option("--coverage", extract.coverage, "Auto-discard token fraction");
  ex->add_option("--report", extract.report, "Write the JSON report here instead of stdout");

  MatchArgs match;
  auto* ma = app.add_subcommand("match", "Transfer keypoints by cosine nearest neighbour");
  ma->add_option("source", match.source, "Source feature container")->required();
  ma->add_option("target", match.target, "Target feature container")->required();
  ma->add_option("--keypoints", match.keypoints, "Source keypoint JSON")->required();
  ma->add_option("--entry", match.entry, "Feature entry name")->capture_default_str();
  ma->add_option("--mode", match.mode, "nearest | bilinear")->capture_default_str();
  ma->add_option("--pca-dim", match.pca_dim, "Joint PCA output dim (0 disables)")->capture_default_str();
  ma->add_option("--aux-source", match.aux_source, "Auxiliary source features to concatenate");
  ma->add_option("--aux-target", match.aux_target, "Auxiliary target features to concatenate");
  ma->add_option("--aux-entry", match.aux_entry, "Auxiliary entry name")->capture_default_str();
  ma->add_flag("--no-normalize", match.no_normalize, "Skip per-slice L2 normalization before concatenation");

  PckArgs pck;
  auto* pc = app.add_subcommand("pck", "Percentage of correct keypoints");
  pc->add_option("matches", pck.matches, "Match result JSON (object or array)")->required();
  pc->add_option("ground_truth", pck.ground_truth, "Ground-truth keypoint JSON (object or array)")->required();
  pc->add_option("--alpha", pck.alphas, "Alpha levels")->delimiter(',')->capture_default_str();
  pc->add_option("--norm", pck.norm, "bbox | img")->capture_default_str();

  SynthArgs synth;
  auto* sy = app.add_subcommand("synth", "Write a seeded fixture");
  sy->add_option("--kind", synth.kind, "massive | permutation")->capture_default_str();
  sy->add_option("--tokens", synth.tokens, "Token count (massive)")->capture_default_str();
  sy->add_option("--channels", synth.channels, "Channel count (default 64 massive, 32 permutation)");
  sy->add_option("--planted", synth.planted, "Planted massive dims (massive)")->delimiter(',');
  sy->add_option("--scale", synth.scale, "Planted value as a multiple of median |x|")->capture_default_str();
  sy->add_option("--grid-h", synth.grid_h, "Token grid height (0: automatic)");
  sy->add_option("--grid-w", synth.grid_w, "Token grid width (0: automatic)");
  sy->add_option("--gamma-planted", synth.gamma_planted, "gamma on planted dims")->capture_default_str();
  sy->add_option("--alpha-peak", synth.alpha_peak, "alpha on planted dims")->capture_default_str();
  sy->add_flag("--inject-massive", synth.inject_massive, "Add a shared massive dim (permutation)");
  sy->add_option("--massive-dim", synth.massive_dim, "Dim carrying the injected activation")->capture_default_str();
  sy->add_option("--massive-ratio", synth.massive_ratio, "Injected magnitude over median |x|")
      ->capture_default_str();
  sy->add_option("--massive-jitter", synth.massive_jitter, "Relative per-token jitter of the injected dim")
      ->capture_default_str();

  ToyArgs toy;
  auto* tb = app.add_subcommand("toyblock", "Run one seeded toy DiT block and write its trace");
  tb->add_option("--channels", toy.channels)->capture_default_str();
  tb->add_option("--tokens", toy.tokens)->capture_default_str();
  tb->add_option("--heads", toy.heads)->capture_default_str();
  tb->add_option("--hidden-mult", toy.hidden_mult)->capture_default_str();
  tb->add_option("--cond-dim", toy.cond_dim)->capture_default_str();
  tb->add_flag("--zero-init", toy.zero_init, "Zero the modulation MLP final layer");
  tb->add_option("--mode", toy.mode, "eqs4_7 | eq2")->capture_default_str();
  tb->add_option("--timestep", toy.timestep)->capture_default_str();
  tb->add_option("--input-seed", toy.input_seed, "Seed for the block input and condition")->capture_default_str();
  tb->add_option("--alpha-peaks", toy.alpha_peaks, "Dims whose alpha2 bias is raised")->delimiter(',');
  tb->add_option("--alpha-peak-value", toy.alpha_peak_value)->capture_default_str();
  tb->add_option("--weights", toy.weights, "Also write the block weights here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*an) run_analyze(g, analyze);
    else if (*st) run_stats(g, stats);
    else if (*al) run_align(g, align);
    else if (*ex) run_extract(g, extract);
    else if (*ma) run_match(g, match);
    else if (*pc) run_pck(g, pck);
    else if (*sy) run_synth(g, synth);
    else if (*tb) run_toyblock(g, toy);
  } catch (const Failure& f) {
    std::cerr << "ditf: " << f.message << '\n';
    return f.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "ditf: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
