#include "ditf/toy_dit.hpp"

#include <algorithm>
#include <cmath>

#include "ditf/error.hpp"
#include "ditf/modulation.hpp"
#include "ditf/rng.hpp"

namespace ditf {

void ToyBlockConfig::validate() const {
  if (channels == 0 || tokens == 0 || heads == 0 || hidden_mult == 0 || cond_dim == 0) {
    fail(ErrorCode::invalid_argument, "toy block counts must all be >= 1");
  }
  if (channels % heads != 0) fail(ErrorCode::invalid_argument, "channels must be divisible by heads");
  if (channels < 2) fail(ErrorCode::invalid_argument, "toy block needs at least 2 channels for layer norm");
}

namespace {

Matrix draw_matrix(FixtureRng& rng, std::size_t rows, std::size_t cols) {
  Matrix m{rows, cols, std::vector<float>(rows * cols)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : m.values) v = static_cast<float>(rng.uniform_pm1() * scale);
  return m;
}

std::vector<float> draw_vector(FixtureRng& rng, std::size_t n, std::size_t fan_in) {
  std::vector<float> v(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : v) x = static_cast<float>(rng.uniform_pm1() * scale);
  return v;
}

// out = x W (+ bias), accumulated in double. x is rows x W.rows.
std::vector<float> matmul(std::span<const float> x, std::size_t rows, const Matrix& w,
                          std::span<const float> bias = {}) {
  std::vector<float> out(rows * w.cols);
  std::vector<double> acc(w.cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (bias.empty()) {
      std::fill(acc.begin(), acc.end(), 0.0);
    } else {
      std::copy(bias.begin(), bias.end(), acc.begin());
    }
    for (std::size_t k = 0; k < w.rows; ++k) {
      const double xv = x[r * w.rows + k];
      const float* wrow = w.values.data() + k * w.cols;
      for (std::size_t c = 0; c < w.cols; ++c) acc[c] += xv * wrow[c];
    }
    for (std::size_t c = 0; c < w.cols; ++c) out[r * w.cols + c] = static_cast<float>(acc[c]);
  }
  return out;
}

float silu(float x) {
  const double v = x;
  return static_cast<float>(v / (1.0 + std::exp(-v)));
}

FeatureMap like(const FeatureMap& shape, std::vector<float> data, std::optional<Stage> stage) {
  return FeatureMap(std::move(data), shape.tokens(), shape.channels(), shape.grid(), shape.image_size(), stage,
                    shape.meta());
}

void require_finite(const FeatureMap& f, const char* stage) {
  if (!f.all_finite()) fail(ErrorCode::non_finite, std::string("non-finite value at stage ") + stage);
}

}  // namespace

ToyBlockWeights init_toy_block(const ToyBlockConfig& config, std::uint64_t seed, bool zero_init) {
  config.validate();
  const std::size_t C = config.channels;
  const std::size_t H = config.hidden_mult * C;
  const std::size_t D = config.cond_dim;
  FixtureRng rng(seed);
  ToyBlockWeights w;
  w.config = config;
  w.query = draw_matrix(rng, C, C);
  w.key = draw_matrix(rng, C, C);
  w.value = draw_matrix(rng, C, C);
  w.output = draw_matrix(rng, C, C);
  w.ff_in = draw_matrix(rng, C, H);
  w.ff_out = draw_matrix(rng, H, C);
  w.mod_hidden = draw_matrix(rng, D, D);
  w.mod_hidden_bias = draw_vector(rng, D, D);
  if (zero_init) {
    w.mod_out = Matrix{D, 6 * C, std::vector<float>(D * 6 * C, 0.0f)};
    w.mod_out_bias.assign(6 * C, 0.0f);
  } else {
    w.mod_out = draw_matrix(rng, D, 6 * C);
    w.mod_out_bias = draw_vector(rng, 6 * C, D);
  }
  w.zero_init = zero_init;
  return w;
}

std::vector<float> timestep_embedding(int timestep, std::size_t dim) {
  std::vector<float> e(dim, 0.0f);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = static_cast<double>(timestep) * freq;
    e[i] = static_cast<float>(std::cos(arg));
    e[half + i] = static_cast<float>(std::sin(arg));
  }
  return e;
}

BlockModulation regress_modulation(const ToyBlockWeights& weights, const ConditionEmbedding& cond) {
  const std::size_t D = weights.config.cond_dim;
  const std::size_t C = weights.config.channels;
  if (cond.condition.size() != D) {
    fail(ErrorCode::shape_mismatch, "condition has length " + std::to_string(cond.condition.size()) +
                                        ", block expects " + std::to_string(D));
  }
  if (cond.timestep < 0 || cond.timestep >= 1000) fail(ErrorCode::invalid_argument, "timestep must lie in [0, 1000)");

  std::vector<float> x = timestep_embedding(cond.timestep, D);
  for (std::size_t i = 0; i < D; ++i) x[i] += cond.condition[i];
  std::vector<float> h = matmul(x, 1, weights.mod_hidden, weights.mod_hidden_bias);
  for (auto& v : h) v = silu(v);
  const std::vector<float> out = matmul(h, 1, weights.mod_out, weights.mod_out_bias);

  BlockModulation m;
  auto slice = [&](std::size_t k) {
    return std::vector<float>(out.begin() + static_cast<std::ptrdiff_t>(k * C),
                              out.begin() + static_cast<std::ptrdiff_t>((k + 1) * C));
  };
  m.gamma1 = slice(0);
  m.beta1 = slice(1);
  m.alpha1 = slice(2);
  m.gamma2 = slice(3);
  m.beta2 = slice(4);
  m.alpha2 = slice(5);
  return m;
}

void plant_alpha_peaks(ToyBlockWeights& weights, std::span<const std::size_t> dims, float value) {
  const std::size_t C = weights.config.channels;
  for (auto d : dims) {
    if (d >= C) fail(ErrorCode::invalid_argument, "alpha peak dim " + std::to_string(d) + " is out of range");
    weights.mod_out_bias[5 * C + d] = value;
  }
  if (!dims.empty()) weights.zero_init = false;
}

void softmax_rows(std::span<double> scores, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = scores.subspan(r * cols, cols);
    const double peak = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - peak);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

FeatureMap self_attention(const ToyBlockWeights& weights, const FeatureMap& x) {
  const std::size_t T = x.tokens();
  const std::size_t C = weights.config.channels;
  const std::size_t heads = weights.config.heads;
  const std::size_t dh = C / heads;
  const auto q = matmul(x.data(), T, weights.query);
  const auto k = matmul(x.data(), T, weights.key);
  const auto v = matmul(x.data(), T, weights.value);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<float> mixed(T * C);
  std::vector<double> scores(T * T);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < T; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += static_cast<double>(q[i * C + off + c]) * k[j * C + off + c];
        scores[i * T + j] = dot * scale;
      }
    }
    softmax_rows(scores, T, T);
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < T; ++j) acc += scores[i * T + j] * v[j * C + off + c];
        mixed[i * C + off + c] = static_cast<float>(acc);
      }
    }
  }
  return like(x, matmul(mixed, T, weights.output), std::nullopt);
}

FeatureMap feedforward(const ToyBlockWeights& weights, const FeatureMap& x) {
  auto hidden = matmul(x.data(), x.tokens(), weights.ff_in);
  for (auto& v : hidden) v = silu(v);
  return like(x, matmul(hidden, x.tokens(), weights.ff_out), std::nullopt);
}

std::string_view forward_mode_name(ForwardMode mode) { return mode == ForwardMode::eq2 ? "eq2" : "eqs4_7"; }

ForwardMode parse_forward_mode(std::string_view name) {
  if (name == "eqs4_7") return ForwardMode::eqs4_7;
  if (name == "eq2") return ForwardMode::eq2;
  fail(ErrorCode::invalid_argument, "unknown forward mode '" + std::string(name) + "'");
}

namespace {

// out = base + gate * term, channel-wise gate. A zero product leaves base
// untouched (including -0).
std::vector<float> gated_sum(std::span<const float> base, std::span<const float> term, std::span<const float> gate,
                             std::size_t channels) {
  std::vector<float> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const float add = gate[i % channels] * term[i];
    out[i] = add == 0.0f ? base[i] : base[i] + add;
  }
  return out;
}

void check_input(const ToyBlockWeights& weights, const FeatureMap& z) {
  if (z.channels() != weights.config.channels || z.tokens() != weights.config.tokens) {
    fail(ErrorCode::shape_mismatch, "input is " + std::to_string(z.tokens()) + "x" + std::to_string(z.channels()) +
                                        ", block expects " + std::to_string(weights.config.tokens) + "x" +
                                        std::to_string(weights.config.channels));
  }
  require_finite(z, "input");
}

}  // namespace

FeatureMap block_branch(const ToyBlockWeights& weights, const FeatureMap& z, const BlockModulation& modulation) {
  check_input(weights, z);
  const FeatureMap post1 = adaln(z, modulation.gamma1, modulation.beta1, kToyLayerNormEps);
  const FeatureMap attn = self_attention(weights, post1);
  const FeatureMap post2 = adaln(attn, modulation.gamma2, modulation.beta2, kToyLayerNormEps);
  return feedforward(weights, post2);
}

BlockOutput block_forward(const ToyBlockWeights& weights, const FeatureMap& z, const ConditionEmbedding& cond,
                          const ForwardOptions& options) {
  check_input(weights, z);
  const std::size_t C = weights.config.channels;
  BlockOutput out;
  out.modulation = regress_modulation(weights, cond);
  BlockModulation& m = out.modulation;
  if (options.zero_gates) {
    std::fill(m.alpha1.begin(), m.alpha1.end(), 0.0f);
    std::fill(m.alpha2.begin(), m.alpha2.end(), 0.0f);
  }

  BlockTrace& tr = out.trace;
  tr.pre_adaln_1 = like(z, std::vector<float>(z.data().begin(), z.data().end()), Stage::pre_adaln);
  tr.post_adaln_1 = adaln(tr.pre_adaln_1, m.gamma1, m.beta1, kToyLayerNormEps);
  require_finite(tr.post_adaln_1, "post_adaln_1");
  const FeatureMap attn = self_attention(weights, tr.post_adaln_1);
  require_finite(attn, "self_attention");

  if (options.mode == ForwardMode::eqs4_7) {
    tr.pre_adaln_2 = like(z, gated_sum(attn.data(), z.data(), m.alpha1, C), Stage::pre_adaln);
  } else {
    tr.pre_adaln_2 = like(z, std::vector<float>(attn.data().begin(), attn.data().end()), Stage::pre_adaln);
  }
  require_finite(tr.pre_adaln_2, "pre_adaln_2");
  tr.post_adaln_2 = adaln(tr.pre_adaln_2, m.gamma2, m.beta2, kToyLayerNormEps);
  require_finite(tr.post_adaln_2, "post_adaln_2");
  const FeatureMap ff = feedforward(weights, tr.post_adaln_2);
  require_finite(ff, "feedforward");

  if (options.mode == ForwardMode::eqs4_7) {
    out.next = like(z, gated_sum(ff.data(), tr.pre_adaln_2.data(), m.alpha2, C), Stage::original);
  } else {
    out.next = like(z, gated_sum(z.data(), ff.data(), m.alpha2, C), Stage::original);
  }
  require_finite(out.next, "output");
  return out;
}

Container weights_to_container(const ToyBlockWeights& weights) {
  Container c;
  auto put = [&](const char* name, const Matrix& m) { c.add(name, {m.rows, m.cols}, m.values); };
  put("attn.query", weights.query);
  put("attn.key", weights.key);
  put("attn.value", weights.value);
  put("attn.output", weights.output);
  put("ff.in", weights.ff_in);
  put("ff.out", weights.ff_out);
  put("mod.hidden", weights.mod_hidden);
  c.add("mod.hidden_bias", {weights.mod_hidden_bias.size()}, weights.mod_hidden_bias);
  put("mod.out", weights.mod_out);
  c.add("mod.out_bias", {weights.mod_out_bias.size()}, weights.mod_out_bias);
  const auto& cfg = weights.config;
  c.meta()["channels"] = std::to_string(cfg.channels);
  c.meta()["tokens"] = std::to_string(cfg.tokens);
  c.meta()["heads"] = std::to_string(cfg.heads);
  c.meta()["hidden_mult"] = std::to_string(cfg.hidden_mult);
  c.meta()["cond_dim"] = std::to_string(cfg.cond_dim);
  c.meta()["zero_init"] = weights.zero_init ? "true" : "false";
  return c;
}

ToyBlockWeights weights_from_container(const Container& container) {
  auto count = [&](const char* key) -> std::size_t {
    auto it = container.meta().find(key);
    if (it == container.meta().end()) fail(ErrorCode::malformed, std::string("weights lack meta '") + key + "'");
    try {
      return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
      fail(ErrorCode::malformed, std::string("bad weights meta '") + key + "'");
    }
  };
  ToyBlockWeights w;
  w.config = {count("channels"), count("tokens"), count("heads"), count("hidden_mult"), count("cond_dim")};
  w.config.validate();
  const std::size_t C = w.config.channels;
  const std::size_t H = w.config.hidden_mult * C;
  const std::size_t D = w.config.cond_dim;
  auto get = [&](const char* name, std::size_t rows, std::size_t cols) {
    const Tensor& t = container.get(name);
    if (t.shape != std::vector<std::uint64_t>{rows, cols}) {
      fail(ErrorCode::shape_mismatch, std::string("weights entry '") + name + "' has the wrong shape");
    }
    return Matrix{rows, cols, t.values};
  };
  auto get_vec = [&](const char* name, std::size_t n) {
    const Tensor& t = container.get(name);
    if (t.shape != std::vector<std::uint64_t>{n}) {
      fail(ErrorCode::shape_mismatch, std::string("weights entry '") + name + "' has the wrong shape");
    }
    return t.values;
  };
  w.query = get("attn.query", C, C);
  w.key = get("attn.key", C, C);
  w.value = get("attn.value", C, C);
  w.output = get("attn.output", C, C);
  w.ff_in = get("ff.in", C, H);
  w.ff_out = get("ff.out", H, C);
  w.mod_hidden = get("mod.hidden", D, D);
  w.mod_hidden_bias = get_vec("mod.hidden_bias", D);
  w.mod_out = get("mod.out", D, 6 * C);
  w.mod_out_bias = get_vec("mod.out_bias", 6 * C);
  const auto it = container.meta().find("zero_init");
  w.zero_init = it != container.meta().end() && it->second == "true";
  return w;
}

}  // namespace ditf
