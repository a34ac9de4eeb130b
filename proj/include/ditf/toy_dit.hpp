#pragma once

// Desk-scale DiT block with AdaLN-zero modulation.
//
// Matrices are row-major and act on row vectors: y = x W + b, with W of shape
// (inputs x outputs). Attention is multi-head scaled dot-product attention over
// tokens; feedforward and the modulation MLP use silu(x) = x * sigmoid(x).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ditf/container.hpp"
#include "ditf/feature_map.hpp"

namespace ditf {

inline constexpr double kToyLayerNormEps = 1e-6;

struct ToyBlockConfig {
  std::size_t channels = 16;
  std::size_t tokens = 16;
  std::size_t heads = 2;
  std::size_t hidden_mult = 4;
  std::size_t cond_dim = 16;

  void validate() const;
  bool operator==(const ToyBlockConfig&) const = default;
};

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct ToyBlockWeights {
  ToyBlockConfig config;
  Matrix query, key, value, output;  // C x C
  Matrix ff_in;                      // C x (hidden_mult * C)
  Matrix ff_out;                     // (hidden_mult * C) x C
  Matrix mod_hidden;                 // cond_dim x cond_dim
  std::vector<float> mod_hidden_bias;
  Matrix mod_out;  // cond_dim x 6C, columns ordered gamma1, beta1, alpha1, gamma2, beta2, alpha2
  std::vector<float> mod_out_bias;
  bool zero_init = false;
};

// Draw order from FixtureRng(seed): query, key, value, output, ff_in, ff_out,
// mod_hidden, mod_hidden_bias, mod_out, mod_out_bias, each row-major and scaled
// by 1/sqrt(fan_in). With zero_init the mod_out layer and its bias are zero
// (their draws are skipped).
ToyBlockWeights init_toy_block(const ToyBlockConfig& config, std::uint64_t seed, bool zero_init);

struct ConditionEmbedding {
  int timestep = 0;  // [0, 1000)
  std::vector<float> condition;  // cond_dim
};

struct BlockModulation {
  std::vector<float> gamma1, beta1, alpha1, gamma2, beta2, alpha2;
};

// Sinusoidal embedding: for i < half = dim / 2, f_i = exp(-ln(10000) * i / half),
// e[i] = cos(t f_i), e[half + i] = sin(t f_i); an odd trailing entry is 0.
std::vector<float> timestep_embedding(int timestep, std::size_t dim);

// mod_out(silu(mod_hidden(embed(t) + c))).
BlockModulation regress_modulation(const ToyBlockWeights& weights, const ConditionEmbedding& cond);

// Overwrites the alpha2 slice of the final-layer bias on `dims` so that the
// block's residual gate peaks there. Clears zero_init.
void plant_alpha_peaks(ToyBlockWeights& weights, std::span<const std::size_t> dims, float value);

// Numerically stable row softmax in place (row-major rows x cols).
void softmax_rows(std::span<double> scores, std::size_t rows, std::size_t cols);

FeatureMap self_attention(const ToyBlockWeights& weights, const FeatureMap& x);
FeatureMap feedforward(const ToyBlockWeights& weights, const FeatureMap& x);

enum class ForwardMode {
  // z2 = Attn(AdaLN1(z)) + a1 * z ; z_next = FF(AdaLN2(z2)) + a2 * z2
  eqs4_7,
  // z_next = z + a2 * Branch(z), Branch(z) = FF(AdaLN2(Attn(AdaLN1(z))))
  eq2,
};

std::string_view forward_mode_name(ForwardMode mode);
ForwardMode parse_forward_mode(std::string_view name);  // "eqs4_7" | "eq2"

struct BlockTrace {
  FeatureMap pre_adaln_1, post_adaln_1, pre_adaln_2, post_adaln_2;
};

struct BlockOutput {
  FeatureMap next;
  BlockTrace trace;
  BlockModulation modulation;
};

struct ForwardOptions {
  ForwardMode mode = ForwardMode::eqs4_7;
  // Replace alpha1 and alpha2 by zero after regression.
  bool zero_gates = false;
};

// Throws shape_mismatch for a mis-shaped z and non_finite (naming the stage)
// if any intermediate overflows.
BlockOutput block_forward(const ToyBlockWeights& weights, const FeatureMap& z, const ConditionEmbedding& cond,
                          const ForwardOptions& options = {});

// Ungated block path FF(AdaLN2(Attn(AdaLN1(z)))) with the regressed gamma/beta.
FeatureMap block_branch(const ToyBlockWeights& weights, const FeatureMap& z, const BlockModulation& modulation);

Container weights_to_container(const ToyBlockWeights& weights);
ToyBlockWeights weights_from_container(const Container& container);

}  // namespace ditf
