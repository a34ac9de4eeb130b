#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "ditf/error.hpp"
#include "ditf/feature_map.hpp"
#include "ditf/forensics.hpp"
#include "ditf/rng.hpp"

namespace testing {

inline ditf::FeatureMap noise_feature(std::uint64_t seed, std::size_t tokens, std::size_t channels,
                                      float scale = 1.0f) {
  ditf::FixtureRng rng(seed);
  std::vector<float> data(tokens * channels);
  for (auto& v : data) v = scale * rng.uniform_pm1();
  const ditf::Grid grid = ditf::default_grid(tokens);
  return ditf::FeatureMap(std::move(data), tokens, channels, grid, {grid.height * 16, grid.width * 16});
}

inline ditf::FeatureMap from_rows(const std::vector<std::vector<float>>& rows) {
  std::vector<float> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  const std::size_t tokens = rows.size();
  return ditf::FeatureMap(std::move(data), tokens, rows.front().size(), {1, tokens}, {16, 16 * tokens});
}

template <typename Fn>
ditf::ErrorCode error_of(Fn&& fn) {
  try {
    fn();
  } catch (const ditf::Error& e) {
    return e.code();
  }
  return ditf::ErrorCode::ok;
}

inline void put_u64(std::vector<std::uint8_t>& bytes, std::size_t pos, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes[pos + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline std::uint64_t get_u64(const std::vector<std::uint8_t>& bytes, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  return v;
}

inline std::uint32_t float_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return u;
}

}  // namespace testing
