#pragma once

// DITF container: named little-endian f32 tensors plus a trailing JSON
// metadata object. Layout (all integers little-endian):
//
//   "DITF"                    4-byte magic
//   u16 version               currently 1
//   u16 flags                 must be 0
//   u32 entry_count
//   entry_count x {
//     u32 name_length, name bytes (UTF-8)
//     u8 dtype                0 = f32 little-endian
//     u8 ndim                 at most kMaxDims
//     u16 reserved            must be 0
//     u64 shape[ndim]
//     u64 offset              relative to the payload start, multiple of 64
//     u64 length              bytes, equals 4 * prod(shape)
//   }
//   u64 payload_offset        absolute, multiple of 64
//   u64 payload_length
//   zero padding up to payload_offset
//   payload                   tensors in entry order, zero padded to 64 bytes
//   u64 meta_length
//   meta bytes                JSON object of string -> string, keys sorted
//
// The file ends exactly after the metadata bytes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ditf/feature_map.hpp"

namespace ditf {

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::size_t kMaxDims = 8;
inline constexpr std::size_t kPayloadAlignment = 64;

struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> values;

  std::size_t element_count() const;
  bool bitwise_equal(const Tensor& other) const;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Container {
 public:
  // Throws duplicate_name if `name` is already present, shape_mismatch if the
  // value count disagrees with the shape.
  void add(std::string name, Tensor tensor);
  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;  // throws not_found
  const std::vector<NamedTensor>& entries() const { return entries_; }

  const Meta& meta() const { return meta_; }
  Meta& meta() { return meta_; }

  bool bitwise_equal(const Container& other) const;

 private:
  std::vector<NamedTensor> entries_;
  Meta meta_;
};

std::vector<std::uint8_t> encode_container(const Container& container);
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const Container& container, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

// FeatureMap <-> container entry. Per-entry metadata is stored under
// "<entry>.<key>" (grid_h, grid_w, image_h, image_w, stage and any free meta).
void put_feature(Container& container, const std::string& entry, const FeatureMap& feature);
// Plain keys (no '.') act as container-wide defaults and are overridden by
// "<entry>.<key>". Without grid keys a perfect-square token count is laid out
// square; without image keys the image is taken as 960x960.
FeatureMap get_feature(const Container& container, const std::string& entry);

// Entries "gamma", "beta", optional "alpha"; meta keys timestep, block_index, group.
void put_params(Container& container, const ModulationParams& params);
ModulationParams get_params(const Container& container);

KeypointSet parse_keypoints_json(const std::string& text);
std::string keypoints_to_json(const KeypointSet& keypoints);
std::vector<KeypointSet> parse_keypoint_list_json(const std::string& text);  // object or array

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ditf
