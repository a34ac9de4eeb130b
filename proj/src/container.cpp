#include "ditf/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <nlohmann/json.hpp>

#include "ditf/error.hpp"

namespace ditf {

using json = nlohmann::json;

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return shape == other.shape && values.size() == other.values.size() &&
         std::memcmp(values.data(), other.values.data(), values.size() * sizeof(float)) == 0;
}

void Container::add(std::string name, Tensor tensor) {
  if (name.empty()) fail(ErrorCode::invalid_argument, "tensor name must not be empty");
  if (contains(name)) fail(ErrorCode::duplicate_name, "duplicate tensor name '" + name + "'");
  if (tensor.shape.size() > kMaxDims) fail(ErrorCode::shape_mismatch, "tensor '" + name + "' has too many dims");
  if (tensor.element_count() != tensor.values.size()) {
    fail(ErrorCode::shape_mismatch, "tensor '" + name + "' shape does not match its value count");
  }
  entries_.push_back({std::move(name), std::move(tensor)});
}

void Container::add(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values) {
  add(std::move(name), Tensor{std::move(shape), std::move(values)});
}

bool Container::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

const Tensor& Container::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  fail(ErrorCode::not_found, "container has no entry '" + std::string(name) + "'");
}

bool Container::bitwise_equal(const Container& other) const {
  if (meta_ != other.meta_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!entries_[i].tensor.bitwise_equal(other.entries_[i].tensor)) return false;
  }
  return true;
}

namespace {

std::size_t align_up(std::size_t n) { return (n + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment; }

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }
  void pad_to(std::size_t size) { bytes_.resize(std::max(bytes_.size(), size), 0); }
  std::size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) fail(ErrorCode::truncated, "unexpected end of container header");
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string meta_to_json(const Meta& meta) {
  json j = json::object();
  for (const auto& [k, v] : meta) j[k] = v;
  try {
    return j.dump();
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("metadata is not valid UTF-8: ") + e.what());
  }
}

struct EntryHeader {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(const Container& container) {
  std::vector<std::size_t> offsets;
  std::size_t payload_length = 0;
  for (const auto& e : container.entries()) {
    for (float v : e.tensor.values) {
      if (!std::isfinite(v)) fail(ErrorCode::non_finite, "tensor '" + e.name + "' contains a non-finite value");
    }
    payload_length = align_up(payload_length);
    offsets.push_back(payload_length);
    payload_length += e.tensor.values.size() * sizeof(float);
  }
  const std::string meta = meta_to_json(container.meta());

  ByteWriter w;
  w.raw("DITF");
  w.u16(kContainerVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(container.entries().size()));
  for (std::size_t i = 0; i < container.entries().size(); ++i) {
    const auto& e = container.entries()[i];
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name);
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(e.tensor.shape.size()));
    w.u16(0);
    for (auto d : e.tensor.shape) w.u64(d);
    w.u64(offsets[i]);
    w.u64(e.tensor.values.size() * sizeof(float));
  }
  const std::size_t payload_offset = align_up(w.size() + 16);
  w.u64(payload_offset);
  w.u64(payload_length);
  w.pad_to(payload_offset);
  for (std::size_t i = 0; i < container.entries().size(); ++i) {
    w.pad_to(payload_offset + offsets[i]);
    for (float v : container.entries()[i].tensor.values) w.f32(v);
  }
  w.pad_to(payload_offset + payload_length);
  w.u64(meta.size());
  w.raw(meta);
  return w.take();
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "DITF", 4) != 0) {
    fail(ErrorCode::bad_magic, "bad magic: not a DITF container");
  }
  ByteReader r(bytes.subspan(4));
  const auto version = r.u16();
  if (version != kContainerVersion) {
    fail(ErrorCode::unsupported_version, "unsupported container version " + std::to_string(version));
  }
  if (r.u16() != 0) fail(ErrorCode::malformed, "nonzero container flags");
  const auto count = r.u32();

  std::vector<EntryHeader> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    EntryHeader h;
    const auto name_length = r.u32();
    h.name = r.str(name_length);
    if (h.name.empty()) fail(ErrorCode::malformed, "empty tensor name");
    const auto dtype = r.u8();
    if (dtype != kDtypeF32) fail(ErrorCode::unsupported_dtype, "unsupported dtype code " + std::to_string(dtype));
    const auto ndim = r.u8();
    if (ndim > kMaxDims) fail(ErrorCode::malformed, "tensor '" + h.name + "' has too many dims");
    if (r.u16() != 0) fail(ErrorCode::malformed, "nonzero reserved field");
    std::uint64_t elements = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const auto dim = r.u64();
      if (dim != 0 && elements > UINT64_MAX / 4 / dim) fail(ErrorCode::malformed, "tensor shape overflows");
      elements *= dim;
      h.shape.push_back(dim);
    }
    h.offset = r.u64();
    h.length = r.u64();
    if (h.length != elements * sizeof(float)) {
      fail(ErrorCode::malformed, "tensor '" + h.name + "' length disagrees with its shape");
    }
    if (h.offset % kPayloadAlignment != 0) fail(ErrorCode::malformed, "misaligned tensor offset");
    headers.push_back(std::move(h));
  }
  const auto payload_offset = r.u64();
  const auto payload_length = r.u64();
  const std::size_t header_end = 4 + r.pos();
  if (payload_offset < header_end || payload_offset % kPayloadAlignment != 0) {
    fail(ErrorCode::malformed, "bad payload offset");
  }
  if (payload_offset > bytes.size() || payload_length > bytes.size() - payload_offset ||
      bytes.size() - payload_offset - payload_length < 8) {
    fail(ErrorCode::truncated, "truncated payload");
  }
  const std::size_t meta_pos = payload_offset + payload_length;
  ByteReader meta_reader(bytes.subspan(meta_pos));
  const auto meta_length = meta_reader.u64();
  if (meta_length > bytes.size() - meta_pos - 8) fail(ErrorCode::truncated, "truncated metadata");
  if (meta_length != bytes.size() - meta_pos - 8) fail(ErrorCode::malformed, "trailing bytes after metadata");

  // Entries must lie inside the payload without overlapping.
  std::vector<const EntryHeader*> by_offset;
  for (const auto& h : headers) {
    if (h.offset > payload_length || h.length > payload_length - h.offset) {
      fail(ErrorCode::malformed, "tensor '" + h.name + "' lies outside the payload");
    }
    by_offset.push_back(&h);
  }
  std::sort(by_offset.begin(), by_offset.end(),
            [](const EntryHeader* a, const EntryHeader* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    if (by_offset[i - 1]->offset + by_offset[i - 1]->length > by_offset[i]->offset) {
      fail(ErrorCode::malformed, "tensors '" + by_offset[i - 1]->name + "' and '" + by_offset[i]->name + "' overlap");
    }
  }

  Container container;
  for (const auto& h : headers) {
    if (container.contains(h.name)) fail(ErrorCode::duplicate_name, "duplicate tensor name '" + h.name + "'");
    Tensor t;
    t.shape = h.shape;
    t.values.resize(h.length / sizeof(float));
    const std::uint8_t* src = bytes.data() + payload_offset + h.offset;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(src[4 * i]) |
                                 static_cast<std::uint32_t>(src[4 * i + 1]) << 8 |
                                 static_cast<std::uint32_t>(src[4 * i + 2]) << 16 |
                                 static_cast<std::uint32_t>(src[4 * i + 3]) << 24;
      t.values[i] = std::bit_cast<float>(bits);
      if (!std::isfinite(t.values[i])) {
        fail(ErrorCode::non_finite, "tensor '" + h.name + "' holds a non-finite value at index " + std::to_string(i));
      }
    }
    container.add(h.name, std::move(t));
  }

  const auto* meta_begin = reinterpret_cast<const char*>(bytes.data() + meta_pos + 8);
  json meta;
  try {
    meta = json::parse(meta_begin, meta_begin + meta_length);
  } catch (const json::exception& e) {
    fail(ErrorCode::malformed, std::string("metadata is not valid JSON: ") + e.what());
  }
  if (!meta.is_object()) fail(ErrorCode::malformed, "metadata must be a JSON object");
  for (const auto& [k, v] : meta.items()) {
    if (!v.is_string()) fail(ErrorCode::malformed, "metadata value for '" + k + "' is not a string");
    container.meta()[k] = v.get<std::string>();
  }
  return container;
}

void write_container(const Container& container, const std::filesystem::path& path) {
  const auto bytes = encode_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::io, "failed reading '" + path.string() + "'");
  return decode_container(bytes);
}

// ---------------------------------------------------------------------------
// Typed views

namespace {

std::optional<std::string> lookup(const Container& c, const std::string& entry, const std::string& key) {
  if (auto it = c.meta().find(entry + "." + key); it != c.meta().end()) return it->second;
  if (auto it = c.meta().find(key); it != c.meta().end()) return it->second;
  return std::nullopt;
}

std::size_t parse_size(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    fail(ErrorCode::malformed, "metadata '" + key + "' is not an unsigned integer: '" + text + "'");
  }
}

int parse_int(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::malformed, "metadata '" + key + "' is not an integer: '" + text + "'");
  }
}

const std::set<std::string>& layout_keys() {
  static const std::set<std::string> keys = {"grid_h", "grid_w", "image_h", "image_w", "stage"};
  return keys;
}

}  // namespace

void put_feature(Container& container, const std::string& entry, const FeatureMap& feature) {
  container.add(entry, {feature.tokens(), feature.channels()},
                std::vector<float>(feature.data().begin(), feature.data().end()));
  auto& meta = container.meta();
  const std::string p = entry + ".";
  meta[p + "grid_h"] = std::to_string(feature.grid().height);
  meta[p + "grid_w"] = std::to_string(feature.grid().width);
  meta[p + "image_h"] = std::to_string(feature.image_size().height);
  meta[p + "image_w"] = std::to_string(feature.image_size().width);
  if (feature.stage()) meta[p + "stage"] = std::string(stage_name(*feature.stage()));
  for (const auto& [k, v] : feature.meta()) meta[p + k] = v;
}

FeatureMap get_feature(const Container& container, const std::string& entry) {
  const Tensor& t = container.get(entry);
  if (t.shape.size() != 2) fail(ErrorCode::shape_mismatch, "entry '" + entry + "' is not a T x C matrix");
  const auto tokens = static_cast<std::size_t>(t.shape[0]);
  const auto channels = static_cast<std::size_t>(t.shape[1]);

  Grid grid;
  const auto gh = lookup(container, entry, "grid_h");
  const auto gw = lookup(container, entry, "grid_w");
  if (gh && gw) {
    grid = {parse_size(*gh, "grid_h"), parse_size(*gw, "grid_w")};
  } else {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    if (side * side != tokens) fail(ErrorCode::malformed, "entry '" + entry + "' has no grid metadata");
    grid = {side, side};
  }
  ImageSize image{960, 960};
  const auto ih = lookup(container, entry, "image_h");
  const auto iw = lookup(container, entry, "image_w");
  if (ih && iw) image = {parse_size(*ih, "image_h"), parse_size(*iw, "image_w")};

  std::optional<Stage> stage;
  if (const auto s = lookup(container, entry, "stage")) {
    stage = parse_stage(*s);
    if (!stage) fail(ErrorCode::malformed, "unknown stage tag '" + *s + "'");
  }

  Meta meta;
  const std::string prefix = entry + ".";
  for (const auto& [k, v] : container.meta()) {
    if (k.find('.') == std::string::npos && !layout_keys().count(k)) meta[k] = v;
  }
  for (const auto& [k, v] : container.meta()) {
    if (k.rfind(prefix, 0) == 0) {
      const std::string key = k.substr(prefix.size());
      if (!layout_keys().count(key)) meta[key] = v;
    }
  }
  FeatureMap feature(t.values, tokens, channels, grid, image, stage, std::move(meta));
  if (!feature.all_finite()) fail(ErrorCode::non_finite, "entry '" + entry + "' contains a non-finite value");
  return feature;
}

void put_params(Container& container, const ModulationParams& params) {
  const std::uint64_t c = params.gamma.size();
  container.add("gamma", {c}, params.gamma);
  container.add("beta", {c}, params.beta);
  if (params.alpha) container.add("alpha", {c}, *params.alpha);
  container.meta()["timestep"] = std::to_string(params.timestep);
  container.meta()["block_index"] = std::to_string(params.block_index);
  container.meta()["group"] = std::to_string(params.group);
}

ModulationParams get_params(const Container& container) {
  ModulationParams p;
  auto vec = [&](const char* name) {
    const Tensor& t = container.get(name);
    if (t.shape.size() != 1) fail(ErrorCode::shape_mismatch, std::string("entry '") + name + "' must be 1-D");
    return t.values;
  };
  p.gamma = vec("gamma");
  p.beta = vec("beta");
  if (container.contains("alpha")) p.alpha = vec("alpha");
  const auto& meta = container.meta();
  if (auto it = meta.find("timestep"); it != meta.end()) p.timestep = parse_int(it->second, "timestep");
  if (auto it = meta.find("block_index"); it != meta.end()) p.block_index = parse_int(it->second, "block_index");
  if (auto it = meta.find("group"); it != meta.end()) p.group = parse_int(it->second, "group");
  p.validate(p.gamma.size());
  return p;
}

// ---------------------------------------------------------------------------
// Keypoint fixtures

namespace {

KeypointSet keypoints_from(const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "keypoint set must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k != "points" && k != "bbox" && k != "image_size") {
      fail(ErrorCode::invalid_argument, "unknown keypoint field '" + k + "'");
    }
  }
  KeypointSet set;
  try {
    const auto& size = j.at("image_size");
    if (!size.is_array() || size.size() != 2) throw std::invalid_argument("image_size");
    set.image_size = {size[0].get<std::size_t>(), size[1].get<std::size_t>()};
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) throw std::invalid_argument("points");
      set.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (j.contains("bbox") && !j["bbox"].is_null()) {
      const auto& b = j["bbox"];
      if (!b.is_array() || b.size() != 4) throw std::invalid_argument("bbox");
      set.bbox = BBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    }
  } catch (const std::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed keypoint set: ") + e.what());
  }
  set.validate();
  return set;
}

json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

KeypointSet parse_keypoints_json(const std::string& text) { return keypoints_from(parse_json_text(text)); }

std::vector<KeypointSet> parse_keypoint_list_json(const std::string& text) {
  const json j = parse_json_text(text);
  std::vector<KeypointSet> out;
  if (j.is_array()) {
    for (const auto& item : j) out.push_back(keypoints_from(item));
  } else {
    out.push_back(keypoints_from(j));
  }
  return out;
}

std::string keypoints_to_json(const KeypointSet& keypoints) {
  json j;
  j["points"] = json::array();
  for (const auto& p : keypoints.points) j["points"].push_back({p.x, p.y});
  if (keypoints.bbox) {
    j["bbox"] = {keypoints.bbox->x0, keypoints.bbox->y0, keypoints.bbox->width, keypoints.bbox->height};
  } else {
    j["bbox"] = nullptr;
  }
  j["image_size"] = {keypoints.image_size.height, keypoints.image_size.width};
  return j.dump();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) fail(ErrorCode::io, "failed writing '" + path.string() + "'");
}

}  // namespace ditf
