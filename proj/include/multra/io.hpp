#pragma once

// File formats.
//
// Image file: raw little-endian 32-bit float payload, row-major, stored at
// <path>; a flat "key = value" sidecar at <path>.hdr with keys
// {width, height, unit, dtype, layout}.
//
// Transform union file: flat "key = value" header lines {kind, K, dim, eta,
// seed, patch_side, stride}, a separator line "---", then K row-major
// little-endian 64-bit float dim x dim matrices concatenated in class order.
//
// Objective trace: comma-separated text "iteration,total,fidelity,regularizer"
// with values printed at full double precision.

#include "multra/types.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace multra::io {

// Flat structured-text document: one "key = value" pair per line, '#' starts
// a comment, insertion order preserved on write.
class KeyValueFile {
 public:
  void set(const std::string& key, const std::string& value) {
    if (index_.find(key) == index_.end()) {
      index_[key] = entries_.size();
      entries_.emplace_back(key, value);
    } else {
      entries_[index_[key]].second = value;
    }
  }
  void set(const std::string& key, double value) { set(key, format_double(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

  bool has(const std::string& key) const { return index_.count(key) != 0; }

  std::string get_string(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw usage_error("config: missing required key '" + key + "'");
    return entries_[it->second].second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const { return parse_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  int get_int(const std::string& key) const {
    const double v = get_double(key);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
      throw usage_error("config: key '" + key + "' is not an integer");
    return i;
  }
  int get_int(const std::string& key, int fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key);
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw usage_error("config: key '" + key + "' is not an unsigned integer");
    }
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  static KeyValueFile parse(std::istream& in) {
    KeyValueFile kv;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw usage_error("config: malformed line (expected key = value): " + line);
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open file: " + path);
    return parse(in);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write file: " + path);
    write(out);
    if (!out) throw io_error("failed writing file: " + path);
  }

  void write(std::ostream& out) const {
    for (const auto& [key, value] : entries_) out << key << " = " << value << "\n";
  }

  static std::string format_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  static double parse_double(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw usage_error("config: key '" + key + "' is not a number: " + s);
    }
    if (pos != s.size())
      throw usage_error("config: key '" + key + "' has trailing characters: " + s);
    return v;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::size_t> index_;
};

inline void write_image(const ImageGrid& img, const std::string& path) {
  img.validate();
  KeyValueFile hdr;
  hdr.set("width", img.width);
  hdr.set("height", img.height);
  hdr.set("unit", to_string(img.unit));
  hdr.set("dtype", std::string("f32"));
  hdr.set("layout", std::string("row-major"));
  hdr.save(path + ".hdr");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write image payload: " + path);
  std::vector<float> payload(img.values.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    payload[i] = static_cast<float>(img.values[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw io_error("failed writing image payload: " + path);
}

inline ImageGrid read_image(const std::string& path) {
  const KeyValueFile hdr = KeyValueFile::load(path + ".hdr");
  ImageGrid img;
  img.width = hdr.get_int("width");
  img.height = hdr.get_int("height");
  img.unit = pixel_unit_from_string(hdr.get_string("unit"));
  if (hdr.get_string("dtype") != "f32")
    throw io_error("image header: unsupported dtype in " + path + ".hdr");
  if (hdr.get_string("layout") != "row-major")
    throw io_error("image header: unsupported layout in " + path + ".hdr");
  if (img.width <= 0 || img.height <= 0)
    throw io_error("image header: non-positive dimensions in " + path + ".hdr");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open image payload: " + path);
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
    throw io_error("image payload truncated: " + path);
  img.values.assign(payload.begin(), payload.end());
  img.validate();
  return img;
}

// Training provenance carried in a transform union file header.
struct TransformUnionMeta {
  double eta = 0.0;
  std::uint64_t seed = 0;
  int patch_side = 0;
  int stride = 1;
};

inline void write_transform_union(const TransformUnion& u, const TransformUnionMeta& meta,
                                  const std::string& path) {
  u.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write model file: " + path);

  KeyValueFile hdr;
  hdr.set("kind", to_string(u.kind));
  hdr.set("K", u.size());
  hdr.set("dim", u.dim());
  hdr.set("eta", meta.eta);
  hdr.set("seed", meta.seed);
  hdr.set("patch_side", meta.patch_side);
  hdr.set("stride", meta.stride);
  hdr.write(out);
  out << "---\n";

  const int d = u.dim();
  std::vector<double> row_major(static_cast<std::size_t>(d) * d);
  for (const auto& t : u.transforms) {
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) row_major[static_cast<std::size_t>(r) * d + c] = t.matrix(r, c);
    out.write(reinterpret_cast<const char*>(row_major.data()),
              static_cast<std::streamsize>(row_major.size() * sizeof(double)));
  }
  if (!out) throw io_error("failed writing model file: " + path);
}

inline std::pair<TransformUnion, TransformUnionMeta> read_transform_union(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open model file: " + path);

  std::ostringstream header_text;
  std::string line;
  bool found_separator = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "---") {
      found_separator = true;
      break;
    }
    header_text << line << "\n";
  }
  if (!found_separator) throw io_error("model file: missing '---' separator: " + path);

  std::istringstream header_stream(header_text.str());
  const KeyValueFile hdr = KeyValueFile::parse(header_stream);

  TransformUnion u;
  u.kind = union_kind_from_string(hdr.get_string("kind"));
  const int K = hdr.get_int("K");
  const int d = hdr.get_int("dim");
  if (K <= 0 || d <= 0) throw io_error("model file: invalid K or dim: " + path);

  TransformUnionMeta meta;
  meta.eta = hdr.get_double("eta");
  meta.seed = hdr.get_uint64("seed", 0);
  meta.patch_side = hdr.get_int("patch_side");
  meta.stride = hdr.get_int("stride");

  std::vector<double> row_major(static_cast<std::size_t>(d) * d);
  for (int k = 0; k < K; ++k) {
    in.read(reinterpret_cast<char*>(row_major.data()),
            static_cast<std::streamsize>(row_major.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != row_major.size() * sizeof(double))
      throw io_error("model file truncated: " + path);
    UnitaryTransform t;
    t.matrix.resize(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) t.matrix(r, c) = row_major[static_cast<std::size_t>(r) * d + c];
    u.transforms.push_back(std::move(t));
  }
  u.validate();
  return {std::move(u), meta};
}

inline void write_multra_model(const MultraModel& model, const TransformUnionMeta& common_meta,
                               const TransformUnionMeta& cross_meta,
                               const std::string& prefix) {
  model.validate();
  TransformUnionMeta cm = common_meta;
  TransformUnionMeta xm = cross_meta;
  cm.patch_side = xm.patch_side = model.patch.side;
  cm.stride = xm.stride = model.patch.stride;
  write_transform_union(model.common, cm, prefix + ".common.tfm");
  write_transform_union(model.cross, xm, prefix + ".cross.tfm");
}

inline MultraModel read_multra_model(const std::string& common_path,
                                     const std::string& cross_path) {
  auto [common, common_meta] = read_transform_union(common_path);
  auto [cross, cross_meta] = read_transform_union(cross_path);
  if (common_meta.patch_side != cross_meta.patch_side ||
      common_meta.stride != cross_meta.stride)
    throw io_error("model files disagree on patch geometry");
  MultraModel model{std::move(common), std::move(cross),
                    PatchConfig{common_meta.patch_side, common_meta.stride}};
  model.validate();
  return model;
}

inline void write_trace(const ObjectiveTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write trace file: " + path);
  out << "iteration,total,fidelity,regularizer\n";
  for (std::size_t i = 0; i < trace.entries.size(); ++i) {
    const auto& e = trace.entries[i];
    out << i << ',' << KeyValueFile::format_double(e.total) << ','
        << KeyValueFile::format_double(e.fidelity) << ','
        << KeyValueFile::format_double(e.regularizer) << "\n";
  }
  if (!out) throw io_error("failed writing trace file: " + path);
}

inline ObjectiveTrace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open trace file: " + path);
  ObjectiveTrace trace;
  std::string line;
  if (!std::getline(in, line)) throw io_error("trace file empty: " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    ObjectiveTrace::Entry e;
    std::getline(row, field, ',');  // iteration index, implied by position
    std::getline(row, field, ',');
    e.total = std::stod(field);
    std::getline(row, field, ',');
    e.fidelity = std::stod(field);
    std::getline(row, field, ',');
    e.regularizer = std::stod(field);
    trace.entries.push_back(e);
  }
  return trace;
}

}  // namespace multra::io
