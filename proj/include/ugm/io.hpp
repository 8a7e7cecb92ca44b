#pragma once

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/error.hpp"

namespace ugm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// key=value text headers
// ---------------------------------------------------------------------------

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

/// Ordered key=value pairs. Blank lines and lines starting with '#' are skipped.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in, const std::string& origin) {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    return parse(in, path.string());
  }

  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& e : entries_)
      if (e.first == key) {
        e.second = value;
        return;
      }
    entries_.emplace_back(key, value);
  }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void set(const std::string& key, T value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    set(key, os.str());
  }

  bool has(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return true;
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return e.second;
    throw FormatError("missing key '" + key + "'");
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  std::size_t get_size(const std::string& key) const { return parse_size(get(key), key); }
  double get_double(const std::string& key) const { return parse_double(get(key), key); }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  static std::size_t parse_size(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw FormatError("'" + what + "' is not a non-negative integer: " + s);
    return v;
  }
  static long long parse_int(const std::string& s, const std::string& what) {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw FormatError("'" + what + "' is not an integer: " + s);
    return v;
  }
  static double parse_double(const std::string& s, const std::string& what) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw FormatError("'" + what + "' is not a number: " + s);
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// ---------------------------------------------------------------------------
// little-endian raw blocks
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T byteswap_value(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected_count) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw FormatError("cannot open raw file " + path.string());
  if (size != expected_count * sizeof(T))
    throw FormatError("raw file " + path.string() + " has " + std::to_string(size) +
                      " bytes, expected " + std::to_string(expected_count * sizeof(T)));
  std::vector<T> out(expected_count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("short read on " + path.string());
  if constexpr (std::endian::native == std::endian::big)
    for (auto& v : out) v = detail::byteswap_value(v);
  return out;
}

template <typename T>
void write_raw(const fs::path& path, std::span<const T> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (T v : data) {
      v = detail::byteswap_value(v);
      out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
  } else {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(T)));
  }
}

/// Data file written next to a header: "scene.hdr" -> "scene.raw".
inline fs::path sidecar_path(const fs::path& header, const std::string& ext = ".raw") {
  fs::path p = header;
  p.replace_extension(ext);
  return p;
}

// ---------------------------------------------------------------------------
// cubes: header (height, width, bands, dtype=f32, interleave=bsq, data) + raw
// ---------------------------------------------------------------------------

struct CubeHeader {
  std::size_t height = 0, width = 0, bands = 0;
  std::string kind = "cube";
  std::string dtype = "f32";
  fs::path data;  // resolved against the header's directory
  KeyValues raw;
};

inline CubeHeader read_cube_header(const fs::path& header_path) {
  CubeHeader h;
  h.raw = KeyValues::load(header_path);
  h.height = h.raw.get_size("height");
  h.width = h.raw.get_size("width");
  h.bands = h.raw.get_size("bands");
  h.dtype = h.raw.get("dtype");
  h.kind = h.raw.get_or("kind", "cube");
  const std::string interleave = h.raw.get("interleave");
  if (interleave != "bsq")
    throw FormatError(header_path.string() + ": unsupported interleave '" + interleave + "'");
  if (h.height == 0 || h.width == 0 || h.bands == 0)
    throw FormatError(header_path.string() + ": dimensions must be positive");
  h.data = header_path.parent_path() / h.raw.get("data");
  return h;
}

namespace detail {

template <typename T>
void fill_from_bsq(HsiCube& cube, const fs::path& data) {
  const std::size_t n = cube.pixels();
  const auto raw = read_raw<T>(data, n * cube.bands);
  for (std::size_t b = 0; b < cube.bands; ++b)
    for (std::size_t p = 0; p < n; ++p) cube.values[p * cube.bands + b] = raw[b * n + p];
}

template <typename T>
void write_bsq(const HsiCube& cube, const fs::path& data) {
  const std::size_t n = cube.pixels();
  std::vector<T> raw(n * cube.bands);
  for (std::size_t b = 0; b < cube.bands; ++b)
    for (std::size_t p = 0; p < n; ++p) raw[b * n + p] = static_cast<T>(cube.values[p * cube.bands + b]);
  write_raw<T>(data, raw);
}

}  // namespace detail

/// Reads a header + little-endian band-sequential raw file. Cubes are f32;
/// derived fields may also be stored as f64.
inline HsiCube load_cube(const fs::path& header_path) {
  const CubeHeader h = read_cube_header(header_path);
  HsiCube cube(h.height, h.width, h.bands);
  if (h.dtype == "f32")
    detail::fill_from_bsq<float>(cube, h.data);
  else if (h.dtype == "f64")
    detail::fill_from_bsq<double>(cube, h.data);
  else
    throw FormatError(header_path.string() + ": expected dtype=f32 or f64, got " + h.dtype);
  cube.validate();
  return cube;
}

/// Writes `cube` as `header_path` plus a sidecar `.raw`. The header lists
/// kind, height, width, bands, dtype, interleave, data in that order.
inline void save_cube(const HsiCube& cube, const fs::path& header_path,
                      const std::string& kind = "cube", const std::string& dtype = "f32") {
  const fs::path data = sidecar_path(header_path);
  if (dtype == "f32")
    detail::write_bsq<float>(cube, data);
  else if (dtype == "f64")
    detail::write_bsq<double>(cube, data);
  else
    throw FormatError("unsupported dtype " + dtype);
  KeyValues kv;
  kv.set("kind", kind);
  kv.set("height", cube.height);
  kv.set("width", cube.width);
  kv.set("bands", cube.bands);
  kv.set("dtype", dtype);
  kv.set("interleave", std::string("bsq"));
  kv.set("data", data.filename().string());
  kv.save(header_path);
}

/// Probability and angle fields are written at full precision so that a
/// pipeline split across files reproduces the in-process result exactly.
template <typename Tag>
void save_field(const ClassField<Tag>& f, const fs::path& header_path, const std::string& kind) {
  HsiCube c(f.height, f.width, f.classes);
  c.values = f.values;
  save_cube(c, header_path, kind, "f64");
}

inline void save_proba(const ProbabilityField& p, const fs::path& header_path) { save_field(p, header_path, "proba"); }
inline void save_angles(const AngleField& a, const fs::path& header_path) { save_field(a, header_path, "angles"); }

// ---------------------------------------------------------------------------
// label maps: PGM (P5, 8 or 16 bit) or CSV rows "row,col,label"
// ---------------------------------------------------------------------------

namespace detail {

inline std::string next_pgm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

inline LabelMap load_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  if (next_pgm_token(in) != "P5") throw FormatError(path.string() + ": not a P5 PGM");
  const std::size_t w = KeyValues::parse_size(next_pgm_token(in), "pgm width");
  const std::size_t h = KeyValues::parse_size(next_pgm_token(in), "pgm height");
  const std::size_t maxval = KeyValues::parse_size(next_pgm_token(in), "pgm maxval");
  if (maxval == 0 || maxval > 65535) throw FormatError(path.string() + ": bad maxval");
  LabelMap m(h, w);
  const bool wide = maxval > 255;
  for (std::size_t i = 0; i < h * w; ++i) {
    unsigned char b[2] = {0, 0};
    in.read(reinterpret_cast<char*>(b), wide ? 2 : 1);
    if (!in) throw FormatError(path.string() + ": truncated pixel data");
    m.labels[i] = wide ? (std::int32_t{b[0]} << 8 | b[1]) : b[0];
  }
  return m;
}

inline LabelMap load_label_csv(const fs::path& path, std::size_t height, std::size_t width) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  struct Row {
    std::size_t r, c;
    long long label;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = split(t, ',');
    if (f.size() != 3) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected row,col,label");
    if (!f[0].empty() && !std::isdigit(static_cast<unsigned char>(f[0][0]))) continue;  // header
    rows.push_back({KeyValues::parse_size(f[0], "row"), KeyValues::parse_size(f[1], "col"),
                    KeyValues::parse_int(f[2], "label")});
  }
  if (height == 0 || width == 0) {
    for (const auto& r : rows) {
      height = std::max(height, r.r + 1);
      width = std::max(width, r.c + 1);
    }
  }
  LabelMap m(height, width);
  for (const auto& r : rows) {
    if (r.label < 0) throw FormatError(path.string() + ": negative label at (" + std::to_string(r.r) + "," + std::to_string(r.c) + ")");
    if (r.r >= height || r.c >= width) throw FormatError(path.string() + ": pixel outside the map");
    m(r.r, r.c) = static_cast<std::int32_t>(r.label);
  }
  return m;
}

}  // namespace detail

/// Loads a PGM (detected by its P5 magic) or a row,col,label CSV. For CSV
/// input the dimensions are taken from `height`/`width` when nonzero,
/// otherwise inferred from the largest coordinates.
inline LabelMap load_labels(const fs::path& path, std::size_t height = 0, std::size_t width = 0) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError("cannot open " + path.string());
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  probe.close();
  LabelMap m = (magic[0] == 'P' && magic[1] == '5') ? detail::load_pgm(path)
                                                     : detail::load_label_csv(path, height, width);
  if (height != 0 && width != 0 && (m.height != height || m.width != width))
    throw FormatError(path.string() + ": label map is " + std::to_string(m.height) + "x" +
                      std::to_string(m.width) + ", expected " + std::to_string(height) + "x" +
                      std::to_string(width));
  return m;
}

inline void save_labels_pgm(const LabelMap& m, const fs::path& path) {
  std::int32_t maxval = 1;
  for (auto l : m.labels) {
    if (l < 0 || l > 65535) throw FormatError("label out of PGM range");
    maxval = std::max(maxval, l);
  }
  const bool wide = maxval > 255;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << m.width << ' ' << m.height << '\n' << (wide ? 65535 : 255) << '\n';
  for (auto l : m.labels) {
    if (wide) out.put(static_cast<char>((l >> 8) & 0xff));
    out.put(static_cast<char>(l & 0xff));
  }
}

inline void save_labels_csv(const LabelMap& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "row,col,label\n";
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) out << r << ',' << c << ',' << m(r, c) << '\n';
}

/// Extension picks the format: ".csv" -> CSV, anything else -> PGM.
inline void save_labels(const LabelMap& m, const fs::path& path) {
  if (path.extension() == ".csv")
    save_labels_csv(m, path);
  else
    save_labels_pgm(m, path);
}

}  // namespace ugm
