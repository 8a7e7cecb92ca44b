#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/error.hpp"
#include "ugm/io.hpp"
#include "ugm/superpixels.hpp"

namespace ugm {

using Rgb = std::array<std::uint8_t, 3>;

/// Class id -> color. Label 0 always renders black.
struct Palette {
  std::map<int, Rgb> colors;

  Rgb operator()(int label) const {
    if (label == 0) return {0, 0, 0};
    const auto it = colors.find(label);
    if (it == colors.end()) throw DataError("palette has no color for class " + std::to_string(label));
    return it->second;
  }
};

/// Throws when two classes share a color or a class uses black.
inline void validate(const Palette& p) {
  std::set<Rgb> seen;
  for (const auto& [cls, rgb] : p.colors) {
    if (cls < 1) throw FormatError("palette class ids start at 1");
    if (rgb == Rgb{0, 0, 0}) throw FormatError("palette class " + std::to_string(cls) + " uses black, reserved for 0");
    if (!seen.insert(rgb).second) throw FormatError("palette class " + std::to_string(cls) + " repeats a color");
  }
}

/// Evenly spaced hues with alternating brightness.
inline Palette default_palette(int classes) {
  Palette p;
  for (int c = 1; c <= classes; ++c) {
    const double h = std::fmod(static_cast<double>(c - 1) * 0.618033988749895, 1.0) * 6.0;
    const double v = (c % 2) ? 1.0 : 0.7;
    const double s = (c % 3) ? 0.9 : 0.55;
    const int sector = static_cast<int>(h);
    const double f = h - sector;
    const double a = v * (1 - s), b = v * (1 - s * f), d = v * (1 - s * (1 - f));
    double r = 0, g = 0, bl = 0;
    switch (sector % 6) {
      case 0: r = v, g = d, bl = a; break;
      case 1: r = b, g = v, bl = a; break;
      case 2: r = a, g = v, bl = d; break;
      case 3: r = a, g = b, bl = v; break;
      case 4: r = d, g = a, bl = v; break;
      default: r = v, g = a, bl = b; break;
    }
    auto q = [](double x) { return static_cast<std::uint8_t>(std::clamp(std::lround(x * 255.0), 1L, 255L)); };
    p.colors[c] = {q(r), q(g), q(bl)};
  }
  // hue collisions are possible for large class counts; nudge until distinct
  std::set<Rgb> seen;
  for (auto& [cls, rgb] : p.colors)
    while (!seen.insert(rgb).second) rgb[2] = static_cast<std::uint8_t>(rgb[2] == 255 ? 1 : rgb[2] + 1);
  return p;
}

/// CSV rows "class,r,g,b"; a non-numeric first row is a header.
inline Palette load_palette(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  Palette p;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = split(t, ',');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 4) throw FormatError(where + ": expected class,r,g,b");
    if (!std::isdigit(static_cast<unsigned char>(f[0][0]))) continue;
    const auto cls = KeyValues::parse_int(f[0], "class");
    Rgb rgb{};
    for (int k = 0; k < 3; ++k) {
      const auto v = KeyValues::parse_int(f[static_cast<std::size_t>(k + 1)], "color");
      if (v < 0 || v > 255) throw FormatError(where + ": color component out of 0..255");
      rgb[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(v);
    }
    if (p.colors.count(static_cast<int>(cls))) throw FormatError(where + ": class listed twice");
    p.colors[static_cast<int>(cls)] = rgb;
  }
  validate(p);
  return p;
}

inline void save_palette(const Palette& p, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "class,r,g,b\n";
  for (const auto& [cls, rgb] : p.colors) out << cls << ',' << int{rgb[0]} << ',' << int{rgb[1]} << ',' << int{rgb[2]} << '\n';
}

/// H x W RGB raster.
struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> data;  // row-major RGB triples

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), data(h * w * 3, 0) {}
  void set(std::size_t pixel, Rgb c) { std::copy(c.begin(), c.end(), data.begin() + static_cast<std::ptrdiff_t>(pixel * 3)); }
  Rgb get(std::size_t pixel) const { return {data[pixel * 3], data[pixel * 3 + 1], data[pixel * 3 + 2]}; }
};

inline RgbImage render(const LabelMap& m, const Palette& p) {
  RgbImage img(m.height, m.width);
  for (std::size_t q = 0; q < m.pixels(); ++q) img.set(q, p(m.labels[q]));
  return img;
}

/// Mean band intensity stretched to 0..255 in gray, with superpixel
/// boundaries (4-neighbour changes, marked on both sides) in `line`.
inline RgbImage render_boundaries(const HsiCube& cube, const SuperpixelSegmentation& seg, Rgb line = {255, 0, 0}) {
  if (cube.height != seg.height || cube.width != seg.width) throw DataError("segmentation and cube differ in size");
  std::vector<double> g(cube.pixels(), 0.0);
  for (std::size_t q = 0; q < g.size(); ++q) {
    for (double v : cube.spectrum(q)) g[q] += v;
    g[q] /= static_cast<double>(cube.bands);
  }
  const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
  const double range = *hi - *lo;
  RgbImage img(cube.height, cube.width);
  for (std::size_t q = 0; q < g.size(); ++q) {
    const auto v = static_cast<std::uint8_t>(range > 0 ? std::lround(255.0 * (g[q] - *lo) / range) : 128);
    img.set(q, {v, v, v});
  }
  const std::size_t H = seg.height, W = seg.width;
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t q = r * W + c;
      if ((c + 1 < W && seg.assignment[q] != seg.assignment[q + 1]) ||
          (r + 1 < H && seg.assignment[q] != seg.assignment[q + W]) ||
          (c > 0 && seg.assignment[q] != seg.assignment[q - 1]) ||
          (r > 0 && seg.assignment[q] != seg.assignment[q - W]))
        img.set(q, line);
    }
  return img;
}

inline void save_ppm(const RgbImage& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

inline RgbImage load_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  if (detail::next_pgm_token(in) != "P6") throw FormatError(path.string() + ": not a P6 PPM");
  const std::size_t w = KeyValues::parse_size(detail::next_pgm_token(in), "ppm width");
  const std::size_t h = KeyValues::parse_size(detail::next_pgm_token(in), "ppm height");
  if (detail::next_pgm_token(in) != "255") throw FormatError(path.string() + ": only maxval 255 is supported");
  RgbImage img(h, w);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!in) throw FormatError(path.string() + ": truncated pixel data");
  return img;
}

}  // namespace ugm
