#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/error.hpp"
#include "ugm/io.hpp"
#include "ugm/random.hpp"

namespace ugm {

/// One labeled pixel: raster index and class in 1..M.
struct Sample {
  std::size_t pixel = 0;
  int label = 0;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct SplitSet {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::uint64_t seed = 0;
  friend bool operator==(const SplitSet&, const SplitSet&) = default;
};

inline void require_labeled(const LabelMap& labels) {
  if (labels.labeled_count() == 0) throw DataError("no labeled pixels");
}

/// Raster-ordered pixel indices per class; entry c holds class c+1.
inline std::vector<std::vector<std::size_t>> pixels_by_class(const LabelMap& labels) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(labels.classes()));
  for (std::size_t p = 0; p < labels.pixels(); ++p)
    if (labels.labels[p] > 0) out[static_cast<std::size_t>(labels.labels[p] - 1)].push_back(p);
  return out;
}

/// Per class (ascending), shuffles that class's pixels with one shared Rng
/// and takes the first n_train as training and the next n_test as test pixels.
inline SplitSet sample_split(const LabelMap& labels, std::size_t n_train_per_class,
                             std::size_t n_test_per_class, std::uint64_t seed) {
  require_labeled(labels);
  auto by_class = pixels_by_class(labels);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < n_train_per_class + n_test_per_class)
      throw DataError("class " + std::to_string(c + 1) + " has " +
                      std::to_string(by_class[c].size()) + " labeled pixels, need " +
                      std::to_string(n_train_per_class + n_test_per_class));
  }
  Rng rng(seed);
  SplitSet split;
  split.seed = seed;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& px = by_class[c];
    rng.shuffle(px.begin(), px.end());
    const int label = static_cast<int>(c + 1);
    for (std::size_t k = 0; k < n_train_per_class; ++k) split.train.push_back({px[k], label});
    for (std::size_t k = 0; k < n_test_per_class; ++k)
      split.test.push_back({px[n_train_per_class + k], label});
  }
  return split;
}

/// Splits training samples into (fit, validation): per class, round(fraction
/// * n) samples (at least one when n >= 2) go to validation.
inline std::pair<std::vector<Sample>, std::vector<Sample>> holdout_split(
    std::span<const Sample> train, double validation_fraction, std::uint64_t seed) {
  int classes = 0;
  for (const auto& s : train) classes = std::max(classes, s.label);
  std::vector<std::vector<Sample>> by_class(static_cast<std::size_t>(classes));
  for (const auto& s : train) by_class[static_cast<std::size_t>(s.label - 1)].push_back(s);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Sample> fit, validation;
  for (auto& group : by_class) {
    rng.shuffle(group.begin(), group.end());
    std::size_t n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(group.size())));
    if (n_val == 0 && group.size() >= 2) n_val = 1;
    if (n_val >= group.size() && !group.empty()) n_val = group.size() - 1;
    for (std::size_t k = 0; k < group.size(); ++k) (k < n_val ? validation : fit).push_back(group[k]);
  }
  return {std::move(fit), std::move(validation)};
}

/// Removes classes with fewer than `min_pixels` labeled pixels and renumbers
/// the survivors 1..M' in their original order.
inline LabelMap drop_small_classes(const LabelMap& labels, std::size_t min_pixels) {
  const auto by_class = pixels_by_class(labels);
  std::vector<std::int32_t> remap(by_class.size() + 1, 0);
  std::int32_t next = 1;
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (by_class[c].size() >= min_pixels) remap[c + 1] = next++;
  LabelMap out = labels;
  for (auto& l : out.labels) l = remap[static_cast<std::size_t>(l)];
  return out;
}

// ---------------------------------------------------------------------------
// split files: CSV pixel_row,pixel_col,class,role
// ---------------------------------------------------------------------------

inline void save_split(const SplitSet& split, std::size_t width, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "# seed=" << split.seed << '\n' << "pixel_row,pixel_col,class,role\n";
  for (const auto& s : split.train) out << s.pixel / width << ',' << s.pixel % width << ',' << s.label << ",train\n";
  for (const auto& s : split.test) out << s.pixel / width << ',' << s.pixel % width << ',' << s.label << ",test\n";
}

inline SplitSet load_split(const fs::path& path, std::size_t height, std::size_t width) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  SplitSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto pos = t.find("seed=");
      if (pos != std::string::npos) out.seed = KeyValues::parse_size(trim(t.substr(pos + 5)), "seed");
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 4) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    if (f[0] == "pixel_row") continue;
    const std::size_t r = KeyValues::parse_size(f[0], "pixel_row");
    const std::size_t c = KeyValues::parse_size(f[1], "pixel_col");
    const long long label = KeyValues::parse_int(f[2], "class");
    if (r >= height || c >= width || label < 1)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": pixel or class out of range");
    const Sample s{r * width + c, static_cast<int>(label)};
    if (f[3] == "train")
      out.train.push_back(s);
    else if (f[3] == "test")
      out.test.push_back(s);
    else
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": role must be train or test");
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

/// A rectangular grid of class regions stretched over the image, one mean
/// spectrum per class, and i.i.d. Gaussian noise.
struct SceneSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::vector<int>> regions;     // R x C class ids in 1..M
  std::vector<std::vector<double>> means;    // M x B
  double sigma = 0.0;
};

struct Scene {
  HsiCube cube;
  LabelMap labels;
};

inline void validate(const SceneSpec& spec) {
  if (spec.height == 0 || spec.width == 0) throw DataError("scene must have positive size");
  if (spec.regions.empty() || spec.regions.front().empty()) throw DataError("scene needs a region grid");
  if (spec.means.empty() || spec.means.front().empty()) throw DataError("scene needs class means");
  if (!(spec.sigma >= 0.0)) throw DataError("noise sigma must be >= 0");
  const std::size_t cols = spec.regions.front().size();
  if (spec.regions.size() > spec.height || cols > spec.width)
    throw DataError("region grid finer than the image");
  for (const auto& row : spec.regions) {
    if (row.size() != cols) throw DataError("region grid rows differ in length");
    for (int c : row)
      if (c < 1 || static_cast<std::size_t>(c) > spec.means.size())
        throw DataError("region class " + std::to_string(c) + " has no mean spectrum");
  }
  for (const auto& m : spec.means)
    if (m.size() != spec.means.front().size()) throw DataError("class means differ in band count");
}

/// Region cell (i, j) covers rows [i*H/R, (i+1)*H/R) and cols [j*W/C, (j+1)*W/C).
/// Noise is drawn in raster order, band by band, from Rng(seed).
inline Scene synth_scene(const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  const std::size_t R = spec.regions.size(), C = spec.regions.front().size();
  const std::size_t B = spec.means.front().size();
  Scene s{HsiCube(spec.height, spec.width, B), LabelMap(spec.height, spec.width)};
  Rng rng(seed);
  for (std::size_t r = 0; r < spec.height; ++r) {
    const std::size_t ri = r * R / spec.height;
    for (std::size_t c = 0; c < spec.width; ++c) {
      const int cls = spec.regions[ri][c * C / spec.width];
      s.labels(r, c) = cls;
      const auto& mean = spec.means[static_cast<std::size_t>(cls - 1)];
      for (std::size_t b = 0; b < B; ++b)
        s.cube.at(r, c, b) = spec.sigma > 0.0 ? mean[b] + spec.sigma * rng.normal() : mean[b];
    }
  }
  return s;
}

/// Random block scene: `blocks` x `blocks` regions with classes drawn so that
/// every class appears, and class means drawn U(0, 1) per band.
inline SceneSpec random_block_scene(std::size_t size, std::size_t blocks, int classes,
                                    std::size_t bands, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  SceneSpec spec;
  spec.height = spec.width = size;
  std::vector<int> cells(blocks * blocks);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i % static_cast<std::size_t>(classes)) + 1;
  rng.shuffle(cells.begin(), cells.end());
  spec.regions.assign(blocks, std::vector<int>(blocks));
  for (std::size_t i = 0; i < blocks; ++i)
    for (std::size_t j = 0; j < blocks; ++j) spec.regions[i][j] = cells[i * blocks + j];
  spec.means.assign(static_cast<std::size_t>(classes), std::vector<double>(bands));
  for (auto& m : spec.means)
    for (auto& v : m) v = rng.uniform();
  spec.sigma = sigma;
  return spec;
}

}  // namespace ugm
