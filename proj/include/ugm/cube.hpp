#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ugm/error.hpp"

namespace ugm {

/// H x W x B array of real samples. Storage is pixel-major
/// ((row * width + col) * bands + band); files use band-sequential order and
/// are transposed on load/save.
struct Cube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<double> values;

  Cube() = default;
  Cube(std::size_t h, std::size_t w, std::size_t b, double fill = 0.0)
      : height(h), width(w), bands(b), values(h * w * b, fill) {}

  std::size_t pixels() const { return height * width; }

  double& at(std::size_t row, std::size_t col, std::size_t band) {
    return values[(row * width + col) * bands + band];
  }
  double at(std::size_t row, std::size_t col, std::size_t band) const {
    return values[(row * width + col) * bands + band];
  }

  std::span<double> spectrum(std::size_t pixel) {
    return {values.data() + pixel * bands, bands};
  }
  std::span<const double> spectrum(std::size_t pixel) const {
    return {values.data() + pixel * bands, bands};
  }

  /// Extracts one band as a contiguous H*W image.
  std::vector<double> band(std::size_t b) const {
    std::vector<double> out(pixels());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = values[p * bands + b];
    return out;
  }

  void set_band(std::size_t b, std::span<const double> image) {
    for (std::size_t p = 0; p < pixels(); ++p) values[p * bands + b] = image[p];
  }

  /// Throws DataError naming the first non-finite sample.
  void validate() const {
    if (bands < 1 || pixels() < 1)
      throw FormatError("cube must have at least one pixel and one band");
    if (values.size() != pixels() * bands)
      throw FormatError("cube value count does not match its dimensions");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        const std::size_t p = i / bands;
        throw DataError("non-finite sample at row " + std::to_string(p / width) +
                        ", col " + std::to_string(p % width) + ", band " +
                        std::to_string(i % bands));
      }
    }
  }
};

using HsiCube = Cube;
using FeatureCube = Cube;

/// Per-pixel class labels; 0 is unlabeled, 1..M are material classes.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {}

  std::size_t pixels() const { return height * width; }
  std::int32_t& operator()(std::size_t row, std::size_t col) { return labels[row * width + col]; }
  std::int32_t operator()(std::size_t row, std::size_t col) const {
    return labels[row * width + col];
  }

  /// M, the largest label present.
  int classes() const {
    std::int32_t m = 0;
    for (auto l : labels) m = std::max(m, l);
    return m;
  }

  std::size_t labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](std::int32_t l) { return l > 0; }));
  }
};

/// H x W x M per-class values (probabilities or spectral angles).
template <typename Tag>
struct ClassField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<double> values;

  ClassField() = default;
  ClassField(std::size_t h, std::size_t w, std::size_t m, double fill = 0.0)
      : height(h), width(w), classes(m), values(h * w * m, fill) {}

  std::size_t pixels() const { return height * width; }
  double& operator()(std::size_t pixel, std::size_t c) { return values[pixel * classes + c]; }
  double operator()(std::size_t pixel, std::size_t c) const { return values[pixel * classes + c]; }
  std::span<double> row(std::size_t pixel) { return {values.data() + pixel * classes, classes}; }
  std::span<const double> row(std::size_t pixel) const {
    return {values.data() + pixel * classes, classes};
  }
};

struct ProbabilityTag {};
struct AngleTag {};

/// P(y_i = c | x_i); each row lies on the simplex.
using ProbabilityField = ClassField<ProbabilityTag>;
/// Minimum spectral angle (radians) from each pixel to each class's training spectra.
using AngleField = ClassField<AngleTag>;

/// Index of the largest entry; lowest index wins ties.
inline int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

/// Index of the smallest entry; lowest index wins ties.
inline int argmin(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace ugm
