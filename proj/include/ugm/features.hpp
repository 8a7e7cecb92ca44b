#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/error.hpp"

namespace ugm {

/// Per band: subtract the mean and divide by the population (1/N) standard
/// deviation. Constant bands become all-zero.
inline HsiCube standardize(const HsiCube& cube) {
  HsiCube out = cube;
  const std::size_t n = cube.pixels();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < cube.bands; ++b) {
    double mean = 0.0;
    for (std::size_t p = 0; p < n; ++p) mean += cube.values[p * cube.bands + b];
    mean *= inv_n;
    double var = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double d = cube.values[p * cube.bands + b] - mean;
      var += d * d;
    }
    var *= inv_n;
    const double sd = std::sqrt(var);
    // Relative cutoff: a band that is constant up to rounding has no signal.
    const bool constant = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
    for (std::size_t p = 0; p < n; ++p) {
      double& v = out.values[p * cube.bands + b];
      v = constant ? 0.0 : (cube.values[p * cube.bands + b] - mean) / sd;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaResult {
  FeatureCube scores;                 // H x W x retained
  std::vector<double> eigenvalues;    // all, descending, population covariance
  Eigen::MatrixXd components;         // B x retained, unit columns
  double total_variance = 0.0;        // trace of the covariance
};

/// Principal components of the standardized cube. Retains the smallest
/// leading set whose eigenvalue sum reaches `variance_fraction` of the trace;
/// eigenvalues below 1e-12 * trace are never retained. Each component's
/// largest-magnitude loading is made positive.
inline PcaResult pca_decompose(const HsiCube& cube, double variance_fraction) {
  if (!(variance_fraction > 0.0 && variance_fraction <= 1.0))
    throw DataError("variance fraction must lie in (0, 1]");
  const HsiCube z = standardize(cube);
  const std::size_t n = z.pixels(), B = z.bands;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
      z.values.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(B));
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigen returns ascending order.
  const Eigen::VectorXd evals = solver.eigenvalues().reverse();
  const Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();

  PcaResult r;
  r.total_variance = cov.trace();
  r.eigenvalues.assign(evals.data(), evals.data() + evals.size());
  const double floor = 1e-12 * r.total_variance;
  std::size_t keep = 0;
  double acc = 0.0;
  const double target = variance_fraction * r.total_variance * (1.0 - 1e-12);
  while (keep < B && evals[static_cast<Eigen::Index>(keep)] > floor) {
    acc += evals[static_cast<Eigen::Index>(keep)];
    ++keep;
    if (acc >= target) break;
  }
  if (keep == 0) keep = 1;  // all-constant input: one all-zero score image

  r.components = evecs.leftCols(static_cast<Eigen::Index>(keep));
  for (Eigen::Index k = 0; k < r.components.cols(); ++k) {
    Eigen::Index imax = 0;
    r.components.col(k).cwiseAbs().maxCoeff(&imax);
    if (r.components(imax, k) < 0) r.components.col(k) *= -1.0;
  }
  r.scores = FeatureCube(z.height, z.width, keep);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> S(
      r.scores.values.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(keep));
  S.noalias() = X * r.components;
  return r;
}

inline FeatureCube pca(const HsiCube& cube, double variance_fraction) {
  return pca_decompose(cube, variance_fraction).scores;
}

// ---------------------------------------------------------------------------
// grayscale morphology with disk structuring elements
// ---------------------------------------------------------------------------

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return values[r * width + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Row half-widths of the disk {(dx, dy) : dx^2 + dy^2 <= radius^2}; entry k
/// is the half-width of row dy = k - reach.
inline std::vector<int> disk_half_widths(double radius) {
  if (!(radius >= 0.0)) throw DataError("structuring element radius must be >= 0");
  const double r2 = radius * radius;
  const int reach = static_cast<int>(std::floor(radius + 1e-9));
  std::vector<int> half(static_cast<std::size_t>(2 * reach + 1));
  for (int dy = -reach; dy <= reach; ++dy) {
    int w = 0;
    while (static_cast<double>((w + 1) * (w + 1) + dy * dy) <= r2 + 1e-9) ++w;
    half[static_cast<std::size_t>(dy + reach)] = w;
  }
  return half;
}

namespace detail {

/// Sliding min/max of half-width w along each row with replicate padding
/// (van Herk / Gil-Werman, O(1) per sample).
template <typename Op>
void row_filter(const Image& in, int w, Op op, std::vector<double>& out) {
  out.resize(in.values.size());
  const auto W = static_cast<int>(in.width);
  if (w == 0) {
    out = in.values;
    return;
  }
  const int k = 2 * w + 1;
  const int L = W + 2 * w;
  const int padded_len = ((L + k - 1) / k) * k;
  std::vector<double> pad(static_cast<std::size_t>(padded_len)), g(pad.size()), h(pad.size());
  for (std::size_t r = 0; r < in.height; ++r) {
    const double* row = in.values.data() + r * in.width;
    for (int i = 0; i < padded_len; ++i) pad[static_cast<std::size_t>(i)] = row[std::clamp(i - w, 0, W - 1)];
    for (int b = 0; b < padded_len; b += k) {
      g[static_cast<std::size_t>(b)] = pad[static_cast<std::size_t>(b)];
      for (int i = b + 1; i < b + k; ++i)
        g[static_cast<std::size_t>(i)] = op(g[static_cast<std::size_t>(i - 1)], pad[static_cast<std::size_t>(i)]);
      h[static_cast<std::size_t>(b + k - 1)] = pad[static_cast<std::size_t>(b + k - 1)];
      for (int i = b + k - 2; i >= b; --i)
        h[static_cast<std::size_t>(i)] = op(h[static_cast<std::size_t>(i + 1)], pad[static_cast<std::size_t>(i)]);
    }
    double* dst = out.data() + r * in.width;
    for (int x = 0; x < W; ++x)
      dst[x] = op(h[static_cast<std::size_t>(x)], g[static_cast<std::size_t>(x + k - 1)]);
  }
}

template <typename Op>
Image disk_filter(const Image& in, double radius, Op op) {
  const auto half = disk_half_widths(radius);
  const int reach = static_cast<int>(half.size() / 2);
  const int max_w = *std::max_element(half.begin(), half.end());
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(max_w + 1));
  std::vector<bool> needed(rows.size(), false);
  for (int w : half) needed[static_cast<std::size_t>(w)] = true;
  for (std::size_t w = 0; w < rows.size(); ++w)
    if (needed[w]) row_filter(in, static_cast<int>(w), op, rows[w]);

  Image out(in.height, in.width);
  const auto H = static_cast<int>(in.height);
  for (int y = 0; y < H; ++y) {
    double* dst = out.values.data() + static_cast<std::size_t>(y) * in.width;
    for (int dy = -reach; dy <= reach; ++dy) {
      const auto& src = rows[static_cast<std::size_t>(half[static_cast<std::size_t>(dy + reach)])];
      const double* s = src.data() + static_cast<std::size_t>(std::clamp(y + dy, 0, H - 1)) * in.width;
      if (dy == -reach)
        std::copy(s, s + in.width, dst);
      else
        for (std::size_t x = 0; x < in.width; ++x) dst[x] = op(dst[x], s[x]);
    }
  }
  return out;
}

}  // namespace detail

inline Image erode(const Image& img, double radius) {
  return detail::disk_filter(img, radius, [](double a, double b) { return std::min(a, b); });
}

inline Image dilate(const Image& img, double radius) {
  return detail::disk_filter(img, radius, [](double a, double b) { return std::max(a, b); });
}

/// Erosion followed by dilation; anti-extensive and idempotent.
inline Image morph_open(const Image& img, double radius) { return dilate(erode(img, radius), radius); }

/// Dilation followed by erosion; extensive and idempotent.
inline Image morph_close(const Image& img, double radius) { return erode(dilate(img, radius), radius); }

// ---------------------------------------------------------------------------
// extended morphological profile
// ---------------------------------------------------------------------------

struct EmpParams {
  double variance_fraction = 0.99;
  int n_levels = 2;        // openings and closings per component
  int size_step = 2;       // diameter increment in pixels
  double base_diameter = 2.0;

  friend bool operator==(const EmpParams&, const EmpParams&) = default;
  friend auto operator<=>(const EmpParams&, const EmpParams&) = default;
};

inline std::size_t emp_dims(std::size_t n_components, int n_levels) {
  return n_components * static_cast<std::size_t>(2 * n_levels + 1);
}

/// For each retained principal component p the profile is
/// [p, open(p, d_1..d_k), close(p, d_1..d_k)] with d_j = base + (j-1) * step.
inline FeatureCube emp(const HsiCube& cube, const EmpParams& params) {
  if (params.n_levels < 0 || params.size_step < 0 || !(params.base_diameter > 0.0))
    throw DataError("invalid EMP parameters");
  const FeatureCube scores = pca(cube, params.variance_fraction);
  const std::size_t npc = scores.bands;
  const auto k = static_cast<std::size_t>(params.n_levels);
  FeatureCube out(cube.height, cube.width, emp_dims(npc, params.n_levels));
  for (std::size_t c = 0; c < npc; ++c) {
    Image pc(cube.height, cube.width);
    pc.values = scores.band(c);
    const std::size_t base = c * (2 * k + 1);
    out.set_band(base, pc.values);
    for (std::size_t j = 0; j < k; ++j) {
      const double radius = 0.5 * (params.base_diameter + static_cast<double>(j) * params.size_step);
      out.set_band(base + 1 + j, morph_open(pc, radius).values);
      out.set_band(base + 1 + k + j, morph_close(pc, radius).values);
    }
  }
  return out;
}

}  // namespace ugm
