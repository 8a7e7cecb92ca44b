#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/dataset.hpp"
#include "ugm/energy.hpp"
#include "ugm/error.hpp"
#include "ugm/io.hpp"
#include "ugm/optimize.hpp"

namespace ugm {

// ---------------------------------------------------------------------------
// multinomial logistic regression
// ---------------------------------------------------------------------------

struct LrModel {
  std::size_t classes = 0;
  std::size_t dims = 0;
  double lambda = 0.0;
  std::vector<double> weights;  // classes x (dims + 1), bias last
  std::size_t iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;

  double w(std::size_t c, std::size_t f) const { return weights[c * (dims + 1) + f]; }
};

/// Design data for logistic regression: n x F features and 0-based classes.
struct LrData {
  std::size_t dims = 0;
  std::vector<double> x;  // row-major n x dims
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

inline LrData gather(const FeatureCube& features, std::span<const Sample> samples) {
  LrData d;
  d.dims = features.bands;
  d.x.reserve(samples.size() * d.dims);
  for (const auto& s : samples) {
    if (s.pixel >= features.pixels()) throw DataError("sample pixel outside the feature cube");
    const auto v = features.spectrum(s.pixel);
    for (double f : v)
      if (!std::isfinite(f))
        throw DataError("non-finite feature at row " + std::to_string(s.pixel / features.width) + ", col " +
                        std::to_string(s.pixel % features.width));
    d.x.insert(d.x.end(), v.begin(), v.end());
    d.y.push_back(s.label - 1);
  }
  return d;
}

namespace detail {

/// Softmax of `s` in place with max subtraction.
inline void softmax(std::span<double> s) {
  double hi = s[0];
  for (double v : s) hi = std::max(hi, v);
  double z = 0.0;
  for (double& v : s) {
    v = std::exp(v - hi);
    z += v;
  }
  for (double& v : s) v /= z;
}

}  // namespace detail

/// Summed cross-entropy + (lambda / 2) ||W||^2 over non-bias weights. Writes
/// the gradient when `grad` is non-empty.
inline double lr_objective(std::span<const double> weights, const LrData& d, std::size_t classes, double lambda,
                           std::span<double> grad) {
  const std::size_t F = d.dims, M = classes, n = d.size();
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> W(weights.data(), static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(F + 1));
  Eigen::Map<const RowMat> X(d.x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(F));
  RowMat S = X * W.leftCols(static_cast<Eigen::Index>(F)).transpose();
  S.rowwise() += W.col(static_cast<Eigen::Index>(F)).transpose();

  double loss = 0.0;
  for (Eigen::Index r = 0; r < S.rows(); ++r) {
    const double hi = S.row(r).maxCoeff();
    const double lse = hi + std::log((S.row(r).array() - hi).exp().sum());
    loss += lse - S(r, d.y[static_cast<std::size_t>(r)]);
    S.row(r) = (S.row(r).array() - lse).exp();
    S(r, d.y[static_cast<std::size_t>(r)]) -= 1.0;
  }
  double penalty = 0.0;
  for (std::size_t c = 0; c < M; ++c)
    for (std::size_t f = 0; f < F; ++f) penalty += weights[c * (F + 1) + f] * weights[c * (F + 1) + f];
  loss += 0.5 * lambda * penalty;

  if (!grad.empty()) {
    Eigen::Map<RowMat> G(grad.data(), static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(F + 1));
    G.leftCols(static_cast<Eigen::Index>(F)).noalias() = S.transpose() * X;
    G.leftCols(static_cast<Eigen::Index>(F)) += lambda * W.leftCols(static_cast<Eigen::Index>(F));
    G.col(static_cast<Eigen::Index>(F)) = S.colwise().sum().transpose();
  }
  return loss;
}

/// Fits by full-batch gradient descent from zero weights. `classes` = 0 takes
/// the largest training label.
inline LrModel train_lr(const FeatureCube& features, std::span<const Sample> train, double lambda,
                        std::size_t classes = 0, const DescentOptions& opt = {}) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DataError("lambda must be finite and >= 0");
  if (train.empty()) throw DataError("no training samples");
  if (classes == 0)
    for (const auto& s : train) classes = std::max(classes, static_cast<std::size_t>(s.label));
  std::vector<std::size_t> count(classes, 0);
  for (const auto& s : train) {
    if (s.label < 1 || static_cast<std::size_t>(s.label) > classes) throw DataError("training label out of range");
    ++count[static_cast<std::size_t>(s.label - 1)];
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (count[c] == 0) throw DataError("class " + std::to_string(c + 1) + " has no training pixels");

  const LrData d = gather(features, train);
  LrModel model;
  model.classes = classes;
  model.dims = d.dims;
  model.lambda = lambda;
  auto f = [&](std::span<const double> w, std::span<double> g) { return lr_objective(w, d, classes, lambda, g); };
  auto r = gradient_descent(f, std::vector<double>(classes * (d.dims + 1), 0.0), opt);
  model.weights = std::move(r.x);
  model.iterations = r.iterations;
  model.grad_norm = r.grad_norm;
  model.converged = r.converged;
  return model;
}

inline LrModel train_lr(const FeatureCube& features, const SplitSet& split, double lambda, std::size_t classes = 0,
                        const DescentOptions& opt = {}) {
  return train_lr(features, std::span<const Sample>(split.train), lambda, classes, opt);
}

inline ProbabilityField predict_proba(const LrModel& model, const FeatureCube& features) {
  if (features.bands != model.dims)
    throw DataError("feature dimension " + std::to_string(features.bands) + " does not match the model's " +
                    std::to_string(model.dims));
  const std::size_t M = model.classes, F = model.dims;
  ProbabilityField p(features.height, features.width, M);
  for (std::size_t px = 0; px < features.pixels(); ++px) {
    const auto x = features.spectrum(px);
    auto row = p.row(px);
    for (std::size_t c = 0; c < M; ++c) {
      const double* w = model.weights.data() + c * (F + 1);
      double s = w[F];
      for (std::size_t f = 0; f < F; ++f) s += w[f] * x[f];
      row[c] = s;
    }
    detail::softmax(row);
  }
  return p;
}

inline void save_lr(const LrModel& m, const fs::path& header_path) {
  const fs::path data = sidecar_path(header_path, ".f64");
  write_raw<double>(data, m.weights);
  KeyValues kv;
  kv.set("kind", std::string("lr"));
  kv.set("classes", m.classes);
  kv.set("dims", m.dims);
  kv.set("lambda", m.lambda);
  kv.set("data", data.filename().string());
  kv.save(header_path);
}

inline LrModel load_lr(const fs::path& header_path) {
  const auto kv = KeyValues::load(header_path);
  if (kv.get_or("kind", "") != "lr") throw FormatError(header_path.string() + ": not a logistic regression model");
  LrModel m;
  m.classes = kv.get_size("classes");
  m.dims = kv.get_size("dims");
  m.lambda = kv.get_double("lambda");
  m.weights = read_raw<double>(header_path.parent_path() / kv.get("data"), m.classes * (m.dims + 1));
  for (double w : m.weights)
    if (!std::isfinite(w)) throw FormatError(header_path.string() + ": non-finite weight");
  return m;
}

// ---------------------------------------------------------------------------
// spectral angle mapper
// ---------------------------------------------------------------------------

inline double spectral_angle(std::span<const double> u, std::span<const double> v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    uv += u[k] * v[k];
    uu += u[k] * u[k];
    vv += v[k] * v[k];
  }
  return std::acos(std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0));
}

/// Per pixel and class, the smallest angle to that class's training spectra.
inline AngleField sam_angles(const FeatureCube& features, std::span<const Sample> train, std::size_t classes = 0) {
  if (train.empty()) throw DataError("no training samples");
  if (classes == 0)
    for (const auto& s : train) classes = std::max(classes, static_cast<std::size_t>(s.label));
  const std::size_t B = features.bands;
  auto check_norm = [&](std::size_t px) {
    double nn = 0.0;
    for (double v : features.spectrum(px)) nn += v * v;
    if (!(nn > 0.0))
      throw DataError("zero-norm spectrum at row " + std::to_string(px / features.width) + ", col " +
                      std::to_string(px % features.width));
    return std::sqrt(nn);
  };
  // unit training spectra grouped by class
  std::vector<std::vector<double>> units(classes);
  for (const auto& s : train) {
    if (s.label < 1 || static_cast<std::size_t>(s.label) > classes) throw DataError("training label out of range");
    if (s.pixel >= features.pixels()) throw DataError("sample pixel outside the feature cube");
    const double nn = check_norm(s.pixel);
    for (double v : features.spectrum(s.pixel)) units[static_cast<std::size_t>(s.label - 1)].push_back(v / nn);
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (units[c].empty()) throw DataError("class " + std::to_string(c + 1) + " has no training pixels");

  AngleField a(features.height, features.width, classes);
  for (std::size_t px = 0; px < features.pixels(); ++px) {
    const double nn = check_norm(px);
    const auto x = features.spectrum(px);
    for (std::size_t c = 0; c < classes; ++c) {
      double best = -1.0;
      const auto& u = units[c];
      for (std::size_t t = 0; t < u.size(); t += B) {
        double dot = 0.0;
        for (std::size_t k = 0; k < B; ++k) dot += u[t + k] * x[k];
        best = std::max(best, dot / nn);
      }
      a(px, c) = std::acos(std::clamp(best, -1.0, 1.0));
    }
  }
  return a;
}

inline AngleField sam_angles(const FeatureCube& features, const SplitSet& split, std::size_t classes = 0) {
  return sam_angles(features, std::span<const Sample>(split.train), classes);
}

// ---------------------------------------------------------------------------
// unary adapters
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityFloor = 1e-12;

/// E_i(c) = -ln(max(P_i(c), eps))
inline UnaryTable unary_from_proba(const ProbabilityField& p, double eps = kProbabilityFloor) {
  if (!(eps > 0.0)) throw DataError("probability floor must be positive");
  UnaryTable u(p.pixels(), p.classes);
  for (std::size_t k = 0; k < p.values.size(); ++k) u.values[k] = -std::log(std::max(p.values[k], eps));
  return u;
}

/// E_i(c) = A_i(c)
inline UnaryTable unary_from_angles(const AngleField& a) {
  UnaryTable u(a.pixels(), a.classes);
  u.values = a.values;
  return u;
}

/// f_i(c) = exp(-A_i(c)), an M-channel feature cube for CRF unary features.
inline FeatureCube exp_neg(const AngleField& a) {
  FeatureCube f(a.height, a.width, a.classes);
  for (std::size_t k = 0; k < a.values.size(); ++k) f.values[k] = std::exp(-a.values[k]);
  return f;
}

inline FeatureCube as_features(const ProbabilityField& p) {
  FeatureCube f(p.height, p.width, p.classes);
  f.values = p.values;
  return f;
}

/// Per-pixel argmax as a 1-based label map.
template <typename Tag>
LabelMap argmax_labels(const ClassField<Tag>& f) {
  LabelMap out(f.height, f.width);
  for (std::size_t px = 0; px < f.pixels(); ++px) out.labels[px] = argmax(f.row(px)) + 1;
  return out;
}

inline LabelMap argmin_labels(const AngleField& a) {
  LabelMap out(a.height, a.width);
  for (std::size_t px = 0; px < a.pixels(); ++px) out.labels[px] = argmin(a.row(px)) + 1;
  return out;
}

/// Checks every row is on the simplex; rows off by more than 1e-12 but
/// within 1e-6 of unit sum are renormalized.
inline void validate_proba(ProbabilityField& p, const std::string& where = "probability field") {
  for (std::size_t px = 0; px < p.pixels(); ++px) {
    auto row = p.row(px);
    double s = 0.0;
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0)
        throw DataError(where + ": invalid probability at row " + std::to_string(px / p.width) + ", col " +
                        std::to_string(px % p.width));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw DataError(where + ": probabilities at row " + std::to_string(px / p.width) + ", col " +
                      std::to_string(px % p.width) + " sum to " + std::to_string(s));
    if (std::abs(s - 1.0) > 1e-12)
      for (double& v : row) v /= s;
  }
}

inline ProbabilityField ingest_proba(const fs::path& header_path) {
  const HsiCube c = load_cube(header_path);
  ProbabilityField p(c.height, c.width, c.bands);
  p.values = c.values;
  validate_proba(p, header_path.string());
  return p;
}

}  // namespace ugm
