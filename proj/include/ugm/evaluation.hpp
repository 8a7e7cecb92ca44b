#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/dataset.hpp"
#include "ugm/error.hpp"
#include "ugm/features.hpp"
#include "ugm/io.hpp"

namespace ugm {

/// Rows are ground truth, columns predictions; class c is index c - 1.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t m) : classes(m), counts(m * m, 0) {}
  ConfusionMatrix(std::size_t m, std::initializer_list<std::uint64_t> rows) : classes(m), counts(rows) {
    if (counts.size() != m * m) throw DataError("confusion matrix needs M x M counts");
  }

  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
};

/// Counts (truth, prediction) over the test pixels only.
inline ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, std::span<const Sample> test,
                                 std::size_t classes = 0) {
  if (pred.height != truth.height || pred.width != truth.width) throw DataError("prediction and truth differ in size");
  std::size_t M = classes;
  if (M == 0) {
    M = static_cast<std::size_t>(std::max(truth.classes(), 1));
    for (const auto& s : test) M = std::max(M, static_cast<std::size_t>(std::max(pred.labels[s.pixel], 0)));
  }
  ConfusionMatrix cm(M);
  for (const auto& s : test) {
    if (s.pixel >= truth.pixels()) throw DataError("test pixel outside the image");
    const auto t = truth.labels[s.pixel], p = pred.labels[s.pixel];
    if (t < 1)
      throw DataError("test pixel at row " + std::to_string(s.pixel / truth.width) + ", col " +
                      std::to_string(s.pixel % truth.width) + " is unlabeled in the ground truth");
    if (p < 1 || static_cast<std::size_t>(p) > M || static_cast<std::size_t>(t) > M)
      throw DataError("predicted label out of range at pixel " + std::to_string(s.pixel));
    ++cm(static_cast<std::size_t>(t - 1), static_cast<std::size_t>(p - 1));
  }
  return cm;
}

inline ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, const SplitSet& split,
                                 std::size_t classes = 0) {
  return confusion(pred, truth, std::span<const Sample>(split.test), classes);
}

struct MetricReport {
  double overall_accuracy = 0.0;
  double kappa = 0.0;
  double p_o = 0.0;
  double p_e = 0.0;
  std::vector<double> precision, recall, f1;
  std::vector<bool> precision_undefined;  // class never predicted
  std::vector<bool> recall_undefined;     // class absent from the test set
  double avg_precision = 0.0, avg_recall = 0.0, avg_f1 = 0.0;
};

inline MetricReport metrics(const ConfusionMatrix& cm) {
  const std::size_t M = cm.classes;
  const std::uint64_t total = cm.total();
  if (M == 0 || total == 0) throw DataError("empty confusion matrix");
  const auto N = static_cast<double>(total);
  std::vector<double> row(M, 0.0), col(M, 0.0);
  double diag = 0.0;
  for (std::size_t t = 0; t < M; ++t)
    for (std::size_t p = 0; p < M; ++p) {
      const auto v = static_cast<double>(cm(t, p));
      row[t] += v;
      col[p] += v;
      if (t == p) diag += v;
    }
  MetricReport r;
  r.p_o = diag / N;
  r.overall_accuracy = r.p_o;
  double pe = 0.0;
  for (std::size_t c = 0; c < M; ++c) pe += row[c] * col[c];
  r.p_e = pe / (N * N);
  if (r.p_e == 1.0)
    r.kappa = r.p_o == 1.0 ? 1.0 : 0.0;
  else
    r.kappa = (r.p_o - r.p_e) / (1.0 - r.p_e);

  r.precision.assign(M, 0.0);
  r.recall.assign(M, 0.0);
  r.f1.assign(M, 0.0);
  r.precision_undefined.assign(M, false);
  r.recall_undefined.assign(M, false);
  for (std::size_t c = 0; c < M; ++c) {
    const auto tp = static_cast<double>(cm(c, c));
    if (col[c] > 0)
      r.precision[c] = tp / col[c];
    else
      r.precision_undefined[c] = true;
    if (row[c] > 0)
      r.recall[c] = tp / row[c];
    else
      r.recall_undefined[c] = true;
    const double s = r.precision[c] + r.recall[c];
    r.f1[c] = s > 0 ? 2.0 * r.precision[c] * r.recall[c] / s : 0.0;
    r.avg_precision += r.precision[c];
    r.avg_recall += r.recall[c];
    r.avg_f1 += r.f1[c];
  }
  r.avg_precision /= static_cast<double>(M);
  r.avg_recall /= static_cast<double>(M);
  r.avg_f1 /= static_cast<double>(M);
  return r;
}

/// Fraction of samples whose predicted label matches.
inline double accuracy_on(const LabelMap& pred, std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("no samples to score");
  std::size_t ok = 0;
  for (const auto& s : samples) ok += pred.labels[s.pixel] == s.label ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// grid search
// ---------------------------------------------------------------------------

template <typename T>
struct GridResult {
  T best{};
  std::size_t best_index = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<double> scores;  // one per candidate, in order
};

/// Evaluates every candidate once, in order; the first candidate with the
/// highest score wins, so callers list candidates in tie-break order.
template <typename T, typename Score>
GridResult<T> grid_search(std::span<const T> candidates, Score&& score) {
  if (candidates.empty()) throw DataError("empty search grid");
  GridResult<T> r;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double s = score(candidates[k]);
    r.scores.push_back(s);
    if (k == 0 || s > r.best_score) {
      r.best_score = s;
      r.best_index = k;
    }
  }
  r.best = candidates[r.best_index];
  return r;
}

inline const std::vector<double>& default_betas() {
  static const std::vector<double> v{0.001, 0.01, 0.1, 1.0, 10.0};
  return v;
}

inline const std::vector<double>& default_lambdas() {
  static const std::vector<double> v{1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  return v;
}

/// The 4 x 3 x 3 grid of (variance fraction, levels, step) in lexicographic
/// order.
inline std::vector<EmpParams> default_emp_grid() {
  std::vector<EmpParams> g;
  for (double v : {0.84, 0.89, 0.94, 0.99})
    for (int levels : {2, 4, 8})
      for (int step : {2, 4, 8}) g.push_back({v, levels, step, 2.0});
  std::sort(g.begin(), g.end());
  return g;
}

// ---------------------------------------------------------------------------
// trial summaries
// ---------------------------------------------------------------------------

struct Stats {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1); 0 for one value
  double best = 0.0;
  std::size_t n = 0;
};

inline Stats describe(std::span<const double> v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  s.best = *std::max_element(v.begin(), v.end());
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace ugm
