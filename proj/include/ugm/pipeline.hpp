#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ugm/classifiers.hpp"
#include "ugm/crf.hpp"
#include "ugm/dataset.hpp"
#include "ugm/energy.hpp"
#include "ugm/evaluation.hpp"
#include "ugm/features.hpp"
#include "ugm/inference.hpp"
#include "ugm/io.hpp"
#include "ugm/superpixels.hpp"

namespace ugm {

enum class FeatureKind { raw, emp };
enum class ClassifierKind { lr, sam, external };
enum class Smoother { none, mrf_grid, mrf_superpixel, crf };

inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "raw") return FeatureKind::raw;
  if (s == "emp") return FeatureKind::emp;
  throw DataError("unknown feature kind '" + s + "'");
}

inline ClassifierKind parse_classifier(const std::string& s) {
  if (s == "lr") return ClassifierKind::lr;
  if (s == "sam") return ClassifierKind::sam;
  if (s == "external" || s == "proba") return ClassifierKind::external;
  throw DataError("unknown classifier '" + s + "'");
}

inline Smoother parse_smoother(const std::string& s) {
  if (s == "none") return Smoother::none;
  if (s == "mrf_grid" || s == "mrf") return Smoother::mrf_grid;
  if (s == "mrf_superpixel" || s == "superpixel") return Smoother::mrf_superpixel;
  if (s == "crf") return Smoother::crf;
  throw DataError("unknown smoother '" + s + "'");
}

struct ExperimentConfig {
  FeatureKind features = FeatureKind::raw;
  EmpParams emp;
  bool tune_emp = false;
  ClassifierKind classifier = ClassifierKind::lr;
  Smoother smoother = Smoother::none;
  MapMethod method = MapMethod::alpha_expansion;
  std::size_t max_cycles = 15;
  std::size_t n_train = 30;
  std::size_t n_test = 50;
  std::size_t n_trials = 1;
  std::uint64_t base_seed = 1;
  double validation_fraction = 0.3;
  std::vector<double> betas = default_betas();
  std::optional<double> beta;  // fixed beta skips tuning
  std::vector<double> lambdas = default_lambdas();
  std::optional<double> lambda;  // fixed lambda skips tuning
  SlicParams slic{.requested_superpixels = 400};
  CrfTrainConfig crf;
  double eps = kProbabilityFloor;
  std::size_t threads = 1;
  std::string name;  // defaults to method_name()
};

inline std::string method_name(const ExperimentConfig& c) {
  if (!c.name.empty()) return c.name;
  std::string s = c.features == FeatureKind::emp ? "EMP-" : "";
  s += c.classifier == ClassifierKind::lr ? "LR" : c.classifier == ClassifierKind::sam ? "SAM" : "EXT";
  switch (c.smoother) {
    case Smoother::mrf_grid: s += "-MRF"; break;
    case Smoother::mrf_superpixel: s += "-SPMRF"; break;
    case Smoother::crf: s += "-CRF"; break;
    default: break;
  }
  return s;
}

struct Dataset {
  HsiCube cube;
  LabelMap truth;
  std::optional<ProbabilityField> external;  // classifier output supplied from a file
};

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

/// Classifier input: EMP or raw spectra; LR additionally gets standardized
/// features, SAM keeps the original scale.
inline FeatureCube make_features(const HsiCube& cube, FeatureKind kind, const EmpParams& emp_params,
                                 ClassifierKind classifier) {
  FeatureCube f = kind == FeatureKind::emp ? emp(cube, emp_params) : cube;
  if (classifier == ClassifierKind::lr) f = standardize(f);
  return f;
}

/// Pixel-wise classifier output over the whole image.
struct ClassifierOutput {
  std::optional<ProbabilityField> proba;
  std::optional<AngleField> angles;

  std::size_t classes() const { return proba ? proba->classes : angles->classes; }

  UnaryTable unary(double eps) const { return proba ? unary_from_proba(*proba, eps) : unary_from_angles(*angles); }

  LabelMap labels() const { return proba ? argmax_labels(*proba) : argmin_labels(*angles); }

  /// Unary CRF features: probabilities, or exp(-angle).
  FeatureCube crf_features() const { return proba ? as_features(*proba) : exp_neg(*angles); }
};

inline ClassifierOutput classify(const Dataset& ds, const FeatureCube& features, std::span<const Sample> train,
                                 ClassifierKind kind, double lambda, std::size_t classes) {
  ClassifierOutput out;
  switch (kind) {
    case ClassifierKind::lr: out.proba = predict_proba(train_lr(features, train, lambda, classes), features); break;
    case ClassifierKind::sam: out.angles = sam_angles(features, train, classes); break;
    case ClassifierKind::external:
      if (!ds.external) throw DataError("external classifier selected but no probability field was supplied");
      out.proba = *ds.external;
      break;
  }
  return out;
}

/// Mean angle per superpixel.
inline UnaryTable aggregate_angles(const AngleField& a, const SuperpixelSegmentation& seg) {
  const std::size_t M = a.classes;
  UnaryTable u(seg.count, M);
  std::vector<std::size_t> cnt(seg.count, 0);
  for (std::size_t q = 0; q < seg.pixels(); ++q) {
    ++cnt[seg.assignment[q]];
    for (std::size_t c = 0; c < M; ++c) u(seg.assignment[q], c) += a(q, c);
  }
  for (std::size_t s = 0; s < seg.count; ++s)
    for (std::size_t c = 0; c < M; ++c) u(s, c) /= static_cast<double>(cnt[s]);
  return u;
}

struct SmoothContext {
  const HsiCube* cube = nullptr;                      // SLIC input
  const SuperpixelSegmentation* segmentation = nullptr;  // reused when set
  std::span<const Sample> crf_train;                  // observed nodes for the CRF
};

inline LabelMap smooth(const ClassifierOutput& out, Smoother smoother, double beta, const ExperimentConfig& cfg,
                       const SmoothContext& ctx) {
  const LabelMap pixelwise = out.labels();
  const std::size_t H = pixelwise.height, W = pixelwise.width, M = out.classes();
  MapOptions opt;
  opt.max_cycles = cfg.max_cycles;
  switch (smoother) {
    case Smoother::none: return pixelwise;
    case Smoother::mrf_grid: {
      const EnergyModel m(grid_graph(H, W), out.unary(cfg.eps), Potts{beta});
      const auto rep = map_infer(m, cfg.method, opt);
      LabelMap l(H, W);
      for (std::size_t q = 0; q < l.pixels(); ++q) l.labels[q] = rep.labels[q] + 1;
      return l;
    }
    case Smoother::mrf_superpixel: {
      SuperpixelSegmentation own;
      const SuperpixelSegmentation* seg = ctx.segmentation;
      if (!seg) {
        if (!ctx.cube) throw DataError("superpixel smoothing needs the image cube");
        own = slic(*ctx.cube, cfg.slic);
        seg = &own;
      }
      UnaryTable u = out.proba ? aggregate_unary(*out.proba, *seg, cfg.eps) : aggregate_angles(*out.angles, *seg);
      const EnergyModel m(adjacency(*seg), std::move(u), Potts{beta});
      const auto rep = map_infer(m, cfg.method, opt);
      return project_labels(*seg, rep.labels);
    }
    case Smoother::crf: {
      std::vector<int> observed(H * W, -1);
      for (const auto& s : ctx.crf_train) observed[s.pixel] = s.label - 1;
      const CrfData data = make_crf_data(grid_graph(H, W), out.crf_features(), std::move(observed));
      const auto trained = train_crf(data, M, cfg.crf);
      const auto pred = crf_predict(trained.model, data, cfg.crf.bp);
      LabelMap l(H, W);
      for (std::size_t q = 0; q < l.pixels(); ++q) l.labels[q] = pred.labels[q] + 1;
      return l;
    }
  }
  return pixelwise;
}

// ---------------------------------------------------------------------------
// tuning
// ---------------------------------------------------------------------------

/// Validation OA of the smoothed map for each beta in cfg.betas (ascending
/// order is the tie-break order).
inline GridResult<double> tune_beta(const ClassifierOutput& out, std::span<const Sample> validation,
                                    const ExperimentConfig& cfg, const SmoothContext& ctx) {
  if (validation.empty()) throw DataError("beta tuning needs validation pixels");
  return grid_search<double>(cfg.betas, [&](double b) {
    return accuracy_on(smooth(out, cfg.smoother, b, cfg, ctx), validation);
  });
}

/// Pixel-wise validation OA of the classifier fit on `fit` for each EMP cell.
inline GridResult<EmpParams> tune_emp(const Dataset& ds, std::span<const Sample> fit,
                                      std::span<const Sample> validation, const ExperimentConfig& cfg, double lambda,
                                      std::span<const EmpParams> grid) {
  if (validation.empty()) throw DataError("EMP tuning needs validation pixels");
  const auto M = static_cast<std::size_t>(ds.truth.classes());
  return grid_search<EmpParams>(grid, [&](const EmpParams& p) {
    const FeatureCube f = make_features(ds.cube, FeatureKind::emp, p, cfg.classifier);
    return accuracy_on(classify(ds, f, fit, cfg.classifier, lambda, M).labels(), validation);
  });
}

// ---------------------------------------------------------------------------
// trials
// ---------------------------------------------------------------------------

struct StageTimes {
  double features_ms = 0.0;
  double tune_ms = 0.0;
  double classify_ms = 0.0;
  double smooth_ms = 0.0;
  double total_ms = 0.0;
};

struct TrialResult {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricReport report;
  LabelMap prediction;
  double beta = 0.0;
  double lambda = 0.0;
  EmpParams emp;
  std::vector<double> beta_scores;  // validation OA per beta candidate
  StageTimes times;
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double ms() const { return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace detail

/// One trial: split with `seed`; tune EMP, lambda and beta on a holdout of
/// the training pixels with the classifier fit on the rest; retrain on all
/// training pixels; smooth; score the test pixels.
inline TrialResult run_trial(const Dataset& ds, const ExperimentConfig& cfg, std::size_t trial) {
  TrialResult r;
  r.trial = trial;
  r.seed = cfg.base_seed + trial;
  const detail::Stopwatch total;
  try {
    const auto M = static_cast<std::size_t>(ds.truth.classes());
    const SplitSet split = sample_split(ds.truth, cfg.n_train, cfg.n_test, r.seed);
    const auto [fit, validation] = holdout_split(split.train, cfg.validation_fraction, r.seed);
    const bool lr = cfg.classifier == ClassifierKind::lr;
    const bool mrf = cfg.smoother == Smoother::mrf_grid || cfg.smoother == Smoother::mrf_superpixel;
    r.lambda = cfg.lambda.value_or(1.0);
    r.emp = cfg.emp;
    r.beta = cfg.beta.value_or(0.0);

    std::optional<SuperpixelSegmentation> seg;
    SmoothContext ctx{.cube = &ds.cube, .segmentation = nullptr, .crf_train = split.train};

    // tuning on the holdout
    {
      const detail::Stopwatch sw;
      auto pixel_oa = [&](const FeatureCube& f, double lambda) {
        return accuracy_on(classify(ds, f, fit, cfg.classifier, lambda, M).labels(), validation);
      };
      if (cfg.tune_emp && cfg.features == FeatureKind::emp)
        r.emp = tune_emp(ds, fit, validation, cfg, r.lambda, default_emp_grid()).best;
      const FeatureCube f = make_features(ds.cube, cfg.features, r.emp, cfg.classifier);
      if (lr && !cfg.lambda)
        r.lambda = grid_search<double>(cfg.lambdas, [&](double l) { return pixel_oa(f, l); }).best;
      if (mrf && !cfg.beta) {
        const ClassifierOutput out = classify(ds, f, fit, cfg.classifier, r.lambda, M);
        if (cfg.smoother == Smoother::mrf_superpixel) {
          seg = slic(ds.cube, cfg.slic);
          ctx.segmentation = &*seg;
        }
        const auto g = tune_beta(out, validation, cfg, ctx);
        r.beta = g.best;
        r.beta_scores = g.scores;
      }
      r.times.tune_ms = sw.ms();
    }

    detail::Stopwatch sw;
    const FeatureCube f = make_features(ds.cube, cfg.features, r.emp, cfg.classifier);
    r.times.features_ms = sw.ms();
    sw = {};
    const ClassifierOutput out = classify(ds, f, split.train, cfg.classifier, r.lambda, M);
    r.times.classify_ms = sw.ms();
    sw = {};
    ctx.segmentation = nullptr;  // the timed run includes segmentation
    r.prediction = smooth(out, cfg.smoother, r.beta, cfg, ctx);
    r.times.smooth_ms = sw.ms();
    r.report = metrics(confusion(r.prediction, ds.truth, split, M));
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.times.total_ms = total.ms();
  return r;
}

struct TrialSummary {
  std::string method;
  std::size_t n_train = 0;
  std::size_t trials = 0;
  std::size_t completed = 0;
  Stats oa;     // percent
  Stats kappa;  // percent
  double mean_wall_ms = 0.0;
  bool incomplete() const { return completed < trials; }
};

struct TrialRun {
  std::vector<TrialResult> trials;
  TrialSummary summary;
};

/// Worker count: the requested number capped by UGM_THREADS when set.
inline std::size_t worker_count(std::size_t requested) {
  std::size_t n = std::max<std::size_t>(1, requested);
  if (const char* env = std::getenv("UGM_THREADS")) {
    try {
      n = std::min(n, std::max<std::size_t>(1, KeyValues::parse_size(env, "UGM_THREADS")));
    } catch (const FormatError&) {
    }
  }
  return n;
}

inline TrialSummary summarize(const std::vector<TrialResult>& trials, const ExperimentConfig& cfg) {
  TrialSummary s;
  s.method = method_name(cfg);
  s.n_train = cfg.n_train;
  s.trials = trials.size();
  std::vector<double> oa, kappa;
  for (const auto& t : trials) {
    if (!t.ok) continue;
    ++s.completed;
    oa.push_back(100.0 * t.report.overall_accuracy);
    kappa.push_back(100.0 * t.report.kappa);
    s.mean_wall_ms += t.times.total_ms;
  }
  if (s.completed) s.mean_wall_ms /= static_cast<double>(s.completed);
  s.oa = describe(oa);
  s.kappa = describe(kappa);
  return s;
}

/// Trial t uses seed base_seed + t. Results are stored by trial index, so the
/// output does not depend on the worker count.
inline TrialRun run_trials(const Dataset& ds, const ExperimentConfig& cfg) {
  TrialRun run;
  run.trials.resize(cfg.n_trials);
  const std::size_t workers = std::min(worker_count(cfg.threads), std::max<std::size_t>(1, cfg.n_trials));
  if (workers <= 1) {
    for (std::size_t t = 0; t < cfg.n_trials; ++t) run.trials[t] = run_trial(ds, cfg, t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < cfg.n_trials; t = next++) run.trials[t] = run_trial(ds, cfg, t);
      });
    for (auto& th : pool) th.join();
  }
  run.summary = summarize(run.trials, cfg);
  return run;
}

/// CSV: method,n_train,trial,OA,kappa,avgP,avgR,avgF1,wall_ms (failed trials
/// carry empty metric fields and the error text).
inline void write_results_csv(const TrialRun& run, const std::string& method, std::size_t n_train,
                              const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(10);
  out << "method,n_train,trial,OA,kappa,avgP,avgR,avgF1,wall_ms,beta,lambda,error\n";
  for (const auto& t : run.trials) {
    out << method << ',' << n_train << ',' << t.trial << ',';
    if (t.ok)
      out << t.report.overall_accuracy << ',' << t.report.kappa << ',' << t.report.avg_precision << ','
          << t.report.avg_recall << ',' << t.report.avg_f1 << ',';
    else
      out << ",,,,,";
    out << t.times.total_ms << ',' << t.beta << ',' << t.lambda << ',';
    std::string err = t.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << err << '\n';
  }
}

/// CSV: method,n_train,trials,completed,best_oa,mean_oa,sd_oa,mean_kappa,sd_kappa,mean_wall_ms
/// with accuracies in percent.
inline void write_summary_csv(std::span<const TrialSummary> rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "method,n_train,trials,completed,best_oa,mean_oa,sd_oa,mean_kappa,sd_kappa,mean_wall_ms\n";
  for (const auto& s : rows)
    out << s.method << ',' << s.n_train << ',' << s.trials << ',' << s.completed << ',' << s.oa.best << ','
        << s.oa.mean << ',' << s.oa.sd << ',' << s.kappa.mean << ',' << s.kappa.sd << ',' << s.mean_wall_ms << '\n';
}

// ---------------------------------------------------------------------------
// experiment files: flat key=value
// ---------------------------------------------------------------------------

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> v;
  for (const auto& part : split(s, ','))
    if (!trim(part).empty()) v.push_back(KeyValues::parse_double(trim(part), "list entry"));
  if (v.empty()) throw FormatError("empty list '" + s + "'");
  return v;
}

/// Keys: features, classifier, smoother, method, cycles, n_train, n_test,
/// trials, seed, validation, betas, beta, lambdas, lambda, tune_emp,
/// emp_variance, emp_levels, emp_step, superpixels, regularizer,
/// min_region, slic_iters, crf_objective, crf_l2, crf_iters, crf_tied,
/// eps, threads, name. Unknown keys are rejected.
inline ExperimentConfig parse_experiment(const KeyValues& kv) {
  static const std::vector<std::string> known{
      "cube", "labels", "proba", "min_class_pixels", "results", "summary", "features", "classifier", "smoother",
      "method", "cycles", "n_train", "n_test", "trials", "seed", "validation", "betas", "beta", "lambdas", "lambda",
      "tune_emp", "emp_variance", "emp_levels", "emp_step", "superpixels", "regularizer", "min_region",
      "slic_iters", "crf_objective", "crf_l2", "crf_iters", "crf_tied", "eps", "threads", "name"};
  for (const auto& [k, v] : kv.entries())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw FormatError("unknown config key '" + k + "'");
  ExperimentConfig c;
  c.features = parse_feature_kind(kv.get_or("features", "raw"));
  c.classifier = parse_classifier(kv.get_or("classifier", "lr"));
  c.smoother = parse_smoother(kv.get_or("smoother", "none"));
  c.method = parse_map_method(kv.get_or("method", "alpha-expansion"));
  if (kv.has("cycles")) c.max_cycles = kv.get_size("cycles");
  if (kv.has("n_train")) c.n_train = kv.get_size("n_train");
  if (kv.has("n_test")) c.n_test = kv.get_size("n_test");
  if (kv.has("trials")) c.n_trials = kv.get_size("trials");
  if (kv.has("seed")) c.base_seed = kv.get_size("seed");
  if (kv.has("validation")) c.validation_fraction = kv.get_double("validation");
  if (kv.has("betas")) c.betas = parse_double_list(kv.get("betas"));
  if (kv.has("beta")) c.beta = kv.get_double("beta");
  if (kv.has("lambdas")) c.lambdas = parse_double_list(kv.get("lambdas"));
  if (kv.has("lambda")) c.lambda = kv.get_double("lambda");
  if (kv.has("tune_emp")) c.tune_emp = kv.get("tune_emp") == "1" || kv.get("tune_emp") == "true";
  if (kv.has("emp_variance")) c.emp.variance_fraction = kv.get_double("emp_variance");
  if (kv.has("emp_levels")) c.emp.n_levels = static_cast<int>(kv.get_size("emp_levels"));
  if (kv.has("emp_step")) c.emp.size_step = static_cast<int>(kv.get_size("emp_step"));
  if (kv.has("superpixels")) c.slic.requested_superpixels = kv.get_size("superpixels");
  if (kv.has("regularizer")) c.slic.regularizer = kv.get_double("regularizer");
  if (kv.has("min_region")) c.slic.min_region_size = kv.get_size("min_region");
  if (kv.has("slic_iters")) c.slic.kmeans_iters = kv.get_size("slic_iters");
  if (kv.has("crf_objective")) {
    const auto o = kv.get("crf_objective");
    if (o == "mle")
      c.crf.objective = CrfObjective::mle;
    else if (o == "pl" || o == "pseudo_likelihood")
      c.crf.objective = CrfObjective::pseudo_likelihood;
    else
      throw FormatError("unknown crf_objective '" + o + "'");
  }
  if (kv.has("crf_l2")) c.crf.l2 = kv.get_double("crf_l2");
  if (kv.has("crf_iters")) c.crf.max_iters = kv.get_size("crf_iters");
  if (kv.has("crf_tied")) c.crf.tied = kv.get("crf_tied") == "1" || kv.get("crf_tied") == "true";
  if (kv.has("eps")) c.eps = kv.get_double("eps");
  if (kv.has("threads")) c.threads = kv.get_size("threads");
  if (kv.has("name")) c.name = kv.get("name");
  return c;
}

}  // namespace ugm
