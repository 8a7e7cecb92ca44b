#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ugm/ugm.hpp"

namespace ugm::cli {

/// Bad flag combinations found after parsing; exits 1 like a parse error.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline ClassifierOutput load_classifier_output(const fs::path& path) {
  const CubeHeader h = read_cube_header(path);
  ClassifierOutput out;
  if (h.kind == "proba") {
    out.proba = ingest_proba(path);
  } else if (h.kind == "angles") {
    const HsiCube c = load_cube(path);
    AngleField a(c.height, c.width, c.bands);
    a.values = c.values;
    for (double v : a.values)
      if (v < 0.0) throw DataError(path.string() + ": negative spectral angle");
    out.angles = std::move(a);
  } else {
    throw FormatError(path.string() + ": expected kind=proba or kind=angles, got kind=" + h.kind);
  }
  return out;
}

struct SplitOptions {
  std::string split_in;
  std::string split_out;
  std::size_t n_train = 30;
  std::size_t n_test = 50;
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--split", split_in, "Split CSV to read (pixel_row,pixel_col,class,role)");
    app->add_option("--split-out", split_out, "Write the split used to this CSV");
    app->add_option("--train", n_train, "Training pixels per class when sampling")->capture_default_str();
    app->add_option("--test", n_test, "Test pixels per class when sampling")->capture_default_str();
    app->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  }

  SplitSet resolve(const LabelMap& truth) const {
    SplitSet s = split_in.empty() ? sample_split(truth, n_train, n_test, seed)
                                  : load_split(split_in, truth.height, truth.width);
    if (!split_out.empty()) save_split(s, truth.width, split_out);
    return s;
  }
};

inline LabelMap to_label_map(std::span<const int> zero_based, std::size_t h, std::size_t w) {
  LabelMap l(h, w);
  for (std::size_t q = 0; q < l.pixels(); ++q) l.labels[q] = zero_based[q] + 1;
  return l;
}

inline void print_report(std::ostream& out, const MetricReport& r) {
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "OA " << r.overall_accuracy << "\nkappa " << r.kappa << "\navgP " << r.avg_precision << "\navgR "
      << r.avg_recall << "\navgF1 " << r.avg_f1 << '\n';
  out.unsetf(std::ios::fixed);
}

inline void write_metrics_csv(const MetricReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(12);
  out << "class,precision,recall,f1,precision_undefined,recall_undefined\n";
  for (std::size_t c = 0; c < r.precision.size(); ++c)
    out << c + 1 << ',' << r.precision[c] << ',' << r.recall[c] << ',' << r.f1[c] << ','
        << int{r.precision_undefined[c]} << ',' << int{r.recall_undefined[c]} << '\n';
  out << "average," << r.avg_precision << ',' << r.avg_recall << ',' << r.avg_f1 << ",,\n";
  out << "# OA=" << r.overall_accuracy << " kappa=" << r.kappa << '\n';
}

/// Parses argv and runs one subcommand. Returns 0 on success, 1 on usage
/// errors, 2 on data, format or model errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Pairwise MRF/CRF tools for hyperspectral classification", "ugm"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // features
  struct {
    std::string cube, out, kind = "emp";
    EmpParams emp;
  } fe;
  auto* features = app.add_subcommand("features", "Compute raw, standardized, PCA or EMP features");
  features->add_option("--cube", fe.cube, "Input cube header")->required();
  features->add_option("--out", fe.out, "Output feature cube header")->required();
  features->add_option("--kind", fe.kind, "raw | standardize | pca | emp")
      ->check(CLI::IsMember({"raw", "standardize", "pca", "emp"}))
      ->capture_default_str();
  features->add_option("--variance", fe.emp.variance_fraction, "PCA variance fraction kept")->capture_default_str();
  features->add_option("--levels", fe.emp.n_levels, "EMP openings/closings per component")->capture_default_str();
  features->add_option("--step", fe.emp.size_step, "EMP diameter increment")->capture_default_str();
  features->add_option("--base", fe.emp.base_diameter, "EMP first diameter")->capture_default_str();

  // classify
  struct {
    std::string features, labels, out, classifier = "lr", model_out, map;
    double lambda = 1.0;
    bool standardize = false;
    SplitOptions split;
  } cl;
  auto* classify_cmd = app.add_subcommand("classify", "Train a pixel-wise classifier and write its output field");
  classify_cmd->add_option("--features", cl.features, "Feature cube header")->required();
  classify_cmd->add_option("--labels", cl.labels, "Ground-truth label map (PGM or CSV)")->required();
  classify_cmd->add_option("--out", cl.out, "Output probability (lr) or angle (sam) header")->required();
  classify_cmd->add_option("--classifier", cl.classifier, "lr | sam")
      ->check(CLI::IsMember({"lr", "sam"}))
      ->capture_default_str();
  classify_cmd->add_option("--lambda", cl.lambda, "LR L2 weight")->capture_default_str();
  classify_cmd->add_flag("--standardize", cl.standardize, "Standardize features per band first");
  classify_cmd->add_option("--model-out", cl.model_out, "Write the trained LR model");
  classify_cmd->add_option("--map", cl.map, "Also write the pixel-wise label map");
  cl.split.add(classify_cmd);

  // smooth
  struct {
    std::string input, out, method = "alpha-expansion", segmentation, report;
    double beta = 1.0, eps = kProbabilityFloor;
    std::size_t cycles = 15;
  } sm;
  auto* smooth_cmd = app.add_subcommand("smooth", "MAP inference on a Potts MRF over a classifier output");
  smooth_cmd->add_option("--input", sm.input, "Probability or angle field header")->required();
  smooth_cmd->add_option("--out", sm.out, "Output label map (.pgm or .csv)")->required();
  smooth_cmd->add_option("--method", sm.method, "alpha-expansion | icm | max-marginals")
      ->check(CLI::IsMember({"alpha-expansion", "alpha_expansion", "graphcut", "icm", "max-marginals", "bp"}))
      ->capture_default_str();
  smooth_cmd->add_option("--beta", sm.beta, "Potts weight")->capture_default_str();
  smooth_cmd->add_option("--cycles", sm.cycles, "Expansion cycles or BP iterations cap")->capture_default_str();
  smooth_cmd->add_option("--eps", sm.eps, "Probability floor for -log p")->capture_default_str();
  smooth_cmd->add_option("--segmentation", sm.segmentation, "Smooth over this superpixel graph instead of the grid");
  smooth_cmd->add_option("--report", sm.report, "Write an inference report CSV");

  // superpixel
  struct {
    std::string cube, out, overlay, spatial = "per_area";
    SlicParams slic;
  } sp;
  auto* superpixel = app.add_subcommand("superpixel", "SLIC segmentation of a cube");
  superpixel->add_option("--cube", sp.cube, "Input cube header")->required();
  superpixel->add_option("--out", sp.out, "Output segmentation header")->required();
  superpixel->add_option("--superpixels", sp.slic.requested_superpixels, "Requested count")->capture_default_str();
  superpixel->add_option("--regularizer", sp.slic.regularizer, "Spatial regularizer")->capture_default_str();
  superpixel->add_option("--min-region", sp.slic.min_region_size, "Minimum region size")->capture_default_str();
  superpixel->add_option("--iters", sp.slic.kmeans_iters, "k-means iterations")->capture_default_str();
  superpixel->add_option("--spatial", sp.spatial, "per_area | per_length")
      ->check(CLI::IsMember({"per_area", "per_length"}))
      ->capture_default_str();
  superpixel->add_option("--overlay", sp.overlay, "Write a P6 image with superpixel boundaries");

  // crf
  struct {
    std::string input, labels, out, objective = "mle", model_in, model_out, marginals;
    double l2 = 1e-2;
    std::size_t iters = 200, bp_iters = 50;
    bool tied = false;
    SplitOptions split;
  } cr;
  auto* crf_cmd = app.add_subcommand("crf", "Train a grid CRF on classifier outputs and predict");
  crf_cmd->add_option("--input", cr.input, "Probability or angle field header (unary features)")->required();
  crf_cmd->add_option("--labels", cr.labels, "Ground-truth label map (needed for training)");
  crf_cmd->add_option("--out", cr.out, "Output label map")->required();
  crf_cmd->add_option("--objective", cr.objective, "mle | pl")->check(CLI::IsMember({"mle", "pl"}))->capture_default_str();
  crf_cmd->add_option("--l2", cr.l2, "L2 weight")->capture_default_str();
  crf_cmd->add_option("--iters", cr.iters, "Training iterations cap")->capture_default_str();
  crf_cmd->add_option("--bp-iters", cr.bp_iters, "BP iterations cap")->capture_default_str();
  crf_cmd->add_flag("--tied", cr.tied, "Symmetric pairwise weights");
  crf_cmd->add_option("--model", cr.model_in, "Predict with this model instead of training");
  crf_cmd->add_option("--model-out", cr.model_out, "Write the trained model");
  crf_cmd->add_option("--marginals", cr.marginals, "Write node marginals as a probability field");
  cr.split.add(crf_cmd);

  // eval
  struct {
    std::string pred, truth, split, out;
    std::size_t classes = 0;
  } ev;
  auto* eval_cmd = app.add_subcommand("eval", "Confusion matrix and metrics on the test pixels");
  eval_cmd->add_option("--pred", ev.pred, "Predicted label map")->required();
  eval_cmd->add_option("--truth", ev.truth, "Ground-truth label map")->required();
  eval_cmd->add_option("--split", ev.split, "Split CSV; only test rows are scored")->required();
  eval_cmd->add_option("--classes", ev.classes, "Class count (default: from the data)");
  eval_cmd->add_option("--out", ev.out, "Write per-class metrics CSV");

  // bench
  struct {
    std::string config, results, summary;
    std::optional<std::size_t> threads;
    std::optional<std::uint64_t> seed;
  } be;
  auto* bench = app.add_subcommand("bench", "Run repeated trials from a key=value experiment file");
  bench->add_option("--config", be.config, "Experiment file")->required();
  bench->add_option("--results", be.results, "Per-trial CSV (overrides results=)");
  bench->add_option("--summary", be.summary, "Summary CSV (overrides summary=)");
  bench->add_option("--threads", be.threads, "Worker threads (capped by UGM_THREADS)");
  bench->add_option("--seed", be.seed, "Base seed (overrides seed=)");

  // render
  struct {
    std::string map, palette, out;
  } re;
  auto* render_cmd = app.add_subcommand("render", "Render a label map as a P6 image");
  render_cmd->add_option("map", re.map, "Label map")->required();
  render_cmd->add_option("palette", re.palette, "Palette CSV (class,r,g,b) or 'default'")->required();
  render_cmd->add_option("out", re.out, "Output .ppm")->required();

  // synth
  struct {
    std::string cube, labels;
    std::size_t size = 64, blocks = 8, bands = 10;
    int classes = 4;
    double sigma = 0.5;
    std::uint64_t seed = 1;
  } sy;
  auto* synth = app.add_subcommand("synth", "Write a synthetic block scene and its ground truth");
  synth->add_option("--cube", sy.cube, "Output cube header")->required();
  synth->add_option("--labels", sy.labels, "Output label map")->required();
  synth->add_option("--size", sy.size, "Image side length")->capture_default_str();
  synth->add_option("--blocks", sy.blocks, "Regions per side")->capture_default_str();
  synth->add_option("--classes", sy.classes, "Class count")->capture_default_str();
  synth->add_option("--bands", sy.bands, "Band count")->capture_default_str();
  synth->add_option("--sigma", sy.sigma, "Noise standard deviation")->capture_default_str();
  synth->add_option("--seed", sy.seed, "Scene seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*features) {
      const HsiCube cube = load_cube(fe.cube);
      FeatureCube f;
      if (fe.kind == "raw")
        f = cube;
      else if (fe.kind == "standardize")
        f = standardize(cube);
      else if (fe.kind == "pca")
        f = pca(cube, fe.emp.variance_fraction);
      else
        f = emp(cube, fe.emp);
      save_cube(f, fe.out, "features");
      out << "features " << f.height << 'x' << f.width << 'x' << f.bands << '\n';
    } else if (*classify_cmd) {
      FeatureCube f = load_cube(cl.features);
      if (cl.standardize) f = standardize(f);
      const LabelMap truth = load_labels(cl.labels, f.height, f.width);
      const SplitSet split = cl.split.resolve(truth);
      const auto M = static_cast<std::size_t>(truth.classes());
      LabelMap map;
      if (cl.classifier == "lr") {
        const LrModel model = train_lr(f, split, cl.lambda, M);
        const ProbabilityField p = predict_proba(model, f);
        save_proba(p, cl.out);
        if (!cl.model_out.empty()) save_lr(model, cl.model_out);
        map = argmax_labels(p);
        out << "lr iterations " << model.iterations << (model.converged ? " converged" : " not converged") << '\n';
      } else {
        if (!cl.model_out.empty()) throw UsageError("--model-out applies to lr only");
        const AngleField a = sam_angles(f, split, M);
        save_angles(a, cl.out);
        map = argmin_labels(a);
      }
      if (!cl.map.empty()) save_labels(map, cl.map);
    } else if (*smooth_cmd) {
      const ClassifierOutput in = load_classifier_output(sm.input);
      MapOptions opt;
      opt.max_cycles = sm.cycles;
      opt.bp.max_iters = std::max<std::size_t>(sm.cycles, 1);
      const std::size_t H = in.proba ? in.proba->height : in.angles->height;
      const std::size_t W = in.proba ? in.proba->width : in.angles->width;
      InferenceReport rep;
      LabelMap result;
      if (sm.segmentation.empty()) {
        const EnergyModel m(grid_graph(H, W), in.unary(sm.eps), Potts{sm.beta});
        rep = map_infer(m, sm.method, opt);
        result = to_label_map(rep.labels, H, W);
      } else {
        const SuperpixelSegmentation seg = load_segmentation(sm.segmentation);
        if (seg.height != H || seg.width != W) throw DataError("segmentation and input differ in size");
        UnaryTable u = in.proba ? aggregate_unary(*in.proba, seg, sm.eps) : aggregate_angles(*in.angles, seg);
        const EnergyModel m(adjacency(seg), std::move(u), Potts{sm.beta});
        rep = map_infer(m, sm.method, opt);
        result = project_labels(seg, rep.labels);
      }
      save_labels(result, sm.out);
      if (!sm.report.empty()) write_report_csv(std::span<const InferenceReport>(&rep, 1), sm.report);
      out << rep.method << " energy " << rep.energy << " iterations " << rep.iterations << '\n';
    } else if (*superpixel) {
      const HsiCube cube = load_cube(sp.cube);
      sp.slic.spatial = sp.spatial == "per_length" ? SlicSpatialWeight::per_length : SlicSpatialWeight::per_area;
      const SuperpixelSegmentation seg = slic(cube, sp.slic);
      save_segmentation(seg, sp.out);
      if (!sp.overlay.empty()) save_ppm(render_boundaries(cube, seg), sp.overlay);
      out << "superpixels " << seg.count << '\n';
    } else if (*crf_cmd) {
      const ClassifierOutput in = load_classifier_output(cr.input);
      const FeatureCube phi = in.crf_features();
      const std::size_t H = phi.height, W = phi.width;
      CrfModel model;
      std::vector<int> observed(H * W, -1);
      BpConfig bp{.mode = BpMode::sum_product, .max_iters = cr.bp_iters, .damping = 0.5, .tol = 1e-6,
                  .edge_beliefs = false};
      if (!cr.model_in.empty()) {
        if (!cr.model_out.empty()) throw UsageError("--model and --model-out are exclusive");
        model = load_crf(cr.model_in);
      } else {
        if (cr.labels.empty()) throw UsageError("training needs --labels (or pass --model)");
        const LabelMap truth = load_labels(cr.labels, H, W);
        const SplitSet split = cr.split.resolve(truth);
        for (const auto& s : split.train) observed[s.pixel] = s.label - 1;
        CrfTrainConfig cfg;
        cfg.objective = cr.objective == "pl" ? CrfObjective::pseudo_likelihood : CrfObjective::mle;
        cfg.l2 = cr.l2;
        cfg.max_iters = cr.iters;
        cfg.tied = cr.tied;
        cfg.bp.max_iters = cr.bp_iters;
        const auto M = std::max(static_cast<std::size_t>(truth.classes()), phi.bands);
        const auto trained = train_crf(make_crf_data(grid_graph(H, W), phi, observed), M, cfg);
        model = trained.model;
        out << "crf iterations " << trained.iterations << " objective " << trained.objective
            << " nonconverged_inference " << trained.nonconverged_inference << '\n';
        if (!cr.model_out.empty()) save_crf(model, cr.model_out);
      }
      const auto pred = crf_predict(model, make_crf_data(grid_graph(H, W), phi), bp);
      save_labels(to_label_map(pred.labels, H, W), cr.out);
      if (!cr.marginals.empty()) {
        ProbabilityField p(H, W, model.classes);
        p.values = pred.marginals.node;
        save_proba(p, cr.marginals);
      }
    } else if (*eval_cmd) {
      const LabelMap pred = load_labels(ev.pred);
      const LabelMap truth = load_labels(ev.truth, pred.height, pred.width);
      const SplitSet split = load_split(ev.split, truth.height, truth.width);
      const MetricReport r = metrics(confusion(pred, truth, split, ev.classes));
      print_report(out, r);
      if (!ev.out.empty()) write_metrics_csv(r, ev.out);
    } else if (*bench) {
      const fs::path config_path = be.config;
      const KeyValues kv = KeyValues::load(config_path);
      ExperimentConfig cfg = parse_experiment(kv);
      if (be.threads) cfg.threads = *be.threads;
      if (be.seed) cfg.base_seed = *be.seed;
      auto resolve = [&](const std::string& key) {
        const fs::path p = kv.get(key);
        return p.is_absolute() ? p : config_path.parent_path() / p;
      };
      Dataset ds;
      ds.cube = load_cube(resolve("cube"));
      ds.truth = load_labels(resolve("labels"), ds.cube.height, ds.cube.width);
      if (kv.has("min_class_pixels")) ds.truth = drop_small_classes(ds.truth, kv.get_size("min_class_pixels"));
      if (kv.has("proba")) ds.external = ingest_proba(resolve("proba"));
      const TrialRun run = run_trials(ds, cfg);
      const std::string results = !be.results.empty() ? be.results : kv.has("results") ? resolve("results").string() : "";
      const std::string summary = !be.summary.empty() ? be.summary : kv.has("summary") ? resolve("summary").string() : "";
      if (!results.empty()) write_results_csv(run, run.summary.method, cfg.n_train, results);
      if (!summary.empty()) write_summary_csv(std::span<const TrialSummary>(&run.summary, 1), summary);
      const auto& s = run.summary;
      out.setf(std::ios::fixed);
      out.precision(2);
      out << s.method << " n_train " << s.n_train << " trials " << s.completed << '/' << s.trials << " OA "
          << s.oa.mean << " +- " << s.oa.sd << " best " << s.oa.best << '\n';
      for (const auto& t : run.trials)
        if (!t.ok) err << "trial " << t.trial << " failed: " << t.error << '\n';
      if (s.completed == 0) return 2;
    } else if (*render_cmd) {
      const LabelMap m = load_labels(re.map);
      const Palette p = re.palette == "default" ? default_palette(std::max(m.classes(), 1)) : load_palette(re.palette);
      save_ppm(render(m, p), re.out);
    } else if (*synth) {
      if (sy.classes < 1 || sy.blocks < 1 || sy.bands < 1) throw UsageError("classes, blocks and bands must be positive");
      const Scene s = synth_scene(random_block_scene(sy.size, sy.blocks, sy.classes, sy.bands, sy.sigma, sy.seed), sy.seed + 1);
      save_cube(s.cube, sy.cube);
      save_labels(s.labels, sy.labels);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace ugm::cli
