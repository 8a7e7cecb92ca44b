#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ugm/energy.hpp"
#include "ugm/error.hpp"
#include "ugm/inference.hpp"
#include "ugm/io.hpp"
#include "ugm/optimize.hpp"

namespace ugm {

/// Log-linear pairwise CRF. Scores are negative energies:
/// E_i(c) = -w1[c] . phi1_i and E_ij(a, b) = -w2[a][b] . phi2_ij.
struct CrfModel {
  std::size_t classes = 0;
  std::size_t unary_dims = 0;  // F1
  std::size_t pair_dims = 1;   // F2
  bool tied = false;           // w2[a][b] == w2[b][a]
  double l2 = 0.0;             // regularizer used for training
  std::vector<double> w1;      // M x F1
  std::vector<double> w2;      // M x M x F2

  CrfModel() = default;
  CrfModel(std::size_t m, std::size_t f1, std::size_t f2 = 1, bool tie = false)
      : classes(m), unary_dims(f1), pair_dims(f2), tied(tie), w1(m * f1, 0.0), w2(m * m * f2, 0.0) {}

  double& unary_w(std::size_t c, std::size_t f) { return w1[c * unary_dims + f]; }
  double& pair_w(std::size_t a, std::size_t b, std::size_t f = 0) { return w2[(a * classes + b) * pair_dims + f]; }
  double pair_w(std::size_t a, std::size_t b, std::size_t f = 0) const {
    return w2[(a * classes + b) * pair_dims + f];
  }
};

/// A graph with per-node unary features and optional per-edge pairwise
/// features (empty means the constant feature 1). `labels` holds 0-based
/// observed classes, -1 for latent nodes.
struct CrfData {
  Graph graph;
  std::size_t unary_dims = 0;
  std::vector<double> phi1;  // n x F1
  std::size_t pair_dims = 1;
  std::vector<double> phi2;  // n_edges x F2, or empty
  std::vector<int> labels;

  std::span<const double> unary_features(std::size_t i) const { return {phi1.data() + i * unary_dims, unary_dims}; }
  double pair_feature(std::size_t e, std::size_t f) const { return phi2.empty() ? 1.0 : phi2[e * pair_dims + f]; }
  std::size_t observed() const {
    std::size_t k = 0;
    for (int y : labels) k += y >= 0 ? 1 : 0;
    return k;
  }
};

inline CrfData make_crf_data(Graph graph, const FeatureCube& features, std::vector<int> labels = {}) {
  if (features.pixels() != graph.n_nodes) throw ModelError("feature cube does not match the graph");
  CrfData d;
  d.graph = std::move(graph);
  d.unary_dims = features.bands;
  d.phi1 = features.values;
  d.labels = labels.empty() ? std::vector<int>(d.graph.n_nodes, -1) : std::move(labels);
  return d;
}

inline void check_data(const CrfModel& model, const CrfData& d) {
  d.graph.validate();
  if (d.unary_dims != model.unary_dims || d.phi1.size() != d.graph.n_nodes * d.unary_dims)
    throw ModelError("unary feature dimension does not match the model");
  if (d.pair_dims != model.pair_dims || (!d.phi2.empty() && d.phi2.size() != d.graph.edges.size() * d.pair_dims))
    throw ModelError("pairwise feature dimension does not match the model");
  if (d.phi2.empty() && d.pair_dims != 1) throw ModelError("constant pairwise feature needs pair_dims = 1");
  if (!d.labels.empty()) {
    if (d.labels.size() != d.graph.n_nodes) throw ModelError("label vector does not match the graph");
    for (int y : d.labels)
      if (y < -1 || y >= static_cast<int>(model.classes)) throw ModelError("observed label out of range");
  }
}

inline EnergyModel crf_energy_model(const CrfModel& model, const CrfData& d) {
  check_data(model, d);
  const std::size_t M = model.classes, F1 = model.unary_dims, F2 = model.pair_dims;
  UnaryTable u(d.graph.n_nodes, M);
  for (std::size_t i = 0; i < d.graph.n_nodes; ++i) {
    const auto phi = d.unary_features(i);
    for (std::size_t c = 0; c < M; ++c) {
      double s = 0.0;
      for (std::size_t f = 0; f < F1; ++f) s += model.w1[c * F1 + f] * phi[f];
      u(i, c) = -s;
    }
  }
  if (d.phi2.empty()) {
    SharedTable t{std::vector<double>(M * M)};
    for (std::size_t k = 0; k < M * M; ++k) t.table[k] = -model.w2[k];
    return EnergyModel(d.graph, std::move(u), std::move(t));
  }
  const std::size_t E = d.graph.edges.size();
  EdgeTables t{std::vector<double>(E * M * M)};
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t ab = 0; ab < M * M; ++ab) {
      double s = 0.0;
      for (std::size_t f = 0; f < F2; ++f) s += model.w2[ab * F2 + f] * d.pair_feature(e, f);
      t.tables[e * M * M + ab] = -s;
    }
  return EnergyModel(d.graph, std::move(u), std::move(t));
}

// ---------------------------------------------------------------------------
// parameter packing
// ---------------------------------------------------------------------------

/// Free parameters: w1, then w2 (full, or the upper triangle with diagonal
/// when tied).
inline std::size_t parameter_count(const CrfModel& m) {
  const std::size_t M = m.classes;
  return M * m.unary_dims + (m.tied ? M * (M + 1) / 2 : M * M) * m.pair_dims;
}

inline std::vector<double> pack(const CrfModel& m) {
  std::vector<double> th(m.w1);
  const std::size_t M = m.classes;
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = m.tied ? a : 0; b < M; ++b)
      for (std::size_t f = 0; f < m.pair_dims; ++f) th.push_back(m.pair_w(a, b, f));
  return th;
}

inline void unpack(std::span<const double> th, CrfModel& m) {
  const std::size_t M = m.classes, n1 = M * m.unary_dims;
  std::copy(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(n1), m.w1.begin());
  std::size_t k = n1;
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = m.tied ? a : 0; b < M; ++b)
      for (std::size_t f = 0; f < m.pair_dims; ++f) {
        m.pair_w(a, b, f) = th[k];
        if (m.tied) m.pair_w(b, a, f) = th[k];
        ++k;
      }
}

/// Folds a gradient over the full (w1, w2) layout into packed coordinates.
inline std::vector<double> pack_gradient(const CrfModel& m, std::span<const double> g1, std::span<const double> g2) {
  std::vector<double> g(g1.begin(), g1.end());
  const std::size_t M = m.classes, F2 = m.pair_dims;
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = m.tied ? a : 0; b < M; ++b)
      for (std::size_t f = 0; f < F2; ++f) {
        double v = g2[(a * M + b) * F2 + f];
        if (m.tied && a != b) v += g2[(b * M + a) * F2 + f];
        g.push_back(v);
      }
  return g;
}

// ---------------------------------------------------------------------------
// objectives
// ---------------------------------------------------------------------------

enum class CrfObjective { mle, pseudo_likelihood };
enum class LatentHandling { marginalize, induced_subgraph };

struct CrfTrainConfig {
  CrfObjective objective = CrfObjective::mle;
  double l2 = 1e-2;
  std::size_t max_iters = 200;
  double tol = 1e-5;
  LatentHandling latent = LatentHandling::marginalize;
  bool tied = false;
  double exact_limit = 1e5;  // enumerate when M^n is at most this
  BpConfig bp{.mode = BpMode::sum_product, .max_iters = 50, .damping = 0.5, .tol = 1e-6, .edge_beliefs = true};
};

struct CrfObjectiveValue {
  double value = 0.0;
  std::vector<double> gradient;  // packed coordinates
  bool inference_converged = true;
};

namespace detail {

inline Marginals crf_marginals(const EnergyModel& m, const CrfTrainConfig& cfg, std::vector<double>* messages) {
  if (configuration_count(m) <= cfg.exact_limit) return brute_force_marginals(m, cfg.exact_limit);
  BpConfig bp = cfg.bp;
  bp.mode = BpMode::sum_product;
  bp.edge_beliefs = true;
  return loopy_bp(m, bp, messages).marginals;
}

/// Adds sum_i b_i(c) phi1_i and sum_e b_e(a, b) phi2_e scaled by `sign`.
inline void accumulate_expectation(const Marginals& mg, const CrfData& d, std::size_t M, double sign,
                                   std::span<double> g1, std::span<double> g2) {
  const std::size_t F1 = d.unary_dims, F2 = d.pair_dims;
  for (std::size_t i = 0; i < d.graph.n_nodes; ++i) {
    const auto b = mg.node_belief(i);
    const auto phi = d.unary_features(i);
    for (std::size_t c = 0; c < M; ++c) {
      if (b[c] == 0.0) continue;
      for (std::size_t f = 0; f < F1; ++f) g1[c * F1 + f] += sign * b[c] * phi[f];
    }
  }
  for (std::size_t e = 0; e < d.graph.edges.size(); ++e) {
    const auto b = mg.edge_belief(e);
    for (std::size_t ab = 0; ab < M * M; ++ab) {
      if (b[ab] == 0.0) continue;
      for (std::size_t f = 0; f < F2; ++f) g2[ab * F2 + f] += sign * b[ab] * d.pair_feature(e, f);
    }
  }
}

inline void accumulate_observed(const CrfData& d, std::size_t M, double sign, std::span<double> g1,
                                std::span<double> g2) {
  const std::size_t F1 = d.unary_dims, F2 = d.pair_dims;
  for (std::size_t i = 0; i < d.graph.n_nodes; ++i) {
    const auto c = static_cast<std::size_t>(d.labels[i]);
    const auto phi = d.unary_features(i);
    for (std::size_t f = 0; f < F1; ++f) g1[c * F1 + f] += sign * phi[f];
  }
  for (std::size_t e = 0; e < d.graph.edges.size(); ++e) {
    const auto ab = static_cast<std::size_t>(d.labels[d.graph.edges[e].i]) * M +
                    static_cast<std::size_t>(d.labels[d.graph.edges[e].j]);
    for (std::size_t f = 0; f < F2; ++f) g2[ab * F2 + f] += sign * d.pair_feature(e, f);
  }
}

inline double add_l2(double l2, double value, std::span<const double> th, std::vector<double>& g) {
  double sq = 0.0;
  for (std::size_t k = 0; k < th.size(); ++k) {
    sq += th[k] * th[k];
    g[k] += l2 * th[k];
  }
  return value + 0.5 * l2 * sq;
}

}  // namespace detail

/// Keeps the nodes with keep[i] and the edges between them; returns the
/// subgraph data and the original index of each kept node.
inline std::pair<CrfData, std::vector<std::size_t>> induced_subgraph(const CrfData& d, const std::vector<bool>& keep) {
  std::vector<std::size_t> old_of_new;
  std::vector<long> new_of_old(d.graph.n_nodes, -1);
  for (std::size_t i = 0; i < d.graph.n_nodes; ++i)
    if (keep[i]) {
      new_of_old[i] = static_cast<long>(old_of_new.size());
      old_of_new.push_back(i);
    }
  CrfData s;
  s.graph.n_nodes = old_of_new.size();
  s.unary_dims = d.unary_dims;
  s.pair_dims = d.pair_dims;
  for (std::size_t i : old_of_new) {
    const auto phi = d.unary_features(i);
    s.phi1.insert(s.phi1.end(), phi.begin(), phi.end());
    s.labels.push_back(d.labels.empty() ? -1 : d.labels[i]);
  }
  for (std::size_t e = 0; e < d.graph.edges.size(); ++e) {
    const auto [i, j] = d.graph.edges[e];
    if (new_of_old[i] < 0 || new_of_old[j] < 0) continue;
    s.graph.edges.push_back({static_cast<std::uint32_t>(new_of_old[i]), static_cast<std::uint32_t>(new_of_old[j])});
    if (!d.phi2.empty())
      for (std::size_t f = 0; f < d.pair_dims; ++f) s.phi2.push_back(d.phi2[e * d.pair_dims + f]);
  }
  return {std::move(s), std::move(old_of_new)};
}

inline CrfData observed_subgraph(const CrfData& d) {
  std::vector<bool> keep(d.graph.n_nodes);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = d.labels[i] >= 0;
  return induced_subgraph(d, keep).first;
}

/// BP messages kept between objective evaluations during training.
struct CrfWorkspace {
  std::vector<double> free_messages;
  std::vector<double> clamped_messages;
};

/// -log p(y_observed | x) + (l2 / 2) ||theta||^2. Latent nodes are summed
/// out, so the gradient is E_free[phi] - E_clamped[phi] + l2 theta.
inline CrfObjectiveValue negll_and_grad(const CrfModel& model, const CrfData& d, const CrfTrainConfig& cfg,
                                        CrfWorkspace* ws = nullptr) {
  check_data(model, d);
  if (d.observed() == 0) throw ModelError("CRF training needs at least one observed node");
  const std::size_t M = model.classes;
  std::vector<double> g1(model.w1.size(), 0.0), g2(model.w2.size(), 0.0);
  CrfObjectiveValue out;

  const EnergyModel free_model = crf_energy_model(model, d);
  const Marginals free_mg = detail::crf_marginals(free_model, cfg, ws ? &ws->free_messages : nullptr);
  out.inference_converged = free_mg.converged;
  detail::accumulate_expectation(free_mg, d, M, +1.0, g1, g2);

  double log_z_clamped = 0.0;
  if (d.observed() == d.graph.n_nodes) {
    log_z_clamped = -total_energy(free_model, d.labels);
    detail::accumulate_observed(d, M, -1.0, g1, g2);
  } else {
    UnaryTable u = free_model.unary();
    for (std::size_t i = 0; i < d.graph.n_nodes; ++i)
      if (d.labels[i] >= 0)
        for (std::size_t c = 0; c < M; ++c)
          if (static_cast<int>(c) != d.labels[i]) u(i, c) = std::numeric_limits<double>::infinity();
    const EnergyModel clamped(d.graph, std::move(u), free_model.pairwise());
    const Marginals cm = detail::crf_marginals(clamped, cfg, ws ? &ws->clamped_messages : nullptr);
    out.inference_converged = out.inference_converged && cm.converged;
    log_z_clamped = cm.log_z;
    detail::accumulate_expectation(cm, d, M, -1.0, g1, g2);
  }
  out.gradient = pack_gradient(model, g1, g2);
  const auto th = pack(model);
  out.value = detail::add_l2(cfg.l2, free_mg.log_z - log_z_clamped, th, out.gradient);
  return out;
}

/// sum_i -ln p(y_i | y_neighbors, x) + (l2 / 2) ||theta||^2 with every node
/// observed.
inline CrfObjectiveValue pseudo_likelihood_negll_and_grad(const CrfModel& model, const CrfData& d, double l2) {
  check_data(model, d);
  if (d.observed() != d.graph.n_nodes)
    throw ModelError("pseudo-likelihood needs every node observed; use the induced subgraph");
  const std::size_t M = model.classes, F1 = model.unary_dims, F2 = model.pair_dims, n = d.graph.n_nodes;
  std::vector<double> g1(model.w1.size(), 0.0), g2(model.w2.size(), 0.0);
  const EnergyModel em = crf_energy_model(model, d);
  std::vector<double> s(M);
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < M; ++c) s[c] = -local_energy(em, d.labels, i, static_cast<int>(c));
    double hi = s[0];
    for (double v : s) hi = std::max(hi, v);
    double z = 0.0;
    for (double v : s) z += std::exp(v - hi);
    const double lse = hi + std::log(z);
    const auto yi = static_cast<std::size_t>(d.labels[i]);
    value += lse - s[yi];
    // d/dtheta: sum_c p(c) dscore(c) - dscore(y_i)
    for (std::size_t c = 0; c < M; ++c) {
      const double coef = std::exp(s[c] - lse) - (c == yi ? 1.0 : 0.0);
      if (coef == 0.0) continue;
      const auto phi = d.unary_features(i);
      for (std::size_t f = 0; f < F1; ++f) g1[c * F1 + f] += coef * phi[f];
      for (const auto& inc : em.incident(i)) {
        const auto yj = static_cast<std::size_t>(d.labels[inc.neighbor]);
        const std::size_t ab = inc.first ? c * M + yj : yj * M + c;
        for (std::size_t f = 0; f < F2; ++f) g2[ab * F2 + f] += coef * d.pair_feature(inc.edge, f);
      }
    }
  }
  CrfObjectiveValue out;
  out.gradient = pack_gradient(model, g1, g2);
  const auto th = pack(model);
  out.value = detail::add_l2(l2, value, th, out.gradient);
  return out;
}

// ---------------------------------------------------------------------------
// training and prediction
// ---------------------------------------------------------------------------

struct CrfTrainResult {
  CrfModel model;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
  std::size_t nonconverged_inference = 0;  // objective evaluations where BP did not converge
  std::vector<double> trace;
};

inline CrfTrainResult train_crf(const CrfData& data, std::size_t classes, const CrfTrainConfig& cfg) {
  if (!(cfg.l2 >= 0.0)) throw ModelError("l2 must be >= 0");
  if (classes < 1) throw ModelError("CRF needs at least one class");
  CrfModel model(classes, data.unary_dims, data.pair_dims, cfg.tied);
  model.l2 = cfg.l2;
  check_data(model, data);

  const bool need_full = cfg.objective == CrfObjective::pseudo_likelihood || cfg.latent == LatentHandling::induced_subgraph;
  const CrfData fit = need_full && data.observed() != data.graph.n_nodes ? observed_subgraph(data) : data;
  if (fit.observed() == 0) throw ModelError("CRF training needs at least one observed node");

  CrfTrainResult res;
  CrfModel work = model;
  CrfWorkspace ws;
  auto f = [&](std::span<const double> th, std::span<double> g) {
    unpack(th, work);
    CrfObjectiveValue v = cfg.objective == CrfObjective::mle ? negll_and_grad(work, fit, cfg, &ws)
                                                              : pseudo_likelihood_negll_and_grad(work, fit, cfg.l2);
    if (!v.inference_converged) ++res.nonconverged_inference;
    std::copy(v.gradient.begin(), v.gradient.end(), g.begin());
    return v.value;
  };
  DescentOptions opt;
  opt.max_iters = cfg.max_iters;
  opt.grad_tol = cfg.tol;
  opt.record_trace = true;
  auto r = gradient_descent(f, pack(model), opt);
  unpack(r.x, model);
  res.model = std::move(model);
  res.objective = r.value;
  res.iterations = r.iterations;
  res.converged = r.converged;
  res.line_search_failed = r.line_search_failed;
  res.trace = std::move(r.trace);
  return res;
}

struct CrfPrediction {
  Labeling labels;
  Marginals marginals;
};

/// Max of marginals: sum-product beliefs, per-node argmax.
inline CrfPrediction crf_predict(const CrfModel& model, const CrfData& d, BpConfig cfg = {}) {
  cfg.mode = BpMode::sum_product;
  auto r = loopy_bp(crf_energy_model(model, d), cfg);
  return {std::move(r.labels), std::move(r.marginals)};
}

// ---------------------------------------------------------------------------
// serialization: text header + binary blob
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kCrfMagic{'U', 'G', 'M', 'C', 'R', 'F', '0', '1'};
inline constexpr std::uint32_t kCrfVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& where) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError(where + ": truncated CRF blob");
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  return v;
}

}  // namespace detail

inline void save_crf(const CrfModel& m, const fs::path& header_path) {
  const fs::path blob = sidecar_path(header_path, ".bin");
  {
    std::ofstream out(blob, std::ios::binary);
    if (!out) throw FormatError("cannot write " + blob.string());
    out.write(kCrfMagic.data(), kCrfMagic.size());
    detail::put<std::uint32_t>(out, kCrfVersion);
    detail::put<std::uint64_t>(out, m.classes);
    detail::put<std::uint64_t>(out, m.unary_dims);
    detail::put<std::uint64_t>(out, m.pair_dims);
    detail::put<std::uint8_t>(out, m.tied ? 1 : 0);
    for (double w : m.w1) detail::put(out, w);
    for (double w : m.w2) detail::put(out, w);
  }
  KeyValues kv;
  kv.set("kind", std::string("crf"));
  kv.set("version", static_cast<std::size_t>(kCrfVersion));
  kv.set("classes", m.classes);
  kv.set("unary_dims", m.unary_dims);
  kv.set("pair_dims", m.pair_dims);
  kv.set("tied", std::string(m.tied ? "1" : "0"));
  kv.set("l2", m.l2);
  kv.set("data", blob.filename().string());
  kv.save(header_path);
}

inline CrfModel load_crf(const fs::path& header_path) {
  const auto kv = KeyValues::load(header_path);
  const std::string where = header_path.string();
  if (kv.get_or("kind", "") != "crf") throw FormatError(where + ": not a CRF model");
  const fs::path blob = header_path.parent_path() / kv.get("data");
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw FormatError("cannot open " + blob.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCrfMagic) throw FormatError(blob.string() + ": bad magic");
  const auto version = detail::get<std::uint32_t>(in, where);
  if (version != kCrfVersion) throw FormatError(where + ": unsupported CRF version " + std::to_string(version));
  const auto classes = detail::get<std::uint64_t>(in, where);
  const auto unary_dims = detail::get<std::uint64_t>(in, where);
  const auto pair_dims = detail::get<std::uint64_t>(in, where);
  const bool tied = detail::get<std::uint8_t>(in, where) != 0;
  CrfModel m(classes, unary_dims, pair_dims, tied);
  if (m.classes != kv.get_size("classes") || m.unary_dims != kv.get_size("unary_dims") ||
      m.pair_dims != kv.get_size("pair_dims"))
    throw FormatError(where + ": header and blob disagree");
  m.l2 = kv.get_double("l2");
  for (double& w : m.w1) w = detail::get<double>(in, where);
  for (double& w : m.w2) w = detail::get<double>(in, where);
  for (double w : m.w1)
    if (!std::isfinite(w)) throw FormatError(where + ": non-finite weight");
  for (double w : m.w2)
    if (!std::isfinite(w)) throw FormatError(where + ": non-finite weight");
  return m;
}

}  // namespace ugm
