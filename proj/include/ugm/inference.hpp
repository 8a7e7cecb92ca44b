#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/energy.hpp"
#include "ugm/error.hpp"
#include "ugm/maxflow.hpp"

namespace ugm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ICM
// ---------------------------------------------------------------------------

struct IcmOptions {
  std::size_t max_sweeps = 1000;
  bool record_trace = false;
};

struct IcmResult {
  Labeling labels;
  double energy = 0.0;
  std::size_t sweeps = 0;
  bool converged = false;
  std::vector<double> trace;  // energy after each accepted update
};

/// Raster sweeps; a node moves only to a strictly lower conditional energy
/// (lowest class among the best), so the result is a fixed point and
/// total energy never increases.
inline IcmResult icm(const EnergyModel& m, Labeling init, const IcmOptions& opt = {}) {
  check_labeling(m, init);
  IcmResult r;
  r.labels = std::move(init);
  r.energy = total_energy(m, r.labels);
  if (opt.record_trace) r.trace.push_back(r.energy);
  const auto M = static_cast<int>(m.classes());
  while (r.sweeps < opt.max_sweeps) {
    ++r.sweeps;
    bool changed = false;
    for (std::size_t i = 0; i < m.nodes(); ++i) {
      const int cur = r.labels[i];
      const double e_cur = local_energy(m, r.labels, i, cur);
      int best = cur;
      double e_best = e_cur;
      for (int c = 0; c < M; ++c) {
        if (c == cur) continue;
        const double e = local_energy(m, r.labels, i, c);
        if (e < e_best) {
          e_best = e;
          best = c;
        }
      }
      if (best != cur) {
        r.labels[i] = best;
        r.energy += e_best - e_cur;
        changed = true;
        if (opt.record_trace) r.trace.push_back(r.energy);
      }
    }
    if (!changed) {
      r.converged = true;
      break;
    }
  }
  r.energy = total_energy(m, r.labels);
  return r;
}

// ---------------------------------------------------------------------------
// binary submodular energies via min-cut
// ---------------------------------------------------------------------------

/// Builds the flow network of a binary pairwise energy with x = 1 meaning the
/// sink side: E = A + (C-A) x_i + (D-C) x_j + (B+C-A-D) (1-x_i) x_j for a
/// pair table [A B; C D].
class BinaryCut {
 public:
  void reset(std::size_t n) {
    solver_.reset(n);
    slope_.assign(n, 0.0);
  }

  void add_unary(std::size_t i, double e0, double e1) { slope_[i] += e1 - e0; }

  /// Returns false when the pair is not submodular.
  bool add_pair(std::size_t i, std::size_t j, double A, double B, double C, double D) {
    slope_[i] += C - A;
    slope_[j] += D - C;
    double w = B + C - A - D;
    const double tol = 1e-12 * (std::abs(A) + std::abs(B) + std::abs(C) + std::abs(D) + 1.0);
    if (w < -tol) return false;
    if (w > 0) solver_.add_edge(i, j, w, 0.0);
    return true;
  }

  /// Solves and writes x_i in {0, 1}.
  void solve(std::vector<int>& x) {
    for (std::size_t i = 0; i < slope_.size(); ++i) {
      if (slope_[i] > 0)
        solver_.add_terminal(i, slope_[i], 0.0);
      else if (slope_[i] < 0)
        solver_.add_terminal(i, 0.0, -slope_[i]);
    }
    solver_.solve();
    x.resize(slope_.size());
    for (std::size_t i = 0; i < slope_.size(); ++i) x[i] = solver_.source_side(i) ? 0 : 1;
  }

 private:
  MaxFlowSolver solver_;
  std::vector<double> slope_;
};

/// Exact MAP of a two-class model whose every edge satisfies
/// E(0,0) + E(1,1) <= E(0,1) + E(1,0).
inline Labeling binary_submodular_map(const EnergyModel& m) {
  if (m.classes() != 2) throw ModelError("binary_submodular_map needs exactly two classes");
  BinaryCut cut;
  cut.reset(m.nodes());
  for (std::size_t i = 0; i < m.nodes(); ++i) cut.add_unary(i, m.unary()(i, 0), m.unary()(i, 1));
  const auto& edges = m.graph().edges;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (!cut.add_pair(edges[e].i, edges[e].j, m.pair(e, 0, 0), m.pair(e, 0, 1), m.pair(e, 1, 0), m.pair(e, 1, 1)))
      throw ModelError("edge " + std::to_string(e) + " (" + std::to_string(edges[e].i) + ", " +
                       std::to_string(edges[e].j) + ") is not submodular");
  }
  Labeling x;
  cut.solve(x);
  return x;
}

// ---------------------------------------------------------------------------
// alpha-expansion
// ---------------------------------------------------------------------------

struct ExpansionResult {
  Labeling labels;
  double energy = 0.0;
  std::size_t cycles = 0;
  std::size_t moves_accepted = 0;
  bool converged = false;      // a full cycle produced no strict decrease
  std::vector<double> trace;   // energy after every accepted move
};

/// Cycles alpha = 0..M-1; each expansion move is an exact binary min-cut.
/// A move is kept only when it strictly lowers the energy; the loop stops
/// after a cycle without improvement or after max_cycles cycles.
inline ExpansionResult alpha_expansion(const EnergyModel& m, std::optional<Labeling> init = std::nullopt,
                                       std::size_t max_cycles = 15) {
  if (max_cycles < 1) throw ModelError("alpha-expansion needs max_cycles >= 1");
  if (const long bad = first_non_metric_edge(m); bad >= 0)
    throw ModelError("pairwise term of edge " + std::to_string(bad) + " is not a metric");
  ExpansionResult r;
  r.labels = init ? std::move(*init) : unary_argmin(m);
  r.energy = total_energy(m, r.labels);
  r.trace.push_back(r.energy);
  const auto M = static_cast<int>(m.classes());
  const auto& edges = m.graph().edges;
  BinaryCut cut;
  std::vector<int> x;
  Labeling proposal;
  while (r.cycles < max_cycles) {
    ++r.cycles;
    bool improved = false;
    for (int alpha = 0; alpha < M; ++alpha) {
      cut.reset(m.nodes());
      for (std::size_t i = 0; i < m.nodes(); ++i)
        if (r.labels[i] != alpha)
          cut.add_unary(i, m.unary()(i, static_cast<std::size_t>(r.labels[i])),
                        m.unary()(i, static_cast<std::size_t>(alpha)));
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const int yi = r.labels[edges[e].i], yj = r.labels[edges[e].j];
        if (yi == alpha && yj == alpha) continue;
        const double A = m.pair(e, yi, yj), B = m.pair(e, yi, alpha), C = m.pair(e, alpha, yj),
                     D = m.pair(e, alpha, alpha);
        if (!cut.add_pair(edges[e].i, edges[e].j, A, B, C, D))
          throw ModelError("expansion move on edge " + std::to_string(e) + " is not submodular");
      }
      cut.solve(x);
      proposal = r.labels;
      bool any = false;
      for (std::size_t i = 0; i < m.nodes(); ++i)
        if (x[i] == 1 && proposal[i] != alpha) {
          proposal[i] = alpha;
          any = true;
        }
      if (!any) continue;
      const double e_new = total_energy(m, proposal);
      if (e_new < r.energy - 1e-12 * (1.0 + std::abs(r.energy))) {
        r.labels.swap(proposal);
        r.energy = e_new;
        ++r.moves_accepted;
        r.trace.push_back(r.energy);
        improved = true;
      }
    }
    if (!improved) {
      r.converged = true;
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// loopy belief propagation
// ---------------------------------------------------------------------------

enum class BpMode { sum_product, max_product };

struct BpConfig {
  BpMode mode = BpMode::sum_product;
  std::size_t max_iters = 100;
  double damping = 0.5;
  double tol = 1e-6;
  bool edge_beliefs = true;
};

struct BpResult {
  Marginals marginals;  // log_z is the Bethe estimate (NaN for max-product)
  Labeling labels;      // per-node argmax of the beliefs
};

namespace detail {

inline double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

/// Normalizes energies e into probabilities in place; returns min(e).
inline double energies_to_probs(std::span<double> e) {
  double lo = std::numeric_limits<double>::infinity();
  for (double v : e) lo = std::min(lo, v);
  double s = 0.0;
  for (double& v : e) {
    v = std::exp(-(v - lo));
    s += v;
  }
  for (double& v : e) v /= s;
  return lo;
}

}  // namespace detail

/// Loopy BP with messages in the energy (-log) domain, normalized so that
/// each message has minimum 0, damped as (1 - damping) * new + damping * old,
/// and scheduled as a raster sweep over nodes. Beliefs and the Bethe log Z are
/// exact on trees at convergence. When `messages` is non-null it warm-starts
/// the run (if it has the right size) and receives the final messages.
inline BpResult loopy_bp(const EnergyModel& m, const BpConfig& cfg = {}, std::vector<double>* messages = nullptr) {
  if (!(cfg.tol > 0.0)) throw ModelError("BP tolerance must be positive");
  if (!(cfg.damping >= 0.0 && cfg.damping < 1.0)) throw ModelError("BP damping must lie in [0, 1)");
  const std::size_t M = m.classes(), n = m.nodes(), E = m.edges();
  const bool sum = cfg.mode == BpMode::sum_product;
  const bool potts = m.is_potts() && m.potts_beta() >= 0.0;
  const double beta = potts ? m.potts_beta() : 0.0;
  const double exp_neg_beta = std::exp(-beta);
  const auto& edges = m.graph().edges;

  // Dense pairwise tables (row = label of edge.i) for everything but the
  // attractive Potts closed form, plus exp(-(T - min T)) kernels for
  // sum-product. Tables spanning more than 500 nats fall back to log-sum-exp.
  std::vector<double> dense;
  bool per_edge = false;
  if (!potts) {
    if (const auto* st = std::get_if<SharedTable>(&m.pairwise())) {
      dense = st->table;
    } else if (const auto* et = std::get_if<EdgeTables>(&m.pairwise())) {
      dense = et->tables;
      per_edge = true;
    } else {
      dense.assign(M * M, m.potts_beta());
      for (std::size_t a = 0; a < M; ++a) dense[a * M + a] = 0.0;
    }
  }
  const std::size_t n_tables = potts ? 0 : (per_edge ? E : 1);
  std::vector<double> kernel(dense.size()), table_min(n_tables);
  std::vector<char> has_kernel(n_tables, 0);
  for (std::size_t k = 0; k < n_tables; ++k) {
    const double* t = dense.data() + k * M * M;
    const auto [lo, hi] = std::minmax_element(t, t + M * M);
    table_min[k] = *lo;
    has_kernel[k] = *hi - *lo <= 500.0;
    for (std::size_t ab = 0; ab < M * M; ++ab) kernel[k * M * M + ab] = std::exp(-(t[ab] - *lo));
  }

  // msg[(2e + 0) * M + b]: edge.i -> edge.j ; msg[(2e + 1) * M + a]: edge.j -> edge.i
  std::vector<double> msg(2 * E * M, 0.0);
  if (messages && messages->size() == msg.size()) msg = *messages;
  auto in_msg = [&](const Incidence& inc) {  // message neighbor -> owner
    return msg.data() + (2 * inc.edge + (inc.first ? 1 : 0)) * M;
  };
  auto out_msg = [&](const Incidence& inc) {  // message owner -> neighbor
    return msg.data() + (2 * inc.edge + (inc.first ? 0 : 1)) * M;
  };

  std::vector<double> total(M), h(M), g(M), fresh(M);
  auto incoming_total = [&](std::size_t i) {
    for (std::size_t a = 0; a < M; ++a) total[a] = m.unary()(i, a);
    for (const auto& inc : m.incident(i)) {
      const double* mi = in_msg(inc);
      for (std::size_t a = 0; a < M; ++a) total[a] += mi[a];
    }
  };

  BpResult res;
  res.marginals.classes = M;
  res.marginals.converged = false;
  std::size_t iter = 0;
  while (iter < cfg.max_iters) {
    ++iter;
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      incoming_total(i);
      for (const auto& inc : m.incident(i)) {
        const double* back = in_msg(inc);
        double hmin = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < M; ++a) {
          h[a] = total[a] - back[a];
          hmin = std::min(hmin, h[a]);
        }
        if (potts) {
          if (sum) {
            double s = 0.0;
            for (std::size_t a = 0; a < M; ++a) s += std::exp(-(h[a] - hmin));
            for (std::size_t b = 0; b < M; ++b)
              fresh[b] = hmin - std::log(exp_neg_beta * s + (1.0 - exp_neg_beta) * std::exp(-(h[b] - hmin)));
          } else {
            for (std::size_t b = 0; b < M; ++b) fresh[b] = std::min(h[b], hmin + beta);
          }
        } else {
          const std::size_t k = per_edge ? inc.edge : 0;
          const double* t = dense.data() + k * M * M;
          // stride pair (row step, column step) so that t[a * sa + b * sb] = E(owner = a, target = b)
          const std::size_t sa = inc.first ? M : 1, sb = inc.first ? 1 : M;
          if (sum && has_kernel[k]) {
            const double* kt = kernel.data() + k * M * M;
            for (std::size_t a = 0; a < M; ++a) g[a] = std::exp(-(h[a] - hmin));
            for (std::size_t b = 0; b < M; ++b) {
              double acc = 0.0;
              for (std::size_t a = 0; a < M; ++a) acc += g[a] * kt[a * sa + b * sb];
              fresh[b] = hmin + table_min[k] - std::log(acc);
            }
          } else {
            for (std::size_t b = 0; b < M; ++b) {
              double lo = std::numeric_limits<double>::infinity();
              for (std::size_t a = 0; a < M; ++a) lo = std::min(lo, h[a] + t[a * sa + b * sb]);
              if (sum) {
                double acc = 0.0;
                for (std::size_t a = 0; a < M; ++a) acc += std::exp(-(h[a] + t[a * sa + b * sb] - lo));
                fresh[b] = lo - std::log(acc);
              } else {
                fresh[b] = lo;
              }
            }
          }
        }
        double fmin = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < M; ++b) fmin = std::min(fmin, fresh[b]);
        double* out = out_msg(inc);
        double omin = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < M; ++b) {
          const double v = (1.0 - cfg.damping) * (fresh[b] - fmin) + cfg.damping * out[b];
          fresh[b] = v;
          omin = std::min(omin, v);
        }
        for (std::size_t b = 0; b < M; ++b) {
          const double v = fresh[b] - omin;
          delta = std::max(delta, std::abs(v - out[b]));
          out[b] = v;
        }
      }
    }
    if (delta < cfg.tol) {
      res.marginals.converged = true;
      break;
    }
  }
  res.marginals.iterations = iter;
  if (messages) *messages = msg;

  // node beliefs
  auto& mg = res.marginals;
  mg.node.assign(n * M, 0.0);
  res.labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    incoming_total(i);
    std::span<double> b(mg.node.data() + i * M, M);
    for (std::size_t a = 0; a < M; ++a) b[a] = total[a];
    detail::energies_to_probs(b);
    res.labels[i] = argmax(std::span<const double>(b.data(), b.size()));
  }

  if (!sum) {
    mg.log_z = std::numeric_limits<double>::quiet_NaN();
    return res;
  }

  // edge beliefs and the Bethe free energy
  double avg_energy = 0.0, entropy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = mg.node_belief(i);
    const auto degree = static_cast<double>(m.incident(i).size());
    double hi = 0.0;
    for (std::size_t a = 0; a < M; ++a) {
      if (b[a] > 0.0) avg_energy += b[a] * m.unary()(i, a);
      hi -= detail::xlogx(b[a]);
    }
    entropy += (1.0 - degree) * hi;
  }
  {
    mg.edge.assign(E * M * M, 0.0);
    std::vector<double> hi(M), hj(M);
    for (std::size_t e = 0; e < E; ++e) {
      const std::size_t i = edges[e].i, j = edges[e].j;
      // cavity fields: everything at i except the message from j, and vice versa
      const double* m_ji = msg.data() + (2 * e + 1) * M;
      const double* m_ij = msg.data() + (2 * e + 0) * M;
      incoming_total(i);
      for (std::size_t a = 0; a < M; ++a) hi[a] = total[a] - m_ji[a];
      incoming_total(j);
      for (std::size_t b = 0; b < M; ++b) hj[b] = total[b] - m_ij[b];
      std::span<double> be(mg.edge.data() + e * M * M, M * M);
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b)
          be[a * M + b] = hi[a] + hj[b] + m.pair(e, static_cast<int>(a), static_cast<int>(b));
      detail::energies_to_probs(be);
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b) {
          const double p = be[a * M + b];
          if (p > 0.0) avg_energy += p * m.pair(e, static_cast<int>(a), static_cast<int>(b));
          entropy -= detail::xlogx(p);
        }
    }
  }
  mg.log_z = entropy - avg_energy;
  if (!cfg.edge_beliefs) mg.edge.clear();
  return res;
}

// ---------------------------------------------------------------------------
// dispatcher
// ---------------------------------------------------------------------------

enum class MapMethod { icm, alpha_expansion, max_marginals };

inline MapMethod parse_map_method(const std::string& s) {
  if (s == "icm") return MapMethod::icm;
  if (s == "alpha-expansion" || s == "alpha_expansion" || s == "graphcut") return MapMethod::alpha_expansion;
  if (s == "max-marginals" || s == "max_marginals" || s == "bp") return MapMethod::max_marginals;
  throw ModelError("unknown inference method '" + s + "'");
}

inline std::string to_string(MapMethod m) {
  switch (m) {
    case MapMethod::icm: return "icm";
    case MapMethod::alpha_expansion: return "alpha-expansion";
    default: return "max-marginals";
  }
}

struct MapOptions {
  std::optional<Labeling> init;  // default: unary argmin
  std::size_t max_cycles = 15;
  IcmOptions icm;
  BpConfig bp{.edge_beliefs = false};
};

struct InferenceReport {
  std::string method;
  Labeling labels;
  double energy = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double wall_ms = 0.0;
};

inline InferenceReport map_infer(const EnergyModel& m, MapMethod method, const MapOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  InferenceReport rep;
  rep.method = to_string(method);
  switch (method) {
    case MapMethod::icm: {
      auto r = icm(m, opt.init ? *opt.init : unary_argmin(m), opt.icm);
      rep.labels = std::move(r.labels);
      rep.iterations = r.sweeps;
      rep.converged = r.converged;
      break;
    }
    case MapMethod::alpha_expansion: {
      auto r = alpha_expansion(m, opt.init, opt.max_cycles);
      rep.labels = std::move(r.labels);
      rep.iterations = r.cycles;
      rep.converged = r.converged;
      break;
    }
    case MapMethod::max_marginals: {
      auto r = loopy_bp(m, opt.bp);
      rep.labels = std::move(r.labels);
      rep.iterations = r.marginals.iterations;
      rep.converged = r.marginals.converged;
      break;
    }
  }
  rep.energy = total_energy(m, rep.labels);
  rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline InferenceReport map_infer(const EnergyModel& m, const std::string& method, const MapOptions& opt = {}) {
  return map_infer(m, parse_map_method(method), opt);
}

/// CSV: method,energy,iterations,converged,wall_ms
inline void write_report_csv(std::span<const InferenceReport> reports, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  out << "method,energy,iterations,converged,wall_ms\n";
  for (const auto& r : reports)
    out << r.method << ',' << r.energy << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ',' << r.wall_ms << '\n';
}

}  // namespace ugm
