#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ugm/error.hpp"

namespace ugm {

/// Class indices inside the inference layer are 0-based (0..M-1). Label maps
/// on disk use 1..M with 0 reserved for unlabeled pixels.
using Labeling = std::vector<int>;

struct Edge {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct Graph {
  std::size_t n_nodes = 0;
  std::vector<Edge> edges;   // i < j, no duplicates
  std::size_t grid_width = 0;  // nonzero when node id = row * grid_width + col

  /// Throws ModelError on self loops, duplicates, unordered pairs, or out-of-range ids.
  void validate() const {
    std::vector<Edge> sorted = edges;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto& ed = edges[e];
      if (ed.i >= ed.j) throw ModelError("edge " + std::to_string(e) + " is not ordered i < j");
      if (ed.j >= n_nodes) throw ModelError("edge " + std::to_string(e) + " references a missing node");
    }
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ModelError("graph has duplicate edges");
  }
};

/// 4-connected grid; node id = row * width + col. Edges are listed per pixel
/// in raster order: right neighbor, then down neighbor.
inline Graph grid_graph(std::size_t height, std::size_t width) {
  Graph g;
  g.n_nodes = height * width;
  g.grid_width = width;
  g.edges.reserve(2 * height * width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const auto id = static_cast<std::uint32_t>(r * width + c);
      if (c + 1 < width) g.edges.push_back({id, id + 1});
      if (r + 1 < height) g.edges.push_back({id, static_cast<std::uint32_t>(id + width)});
    }
  return g;
}

/// n_nodes x M energies, row-major.
struct UnaryTable {
  std::size_t nodes = 0;
  std::size_t classes = 0;
  std::vector<double> values;

  UnaryTable() = default;
  UnaryTable(std::size_t n, std::size_t m, double fill = 0.0) : nodes(n), classes(m), values(n * m, fill) {}
  double& operator()(std::size_t i, std::size_t c) { return values[i * classes + c]; }
  double operator()(std::size_t i, std::size_t c) const { return values[i * classes + c]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * classes, classes}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * classes, classes}; }
};

/// beta * [a != b]
struct Potts {
  double beta = 0.0;
};
/// One M x M table (row = label of the edge's first node) used on every edge.
struct SharedTable {
  std::vector<double> table;
};
/// n_edges x M x M tables.
struct EdgeTables {
  std::vector<double> tables;
};
using PairwiseSpec = std::variant<Potts, SharedTable, EdgeTables>;

/// Incidence entry: the neighbor, the edge id, and whether the owning node is
/// the edge's first endpoint.
struct Incidence {
  std::uint32_t neighbor;
  std::uint32_t edge;
  bool first;
};

/// Immutable pairwise energy E(y) = sum_i E_i(y_i) + sum_(i,j) E_ij(y_i, y_j),
/// in natural-log units.
class EnergyModel {
 public:
  EnergyModel(Graph graph, UnaryTable unary, PairwiseSpec pairwise)
      : graph_(std::move(graph)), unary_(std::move(unary)), pairwise_(std::move(pairwise)) {
    graph_.validate();
    const std::size_t M = unary_.classes;
    if (M == 0) throw ModelError("model needs at least one class");
    if (unary_.nodes != graph_.n_nodes || unary_.values.size() != unary_.nodes * M)
      throw ModelError("unary table does not match the graph");
    for (double v : unary_.values)
      if (std::isnan(v) || v == -std::numeric_limits<double>::infinity())
        throw ModelError("unary energies must not be NaN or -inf");
    if (auto* p = std::get_if<Potts>(&pairwise_)) {
      if (!std::isfinite(p->beta)) throw ModelError("Potts beta must be finite");
    } else if (auto* s = std::get_if<SharedTable>(&pairwise_)) {
      if (s->table.size() != M * M) throw ModelError("shared pairwise table must be M x M");
      for (double v : s->table)
        if (!std::isfinite(v)) throw ModelError("pairwise energies must be finite");
    } else {
      const auto& t = std::get<EdgeTables>(pairwise_);
      if (t.tables.size() != graph_.edges.size() * M * M)
        throw ModelError("per-edge pairwise tables must be n_edges x M x M");
      for (double v : t.tables)
        if (!std::isfinite(v)) throw ModelError("pairwise energies must be finite");
    }
    build_incidence();
  }

  const Graph& graph() const { return graph_; }
  const UnaryTable& unary() const { return unary_; }
  const PairwiseSpec& pairwise() const { return pairwise_; }
  std::size_t nodes() const { return graph_.n_nodes; }
  std::size_t classes() const { return unary_.classes; }
  std::size_t edges() const { return graph_.edges.size(); }

  bool is_potts() const { return std::holds_alternative<Potts>(pairwise_); }
  double potts_beta() const { return std::get<Potts>(pairwise_).beta; }

  /// E_ij(a, b) for edge e, with a the label of edge.i and b of edge.j.
  double pair(std::size_t e, int a, int b) const {
    switch (pairwise_.index()) {
      case 0:
        return a == b ? 0.0 : std::get<0>(pairwise_).beta;
      case 1:
        return std::get<1>(pairwise_).table[static_cast<std::size_t>(a) * classes() + static_cast<std::size_t>(b)];
      default:
        return std::get<2>(pairwise_).tables[(e * classes() + static_cast<std::size_t>(a)) * classes() +
                                             static_cast<std::size_t>(b)];
    }
  }

  /// Neighbors of node i (CSR slice).
  std::span<const Incidence> incident(std::size_t i) const {
    return {incidence_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

 private:
  void build_incidence() {
    offsets_.assign(graph_.n_nodes + 1, 0);
    for (const auto& e : graph_.edges) {
      ++offsets_[e.i + 1];
      ++offsets_[e.j + 1];
    }
    for (std::size_t i = 0; i < graph_.n_nodes; ++i) offsets_[i + 1] += offsets_[i];
    incidence_.resize(offsets_.back());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t e = 0; e < graph_.edges.size(); ++e) {
      const auto& ed = graph_.edges[e];
      incidence_[fill[ed.i]++] = {ed.j, static_cast<std::uint32_t>(e), true};
      incidence_[fill[ed.j]++] = {ed.i, static_cast<std::uint32_t>(e), false};
    }
  }

  Graph graph_;
  UnaryTable unary_;
  PairwiseSpec pairwise_;
  std::vector<std::size_t> offsets_;
  std::vector<Incidence> incidence_;
};

inline void check_labeling(const EnergyModel& m, std::span<const int> y) {
  if (y.size() != m.nodes()) throw ModelError("labeling size does not match the model");
  for (int v : y)
    if (v < 0 || static_cast<std::size_t>(v) >= m.classes()) throw ModelError("label out of range");
}

inline double total_energy(const EnergyModel& m, std::span<const int> y) {
  check_labeling(m, y);
  double e = 0.0;
  for (std::size_t i = 0; i < m.nodes(); ++i) e += m.unary()(i, static_cast<std::size_t>(y[i]));
  const auto& edges = m.graph().edges;
  for (std::size_t k = 0; k < edges.size(); ++k) e += m.pair(k, y[edges[k].i], y[edges[k].j]);
  return e;
}

/// Energy of node i taking label c with every neighbor held at y.
inline double local_energy(const EnergyModel& m, std::span<const int> y, std::size_t i, int c) {
  double e = m.unary()(i, static_cast<std::size_t>(c));
  for (const auto& inc : m.incident(i))
    e += inc.first ? m.pair(inc.edge, c, y[inc.neighbor]) : m.pair(inc.edge, y[inc.neighbor], c);
  return e;
}

/// Per-node unary argmin, lowest class wins ties.
inline Labeling unary_argmin(const EnergyModel& m) {
  Labeling y(m.nodes());
  for (std::size_t i = 0; i < m.nodes(); ++i) {
    const auto row = m.unary().row(i);
    int best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] < row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    y[i] = best;
  }
  return y;
}

/// Pairwise table of edge e as a dense M x M vector.
inline std::vector<double> edge_table(const EnergyModel& m, std::size_t e) {
  const std::size_t M = m.classes();
  std::vector<double> t(M * M);
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = 0; b < M; ++b) t[a * M + b] = m.pair(e, static_cast<int>(a), static_cast<int>(b));
  return t;
}

/// Semimetric with triangle inequality: E(a,a) = 0, E(a,b) = E(b,a) >= 0,
/// E(a,c) <= E(a,b) + E(b,c). Returns the first failing edge or -1.
inline long first_non_metric_edge(const EnergyModel& m, double tol = 1e-12) {
  if (m.is_potts()) return m.potts_beta() >= 0.0 ? -1 : 0;
  const std::size_t M = m.classes();
  const std::size_t n_tables = std::holds_alternative<SharedTable>(m.pairwise()) ? std::min<std::size_t>(1, m.edges()) : m.edges();
  for (std::size_t e = 0; e < n_tables; ++e) {
    const auto t = edge_table(m, e);
    for (std::size_t a = 0; a < M; ++a) {
      if (std::abs(t[a * M + a]) > tol) return static_cast<long>(e);
      for (std::size_t b = 0; b < M; ++b) {
        if (t[a * M + b] < -tol || std::abs(t[a * M + b] - t[b * M + a]) > tol) return static_cast<long>(e);
        for (std::size_t c = 0; c < M; ++c)
          if (t[a * M + c] > t[a * M + b] + t[b * M + c] + tol) return static_cast<long>(e);
      }
    }
  }
  return -1;
}

// ---------------------------------------------------------------------------
// brute-force oracles
// ---------------------------------------------------------------------------

inline double configuration_count(const EnergyModel& m) {
  return std::pow(static_cast<double>(m.classes()), static_cast<double>(m.nodes()));
}

/// Advances y as an odometer with node 0 most significant, so iteration
/// order is lexicographic. Returns false after the last labeling.
inline bool next_labeling(Labeling& y, int classes) {
  for (std::size_t k = y.size(); k-- > 0;) {
    if (++y[k] < classes) return true;
    y[k] = 0;
  }
  return false;
}

struct MapResult {
  Labeling labels;
  double energy = 0.0;
};

/// Exhaustive minimizer; ties go to the lexicographically smallest labeling.
inline MapResult brute_force_map(const EnergyModel& m, double limit = 1e7) {
  if (configuration_count(m) > limit)
    throw ModelError("instance too large for enumeration (" + std::to_string(configuration_count(m)) + " configurations)");
  Labeling y(m.nodes(), 0);
  MapResult best{y, total_energy(m, y)};
  while (next_labeling(y, static_cast<int>(m.classes()))) {
    const double e = total_energy(m, y);
    if (e < best.energy) best = {y, e};
  }
  return best;
}

/// Node beliefs (n x M), edge beliefs (n_edges x M x M, row = label of edge.i)
/// and log partition function.
struct Marginals {
  std::size_t classes = 0;
  std::vector<double> node;
  std::vector<double> edge;
  double log_z = 0.0;
  bool converged = true;
  std::size_t iterations = 0;

  std::span<const double> node_belief(std::size_t i) const { return {node.data() + i * classes, classes}; }
  std::span<const double> edge_belief(std::size_t e) const {
    return {edge.data() + e * classes * classes, classes * classes};
  }
};

/// p(y) = exp(-E(y)) / Z by enumeration. log Z uses max-subtraction.
inline Marginals brute_force_marginals(const EnergyModel& m, double limit = 1e6) {
  if (configuration_count(m) > limit)
    throw ModelError("instance too large for enumeration (" + std::to_string(configuration_count(m)) + " configurations)");
  const std::size_t M = m.classes(), n = m.nodes();
  const auto classes = static_cast<int>(M);
  Labeling y(n, 0);
  double e_min = std::numeric_limits<double>::infinity();
  do {
    e_min = std::min(e_min, total_energy(m, y));
  } while (next_labeling(y, classes));
  double sum = 0.0;
  do {
    sum += std::exp(-(total_energy(m, y) - e_min));
  } while (next_labeling(y, classes));
  Marginals out;
  out.classes = M;
  out.log_z = -e_min + std::log(sum);
  out.node.assign(n * M, 0.0);
  out.edge.assign(m.edges() * M * M, 0.0);
  const auto& edges = m.graph().edges;
  do {
    const double p = std::exp(-(total_energy(m, y) - e_min)) / sum;
    for (std::size_t i = 0; i < n; ++i) out.node[i * M + static_cast<std::size_t>(y[i])] += p;
    for (std::size_t e = 0; e < edges.size(); ++e)
      out.edge[(e * M + static_cast<std::size_t>(y[edges[e].i])) * M + static_cast<std::size_t>(y[edges[e].j])] += p;
  } while (next_labeling(y, classes));
  return out;
}

}  // namespace ugm
