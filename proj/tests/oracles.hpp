#pragma once

// Reference implementations for the tests, written against plain arrays.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "ugm/energy.hpp"

namespace oracle {

/// A pairwise model stored as raw tables: unary n x M, one M x M table per
/// edge (row = label of the edge's first node).
struct Instance {
  std::size_t n = 0, M = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<double> unary;
  std::vector<double> tables;
  std::optional<double> potts;  // set when tables are beta * [a != b]

  double energy(const std::vector<int>& y) const {
    long double e = 0.0L;
    for (std::size_t i = 0; i < n; ++i) e += unary[i * M + static_cast<std::size_t>(y[i])];
    for (std::size_t k = 0; k < edges.size(); ++k)
      e += tables[(k * M + static_cast<std::size_t>(y[edges[k].first])) * M + static_cast<std::size_t>(y[edges[k].second])];
    return static_cast<double>(e);
  }

  ugm::EnergyModel model() const {
    ugm::Graph g;
    g.n_nodes = n;
    for (auto [i, j] : edges) g.edges.push_back({i, j});
    ugm::UnaryTable u(n, M);
    u.values = unary;
    if (potts) return ugm::EnergyModel(g, u, ugm::Potts{*potts});
    return ugm::EnergyModel(g, u, ugm::EdgeTables{tables});
  }
};

inline std::vector<std::pair<std::uint32_t, std::uint32_t>> grid_edges(std::size_t rows, std::size_t cols) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> e;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto id = static_cast<std::uint32_t>(r * cols + c);
      if (c + 1 < cols) e.emplace_back(id, id + 1);
      if (r + 1 < rows) e.emplace_back(id, static_cast<std::uint32_t>(id + cols));
    }
  return e;
}

inline void fill_potts(Instance& in, double beta) {
  in.potts = beta;
  in.tables.assign(in.edges.size() * in.M * in.M, 0.0);
  for (std::size_t k = 0; k < in.edges.size(); ++k)
    for (std::size_t a = 0; a < in.M; ++a)
      for (std::size_t b = 0; b < in.M; ++b) in.tables[(k * in.M + a) * in.M + b] = a == b ? 0.0 : beta;
}

/// Grid Potts model with unaries U(0, 1).
inline Instance random_potts_grid(std::size_t rows, std::size_t cols, std::size_t M, double beta, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Instance in;
  in.n = rows * cols;
  in.M = M;
  in.edges = grid_edges(rows, cols);
  in.unary.resize(in.n * M);
  for (auto& v : in.unary) v = u01(rng);
  fill_potts(in, beta);
  return in;
}

/// Random spanning tree (each node i > 0 attaches to a uniformly chosen
/// earlier node) or a chain, with arbitrary dense tables.
inline Instance random_tree(std::size_t n, std::size_t M, bool chain, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Instance in;
  in.n = n;
  in.M = M;
  for (std::size_t i = 1; i < n; ++i) {
    const auto parent = chain ? i - 1 : std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    in.edges.emplace_back(static_cast<std::uint32_t>(parent), static_cast<std::uint32_t>(i));
  }
  in.unary.resize(n * M);
  for (auto& v : in.unary) v = u(rng);
  in.tables.resize(in.edges.size() * M * M);
  for (auto& v : in.tables) v = u(rng);
  return in;
}

/// Binary model on a random graph whose tables all satisfy
/// E(0,1) + E(1,0) >= E(0,0) + E(1,1).
inline Instance random_binary_submodular(std::size_t n, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.0, 2.0), coin(0.0, 1.0);
  Instance in;
  in.n = n;
  in.M = 2;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng) < density) in.edges.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
  in.unary.resize(2 * n);
  for (auto& v : in.unary) v = u(rng);
  for (std::size_t k = 0; k < in.edges.size(); ++k) {
    const double A = u(rng), D = u(rng), B = u(rng);
    const double C = std::max(u(rng), A + D - B) + pos(rng) * (coin(rng) < 0.2 ? 0.0 : 1.0);
    in.tables.insert(in.tables.end(), {A, B, C, D});
  }
  return in;
}

struct Exact {
  double min_energy = std::numeric_limits<double>::infinity();
  std::vector<int> argmin;
  std::vector<double> node;  // n x M marginals
  std::vector<double> edge;  // n_edges x M x M
  double log_z = 0.0;
};

/// Enumerates all M^n labelings.
inline Exact enumerate(const Instance& in) {
  Exact ex;
  std::vector<int> y(in.n, 0);
  std::vector<double> energies;
  std::vector<std::vector<int>> configs;
  for (;;) {
    const double e = in.energy(y);
    energies.push_back(e);
    configs.push_back(y);
    if (e < ex.min_energy) {
      ex.min_energy = e;
      ex.argmin = y;
    }
    std::size_t i = 0;
    while (i < in.n && ++y[i] == static_cast<int>(in.M)) y[i++] = 0;
    if (i == in.n) break;
  }
  long double z = 0.0L;
  for (double e : energies) z += std::exp(static_cast<long double>(-(e - ex.min_energy)));
  ex.log_z = static_cast<double>(-ex.min_energy + std::log(z));
  ex.node.assign(in.n * in.M, 0.0);
  ex.edge.assign(in.edges.size() * in.M * in.M, 0.0);
  std::vector<long double> node(ex.node.size(), 0.0L), edge(ex.edge.size(), 0.0L);
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const long double p = std::exp(static_cast<long double>(-(energies[k] - ex.min_energy))) / z;
    const auto& c = configs[k];
    for (std::size_t i = 0; i < in.n; ++i) node[i * in.M + static_cast<std::size_t>(c[i])] += p;
    for (std::size_t e = 0; e < in.edges.size(); ++e)
      edge[(e * in.M + static_cast<std::size_t>(c[in.edges[e].first])) * in.M +
           static_cast<std::size_t>(c[in.edges[e].second])] += p;
  }
  for (std::size_t k = 0; k < node.size(); ++k) ex.node[k] = static_cast<double>(node[k]);
  for (std::size_t k = 0; k < edge.size(); ++k) ex.edge[k] = static_cast<double>(edge[k]);
  return ex;
}

/// Central differences of f at x with step h.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double fp = f(x);
    x[k] = x0 - h;
    const double fm = f(x);
    x[k] = x0;
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    d += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Grayscale erosion/dilation by brute force over the disk
/// {dx^2 + dy^2 <= r^2} with replicated borders.
inline std::vector<double> morph(const std::vector<double>& img, std::size_t H, std::size_t W, double r, bool dilate) {
  const int R = static_cast<int>(std::floor(r + 1e-9));
  std::vector<double> out(img.size());
  for (int y = 0; y < static_cast<int>(H); ++y)
    for (int x = 0; x < static_cast<int>(W); ++x) {
      double best = dilate ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
      for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
          if (dx * dx + dy * dy > r * r + 1e-9) continue;
          const int yy = std::clamp(y + dy, 0, static_cast<int>(H) - 1);
          const int xx = std::clamp(x + dx, 0, static_cast<int>(W) - 1);
          const double v = img[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
          best = dilate ? std::max(best, v) : std::min(best, v);
        }
      out[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = best;
    }
  return out;
}

}  // namespace oracle
