#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "tmpdir.hpp"
#include "ugm/inference.hpp"

using namespace ugm;
using testing_support::TempDir;

namespace {

bool is_icm_fixed_point(const EnergyModel& m, const Labeling& y) {
  for (std::size_t i = 0; i < m.nodes(); ++i)
    for (int c = 0; c < static_cast<int>(m.classes()); ++c)
      if (local_energy(m, y, i, c) < local_energy(m, y, i, y[i]) - 1e-12) return false;
  return true;
}

/// Lowest energy reachable from y by one alpha-expansion, by enumeration of
/// every subset of nodes switching to alpha.
double best_expansion(const EnergyModel& m, const Labeling& y, int alpha) {
  double best = total_energy(m, y);
  for (std::uint64_t mask = 0; mask < (1ull << m.nodes()); ++mask) {
    Labeling z = y;
    for (std::size_t i = 0; i < m.nodes(); ++i)
      if ((mask >> i) & 1u) z[i] = alpha;
    best = std::min(best, total_energy(m, z));
  }
  return best;
}

std::vector<double> softmax_neg(std::span<const double> e) {
  std::vector<double> p(e.begin(), e.end());
  const double lo = *std::min_element(p.begin(), p.end());
  double s = 0;
  for (double& v : p) s += v = std::exp(-(v - lo));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Icm, ZeroBetaGivesUnaryArgminFromAnyStart) {
  std::mt19937_64 rng(31);
  const auto in = oracle::random_potts_grid(3, 4, 3, 0.0, rng);
  const EnergyModel m = in.model();
  for (int s = 0; s < 3; ++s) EXPECT_EQ(icm(m, Labeling(12, s)).labels, unary_argmin(m));
}

TEST(Icm, OptimalLabelingIsAFixedPoint) {
  std::mt19937_64 rng(32);
  for (int t = 0; t < 20; ++t) {
    const auto in = oracle::random_potts_grid(2, 3, 3, 0.8, rng);
    const EnergyModel m = in.model();
    const auto best = brute_force_map(m);
    const auto r = icm(m, best.labels);
    EXPECT_EQ(r.labels, best.labels);
    EXPECT_EQ(r.sweeps, 1u);
  }
}

TEST(Icm, BoundedByOptimumAndInitAndMonotone) {
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int t = 0; t < 100; ++t) {
    std::uniform_real_distribution<double> u(-1, 1);
    oracle::Instance in;
    in.n = 6;
    in.M = 3;
    in.edges = oracle::grid_edges(2, 3);
    in.unary.resize(18);
    for (auto& v : in.unary) v = u(rng);
    in.tables.resize(in.edges.size() * 9);
    for (auto& v : in.tables) v = u(rng);
    const EnergyModel m = in.model();
    Labeling init(6);
    for (auto& v : init) v = lab(rng);
    const auto r = icm(m, init, {.record_trace = true});
    const double opt = oracle::enumerate(in).min_energy;
    EXPECT_GE(r.energy, opt - 1e-12);
    EXPECT_LE(r.energy, total_energy(m, init) + 1e-12);
    EXPECT_NEAR(r.energy, total_energy(m, r.labels), 1e-12);
    for (std::size_t k = 1; k < r.trace.size(); ++k) EXPECT_LT(r.trace[k], r.trace[k - 1]);
    EXPECT_TRUE(r.converged);
    EXPECT_TRUE(is_icm_fixed_point(m, r.labels));
  }
}

// ---------------------------------------------------------------------------

TEST(BinarySubmodular, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + t % 15;  // up to 16 nodes
    const auto in = oracle::random_binary_submodular(n, 0.35, rng);
    const EnergyModel m = in.model();
    const Labeling y = binary_submodular_map(m);
    EXPECT_NEAR(total_energy(m, y), oracle::enumerate(in).min_energy, 1e-12) << t;
  }
}

TEST(BinarySubmodular, PottsGridsMatchBruteForce) {
  std::mt19937_64 rng(42);
  for (double beta : {0.0, 0.2, 1.0, 5.0}) {
    for (int t = 0; t < 10; ++t) {
      const auto in = oracle::random_potts_grid(3, 4, 2, beta, rng);
      const EnergyModel m = in.model();
      EXPECT_NEAR(total_energy(m, binary_submodular_map(m)), oracle::enumerate(in).min_energy, 1e-12);
      if (beta == 0.0) {
        EXPECT_EQ(binary_submodular_map(m), unary_argmin(m));
      }
    }
  }
}

TEST(BinarySubmodular, RejectsSupermodularEdgeAndNamesIt) {
  const Graph g = grid_graph(1, 3);
  const UnaryTable u(3, 2);
  std::vector<double> t{0, 1, 1, 0, 1, 0, 0, 1};  // second table: E(0,0)+E(1,1) = 2 > 0
  try {
    binary_submodular_map(EnergyModel(g, u, EdgeTables{t}));
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("edge 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(binary_submodular_map(EnergyModel(g, UnaryTable(3, 3), Potts{1})), ModelError);
}

// ---------------------------------------------------------------------------

TEST(AlphaExpansion, ZeroBetaIsUnaryArgminAfterOneCycle) {
  std::mt19937_64 rng(51);
  const auto in = oracle::random_potts_grid(4, 4, 4, 0.0, rng);
  const EnergyModel m = in.model();
  const auto r = alpha_expansion(m, Labeling(16, 3), 1);
  EXPECT_EQ(r.labels, unary_argmin(m));
}

TEST(AlphaExpansion, StrongSmoothingGivesUniformMajority) {
  UnaryTable u(9, 3);
  for (std::size_t i = 0; i < 9; ++i) {
    const bool odd = i == 0 || i == 8;
    u(i, 0) = odd ? 0.0 : 1.0;
    u(i, 1) = odd ? 1.0 : 0.0;
    u(i, 2) = 1.0;
  }
  const EnergyModel m(grid_graph(3, 3), u, Potts{10});
  const auto r = alpha_expansion(m);
  EXPECT_EQ(r.labels, Labeling(9, 1));
  EXPECT_EQ(r.labels, brute_force_map(m).labels);
  EXPECT_EQ(r.energy, 2.0);
}

TEST(AlphaExpansion, RandomPottsWithinFactorTwoAndUsuallyOptimal) {
  std::mt19937_64 rng(52);
  int optimal = 0, total = 0;
  for (double beta : {0.1, 1.0, 10.0})
    for (int t = 0; t < 67; ++t) {
      const auto in = oracle::random_potts_grid(3, 3, 3, beta, rng);
      const EnergyModel m = in.model();
      const double opt = oracle::enumerate(in).min_energy;
      const auto r = alpha_expansion(m);
      EXPECT_LE(r.energy, 2.0 * opt + 1e-12);
      EXPECT_GE(r.energy, opt - 1e-12);
      optimal += r.energy <= opt + 1e-12;
      ++total;
    }
  EXPECT_GE(optimal, static_cast<int>(0.9 * total));
}

TEST(AlphaExpansion, ConvergedResultAdmitsNoImprovingExpansion) {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 30; ++t) {
    const auto in = oracle::random_potts_grid(3, 3, 3, 0.3 + 0.1 * t, rng);
    const EnergyModel m = in.model();
    const auto r = alpha_expansion(m);
    ASSERT_TRUE(r.converged);
    for (int a = 0; a < 3; ++a) EXPECT_GE(best_expansion(m, r.labels, a), r.energy - 1e-12);
  }
}

TEST(AlphaExpansion, EveryMoveLowersTheEnergy) {
  std::mt19937_64 rng(54);
  const auto in = oracle::random_potts_grid(20, 20, 5, 0.6, rng);
  const auto r = alpha_expansion(in.model());
  ASSERT_EQ(r.trace.size(), r.moves_accepted + 1);
  for (std::size_t k = 1; k < r.trace.size(); ++k) EXPECT_LT(r.trace[k], r.trace[k - 1]);
  EXPECT_LE(r.energy, icm(in.model(), unary_argmin(in.model())).energy + 1e-9);
}

TEST(AlphaExpansion, MetricTablesBeyondPotts) {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0, 2);
  for (int t = 0; t < 20; ++t) {
    UnaryTable un(6, 4);
    for (auto& v : un.values) v = u(rng);
    std::vector<double> tl(16);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) tl[static_cast<std::size_t>(a * 4 + b)] = 0.4 * std::min(std::abs(a - b), 2);
    const EnergyModel m(grid_graph(2, 3), un, SharedTable{tl});
    const auto r = alpha_expansion(m);
    const double opt = brute_force_map(m).energy;
    EXPECT_GE(r.energy, opt - 1e-12);
    EXPECT_LE(r.energy, 2.0 * opt + 1e-12 + 2.0 * 0.8);  // loose bound for truncated linear
  }
}

TEST(AlphaExpansion, Errors) {
  EXPECT_THROW(alpha_expansion(EnergyModel(grid_graph(1, 2), UnaryTable(2, 2), Potts{-1})), ModelError);
  EXPECT_THROW(alpha_expansion(EnergyModel(grid_graph(1, 2), UnaryTable(2, 3), SharedTable{{0, 1, 4, 1, 0, 1, 4, 1, 0}})),
               ModelError);
  EXPECT_THROW(alpha_expansion(EnergyModel(grid_graph(1, 2), UnaryTable(2, 2), Potts{1}), std::nullopt, 0), ModelError);
}

TEST(AlphaExpansion, CycleCapIsRespected) {
  std::mt19937_64 rng(56);
  const auto in = oracle::random_potts_grid(15, 15, 4, 1.5, rng);
  const auto r = alpha_expansion(in.model(), Labeling(225, 0), 1);
  EXPECT_EQ(r.cycles, 1u);
}

// ---------------------------------------------------------------------------

TEST(LoopyBp, SingleNodeIsSoftmax) {
  UnaryTable u(1, 3);
  u.values = {0.5, 2.0, -1.0};
  const auto r = loopy_bp(EnergyModel(Graph{1, {}}, u, Potts{1}));
  const auto p = softmax_neg(u.values);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.marginals.node[c], p[c], 1e-15);
  EXPECT_NEAR(r.marginals.log_z, std::log(std::exp(-0.5) + std::exp(-2.0) + std::exp(1.0)), 1e-12);
  EXPECT_EQ(r.labels, Labeling{2});
}

TEST(LoopyBp, ExactOnChainsAndTrees) {
  std::mt19937_64 rng(61);
  for (int t = 0; t < 40; ++t) {
    const bool chain = t < 10;
    const std::size_t n = chain ? 4 : 3 + t % 6;
    const auto in = oracle::random_tree(n, 3, chain, 1.5, rng);
    const auto ex = oracle::enumerate(in);
    const auto r = loopy_bp(in.model(), {.max_iters = 200, .damping = 0.5, .tol = 1e-12});
    ASSERT_TRUE(r.marginals.converged);
    for (std::size_t k = 0; k < ex.node.size(); ++k) EXPECT_NEAR(r.marginals.node[k], ex.node[k], 1e-8);
    for (std::size_t k = 0; k < ex.edge.size(); ++k) EXPECT_NEAR(r.marginals.edge[k], ex.edge[k], 1e-8);
    EXPECT_NEAR(r.marginals.log_z, ex.log_z, 1e-8);
  }
}

TEST(LoopyBp, ExactOnPottsTrees) {
  std::mt19937_64 rng(62);
  for (double beta : {-0.5, 0.3, 2.0}) {
    auto in = oracle::random_tree(7, 3, false, 1.0, rng);
    oracle::fill_potts(in, beta);
    const auto ex = oracle::enumerate(in);
    const auto r = loopy_bp(in.model(), {.tol = 1e-12});
    for (std::size_t k = 0; k < ex.node.size(); ++k) EXPECT_NEAR(r.marginals.node[k], ex.node[k], 1e-8);
    EXPECT_NEAR(r.marginals.log_z, ex.log_z, 1e-8);
  }
}

TEST(LoopyBp, UncoupledLoopIsPerNodeSoftmax) {
  std::mt19937_64 rng(63);
  const auto in = oracle::random_potts_grid(2, 2, 3, 0.0, rng);
  const auto r = loopy_bp(in.model());
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = softmax_neg(std::span<const double>(in.unary.data() + i * 3, 3));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.marginals.node[i * 3 + c], p[c], 1e-15);
  }
  EXPECT_NEAR(r.marginals.log_z, oracle::enumerate(in).log_z, 1e-12);
}

TEST(LoopyBp, BeliefsAreNormalizedAndLocallyConsistentOnGrids) {
  std::mt19937_64 rng(64);
  const auto in = oracle::random_potts_grid(8, 8, 4, 0.4, rng);
  const auto r = loopy_bp(in.model(), {.max_iters = 500, .tol = 1e-10});
  ASSERT_TRUE(r.marginals.converged);
  const std::size_t M = 4;
  for (std::size_t i = 0; i < in.n; ++i) {
    const auto b = r.marginals.node_belief(i);
    EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0), 1.0, 1e-9);
    for (double v : b) EXPECT_GE(v, 0.0);
  }
  for (std::size_t e = 0; e < in.edges.size(); ++e) {
    const auto be = r.marginals.edge_belief(e);
    EXPECT_NEAR(std::accumulate(be.begin(), be.end(), 0.0), 1.0, 1e-9);
    for (std::size_t a = 0; a < M; ++a) {
      double row = 0, col = 0;
      for (std::size_t b = 0; b < M; ++b) row += be[a * M + b], col += be[b * M + a];
      EXPECT_NEAR(row, r.marginals.node[in.edges[e].first * M + a], 1e-8);
      EXPECT_NEAR(col, r.marginals.node[in.edges[e].second * M + a], 1e-8);
    }
  }
  EXPECT_TRUE(std::isfinite(r.marginals.log_z));
}

TEST(LoopyBp, MaxProductRecoversTreeMap) {
  std::mt19937_64 rng(65);
  for (int t = 0; t < 20; ++t) {
    const auto in = oracle::random_tree(6, 3, t % 2 == 0, 1.0, rng);
    const auto r = loopy_bp(in.model(), {.mode = BpMode::max_product, .max_iters = 200, .tol = 1e-12});
    EXPECT_EQ(r.labels, oracle::enumerate(in).argmin);
    EXPECT_TRUE(std::isnan(r.marginals.log_z));
  }
}

TEST(LoopyBp, ReportsNonConvergenceAndValidatesConfig) {
  std::mt19937_64 rng(66);
  const auto in = oracle::random_potts_grid(6, 6, 3, 1.0, rng);
  const auto r = loopy_bp(in.model(), {.max_iters = 1});
  EXPECT_FALSE(r.marginals.converged);
  EXPECT_EQ(r.marginals.iterations, 1u);
  for (double v : r.marginals.node) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(loopy_bp(in.model(), {.tol = 0.0}), ModelError);
  EXPECT_THROW(loopy_bp(in.model(), {.damping = 1.0}), ModelError);
}

TEST(LoopyBp, WarmStartFromConvergedMessagesStopsImmediately) {
  std::mt19937_64 rng(67);
  const auto in = oracle::random_potts_grid(5, 5, 3, 0.5, rng);
  std::vector<double> msgs;
  const auto a = loopy_bp(in.model(), {.tol = 1e-10}, &msgs);
  ASSERT_TRUE(a.marginals.converged);
  const auto b = loopy_bp(in.model(), {.tol = 1e-10}, &msgs);
  EXPECT_EQ(b.marginals.iterations, 1u);
  for (std::size_t k = 0; k < a.marginals.node.size(); ++k) EXPECT_NEAR(a.marginals.node[k], b.marginals.node[k], 1e-9);
}

// ---------------------------------------------------------------------------

TEST(MapInfer, IcmWithZeroBetaIsArgmin) {
  std::mt19937_64 rng(71);
  const auto in = oracle::random_potts_grid(3, 3, 3, 0.0, rng);
  const auto rep = map_infer(in.model(), "icm");
  EXPECT_EQ(rep.labels, unary_argmin(in.model()));
  EXPECT_EQ(rep.method, "icm");
}

TEST(MapInfer, AllMethodsAgreeWithBruteForceOnATinyTree) {
  // 4-node chain, mild coupling, clear unary preferences
  UnaryTable u(4, 3);
  u.values = {0.0, 1.0, 2.0, 0.2, 0.9, 2.0, 1.5, 0.0, 1.0, 1.8, 0.3, 0.0};
  const EnergyModel m(grid_graph(1, 4), u, Potts{0.4});
  const auto best = brute_force_map(m);
  MapOptions opt;
  opt.bp.mode = BpMode::max_product;  // sum-product marginals need not peak at the joint MAP
  for (const char* method : {"icm", "alpha-expansion", "max-marginals"}) {
    const auto rep = map_infer(m, method, opt);
    EXPECT_EQ(rep.labels, best.labels) << method;
    EXPECT_DOUBLE_EQ(rep.energy, best.energy) << method;
    EXPECT_TRUE(rep.converged) << method;
    EXPECT_GE(rep.wall_ms, 0.0);
  }
}

TEST(MapInfer, UnknownMethodAndReportCsv) {
  const EnergyModel m(grid_graph(1, 2), UnaryTable(2, 2), Potts{1});
  EXPECT_THROW(map_infer(m, "simulated-annealing"), ModelError);
  EXPECT_EQ(parse_map_method("graphcut"), MapMethod::alpha_expansion);
  TempDir dir;
  const std::vector<InferenceReport> reps{map_infer(m, "icm"), map_infer(m, "alpha-expansion")};
  write_report_csv(reps, dir / "r.csv");
  const std::string text = testing_support::slurp(dir / "r.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "method,energy,iterations,converged,wall_ms");
  EXPECT_NE(text.find("\nicm,0,1,1,"), std::string::npos) << text;
  EXPECT_NE(text.find("\nalpha-expansion,0,1,1,"), std::string::npos) << text;
}
