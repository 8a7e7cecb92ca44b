#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <span>
#include <vector>

#include "ugm/error.hpp"

namespace ugm {

/// Directed network over nodes 0..n-1 plus a source and a sink.
struct FlowNetwork {
  struct Arc {
    std::size_t from;
    std::size_t to;
    double capacity;
  };

  explicit FlowNetwork(std::size_t n) : n_nodes(n) {}

  std::size_t source() const { return n_nodes; }
  std::size_t sink() const { return n_nodes + 1; }

  void add_arc(std::size_t from, std::size_t to, double capacity) {
    if (from > sink() || to > sink()) throw ModelError("arc endpoint out of range");
    if (!(capacity >= 0.0) || capacity == std::numeric_limits<double>::infinity())
      throw ModelError("arc capacities must be finite and non-negative");
    arcs.push_back({from, to, capacity});
  }

  std::size_t n_nodes;
  std::vector<Arc> arcs;
};

/// Boykov-Kolmogorov augmenting-path max-flow on a graph with terminal
/// capacities folded into each node. Search trees are grown from both
/// terminals and reused across augmentations; orphans are re-adopted with
/// the timestamp/distance heuristic. All traversal orders follow insertion
/// order, so results are deterministic.
class MaxFlowSolver {
 public:
  MaxFlowSolver() = default;
  explicit MaxFlowSolver(std::size_t n) { reset(n); }

  void reset(std::size_t n) {
    nodes_.assign(n, Node{});
    arcs_.clear();
    flow_ = 0.0;
    solved_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Adds source->i with cap_source and i->sink with cap_sink.
  void add_terminal(std::size_t i, double cap_source, double cap_sink) {
    const double delta = nodes_[i].tr_cap;
    if (delta > 0)
      cap_source += delta;
    else
      cap_sink -= delta;
    flow_ += std::min(cap_source, cap_sink);
    nodes_[i].tr_cap = cap_source - cap_sink;
  }

  /// Adds i->j with capacity cap and j->i with capacity rev_cap.
  void add_edge(std::size_t i, std::size_t j, double cap, double rev_cap) {
    const auto a = static_cast<std::int32_t>(arcs_.size());
    arcs_.push_back({static_cast<std::int32_t>(j), nodes_[i].first, a + 1, cap});
    nodes_[i].first = a;
    arcs_.push_back({static_cast<std::int32_t>(i), nodes_[j].first, a, rev_cap});
    nodes_[j].first = a + 1;
  }

  double solve() {
    init_trees();
    std::int32_t current = kNone;
    for (;;) {
      std::int32_t i = current;
      if (i != kNone && nodes_[static_cast<std::size_t>(i)].parent == kNone) i = kNone;
      if (i == kNone) {
        i = next_active();
        if (i == kNone) break;
      }
      const std::int32_t bridge = grow(i);
      ++time_;
      if (bridge != kNone) {
        current = i;
        augment(bridge);
        adopt_orphans();
      } else {
        current = kNone;
      }
    }
    solved_ = true;
    return flow_;
  }

  double flow() const { return flow_; }

  /// True when node i lies on the source side of the minimum cut, i.e. is
  /// reachable from the source in the residual network.
  bool source_side(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.parent != kNone && !n.is_sink;
  }

 private:
  static constexpr std::int32_t kNone = -1;
  static constexpr std::int32_t kTerminal = -2;
  static constexpr std::int32_t kOrphan = -3;
  static constexpr std::int32_t kInfDist = std::numeric_limits<std::int32_t>::max();

  struct Node {
    std::int32_t first = kNone;   // first outgoing arc
    std::int32_t parent = kNone;  // arc toward the tree root, or a sentinel
    double tr_cap = 0.0;          // > 0: residual from source, < 0: residual to sink
    bool is_sink = false;
    bool active = false;
    std::int64_t ts = 0;
    std::int32_t dist = 0;
  };
  struct Arc {
    std::int32_t head;
    std::int32_t next;
    std::int32_t sister;
    double r_cap;
  };

  Node& node(std::int32_t i) { return nodes_[static_cast<std::size_t>(i)]; }
  Arc& arc(std::int32_t a) { return arcs_[static_cast<std::size_t>(a)]; }

  void set_active(std::int32_t i) {
    if (!node(i).active) {
      node(i).active = true;
      active_.push_back(i);
    }
  }

  std::int32_t next_active() {
    while (!active_.empty()) {
      const std::int32_t i = active_.front();
      active_.pop_front();
      node(i).active = false;
      if (node(i).parent != kNone) return i;
    }
    return kNone;
  }

  void init_trees() {
    active_.clear();
    orphans_.clear();
    time_ = 0;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      Node& n = nodes_[k];
      n.active = false;
      n.ts = 0;
      if (n.tr_cap > 0) {
        n.is_sink = false;
        n.parent = kTerminal;
        n.dist = 1;
        set_active(static_cast<std::int32_t>(k));
      } else if (n.tr_cap < 0) {
        n.is_sink = true;
        n.parent = kTerminal;
        n.dist = 1;
        set_active(static_cast<std::int32_t>(k));
      } else {
        n.parent = kNone;
      }
    }
  }

  /// Expands the tree containing i by one layer. Returns the arc (oriented
  /// source tree -> sink tree) joining the two trees, or kNone.
  std::int32_t grow(std::int32_t i) {
    Node& ni = node(i);
    if (!ni.is_sink) {
      for (std::int32_t a = ni.first; a != kNone; a = arc(a).next) {
        if (arc(a).r_cap <= 0) continue;
        const std::int32_t j = arc(a).head;
        Node& nj = node(j);
        if (nj.parent == kNone) {
          nj.is_sink = false;
          nj.parent = arc(a).sister;
          nj.ts = ni.ts;
          nj.dist = ni.dist + 1;
          set_active(j);
        } else if (nj.is_sink) {
          return a;
        } else if (nj.ts <= ni.ts && nj.dist > ni.dist) {
          nj.parent = arc(a).sister;
          nj.ts = ni.ts;
          nj.dist = ni.dist + 1;
        }
      }
    } else {
      for (std::int32_t a = ni.first; a != kNone; a = arc(a).next) {
        const std::int32_t s = arc(a).sister;
        if (arc(s).r_cap <= 0) continue;
        const std::int32_t j = arc(a).head;
        Node& nj = node(j);
        if (nj.parent == kNone) {
          nj.is_sink = true;
          nj.parent = s;
          nj.ts = ni.ts;
          nj.dist = ni.dist + 1;
          set_active(j);
        } else if (!nj.is_sink) {
          return s;
        } else if (nj.ts <= ni.ts && nj.dist > ni.dist) {
          nj.parent = s;
          nj.ts = ni.ts;
          nj.dist = ni.dist + 1;
        }
      }
    }
    return kNone;
  }

  void make_orphan_front(std::int32_t i) {
    node(i).parent = kOrphan;
    orphans_.push_front(i);
  }
  void make_orphan_back(std::int32_t i) {
    node(i).parent = kOrphan;
    orphans_.push_back(i);
  }

  void augment(std::int32_t middle) {
    // bottleneck
    double bottleneck = arc(middle).r_cap;
    std::int32_t i = arc(arc(middle).sister).head;
    for (;;) {
      const std::int32_t a = node(i).parent;
      if (a == kTerminal) break;
      bottleneck = std::min(bottleneck, arc(arc(a).sister).r_cap);
      i = arc(a).head;
    }
    bottleneck = std::min(bottleneck, node(i).tr_cap);
    i = arc(middle).head;
    for (;;) {
      const std::int32_t a = node(i).parent;
      if (a == kTerminal) break;
      bottleneck = std::min(bottleneck, arc(a).r_cap);
      i = arc(a).head;
    }
    bottleneck = std::min(bottleneck, -node(i).tr_cap);

    // push flow
    arc(arc(middle).sister).r_cap += bottleneck;
    arc(middle).r_cap -= bottleneck;
    i = arc(arc(middle).sister).head;
    for (;;) {
      const std::int32_t a = node(i).parent;
      if (a == kTerminal) break;
      arc(a).r_cap += bottleneck;
      arc(arc(a).sister).r_cap -= bottleneck;
      if (arc(arc(a).sister).r_cap <= 0) make_orphan_front(i);
      i = arc(a).head;
    }
    node(i).tr_cap -= bottleneck;
    if (node(i).tr_cap <= 0) make_orphan_front(i);
    i = arc(middle).head;
    for (;;) {
      const std::int32_t a = node(i).parent;
      if (a == kTerminal) break;
      arc(arc(a).sister).r_cap += bottleneck;
      arc(a).r_cap -= bottleneck;
      if (arc(a).r_cap <= 0) make_orphan_front(i);
      i = arc(a).head;
    }
    node(i).tr_cap += bottleneck;
    if (node(i).tr_cap >= 0) make_orphan_front(i);
    flow_ += bottleneck;
  }

  void adopt_orphans() {
    while (!orphans_.empty()) {
      const std::int32_t i = orphans_.front();
      orphans_.pop_front();
      process_orphan(i);
    }
  }

  /// Distance from j to its tree root, or kInfDist when the path runs into
  /// an orphan. Marks visited nodes with the current timestamp.
  void process_orphan(std::int32_t i) {
    const bool sink_tree = node(i).is_sink;
    std::int32_t best_arc = kNone;
    std::int32_t best_dist = kInfDist;
    for (std::int32_t a0 = node(i).first; a0 != kNone; a0 = arc(a0).next) {
      // residual capacity toward i along the tree direction
      const double cap = sink_tree ? arc(a0).r_cap : arc(arc(a0).sister).r_cap;
      if (cap <= 0) continue;
      std::int32_t j = arc(a0).head;
      if (node(j).is_sink != sink_tree || node(j).parent == kNone) continue;
      std::int32_t d = 0;
      for (;;) {
        Node& nj = node(j);
        if (nj.ts == time_) {
          d += nj.dist;
          break;
        }
        const std::int32_t a = nj.parent;
        ++d;
        if (a == kTerminal) {
          nj.ts = time_;
          nj.dist = 1;
          break;
        }
        if (a == kOrphan) {
          d = kInfDist;
          break;
        }
        j = arc(a).head;
      }
      if (d < kInfDist) {
        if (d < best_dist) {
          best_arc = a0;
          best_dist = d;
        }
        for (j = arc(a0).head; node(j).ts != time_; j = arc(node(j).parent).head) {
          node(j).ts = time_;
          node(j).dist = d--;
        }
      }
    }
    if (best_arc != kNone) {
      node(i).parent = best_arc;
      node(i).ts = time_;
      node(i).dist = best_dist + 1;
      return;
    }
    node(i).parent = kNone;
    for (std::int32_t a0 = node(i).first; a0 != kNone; a0 = arc(a0).next) {
      const std::int32_t j = arc(a0).head;
      Node& nj = node(j);
      if (nj.is_sink != sink_tree || nj.parent == kNone) continue;
      const double cap = sink_tree ? arc(a0).r_cap : arc(arc(a0).sister).r_cap;
      if (cap > 0) set_active(j);
      const std::int32_t a = nj.parent;
      if (a != kTerminal && a != kOrphan && arc(a).head == i) make_orphan_back(j);
    }
  }

  std::vector<Node> nodes_;
  std::vector<Arc> arcs_;
  std::deque<std::int32_t> active_;
  std::deque<std::int32_t> orphans_;
  std::int64_t time_ = 0;
  double flow_ = 0.0;
  bool solved_ = false;
};

struct MaxFlowResult {
  double flow = 0.0;
  std::vector<bool> source_side;  // per non-terminal node
};

/// Maximum s-t flow and the minimum cut whose source side is the set of
/// nodes reachable from the source in the final residual network.
inline MaxFlowResult max_flow(const FlowNetwork& net) {
  MaxFlowSolver solver(net.n_nodes);
  double direct = 0.0;
  for (const auto& a : net.arcs) {
    const bool from_s = a.from == net.source(), to_t = a.to == net.sink();
    if (a.from == a.to || a.to == net.source() || a.from == net.sink()) continue;
    if (from_s && to_t)
      direct += a.capacity;
    else if (from_s)
      solver.add_terminal(a.to, a.capacity, 0.0);
    else if (to_t)
      solver.add_terminal(a.from, 0.0, a.capacity);
    else
      solver.add_edge(a.from, a.to, a.capacity, 0.0);
  }
  MaxFlowResult r;
  r.flow = solver.solve() + direct;
  r.source_side.resize(net.n_nodes);
  for (std::size_t i = 0; i < net.n_nodes; ++i) r.source_side[i] = solver.source_side(i);
  return r;
}

/// Total capacity of arcs leaving the source side.
inline double cut_capacity(const FlowNetwork& net, const std::vector<bool>& source_side) {
  auto on_source = [&](std::size_t v) {
    if (v == net.source()) return true;
    if (v == net.sink()) return false;
    return static_cast<bool>(source_side[v]);
  };
  double c = 0.0;
  for (const auto& a : net.arcs)
    if (on_source(a.from) && !on_source(a.to)) c += a.capacity;
  return c;
}

}  // namespace ugm
