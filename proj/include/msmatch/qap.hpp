#pragma once

#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

#include "msmatch/core.hpp"
#include "msmatch/graph.hpp"

namespace msmatch::qap {

using graph::NodeKind;
using graph::PairSimilarityMatrix;
using graph::TypedGraph;

/// Instance too large for exhaustive search; callers should fall back to solve_km.
class SizeLimitError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Binary indicator u over (video node i, paragraph node a) pairs, stored as
/// the support. One-to-one and type constraints are checkable properties.
struct MatchIndicator {
  int n = 0;  // |V_q|
  int m = 0;  // |V_p|
  std::vector<std::pair<int, int>> pairs;  // sorted (i, a)

  bool feasible(const TypedGraph& gq, const TypedGraph& gp) const {
    std::vector<char> row(n, 0), col(m, 0);
    for (const auto& [i, a] : pairs) {
      if (i < 0 || i >= n || a < 0 || a >= m) return false;
      if (row[i]++ || col[a]++) return false;
      if (gq.nodes[i].kind != gp.nodes[a].kind) return false;
    }
    return true;
  }
};

struct GraphMatchResult {
  double score = 0.0;
  MatchIndicator indicator;
  bool exact = false;
};

/// Seed/selection indicator over V_q.
struct SeedSelection {
  std::vector<std::uint8_t> v;

  std::vector<int> support() const {
    std::vector<int> s;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i]) s.push_back(static_cast<int>(i));
    return s;
  }
};

struct CimParams {
  int k = 2;                // seed neighbours per paragraph node
  int J = 2;                // propagation depth
  int exact_threshold = 10; // max pruned video nodes for the exact solver
};

/// Objective value of an indicator: node similarities plus the ordered double
/// sum of edge-pair similarities (each undirected edge pair counts twice).
inline double score_indicator(const PairSimilarityMatrix& k, const MatchIndicator& u) {
  double s = 0.0;
  for (const auto& [i, a] : u.pairs) s += k.node_sim(i, a);
  for (std::size_t p = 0; p < u.pairs.size(); ++p)
    for (std::size_t q = 0; q < u.pairs.size(); ++q) {
      if (p == q) continue;
      s += k.at(u.pairs[p].first, u.pairs[p].second, u.pairs[q].first, u.pairs[q].second);
    }
  return s;
}

namespace detail {

/// Square min-cost perfect matching via shortest augmenting paths with
/// potentials. Returns per-row matched column. Deterministic; among equal-cost
/// columns the lowest index is retained.
inline std::vector<int> hungarian_min_square(const Matrix& a) {
  const int t = a.rows;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(t + 1, 0.0), v(t + 1, 0.0), minv(t + 1, 0.0);
  std::vector<int> p(t + 1, 0), way(t + 1, 0);
  for (int i = 1; i <= t; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<char> used(t + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= t; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= t; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match_row(t, -1);
  for (int j = 1; j <= t; ++j)
    if (p[j] != 0) match_row[p[j] - 1] = j - 1;
  return match_row;
}

/// Maximum-weight partial matching on a rectangular weight matrix. Negative
/// weights are clamped to zero for the assignment (a pair is never worth less
/// than leaving both sides unmatched), the matrix is padded square, and the
/// perfect matching is filtered back to real nonnegative pairs.
inline std::vector<std::pair<int, int>> max_weight_partial_matching(const Matrix& w) {
  const int r = w.rows, c = w.cols;
  if (r == 0 || c == 0) return {};
  const int t = std::max(r, c);
  Matrix cost(t, t, 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) cost(i, j) = -std::max(0.0, w(i, j));
  const auto match = hungarian_min_square(cost);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < r; ++i) {
    const int j = match[i];
    if (j >= 0 && j < c && w(i, j) >= 0.0) pairs.emplace_back(i, j);
  }
  return pairs;
}

inline std::vector<int> kind_indices(const TypedGraph& g, NodeKind k) {
  std::vector<int> idx;
  for (int i = 0; i < g.size(); ++i)
    if (g.nodes[i].kind == k) idx.push_back(i);
  return idx;
}

}  // namespace detail

/// Kuhn-Munkres approximation: linear assignment on the diagonal node
/// similarities, run per node kind (cross-kind matches are infeasible anyway),
/// with matched pairs of negative node similarity dropped. The returned
/// indicator is scored with the full objective including edge terms.
inline GraphMatchResult solve_km(const PairSimilarityMatrix& k, const TypedGraph& gq, const TypedGraph& gp) {
  GraphMatchResult res;
  res.indicator.n = gq.size();
  res.indicator.m = gp.size();
  for (NodeKind kind : {NodeKind::Character, NodeKind::Action}) {
    const auto qi = detail::kind_indices(gq, kind);
    const auto pi = detail::kind_indices(gp, kind);
    if (qi.empty() || pi.empty()) continue;
    Matrix w(static_cast<int>(qi.size()), static_cast<int>(pi.size()));
    for (std::size_t x = 0; x < qi.size(); ++x)
      for (std::size_t y = 0; y < pi.size(); ++y) w(static_cast<int>(x), static_cast<int>(y)) = k.node_sim(qi[x], pi[y]);
    for (const auto& [x, y] : detail::max_weight_partial_matching(w))
      res.indicator.pairs.emplace_back(qi[x], pi[y]);
  }
  std::sort(res.indicator.pairs.begin(), res.indicator.pairs.end());
  res.score = score_indicator(k, res.indicator);
  res.exact = false;
  return res;
}

namespace detail {

struct ExactSearch {
  const PairSimilarityMatrix& k;
  bool outer_is_p;                 // true: enumerate paragraph nodes, candidates are video nodes
  std::vector<int> outer_order;    // node indices on the enumerated side
  std::vector<std::vector<int>> candidates;  // per outer node: compatible other-side nodes
  std::vector<double> suffix_bound;
  std::vector<char> used;          // other-side occupancy
  std::vector<std::pair<int, int>> current;  // (video, paragraph) pairs
  std::vector<std::pair<int, int>> best_pairs;
  double best = 0.0;

  double pair_node_sim(int outer, int inner) const {
    return outer_is_p ? k.node_sim(inner, outer) : k.node_sim(outer, inner);
  }

  double pair_edge_sim(int i, int a, int j, int b) const { return k.at(i, a, j, b); }

  void dfs(std::size_t depth, double score) {
    if (depth == outer_order.size()) {
      if (score > best) {
        best = score;
        best_pairs = current;
      }
      return;
    }
    if (score + suffix_bound[depth] <= best) return;
    const int o = outer_order[depth];
    for (int c : candidates[depth]) {
      if (used[c]) continue;
      const int vi = outer_is_p ? c : o;
      const int pa = outer_is_p ? o : c;
      double delta = k.node_sim(vi, pa);
      for (const auto& [vj, pb] : current) delta += 2.0 * k.at(vi, pa, vj, pb);
      used[c] = 1;
      current.emplace_back(vi, pa);
      dfs(depth + 1, score + delta);
      current.pop_back();
      used[c] = 0;
    }
    dfs(depth + 1, score);  // leave o unmatched
  }
};

}  // namespace detail

/// Global maximizer of the matching objective over all feasible indicators
/// (one-to-one, type-respecting, partial maps allowed). Branch and bound over
/// the smaller vertex set; ties keep the first maximizer in lexicographic
/// search order. Instances with more than 8 nodes per kind on both sides are
/// rejected.
inline GraphMatchResult solve_exact(const PairSimilarityMatrix& k, const TypedGraph& gq, const TypedGraph& gp) {
  for (NodeKind kind : {NodeKind::Character, NodeKind::Action}) {
    if (std::min(gq.count(kind), gp.count(kind)) > 8)
      throw SizeLimitError("solve_exact: more than 8 nodes per kind on both sides; use solve_km");
  }

  detail::ExactSearch search{k, gp.size() <= gq.size(), {}, {}, {}, {}, {}, {}, 0.0};
  const TypedGraph& outer = search.outer_is_p ? gp : gq;
  const TypedGraph& inner = search.outer_is_p ? gq : gp;

  search.outer_order.resize(outer.size());
  for (int i = 0; i < outer.size(); ++i) search.outer_order[i] = i;
  search.candidates.resize(outer.size());
  for (int o = 0; o < outer.size(); ++o)
    for (int c = 0; c < inner.size(); ++c)
      if (outer.nodes[o].kind == inner.nodes[c].kind) search.candidates[o].push_back(c);
  search.used.assign(inner.size(), 0);

  // Admissible per-node bound: best nonnegative node similarity plus, for each
  // incident outer edge, the best nonnegative edge-pair value (counted twice,
  // matching the ordered objective; future-future edges get double-counted,
  // which only loosens the bound).
  std::vector<double> ub(outer.size(), 0.0);
  for (int o = 0; o < outer.size(); ++o) {
    double best_node = 0.0;
    for (int c : search.candidates[o]) best_node = std::max(best_node, search.pair_node_sim(o, c));
    ub[o] = best_node;
  }
  for (const auto& [o1, o2] : outer.edges) {
    double best_edge = 0.0;
    for (const auto& [c1, c2] : inner.edges) {
      const int orient[2][2] = {{c1, c2}, {c2, c1}};
      for (const auto& cc : orient) {
        if (outer.nodes[o1].kind != inner.nodes[cc[0]].kind || outer.nodes[o2].kind != inner.nodes[cc[1]].kind)
          continue;
        const double val = search.outer_is_p ? k.at(cc[0], o1, cc[1], o2) : k.at(o1, cc[0], o2, cc[1]);
        best_edge = std::max(best_edge, val);
      }
    }
    ub[o1] += 2.0 * best_edge;
    ub[o2] += 2.0 * best_edge;
  }
  search.suffix_bound.assign(outer.size() + 1, 0.0);
  for (int o = outer.size() - 1; o >= 0; --o) search.suffix_bound[o] = search.suffix_bound[o + 1] + ub[o];

  search.dfs(0, 0.0);

  GraphMatchResult res;
  res.indicator.n = gq.size();
  res.indicator.m = gp.size();
  res.indicator.pairs = search.best_pairs;
  std::sort(res.indicator.pairs.begin(), res.indicator.pairs.end());
  res.score = search.best;
  res.exact = true;
  return res;
}

/// Seed nodes on the video side: KM-matched nodes plus, for every paragraph
/// node, its k most node-similar type-compatible video nodes.
inline SeedSelection select_seeds(const PairSimilarityMatrix& k, const TypedGraph& gq, const TypedGraph& gp, int count) {
  if (count < 1) throw InputError("select_seeds: k must be >= 1");
  SeedSelection sel;
  sel.v.assign(gq.size(), 0);
  const auto km = solve_km(k, gq, gp);
  for (const auto& [i, a] : km.indicator.pairs) sel.v[i] = 1;
  for (int a = 0; a < gp.size(); ++a) {
    std::vector<std::pair<double, int>> ranked;
    for (int i = 0; i < gq.size(); ++i)
      if (gq.nodes[i].kind == gp.nodes[a].kind) ranked.emplace_back(-k.node_sim(i, a), i);
    std::sort(ranked.begin(), ranked.end());
    const std::size_t take = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(count));
    for (std::size_t r = 0; r < take; ++r) sel.v[ranked[r].second] = 1;
  }
  return sel;
}

/// Expand a selection to all nodes within graph distance J of a seed,
/// the support of (A+I)^J v under boolean arithmetic.
inline SeedSelection propagate(const SeedSelection& seeds, const std::vector<std::uint8_t>& a, int n, int steps) {
  if (steps < 0) throw InputError("propagate: J must be >= 0");
  if (static_cast<int>(seeds.v.size()) != n || static_cast<std::size_t>(n) * n != a.size())
    throw InputError("propagate: adjacency size mismatch");
  SeedSelection out = seeds;
  std::vector<int> frontier = out.support();
  for (int s = 0; s < steps && !frontier.empty(); ++s) {
    std::vector<int> next;
    for (int i : frontier) {
      const std::uint8_t* row = a.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        if (row[j] && !out.v[j]) {
          out.v[j] = 1;
          next.push_back(j);
        }
      }
    }
    frontier = std::move(next);
  }
  return out;
}

struct PrunedGraph {
  TypedGraph graph;
  std::vector<int> kept;  // kept[new index] = old index
};

/// Induced subgraph on the selection support, with the old->new index map so
/// indicators on the pruned graph can be lifted back.
inline PrunedGraph prune_graph(const TypedGraph& gq, const SeedSelection& sel) {
  if (static_cast<int>(sel.v.size()) != gq.size()) throw InputError("prune_graph: selection length mismatch");
  PrunedGraph out;
  std::vector<int> new_index(gq.size(), -1);
  for (int i = 0; i < gq.size(); ++i) {
    if (!sel.v[i]) continue;
    new_index[i] = static_cast<int>(out.kept.size());
    out.kept.push_back(i);
    out.graph.nodes.push_back(gq.nodes[i]);
  }
  for (const auto& [i, j] : gq.edges)
    if (new_index[i] >= 0 && new_index[j] >= 0) out.graph.add_edge(new_index[i], new_index[j]);
  out.graph.finalize_edges();
  return out;
}

struct CimDetail {
  double score = 0.0;
  MatchIndicator indicator;  // lifted to original gq indices
  bool exact = false;
  int nodes_before = 0;
  int nodes_after = 0;
};

namespace detail {

inline bool exact_eligible(const TypedGraph& gq, const TypedGraph& gp, int threshold) {
  if (gq.size() > threshold) return false;
  for (NodeKind kind : {NodeKind::Character, NodeKind::Action})
    if (std::min(gq.count(kind), gp.count(kind)) > 8) return false;
  return true;
}

}  // namespace detail

/// Full character-interaction matching pipeline: build K, select and propagate
/// seeds on the video graph, crop, then solve the pruned instance exactly when
/// small enough (or when forced) and by KM otherwise.
inline CimDetail cim_match(const TypedGraph& gq, const TypedGraph& gp, const CimParams& params = {},
                           bool force_exact = false) {
  CimDetail out;
  out.nodes_before = gq.size();
  out.indicator.n = gq.size();
  out.indicator.m = gp.size();
  if (gq.size() == 0 || gp.size() == 0) return out;

  const auto kfull = graph::build_similarity_matrix(gq, gp);
  const auto seeds = select_seeds(kfull, gq, gp, params.k);
  const auto adj = graph::adjacency(gq);
  const auto selection = propagate(seeds, adj, gq.size(), params.J);
  auto pruned = prune_graph(gq, selection);
  out.nodes_after = pruned.graph.size();
  if (pruned.graph.size() == 0) return out;

  const auto kp = graph::build_similarity_matrix(pruned.graph, gp);
  GraphMatchResult r;
  if (force_exact || detail::exact_eligible(pruned.graph, gp, params.exact_threshold))
    r = solve_exact(kp, pruned.graph, gp);
  else
    r = solve_km(kp, pruned.graph, gp);

  out.score = r.score;
  out.exact = r.exact;
  for (const auto& [i, a] : r.indicator.pairs) out.indicator.pairs.emplace_back(pruned.kept[i], a);
  std::sort(out.indicator.pairs.begin(), out.indicator.pairs.end());
  return out;
}

inline double cim_score(const TypedGraph& gq, const TypedGraph& gp, const CimParams& params = {}) {
  return cim_match(gq, gp, params).score;
}

}  // namespace msmatch::qap
