#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "msmatch/core.hpp"
#include "msmatch/event_flow.hpp"
#include "msmatch/graph.hpp"
#include "msmatch/model.hpp"
#include "msmatch/qap.hpp"

namespace msmatch::training {

/// Non-finite loss or gradient during an update. Carries the parameters as
/// they were when the step failed so they can be dumped for inspection.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, TrainState snapshot)
      : std::runtime_error(msg), state(std::move(snapshot)) {}
  TrainState state;
};

/// One aligned (paragraph, segment) training pair with raw features.
struct TrainItem {
  Matrix sentences;  // M x text_dim
  Matrix shots;      // N x vis_dim
  graph::TypedGraph para_graph;
  graph::TypedGraph video_graph;
  std::string movie;
  std::string paragraph_id;
  std::string segment_id;
};

/// Frozen discrete assignments for one (segment, paragraph) pair: the
/// event-flow matches and the graph-match node pairs with their objective
/// multiplicities. With these fixed, the pair score is linear in the pairwise
/// feature similarities.
struct FrozenPair {
  std::vector<std::pair<int, int>> efm;  // (shot, sentence)
  struct CimTerm {
    int video_node;
    int para_node;
    double weight;
  };
  std::vector<CimTerm> cim;
};

struct BatchAssignments {
  int b = 0;
  std::vector<FrozenPair> pairs;  // row-major: (segment i, paragraph j)

  const FrozenPair& at(int i, int j) const { return pairs[static_cast<std::size_t>(i) * b + j]; }
  FrozenPair& at(int i, int j) { return pairs[static_cast<std::size_t>(i) * b + j]; }
};

/// Pair-wise margin ranking loss over a square in-batch score matrix,
/// scores(i, j) = S(Q_i, P_j).
inline double ranking_loss(const Matrix& scores, double alpha) {
  if (scores.rows != scores.cols) throw InputError("ranking_loss: score matrix must be square");
  const int b = scores.rows;
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      total += std::max(0.0, scores(j, i) - scores(i, i) + alpha);
      total += std::max(0.0, scores(i, j) - scores(i, i) + alpha);
    }
  }
  return total;
}

namespace detail {

inline std::vector<Vec> matrix_rows(const Matrix& m) {
  std::vector<Vec> rows;
  rows.reserve(m.rows);
  for (int i = 0; i < m.rows; ++i) rows.push_back(m.row_vec(i));
  return rows;
}

inline std::vector<Vec> node_features(const graph::TypedGraph& g) {
  std::vector<Vec> out;
  out.reserve(g.nodes.size());
  for (const auto& n : g.nodes) out.push_back(n.feature);
  return out;
}

inline std::vector<Vec> node_features(const graph::TypedGraph& g, graph::NodeKind k) {
  std::vector<Vec> out;
  for (const auto& n : g.nodes)
    if (n.kind == k) out.push_back(n.feature);
  return out;
}

struct EmbeddedVectors {
  std::vector<Vec> out;
  std::vector<EmbeddingMap::Cache> caches;  // populated only when requested
  std::vector<Vec> grad;
  std::vector<char> touched;

  void compute(const EmbeddingMap& map, const std::vector<Vec>& inputs, bool want_cache) {
    out.clear();
    caches.clear();
    out.reserve(inputs.size());
    if (want_cache) caches.resize(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i)
      out.push_back(map.forward(inputs[i], want_cache ? &caches[i] : nullptr));
  }

  void init_grad() {
    grad.assign(out.size(), Vec());
    for (std::size_t i = 0; i < out.size(); ++i) grad[i].assign(out[i].size(), 0.0);
    touched.assign(out.size(), 0);
  }

  void add_grad(std::size_t i, const Vec& g, double factor) {
    touched[i] = 1;
    Vec& gi = grad[i];
    for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += factor * g[k];
  }

  void backprop(const EmbeddingMap& map, EmbeddingMap& grad_map) const {
    for (std::size_t i = 0; i < out.size(); ++i)
      if (touched[i]) map.backward(caches[i], grad[i], grad_map);
  }
};

struct JointEmbed {
  std::vector<EmbeddedVectors> sent, shot, pnode, vnode;
};

inline JointEmbed embed_joint(const std::vector<const TrainItem*>& batch, const ModelParams& p, bool cache) {
  JointEmbed e;
  const std::size_t b = batch.size();
  e.sent.resize(b);
  e.shot.resize(b);
  e.pnode.resize(b);
  e.vnode.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    e.sent[i].compute(p.efm_text, matrix_rows(batch[i]->sentences), cache);
    e.shot[i].compute(p.efm_vis, matrix_rows(batch[i]->shots), cache);
    e.pnode[i].compute(p.cim_text, node_features(batch[i]->para_graph), cache);
    e.vnode[i].compute(p.cim_vis, node_features(batch[i]->video_graph), cache);
  }
  return e;
}

/// Per-kind maximum-weight partial matching on embedded node similarities;
/// global node index pairs (video, paragraph). Mirrors qap::solve_km.
inline std::vector<std::pair<int, int>> km_node_matching(const graph::TypedGraph& gq, const std::vector<Vec>& qf,
                                                         const graph::TypedGraph& gp, const std::vector<Vec>& pf) {
  std::vector<std::pair<int, int>> matched;
  for (graph::NodeKind kind : {graph::NodeKind::Character, graph::NodeKind::Action}) {
    std::vector<int> qi, pi;
    for (int i = 0; i < gq.size(); ++i)
      if (gq.nodes[i].kind == kind) qi.push_back(i);
    for (int a = 0; a < gp.size(); ++a)
      if (gp.nodes[a].kind == kind) pi.push_back(a);
    if (qi.empty() || pi.empty()) continue;
    Matrix w(static_cast<int>(qi.size()), static_cast<int>(pi.size()));
    for (std::size_t x = 0; x < qi.size(); ++x)
      for (std::size_t y = 0; y < pi.size(); ++y)
        w(static_cast<int>(x), static_cast<int>(y)) = dot_similarity(qf[qi[x]], pf[pi[y]]);
    for (const auto& [x, y] : qap::detail::max_weight_partial_matching(w)) matched.emplace_back(qi[x], pi[y]);
  }
  std::sort(matched.begin(), matched.end());
  return matched;
}

/// Objective multiplicity of each matched node pair: 1 from the node term
/// plus 2 for every co-matched pair connected on both sides (the ordered
/// double sum counts each undirected edge pair twice).
inline std::vector<FrozenPair::CimTerm> cim_terms(const graph::TypedGraph& gq, const graph::TypedGraph& gp,
                                                  const std::vector<std::pair<int, int>>& matched) {
  std::vector<FrozenPair::CimTerm> terms;
  terms.reserve(matched.size());
  for (const auto& [i, a] : matched) terms.push_back({i, a, 1.0});
  for (std::size_t p = 0; p < matched.size(); ++p) {
    for (std::size_t q = 0; q < matched.size(); ++q) {
      if (p == q) continue;
      if (gq.has_edge(matched[p].first, matched[q].first) && gp.has_edge(matched[p].second, matched[q].second)) {
        terms[p].weight += 1.0;
        terms[q].weight += 1.0;
      }
    }
  }
  return terms;
}

inline double frozen_pair_score(const TrainItem& seg, const TrainItem& para, const FrozenPair& fp,
                                const EmbeddedVectors& shot, const EmbeddedVectors& sent,
                                const EmbeddedVectors& vnode, const EmbeddedVectors& pnode) {
  (void)seg;
  (void)para;
  double s = 0.0;
  for (const auto& [si, tj] : fp.efm) s += dot_similarity(shot.out[si], sent.out[tj]);
  for (const auto& t : fp.cim) s += t.weight * dot_similarity(vnode.out[t.video_node], pnode.out[t.para_node]);
  return s;
}

inline Matrix joint_frozen_scores(const std::vector<const TrainItem*>& batch, const BatchAssignments& a,
                                  const JointEmbed& e) {
  const int b = static_cast<int>(batch.size());
  Matrix s(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      s(i, j) = frozen_pair_score(*batch[i], *batch[j], a.at(i, j), e.shot[i], e.sent[j], e.vnode[i], e.pnode[j]);
  return s;
}

/// dL/d(scores) of ranking_loss; the hinge subgradient at the kink is zero.
inline Matrix loss_coefficients(const Matrix& scores, double alpha) {
  const int b = scores.rows;
  Matrix c(b, b, 0.0);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      if (scores(j, i) - scores(i, i) + alpha > 0.0) {
        c(j, i) += 1.0;
        c(i, i) -= 1.0;
      }
      if (scores(i, j) - scores(i, i) + alpha > 0.0) {
        c(i, j) += 1.0;
        c(i, i) -= 1.0;
      }
    }
  }
  return c;
}

inline void add_cosine_grad(const Vec& u, const Vec& v, double factor, Vec& gu, Vec& gv) {
  const double nu = norm(u), nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return;
  const double c = dot_similarity(u, v) / (nu * nv);
  for (std::size_t k = 0; k < u.size(); ++k) {
    gu[k] += factor * (v[k] / (nu * nv) - c * u[k] / (nu * nu));
    gv[k] += factor * (u[k] / (nu * nv) - c * v[k] / (nv * nv));
  }
}

struct VseChannelEmbed {
  EmbeddedVectors text, vis;
  Vec text_pool, vis_pool;  // empty when the channel has no inputs

  void pool() {
    text_pool = mean(text.out);
    vis_pool = mean(vis.out);
  }

  static Vec mean(const std::vector<Vec>& vs) {
    if (vs.empty()) return Vec();
    Vec m(vs[0].size(), 0.0);
    for (const Vec& v : vs)
      for (std::size_t k = 0; k < m.size(); ++k) m[k] += v[k];
    for (double& x : m) x /= static_cast<double>(vs.size());
    return m;
  }
};

inline std::vector<Vec> channel_text_inputs(const TrainItem& it, Channel ch) {
  switch (ch) {
    case Channel::Appearance: return matrix_rows(it.sentences);
    case Channel::Cast: return node_features(it.para_graph, graph::NodeKind::Character);
    default: return node_features(it.para_graph, graph::NodeKind::Action);
  }
}

inline std::vector<Vec> channel_vis_inputs(const TrainItem& it, Channel ch) {
  switch (ch) {
    case Channel::Appearance: return matrix_rows(it.shots);
    case Channel::Cast: return node_features(it.video_graph, graph::NodeKind::Character);
    default: return node_features(it.video_graph, graph::NodeKind::Action);
  }
}

}  // namespace detail

/// E-step: solve the discrete assignments for every (segment, paragraph)
/// combination in the batch under the current embeddings — the event-flow
/// alignment by dynamic programming and the graph matching by Kuhn-Munkres.
inline BatchAssignments e_step(const std::vector<const TrainItem*>& batch, const ModelParams& params) {
  if (batch.empty()) throw InputError("e_step: empty batch");
  const auto emb = detail::embed_joint(batch, params, /*cache=*/false);
  const int b = static_cast<int>(batch.size());
  BatchAssignments out;
  out.b = b;
  out.pairs.resize(static_cast<std::size_t>(b) * b);
  for (int i = 0; i < b; ++i) {
    const auto& shots = emb.shot[i].out;
    for (int j = 0; j < b; ++j) {
      const auto& sents = emb.sent[j].out;
      FrozenPair& fp = out.at(i, j);
      if (!shots.empty() && !sents.empty()) {
        Matrix s(static_cast<int>(shots.size()), static_cast<int>(sents.size()));
        for (std::size_t x = 0; x < shots.size(); ++x)
          for (std::size_t y = 0; y < sents.size(); ++y)
            s(static_cast<int>(x), static_cast<int>(y)) = dot_similarity(shots[x], sents[y]);
        const auto res = event_flow::align(s);
        for (int x = 0; x < res.assignment.shots; ++x)
          if (res.assignment.assigned[x] >= 0) fp.efm.emplace_back(x, res.assignment.assigned[x]);
      }
      const auto matched = detail::km_node_matching(batch[i]->video_graph, emb.vnode[i].out,
                                                    batch[j]->para_graph, emb.pnode[j].out);
      fp.cim = detail::cim_terms(batch[i]->video_graph, batch[j]->para_graph, matched);
    }
  }
  return out;
}

/// Loss of a batch under frozen assignments — the differentiable objective the
/// M-step descends, exposed for finite-difference checks.
inline double frozen_loss(const std::vector<const TrainItem*>& batch, const BatchAssignments& assignments,
                          const ModelParams& params, const TrainConfig& cfg) {
  double total = 0.0;
  if (cfg.objective != Objective::Vse) {
    const auto emb = detail::embed_joint(batch, params, false);
    total += ranking_loss(detail::joint_frozen_scores(batch, assignments, emb), cfg.margin);
  }
  if (cfg.objective == Objective::Joint) return total;
  const int b = static_cast<int>(batch.size());
  for (int ci = 0; ci < 3; ++ci) {
    const auto ch = static_cast<Channel>(ci);
    std::vector<detail::VseChannelEmbed> e(b);
    for (int i = 0; i < b; ++i) {
      e[i].text.compute(params.vse_text[ci], detail::channel_text_inputs(*batch[i], ch), false);
      e[i].vis.compute(params.vse_vis[ci], detail::channel_vis_inputs(*batch[i], ch), false);
      e[i].pool();
    }
    Matrix s(b, b, 0.0);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j)
        if (!e[i].vis_pool.empty() && !e[j].text_pool.empty())
          s(i, j) = cosine_similarity(e[i].vis_pool, e[j].text_pool);
    total += ranking_loss(s, cfg.margin);
  }
  return total;
}

namespace detail {

inline double m_step_joint(const std::vector<const TrainItem*>& batch, const BatchAssignments& assignments,
                           TrainState& st, const TrainConfig& cfg) {
  auto emb = embed_joint(batch, st.params, /*cache=*/true);
  const Matrix scores = joint_frozen_scores(batch, assignments, emb);
  if (!scores.finite()) throw DivergenceError("non-finite pair score in M-step", st);
  const double loss = ranking_loss(scores, cfg.margin);
  const Matrix coeff = loss_coefficients(scores, cfg.margin);
  const int b = static_cast<int>(batch.size());

  for (auto* set : {&emb.sent, &emb.shot, &emb.pnode, &emb.vnode})
    for (auto& e : *set) e.init_grad();

  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      const double c = coeff(i, j);
      if (c == 0.0) continue;
      const FrozenPair& fp = assignments.at(i, j);
      for (const auto& [si, tj] : fp.efm) {
        emb.shot[i].add_grad(si, emb.sent[j].out[tj], c);
        emb.sent[j].add_grad(tj, emb.shot[i].out[si], c);
      }
      for (const auto& t : fp.cim) {
        emb.vnode[i].add_grad(t.video_node, emb.pnode[j].out[t.para_node], c * t.weight);
        emb.pnode[j].add_grad(t.para_node, emb.vnode[i].out[t.video_node], c * t.weight);
      }
    }
  }

  EmbeddingMap g_efm_text = st.params.efm_text.zeros_like();
  EmbeddingMap g_efm_vis = st.params.efm_vis.zeros_like();
  EmbeddingMap g_cim_text = st.params.cim_text.zeros_like();
  EmbeddingMap g_cim_vis = st.params.cim_vis.zeros_like();
  for (int i = 0; i < b; ++i) {
    emb.sent[i].backprop(st.params.efm_text, g_efm_text);
    emb.shot[i].backprop(st.params.efm_vis, g_efm_vis);
    emb.pnode[i].backprop(st.params.cim_text, g_cim_text);
    emb.vnode[i].backprop(st.params.cim_vis, g_cim_vis);
  }

  if (!std::isfinite(loss) || !g_efm_text.finite() || !g_efm_vis.finite() || !g_cim_text.finite() ||
      !g_cim_vis.finite())
    throw DivergenceError("non-finite loss or gradient in M-step", st);

  st.params.efm_text.add_scaled(g_efm_text, -cfg.learning_rate);
  st.params.efm_vis.add_scaled(g_efm_vis, -cfg.learning_rate);
  st.params.cim_text.add_scaled(g_cim_text, -cfg.learning_rate);
  st.params.cim_vis.add_scaled(g_cim_vis, -cfg.learning_rate);
  return loss;
}

inline double m_step_vse(const std::vector<const TrainItem*>& batch, TrainState& st, const TrainConfig& cfg) {
  const int b = static_cast<int>(batch.size());
  double total = 0.0;
  for (int ci = 0; ci < 3; ++ci) {
    const auto ch = static_cast<Channel>(ci);
    std::vector<VseChannelEmbed> e(b);
    for (int i = 0; i < b; ++i) {
      e[i].text.compute(st.params.vse_text[ci], channel_text_inputs(*batch[i], ch), true);
      e[i].vis.compute(st.params.vse_vis[ci], channel_vis_inputs(*batch[i], ch), true);
      e[i].pool();
    }
    Matrix s(b, b, 0.0);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j)
        if (!e[i].vis_pool.empty() && !e[j].text_pool.empty())
          s(i, j) = cosine_similarity(e[i].vis_pool, e[j].text_pool);
    if (!s.finite()) throw DivergenceError("non-finite pair score in VSE M-step", st);
    const double loss = ranking_loss(s, cfg.margin);
    total += loss;
    const Matrix coeff = loss_coefficients(s, cfg.margin);

    std::vector<Vec> gtext(b), gvis(b);
    for (int i = 0; i < b; ++i) {
      gvis[i].assign(e[i].vis_pool.size(), 0.0);
      gtext[i].assign(e[i].text_pool.size(), 0.0);
    }
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) {
        const double c = coeff(i, j);
        if (c == 0.0 || e[i].vis_pool.empty() || e[j].text_pool.empty()) continue;
        add_cosine_grad(e[i].vis_pool, e[j].text_pool, c, gvis[i], gtext[j]);
      }

    EmbeddingMap g_text = st.params.vse_text[ci].zeros_like();
    EmbeddingMap g_vis = st.params.vse_vis[ci].zeros_like();
    for (int i = 0; i < b; ++i) {
      if (!e[i].vis.out.empty() && !gvis[i].empty()) {
        e[i].vis.init_grad();
        const double inv = 1.0 / static_cast<double>(e[i].vis.out.size());
        for (std::size_t k = 0; k < e[i].vis.out.size(); ++k) e[i].vis.add_grad(k, gvis[i], inv);
        e[i].vis.backprop(st.params.vse_vis[ci], g_vis);
      }
      if (!e[i].text.out.empty() && !gtext[i].empty()) {
        e[i].text.init_grad();
        const double inv = 1.0 / static_cast<double>(e[i].text.out.size());
        for (std::size_t k = 0; k < e[i].text.out.size(); ++k) e[i].text.add_grad(k, gtext[i], inv);
        e[i].text.backprop(st.params.vse_text[ci], g_text);
      }
    }

    if (!std::isfinite(loss) || !g_text.finite() || !g_vis.finite())
      throw DivergenceError("non-finite loss or gradient in VSE M-step", st);

    st.params.vse_text[ci].add_scaled(g_text, -cfg.learning_rate);
    st.params.vse_vis[ci].add_scaled(g_vis, -cfg.learning_rate);
  }
  return total;
}

}  // namespace detail

/// One stochastic-gradient update of the ranking loss through the frozen
/// assignments. Returns the batch loss before the update. The joint model and
/// the VSE baseline have disjoint parameters, so the Both objective is the two
/// independent updates in one pass.
inline double m_step(const std::vector<const TrainItem*>& batch, const BatchAssignments& assignments,
                     TrainState& st, const TrainConfig& cfg) {
  double loss = 0.0;
  if (cfg.objective != Objective::Vse) loss += detail::m_step_joint(batch, assignments, st, cfg);
  if (cfg.objective != Objective::Joint) loss += detail::m_step_vse(batch, st, cfg);
  return loss;
}

/// EM-like training: per batch, an E-step fixes the discrete assignments and
/// the M-step descends the ranking loss through them. Deterministic for a
/// fixed seed.
inline TrainState train(const std::vector<TrainItem>& data, const TrainConfig& cfg, const FeatureDims& dims,
                        const std::function<void(int, double)>& on_epoch = {}) {
  if (data.empty()) throw InputError("train: empty dataset");
  cfg.validate();
  TrainState st = init_state(dims, cfg);
  Rng rng(cfg.seed);
  rng.restore_state(st.rng_state);

  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) continue;  // in-batch ranking needs a negative
      std::vector<const TrainItem*> batch;
      for (std::size_t x = start; x < end; ++x) batch.push_back(&data[order[x]]);
      BatchAssignments assignments;
      if (cfg.objective == Objective::Joint) {
        assignments = e_step(batch, st.params);
      } else {
        assignments.b = static_cast<int>(batch.size());
        assignments.pairs.resize(static_cast<std::size_t>(assignments.b) * assignments.b);
      }
      for (int s = 0; s < cfg.steps_per_e; ++s) {
        sum += m_step(batch, assignments, st, cfg);
        ++batches;
      }
    }
    st.loss_history.push_back(batches > 0 ? sum / batches : 0.0);
    st.epoch += 1;
    if (on_epoch) on_epoch(st.epoch, st.loss_history.back());
  }
  st.rng_state = rng.save_state();
  return st;
}

}  // namespace msmatch::training
