#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmatch/core.hpp"
#include "msmatch/dataset.hpp"
#include "msmatch/event_flow.hpp"
#include "msmatch/graph.hpp"
#include "msmatch/model.hpp"
#include "msmatch/qap.hpp"

namespace msmatch::retrieval {

using training::Channel;
using training::EmbeddingMap;
using training::ModelParams;
using training::TrainState;

struct FusionWeights {
  double appearance = 0.3;
  double cast = 1.0;
  double action = 0.1;

  void validate() const {
    if (appearance < 0.0 || cast < 0.0 || action < 0.0) throw InputError("FusionWeights: weights must be >= 0");
    if (appearance == 0.0 && cast == 0.0 && action == 0.0) throw InputError("FusionWeights: at least one weight must be > 0");
  }
};

struct KindScores {
  double appearance = 0.0;
  double cast = 0.0;
  double action = 0.0;
};

inline double fuse(const KindScores& s, const FusionWeights& w) {
  return w.appearance * s.appearance + w.cast * s.cast + w.action * s.action;
}

enum class Setting { CrossMovie, WithinMovie };
enum class Method { Vse, Efm, EfmCim };

/// A retrieval run: per query, its candidate list (the whole test pool in the
/// cross-movie setting, same-movie segments only in the within-movie setting),
/// scores and the ground-truth candidate position.
struct RetrievalRun {
  struct Query {
    int paragraph = -1;  // dataset index
    std::string movie;
    std::vector<int> candidates;  // dataset segment indices
    std::vector<std::string> candidate_movies;
    Vec scores;
    int gt = -1;  // position within candidates
  };
  Setting setting = Setting::CrossMovie;
  std::vector<Query> queries;

  void validate() const {
    for (const auto& q : queries) {
      if (q.gt < 0 || q.gt >= static_cast<int>(q.candidates.size()))
        throw InputError("RetrievalRun: ground truth missing from candidate list");
      if (q.scores.size() != q.candidates.size() || q.candidate_movies.size() != q.candidates.size())
        throw InputError("RetrievalRun: ragged query row");
      if (setting == Setting::WithinMovie) {
        for (const auto& m : q.candidate_movies)
          if (m != q.movie) throw InputError("RetrievalRun: cross-movie candidate in a within-movie run");
      }
    }
  }
};

struct MetricReport {
  std::vector<std::pair<int, double>> recall_at;  // (K, fraction in [0,1])
  double medr = 0.0;
  std::optional<double> avg_medr;  // within-movie only
};

namespace detail {

/// 1-based competition rank of the ground-truth candidate; ties broken by
/// candidate index.
inline int rank_of(const RetrievalRun::Query& q) {
  const double sg = q.scores[q.gt];
  int r = 1;
  for (std::size_t c = 0; c < q.scores.size(); ++c) {
    if (static_cast<int>(c) == q.gt) continue;
    if (q.scores[c] > sg || (q.scores[c] == sg && static_cast<int>(c) < q.gt)) ++r;
  }
  return r;
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail

inline MetricReport evaluate(const RetrievalRun& run, const std::vector<int>& ks) {
  run.validate();
  MetricReport rep;
  std::vector<double> ranks;
  std::map<std::string, std::vector<double>> per_movie;
  for (const auto& q : run.queries) {
    const int r = detail::rank_of(q);
    ranks.push_back(r);
    per_movie[q.movie].push_back(r);
  }
  for (int k : ks) {
    int hits = 0;
    for (double r : ranks)
      if (r <= k) ++hits;
    rep.recall_at.emplace_back(k, ranks.empty() ? 0.0 : static_cast<double>(hits) / ranks.size());
  }
  rep.medr = detail::median(ranks);
  if (run.setting == Setting::WithinMovie) {
    double sum = 0.0;
    for (const auto& [_, rs] : per_movie) sum += detail::median(rs);
    rep.avg_medr = per_movie.empty() ? 0.0 : sum / per_movie.size();
  }
  return rep;
}

/// Second-stage re-ranking: per query, the n best first-stage candidates get
/// `scorer(paragraph, segment)` added to their score; the rest are unchanged.
inline RetrievalRun rerank_top_n(const RetrievalRun& run, int n,
                                 const std::function<double(int, int)>& scorer) {
  if (n < 1) throw InputError("rerank_top_n: n must be >= 1");
  RetrievalRun out = run;
  for (auto& q : out.queries) {
    std::vector<int> order(q.candidates.size());
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (q.scores[a] != q.scores[b]) return q.scores[a] > q.scores[b];
      return a < b;
    });
    const std::size_t depth = std::min<std::size_t>(order.size(), static_cast<std::size_t>(n));
    for (std::size_t r = 0; r < depth; ++r) {
      const int c = order[r];
      q.scores[c] += scorer(q.paragraph, q.candidates[c]);
    }
  }
  return out;
}

namespace detail {

inline Vec embed_pool(const EmbeddingMap& map, const std::vector<Vec>& inputs) {
  if (inputs.empty()) return Vec();
  Vec acc(map.output_dim(), 0.0);
  for (const Vec& x : inputs) {
    const Vec y = map.forward(x);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += y[k];
  }
  for (double& v : acc) v /= static_cast<double>(inputs.size());
  return acc;
}

inline double pool_cosine(const Vec& a, const Vec& b) {
  if (a.empty() || b.empty()) return 0.0;
  return cosine_similarity(a, b);
}

}  // namespace detail

/// Per-channel VSE scores: embed, mean-pool, cosine. Channels absent from the
/// input score 0.
inline KindScores vse_score(const io::Paragraph& p, const io::Segment& s, const ModelParams& params) {
  using graph::NodeKind;
  KindScores out;
  out.appearance = detail::pool_cosine(
      detail::embed_pool(params.vse_text[0], training::detail::matrix_rows(p.sentences)),
      detail::embed_pool(params.vse_vis[0], training::detail::matrix_rows(s.shots)));
  out.cast = detail::pool_cosine(
      detail::embed_pool(params.vse_text[1], training::detail::node_features(p.sem_graph, NodeKind::Character)),
      detail::embed_pool(params.vse_vis[1], training::detail::node_features(s.vis_graph, NodeKind::Character)));
  out.action = detail::pool_cosine(
      detail::embed_pool(params.vse_text[2], training::detail::node_features(p.sem_graph, NodeKind::Action)),
      detail::embed_pool(params.vse_vis[2], training::detail::node_features(s.vis_graph, NodeKind::Action)));
  return out;
}

struct PipelineConfig {
  Method method = Method::EfmCim;
  std::vector<Setting> settings = {Setting::CrossMovie, Setting::WithinMovie};
  std::vector<int> ks = {1, 5, 10};
  int rerank_n = 15;
  bool efm_normalize = false;
  FusionWeights cross_weights{0.3, 1.0, 0.1};
  FusionWeights within_weights{0.3, 0.3, 0.1};
  qap::CimParams pruning;
};

namespace detail {

/// Everything run_pipeline precomputes per dataset item for the chosen method.
struct Precomputed {
  // paragraph side
  std::vector<Matrix> sent_emb;        // efm_text-embedded sentences
  std::vector<Vec> p_app, p_cast, p_act;
  std::vector<graph::TypedGraph> p_graph_emb;  // cim_text-embedded semantic graphs
  // segment side
  std::vector<Matrix> shot_emb;
  std::vector<Vec> s_app, s_cast, s_act;
  std::vector<graph::TypedGraph> s_graph_emb;
};

inline graph::TypedGraph embed_graph(const graph::TypedGraph& g, const EmbeddingMap& map) {
  graph::TypedGraph out = g;
  for (auto& n : out.nodes) n.feature = map.forward(n.feature);
  return out;
}

inline Matrix embed_matrix(const Matrix& m, const EmbeddingMap& map) {
  std::vector<Vec> rows;
  rows.reserve(m.rows);
  for (int i = 0; i < m.rows; ++i) rows.push_back(map.forward(m.row_vec(i)));
  return Matrix::from_rows(rows);
}

inline Precomputed precompute(const io::Dataset& ds, const ModelParams& params, Method method) {
  using graph::NodeKind;
  Precomputed pc;
  const bool vse = method == Method::Vse;
  for (const auto& p : ds.paragraphs) {
    if (vse) {
      pc.p_app.push_back(embed_pool(params.vse_text[0], training::detail::matrix_rows(p.sentences)));
      pc.p_cast.push_back(embed_pool(params.vse_text[1], training::detail::node_features(p.sem_graph, NodeKind::Character)));
      pc.p_act.push_back(embed_pool(params.vse_text[2], training::detail::node_features(p.sem_graph, NodeKind::Action)));
    } else {
      pc.sent_emb.push_back(embed_matrix(p.sentences, params.efm_text));
      pc.p_graph_emb.push_back(embed_graph(p.sem_graph, params.cim_text));
      pc.p_cast.push_back(embed_pool(params.cim_text, training::detail::node_features(p.sem_graph, NodeKind::Character)));
      pc.p_act.push_back(embed_pool(params.cim_text, training::detail::node_features(p.sem_graph, NodeKind::Action)));
    }
  }
  for (const auto& s : ds.segments) {
    if (vse) {
      pc.s_app.push_back(embed_pool(params.vse_vis[0], training::detail::matrix_rows(s.shots)));
      pc.s_cast.push_back(embed_pool(params.vse_vis[1], training::detail::node_features(s.vis_graph, NodeKind::Character)));
      pc.s_act.push_back(embed_pool(params.vse_vis[2], training::detail::node_features(s.vis_graph, NodeKind::Action)));
    } else {
      pc.shot_emb.push_back(embed_matrix(s.shots, params.efm_vis));
      pc.s_graph_emb.push_back(embed_graph(s.vis_graph, params.cim_vis));
      pc.s_cast.push_back(embed_pool(params.cim_vis, training::detail::node_features(s.vis_graph, NodeKind::Character)));
      pc.s_act.push_back(embed_pool(params.cim_vis, training::detail::node_features(s.vis_graph, NodeKind::Action)));
    }
  }
  return pc;
}

inline double stage1_score(const Precomputed& pc, Method method, bool efm_normalize,
                           const FusionWeights& w, int pi, int si) {
  KindScores ks;
  if (method == Method::Vse) {
    ks.appearance = pool_cosine(pc.s_app[si], pc.p_app[pi]);
  } else {
    const Matrix& phi = pc.sent_emb[pi];
    const Matrix& psi = pc.shot_emb[si];
    if (phi.rows > 0 && psi.rows > 0) ks.appearance = event_flow::efm_score(phi, psi, efm_normalize);
  }
  ks.cast = pool_cosine(pc.s_cast[si], pc.p_cast[pi]);
  ks.action = pool_cosine(pc.s_act[si], pc.p_act[pi]);
  return fuse(ks, w);
}

}  // namespace detail

/// First-stage scoring (VSE or EFM-fused), optional top-N CIM re-ranking, and
/// metric evaluation per requested setting.
inline std::map<Setting, MetricReport> run_pipeline(const io::Dataset& ds, const TrainState& st,
                                                    const PipelineConfig& cfg) {
  if (ds.dims.text_dim != st.dims.text_dim || ds.dims.vis_dim != st.dims.vis_dim ||
      ds.dims.node_dim != st.dims.node_dim)
    throw io::CompatibilityError("dataset feature dimensions do not match the checkpoint");
  cfg.cross_weights.validate();
  cfg.within_weights.validate();

  const auto pc = detail::precompute(ds, st.params, cfg.method);

  // Ground truth: first annotated segment per paragraph.
  std::map<int, int> gt;
  for (const auto& [pi, si] : ds.pairs)
    if (!gt.count(pi)) gt[pi] = si;

  auto cim = [&](int pi, int si) {
    return qap::cim_score(pc.s_graph_emb[si], pc.p_graph_emb[pi], cfg.pruning);
  };

  std::map<Setting, MetricReport> out;
  for (Setting setting : cfg.settings) {
    const FusionWeights& w = setting == Setting::CrossMovie ? cfg.cross_weights : cfg.within_weights;
    RetrievalRun run;
    run.setting = setting;
    for (const auto& [pi, si] : gt) {
      RetrievalRun::Query q;
      q.paragraph = pi;
      q.movie = ds.paragraphs[pi].movie;
      for (int c = 0; c < static_cast<int>(ds.segments.size()); ++c) {
        if (setting == Setting::WithinMovie && ds.segments[c].movie != q.movie) continue;
        if (c == si) q.gt = static_cast<int>(q.candidates.size());
        q.candidates.push_back(c);
        q.candidate_movies.push_back(ds.segments[c].movie);
        q.scores.push_back(detail::stage1_score(pc, cfg.method, cfg.efm_normalize, w, pi, c));
      }
      run.queries.push_back(std::move(q));
    }
    if (cfg.method == Method::EfmCim) run = rerank_top_n(run, cfg.rerank_n, cim);
    out.emplace(setting, evaluate(run, cfg.ks));
  }
  return out;
}

}  // namespace msmatch::retrieval
