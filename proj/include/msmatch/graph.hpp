#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "msmatch/core.hpp"

namespace msmatch::graph {

enum class NodeKind : std::uint8_t { Character, Action };

struct Node {
  NodeKind kind = NodeKind::Character;
  Vec feature;
  std::string label;    // character/verb name when known
  int shot_index = -1;  // visual graphs only
};

/// Undirected typed graph. Edges are stored normalized (lo < hi), sorted and
/// deduplicated so membership tests are binary searches.
struct TypedGraph {
  std::vector<Node> nodes;
  std::vector<std::pair<int, int>> edges;

  int size() const { return static_cast<int>(nodes.size()); }

  int count(NodeKind k) const {
    int c = 0;
    for (const auto& n : nodes)
      if (n.kind == k) ++c;
    return c;
  }

  int feature_dim() const { return nodes.empty() ? 0 : static_cast<int>(nodes.front().feature.size()); }

  void add_edge(int a, int b) {
    if (a == b) throw InputError("TypedGraph: self-loop edge");
    if (a < 0 || b < 0 || a >= size() || b >= size()) throw InputError("TypedGraph: edge endpoint out of range");
    if (a > b) std::swap(a, b);
    edges.emplace_back(a, b);
  }

  void finalize_edges() {
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }

  bool has_edge(int a, int b) const {
    if (a > b) std::swap(a, b);
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(a, b));
  }

  void validate() const {
    const int d = feature_dim();
    for (const auto& n : nodes) {
      if (static_cast<int>(n.feature.size()) != d) throw InputError("TypedGraph: ragged node feature dims");
      if (!all_finite(n.feature)) throw InputError("TypedGraph: non-finite node feature");
    }
    for (const auto& [a, b] : edges) {
      if (a == b || a < 0 || b >= size()) throw InputError("TypedGraph: invalid edge");
    }
  }
};

/// One detected person instance in one shot, with its action feature.
struct DetectionRecord {
  int shot_index = 0;
  Vec person;
  Vec action;
};

struct NamedFeature {
  std::string label;
  Vec feature;
};

struct VerbAttachment {
  int verb = 0;       // index into verbs
  int character = 0;  // index into characters
};

/// Parsed structure of one synopsis sentence: its character mentions, its
/// action verbs, and which character attaches to which verb.
struct SentenceGraphRecord {
  int sentence_index = 0;
  std::vector<NamedFeature> characters;
  std::vector<NamedFeature> verbs;
  std::vector<VerbAttachment> attachments;
};

/// Visual graph over detections: detection t produces a character node (2t)
/// and its action node (2t+1). Characters in the same or adjacent shots are
/// pairwise connected; each character connects to its own action node.
inline TypedGraph build_visual_graph(const std::vector<DetectionRecord>& detections) {
  TypedGraph g;
  int last_shot = std::numeric_limits<int>::min();
  for (const auto& d : detections) {
    if (d.shot_index < last_shot) throw InputError("build_visual_graph: detections not sorted by shot_index");
    last_shot = d.shot_index;
    g.nodes.push_back(Node{NodeKind::Character, d.person, "", d.shot_index});
    g.nodes.push_back(Node{NodeKind::Action, d.action, "", d.shot_index});
  }
  const int t = static_cast<int>(detections.size());
  for (int i = 0; i < t; ++i) {
    g.add_edge(2 * i, 2 * i + 1);
    for (int j = i + 1; j < t; ++j) {
      if (detections[j].shot_index - detections[i].shot_index <= 1) g.add_edge(2 * i, 2 * j);
    }
  }
  g.finalize_edges();
  g.validate();
  return g;
}

/// Semantic graph: a disjoint union of per-sentence sub-graphs. Each character
/// links to its parent verb; characters sharing a verb form a clique.
inline TypedGraph build_semantic_graph(const std::vector<SentenceGraphRecord>& sentences) {
  TypedGraph g;
  for (const auto& s : sentences) {
    const int char_base = g.size();
    for (const auto& c : s.characters) g.nodes.push_back(Node{NodeKind::Character, c.feature, c.label, -1});
    const int verb_base = g.size();
    for (const auto& v : s.verbs) g.nodes.push_back(Node{NodeKind::Action, v.feature, v.label, -1});

    const int nc = static_cast<int>(s.characters.size());
    const int nv = static_cast<int>(s.verbs.size());
    std::vector<std::vector<int>> verb_members(nv);
    for (const auto& att : s.attachments) {
      if (att.verb < 0 || att.verb >= nv || att.character < 0 || att.character >= nc)
        throw InputError("build_semantic_graph: dangling attachment reference");
      g.add_edge(char_base + att.character, verb_base + att.verb);
      verb_members[att.verb].push_back(att.character);
    }
    for (const auto& members : verb_members) {
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b)
          if (members[a] != members[b]) g.add_edge(char_base + members[a], char_base + members[b]);
    }
  }
  g.finalize_edges();
  g.validate();
  return g;
}

/// Dense symmetric 0/1 adjacency with zero diagonal, row-major n*n.
inline std::vector<std::uint8_t> adjacency(const TypedGraph& g) {
  const int n = g.size();
  std::vector<std::uint8_t> a(static_cast<std::size_t>(n) * n, 0);
  for (const auto& [i, j] : g.edges) {
    a[static_cast<std::size_t>(i) * n + j] = 1;
    a[static_cast<std::size_t>(j) * n + i] = 1;
  }
  return a;
}

/// Pairwise similarity matrix K over (video node, paragraph node) pairs.
/// Index (i, a) flattens to i*m + a; the diagonal holds node similarities and
/// off-diagonal entries hold edge-pair similarities.
struct PairSimilarityMatrix {
  int n = 0;  // |V_q| (video side)
  int m = 0;  // |V_p| (paragraph side)
  std::vector<double> k;

  int dim() const { return n * m; }

  std::size_t flat(int i, int a) const { return static_cast<std::size_t>(i) * m + a; }

  double at(int i, int a, int j, int b) const {
    return k[flat(i, a) * dim() + flat(j, b)];
  }
  double& at(int i, int a, int j, int b) {
    return k[flat(i, a) * dim() + flat(j, b)];
  }

  double node_sim(int i, int a) const { return at(i, a, i, a); }
};

/// K from graph features: node similarities are dot products between
/// same-kind nodes; an edge pair ((i,j) in E_q, (a,b) in E_p) with compatible
/// endpoint kinds scores dot(f_i,f_a) + dot(f_j,f_b), the dot product of the
/// edges' concatenated node features.
inline PairSimilarityMatrix build_similarity_matrix(const TypedGraph& gq, const TypedGraph& gp) {
  if (gq.size() > 0 && gp.size() > 0 && gq.feature_dim() != gp.feature_dim())
    throw InputError("build_similarity_matrix: feature dimension mismatch between graphs");

  PairSimilarityMatrix kmat;
  kmat.n = gq.size();
  kmat.m = gp.size();
  kmat.k.assign(static_cast<std::size_t>(kmat.dim()) * kmat.dim(), 0.0);

  for (int i = 0; i < kmat.n; ++i)
    for (int a = 0; a < kmat.m; ++a)
      if (gq.nodes[i].kind == gp.nodes[a].kind)
        kmat.at(i, a, i, a) = dot_similarity(gq.nodes[i].feature, gp.nodes[a].feature);

  for (const auto& [i, j] : gq.edges) {
    for (const auto& [a, b] : gp.edges) {
      // Two orientations of matching edge (i,j) onto edge (a,b).
      const int qi[2] = {i, j}, qj[2] = {j, i};
      for (int o = 0; o < 2; ++o) {
        const int x = qi[o], y = qj[o];
        if (gq.nodes[x].kind != gp.nodes[a].kind || gq.nodes[y].kind != gp.nodes[b].kind) continue;
        const double val = dot_similarity(gq.nodes[x].feature, gp.nodes[a].feature) +
                           dot_similarity(gq.nodes[y].feature, gp.nodes[b].feature);
        kmat.at(x, a, y, b) = val;
        kmat.at(y, b, x, a) = val;
      }
    }
  }
  return kmat;
}

}  // namespace msmatch::graph
