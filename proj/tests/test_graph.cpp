#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "msmatch/core.hpp"
#include "msmatch/graph.hpp"

using namespace msmatch;
using namespace msmatch::graph;

namespace {

DetectionRecord det(int shot, Vec person, Vec action) { return DetectionRecord{shot, std::move(person), std::move(action)}; }

std::vector<DetectionRecord> random_detections(Rng& rng, int count, int dim) {
  std::vector<DetectionRecord> out;
  int shot = 0;
  for (int i = 0; i < count; ++i) {
    shot += rng.uniform_int(0, 2);
    Vec p(dim), a(dim);
    for (double& x : p) x = rng.uniform(-1, 1);
    for (double& x : a) x = rng.uniform(-1, 1);
    out.push_back(det(shot, p, a));
  }
  return out;
}

}  // namespace

TEST_CASE("visual graph: same-shot detections") {
  const auto g = build_visual_graph({det(3, {1, 0}, {0, 1}), det(3, {0.5, 0.5}, {1, 1})});
  REQUIRE(g.size() == 4);
  CHECK(g.nodes[0].kind == NodeKind::Character);
  CHECK(g.nodes[1].kind == NodeKind::Action);
  CHECK(g.edges.size() == 3);
  CHECK(g.has_edge(0, 1));  // c1-a1
  CHECK(g.has_edge(2, 3));  // c2-a2
  CHECK(g.has_edge(0, 2));  // c1-c2
  CHECK_FALSE(g.has_edge(1, 3));
}

TEST_CASE("visual graph: adjacency window is one shot") {
  const auto g = build_visual_graph({det(0, {1}, {1}), det(3, {1}, {1})});
  CHECK_FALSE(g.has_edge(0, 2));
  const auto g2 = build_visual_graph({det(0, {1}, {1}), det(1, {1}, {1})});
  CHECK(g2.has_edge(0, 2));
}

TEST_CASE("visual graph: unsorted input rejected") {
  CHECK_THROWS_AS(build_visual_graph({det(2, {1}, {1}), det(1, {1}, {1})}), InputError);
}

TEST_CASE("visual graph edges match rule-checking oracle") {
  Rng rng(31);
  const auto dets = random_detections(rng, 10, 3);
  const auto g = build_visual_graph(dets);
  std::set<std::pair<int, int>> expect;
  for (int i = 0; i < 10; ++i) {
    expect.insert({2 * i, 2 * i + 1});
    for (int j = 0; j < 10; ++j) {
      if (i != j && std::abs(dets[i].shot_index - dets[j].shot_index) <= 1)
        expect.insert({std::min(2 * i, 2 * j), std::max(2 * i, 2 * j)});
    }
  }
  const std::set<std::pair<int, int>> actual(g.edges.begin(), g.edges.end());
  CHECK(actual == expect);
}

TEST_CASE("semantic graph: shared verb builds a clique") {
  SentenceGraphRecord rec;
  rec.sentence_index = 0;
  rec.characters = {{"A", {1, 0}}, {"B", {0, 1}}};
  rec.verbs = {{"v", {1, 1}}};
  rec.attachments = {{0, 0}, {0, 1}};
  const auto g = build_semantic_graph({rec});
  REQUIRE(g.size() == 3);
  CHECK(g.has_edge(0, 2));  // A-v
  CHECK(g.has_edge(1, 2));  // B-v
  CHECK(g.has_edge(0, 1));  // A-B
  CHECK(g.edges.size() == 3);
}

TEST_CASE("semantic graph: verb with no characters is isolated") {
  SentenceGraphRecord rec;
  rec.sentence_index = 0;
  rec.verbs = {{"v", {1, 1}}};
  const auto g = build_semantic_graph({rec});
  CHECK(g.size() == 1);
  CHECK(g.edges.empty());
  CHECK(g.nodes[0].kind == NodeKind::Action);
}

TEST_CASE("semantic graph: sentences stay disjoint") {
  SentenceGraphRecord a, b;
  a.sentence_index = 0;
  a.characters = {{"A", {1, 0}}};
  a.verbs = {{"v", {1, 1}}};
  a.attachments = {{0, 0}};
  b.sentence_index = 1;
  b.characters = {{"B", {0, 1}}};
  b.verbs = {{"w", {1, 1}}};
  b.attachments = {{0, 0}};
  const auto g = build_semantic_graph({a, b});
  REQUIRE(g.size() == 4);
  for (const auto& [x, y] : g.edges) {
    const bool first = x < 2;
    CHECK((y < 2) == first);
  }
}

TEST_CASE("semantic graph: dangling attachment rejected") {
  SentenceGraphRecord rec;
  rec.sentence_index = 0;
  rec.characters = {{"A", {1, 0}}};
  rec.verbs = {{"v", {1, 1}}};
  rec.attachments = {{1, 0}};
  CHECK_THROWS_AS(build_semantic_graph({rec}), InputError);
}

TEST_CASE("adjacency matrix") {
  TypedGraph tri;
  for (int i = 0; i < 3; ++i) tri.nodes.push_back({NodeKind::Character, {1.0}, "", -1});
  tri.add_edge(0, 1);
  tri.add_edge(1, 2);
  tri.add_edge(0, 2);
  tri.finalize_edges();
  const auto a = adjacency(tri);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(static_cast<int>(a[i * 3 + j]) == (i == j ? 0 : 1));

  TypedGraph lone;
  lone.nodes.push_back({NodeKind::Action, {1.0}, "", -1});
  const auto a2 = adjacency(lone);
  CHECK(a2 == std::vector<std::uint8_t>{0});
}

TEST_CASE("pair similarity matrix: basics") {
  TypedGraph q, p;
  q.nodes.push_back({NodeKind::Character, {1, 0}, "", -1});
  p.nodes.push_back({NodeKind::Character, {1, 0}, "", -1});
  auto k = build_similarity_matrix(q, p);
  CHECK(k.node_sim(0, 0) == 1.0);

  TypedGraph act;
  act.nodes.push_back({NodeKind::Action, {1, 0}, "", -1});
  auto k2 = build_similarity_matrix(q, act);
  CHECK(k2.node_sim(0, 0) == 0.0);
}

TEST_CASE("pair similarity matrix: entries match recomputation oracle") {
  Rng rng(32);
  TypedGraph q, p;
  for (int i = 0; i < 3; ++i) {
    Vec f(3);
    for (double& x : f) x = rng.uniform(-1, 1);
    q.nodes.push_back({i < 2 ? NodeKind::Character : NodeKind::Action, f, "", -1});
  }
  for (int i = 0; i < 3; ++i) {
    Vec f(3);
    for (double& x : f) x = rng.uniform(-1, 1);
    p.nodes.push_back({i < 1 ? NodeKind::Character : NodeKind::Action, f, "", -1});
  }
  q.add_edge(0, 1);
  q.add_edge(1, 2);
  q.finalize_edges();
  p.add_edge(0, 1);
  p.finalize_edges();

  const auto k = build_similarity_matrix(q, p);
  for (int i = 0; i < 3; ++i)
    for (int a = 0; a < 3; ++a)
      for (int j = 0; j < 3; ++j)
        for (int b = 0; b < 3; ++b) {
          const double v = k.at(i, a, j, b);
          CHECK(v == k.at(j, b, i, a));  // symmetry
          if (i == j && a == b) {
            const double expect = q.nodes[i].kind == p.nodes[a].kind
                                      ? dot_similarity(q.nodes[i].feature, p.nodes[a].feature)
                                      : 0.0;
            CHECK(v == Catch::Approx(expect).margin(1e-12));
          } else if (q.has_edge(i, j) && p.has_edge(a, b) && q.nodes[i].kind == p.nodes[a].kind &&
                     q.nodes[j].kind == p.nodes[b].kind) {
            const double expect = dot_similarity(q.nodes[i].feature, p.nodes[a].feature) +
                                  dot_similarity(q.nodes[j].feature, p.nodes[b].feature);
            CHECK(v == Catch::Approx(expect).margin(1e-12));
          } else {
            CHECK(v == 0.0);
          }
        }
}

TEST_CASE("pair similarity matrix: dim mismatch rejected") {
  TypedGraph q, p;
  q.nodes.push_back({NodeKind::Character, {1, 0}, "", -1});
  p.nodes.push_back({NodeKind::Character, {1, 0, 0}, "", -1});
  CHECK_THROWS_AS(build_similarity_matrix(q, p), InputError);
}
