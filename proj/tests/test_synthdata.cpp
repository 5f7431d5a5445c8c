#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "msmatch/core.hpp"
#include "msmatch/event_flow.hpp"
#include "msmatch/qap.hpp"
#include "msmatch/synthdata.hpp"

using namespace msmatch;
using namespace msmatch::synth;

namespace {

GenConfig tiny_config(std::uint64_t seed) {
  GenConfig cfg;
  cfg.movies = 4;
  cfg.segments_per_movie = 2;
  cfg.sentences_per_paragraph = 2.5;
  cfg.shots_per_segment = 6.0;
  cfg.characters_per_movie = 4;
  cfg.feature_dim = 12;
  cfg.seed = seed;
  cfg.event_pool = 8;
  cfg.verb_pool = 6;
  cfg.max_characters_per_sentence = 2;
  return cfg;
}

bool recovers_alignment(const PlantedPair& pp) {
  const Matrix s = similarity_matrix(pp.paragraph.sentences, pp.segment.shots);
  return event_flow::align(s).assignment.assigned == pp.sentence_of_shot;
}

double alignment_recovery_rate(GenConfig cfg) {
  const auto data = generate(cfg);
  int hits = 0;
  for (const auto& pp : data)
    if (recovers_alignment(pp)) ++hits;
  return static_cast<double>(hits) / data.size();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("one sentence, one shot plants the unit assignment") {
  GenConfig cfg;
  cfg.sentences_per_paragraph = 0.01;
  cfg.shots_per_segment = 0.01;
  cfg.feature_dim = 4;
  cfg.seed = 3;
  const auto data = generate(cfg);
  REQUIRE(data.size() == 1);
  CHECK(data[0].sentence_of_shot == std::vector<int>{0});
  CHECK(data[0].paragraph.sentences.rows == 1);
  CHECK(data[0].segment.shots.rows == 1);
}

TEST_CASE("generation is deterministic for a fixed seed") {
  const auto a = generate(tiny_config(42));
  const auto b = generate(tiny_config(42));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].paragraph.sentences.data == b[i].paragraph.sentences.data);
    CHECK(a[i].segment.shots.data == b[i].segment.shots.data);
    CHECK(a[i].sentence_of_shot == b[i].sentence_of_shot);
    CHECK(a[i].node_map == b[i].node_map);
  }
  const auto c = generate(tiny_config(43));
  CHECK(a[0].paragraph.sentences.data != c[0].paragraph.sentences.data);
}

TEST_CASE("noiseless pairs are recovered exactly by the aligner") {
  auto cfg = tiny_config(44);
  cfg.movies = 15;
  const auto data = generate(cfg);
  for (const auto& pp : data) CHECK(recovers_alignment(pp));
}

TEST_CASE("noiseless pairs are recovered exactly by the exact matcher") {
  auto cfg = tiny_config(45);
  cfg.movies = 10;
  // Small event pool caps sentences per paragraph, keeping node counts within
  // the exact solver's per-kind bound.
  cfg.event_pool = 4;
  const auto data = generate(cfg);
  for (const auto& pp : data) {
    const auto k = graph::build_similarity_matrix(pp.segment.vis_graph, pp.paragraph.sem_graph);
    const auto r = qap::solve_exact(k, pp.segment.vis_graph, pp.paragraph.sem_graph);
    CHECK(r.indicator.pairs == pp.node_map);
  }
}

TEST_CASE("recovery degrades monotonically with noise") {
  std::vector<double> rates;
  for (const double sigma : {0.0, 0.1, 0.3, 1.0}) {
    auto cfg = tiny_config(46);
    cfg.movies = 100;
    cfg.segments_per_movie = 2;
    cfg.noise_sigma = sigma;
    rates.push_back(alignment_recovery_rate(cfg));
  }
  CHECK(rates[0] == 1.0);
  for (std::size_t i = 1; i < rates.size(); ++i) CHECK(rates[i] <= rates[i - 1] + 1e-12);
  CHECK(rates.back() < rates.front());
}

TEST_CASE("distractors appear at the configured rate") {
  auto cfg = tiny_config(47);
  cfg.movies = 30;
  cfg.distractor_rate = 0.5;
  const auto noisy = generate(cfg);
  cfg.distractor_rate = 0.0;
  const auto clean = generate(cfg);
  std::size_t noisy_dets = 0, clean_dets = 0, shots = 0;
  for (const auto& pp : noisy) {
    noisy_dets += pp.segment.detections.size();
    shots += pp.segment.shots.rows;
  }
  for (const auto& pp : clean) clean_dets += pp.segment.detections.size();
  const double rate = static_cast<double>(noisy_dets - clean_dets) / shots;
  CHECK(rate > 0.35);
  CHECK(rate < 0.65);
}

TEST_CASE("planted structures satisfy the module invariants") {
  auto cfg = tiny_config(48);
  cfg.noise_sigma = 0.4;
  cfg.distractor_rate = 0.3;
  const auto data = generate(cfg);
  for (const auto& pp : data) {
    int last = -1;
    for (int s : pp.sentence_of_shot) {
      CHECK(s >= 0);
      CHECK(s >= last);
      last = s;
    }
    qap::MatchIndicator u;
    u.n = pp.segment.vis_graph.size();
    u.m = pp.paragraph.sem_graph.size();
    u.pairs = pp.node_map;
    CHECK(u.feasible(pp.segment.vis_graph, pp.paragraph.sem_graph));
  }
}

TEST_CASE("invalid configs are rejected") {
  GenConfig cfg;
  cfg.movies = 0;
  CHECK_THROWS_AS(generate(cfg), InputError);
  cfg = GenConfig{};
  cfg.distractor_rate = 1.5;
  CHECK_THROWS_AS(generate(cfg), InputError);
  cfg = GenConfig{};
  cfg.noise_sigma = -0.1;
  CHECK_THROWS_AS(generate(cfg), InputError);
}

TEST_CASE("export writes one line per pair and identical bytes for a seed") {
  namespace fs = std::filesystem;
  const fs::path dir1 = fs::temp_directory_path() / "msmatch_synth_a";
  const fs::path dir2 = fs::temp_directory_path() / "msmatch_synth_b";
  fs::create_directories(dir1);
  fs::create_directories(dir2);

  auto cfg = tiny_config(49);
  export_dataset(generate(cfg), dir1.string());
  export_dataset(generate(cfg), dir2.string());
  for (const char* name : {"paragraphs.jsonl", "segments.jsonl", "pairs.jsonl", "ground_truth.jsonl"}) {
    CHECK(slurp(dir1 / name) == slurp(dir2 / name));
  }

  const auto data = generate(cfg);
  std::ifstream pairs(dir1 / "pairs.jsonl");
  std::string line;
  std::size_t count = 0;
  while (std::getline(pairs, line))
    if (!line.empty()) ++count;
  CHECK(count == data.size());

  // Empty dataset still writes valid (empty) files.
  const fs::path dir3 = fs::temp_directory_path() / "msmatch_synth_c";
  fs::create_directories(dir3);
  export_dataset({}, dir3.string());
  CHECK(fs::exists(dir3 / "paragraphs.jsonl"));
  CHECK(fs::file_size(dir3 / "paragraphs.jsonl") == 0);

  fs::remove_all(dir1);
  fs::remove_all(dir2);
  fs::remove_all(dir3);
}
