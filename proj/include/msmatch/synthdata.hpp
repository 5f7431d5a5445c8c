#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "msmatch/core.hpp"
#include "msmatch/dataset.hpp"
#include "msmatch/graph.hpp"

namespace msmatch::synth {

/// Generator knobs. Character identities are latent vectors private to each
/// movie; event (appearance) and verb latents come from pools shared across
/// movies, so appearance alone is deliberately ambiguous between movies while
/// cast composition is not.
struct GenConfig {
  int movies = 1;
  int segments_per_movie = 1;
  double sentences_per_paragraph = 5.9;
  double shots_per_segment = 20.0;  // paper-scale mean is 92.3; desk default stays small
  int characters_per_movie = 6;
  int feature_dim = 16;
  double noise_sigma = 0.0;
  double distractor_rate = 0.0;
  std::uint64_t seed = 0;
  int event_pool = 16;
  int verb_pool = 12;
  int max_characters_per_sentence = 3;

  void validate() const {
    if (movies < 1 || segments_per_movie < 1) throw InputError("GenConfig: movie/segment counts must be >= 1");
    if (!(sentences_per_paragraph > 0.0) || !(shots_per_segment > 0.0))
      throw InputError("GenConfig: size means must be positive");
    if (characters_per_movie < 1 || feature_dim < 1) throw InputError("GenConfig: counts must be >= 1");
    if (noise_sigma < 0.0) throw InputError("GenConfig: noise_sigma must be >= 0");
    if (distractor_rate < 0.0 || distractor_rate > 1.0) throw InputError("GenConfig: distractor_rate must be in [0,1]");
    if (event_pool < 1 || verb_pool < 1 || max_characters_per_sentence < 1)
      throw InputError("GenConfig: pool sizes must be >= 1");
  }
};

/// One generated pair with its planted alignment and node correspondence.
struct PlantedPair {
  io::Paragraph paragraph;
  io::Segment segment;
  std::vector<int> sentence_of_shot;              // planted Y, one sentence per shot
  std::vector<std::pair<int, int>> node_map;      // (video node, paragraph node)
  std::string movie;
};

namespace detail {

inline Vec unit_latent(Rng& rng, int d) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  const double n = norm(v);
  if (n < 1e-12) {
    Vec e(d, 0.0);
    e[0] = 1.0;
    return e;
  }
  for (double& x : v) x /= n;
  return v;
}

/// latent + sigma * g / sqrt(D). Noise variates are always drawn so the
/// structural random stream is identical across sigma values of one seed.
inline Vec noisy(const Vec& latent, double sigma, Rng& rng) {
  Vec v = latent;
  const double scale = sigma / std::sqrt(static_cast<double>(latent.size()));
  for (double& x : v) x += scale * rng.normal();
  return v;
}

}  // namespace detail

inline std::vector<PlantedPair> generate(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int d = cfg.feature_dim;

  std::vector<Vec> events(cfg.event_pool), verbs(cfg.verb_pool);
  for (auto& v : events) v = detail::unit_latent(rng, d);
  for (auto& v : verbs) v = detail::unit_latent(rng, d);

  std::vector<PlantedPair> out;
  for (int mi = 0; mi < cfg.movies; ++mi) {
    std::vector<Vec> cast(cfg.characters_per_movie);
    for (auto& v : cast) v = detail::unit_latent(rng, d);
    const std::string movie = "m" + std::to_string(mi);

    for (int si = 0; si < cfg.segments_per_movie; ++si) {
      PlantedPair pp;
      pp.movie = movie;
      pp.paragraph.movie = movie;
      pp.segment.movie = movie;
      pp.paragraph.id = "p" + std::to_string(mi) + "_" + std::to_string(si);
      pp.segment.id = "s" + std::to_string(mi) + "_" + std::to_string(si);

      // A paragraph never repeats an event latent: repeated appearance content
      // would make the planted alignment non-unique. Sentence counts are
      // therefore capped by the event pool.
      const int sentences = std::min(cfg.event_pool, std::max(1, rng.poisson(cfg.sentences_per_paragraph)));
      const int shots = std::max(1, rng.poisson(cfg.shots_per_segment));

      // Contiguous shot run per sentence (empty runs only when shots < sentences).
      std::vector<std::pair<int, int>> runs(sentences, {0, 0});
      if (shots >= sentences) {
        auto cuts = rng.sample_distinct(shots - 1, sentences - 1);
        for (int& c : cuts) ++c;
        cuts.push_back(shots);
        int begin = 0;
        for (int s = 0; s < sentences; ++s) {
          runs[s] = {begin, cuts[s]};
          begin = cuts[s];
        }
      } else {
        for (int s = 0; s < sentences; ++s) runs[s] = s < shots ? std::make_pair(s, s + 1) : std::make_pair(0, 0);
      }

      struct Mention {
        int sentence;
        int char_node;  // paragraph-graph node index
        int verb_node;
        int movie_char;
        int verb_id;
      };
      std::vector<Mention> mentions;
      std::vector<int> sentence_event = rng.sample_distinct(cfg.event_pool, sentences);
      rng.shuffle(sentence_event);
      int para_nodes = 0;

      for (int s = 0; s < sentences; ++s) {
        const int nchars = rng.uniform_int(1, std::min(cfg.max_characters_per_sentence, cfg.characters_per_movie));
        const auto char_ids = rng.sample_distinct(cfg.characters_per_movie, nchars);
        const int nverbs = rng.uniform_int(1, nchars);
        const auto verb_ids = rng.sample_distinct(cfg.verb_pool, nverbs);

        graph::SentenceGraphRecord rec;
        rec.sentence_index = s;
        for (int t = 0; t < nchars; ++t) {
          rec.characters.push_back({movie + "c" + std::to_string(char_ids[t]),
                                    detail::noisy(cast[char_ids[t]], cfg.noise_sigma, rng)});
        }
        for (int v = 0; v < nverbs; ++v) {
          rec.verbs.push_back({"v" + std::to_string(verb_ids[v]),
                               detail::noisy(verbs[verb_ids[v]], cfg.noise_sigma, rng)});
        }
        for (int t = 0; t < nchars; ++t) {
          const int vslot = t % nverbs;
          rec.attachments.push_back({vslot, t});
          mentions.push_back({s, para_nodes + t, para_nodes + nchars + vslot, char_ids[t], verb_ids[vslot]});
        }
        para_nodes += nchars + nverbs;
        pp.paragraph.records.push_back(std::move(rec));
      }

      std::vector<Vec> sentence_feats(sentences);
      for (int s = 0; s < sentences; ++s)
        sentence_feats[s] = detail::noisy(events[sentence_event[s]], cfg.noise_sigma, rng);
      pp.paragraph.sentences = Matrix::from_rows(sentence_feats);
      pp.paragraph.sem_graph = graph::build_semantic_graph(pp.paragraph.records);

      pp.sentence_of_shot.assign(shots, 0);
      std::vector<Vec> shot_feats(shots);
      for (int s = 0; s < sentences; ++s)
        for (int t = runs[s].first; t < runs[s].second; ++t) pp.sentence_of_shot[t] = s;
      for (int t = 0; t < shots; ++t)
        shot_feats[t] = detail::noisy(events[sentence_event[pp.sentence_of_shot[t]]], cfg.noise_sigma, rng);
      pp.segment.shots = Matrix::from_rows(shot_feats);

      // Detections: one per mention placed inside the sentence's run, plus
      // distractors. para_char/para_verb are -1 on distractors.
      struct Det {
        int shot;
        Vec person, action;
        int para_char, para_verb;
      };
      std::vector<Det> dets;
      for (const auto& m : mentions) {
        const auto [lo, hi] = runs[m.sentence];
        if (lo >= hi) continue;  // sentence without shots: nothing visible
        Det det;
        det.shot = rng.uniform_int(lo, hi - 1);
        det.person = detail::noisy(cast[m.movie_char], cfg.noise_sigma, rng);
        det.action = detail::noisy(verbs[m.verb_id], cfg.noise_sigma, rng);
        det.para_char = m.char_node;
        det.para_verb = m.verb_node;
        dets.push_back(std::move(det));
      }
      for (int t = 0; t < shots; ++t) {
        if (rng.uniform() < cfg.distractor_rate) {
          Det det;
          det.shot = t;
          det.person = detail::noisy(cast[rng.uniform_int(0, cfg.characters_per_movie - 1)], cfg.noise_sigma, rng);
          det.action = detail::noisy(verbs[rng.uniform_int(0, cfg.verb_pool - 1)], cfg.noise_sigma, rng);
          det.para_char = -1;
          det.para_verb = -1;
          dets.push_back(std::move(det));
        }
      }
      std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.shot < b.shot; });

      std::vector<int> verb_first(para_nodes, -1);  // earliest detection per verb node
      for (std::size_t p = 0; p < dets.size(); ++p) {
        pp.segment.detections.push_back({dets[p].shot, dets[p].person, dets[p].action});
        if (dets[p].para_char >= 0) pp.node_map.emplace_back(2 * static_cast<int>(p), dets[p].para_char);
        if (dets[p].para_verb >= 0 && verb_first[dets[p].para_verb] < 0)
          verb_first[dets[p].para_verb] = static_cast<int>(p);
      }
      for (int v = 0; v < para_nodes; ++v)
        if (verb_first[v] >= 0) pp.node_map.emplace_back(2 * verb_first[v] + 1, v);
      std::sort(pp.node_map.begin(), pp.node_map.end());

      pp.segment.vis_graph = graph::build_visual_graph(pp.segment.detections);
      out.push_back(std::move(pp));
    }
  }
  return out;
}

/// Writes the JSON-lines files consumed by the loader, plus the planted
/// ground-truth sidecar.
inline void export_dataset(const std::vector<PlantedPair>& data, const std::string& dir) {
  auto open = [&](const std::string& name) {
    std::ofstream os(dir + "/" + name, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + dir + "/" + name);
    return os;
  };
  auto paragraphs = open("paragraphs.jsonl");
  auto segments = open("segments.jsonl");
  auto pairs = open("pairs.jsonl");
  auto truth = open("ground_truth.jsonl");
  for (const auto& pp : data) {
    paragraphs << io::paragraph_json(pp.paragraph).dump() << "\n";
    segments << io::segment_json(pp.segment).dump() << "\n";
    pairs << io::json{{"paragraph_id", pp.paragraph.id}, {"segment_id", pp.segment.id}}.dump() << "\n";
    io::json nm = io::json::array();
    for (const auto& [vi, pa] : pp.node_map) nm.push_back({vi, pa});
    truth << io::json{{"paragraph_id", pp.paragraph.id},
                      {"segment_id", pp.segment.id},
                      {"sentence_of_shot", pp.sentence_of_shot},
                      {"node_map", nm}}
                 .dump()
          << "\n";
  }
  for (auto* os : {&paragraphs, &segments, &pairs, &truth})
    if (!*os) throw IoError("write failed under " + dir);
}

}  // namespace msmatch::synth
