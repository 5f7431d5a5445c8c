#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "msmatch/core.hpp"
#include "msmatch/graph.hpp"
#include "msmatch/training.hpp"

namespace msmatch::io {

using nlohmann::json;

/// Malformed input file; the message carries file and line context.
class ParseError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dataset features do not fit the model (or each other).
class CompatibilityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unknown paragraph/segment id.
class LookupError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Paragraph {
  std::string id;
  std::string movie;
  Matrix sentences;  // M x text_dim
  std::vector<graph::SentenceGraphRecord> records;
  graph::TypedGraph sem_graph;
};

struct Segment {
  std::string id;
  std::string movie;
  Matrix shots;  // N x vis_dim (visual plus concatenated subtitle part when present)
  std::vector<graph::DetectionRecord> detections;
  graph::TypedGraph vis_graph;
};

struct GroundTruth {
  std::string paragraph_id;
  std::string segment_id;
  std::vector<int> sentence_of_shot;               // -1 for unassigned shots
  std::vector<std::pair<int, int>> node_map;       // (video node, paragraph node)
};

struct Dataset {
  std::vector<Paragraph> paragraphs;
  std::vector<Segment> segments;
  std::vector<std::pair<int, int>> pairs;  // (paragraph index, segment index)
  std::map<std::string, int> paragraph_index;
  std::map<std::string, int> segment_index;
  training::FeatureDims dims;

  int paragraph_of(const std::string& id) const {
    auto it = paragraph_index.find(id);
    if (it == paragraph_index.end()) throw LookupError("unknown paragraph id: " + id);
    return it->second;
  }
  int segment_of(const std::string& id) const {
    auto it = segment_index.find(id);
    if (it == segment_index.end()) throw LookupError("unknown segment id: " + id);
    return it->second;
  }
};

struct LoadOptions {
  std::vector<std::string> verb_whitelist;  // when nonempty, drop verbs outside it
};

namespace detail {

inline std::string ctx(const std::string& file, int line) { return file + ":" + std::to_string(line); }

inline void expect_keys(const json& obj, const std::set<std::string>& required,
                        const std::set<std::string>& optional, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!required.count(key) && !optional.count(key)) throw ParseError(where + ": unknown key '" + key + "'");
  }
  for (const auto& key : required) {
    if (!obj.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
  }
}

inline Vec parse_vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected a feature array");
  Vec v;
  v.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError(where + ": feature entries must be numbers");
    v.push_back(x.get<double>());
  }
  if (!all_finite(v)) throw ParseError(where + ": non-finite feature entry");
  return v;
}

inline std::vector<Vec> parse_vec_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected an array of feature arrays");
  std::vector<Vec> out;
  for (const auto& x : j) out.push_back(parse_vec(x, where));
  return out;
}

inline std::string parse_str(const json& obj, const char* key, const std::string& where) {
  if (!obj.at(key).is_string()) throw ParseError(where + ": '" + key + "' must be a string");
  return obj.at(key).get<std::string>();
}

inline void check_dim(int& dim, const Vec& v, const std::string& where, const char* what) {
  if (v.empty()) throw ParseError(where + std::string(": empty ") + what + " feature");
  if (dim == 0) dim = static_cast<int>(v.size());
  if (dim != static_cast<int>(v.size()))
    throw ParseError(where + std::string(": inconsistent ") + what + " feature dimension");
}

/// Calls fn(parsed json, "file:line") for every nonempty line.
template <typename Fn>
inline void for_each_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(ctx(path, lineno) + ": " + e.what());
    }
    fn(j, ctx(path, lineno));
  }
}

inline graph::SentenceGraphRecord parse_sentence_graph(const json& j, const std::string& where) {
  expect_keys(j, {"sentence_index", "characters", "verbs", "attachments"}, {}, where);
  graph::SentenceGraphRecord rec;
  rec.sentence_index = j.at("sentence_index").get<int>();
  if (rec.sentence_index < 0) throw ParseError(where + ": negative sentence_index");
  for (const auto& c : j.at("characters")) {
    expect_keys(c, {"label", "feature"}, {}, where);
    rec.characters.push_back({parse_str(c, "label", where), parse_vec(c.at("feature"), where)});
  }
  for (const auto& v : j.at("verbs")) {
    expect_keys(v, {"label", "feature"}, {}, where);
    rec.verbs.push_back({parse_str(v, "label", where), parse_vec(v.at("feature"), where)});
  }
  for (const auto& a : j.at("attachments")) {
    expect_keys(a, {"verb", "character"}, {}, where);
    rec.attachments.push_back({a.at("verb").get<int>(), a.at("character").get<int>()});
  }
  return rec;
}

inline void apply_verb_whitelist(graph::SentenceGraphRecord& rec, const std::set<std::string>& keep) {
  std::vector<int> new_index(rec.verbs.size(), -1);
  std::vector<graph::NamedFeature> verbs;
  for (std::size_t v = 0; v < rec.verbs.size(); ++v) {
    if (keep.count(rec.verbs[v].label)) {
      new_index[v] = static_cast<int>(verbs.size());
      verbs.push_back(rec.verbs[v]);
    }
  }
  std::vector<graph::VerbAttachment> atts;
  for (const auto& a : rec.attachments) {
    if (a.verb >= 0 && a.verb < static_cast<int>(new_index.size()) && new_index[a.verb] >= 0)
      atts.push_back({new_index[a.verb], a.character});
  }
  rec.verbs = std::move(verbs);
  rec.attachments = std::move(atts);
}

}  // namespace detail

inline Dataset load_dataset(const std::string& dir, const LoadOptions& opts = {}) {
  Dataset ds;
  const std::set<std::string> whitelist(opts.verb_whitelist.begin(), opts.verb_whitelist.end());
  int text_dim = 0, node_dim = 0, vis_dim = 0, subtitle_dim = 0;
  bool any_subtitles = false, any_plain = false;

  detail::for_each_line(dir + "/paragraphs.jsonl", [&](const json& j, const std::string& where) {
    detail::expect_keys(j, {"id", "movie_id", "sentences", "sentence_graphs"}, {}, where);
    Paragraph p;
    p.id = detail::parse_str(j, "id", where);
    p.movie = detail::parse_str(j, "movie_id", where);
    if (ds.paragraph_index.count(p.id)) throw ParseError(where + ": duplicate paragraph id '" + p.id + "'");
    auto sentences = detail::parse_vec_list(j.at("sentences"), where);
    for (const auto& s : sentences) detail::check_dim(text_dim, s, where, "sentence");
    p.sentences = Matrix::from_rows(sentences);
    for (const auto& g : j.at("sentence_graphs")) {
      auto rec = detail::parse_sentence_graph(g, where);
      if (rec.sentence_index >= static_cast<int>(sentences.size()))
        throw ParseError(where + ": sentence_index out of range");
      if (!whitelist.empty()) detail::apply_verb_whitelist(rec, whitelist);
      for (const auto& c : rec.characters) detail::check_dim(node_dim, c.feature, where, "node");
      for (const auto& v : rec.verbs) detail::check_dim(node_dim, v.feature, where, "node");
      p.records.push_back(std::move(rec));
    }
    try {
      p.sem_graph = graph::build_semantic_graph(p.records);
    } catch (const InputError& e) {
      throw ParseError(where + ": " + e.what());
    }
    ds.paragraph_index[p.id] = static_cast<int>(ds.paragraphs.size());
    ds.paragraphs.push_back(std::move(p));
  });

  detail::for_each_line(dir + "/segments.jsonl", [&](const json& j, const std::string& where) {
    detail::expect_keys(j, {"id", "movie_id", "shots", "detections"}, {"subtitles"}, where);
    Segment s;
    s.id = detail::parse_str(j, "id", where);
    s.movie = detail::parse_str(j, "movie_id", where);
    if (ds.segment_index.count(s.id)) throw ParseError(where + ": duplicate segment id '" + s.id + "'");
    auto shots = detail::parse_vec_list(j.at("shots"), where);
    for (const auto& v : shots) detail::check_dim(vis_dim, v, where, "shot");
    if (j.contains("subtitles")) {
      any_subtitles = true;
      auto subs = detail::parse_vec_list(j.at("subtitles"), where);
      if (subs.size() != shots.size()) throw ParseError(where + ": subtitle count differs from shot count");
      for (const auto& v : subs) detail::check_dim(subtitle_dim, v, where, "subtitle");
      // Shot representation is the concatenation: visual features then subtitle features.
      for (std::size_t i = 0; i < shots.size(); ++i) shots[i].insert(shots[i].end(), subs[i].begin(), subs[i].end());
    } else {
      any_plain = true;
    }
    if (any_subtitles && any_plain) throw ParseError(where + ": subtitle features must be present on all segments or none");
    s.shots = Matrix::from_rows(shots);
    for (const auto& d : j.at("detections")) {
      detail::expect_keys(d, {"shot", "person", "action"}, {}, where);
      graph::DetectionRecord rec;
      rec.shot_index = d.at("shot").get<int>();
      if (rec.shot_index < 0 || rec.shot_index >= static_cast<int>(shots.size()))
        throw ParseError(where + ": detection shot index out of range");
      rec.person = detail::parse_vec(d.at("person"), where);
      rec.action = detail::parse_vec(d.at("action"), where);
      detail::check_dim(node_dim, rec.person, where, "node");
      detail::check_dim(node_dim, rec.action, where, "node");
      s.detections.push_back(std::move(rec));
    }
    try {
      s.vis_graph = graph::build_visual_graph(s.detections);
    } catch (const InputError& e) {
      throw ParseError(where + ": " + e.what());
    }
    ds.segment_index[s.id] = static_cast<int>(ds.segments.size());
    ds.segments.push_back(std::move(s));
  });

  detail::for_each_line(dir + "/pairs.jsonl", [&](const json& j, const std::string& where) {
    detail::expect_keys(j, {"paragraph_id", "segment_id"}, {}, where);
    const std::string pid = detail::parse_str(j, "paragraph_id", where);
    const std::string sid = detail::parse_str(j, "segment_id", where);
    if (!ds.paragraph_index.count(pid)) throw ParseError(where + ": unresolved paragraph id '" + pid + "'");
    if (!ds.segment_index.count(sid)) throw ParseError(where + ": unresolved segment id '" + sid + "'");
    ds.pairs.emplace_back(ds.paragraph_index[pid], ds.segment_index[sid]);
  });

  ds.dims.text_dim = text_dim;
  ds.dims.vis_dim = vis_dim + subtitle_dim;
  ds.dims.node_dim = node_dim;
  return ds;
}

inline std::vector<GroundTruth> load_ground_truth(const std::string& dir) {
  std::vector<GroundTruth> out;
  detail::for_each_line(dir + "/ground_truth.jsonl", [&](const json& j, const std::string& where) {
    detail::expect_keys(j, {"paragraph_id", "segment_id", "sentence_of_shot", "node_map"}, {}, where);
    GroundTruth gt;
    gt.paragraph_id = detail::parse_str(j, "paragraph_id", where);
    gt.segment_id = detail::parse_str(j, "segment_id", where);
    for (const auto& x : j.at("sentence_of_shot")) gt.sentence_of_shot.push_back(x.get<int>());
    for (const auto& x : j.at("node_map")) {
      if (!x.is_array() || x.size() != 2) throw ParseError(where + ": node_map entries must be [video, paragraph]");
      gt.node_map.emplace_back(x[0].get<int>(), x[1].get<int>());
    }
    out.push_back(std::move(gt));
  });
  return out;
}

/// One TrainItem per annotated pair, in pairs.jsonl order.
inline std::vector<training::TrainItem> make_train_items(const Dataset& ds) {
  std::vector<training::TrainItem> items;
  items.reserve(ds.pairs.size());
  for (const auto& [pi, si] : ds.pairs) {
    training::TrainItem it;
    it.sentences = ds.paragraphs[pi].sentences;
    it.shots = ds.segments[si].shots;
    it.para_graph = ds.paragraphs[pi].sem_graph;
    it.video_graph = ds.segments[si].vis_graph;
    it.movie = ds.paragraphs[pi].movie;
    it.paragraph_id = ds.paragraphs[pi].id;
    it.segment_id = ds.segments[si].id;
    items.push_back(std::move(it));
  }
  return items;
}

// ---------------------------------------------------------------------------
// Writers (used by the generator's export and by tests).

namespace detail {

inline json vec_json(const Vec& v) { return json(v); }

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows; ++i) rows.push_back(json(m.row_vec(i)));
  return rows;
}

}  // namespace detail

inline json paragraph_json(const Paragraph& p) {
  json graphs = json::array();
  for (const auto& r : p.records) {
    json chars = json::array(), verbs = json::array(), atts = json::array();
    for (const auto& c : r.characters) chars.push_back({{"label", c.label}, {"feature", c.feature}});
    for (const auto& v : r.verbs) verbs.push_back({{"label", v.label}, {"feature", v.feature}});
    for (const auto& a : r.attachments) atts.push_back({{"verb", a.verb}, {"character", a.character}});
    graphs.push_back({{"sentence_index", r.sentence_index},
                      {"characters", chars},
                      {"verbs", verbs},
                      {"attachments", atts}});
  }
  return {{"id", p.id}, {"movie_id", p.movie}, {"sentences", detail::matrix_json(p.sentences)}, {"sentence_graphs", graphs}};
}

inline json segment_json(const Segment& s) {
  json dets = json::array();
  for (const auto& d : s.detections)
    dets.push_back({{"shot", d.shot_index}, {"person", d.person}, {"action", d.action}});
  return {{"id", s.id}, {"movie_id", s.movie}, {"shots", detail::matrix_json(s.shots)}, {"detections", dets}};
}

}  // namespace msmatch::io
