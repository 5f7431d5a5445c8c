#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msmatch/core.hpp"
#include "msmatch/dataset.hpp"
#include "msmatch/event_flow.hpp"
#include "msmatch/graph.hpp"
#include "msmatch/model.hpp"
#include "msmatch/qap.hpp"
#include "msmatch/retrieval.hpp"
#include "msmatch/synthdata.hpp"
#include "msmatch/training.hpp"

namespace msmatch::cli {

// Exit codes (sysexits-flavoured): distinct classes for usage, parse,
// compatibility and divergence failures.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 64;
constexpr int kExitParse = 65;
constexpr int kExitCompat = 66;
constexpr int kExitDiverge = 67;
constexpr int kExitIo = 74;

struct RunConfig {
  training::TrainConfig train;
  retrieval::PipelineConfig eval;
  std::vector<std::string> verb_whitelist;
};

namespace detail {

using io::json;

inline retrieval::Method parse_method(const std::string& s, const std::string& where) {
  if (s == "vse") return retrieval::Method::Vse;
  if (s == "efm") return retrieval::Method::Efm;
  if (s == "efm+cim") return retrieval::Method::EfmCim;
  throw io::ParseError(where + ": unknown method '" + s + "' (expected vse | efm | efm+cim)");
}

inline std::string method_name(retrieval::Method m) {
  switch (m) {
    case retrieval::Method::Vse: return "vse";
    case retrieval::Method::Efm: return "efm";
    default: return "efm+cim";
  }
}

inline retrieval::Setting parse_setting(const std::string& s, const std::string& where) {
  if (s == "cross") return retrieval::Setting::CrossMovie;
  if (s == "within") return retrieval::Setting::WithinMovie;
  throw io::ParseError(where + ": unknown setting '" + s + "' (expected cross | within)");
}

inline std::string setting_name(retrieval::Setting s) {
  return s == retrieval::Setting::CrossMovie ? "cross-movie" : "within-movie";
}

inline retrieval::FusionWeights parse_weights(const json& j, const std::string& where) {
  io::detail::expect_keys(j, {"appearance", "cast", "action"}, {}, where);
  retrieval::FusionWeights w;
  w.appearance = j.at("appearance").get<double>();
  w.cast = j.at("cast").get<double>();
  w.action = j.at("action").get<double>();
  w.validate();
  return w;
}

inline RunConfig parse_run_config(const json& j, const std::string& where) {
  io::detail::expect_keys(j, {}, {"train", "eval", "ingest"}, where);
  RunConfig cfg;
  if (j.contains("train")) {
    const json& t = j.at("train");
    io::detail::expect_keys(t, {},
                            {"learning_rate", "batch_size", "margin", "epochs", "seed", "objective",
                             "steps_per_e", "hidden_layers", "embed_dim"},
                            where + ": train");
    auto& tc = cfg.train;
    if (t.contains("learning_rate")) tc.learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("batch_size")) tc.batch_size = t.at("batch_size").get<int>();
    if (t.contains("margin")) tc.margin = t.at("margin").get<double>();
    if (t.contains("epochs")) tc.epochs = t.at("epochs").get<int>();
    if (t.contains("seed")) tc.seed = t.at("seed").get<std::uint64_t>();
    if (t.contains("steps_per_e")) tc.steps_per_e = t.at("steps_per_e").get<int>();
    if (t.contains("hidden_layers")) tc.hidden_layers = t.at("hidden_layers").get<int>();
    if (t.contains("embed_dim")) tc.embed_dim = t.at("embed_dim").get<int>();
    if (t.contains("objective")) {
      const std::string o = t.at("objective").get<std::string>();
      if (o == "joint")
        tc.objective = training::Objective::Joint;
      else if (o == "vse")
        tc.objective = training::Objective::Vse;
      else
        throw io::ParseError(where + ": unknown objective '" + o + "' (expected joint | vse)");
    }
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    io::detail::expect_keys(
        e, {}, {"method", "settings", "metric_ks", "rerank_n", "efm_normalize", "fusion", "pruning"},
        where + ": eval");
    auto& ec = cfg.eval;
    if (e.contains("method")) ec.method = parse_method(e.at("method").get<std::string>(), where);
    if (e.contains("settings")) {
      ec.settings.clear();
      for (const auto& s : e.at("settings")) ec.settings.push_back(parse_setting(s.get<std::string>(), where));
    }
    if (e.contains("metric_ks")) {
      ec.ks.clear();
      for (const auto& k : e.at("metric_ks")) ec.ks.push_back(k.get<int>());
    }
    if (e.contains("rerank_n")) ec.rerank_n = e.at("rerank_n").get<int>();
    if (e.contains("efm_normalize")) ec.efm_normalize = e.at("efm_normalize").get<bool>();
    if (e.contains("fusion")) {
      const json& f = e.at("fusion");
      io::detail::expect_keys(f, {}, {"cross", "within"}, where + ": fusion");
      if (f.contains("cross")) ec.cross_weights = parse_weights(f.at("cross"), where + ": fusion.cross");
      if (f.contains("within")) ec.within_weights = parse_weights(f.at("within"), where + ": fusion.within");
    }
    if (e.contains("pruning")) {
      const json& p = e.at("pruning");
      io::detail::expect_keys(p, {}, {"k", "J", "exact_threshold"}, where + ": pruning");
      if (p.contains("k")) ec.pruning.k = p.at("k").get<int>();
      if (p.contains("J")) ec.pruning.J = p.at("J").get<int>();
      if (p.contains("exact_threshold")) ec.pruning.exact_threshold = p.at("exact_threshold").get<int>();
    }
  }
  if (j.contains("ingest")) {
    const json& g = j.at("ingest");
    io::detail::expect_keys(g, {}, {"verb_whitelist"}, where + ": ingest");
    if (g.contains("verb_whitelist"))
      for (const auto& v : g.at("verb_whitelist")) cfg.verb_whitelist.push_back(v.get<std::string>());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io::ParseError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw io::ParseError(path + ": " + e.what());
  }
  return parse_run_config(j, path);
}

inline std::string pct(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * fraction;
  return os.str();
}

inline std::string compact(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline json report_json(const retrieval::MetricReport& rep, retrieval::Setting setting, retrieval::Method method) {
  json recall = json::object();
  for (const auto& [k, v] : rep.recall_at) recall[std::to_string(k)] = v;
  json out = {{"setting", setting_name(setting)},
              {"method", method_name(method)},
              {"recall", recall},
              {"medr", rep.medr}};
  if (rep.avg_medr) out["avg_medr"] = *rep.avg_medr;
  return out;
}

inline void print_report(std::ostream& out, const retrieval::MetricReport& rep, retrieval::Setting setting,
                         retrieval::Method method) {
  out << setting_name(setting) << " (" << method_name(method) << ")\n";
  out << "  ";
  for (const auto& [k, _] : rep.recall_at) out << "R@" << k << "  ";
  out << "MedR";
  if (rep.avg_medr) out << "  Avg.MedR";
  out << "\n  ";
  for (const auto& [_, v] : rep.recall_at) out << pct(v) << "  ";
  out << compact(rep.medr);
  if (rep.avg_medr) out << "  " << compact(*rep.avg_medr);
  out << "\n";
}

inline void check_dims(const io::Dataset& ds, const training::TrainState& st) {
  if (ds.dims.text_dim != st.dims.text_dim || ds.dims.vis_dim != st.dims.vis_dim ||
      ds.dims.node_dim != st.dims.node_dim)
    throw io::CompatibilityError("dataset feature dimensions do not match the checkpoint");
}

// ---------------------------------------------------------------------------

inline int cmd_generate(const synth::GenConfig& cfg, const std::string& out_dir, std::ostream& out) {
  const auto data = synth::generate(cfg);
  std::filesystem::create_directories(out_dir);
  synth::export_dataset(data, out_dir);

  double shots = 0.0, sentences = 0.0, detections = 0.0;
  for (const auto& pp : data) {
    shots += pp.segment.shots.rows;
    sentences += pp.paragraph.sentences.rows;
    detections += static_cast<double>(pp.segment.detections.size());
  }
  const double n = static_cast<double>(data.size());
  out << std::fixed << std::setprecision(1);
  out << "# Movies           " << cfg.movies << "\n";
  out << "# Segments         " << data.size() << "\n";
  out << "# Shots / seg.     " << (n > 0 ? shots / n : 0.0) << "\n";
  out << "# Sents. / para.   " << (n > 0 ? sentences / n : 0.0) << "\n";
  out << "# Dets. / seg.     " << (n > 0 ? detections / n : 0.0) << "\n";
  out << "wrote " << out_dir << "/{paragraphs,segments,pairs,ground_truth}.jsonl\n";
  return kExitOk;
}

inline int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_path,
                     std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  io::LoadOptions opts;
  opts.verb_whitelist = cfg.verb_whitelist;
  const auto ds = io::load_dataset(data_dir, opts);
  const auto items = io::make_train_items(ds);
  try {
    const auto st = training::train(items, cfg.train, ds.dims, [&](int epoch, double loss) {
      out << "epoch " << epoch << " loss " << compact(loss) << "\n";
    });
    training::save_checkpoint(out_path, st);
    out << "checkpoint written to " << out_path << "\n";
  } catch (const training::DivergenceError& e) {
    const std::string snap = out_path + ".diverged";
    training::save_checkpoint(snap, e.state);
    err << "state snapshot written to " << snap << "\n";
    throw;
  }
  return kExitOk;
}

inline int cmd_evaluate(const std::string& checkpoint, const std::string& data_dir, const std::string& config_path,
                        const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  const auto st = training::load_checkpoint(checkpoint);
  io::LoadOptions opts;
  opts.verb_whitelist = cfg.verb_whitelist;
  const auto ds = io::load_dataset(data_dir, opts);
  const auto reports = retrieval::run_pipeline(ds, st, cfg.eval);

  json all = json::array();
  for (const auto& [setting, rep] : reports) {
    print_report(out, rep, setting, cfg.eval.method);
    all.push_back(report_json(rep, setting, cfg.eval.method));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/metrics.json";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << all.dump(2) << "\n";
    out << "metrics written to " << path << "\n";
  }
  return kExitOk;
}

inline int cmd_align(const std::string& data_dir, const std::string& paragraph_id, const std::string& segment_id,
                     const std::string& checkpoint, std::ostream& out) {
  const auto ds = io::load_dataset(data_dir);
  const auto& p = ds.paragraphs[ds.paragraph_of(paragraph_id)];
  const auto& s = ds.segments[ds.segment_of(segment_id)];

  Matrix phi = p.sentences, psi = s.shots;
  if (!checkpoint.empty()) {
    const auto st = training::load_checkpoint(checkpoint);
    check_dims(ds, st);
    phi = retrieval::detail::embed_matrix(phi, st.params.efm_text);
    psi = retrieval::detail::embed_matrix(psi, st.params.efm_vis);
  } else if (phi.cols != psi.cols) {
    throw io::CompatibilityError("sentence and shot features differ in dimension; supply --checkpoint");
  }

  const auto res = event_flow::align(similarity_matrix(phi, psi));
  out << "score " << compact(res.score) << "\n";
  for (int j = 0; j < res.assignment.sentences; ++j) {
    int lo = -1, hi = -1, count = 0;
    for (int i = 0; i < res.assignment.shots; ++i) {
      if (res.assignment.assigned[i] != j) continue;
      if (lo < 0) lo = i;
      hi = i;
      ++count;
    }
    out << "sentence " << j << ": ";
    if (count == 0)
      out << "(no shots)\n";
    else
      out << "shots " << lo << "-" << hi << " (" << count << " assigned)\n";
  }
  return kExitOk;
}

inline int cmd_match_graphs(const std::string& data_dir, const std::string& paragraph_id,
                            const std::string& segment_id, const qap::CimParams& params, bool force_exact,
                            const std::string& checkpoint, std::ostream& out) {
  const auto ds = io::load_dataset(data_dir);
  const auto& p = ds.paragraphs[ds.paragraph_of(paragraph_id)];
  const auto& s = ds.segments[ds.segment_of(segment_id)];

  graph::TypedGraph gq = s.vis_graph, gp = p.sem_graph;
  if (!checkpoint.empty()) {
    const auto st = training::load_checkpoint(checkpoint);
    check_dims(ds, st);
    gq = retrieval::detail::embed_graph(gq, st.params.cim_vis);
    gp = retrieval::detail::embed_graph(gp, st.params.cim_text);
  }

  const auto detail = qap::cim_match(gq, gp, params, force_exact);
  out << "nodes before pruning: " << detail.nodes_before << ", after: " << detail.nodes_after << "\n";
  out << "solver: " << (detail.exact ? "exact" : "km") << "\n";
  out << "score " << compact(detail.score) << "\n";
  if (detail.indicator.pairs.empty()) {
    out << "no correspondence\n";
    return kExitOk;
  }

  const auto k = graph::build_similarity_matrix(gq, gp);
  auto describe = [&](const graph::TypedGraph& g, int idx) {
    std::ostringstream os;
    os << idx << " [" << (g.nodes[idx].kind == graph::NodeKind::Character ? "character" : "action");
    if (!g.nodes[idx].label.empty()) os << " " << g.nodes[idx].label;
    os << "]";
    return os.str();
  };
  out << "matches:\n";
  for (const auto& [i, a] : detail.indicator.pairs) {
    out << "  video " << describe(gq, i) << " -> para " << describe(gp, a) << "  node "
        << compact(k.node_sim(i, a)) << "\n";
  }
  out << "edge contributions:\n";
  bool any = false;
  const auto& pairs = detail.indicator.pairs;
  for (std::size_t x = 0; x < pairs.size(); ++x) {
    for (std::size_t y = x + 1; y < pairs.size(); ++y) {
      const double v = k.at(pairs[x].first, pairs[x].second, pairs[y].first, pairs[y].second);
      if (v == 0.0) continue;
      any = true;
      out << "  (video " << pairs[x].first << " -> para " << pairs[x].second << ") x (video " << pairs[y].first
          << " -> para " << pairs[y].second << "): " << compact(2.0 * v) << "\n";
    }
  }
  if (!any) out << "  (none)\n";
  return kExitOk;
}

}  // namespace detail

/// Entry point behind the msmatch binary; also called directly by tests.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"movie segment / synopsis paragraph matching toolkit"};
  app.name("msmatch");
  app.require_subcommand(1);

  synth::GenConfig gen;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "generate a synthetic dataset with planted ground truth");
  generate->add_option("--out", gen_out, "output directory")->required();
  generate->add_option("--movies", gen.movies, "number of movies");
  generate->add_option("--segments", gen.segments_per_movie, "segments per movie");
  generate->add_option("--sentences", gen.sentences_per_paragraph, "mean sentences per paragraph");
  generate->add_option("--shots", gen.shots_per_segment, "mean shots per segment");
  generate->add_option("--characters", gen.characters_per_movie, "characters per movie");
  generate->add_option("--dim", gen.feature_dim, "feature dimension");
  generate->add_option("--noise", gen.noise_sigma, "feature noise scale");
  generate->add_option("--distractors", gen.distractor_rate, "distractor detection rate");
  generate->add_option("--seed", gen.seed, "random seed");
  generate->add_option("--event-pool", gen.event_pool, "shared event latent pool size");
  generate->add_option("--verb-pool", gen.verb_pool, "shared verb latent pool size");
  generate->add_option("--max-chars", gen.max_characters_per_sentence, "max characters per sentence");

  std::string train_config, train_data, train_out;
  auto* train = app.add_subcommand("train", "train embeddings on a dataset");
  train->add_option("--config", train_config, "run config file (JSON)");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();

  std::string eval_ckpt, eval_data, eval_config, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "run the retrieval pipeline and report metrics");
  evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  evaluate->add_option("--data", eval_data, "dataset directory")->required();
  evaluate->add_option("--config", eval_config, "run config file (JSON)");
  evaluate->add_option("--out", eval_out, "directory for metrics.json");

  std::string al_data, al_para, al_seg, al_ckpt;
  auto* align = app.add_subcommand("align", "align one segment's shots to one paragraph's sentences");
  align->add_option("--data", al_data, "dataset directory")->required();
  align->add_option("--paragraph", al_para, "paragraph id")->required();
  align->add_option("--segment", al_seg, "segment id")->required();
  align->add_option("--checkpoint", al_ckpt, "optional checkpoint (raw features otherwise)");

  std::string mg_data, mg_para, mg_seg, mg_ckpt;
  qap::CimParams mg_params;
  bool mg_exact = false;
  auto* match = app.add_subcommand("match-graphs", "match one segment's interaction graph to one paragraph's");
  match->add_option("--data", mg_data, "dataset directory")->required();
  match->add_option("--paragraph", mg_para, "paragraph id")->required();
  match->add_option("--segment", mg_seg, "segment id")->required();
  match->add_option("--k", mg_params.k, "seed neighbours per paragraph node")->check(CLI::PositiveNumber);
  match->add_option("--J", mg_params.J, "propagation depth")->check(CLI::NonNegativeNumber);
  match->add_option("--exact-threshold", mg_params.exact_threshold, "max pruned nodes for the exact solver");
  match->add_flag("--exact", mg_exact, "force the exact solver on the pruned instance");
  match->add_option("--checkpoint", mg_ckpt, "optional checkpoint (raw features otherwise)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (app.got_subcommand(generate)) return detail::cmd_generate(gen, gen_out, out);
    if (app.got_subcommand(train)) return detail::cmd_train(train_config, train_data, train_out, out, err);
    if (app.got_subcommand(evaluate))
      return detail::cmd_evaluate(eval_ckpt, eval_data, eval_config, eval_out, out);
    if (app.got_subcommand(align)) return detail::cmd_align(al_data, al_para, al_seg, al_ckpt, out);
    if (app.got_subcommand(match))
      return detail::cmd_match_graphs(mg_data, mg_para, mg_seg, mg_params, mg_exact, mg_ckpt, out);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const io::CompatibilityError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCompat;
  } catch (const io::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const io::LookupError& e) {
    err << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const training::DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kExitDiverge;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace msmatch::cli
