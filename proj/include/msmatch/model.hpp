#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "msmatch/core.hpp"

namespace msmatch::training {

/// Small fully connected embedding network: affine layers with an elementwise
/// rectifier between them (linear output).
struct EmbeddingMap {
  struct Layer {
    Matrix w;  // out x in
    Vec b;
  };
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().w.cols; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().w.rows; }

  /// Inputs of every layer; xs.back() is the network output.
  struct Cache {
    std::vector<Vec> xs;
  };

  Vec forward(const Vec& x, Cache* cache = nullptr) const {
    Vec cur = x;
    if (cache) {
      cache->xs.clear();
      cache->xs.push_back(cur);
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Layer& ly = layers[l];
      Vec next(ly.w.rows, 0.0);
      for (int r = 0; r < ly.w.rows; ++r) {
        double s = ly.b[r];
        const double* wr = ly.w.row(r);
        for (int c = 0; c < ly.w.cols; ++c) s += wr[c] * cur[c];
        next[r] = s;
      }
      if (l + 1 < layers.size()) {
        for (double& z : next) z = z > 0.0 ? z : 0.0;
      }
      cur = std::move(next);
      if (cache) cache->xs.push_back(cur);
    }
    return cur;
  }

  /// Accumulates parameter gradients for one input given dL/d(output).
  /// The rectifier subgradient at the kink is the zero branch.
  void backward(const Cache& cache, const Vec& grad_out, EmbeddingMap& grad) const {
    Vec g = grad_out;
    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
      const Layer& ly = layers[l];
      const Vec& input = cache.xs[l];
      Layer& gl = grad.layers[l];
      for (int r = 0; r < ly.w.rows; ++r) {
        gl.b[r] += g[r];
        double* gw = gl.w.row(r);
        for (int c = 0; c < ly.w.cols; ++c) gw[c] += g[r] * input[c];
      }
      if (l == 0) break;
      Vec gin(ly.w.cols, 0.0);
      for (int r = 0; r < ly.w.rows; ++r) {
        const double* wr = ly.w.row(r);
        for (int c = 0; c < ly.w.cols; ++c) gin[c] += g[r] * wr[c];
      }
      // ReLU mask: the input to this layer is the previous layer's activation.
      for (int c = 0; c < ly.w.cols; ++c)
        if (input[c] <= 0.0) gin[c] = 0.0;
      g = std::move(gin);
    }
  }

  EmbeddingMap zeros_like() const {
    EmbeddingMap z;
    z.layers.reserve(layers.size());
    for (const Layer& ly : layers) z.layers.push_back(Layer{Matrix(ly.w.rows, ly.w.cols, 0.0), Vec(ly.b.size(), 0.0)});
    return z;
  }

  void add_scaled(const EmbeddingMap& other, double factor) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t i = 0; i < layers[l].w.data.size(); ++i) layers[l].w.data[i] += factor * other.layers[l].w.data[i];
      for (std::size_t i = 0; i < layers[l].b.size(); ++i) layers[l].b[i] += factor * other.layers[l].b[i];
    }
  }

  bool finite() const {
    for (const Layer& ly : layers) {
      if (!ly.w.finite() || !all_finite(ly.b)) return false;
    }
    return true;
  }

  /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static EmbeddingMap init(int in_dim, int out_dim, int hidden_layers, int hidden_dim, Rng& rng) {
    if (in_dim < 1 || out_dim < 1 || hidden_layers < 0) throw InputError("EmbeddingMap: invalid dimensions");
    EmbeddingMap m;
    std::vector<int> sizes;
    sizes.push_back(in_dim);
    for (int h = 0; h < hidden_layers; ++h) sizes.push_back(hidden_dim);
    sizes.push_back(out_dim);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      Layer ly;
      ly.w = Matrix(sizes[l + 1], sizes[l]);
      ly.b = Vec(sizes[l + 1], 0.0);
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
      for (double& x : ly.w.data) x = rng.uniform(-bound, bound);
      for (double& x : ly.b) x = rng.uniform(-bound, bound);
      m.layers.push_back(std::move(ly));
    }
    return m;
  }
};

/// Score channels fused at retrieval time.
enum class Channel : int { Appearance = 0, Cast = 1, Action = 2 };

/// All trainable parameters: the joint event-flow/interaction model and the
/// per-channel visual-semantic-embedding baseline.
struct ModelParams {
  EmbeddingMap efm_text, efm_vis;  // sentence / shot appearance embeddings
  EmbeddingMap cim_text, cim_vis;  // semantic / visual graph node embeddings
  std::array<EmbeddingMap, 3> vse_text, vse_vis;

  std::vector<EmbeddingMap*> all_maps() {
    return {&efm_text, &efm_vis, &cim_text, &cim_vis,
            &vse_text[0], &vse_text[1], &vse_text[2],
            &vse_vis[0], &vse_vis[1], &vse_vis[2]};
  }
  std::vector<const EmbeddingMap*> all_maps() const {
    return {&efm_text, &efm_vis, &cim_text, &cim_vis,
            &vse_text[0], &vse_text[1], &vse_text[2],
            &vse_vis[0], &vse_vis[1], &vse_vis[2]};
  }

  bool finite() const {
    for (const auto* m : all_maps())
      if (!m->finite()) return false;
    return true;
  }
};

enum class Objective : int { Joint = 0, Vse = 1, Both = 2 };

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 16;
  double margin = 0.2;
  int epochs = 0;
  std::uint64_t seed = 0;
  Objective objective = Objective::Joint;
  int steps_per_e = 1;
  int hidden_layers = 1;
  int embed_dim = 0;  // 0: use the sentence feature dimension

  void validate() const {
    if (!(learning_rate > 0.0)) throw InputError("TrainConfig: learning_rate must be > 0");
    if (batch_size < 2) throw InputError("TrainConfig: batch_size must be >= 2");
    if (margin < 0.0) throw InputError("TrainConfig: margin must be >= 0");
    if (epochs < 0) throw InputError("TrainConfig: epochs must be >= 0");
    if (steps_per_e < 1) throw InputError("TrainConfig: steps_per_e must be >= 1");
    if (hidden_layers < 0) throw InputError("TrainConfig: hidden_layers must be >= 0");
  }
};

/// Feature dimensions of a dataset: sentence features, shot features
/// (including any concatenated subtitle part), and graph node features.
struct FeatureDims {
  int text_dim = 0;
  int vis_dim = 0;
  int node_dim = 0;
};

struct TrainState {
  ModelParams params;
  TrainConfig config;
  FeatureDims dims;
  int epoch = 0;
  std::vector<double> loss_history;  // per-epoch mean batch loss
  std::string rng_state;
};

inline TrainState init_state(const FeatureDims& dims, const TrainConfig& cfg) {
  cfg.validate();
  if (dims.text_dim < 1 || dims.vis_dim < 1 || dims.node_dim < 1)
    throw InputError("init_state: feature dimensions must be positive");
  TrainState st;
  st.config = cfg;
  st.dims = dims;
  const int d = cfg.embed_dim > 0 ? cfg.embed_dim : dims.text_dim;
  Rng rng(cfg.seed);
  auto mk = [&](int in) { return EmbeddingMap::init(in, d, cfg.hidden_layers, d, rng); };
  // Both towers of a pair start from the same weights when their input dims
  // match: identical inputs then embed identically before any training.
  auto mk_pair = [&](int in_text, int in_vis, EmbeddingMap& text, EmbeddingMap& vis) {
    text = mk(in_text);
    vis = in_vis == in_text ? text : mk(in_vis);
  };
  mk_pair(dims.text_dim, dims.vis_dim, st.params.efm_text, st.params.efm_vis);
  mk_pair(dims.node_dim, dims.node_dim, st.params.cim_text, st.params.cim_vis);
  mk_pair(dims.text_dim, dims.vis_dim, st.params.vse_text[0], st.params.vse_vis[0]);
  for (int c : {1, 2}) mk_pair(dims.node_dim, dims.node_dim, st.params.vse_text[c], st.params.vse_vis[c]);
  st.rng_state = rng.save_state();
  return st;
}

// ---------------------------------------------------------------------------
// Checkpoint file: little-endian binary dump of every parameter, the training
// config, dims, loss history and the RNG engine state. Round-trips bit-exactly.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
  const std::uint64_t len = get_u64(is);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

inline void put_map(std::ostream& os, const EmbeddingMap& m) {
  put_u64(os, m.layers.size());
  for (const auto& ly : m.layers) {
    put_u64(os, static_cast<std::uint64_t>(ly.w.rows));
    put_u64(os, static_cast<std::uint64_t>(ly.w.cols));
    for (double d : ly.w.data) put_f64(os, d);
    for (double d : ly.b) put_f64(os, d);
  }
}

inline EmbeddingMap get_map(std::istream& is) {
  EmbeddingMap m;
  const std::uint64_t nlayers = get_u64(is);
  for (std::uint64_t l = 0; l < nlayers; ++l) {
    const int rows = static_cast<int>(get_u64(is));
    const int cols = static_cast<int>(get_u64(is));
    EmbeddingMap::Layer ly;
    ly.w = Matrix(rows, cols);
    for (double& d : ly.w.data) d = get_f64(is);
    ly.b = Vec(rows);
    for (double& d : ly.b) d = get_f64(is);
    m.layers.push_back(std::move(ly));
  }
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const TrainState& st) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write("MSCK", 4);
  detail::put_u64(os, 1);  // version
  detail::put_f64(os, st.config.learning_rate);
  detail::put_u64(os, static_cast<std::uint64_t>(st.config.batch_size));
  detail::put_f64(os, st.config.margin);
  detail::put_u64(os, static_cast<std::uint64_t>(st.config.epochs));
  detail::put_u64(os, st.config.seed);
  detail::put_u64(os, static_cast<std::uint64_t>(st.config.objective));
  detail::put_u64(os, static_cast<std::uint64_t>(st.config.steps_per_e));
  detail::put_u64(os, static_cast<std::uint64_t>(st.config.hidden_layers));
  detail::put_u64(os, static_cast<std::uint64_t>(st.config.embed_dim));
  detail::put_u64(os, static_cast<std::uint64_t>(st.dims.text_dim));
  detail::put_u64(os, static_cast<std::uint64_t>(st.dims.vis_dim));
  detail::put_u64(os, static_cast<std::uint64_t>(st.dims.node_dim));
  detail::put_u64(os, static_cast<std::uint64_t>(st.epoch));
  detail::put_u64(os, st.loss_history.size());
  for (double d : st.loss_history) detail::put_f64(os, d);
  detail::put_str(os, st.rng_state);
  for (const auto* m : st.params.all_maps()) detail::put_map(os, *m);
  if (!os) throw IoError("checkpoint write failed: " + path);
}

inline TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MSCK") throw IoError("not a checkpoint file: " + path);
  if (detail::get_u64(is) != 1) throw IoError("unsupported checkpoint version: " + path);
  TrainState st;
  st.config.learning_rate = detail::get_f64(is);
  st.config.batch_size = static_cast<int>(detail::get_u64(is));
  st.config.margin = detail::get_f64(is);
  st.config.epochs = static_cast<int>(detail::get_u64(is));
  st.config.seed = detail::get_u64(is);
  st.config.objective = static_cast<Objective>(detail::get_u64(is));
  st.config.steps_per_e = static_cast<int>(detail::get_u64(is));
  st.config.hidden_layers = static_cast<int>(detail::get_u64(is));
  st.config.embed_dim = static_cast<int>(detail::get_u64(is));
  st.dims.text_dim = static_cast<int>(detail::get_u64(is));
  st.dims.vis_dim = static_cast<int>(detail::get_u64(is));
  st.dims.node_dim = static_cast<int>(detail::get_u64(is));
  st.epoch = static_cast<int>(detail::get_u64(is));
  const std::uint64_t nh = detail::get_u64(is);
  st.loss_history.resize(nh);
  for (double& d : st.loss_history) d = detail::get_f64(is);
  st.rng_state = detail::get_str(is);
  for (auto* m : st.params.all_maps()) *m = detail::get_map(is);
  if (!is) throw IoError("truncated checkpoint: " + path);
  return st;
}

}  // namespace msmatch::training
