#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace msmatch {

// Embedding coordinates are plain dense doubles throughout.
using Vec = std::vector<double>;

/// Rejected input (dimension mismatch, malformed value, violated precondition).
class InputError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Filesystem failure, reported with path context.
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Dense row-major real matrix. Used for feature stacks and score tables.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw InputError("matrix dimensions must be nonnegative");
  }

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

  Vec row_vec(int i) const {
    return Vec(row(i), row(i) + cols);
  }

  bool finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  static Matrix from_rows(const std::vector<Vec>& rs) {
    if (rs.empty()) return Matrix();
    Matrix m(static_cast<int>(rs.size()), static_cast<int>(rs[0].size()));
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (rs[i].size() != rs[0].size()) throw InputError("ragged rows in feature matrix");
      if (!all_finite(rs[i])) throw InputError("non-finite entry in feature matrix");
      for (std::size_t j = 0; j < rs[i].size(); ++j) m(static_cast<int>(i), static_cast<int>(j)) = rs[i][j];
    }
    return m;
  }
};

inline double dot_similarity(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw InputError("dot_similarity: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double dot_similarity(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int k = 0; k < dim; ++k) s += a[k] * b[k];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot_similarity(a, a)); }

/// Cosine similarity; a zero-norm operand yields 0 so rankings stay total.
inline double cosine_similarity(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw InputError("cosine_similarity: dimension mismatch");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot_similarity(a, b) / (na * nb);
}

/// S[i][j] = <psi_i, phi_j>: rows run over psi (shots), columns over phi (sentences).
inline Matrix similarity_matrix(const Matrix& phi, const Matrix& psi) {
  if (phi.cols != psi.cols) throw InputError("similarity_matrix: dimension mismatch");
  Matrix s(psi.rows, phi.rows);
  for (int i = 0; i < psi.rows; ++i)
    for (int j = 0; j < phi.rows; ++j)
      s(i, j) = dot_similarity(psi.row(i), phi.row(j), phi.cols);
  return s;
}

/// Deterministic seeded random stream. The engine is the fully specified
/// mt19937_64; all derived draws (uniform, normal, shuffles) are implemented
/// here rather than with std distributions so streams replay identically
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive bounds.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw InputError("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - lo + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  /// Box-Muller, one variate per call.
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(0, i);
      std::swap(v[i], v[static_cast<std::size_t>(j)]);
    }
  }

  /// Sample `count` distinct ints from [0, n); ascending order.
  std::vector<int> sample_distinct(int n, int count) {
    if (count > n) throw InputError("sample_distinct: count exceeds population");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < count; ++i) {
      const int j = uniform_int(i, n - 1);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  /// Knuth's product-of-uniforms sampler; adequate for the desk-scale means used here.
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) throw InputError("Rng: corrupt engine state");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace msmatch
