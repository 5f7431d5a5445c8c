#pragma once

#include <vector>

#include "msmatch/core.hpp"

namespace msmatch::event_flow {

/// Binary shots-by-sentences assignment. Stored compactly as the assigned
/// sentence per shot (-1 for unassigned); rows therefore sum to at most 1 by
/// construction and monotonicity is a checkable property.
struct AssignmentMatrix {
  int shots = 0;
  int sentences = 0;
  std::vector<int> assigned;  // per shot: sentence index or -1

  AssignmentMatrix() = default;
  AssignmentMatrix(int n, int m) : shots(n), sentences(m), assigned(n, -1) {}

  int y(int i, int j) const { return assigned[i] == j ? 1 : 0; }

  int row_sum(int i) const { return assigned[i] >= 0 ? 1 : 0; }

  /// Nondecreasing first-nonzero-column over nonzero rows; zero rows skipped.
  bool monotone() const {
    int last = -1;
    for (int i = 0; i < shots; ++i) {
      if (assigned[i] < 0) continue;
      if (assigned[i] < last) return false;
      last = assigned[i];
    }
    return true;
  }

  bool feasible() const {
    for (int i = 0; i < shots; ++i)
      if (assigned[i] < -1 || assigned[i] >= sentences) return false;
    return monotone();
  }

  Matrix dense() const {
    Matrix y(shots, sentences);
    for (int i = 0; i < shots; ++i)
      if (assigned[i] >= 0) y(i, assigned[i]) = 1.0;
    return y;
  }
};

struct AlignmentResult {
  double score = 0.0;
  AssignmentMatrix assignment;
};

inline double assignment_score(const Matrix& s, const AssignmentMatrix& y) {
  double total = 0.0;
  for (int i = 0; i < y.shots; ++i)
    if (y.assigned[i] >= 0) total += s(i, y.assigned[i]);
  return total;
}

/// Maximum-score monotone assignment of shots (rows) to sentences (columns).
/// Each shot attaches to at most one sentence, assigned sentence indices are
/// nondecreasing over shots, and shots may stay unassigned at zero gain.
///
/// D[i][j] = max(D[i-1][j] + S[i][j], D[i][j-1], D[i-1][j]), D[0][.] = D[.][0] = 0.
/// Ties prefer assigning the shot, then moving to a smaller sentence index.
inline AlignmentResult align(const Matrix& s) {
  const int n = s.rows, m = s.cols;
  if (n < 1 || m < 1) throw InputError("align: empty score matrix");
  if (!s.finite()) throw InputError("align: non-finite score entry");

  Matrix d(n + 1, m + 1, 0.0);
  // 0 = assign shot i to sentence j, 1 = drop to column j-1, 2 = skip shot i
  std::vector<std::uint8_t> choice(static_cast<std::size_t>(n + 1) * (m + 1), 2);
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      const double take = d(i - 1, j) + s(i - 1, j - 1);
      const double left = d(i, j - 1);
      const double skip = d(i - 1, j);
      double best = take;
      std::uint8_t c = 0;
      if (left > best) { best = left; c = 1; }
      if (skip > best) { best = skip; c = 2; }
      d(i, j) = best;
      choice[static_cast<std::size_t>(i) * (m + 1) + j] = c;
    }
  }

  AlignmentResult res;
  res.score = d(n, m);
  res.assignment = AssignmentMatrix(n, m);
  int i = n, j = m;
  while (i > 0 && j > 0) {
    switch (choice[static_cast<std::size_t>(i) * (m + 1) + j]) {
      case 0: res.assignment.assigned[i - 1] = j - 1; --i; break;
      case 1: --j; break;
      default: --i; break;
    }
  }
  return res;
}

namespace detail {

inline void enumerate_alignments(const Matrix& s, int shot, int min_sentence,
                                 std::vector<int>& current, double score,
                                 AlignmentResult& best) {
  const int n = s.rows, m = s.cols;
  if (shot == n) {
    if (score > best.score + 0.0) {
      best.score = score;
      best.assignment.assigned = current;
    }
    return;
  }
  for (int j = min_sentence; j < m; ++j) {
    current[shot] = j;
    enumerate_alignments(s, shot + 1, j, current, score + s(shot, j), best);
  }
  current[shot] = -1;
  enumerate_alignments(s, shot + 1, min_sentence, current, score, best);
}

}  // namespace detail

/// Exhaustive oracle for align: enumerates every monotone partial assignment.
inline AlignmentResult brute_force_align(const Matrix& s) {
  const int n = s.rows, m = s.cols;
  if (n < 1 || m < 1) throw InputError("brute_force_align: empty score matrix");
  if (n > 8 || m > 6) throw InputError("brute_force_align: instance above enumeration bound (N<=8, M<=6)");
  if (!s.finite()) throw InputError("brute_force_align: non-finite score entry");

  AlignmentResult best;
  best.score = 0.0;
  best.assignment = AssignmentMatrix(n, m);
  std::vector<int> current(n, -1);
  // Seed with the all-unassigned alignment so an all-negative S scores 0.
  detail::enumerate_alignments(s, 0, 0, current, 0.0, best);
  return best;
}

/// Event-flow score between a paragraph (phi: sentences x D) and a segment
/// (psi: shots x D). With normalize set, divides by the shot count so scores
/// of segments with very different lengths are comparable at fusion time.
inline double efm_score(const Matrix& phi, const Matrix& psi, bool normalize = false) {
  const Matrix s = similarity_matrix(phi, psi);
  const double raw = align(s).score;
  return normalize ? raw / static_cast<double>(psi.rows) : raw;
}

}  // namespace msmatch::event_flow
