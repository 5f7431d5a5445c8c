#include <catch2/catch_amalgamated.hpp>

#include "msmatch/core.hpp"
#include "msmatch/event_flow.hpp"

using namespace msmatch;
using namespace msmatch::event_flow;

namespace {

Matrix make(int n, int m, std::initializer_list<double> vals) {
  Matrix s(n, m);
  int i = 0;
  for (double v : vals) s.data[i++] = v;
  return s;
}

Matrix random_scores(Rng& rng, int n, int m) {
  Matrix s(n, m);
  for (double& v : s.data) v = rng.uniform(-1.0, 1.0);
  return s;
}

void check_feasible(const AlignmentResult& r, const Matrix& s) {
  CHECK(r.assignment.feasible());
  CHECK(r.score == Catch::Approx(assignment_score(s, r.assignment)).margin(1e-9));
}

}  // namespace

TEST_CASE("align diagonal dominant") {
  const Matrix s = make(2, 2, {1, 0, 0, 1});
  const auto r = align(s);
  CHECK(r.score == 2.0);
  CHECK(r.assignment.assigned == std::vector<int>{0, 1});
}

TEST_CASE("align leaves shots unassigned under all-negative scores") {
  const Matrix s = make(2, 2, {-1, -2, -3, -0.5});
  const auto r = align(s);
  CHECK(r.score == 0.0);
  CHECK(r.assignment.assigned == std::vector<int>{-1, -1});
}

TEST_CASE("align rejects crossing assignments") {
  const Matrix s = make(2, 2, {0, 1, 1, 0});
  const auto r = align(s);
  CHECK(r.score == 1.0);
  check_feasible(r, s);
}

TEST_CASE("align rejects bad input") {
  CHECK_THROWS_AS(align(Matrix()), InputError);
  Matrix s(1, 1);
  s(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(align(s), InputError);
}

TEST_CASE("brute force fixtures") {
  const auto pos = brute_force_align(make(1, 1, {0.5}));
  CHECK(pos.score == 0.5);
  CHECK(pos.assignment.assigned == std::vector<int>{0});

  const auto neg = brute_force_align(make(1, 1, {-0.5}));
  CHECK(neg.score == 0.0);
  CHECK(neg.assignment.assigned == std::vector<int>{-1});

  CHECK_THROWS_AS(brute_force_align(Matrix(9, 2)), InputError);
  CHECK_THROWS_AS(brute_force_align(Matrix(2, 7)), InputError);
}

TEST_CASE("align matches brute force on random instances") {
  Rng rng(21);
  for (int trial = 0; trial < 400; ++trial) {
    const int n = rng.uniform_int(1, 6), m = rng.uniform_int(1, 4);
    const Matrix s = random_scores(rng, n, m);
    const auto fast = align(s);
    const auto slow = brute_force_align(s);
    CHECK(fast.score == Catch::Approx(slow.score).margin(1e-9));
    check_feasible(fast, s);
    check_feasible(slow, s);
  }
}

TEST_CASE("adding a positive entry never decreases the score") {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 6), m = rng.uniform_int(1, 5);
    Matrix s = random_scores(rng, n, m);
    const double before = align(s).score;
    const int i = rng.uniform_int(0, n - 1), j = rng.uniform_int(0, m - 1);
    s(i, j) += rng.uniform(0.0, 2.0) + 1e-9;
    CHECK(align(s).score >= before - 1e-12);
  }
}

TEST_CASE("efm_score pipeline") {
  Matrix eye(3, 3);
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
  CHECK(efm_score(eye, eye) == 3.0);
  CHECK(efm_score(eye, eye, true) == Catch::Approx(1.0));

  const Matrix zeros(2, 3, 0.0);
  CHECK(efm_score(eye, zeros) == 0.0);

  Rng rng(23);
  std::vector<Vec> phi_rows, psi_rows;
  for (int i = 0; i < 3; ++i) {
    Vec v(4);
    for (double& x : v) x = rng.uniform(-1, 1);
    phi_rows.push_back(v);
  }
  for (int i = 0; i < 5; ++i) {
    Vec v(4);
    for (double& x : v) x = rng.uniform(-1, 1);
    psi_rows.push_back(v);
  }
  const Matrix phi = Matrix::from_rows(phi_rows), psi = Matrix::from_rows(psi_rows);
  const double brute = brute_force_align(similarity_matrix(phi, psi)).score;
  CHECK(efm_score(phi, psi) == Catch::Approx(brute).margin(1e-9));
}
