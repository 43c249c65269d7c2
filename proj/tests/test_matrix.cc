// Copyright (c) 2026 CLAR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <vector>

#include "doctest.h"

#include "clar/common.h"
#include "clar/matrix.h"

namespace clar {
namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal();
  return m;
}

TEST_SUITE("matrix") {

TEST_CASE("matmul matches a reference triple loop") {
  Rng rng(101);
  for (auto [r, k, c] : std::vector<std::tuple<int, int, int>>{
           {1, 1, 1}, {2, 3, 4}, {5, 1, 7}, {4, 6, 1}, {8, 8, 8}}) {
    Matrix a = random_matrix(r, k, rng);
    Matrix b = random_matrix(k, c, rng);
    Matrix got = matmul(a, b);
    REQUIRE(got.rows == r);
    REQUIRE(got.cols == c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        double want = 0.0;
        for (int kk = 0; kk < k; ++kk) want += a.at(i, kk) * b.at(kk, j);
        CHECK(got.at(i, j) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions, naming both shapes") {
  Matrix a(2, 3);
  Matrix b(4, 5);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), Error);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("4x5"), Error);
}

TEST_CASE("l2_normalize_rows produces unit rows and preserves direction") {
  Rng rng(102);
  Matrix m = random_matrix(6, 5, rng);
  Matrix n = l2_normalize_rows(m);
  for (int r = 0; r < m.rows; ++r) {
    double norm = 0.0;
    for (int c = 0; c < m.cols; ++c) norm += n.at(r, c) * n.at(r, c);
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    // Same direction: n[r] * ||m[r]|| == m[r].
    double orig = l2_norm(m.row(r));
    for (int c = 0; c < m.cols; ++c) {
      CHECK(n.at(r, c) * orig == doctest::Approx(m.at(r, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("l2_normalize_rows guards all-zero rows with eps") {
  Matrix m(2, 3);
  m.at(1, 0) = 3.0;  // row 0 stays zero
  Matrix n = l2_normalize_rows(m, 1e-12);
  for (int c = 0; c < 3; ++c) {
    CHECK(n.at(0, c) == 0.0);  // 0 / eps, never NaN
    CHECK(std::isfinite(n.at(0, c)));
  }
  CHECK(n.at(1, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(l2_normalize_rows(m, 0.0), Error);
  CHECK_THROWS_AS(l2_normalize_rows(m, -1.0), Error);
}

TEST_CASE("row_prefix_sums matches cumulative loops") {
  Rng rng(103);
  Matrix m = random_matrix(7, 4, rng);
  Matrix p = row_prefix_sums(m);
  REQUIRE(p.rows == m.rows);
  REQUIRE(p.cols == m.cols);
  for (int j = 0; j < m.cols; ++j) {
    double run = 0.0;
    for (int t = 0; t < m.rows; ++t) {
      run += m.at(t, j);
      CHECK(p.at(t, j) == doctest::Approx(run).epsilon(1e-12));
    }
  }
}

TEST_CASE("masked_mean_pool averages exactly the first valid_len rows") {
  Rng rng(104);
  Matrix m = random_matrix(5, 3, rng);
  for (int len = 1; len <= 5; ++len) {
    Vector v = masked_mean_pool(m, len);
    REQUIRE(v.size() == 3);
    for (int c = 0; c < 3; ++c) {
      double want = 0.0;
      for (int t = 0; t < len; ++t) want += m.at(t, c);
      want /= len;
      CHECK(v[c] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK_THROWS_WITH_AS(masked_mean_pool(m, 0), doctest::Contains("valid_len 0"), Error);
  CHECK_THROWS_AS(masked_mean_pool(m, 6), Error);
  CHECK_THROWS_AS(masked_mean_pool(m, -1), Error);
}

TEST_CASE("softmax_row sums to one and preserves likelihood ratios") {
  Vector v(std::vector<double>{0.3, -1.2, 2.5, 0.0});
  Vector s = softmax_row(v);
  double sum = 0.0;
  for (int i = 0; i < s.size(); ++i) {
    CHECK(s[i] > 0.0);
    sum += s[i];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < s.size(); ++i) {
    for (int j = 0; j < s.size(); ++j) {
      CHECK(s[i] / s[j] == doctest::Approx(std::exp(v[i] - v[j])).epsilon(1e-10));
    }
  }
}

TEST_CASE("softmax_row is stable under large logits via max subtraction") {
  Vector v(std::vector<double>{1000.0, 999.0, 500.0});
  Vector s = softmax_row(v);
  CHECK(std::isfinite(s[0]));
  CHECK(s[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(std::exp(-1.0) / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(0.0));
  // Shift invariance.
  Vector shifted(std::vector<double>{3.0, 2.0, -497.0});
  Vector s2 = softmax_row(shifted);
  for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(s2[i]).epsilon(1e-12));
}

TEST_CASE("dot and l2_norm match reference loops") {
  Rng rng(105);
  std::vector<double> a(9), b(9);
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  double want_dot = 0.0, want_sq = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    want_dot += a[i] * b[i];
    want_sq += a[i] * a[i];
  }
  CHECK(dot(a, b) == doctest::Approx(want_dot).epsilon(1e-12));
  CHECK(l2_norm(a) == doctest::Approx(std::sqrt(want_sq)).epsilon(1e-12));
}

TEST_CASE("matrix accessors expose row-major storage") {
  Matrix m(2, 3);
  m.at(1, 2) = 7.0;
  CHECK(m.data[5] == 7.0);
  auto row = m.row(1);
  CHECK(row[2] == 7.0);
  CHECK(m.same_shape(Matrix(2, 3)));
  CHECK_FALSE(m.same_shape(Matrix(3, 2)));
}

}  // TEST_SUITE

}  // namespace
}  // namespace clar
