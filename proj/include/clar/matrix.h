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

#ifndef CLAR_MATRIX_H_
#define CLAR_MATRIX_H_

#include <span>
#include <vector>

namespace clar {

// Dense row-major matrix of doubles. Small utterance-scale linear algebra
// only; every reduction in this module runs in a fixed left-to-right order
// so results are bit-reproducible and exactly comparable against reference
// loops in tests.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  std::span<double> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

struct Vector {
  std::vector<double> data;

  Vector() = default;
  explicit Vector(int n, double fill = 0.0) : data(static_cast<size_t>(n), fill) {}
  explicit Vector(std::vector<double> v) : data(std::move(v)) {}

  int size() const { return static_cast<int>(data.size()); }
  double& operator[](int i) { return data[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<size_t>(i)]; }
};

// Plain product a*b. Summation per output cell is left-to-right over k.
// Throws Error on inner-dimension mismatch, naming both shapes.
Matrix matmul(const Matrix& a, const Matrix& b);

// Divides each row by max(||row||_2, eps). eps > 0 guards all-zero rows.
Matrix l2_normalize_rows(const Matrix& m, double eps = 1e-12);

// out[t][j] = sum_{u<=t} m[u][j]; same shape as the input.
Matrix row_prefix_sums(const Matrix& m);

// Mean of the first valid_len rows; valid_len must be in [1, rows].
Vector masked_mean_pool(const Matrix& m, int valid_len);

// Max-subtracted softmax.
Vector softmax_row(const Vector& v);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

}  // namespace clar

#endif  // CLAR_MATRIX_H_
