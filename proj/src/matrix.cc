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

#include "clar/matrix.h"

#include <cmath>

#include "clar/common.h"

namespace clar {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw Error(strformat("matmul: inner dimensions differ, a is %dx%d, b is %dx%d",
                          a.rows, a.cols, b.rows, b.cols));
  }
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
    double* orow = out.data.data() + static_cast<size_t>(i) * b.cols;
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix l2_normalize_rows(const Matrix& m, double eps) {
  if (eps <= 0.0) throw Error("l2_normalize_rows: eps must be > 0");
  Matrix out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    double n = l2_norm(m.row(i));
    double inv = 1.0 / std::max(n, eps);
    auto src = m.row(i);
    auto dst = out.row(i);
    for (int j = 0; j < m.cols; ++j) dst[j] = src[j] * inv;
  }
  return out;
}

Matrix row_prefix_sums(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  if (m.rows == 0) return out;
  for (int j = 0; j < m.cols; ++j) out.at(0, j) = m.at(0, j);
  for (int t = 1; t < m.rows; ++t) {
    const double* prev = out.data.data() + static_cast<size_t>(t - 1) * m.cols;
    const double* src = m.data.data() + static_cast<size_t>(t) * m.cols;
    double* dst = out.data.data() + static_cast<size_t>(t) * m.cols;
    for (int j = 0; j < m.cols; ++j) dst[j] = prev[j] + src[j];
  }
  return out;
}

Vector masked_mean_pool(const Matrix& m, int valid_len) {
  if (valid_len < 1 || valid_len > m.rows) {
    throw Error(strformat("masked_mean_pool: valid_len %d outside [1, %d]", valid_len, m.rows));
  }
  Vector out(m.cols);
  for (int t = 0; t < valid_len; ++t) {
    auto r = m.row(t);
    for (int j = 0; j < m.cols; ++j) out[j] += r[j];
  }
  double inv = 1.0 / valid_len;
  for (int j = 0; j < m.cols; ++j) out[j] *= inv;
  return out;
}

Vector softmax_row(const Vector& v) {
  Vector out(v.size());
  if (v.size() == 0) return out;
  double mx = v[0];
  for (int i = 1; i < v.size(); ++i) mx = std::max(mx, v[i]);
  double sum = 0.0;
  for (int i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  double inv = 1.0 / sum;
  for (int i = 0; i < v.size(); ++i) out[i] *= inv;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  return std::sqrt(dot(v, v));
}

}  // namespace clar
