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

#ifndef CLAR_NN_H_
#define CLAR_NN_H_

#include <string>
#include <vector>

#include "clar/common.h"
#include "clar/matrix.h"

namespace clar {

// Building blocks shared by the speech/text encoders, the projection heads
// and the fire-weight predictor. Each block has an explicit backward pass;
// gradients are accumulated (+=) into a same-shaped parameter struct so a
// batch can reuse one gradient buffer.

struct LinearLayer {
  Matrix w;  // out x in
  Vector b;  // out
};

struct Conv1dLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_width = 0;  // odd
  int stride = 1;
  Matrix w;  // out_channels x (kernel_width * in_channels)
  Vector b;  // out_channels
};

struct LayerNormParams {
  Vector gain;
  Vector bias;
  double eps = 1e-5;
};

// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
LinearLayer init_linear(int in_dim, int out_dim, Rng& rng);
Conv1dLayer init_conv1d(int in_channels, int out_channels, int kernel_width, int stride, Rng& rng);
LayerNormParams init_layer_norm(int channels);  // gain 1, bias 0

LinearLayer zeros_like(const LinearLayer& p);
Conv1dLayer zeros_like(const Conv1dLayer& p);
LayerNormParams zeros_like(const LayerNormParams& p);

// y = x W^T + b per row. x: n x in, y: n x out.
Matrix linear_forward(const LinearLayer& p, const Matrix& x);
// Returns dx; accumulates dW, db into *grad when non-null.
Matrix linear_backward(const LinearLayer& p, const Matrix& x, const Matrix& dy, LinearLayer* grad);

// Number of output frames under "same"-style zero padding: ceil(len/stride).
int conv1d_output_len(int input_len, int stride);
Matrix conv1d_forward(const Conv1dLayer& p, const Matrix& x);
Matrix conv1d_backward(const Conv1dLayer& p, const Matrix& x, const Matrix& dy, Conv1dLayer* grad);

struct LayerNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  Matrix xhat;  // normalized rows before gain/bias
};
// Normalizes each row over its channels.
Matrix layer_norm_forward(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache);
Matrix layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache, const Matrix& dy,
                           LayerNormParams* grad);

Matrix relu(const Matrix& x);
// Mask derived from the pre-activation x.
Matrix relu_backward(const Matrix& x, const Matrix& dy);

// Gradient of y = x / max(||x||, eps) given upstream g, evaluated per row.
// `normalized` must hold the forward output rows.
Matrix l2_normalize_rows_backward(const Matrix& x, const Matrix& normalized, const Matrix& g, double eps);

// Named view over one parameter tensor; used by the optimizer, the
// finite-difference checker and checkpoint serialization.
struct ParamRef {
  std::string name;
  double* data = nullptr;
  size_t size = 0;
  int rows = 0;
  int cols = 0;  // 0 for vectors/scalars
};

void collect_params(LinearLayer& p, const std::string& prefix, std::vector<ParamRef>& out);
void collect_params(Conv1dLayer& p, const std::string& prefix, std::vector<ParamRef>& out);
void collect_params(LayerNormParams& p, const std::string& prefix, std::vector<ParamRef>& out);

}  // namespace clar

#endif  // CLAR_NN_H_
