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

#include "clar/nn.h"

#include <cmath>

namespace clar {

namespace {

void fill_uniform(std::vector<double>& v, double bound, Rng& rng) {
  for (double& x : v) x = rng.uniform(-bound, bound);
}

}  // namespace

LinearLayer init_linear(int in_dim, int out_dim, Rng& rng) {
  LinearLayer p;
  p.w = Matrix(out_dim, in_dim);
  p.b = Vector(out_dim);
  double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  fill_uniform(p.w.data, bound, rng);
  fill_uniform(p.b.data, bound, rng);
  return p;
}

Conv1dLayer init_conv1d(int in_channels, int out_channels, int kernel_width, int stride, Rng& rng) {
  if (kernel_width % 2 == 0) throw Error("init_conv1d: kernel width must be odd");
  Conv1dLayer p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.kernel_width = kernel_width;
  p.stride = stride;
  p.w = Matrix(out_channels, kernel_width * in_channels);
  p.b = Vector(out_channels);
  double bound = 1.0 / std::sqrt(static_cast<double>(kernel_width * in_channels));
  fill_uniform(p.w.data, bound, rng);
  fill_uniform(p.b.data, bound, rng);
  return p;
}

LayerNormParams init_layer_norm(int channels) {
  LayerNormParams p;
  p.gain = Vector(channels, 1.0);
  p.bias = Vector(channels, 0.0);
  return p;
}

LinearLayer zeros_like(const LinearLayer& p) {
  LinearLayer z;
  z.w = Matrix(p.w.rows, p.w.cols);
  z.b = Vector(p.b.size());
  return z;
}

Conv1dLayer zeros_like(const Conv1dLayer& p) {
  Conv1dLayer z = p;
  z.w = Matrix(p.w.rows, p.w.cols);
  z.b = Vector(p.b.size());
  return z;
}

LayerNormParams zeros_like(const LayerNormParams& p) {
  LayerNormParams z;
  z.gain = Vector(p.gain.size());
  z.bias = Vector(p.bias.size());
  z.eps = p.eps;
  return z;
}

Matrix linear_forward(const LinearLayer& p, const Matrix& x) {
  if (x.cols != p.w.cols) {
    throw Error(strformat("linear_forward: input width %d != weight fan-in %d", x.cols, p.w.cols));
  }
  Matrix y(x.rows, p.w.rows);
  for (int t = 0; t < x.rows; ++t) {
    auto xr = x.row(t);
    auto yr = y.row(t);
    for (int o = 0; o < p.w.rows; ++o) {
      yr[o] = p.b[o] + dot(p.w.row(o), xr);
    }
  }
  return y;
}

Matrix linear_backward(const LinearLayer& p, const Matrix& x, const Matrix& dy, LinearLayer* grad) {
  Matrix dx(x.rows, x.cols);
  for (int t = 0; t < x.rows; ++t) {
    auto xr = x.row(t);
    auto dyr = dy.row(t);
    auto dxr = dx.row(t);
    for (int o = 0; o < p.w.rows; ++o) {
      double g = dyr[o];
      if (grad != nullptr) {
        grad->b[o] += g;
        auto gw = grad->w.row(o);
        for (int i = 0; i < x.cols; ++i) gw[i] += g * xr[i];
      }
      auto wr = p.w.row(o);
      for (int i = 0; i < x.cols; ++i) dxr[i] += g * wr[i];
    }
  }
  return dx;
}

int conv1d_output_len(int input_len, int stride) {
  return (input_len + stride - 1) / stride;
}

namespace {

// "same" padding split for ceil(len/stride) outputs.
int conv_pad_left(const Conv1dLayer& p, int input_len) {
  int out_len = conv1d_output_len(input_len, p.stride);
  int total = (out_len - 1) * p.stride + p.kernel_width - input_len;
  if (total < 0) total = 0;
  return total / 2;
}

}  // namespace

Matrix conv1d_forward(const Conv1dLayer& p, const Matrix& x) {
  if (x.cols != p.in_channels) {
    throw Error(strformat("conv1d_forward: input has %d channels, layer expects %d", x.cols, p.in_channels));
  }
  int out_len = conv1d_output_len(x.rows, p.stride);
  int pad_left = conv_pad_left(p, x.rows);
  Matrix y(out_len, p.out_channels);
  for (int t = 0; t < out_len; ++t) {
    auto yr = y.row(t);
    for (int o = 0; o < p.out_channels; ++o) yr[o] = p.b[o];
    int start = t * p.stride - pad_left;
    for (int k = 0; k < p.kernel_width; ++k) {
      int u = start + k;
      if (u < 0 || u >= x.rows) continue;
      auto xr = x.row(u);
      for (int o = 0; o < p.out_channels; ++o) {
        const double* wk = p.w.data.data() + static_cast<size_t>(o) * p.w.cols + static_cast<size_t>(k) * p.in_channels;
        double acc = 0.0;
        for (int ci = 0; ci < p.in_channels; ++ci) acc += wk[ci] * xr[ci];
        yr[o] += acc;
      }
    }
  }
  return y;
}

Matrix conv1d_backward(const Conv1dLayer& p, const Matrix& x, const Matrix& dy, Conv1dLayer* grad) {
  int out_len = conv1d_output_len(x.rows, p.stride);
  int pad_left = conv_pad_left(p, x.rows);
  Matrix dx(x.rows, x.cols);
  for (int t = 0; t < out_len; ++t) {
    auto dyr = dy.row(t);
    if (grad != nullptr) {
      for (int o = 0; o < p.out_channels; ++o) grad->b[o] += dyr[o];
    }
    int start = t * p.stride - pad_left;
    for (int k = 0; k < p.kernel_width; ++k) {
      int u = start + k;
      if (u < 0 || u >= x.rows) continue;
      auto xr = x.row(u);
      auto dxr = dx.row(u);
      for (int o = 0; o < p.out_channels; ++o) {
        double g = dyr[o];
        const double* wk = p.w.data.data() + static_cast<size_t>(o) * p.w.cols + static_cast<size_t>(k) * p.in_channels;
        if (grad != nullptr) {
          double* gw = grad->w.data.data() + static_cast<size_t>(o) * p.w.cols + static_cast<size_t>(k) * p.in_channels;
          for (int ci = 0; ci < p.in_channels; ++ci) gw[ci] += g * xr[ci];
        }
        for (int ci = 0; ci < p.in_channels; ++ci) dxr[ci] += g * wk[ci];
      }
    }
  }
  return dx;
}

Matrix layer_norm_forward(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache) {
  if (x.cols != p.gain.size()) {
    throw Error(strformat("layer_norm_forward: %d channels vs %d parameters", x.cols, p.gain.size()));
  }
  Matrix y(x.rows, x.cols);
  if (cache != nullptr) {
    cache->mean.assign(x.rows, 0.0);
    cache->inv_std.assign(x.rows, 0.0);
    cache->xhat = Matrix(x.rows, x.cols);
  }
  for (int t = 0; t < x.rows; ++t) {
    auto xr = x.row(t);
    double mean = 0.0;
    for (int c = 0; c < x.cols; ++c) mean += xr[c];
    mean /= x.cols;
    double var = 0.0;
    for (int c = 0; c < x.cols; ++c) {
      double d = xr[c] - mean;
      var += d * d;
    }
    var /= x.cols;
    double inv_std = 1.0 / std::sqrt(var + p.eps);
    auto yr = y.row(t);
    for (int c = 0; c < x.cols; ++c) {
      double xh = (xr[c] - mean) * inv_std;
      if (cache != nullptr) cache->xhat.at(t, c) = xh;
      yr[c] = xh * p.gain[c] + p.bias[c];
    }
    if (cache != nullptr) {
      cache->mean[t] = mean;
      cache->inv_std[t] = inv_std;
    }
  }
  return y;
}

Matrix layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache, const Matrix& dy,
                           LayerNormParams* grad) {
  int n = dy.cols;
  Matrix dx(dy.rows, dy.cols);
  for (int t = 0; t < dy.rows; ++t) {
    auto dyr = dy.row(t);
    auto xh = cache.xhat.row(t);
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (int c = 0; c < n; ++c) {
      double dxhat = dyr[c] * p.gain[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xh[c];
      if (grad != nullptr) {
        grad->gain[c] += dyr[c] * xh[c];
        grad->bias[c] += dyr[c];
      }
    }
    auto dxr = dx.row(t);
    double istd = cache.inv_std[t];
    for (int c = 0; c < n; ++c) {
      double dxhat = dyr[c] * p.gain[c];
      dxr[c] = istd * (dxhat - sum_dxhat / n - xh[c] * sum_dxhat_xhat / n);
    }
  }
  return dx;
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data) {
    if (v < 0.0) v = 0.0;
  }
  return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(dy.rows, dy.cols);
  for (size_t i = 0; i < dx.data.size(); ++i) {
    dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
  }
  return dx;
}

Matrix l2_normalize_rows_backward(const Matrix& x, const Matrix& normalized, const Matrix& g, double eps) {
  Matrix dx(x.rows, x.cols);
  for (int t = 0; t < x.rows; ++t) {
    double n = l2_norm(x.row(t));
    auto gr = g.row(t);
    auto dxr = dx.row(t);
    if (n <= eps) {
      // below eps the map is a constant 1/eps scale
      for (int c = 0; c < x.cols; ++c) dxr[c] = gr[c] / eps;
      continue;
    }
    auto yr = normalized.row(t);
    double proj = dot(yr, gr);
    for (int c = 0; c < x.cols; ++c) dxr[c] = (gr[c] - yr[c] * proj) / n;
  }
  return dx;
}

void collect_params(LinearLayer& p, const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w", p.w.data.data(), p.w.data.size(), p.w.rows, p.w.cols});
  out.push_back({prefix + ".b", p.b.data.data(), p.b.data.size(), p.b.size(), 0});
}

void collect_params(Conv1dLayer& p, const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w", p.w.data.data(), p.w.data.size(), p.w.rows, p.w.cols});
  out.push_back({prefix + ".b", p.b.data.data(), p.b.data.size(), p.b.size(), 0});
}

void collect_params(LayerNormParams& p, const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gain", p.gain.data.data(), p.gain.data.size(), p.gain.size(), 0});
  out.push_back({prefix + ".bias", p.bias.data.data(), p.bias.data.size(), p.bias.size(), 0});
}

}  // namespace clar
