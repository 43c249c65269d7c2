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

#include "clar/cif.h"

#include <cmath>

#include "clar/common.h"

namespace clar {

CifPredictorParams init_cif_predictor(int input_dim, int channels, int kernel_width, Rng& rng) {
  CifPredictorParams p;
  p.conv = init_conv1d(input_dim, channels, kernel_width, /*stride=*/1, rng);
  p.ln = init_layer_norm(channels);
  p.out = init_linear(channels, 1, rng);
  return p;
}

CifPredictorParams zeros_like(const CifPredictorParams& p) {
  CifPredictorParams z;
  z.conv = zeros_like(p.conv);
  z.ln = zeros_like(p.ln);
  z.out = zeros_like(p.out);
  return z;
}

void collect_params(CifPredictorParams& p, const std::string& prefix, std::vector<ParamRef>& out) {
  collect_params(p.conv, prefix + ".conv", out);
  collect_params(p.ln, prefix + ".ln", out);
  collect_params(p.out, prefix + ".linear", out);
}

Vector predict_weights(const Matrix& hidden, const CifPredictorParams& p) {
  return predict_weights_cached(hidden, p, nullptr);
}

Vector predict_weights_cached(const Matrix& hidden, const CifPredictorParams& p, CifPredictorCache* cache) {
  if (hidden.cols != p.conv.in_channels) {
    throw Error(strformat("predict_weights: hidden width %d != predictor input dim %d",
                          hidden.cols, p.conv.in_channels));
  }
  Matrix conv_out = conv1d_forward(p.conv, hidden);
  LayerNormCache ln_cache;
  Matrix ln_out = layer_norm_forward(p.ln, conv_out, cache != nullptr ? &ln_cache : nullptr);
  Matrix act = relu(ln_out);
  Matrix logits = linear_forward(p.out, act);  // T x 1
  Vector alpha(logits.rows);
  for (int t = 0; t < logits.rows; ++t) {
    alpha[t] = 1.0 / (1.0 + std::exp(-logits.at(t, 0)));
  }
  if (cache != nullptr) {
    cache->conv_out = std::move(conv_out);
    cache->ln = std::move(ln_cache);
    cache->ln_out = std::move(ln_out);
    cache->relu_out = std::move(act);
    cache->alpha = alpha;
  }
  return alpha;
}

Matrix predict_weights_backward(const Matrix& hidden, const CifPredictorParams& p,
                                const CifPredictorCache& cache, const Vector& dalpha,
                                CifPredictorParams* grad) {
  int t_len = dalpha.size();
  Matrix dlogits(t_len, 1);
  for (int t = 0; t < t_len; ++t) {
    double a = cache.alpha[t];
    dlogits.at(t, 0) = dalpha[t] * a * (1.0 - a);
  }
  Matrix dact = linear_backward(p.out, cache.relu_out, dlogits, grad != nullptr ? &grad->out : nullptr);
  Matrix dln = relu_backward(cache.ln_out, dact);
  Matrix dconv = layer_norm_backward(p.ln, cache.ln, dln, grad != nullptr ? &grad->ln : nullptr);
  return conv1d_backward(p.conv, hidden, dconv, grad != nullptr ? &grad->conv : nullptr);
}

CifAlignment accumulate_and_fire(const Vector& weights, double theta, TailPolicy tail) {
  if (theta <= 0.0) throw Error(strformat("accumulate_and_fire: theta must be > 0, got %g", theta));
  for (int t = 0; t < weights.size(); ++t) {
    if (weights[t] < 0.0) {
      throw Error(strformat("accumulate_and_fire: negative weight %g at frame %d", weights[t], t));
    }
  }

  CifAlignment a;
  a.weights = weights;
  a.theta = theta;
  int t_len = weights.size();
  a.counters.resize(t_len);
  a.fire_flags.resize(t_len);
  a.token_of_frame.resize(t_len);

  double counter = 0.0;
  int span_start = 0;
  for (int t = 0; t < t_len; ++t) {
    counter += weights[t];
    a.counters[t] = counter;
    // token index counts prior fires only, so a firing frame still belongs
    // to the token it closes
    a.token_of_frame[t] = a.fire_count;
    bool fired = counter >= theta;
    a.fire_flags[t] = fired;
    if (fired) {
      counter -= theta;  // residual carries over, even when still >= theta
      a.spans.push_back({span_start, t});
      a.fire_count += 1;
      span_start = t + 1;
    }
  }

  if (tail == TailPolicy::kFireIfResidualGeHalf && counter >= theta / 2.0 && span_start < t_len) {
    a.spans.push_back({span_start, t_len - 1});
    a.has_tail_token = true;
  }
  return a;
}

Vector scale_weights_to_length(const Vector& weights, int target_len) {
  if (target_len < 1) throw Error(strformat("scale_weights_to_length: target_len %d < 1", target_len));
  double sum = 0.0;
  for (int t = 0; t < weights.size(); ++t) sum += weights[t];
  if (sum <= 0.0) throw Error("scale_weights_to_length: weights sum to zero, scale undefined");
  double scale = static_cast<double>(target_len) / sum;
  Vector out(weights.size());
  for (int t = 0; t < weights.size(); ++t) out[t] = weights[t] * scale;
  return out;
}

TokenSpan spans_for_window(const CifAlignment& a, int start_token, int width) {
  if (width < 1) throw Error(strformat("spans_for_window: width %d < 1", width));
  int last = start_token + width - 1;
  if (start_token < 0 || last >= a.token_count()) {
    throw Error(strformat("spans_for_window: window [%d, %d] exceeds %d emitted tokens",
                          start_token, last, a.token_count()));
  }
  return {a.spans[start_token].begin, a.spans[last].end};
}

nlohmann::json alignment_to_json(const CifAlignment& a) {
  nlohmann::json spans = nlohmann::json::array();
  for (const TokenSpan& s : a.spans) spans.push_back({s.begin, s.end});
  return nlohmann::json{
      {"weights", a.weights.data},
      {"theta", a.theta},
      {"spans", spans},
      {"token_count", a.token_count()},
      {"fire_count", a.fire_count},
      {"has_tail_token", a.has_tail_token},
  };
}

CifAlignment alignment_from_json(const nlohmann::json& j) {
  Vector w(j.at("weights").get<std::vector<double>>());
  CifAlignment a = accumulate_and_fire(w, j.at("theta").get<double>(),
                                       j.at("has_tail_token").get<bool>()
                                           ? TailPolicy::kFireIfResidualGeHalf
                                           : TailPolicy::kDrop);
  return a;
}

}  // namespace clar
