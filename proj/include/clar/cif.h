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

#ifndef CLAR_CIF_H_
#define CLAR_CIF_H_

#include <vector>

#include "json.hpp"

#include "clar/matrix.h"
#include "clar/nn.h"

namespace clar {

// Continuous integrate-and-fire: per-frame weights are accumulated by a
// running counter and a token boundary is emitted ("fired") each time the
// counter reaches the threshold, carrying the remainder forward. This gives
// a monotonic frame-to-token map without any timestamp supervision.

// Weight predictor: Conv1d over time -> per-frame LayerNorm -> ReLU ->
// Linear(channels -> 1) -> sigmoid, producing one weight in (0,1) per frame.
struct CifPredictorParams {
  Conv1dLayer conv;
  LayerNormParams ln;
  LinearLayer out;
};

CifPredictorParams init_cif_predictor(int input_dim, int channels, int kernel_width, Rng& rng);
CifPredictorParams zeros_like(const CifPredictorParams& p);
void collect_params(CifPredictorParams& p, const std::string& prefix, std::vector<ParamRef>& out);

struct CifPredictorCache {
  Matrix conv_out;
  LayerNormCache ln;
  Matrix ln_out;
  Matrix relu_out;
  Vector alpha;
};

// One weight per frame, each strictly inside (0,1).
Vector predict_weights(const Matrix& hidden, const CifPredictorParams& p);
Vector predict_weights_cached(const Matrix& hidden, const CifPredictorParams& p, CifPredictorCache* cache);
// Backpropagates d(loss)/d(alpha); returns d(loss)/d(hidden) and accumulates
// parameter gradients into *grad when non-null.
Matrix predict_weights_backward(const Matrix& hidden, const CifPredictorParams& p,
                                const CifPredictorCache& cache, const Vector& dalpha,
                                CifPredictorParams* grad);

// What to do with leftover counter mass at the end of the utterance.
enum class TailPolicy {
  kDrop,                   // leftover weight is discarded
  kFireIfResidualGeHalf,   // emit one final token when the residual >= theta/2
};

// Inclusive frame range of one emitted token.
struct TokenSpan {
  int begin = 0;
  int end = 0;
};
inline bool operator==(const TokenSpan& a, const TokenSpan& b) {
  return a.begin == b.begin && a.end == b.end;
}

struct CifAlignment {
  Vector weights;                   // the per-frame weights that were integrated
  double theta = 1.0;
  std::vector<double> counters;     // counter value at each frame, before residual subtraction
  std::vector<bool> fire_flags;     // counters[t] >= theta
  std::vector<int> token_of_frame;  // 0-based token index per frame; non-decreasing
  std::vector<TokenSpan> spans;     // one per emitted token (tail token last, if any)
  int fire_count = 0;               // spans produced by genuine fire events
  bool has_tail_token = false;

  // Emitted tokens, including the tail token when the tail policy fired one.
  int token_count() const { return static_cast<int>(spans.size()); }
};

// Runs the counter over `weights`. At most one fire per frame: if the
// residual after subtraction still exceeds theta it is carried, and the next
// frame fires immediately. The frame at which the counter crosses theta
// closes the current token.
CifAlignment accumulate_and_fire(const Vector& weights, double theta = 1.0,
                                 TailPolicy tail = TailPolicy::kFireIfResidualGeHalf);

// weights * (target_len / sum(weights)); the teacher-forcing scale used
// during training so the number of fires matches the transcript length.
Vector scale_weights_to_length(const Vector& weights, int target_len);

// First frame of token `start_token` and last frame of token
// `start_token + width - 1` (0-based token indices over emitted tokens).
TokenSpan spans_for_window(const CifAlignment& a, int start_token, int width);

nlohmann::json alignment_to_json(const CifAlignment& a);
CifAlignment alignment_from_json(const nlohmann::json& j);

}  // namespace clar

#endif  // CLAR_CIF_H_
