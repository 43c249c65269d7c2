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

#ifndef CLAR_MATCHING_H_
#define CLAR_MATCHING_H_

#include <string>
#include <vector>

#include "json.hpp"

#include "clar/cif.h"
#include "clar/encoders.h"
#include "clar/matrix.h"

namespace clar {

// Length-aware localized matching. A candidate of token length L is scored
// only over token windows of width L: for each window start s the score is
// the mean similarity over the frames the window covers, and the candidate
// keeps its best window. Token indices are 0-based throughout; "emitted
// tokens" include the tail token when the tail policy produced one.

struct SimilarityMatrix {
  Matrix scores;     // T x N, tau * <a_t, e_j>
  double tau = 1.0;  // logit scale baked into scores
};

// Per-candidate best window. `fallback` marks candidates whose token length
// exceeded the emitted token count and were scored over one window spanning
// all emitted frames (or all frames when nothing fired); `skipped` marks
// candidates left unscored under the skip policy (score -inf, no window).
struct ScoredCandidates {
  std::vector<double> best_score;
  std::vector<int> best_window_start;  // 0-based token index, kNoWindow otherwise
  std::vector<int> window_width;       // the candidate's token length
  std::vector<bool> fallback;
  std::vector<bool> skipped;

  int size() const { return static_cast<int>(best_score.size()); }
};

inline constexpr int kNoWindow = -1;

enum class ShortUtterancePolicy {
  kFullWindow,  // one window over all emitted frames
  kSkip,        // leave the candidate unscored
};

struct RankedEntry {
  int index = 0;  // candidate position in the bank
  std::string label;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<RankedEntry> entries;  // scores non-increasing; ties by index
};

// S[t][j] = tau * <a_t, e_j>. Rows of both inputs are unit-norm, so entries
// stay within +-tau (up to rounding).
SimilarityMatrix similarity(const Matrix& audio_emb, const EmbeddingBank& bank, double tau);

// Mean of column j over frames [b_s, e_{s+width-1}], divisor = frame count.
// `width` is the candidate's token length L_j.
double mean_slice_score(const SimilarityMatrix& sim, const CifAlignment& alignment, int candidate,
                        int window_start, int width);

// Best window per candidate: r_j = max over s in [0, K-L_j] of the mean
// slice. Implemented with per-column prefix sums and one window sweep per
// distinct candidate length, which is what makes large banks cheap; tests
// hold it to within 1e-9 of the naive double loop.
ScoredCandidates score_all(const SimilarityMatrix& sim, const CifAlignment& alignment,
                           const EmbeddingBank& bank,
                           ShortUtterancePolicy policy = ShortUtterancePolicy::kFullWindow);

// Top-k by score, non-increasing, ties broken by ascending candidate index.
// Skipped candidates never appear.
RetrievalResult rank_topk(const ScoredCandidates& scored, const EmbeddingBank& bank, int k);

// Mean of the audio-embedding rows covered by tokens [start_token,
// end_token], re-normalized to unit length. This is the hotword-level speech
// embedding used by the local contrastive loss.
Vector localized_span_embedding(const Matrix& audio_emb, const CifAlignment& alignment,
                                int start_token, int end_token);

// Everything an external plot of the similarity map needs: S, the token
// boundaries, per-candidate best windows, and the final ranking.
nlohmann::json export_similarity_map(const SimilarityMatrix& sim, const CifAlignment& alignment,
                                     const ScoredCandidates& scored, const EmbeddingBank& bank,
                                     const RetrievalResult& ranked);

}  // namespace clar

#endif  // CLAR_MATCHING_H_
