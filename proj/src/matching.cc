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

#include "clar/matching.h"

#include <algorithm>
#include <limits>
#include <map>

#include "clar/common.h"

namespace clar {

using nlohmann::json;

SimilarityMatrix similarity(const Matrix& audio_emb, const EmbeddingBank& bank, double tau) {
  if (audio_emb.cols != bank.dim()) {
    throw Error(strformat("similarity: audio dim %d != bank dim %d", audio_emb.cols, bank.dim()));
  }
  if (tau <= 0.0) throw Error("similarity: tau must be positive");
  SimilarityMatrix sim;
  sim.tau = tau;
  sim.scores = Matrix(audio_emb.rows, bank.size());
  for (int t = 0; t < audio_emb.rows; ++t) {
    auto a = audio_emb.row(t);
    for (int j = 0; j < bank.size(); ++j) {
      sim.scores.at(t, j) = tau * dot(a, bank.embeddings.row(j));
    }
  }
  return sim;
}

double mean_slice_score(const SimilarityMatrix& sim, const CifAlignment& alignment, int candidate,
                        int window_start, int width) {
  if (candidate < 0 || candidate >= sim.scores.cols) {
    throw Error(strformat("mean_slice_score: candidate %d outside [0, %d)", candidate, sim.scores.cols));
  }
  TokenSpan w = spans_for_window(alignment, window_start, width);
  if (w.end >= sim.scores.rows) {
    throw Error(strformat("mean_slice_score: window frame %d beyond %d similarity rows", w.end,
                          sim.scores.rows));
  }
  double sum = 0.0;
  for (int t = w.begin; t <= w.end; ++t) sum += sim.scores.at(t, candidate);
  return sum / (w.end - w.begin + 1);
}

ScoredCandidates score_all(const SimilarityMatrix& sim, const CifAlignment& alignment,
                           const EmbeddingBank& bank, ShortUtterancePolicy policy) {
  const Matrix& s = sim.scores;
  int n = bank.size();
  if (s.cols != n) {
    throw Error(strformat("score_all: similarity has %d columns, bank has %d candidates", s.cols, n));
  }
  int k = alignment.token_count();
  if (k > 0 && alignment.spans.back().end >= s.rows) {
    throw Error(strformat("score_all: alignment covers frame %d, similarity has %d rows",
                          alignment.spans.back().end, s.rows));
  }

  ScoredCandidates out;
  out.best_score.assign(n, -std::numeric_limits<double>::infinity());
  out.best_window_start.assign(n, kNoWindow);
  out.window_width = bank.token_lengths;
  out.fallback.assign(n, false);
  out.skipped.assign(n, false);

  // Every window is token-aligned (spans are contiguous from frame 0), so
  // only per-column prefix sums sampled at token boundaries are ever read:
  // boundary[j][i] = sum of column j over frames [0, end_{i-1}], and the
  // window [s, s+L-1] sums to boundary[s+L] - boundary[s]. The boundary
  // matrix is candidate-major so each candidate's sweep stays in cache, and
  // it is built through a small column-tile buffer so both the similarity
  // read and the boundary write stay sequential.
  Matrix boundary(n, k + 1);
  std::vector<double> total(n, 0.0);  // full-range column sums, for k == 0
  {
    // One sequential pass over the similarity matrix: a running column-sum
    // vector is snapshot at every token boundary (boundary-major rows, all
    // writes sequential), then transposed in cache-sized blocks.
    Matrix by_boundary(k + 1, n);
    int next_token = 0;
    for (int t = 0; t < s.rows; ++t) {
      const double* row = s.data.data() + static_cast<size_t>(t) * s.cols;
      for (int j = 0; j < n; ++j) total[j] += row[j];
      if (next_token < k && alignment.spans[next_token].end == t) {
        next_token += 1;
        double* dst = by_boundary.data.data() + static_cast<size_t>(next_token) * n;
        std::copy(total.begin(), total.end(), dst);
      }
    }
    const int tile = 64;
    for (int i0 = 0; i0 <= k; i0 += tile) {
      int i_hi = std::min(i0 + tile, k + 1);
      for (int j0 = 0; j0 < n; j0 += tile) {
        int j_hi = std::min(j0 + tile, n);
        for (int i = std::max(i0, 1); i < i_hi; ++i) {
          for (int j = j0; j < j_hi; ++j) boundary.at(j, i) = by_boundary.at(i, j);
        }
      }
    }
    for (int j = 0; j < n; ++j) boundary.at(j, 0) = 0.0;
  }

  std::map<int, std::vector<int>> by_length;  // ordered keys keep sweeps deterministic
  for (int j = 0; j < n; ++j) by_length[bank.token_lengths[j]].push_back(j);

  for (const auto& [length, group] : by_length) {
    if (length <= k) {
      // One sweep per distinct length: window boundaries and frame counts
      // depend only on (alignment, length), never on the candidate.
      std::vector<double> inv_count(k - length + 1);
      for (int start = 0; start + length <= k; ++start) {
        TokenSpan w = spans_for_window(alignment, start, length);
        inv_count[start] = 1.0 / (w.end - w.begin + 1);
      }
      for (int j : group) {
        const double* b = boundary.data.data() + static_cast<size_t>(j) * (k + 1);
        double best = -std::numeric_limits<double>::infinity();
        int best_start = kNoWindow;
        for (int start = 0; start + length <= k; ++start) {
          double score = (b[start + length] - b[start]) * inv_count[start];
          if (score > best) {
            best = score;
            best_start = start;
          }
        }
        out.best_score[j] = best;
        out.best_window_start[j] = best_start;
      }
    } else if (policy == ShortUtterancePolicy::kSkip || s.rows == 0) {
      // No window of this width exists (or there are no frames at all).
      for (int j : group) out.skipped[j] = true;
    } else if (k > 0) {
      // Fallback: one window over all emitted frames.
      double inv_count = 1.0 / (alignment.spans.back().end - alignment.spans.front().begin + 1);
      for (int j : group) {
        out.best_score[j] = boundary.at(j, k) * inv_count;
        out.fallback[j] = true;
      }
    } else {
      // Nothing fired: the fallback window covers every frame.
      for (int j : group) {
        out.best_score[j] = total[j] / s.rows;
        out.fallback[j] = true;
      }
    }
  }
  return out;
}

RetrievalResult rank_topk(const ScoredCandidates& scored, const EmbeddingBank& bank, int k) {
  if (k < 1) throw Error("rank_topk: k must be >= 1");
  if (scored.size() != bank.size()) {
    throw Error(strformat("rank_topk: %d scores for a bank of %d", scored.size(), bank.size()));
  }
  std::vector<int> order;
  for (int j = 0; j < scored.size(); ++j) {
    if (!scored.skipped[j]) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(), [&scored](int a, int b) {
    return scored.best_score[a] > scored.best_score[b];
  });
  RetrievalResult out;
  int take = std::min<int>(k, static_cast<int>(order.size()));
  for (int i = 0; i < take; ++i) {
    int j = order[i];
    out.entries.push_back({j, bank.labels[j], scored.best_score[j]});
  }
  return out;
}

Vector localized_span_embedding(const Matrix& audio_emb, const CifAlignment& alignment,
                                int start_token, int end_token) {
  int k = alignment.token_count();
  if (start_token < 0 || end_token < start_token || end_token >= k) {
    throw Error(strformat("localized_span_embedding: token span [%d, %d] invalid for %d tokens",
                          start_token, end_token, k));
  }
  int b = alignment.spans[start_token].begin;
  int e = alignment.spans[end_token].end;
  if (e >= audio_emb.rows) {
    throw Error(strformat("localized_span_embedding: frame %d beyond %d embedding rows", e,
                          audio_emb.rows));
  }
  Vector pooled(audio_emb.cols);
  for (int t = b; t <= e; ++t) {
    auto row = audio_emb.row(t);
    for (int c = 0; c < audio_emb.cols; ++c) pooled[c] += row[c];
  }
  int count = e - b + 1;
  for (int c = 0; c < pooled.size(); ++c) pooled[c] /= count;
  double norm = l2_norm({pooled.data.data(), pooled.data.size()});
  double denom = std::max(norm, 1e-12);
  for (int c = 0; c < pooled.size(); ++c) pooled[c] /= denom;
  return pooled;
}

json export_similarity_map(const SimilarityMatrix& sim, const CifAlignment& alignment,
                           const ScoredCandidates& scored, const EmbeddingBank& bank,
                           const RetrievalResult& ranked) {
  json rows = json::array();
  for (int t = 0; t < sim.scores.rows; ++t) {
    auto r = sim.scores.row(t);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  json spans = json::array();
  for (const TokenSpan& s : alignment.spans) {
    spans.push_back({{"begin", s.begin}, {"end", s.end}});
  }
  json candidates = json::array();
  for (int j = 0; j < scored.size(); ++j) {
    json c{{"label", bank.labels[j]},
           {"length", scored.window_width[j]},
           {"window_start", scored.best_window_start[j]},
           {"fallback", static_cast<bool>(scored.fallback[j])},
           {"skipped", static_cast<bool>(scored.skipped[j])}};
    if (scored.skipped[j]) {
      c["score"] = nullptr;  // -inf is not representable in JSON
    } else {
      c["score"] = scored.best_score[j];
    }
    candidates.push_back(std::move(c));
  }
  json top = json::array();
  for (const RankedEntry& e : ranked.entries) {
    top.push_back({{"label", e.label}, {"score", e.score}});
  }
  return json{{"format_version", 1},
              {"kind", "clar-similarity-map"},
              {"tau", sim.tau},
              {"frames", sim.scores.rows},
              {"scores", rows},
              {"token_spans", spans},
              {"has_tail_token", alignment.has_tail_token},
              {"candidates", candidates},
              {"ranked", top}};
}

}  // namespace clar
