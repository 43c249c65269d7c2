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

// Test-side reference implementations, written independently of the library
// code paths they check: the CIF counter is re-derived from cumulative sums,
// window scores from direct frame loops, and edit distance from a fresh DP.
// Shared by the unit tests and the acceptance binary.

#ifndef CLAR_TESTS_ORACLES_H_
#define CLAR_TESTS_ORACLES_H_

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "clar/matching.h"
#include "clar/metrics.h"
#include "clar/training.h"

namespace clar {
namespace oracle {

// ---- CIF reference ----
//
// Reformulated without a carried counter: the counter at frame t equals
// cumsum(t) - theta * (#fires before t); frame t fires when that reaches
// theta. Spans are recovered afterwards from the fire positions.

struct CifRef {
  std::vector<int> token_of_frame;
  std::vector<TokenSpan> spans;
  int fire_count = 0;
  bool has_tail_token = false;
};

inline CifRef cif_reference(const std::vector<double>& weights, double theta, TailPolicy tail) {
  CifRef ref;
  int t_len = static_cast<int>(weights.size());
  ref.token_of_frame.resize(t_len);
  std::vector<int> fire_frames;
  double cumsum = 0.0;
  for (int t = 0; t < t_len; ++t) {
    cumsum += weights[t];
    ref.token_of_frame[t] = static_cast<int>(fire_frames.size());
    if (cumsum - theta * fire_frames.size() >= theta) fire_frames.push_back(t);
  }
  int prev = -1;
  for (int f : fire_frames) {
    ref.spans.push_back({prev + 1, f});
    prev = f;
  }
  ref.fire_count = static_cast<int>(fire_frames.size());
  double residual = cumsum - theta * fire_frames.size();
  if (tail == TailPolicy::kFireIfResidualGeHalf && residual >= theta / 2.0 && prev + 1 < t_len) {
    ref.spans.push_back({prev + 1, t_len - 1});
    ref.has_tail_token = true;
  }
  return ref;
}

inline bool cif_matches(const CifRef& ref, const CifAlignment& got) {
  return ref.token_of_frame == got.token_of_frame && ref.spans == got.spans &&
         ref.fire_count == got.fire_count && ref.has_tail_token == got.has_tail_token;
}

// ---- window scoring reference (direct double loop) ----

struct ScoreRef {
  double best = -std::numeric_limits<double>::infinity();
  int start = kNoWindow;
  bool fallback = false;
  bool skipped = false;
};

inline ScoreRef score_reference(const Matrix& scores, const CifAlignment& alignment, int length,
                                int candidate, ShortUtterancePolicy policy) {
  ScoreRef ref;
  int k = alignment.token_count();
  auto mean_over = [&scores, candidate](int b, int e) {
    double sum = 0.0;
    for (int t = b; t <= e; ++t) sum += scores.at(t, candidate);
    return sum / (e - b + 1);
  };
  if (length <= k) {
    for (int s = 0; s + length <= k; ++s) {
      double v = mean_over(alignment.spans[s].begin, alignment.spans[s + length - 1].end);
      if (v > ref.best) {
        ref.best = v;
        ref.start = s;
      }
    }
  } else if (policy == ShortUtterancePolicy::kSkip || scores.rows == 0) {
    ref.skipped = true;
  } else {
    int b = k > 0 ? alignment.spans.front().begin : 0;
    int e = k > 0 ? alignment.spans.back().end : scores.rows - 1;
    ref.best = mean_over(b, e);
    ref.fallback = true;
  }
  return ref;
}

// ---- edit distance reference (fresh DP, column-major fill) ----

inline int edit_reference(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b) {
  std::vector<int> col(a.size() + 1);
  for (size_t i = 0; i <= a.size(); ++i) col[i] = static_cast<int>(i);
  for (size_t j = 1; j <= b.size(); ++j) {
    int diag = col[0];
    col[0] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i) {
      int next_diag = col[i];
      int sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      col[i] = std::min({sub, col[i] + 1, col[i - 1] + 1});
      diag = next_diag;
    }
  }
  return col[a.size()];
}

// ---- metric case tables ----

struct CerCase {
  const char* hyp;
  const char* ref;
  int expected;  // hand-computed distance; -1 = trust edit_reference only
};

inline const std::vector<CerCase>& cer_cases() {
  static const std::vector<CerCase> cases = {
      {"", "abc", 3},
      {"abc", "abc", 0},
      {"abd", "abc", 1},
      {"ab", "abc", 1},
      {"abcd", "abc", 1},
      {"b", "a", 1},
      {"ba", "ab", 2},
      {"sitting", "kitten", 3},
      {"lawn", "flaw", 2},
      {"aaa", "a", 2},
      {"a", "aaa", 2},
      {"azcdef", "abcdef", 1},
      {"xyz", "abc", 3},
      {"", "\xe4\xb8\x80", 1},                                              // CJK single char
      {"\xe4\xb8\x80\xe4\xba\x8c", "\xe4\xb8\x80\xe4\xba\x8c", 0},          // identical CJK
      {"\xe4\xb8\x80\xe4\xb8\x89", "\xe4\xb8\x80\xe4\xba\x8c\xe4\xb8\x89", 1},
      {"\xe4\xba\x8c\xe4\xb8\x80", "\xe4\xb8\x80\xe4\xba\x8c", 2},
      {"cafe", "caf\xc3\xa9", 1},
      {"hello word", "hello world", 1},
      {"abcabc", "cbacba", -1},
      {"ephemeral", "ephemeral", 0},
      {"e", "ephemeral", -1},
      {"12a45", "12345", 1},
  };
  return cases;
}

struct BiasedCase {
  const char* ref;
  const char* hyp;
  std::vector<std::string> bias;
  int b_err, b_len, u_err, u_len;  // expected counts (lengths fix the rates)
};

inline const std::vector<BiasedCase>& biased_cases() {
  static const std::vector<BiasedCase> cases = {
      {"abcd", "abcd", {"bc"}, 0, 2, 0, 2},      // perfect
      {"abcd", "aXcd", {"bc"}, 1, 2, 0, 2},      // sub inside bias
      {"abcd", "Xbcd", {"bc"}, 0, 2, 1, 2},      // sub outside bias
      {"abcd", "abc", {"bc"}, 0, 2, 1, 2},       // del outside
      {"abcd", "abd", {"bc"}, 1, 2, 0, 2},       // del inside
      {"abcd", "abXcd", {"bc"}, 1, 2, 0, 2},     // insert before biased char
      {"abcd", "abcdX", {"bc"}, 0, 2, 1, 2},     // insert past end -> last char
      {"abcd", "Xabcd", {"ab"}, 1, 2, 0, 2},     // insert before pos 0, biased
      {"abcd", "abXd", {"zz"}, 0, 0, 1, 4},      // bias absent from ref
      {"ab", "ba", {"ab"}, 2, 2, 0, 0},          // everything biased
      {"abab", "abab", {"ab"}, 0, 4, 0, 0},      // repeated occurrence
      {"aaa", "aaa", {"aa"}, 0, 3, 0, 0},        // overlapping occurrences
      {"xaby", "xy", {"ab"}, 2, 2, 0, 2},        // biased span deleted
      {"xaby", "xaXby", {"ab"}, 1, 2, 0, 2},     // insert inside bias word
      {"abxcd", "abxcd", {"ab", "cd"}, 0, 4, 0, 1},
      {"abxcd", "abxcX", {"ab", "cd"}, 1, 4, 0, 1},
      {"abc", "", {"b"}, 1, 1, 2, 2},            // empty hypothesis
      {"\xe5\xb0\x8f\xe6\x98\x8e\xe5\x8e\xbb\xe4\xb8\x8a\xe6\xb5\xb7",
       "\xe5\xb0\x8f\xe6\x98\x8e\xe5\x8e\xbb\xe4\xb8\x8a\xe6\xb5\xb7",
       {"\xe4\xb8\x8a\xe6\xb5\xb7"}, 0, 2, 0, 3},  // CJK perfect
      {"\xe5\xb0\x8f\xe6\x98\x8e\xe5\x8e\xbb\xe4\xb8\x8a\xe6\xb5\xb7",
       "\xe5\xb0\x8f\xe6\x98\x8e\xe5\x8e\xbb\xe4\xb8\x8a\xe8\xbf\x98",
       {"\xe4\xb8\x8a\xe6\xb5\xb7"}, 1, 2, 0, 3},  // CJK sub in bias
      {"\xe5\x8e\xbb\xe4\xb8\x8a\xe6\xb5\xb7",
       "\xe5\x8e\xbb\xe4\xb8\x8aX\xe6\xb5\xb7",
       {"\xe4\xb8\x8a\xe6\xb5\xb7"}, 1, 2, 0, 1},  // insert inside CJK bias
      {"abcde", "aXce", {"cd"}, 1, 2, 1, 3},     // mixed sub + del
      {"\xe4\xb8\x8a\xe6\xb5\xb7\xe4\xb8\x8a\xe6\xb5\xb7", "\xe4\xb8\x8a\xe6\xb5\xb7",
       {"\xe4\xb8\x8a\xe6\xb5\xb7"}, 2, 4, 0, 0},  // repeated CJK bias, half deleted
  };
  return cases;
}

// A ranking whose entries carry the given labels in order, scores strictly
// decreasing from 1.0 so threshold tests can slice by position.
inline RetrievalResult ranking_of(const std::vector<std::string>& labels) {
  RetrievalResult r;
  for (size_t i = 0; i < labels.size(); ++i) {
    r.entries.push_back({static_cast<int>(i), labels[i], 1.0 - 0.1 * static_cast<double>(i)});
  }
  return r;
}

struct RecallCase {
  std::vector<std::vector<std::string>> rankings;  // per pair
  std::vector<std::string> gold;
  int k;
  double expected;
};

inline const std::vector<RecallCase>& recall_cases() {
  auto pool = [](std::initializer_list<const char*> xs) {
    return std::vector<std::string>(xs.begin(), xs.end());
  };
  static const std::vector<RecallCase> cases = {
      {{pool({"g", "a"})}, {"g"}, 1, 100.0},
      {{pool({"a", "g"})}, {"g"}, 1, 0.0},
      {{pool({"a", "g"})}, {"g"}, 2, 100.0},
      {{pool({"a", "b", "c"}), pool({"g", "a", "b"})}, {"g", "g"}, 1, 50.0},
      {{pool({"a", "b", "g"}), pool({"a", "g", "b"})}, {"g", "g"}, 2, 50.0},
      {{pool({"a", "b", "g"}), pool({"a", "g", "b"})}, {"g", "g"}, 3, 100.0},
      {{pool({"g"}), pool({"g"}), pool({"a", "g"}), pool({"a", "b"})},
       {"g", "g", "g", "g"}, 5, 75.0},
      {{pool({"x", "y", "z"})}, {"z"}, 1, 0.0},
      {{pool({"x", "y", "z"})}, {"z"}, 3, 100.0},
      {{pool({"g", "x"}), pool({"x", "g"}), pool({"x", "y"}), pool({"g", "y"})},
       {"g", "g", "g", "g"}, 1, 50.0},
      {{pool({"g", "x"}), pool({"x", "g"}), pool({"x", "y"}), pool({"g", "y"})},
       {"g", "g", "g", "g"}, 2, 75.0},
      {{pool({"a", "b", "c", "d", "g"})}, {"g"}, 4, 0.0},
      {{pool({"a", "b", "c", "d", "g"})}, {"g"}, 5, 100.0},
      {{pool({})}, {"g"}, 1, 0.0},  // empty ranking never hits (gold still in bank)
      {{pool({"g1", "g2"}), pool({"g2", "g1"})}, {"g1", "g2"}, 1, 100.0},
      {{pool({"g2", "g1"}), pool({"g1", "g2"})}, {"g1", "g2"}, 1, 0.0},
      {{pool({"a", "g"}), pool({"a", "g"}), pool({"a", "g"})}, {"g", "g", "g"}, 1, 0.0},
      {{pool({"g", "a"}), pool({"g", "a"}), pool({"g", "a"})}, {"g", "g", "g"}, 1, 100.0},
      {{pool({"a"}), pool({"g"})}, {"g", "g"}, 1, 50.0},
      {{pool({"b", "g", "c"}), pool({"b", "c", "g"}), pool({"g", "b", "c"}),
        pool({"b", "c", "x"})},
       {"g", "g", "g", "g"}, 2, 50.0},
      {{pool({"g", "h", "i"})}, {"i"}, 2, 0.0},
  };
  return cases;
}

struct F1Case {
  std::vector<std::vector<std::string>> rankings;
  std::vector<std::string> gold;
  std::optional<double> threshold;  // scores run 1.0, 0.9, 0.8, ...
  double expected;                  // percentage, exact arithmetic
};

inline const std::vector<F1Case>& f1_cases() {
  auto pool = [](std::initializer_list<const char*> xs) {
    return std::vector<std::string>(xs.begin(), xs.end());
  };
  const auto none = std::optional<double>();
  static const std::vector<F1Case> cases = {
      // top-1 rule
      {{pool({"g", "a"})}, {"g"}, none, 100.0},
      {{pool({"a", "g"})}, {"g"}, none, 0.0},
      {{pool({"g", "a"}), pool({"a", "g"})}, {"g", "g"}, none, 50.0},
      {{pool({"g"}), pool({"g"}), pool({"g"}), pool({"g"})}, {"g", "g", "g", "g"}, none, 100.0},
      {{pool({"g"}), pool({"g"}), pool({"a"}), pool({"a"})}, {"g", "g", "g", "g"}, none, 50.0},
      {{pool({"g", "a"}), pool({})}, {"g", "g"}, none, 200.0 / 3.0},  // P=1, R=1/2
      {{pool({}), pool({})}, {"g", "g"}, none, 0.0},
      {{pool({"a"}), pool({"b"}), pool({"c"})}, {"g", "g", "g"}, none, 0.0},
      {{pool({"g"}), pool({"a"}), pool({})}, {"g", "g", "g"}, none, 40.0},  // P=1/2, R=1/3
      {{pool({"g1"}), pool({"g2"}), pool({"x"})}, {"g1", "g2", "g3"}, none, 200.0 / 3.0},
      // threshold rule (scores 1.0, 0.9, 0.8, ...)
      {{pool({"g", "a"})}, {"g"}, 0.95, 100.0},            // only rank 1 kept
      {{pool({"a", "g"})}, {"g"}, 0.85, 200.0 / 3.0},      // both kept: P=1/2, R=1
      {{pool({"a", "g"})}, {"g"}, 0.95, 0.0},              // gold cut away
      {{pool({"a", "b", "g"})}, {"g"}, 0.75, 50.0},        // 3 kept: P=1/3, R=1
      {{pool({"g", "a"}), pool({"g", "b"})}, {"g", "g"}, 0.85, 200.0 / 3.0},  // P=2/4, R=2/2
      {{pool({"g", "a"})}, {"g"}, 1.5, 0.0},               // nothing predicted
      {{pool({"g", "g"})}, {"g"}, 0.85, 100.0},            // duplicate labels collapse
      {{pool({"a", "a", "g"})}, {"g"}, 0.75, 200.0 / 3.0},  // dedup: preds {a,g}
      {{pool({"g", "x"}), pool({"y", "g"}), pool({"g"})}, {"g", "g", "g"}, 0.0, 75.0},
      {{pool({"g"}), pool({})}, {"g", "g"}, 0.0, 200.0 / 3.0},
      {{pool({"x", "g"}), pool({"g", "y"})}, {"g", "g"}, 0.95, 50.0},  // P=1/2, R=1/2
  };
  return cases;
}

// ---- shared toy fixtures ----

// Small-but-real model for gradient and loss tests.
inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.speech.feature_dim = 6;
  cfg.speech.conv_channels = 8;
  cfg.speech.mlp_hidden = 8;
  cfg.speech.output_dim = 8;
  cfg.text.vocab_size = 12;
  cfg.text.width = 8;
  cfg.proj.audio_in = 8;
  cfg.proj.text_in = 8;
  cfg.proj.hidden = 8;
  cfg.proj.dim = 4;
  cfg.cif_channels = 8;
  return cfg;
}

inline SynthConfig tiny_synth_config() {
  SynthConfig cfg;
  cfg.vocab_size = 12;
  cfg.feature_dim = 6;
  cfg.frames_per_token = 3;
  cfg.min_utterance_tokens = 5;
  cfg.max_utterance_tokens = 8;
  cfg.min_hotword_tokens = 2;
  cfg.max_hotword_tokens = 3;
  cfg.num_utterances = 4;
  return cfg;
}

inline std::vector<TrainItem> tiny_batch(uint64_t seed, int size) {
  SynthConfig cfg = tiny_synth_config();
  cfg.num_utterances = size;
  Rng root(seed);
  Rng proto_rng = root.fork("proto");
  Matrix prototypes = make_prototypes(cfg, proto_rng);
  Rng data_rng = root.fork("data");
  return make_train_items(synthesize_dataset(cfg, prototypes, data_rng, "toy"));
}

}  // namespace oracle
}  // namespace clar

#endif  // CLAR_TESTS_ORACLES_H_
