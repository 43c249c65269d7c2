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

#ifndef CLAR_METRICS_H_
#define CLAR_METRICS_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clar/matching.h"

namespace clar {

// Retrieval and transcription metrics. All string metrics operate on Unicode
// code points, so one CJK character counts as one unit; all rates are
// percentages in [0, 100].

std::vector<uint32_t> utf8_decode(const std::string& s);     // throws on malformed input
std::string utf8_encode(const std::vector<uint32_t>& cps);

// Unit-cost Levenshtein distance.
int edit_distance(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b);

// edit_distance(hyp, ref) / |ref| * 100. Empty ref is an error.
double cer(const std::string& hyp, const std::string& ref);

struct BiasedMetrics {
  // Error rate over ref characters covered by bias-list words, and over the
  // complement. Either is absent when its region is empty (never 0 by fiat).
  std::optional<double> b_wer;
  std::optional<double> u_cer;
  int biased_errors = 0;
  int unbiased_errors = 0;
  int biased_length = 0;
  int unbiased_length = 0;
};

// Aligns hyp to ref with the CER edit path (backtrace prefers diagonal, then
// deletion, then insertion) and splits the errors by region. The biased
// region is the union of all bias-word occurrences in ref. Substitutions and
// deletions take the region of their ref character; an insertion takes the
// region of the next ref character, falling back to the previous one at the
// end of the string.
BiasedMetrics biased_metrics(const std::string& hyp, const std::string& ref,
                             const std::vector<std::string>& bias_list);

// Fraction of (utterance, gold hotword) pairs whose gold label appears in
// the top k of its ranking, *100. Every gold label must be present in the
// matching bank_labels entry, otherwise the pair could never be retrieved
// and the setup is broken.
double recall_at_k(const std::vector<RetrievalResult>& rankings,
                   const std::vector<std::string>& gold,
                   const std::vector<std::vector<std::string>>& bank_labels, int k);

// Without a threshold, each utterance predicts its top-1 candidate; with
// one, every candidate scoring >= threshold is predicted (deduplicated by
// label). Precision counts correct predictions, recall counts utterances
// whose gold was predicted; returns the harmonic mean *100.
double f1_score(const std::vector<RetrievalResult>& rankings, const std::vector<std::string>& gold,
                std::optional<double> threshold = std::nullopt);

}  // namespace clar

#endif  // CLAR_METRICS_H_
