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

#ifndef CLAR_PIPELINE_H_
#define CLAR_PIPELINE_H_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clar/data.h"
#include "clar/matching.h"
#include "clar/metrics.h"
#include "clar/training.h"

namespace clar {

// End-to-end drivers: full retrieval for one utterance, the synthetic
// retrieval benchmark used by training-time evaluation, report assembly,
// and prompt emission.

// Full retrieval: encode, predict fire weights, fire (no teacher forcing at
// inference), project, score against the bank, rank. Zero-frame input is an
// error naming the utterance.
RetrievalResult retrieve(const UtteranceRecord& utt, const EmbeddingBank& bank,
                         const ModelParams& params, int topk,
                         ShortUtterancePolicy policy = ShortUtterancePolicy::kFullWindow,
                         TailPolicy tail = TailPolicy::kFireIfResidualGeHalf);

// One candidate list per test utterance: the gold hotword at a seeded
// position among bank_size-1 random distractor n-grams, all labels unique.
// Utterances must carry exactly one hotword annotation.
std::vector<std::vector<Candidate>> benchmark_candidates(
    const std::vector<UtteranceRecord>& test, const SynthConfig& cfg, int bank_size,
    uint64_t seed);

// Recall@k over the per-utterance banks, re-embedding every candidate list
// with the given parameters. This is the evaluator handed to train().
double heldout_recall_at_k(const std::vector<UtteranceRecord>& test,
                           const std::vector<std::vector<Candidate>>& candidates,
                           const ModelParams& params, int k);

// Mean |sum(alpha) - transcript length| over utterances, the stage-1
// convergence measure.
double mean_cif_gap(const std::vector<UtteranceRecord>& test, const ModelParams& params);

struct UtteranceEval {
  std::string id;
  std::string gold;
  int gold_rank = 0;  // 1-based; 0 when the gold never appears in the ranking
  std::optional<double> cer;
  std::optional<double> b_wer;
  std::optional<double> u_cer;
};

struct EvalReport {
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  double recall_at_10 = 0.0;
  double f1 = 0.0;
  // Corpus-level rates (error totals over length totals); absent without a
  // hypothesis file, or when a region is empty.
  std::optional<double> cer;
  std::optional<double> b_wer;
  std::optional<double> u_cer;
  std::vector<UtteranceEval> utterances;  // id-sorted
};

// Joins per-utterance rankings with the gold annotations; hyps, when given,
// maps utterance id to a hypothesis transcript and enables the error rates
// (bias region = the utterance's gold hotword occurrences in the
// reference). bank_labels is the candidate pool the rankings were scored
// against; every gold must be in it.
EvalReport evaluate_results(const std::vector<UtteranceRecord>& data,
                            const std::map<std::string, RetrievalResult>& results,
                            const std::vector<std::string>& bank_labels,
                            const std::map<std::string, std::string>* hyps);

nlohmann::json eval_report_to_json(const EvalReport& report);
std::string eval_report_table(const EvalReport& report);

struct PromptArtifact {
  std::string utterance_id;
  std::vector<std::string> hotwords;  // rank order
  std::string prompt;
};

// Replaces the {hotwords} placeholder with the comma-joined ranked labels.
PromptArtifact emit_prompt(const std::string& utterance_id, const RetrievalResult& result,
                           const std::string& template_str);

// Results files: header record, then {id, ranked:[{label, score}]} lines.
void save_results(const std::vector<std::pair<std::string, RetrievalResult>>& results,
                  const std::string& path);
std::map<std::string, RetrievalResult> load_results(const std::string& path);

// Worker count for utterance-parallel loops: CLAR_THREADS when set (>= 1),
// otherwise the hardware concurrency. Outputs are written by index, so the
// result never depends on scheduling.
int thread_cap();
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace clar

#endif  // CLAR_PIPELINE_H_
