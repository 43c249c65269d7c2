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

#ifndef CLAR_TRAINING_H_
#define CLAR_TRAINING_H_

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clar/data.h"
#include "clar/encoders.h"

namespace clar {

// Multi-granularity contrastive training. Three terms: a local loss pairing
// hotword-span audio with hotword text, a global loss pairing whole
// utterances with whole transcripts, and an L1 quantity loss steering the
// CIF weights toward one fire per token. All backward passes are written by
// hand and verified against central finite differences.

// One training example: an utterance with exactly one annotated hotword
// (records with several hotwords are expanded into several items).
struct TrainItem {
  std::string id;
  Matrix features;
  std::vector<int> transcript;
  std::string transcript_text;
  std::vector<int> hotword_tokens;
  std::string hotword_text;
  int hotword_start = 0;   // token position in the transcript
  int hotword_length = 0;
};

std::vector<TrainItem> make_train_items(const std::vector<UtteranceRecord>& records);

struct LossWeights {
  double local = 1.0;
  double global = 1.0;
  double cif = 1.0;
};

struct LossReport {
  double local = 0.0;
  double global = 0.0;
  double cif = 0.0;
  double total = 0.0;
  LossWeights weights;
};

enum class Stage { kCifPretrain, kJoint };

// Which parameters the optimizer may move. Gradients are always computed
// for everything (so finite-difference checks see the true derivative of
// the loss); the scope only restricts the update.
enum class TrainScope { kCifOnly, kAll };

struct TrainState {
  ModelParams params;
  ModelParams adam_m;  // first-moment estimates, same shapes as params
  ModelParams adam_v;  // second-moment estimates
  int64_t step = 0;
  Stage stage = Stage::kJoint;
};

TrainState make_train_state(const ModelConfig& cfg, Rng& rng);

// In-batch soft targets: identity mass split uniformly across items that
// carry an identical key string, so duplicates are never negatives. Rows
// and columns each sum to 1.
Matrix identity_targets(const std::vector<std::string>& keys);

// Symmetric InfoNCE over unit-norm rows at inverse temperature tau: the
// average of the audio-to-text and text-to-audio cross-entropies against
// identity_targets(keys). A batch of B mutually equal rows scores exactly
// ln B.
double symmetric_contrastive(const Matrix& audio, const Matrix& text, double tau,
                             const std::vector<std::string>& keys);

// Weighted sum of the three terms, gradients accumulated into *grads when
// non-null. In stage kCifPretrain the local/global weights are forced to 0.
// Loss *values* are reported for every term regardless of weight, so traces
// stay comparable across configurations; with compute_all=false, terms with
// zero weight are skipped and reported as 0 (cheaper, used by the
// single-term wrappers).
LossReport loss_total(const std::vector<TrainItem>& batch, TrainState& state,
                      const LossWeights& weights, ModelParams* grads, bool compute_all = true);

// Single-term conveniences over loss_total.
double loss_local(const std::vector<TrainItem>& batch, TrainState& state, ModelParams* grads);
double loss_global(const std::vector<TrainItem>& batch, TrainState& state, ModelParams* grads);
double loss_cif(const std::vector<TrainItem>& batch, TrainState& state, ModelParams* grads);

// Adam with bias correction and decoupled weight decay (applied to every
// in-scope tensor except log_tau). Raises on NaN gradients, naming the
// parameter. Out-of-scope parameters keep their values and moments.
void optimizer_step(TrainState& state, ModelParams& grads, double lr, TrainScope scope,
                    double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                    double weight_decay = 0.0);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  int coords_checked = 0;
};

// Central finite differences of loss_total against the analytic gradients,
// over coords_per_group random coordinates of every parameter tensor whose
// name starts with one of param_prefixes (empty list = all tensors).
// Relative error uses |fd - g| / max(|fd| + |g|, denom_floor); the floor
// keeps near-zero gradients from amplifying finite-difference noise.
GradCheckResult grad_check(TrainState& state, const std::vector<TrainItem>& batch,
                           const LossWeights& weights,
                           const std::vector<std::string>& param_prefixes, int coords_per_group,
                           double epsilon, double denom_floor, Rng& rng);

struct StageConfig {
  int epochs = 30;
  double lr = 1e-3;
  LossWeights weights;
  TrainScope scope = TrainScope::kAll;
  double lr_decay = 1.0;  // per-epoch multiplicative learning-rate factor
};

struct TrainConfig {
  uint64_t seed = 1;
  int batch_size = 8;
  // Stddev of fresh Gaussian noise added to each batch's features. The
  // synthetic corpus is prototype-plus-noise, so jitter regularizes toward
  // the prototype structure instead of memorized per-utterance noise.
  double feature_jitter = 0.0;
  // Upper clamp on the learnable logit scale tau (0 disables the clamp). An
  // unconstrained tau inflates until the softmax saturates and margin
  // pressure on the embeddings disappears.
  double max_tau = 0.0;
  // Decoupled per-step weight decay passed to the optimizer.
  double weight_decay = 0.0;
  // When span_resample_min >= 1, each batch item's hotword span is redrawn
  // uniformly from its own transcript with length in [min, max] instead of
  // keeping the annotated span. Fresh spans every batch cover the
  // combinatorial space of windows the matcher will rank at inference,
  // where fixed annotations would be memorized.
  int span_resample_min = 0;
  int span_resample_max = 0;
  // Hard-pair mining, every hard_pair_every epochs (0 disables): the most
  // mutually similar token pairs in the current text embedding get dedicated
  // batches of length-1 spans at those tokens' occurrences. Plain in-batch
  // CE stalls on a merged pair — with both audio clusters and both text
  // embeddings glued, the paired forces cancel — and a batch holding only
  // the pair concentrates the gradient that breaks the tie.
  int hard_pair_every = 0;
  int hard_pair_count = 4;   // pairs mined per round
  int hard_pair_items = 16;  // occurrences drawn per side of a pair
  ModelConfig model;
  StageConfig stage1{30, 2e-3, {0.0, 0.0, 1.0}, TrainScope::kCifOnly};
  StageConfig stage2{30, 1e-3, {1.0, 1.0, 1.0}, TrainScope::kAll};
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

struct TraceRow {
  int epoch = 0;  // global epoch index across both stages
  double l_local = 0.0;
  double l_global = 0.0;
  double l_cif = 0.0;
  double total = 0.0;
  double recall_at_1 = 0.0;  // NaN when no evaluator was supplied
};

// columns: epoch,l_local,l_global,l_cif,total,recall@1
void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

// Two-stage schedule: stage 1 runs kCifPretrain with the stage1 settings,
// stage 2 resumes the same state (moments, step counter, batch-order rng)
// with the stage2 settings. Batches whose tail end would leave fewer than 2
// items are dropped (contrastive targets need a negative). eval_recall, if
// given, is called after every epoch with the current parameters.
TrainState train(const TrainConfig& cfg, const std::vector<TrainItem>& items,
                 std::vector<TraceRow>* trace,
                 const std::function<double(const ModelParams&)>& eval_recall = nullptr);

}  // namespace clar

#endif  // CLAR_TRAINING_H_
