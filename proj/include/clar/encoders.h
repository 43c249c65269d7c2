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

#ifndef CLAR_ENCODERS_H_
#define CLAR_ENCODERS_H_

#include <string>
#include <vector>

#include "json.hpp"

#include "clar/cif.h"
#include "clar/matrix.h"
#include "clar/nn.h"

namespace clar {

// Raw per-frame acoustic features for one utterance (frames x feature_dim).
using FrameFeatures = Matrix;

// Desk-scale stand-ins for the production encoders: a small strided conv
// stack with a per-frame MLP on the speech side, an embedding table with a
// per-token MLP and mean pooling on the text side, and two-layer ReLU
// projection heads mapping both into one shared L2-normalized space.

struct SpeechEncoderConfig {
  int feature_dim = 16;
  int conv_channels = 32;
  int kernel_width = 3;
  int stride = 1;       // applied by the first conv layer; T = ceil(T0/stride)
  int num_conv_layers = 2;
  int mlp_hidden = 32;
  int output_dim = 32;  // D_enc
  // Adds the raw features to the encoder output (needs stride 1 and
  // output_dim == feature_dim). The input geometry then survives to the
  // output by construction: contrastive training alone can silently map two
  // distinct tokens to one embedding — a self-consistent optimum, since
  // merged audio makes the paired text losses cancel — and the skip makes
  // that collapse impossible.
  bool residual_input = false;
};

struct SpeechEncoderParams {
  SpeechEncoderConfig cfg;
  std::vector<Conv1dLayer> convs;
  LinearLayer mlp1;
  LinearLayer mlp2;
};

struct TextEncoderConfig {
  int vocab_size = 50;
  int width = 32;
};

struct TextEncoderParams {
  TextEncoderConfig cfg;
  Matrix embedding;  // vocab_size x width
  LinearLayer mlp1;
  LinearLayer mlp2;
};

struct ProjectionConfig {
  int audio_in = 32;  // D_enc
  int text_in = 32;
  int hidden = 32;
  int dim = 16;  // shared space D
  // Adds each head's input to its pre-normalization output (needs dim ==
  // audio_in == text_in). Together with the speech encoder's skip this keeps
  // an identity path from raw features into the shared space, so distinct
  // inputs cannot be merged anywhere along the audio branch.
  bool residual_input = false;
};

struct ProjectionParams {
  ProjectionConfig cfg;
  LinearLayer audio1, audio2;  // f_a
  LinearLayer text1, text2;    // f_t
};

struct ModelConfig {
  SpeechEncoderConfig speech;
  TextEncoderConfig text;
  ProjectionConfig proj;
  int cif_channels = 32;
  int cif_kernel_width = 3;
  double theta = 1.0;
  double init_tau = 14.0;
  double norm_eps = 1e-12;
};

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);

// Every learnable tensor of the retriever, including the logit scale
// (stored as log so tau stays positive).
struct ModelParams {
  ModelConfig cfg;
  SpeechEncoderParams speech;
  TextEncoderParams text;
  CifPredictorParams cif;
  ProjectionParams proj;
  double log_tau = 0.0;

  double tau() const;
};

ModelParams init_model(const ModelConfig& cfg, Rng& rng);
ModelParams zeros_like(const ModelParams& m);
// Flat named views over every tensor, in a fixed order.
void collect_params(ModelParams& m, std::vector<ParamRef>& out);

// ---- speech branch ----

struct SpeechEncoderCache {
  std::vector<Matrix> conv_in;   // input to each conv layer
  std::vector<Matrix> conv_pre;  // conv output before ReLU
  Matrix mlp_in;                 // after last conv ReLU
  Matrix mlp1_pre;
  Matrix mlp1_post;
};

// T x D_enc hidden matrix; T follows the stride rule.
Matrix encode_speech(const FrameFeatures& features, const SpeechEncoderParams& p);
Matrix encode_speech_cached(const FrameFeatures& features, const SpeechEncoderParams& p,
                            SpeechEncoderCache* cache);
// Only meaningful for stride 1 (gradients never reach raw features in
// training, so the returned d(features) is dropped by callers).
Matrix encode_speech_backward(const SpeechEncoderParams& p, const SpeechEncoderCache& cache,
                              const Matrix& dhidden, SpeechEncoderParams* grad);

// ---- text branch ----

struct TextEncoderCache {
  std::vector<int> tokens;
  Matrix emb;        // looked-up rows
  Matrix mlp1_pre;
  Matrix mlp1_post;
  Matrix token_out;  // per-token outputs before pooling
};

// Pooled sentence/hotword embedding z (masked mean over all tokens).
Vector encode_text(const std::vector<int>& tokens, const TextEncoderParams& p);
Vector encode_text_cached(const std::vector<int>& tokens, const TextEncoderParams& p,
                          TextEncoderCache* cache);
void encode_text_backward(const TextEncoderParams& p, const TextEncoderCache& cache,
                          const Vector& dpooled, TextEncoderParams* grad);

// ---- projections ----

struct ProjectionCache {
  Matrix input;
  Matrix pre1;
  Matrix post1;
  Matrix out;         // before row normalization
  Matrix normalized;
};

// Per-frame f_a then row-wise L2 normalization; rows have unit norm.
Matrix project_audio(const Matrix& hidden, const ProjectionParams& p, double eps = 1e-12);
Matrix project_audio_cached(const Matrix& hidden, const ProjectionParams& p, double eps,
                            ProjectionCache* cache);
Matrix project_audio_backward(const ProjectionParams& p, const ProjectionCache& cache,
                              const Matrix& dnormalized, double eps, ProjectionParams* grad);

// f_t on a pooled text vector, then L2 normalization.
Vector project_text(const Vector& pooled, const ProjectionParams& p, double eps = 1e-12);
Vector project_text_cached(const Vector& pooled, const ProjectionParams& p, double eps,
                           ProjectionCache* cache);
Vector project_text_backward(const ProjectionParams& p, const ProjectionCache& cache,
                             const Vector& dnormalized, double eps, ProjectionParams* grad);

// ---- candidate bank ----

struct EmbeddingBank {
  Matrix embeddings;  // N x D, unit rows
  std::vector<int> token_lengths;
  std::vector<std::string> labels;
  std::vector<std::vector<int>> token_ids;

  int size() const { return embeddings.rows; }
  int dim() const { return embeddings.cols; }
};

struct Candidate {
  std::string label;
  std::vector<int> tokens;
};

// Encodes and projects every candidate, preserving input order.
EmbeddingBank build_bank(const std::vector<Candidate>& candidates, const TextEncoderParams& text,
                         const ProjectionParams& proj, double eps = 1e-12);

// JSON-lines: a header record then one {label, token_ids, embedding} per line.
void save_bank(const EmbeddingBank& bank, const std::string& path);
EmbeddingBank load_bank(const std::string& path);
// Candidate lists are bank files without the embedding field.
std::vector<Candidate> load_candidates(const std::string& path);
void save_candidates(const std::vector<Candidate>& candidates, const std::string& path);

// ---- checkpoints ----

void save_checkpoint(ModelParams& model, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace clar

#endif  // CLAR_ENCODERS_H_
