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

#ifndef CLAR_DATA_H_
#define CLAR_DATA_H_

#include <string>
#include <vector>

#include "json.hpp"

#include "clar/common.h"
#include "clar/matrix.h"

namespace clar {

// Synthetic utterances: every transcript token contributes frames_per_token
// frames of a token-specific prototype vector plus Gaussian noise, and one
// contiguous n-gram of the transcript is annotated as the hotword. This
// gives the CIF predictor a learnable fire rate (one fire per
// frames_per_token frames) and the matcher a localizable acoustic cue.

struct HotwordAnnotation {
  std::string text;
  std::vector<int> tokens;
  int start = 0;   // token position in the transcript
  int length = 0;  // token count
};

struct UtteranceRecord {
  std::string id;
  Matrix features;              // frames x feature_dim
  std::vector<int> transcript;  // token ids
  std::string text;             // display string, one code point per token
  std::vector<HotwordAnnotation> hotwords;
};

struct SynthConfig {
  int vocab_size = 50;
  int feature_dim = 16;
  int frames_per_token = 4;
  double noise_sigma = 0.1;
  int min_utterance_tokens = 8;
  int max_utterance_tokens = 16;
  int min_hotword_tokens = 3;
  int max_hotword_tokens = 6;
  // Independent annotations drawn per utterance; training expands each into
  // its own item, so >1 widens local-loss coverage of the utterance.
  int hotwords_per_utterance = 1;
  int num_utterances = 500;
};

SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& cfg);

// One display code point per token id: [0-9a-zA-Z] for the first 62 ids,
// CJK ideographs from U+4E00 beyond that.
std::string token_display(int token_id);
std::string tokens_to_string(const std::vector<int>& tokens);

// vocab_size x feature_dim prototype table, entries N(0, 1).
Matrix make_prototypes(const SynthConfig& cfg, Rng& rng);

// frames_per_token noisy copies of each token's prototype, in order.
Matrix render_features(const std::vector<int>& tokens, const Matrix& prototypes,
                       int frames_per_token, double noise_sigma, Rng& rng);

// Uniform random token n-gram with a length from the hotword range; used
// for distractor candidates.
std::vector<int> random_ngram(const SynthConfig& cfg, Rng& rng);

// cfg.num_utterances records named "<id_prefix>NNNN", each with exactly one
// hotword annotation. Draws depend only on the rng stream and the config.
std::vector<UtteranceRecord> synthesize_dataset(const SynthConfig& cfg, const Matrix& prototypes,
                                                Rng& rng, const std::string& id_prefix);

// JSON-lines: one header record, then one utterance per line with features
// as nested arrays.
void save_dataset(const std::vector<UtteranceRecord>& records, const SynthConfig& cfg,
                  const std::string& path);
std::vector<UtteranceRecord> load_dataset(const std::string& path);

}  // namespace clar

#endif  // CLAR_DATA_H_
