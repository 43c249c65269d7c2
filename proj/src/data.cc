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

#include "clar/data.h"

#include <fstream>

#include "clar/metrics.h"

namespace clar {

using nlohmann::json;

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig cfg;
  auto get = [&j](const char* key, auto fallback) {
    using T = decltype(fallback);
    return j.contains(key) ? j.at(key).get<T>() : fallback;
  };
  cfg.vocab_size = get("vocab_size", cfg.vocab_size);
  cfg.feature_dim = get("feature_dim", cfg.feature_dim);
  cfg.frames_per_token = get("frames_per_token", cfg.frames_per_token);
  cfg.noise_sigma = get("noise_sigma", cfg.noise_sigma);
  cfg.min_utterance_tokens = get("min_utterance_tokens", cfg.min_utterance_tokens);
  cfg.max_utterance_tokens = get("max_utterance_tokens", cfg.max_utterance_tokens);
  cfg.min_hotword_tokens = get("min_hotword_tokens", cfg.min_hotword_tokens);
  cfg.max_hotword_tokens = get("max_hotword_tokens", cfg.max_hotword_tokens);
  cfg.hotwords_per_utterance = get("hotwords_per_utterance", cfg.hotwords_per_utterance);
  cfg.num_utterances = get("num_utterances", cfg.num_utterances);
  return cfg;
}

json synth_config_to_json(const SynthConfig& cfg) {
  return json{{"vocab_size", cfg.vocab_size},
              {"feature_dim", cfg.feature_dim},
              {"frames_per_token", cfg.frames_per_token},
              {"noise_sigma", cfg.noise_sigma},
              {"min_utterance_tokens", cfg.min_utterance_tokens},
              {"max_utterance_tokens", cfg.max_utterance_tokens},
              {"min_hotword_tokens", cfg.min_hotword_tokens},
              {"max_hotword_tokens", cfg.max_hotword_tokens},
              {"hotwords_per_utterance", cfg.hotwords_per_utterance},
              {"num_utterances", cfg.num_utterances}};
}

std::string token_display(int token_id) {
  static const char kAscii[] = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
  if (token_id < 0) throw Error(strformat("token_display: negative token id %d", token_id));
  if (token_id < 62) return std::string(1, kAscii[token_id]);
  return utf8_encode({0x4e00u + static_cast<uint32_t>(token_id - 62)});
}

std::string tokens_to_string(const std::vector<int>& tokens) {
  std::string out;
  for (int t : tokens) out += token_display(t);
  return out;
}

namespace {

void validate(const SynthConfig& cfg) {
  if (cfg.vocab_size < 10) {
    throw Error(strformat("synth config: vocab_size %d < 10", cfg.vocab_size));
  }
  if (cfg.feature_dim < 1 || cfg.frames_per_token < 1) {
    throw Error("synth config: feature_dim and frames_per_token must be >= 1");
  }
  if (cfg.noise_sigma < 0.0) throw Error("synth config: negative noise_sigma");
  if (cfg.min_utterance_tokens < 1 || cfg.min_utterance_tokens > cfg.max_utterance_tokens) {
    throw Error(strformat("synth config: bad utterance length range [%d, %d]",
                          cfg.min_utterance_tokens, cfg.max_utterance_tokens));
  }
  if (cfg.min_hotword_tokens < 1 || cfg.min_hotword_tokens > cfg.max_hotword_tokens) {
    throw Error(strformat("synth config: bad hotword length range [%d, %d]",
                          cfg.min_hotword_tokens, cfg.max_hotword_tokens));
  }
  if (cfg.hotwords_per_utterance < 1) {
    throw Error(strformat("synth config: hotwords_per_utterance must be >= 1, got %d",
                          cfg.hotwords_per_utterance));
  }
  if (cfg.max_hotword_tokens > cfg.min_utterance_tokens) {
    throw Error(strformat("synth config: hotwords up to %d tokens cannot fit every utterance "
                          "(min utterance length %d)",
                          cfg.max_hotword_tokens, cfg.min_utterance_tokens));
  }
}

}  // namespace

Matrix make_prototypes(const SynthConfig& cfg, Rng& rng) {
  validate(cfg);
  Matrix protos(cfg.vocab_size, cfg.feature_dim);
  for (double& v : protos.data) v = rng.normal();
  return protos;
}

Matrix render_features(const std::vector<int>& tokens, const Matrix& prototypes,
                       int frames_per_token, double noise_sigma, Rng& rng) {
  Matrix features(static_cast<int>(tokens.size()) * frames_per_token, prototypes.cols);
  int frame = 0;
  for (int tok : tokens) {
    if (tok < 0 || tok >= prototypes.rows) {
      throw Error(strformat("render_features: token id %d outside prototype table of %d", tok,
                            prototypes.rows));
    }
    auto proto = prototypes.row(tok);
    for (int rep = 0; rep < frames_per_token; ++rep, ++frame) {
      auto dst = features.row(frame);
      for (int c = 0; c < prototypes.cols; ++c) dst[c] = proto[c] + rng.normal(0.0, noise_sigma);
    }
  }
  return features;
}

std::vector<int> random_ngram(const SynthConfig& cfg, Rng& rng) {
  int len = static_cast<int>(rng.uniform_range(cfg.min_hotword_tokens, cfg.max_hotword_tokens));
  std::vector<int> tokens(len);
  for (int& t : tokens) t = static_cast<int>(rng.uniform_int(cfg.vocab_size));
  return tokens;
}

std::vector<UtteranceRecord> synthesize_dataset(const SynthConfig& cfg, const Matrix& prototypes,
                                                Rng& rng, const std::string& id_prefix) {
  validate(cfg);
  if (prototypes.rows != cfg.vocab_size || prototypes.cols != cfg.feature_dim) {
    throw Error(strformat("synthesize_dataset: prototype table %dx%d does not match config %dx%d",
                          prototypes.rows, prototypes.cols, cfg.vocab_size, cfg.feature_dim));
  }
  std::vector<UtteranceRecord> records;
  for (int u = 0; u < cfg.num_utterances; ++u) {
    UtteranceRecord rec;
    rec.id = strformat("%s%04d", id_prefix.c_str(), u);
    int len = static_cast<int>(rng.uniform_range(cfg.min_utterance_tokens, cfg.max_utterance_tokens));
    rec.transcript.resize(len);
    for (int& t : rec.transcript) t = static_cast<int>(rng.uniform_int(cfg.vocab_size));
    rec.text = tokens_to_string(rec.transcript);

    for (int h = 0; h < cfg.hotwords_per_utterance; ++h) {
      HotwordAnnotation hw;
      hw.length = static_cast<int>(rng.uniform_range(cfg.min_hotword_tokens, cfg.max_hotword_tokens));
      hw.start = static_cast<int>(rng.uniform_range(0, len - hw.length));
      hw.tokens.assign(rec.transcript.begin() + hw.start,
                       rec.transcript.begin() + hw.start + hw.length);
      hw.text = tokens_to_string(hw.tokens);
      rec.hotwords.push_back(std::move(hw));
    }

    rec.features = render_features(rec.transcript, prototypes, cfg.frames_per_token,
                                   cfg.noise_sigma, rng);
    records.push_back(std::move(rec));
  }
  return records;
}

void save_dataset(const std::vector<UtteranceRecord>& records, const SynthConfig& cfg,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_dataset: cannot open " + path);
  json header{{"format_version", 1},
              {"kind", "clar-dataset"},
              {"count", records.size()},
              {"config", synth_config_to_json(cfg)}};
  out << header.dump() << "\n";
  for (const UtteranceRecord& rec : records) {
    json frames = json::array();
    for (int t = 0; t < rec.features.rows; ++t) {
      auto row = rec.features.row(t);
      frames.push_back(std::vector<double>(row.begin(), row.end()));
    }
    json hotwords = json::array();
    for (const HotwordAnnotation& hw : rec.hotwords) {
      hotwords.push_back({{"text", hw.text},
                          {"tokens", hw.tokens},
                          {"start", hw.start},
                          {"length", hw.length}});
    }
    json line{{"id", rec.id},
              {"tokens", rec.transcript},
              {"text", rec.text},
              {"frames", frames},
              {"hotwords", hotwords}};
    out << line.dump() << "\n";
  }
}

std::vector<UtteranceRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("load_dataset: " + path + " is empty");
  json header = json::parse(line);
  if (header.value("kind", "") != "clar-dataset") {
    throw Error("load_dataset: " + path + " is not a dataset file");
  }
  SynthConfig cfg = synth_config_from_json(header.at("config"));
  std::vector<UtteranceRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    UtteranceRecord out;
    out.id = rec.at("id").get<std::string>();
    out.transcript = rec.at("tokens").get<std::vector<int>>();
    out.text = rec.at("text").get<std::string>();
    const json& frames = rec.at("frames");
    out.features = Matrix(static_cast<int>(frames.size()), cfg.feature_dim);
    for (size_t t = 0; t < frames.size(); ++t) {
      auto row = frames[t].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != cfg.feature_dim) {
        throw Error(strformat("load_dataset: utterance %s frame %zu has %zu features, expected %d",
                              out.id.c_str(), t, row.size(), cfg.feature_dim));
      }
      std::copy(row.begin(), row.end(), out.features.row(static_cast<int>(t)).begin());
    }
    for (const json& h : rec.at("hotwords")) {
      HotwordAnnotation hw;
      hw.text = h.at("text").get<std::string>();
      hw.tokens = h.at("tokens").get<std::vector<int>>();
      hw.start = h.at("start").get<int>();
      hw.length = h.at("length").get<int>();
      if (hw.start < 0 || hw.length < 1 ||
          hw.start + hw.length > static_cast<int>(out.transcript.size())) {
        throw Error(strformat("load_dataset: utterance %s hotword span [%d, +%d) outside transcript",
                              out.id.c_str(), hw.start, hw.length));
      }
      out.hotwords.push_back(std::move(hw));
    }
    records.push_back(std::move(out));
  }
  if (static_cast<size_t>(header.at("count").get<int>()) != records.size()) {
    throw Error(strformat("load_dataset: header promises %d records, file has %zu",
                          header.at("count").get<int>(), records.size()));
  }
  return records;
}

}  // namespace clar
