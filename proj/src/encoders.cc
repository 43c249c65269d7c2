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

#include "clar/encoders.h"

#include <cmath>
#include <fstream>

#include "clar/common.h"

namespace clar {

using nlohmann::json;

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  auto get = [](const json& o, const char* key, auto fallback) {
    using T = decltype(fallback);
    return o.contains(key) ? o.at(key).get<T>() : fallback;
  };
  if (j.contains("speech")) {
    const json& s = j.at("speech");
    cfg.speech.feature_dim = get(s, "feature_dim", cfg.speech.feature_dim);
    cfg.speech.conv_channels = get(s, "conv_channels", cfg.speech.conv_channels);
    cfg.speech.kernel_width = get(s, "kernel_width", cfg.speech.kernel_width);
    cfg.speech.stride = get(s, "stride", cfg.speech.stride);
    cfg.speech.num_conv_layers = get(s, "num_conv_layers", cfg.speech.num_conv_layers);
    cfg.speech.mlp_hidden = get(s, "mlp_hidden", cfg.speech.mlp_hidden);
    cfg.speech.output_dim = get(s, "output_dim", cfg.speech.output_dim);
    cfg.speech.residual_input = get(s, "residual_input", cfg.speech.residual_input);
  }
  if (j.contains("text")) {
    const json& t = j.at("text");
    cfg.text.vocab_size = get(t, "vocab_size", cfg.text.vocab_size);
    cfg.text.width = get(t, "width", cfg.text.width);
  }
  if (j.contains("proj")) {
    const json& p = j.at("proj");
    cfg.proj.hidden = get(p, "hidden", cfg.proj.hidden);
    cfg.proj.dim = get(p, "dim", cfg.proj.dim);
    cfg.proj.residual_input = get(p, "residual_input", cfg.proj.residual_input);
  }
  cfg.cif_channels = get(j, "cif_channels", cfg.cif_channels);
  cfg.cif_kernel_width = get(j, "cif_kernel_width", cfg.cif_kernel_width);
  cfg.theta = get(j, "theta", cfg.theta);
  cfg.init_tau = get(j, "init_tau", cfg.init_tau);
  cfg.proj.audio_in = cfg.speech.output_dim;
  cfg.proj.text_in = cfg.text.width;
  return cfg;
}

json model_config_to_json(const ModelConfig& cfg) {
  return json{
      {"speech",
       {{"feature_dim", cfg.speech.feature_dim},
        {"conv_channels", cfg.speech.conv_channels},
        {"kernel_width", cfg.speech.kernel_width},
        {"stride", cfg.speech.stride},
        {"num_conv_layers", cfg.speech.num_conv_layers},
        {"mlp_hidden", cfg.speech.mlp_hidden},
        {"output_dim", cfg.speech.output_dim},
        {"residual_input", cfg.speech.residual_input}}},
      {"text", {{"vocab_size", cfg.text.vocab_size}, {"width", cfg.text.width}}},
      {"proj",
       {{"hidden", cfg.proj.hidden},
        {"dim", cfg.proj.dim},
        {"residual_input", cfg.proj.residual_input}}},
      {"cif_channels", cfg.cif_channels},
      {"cif_kernel_width", cfg.cif_kernel_width},
      {"theta", cfg.theta},
      {"init_tau", cfg.init_tau},
  };
}

double ModelParams::tau() const { return std::exp(log_tau); }

ModelParams init_model(const ModelConfig& cfg_in, Rng& rng) {
  ModelParams m;
  m.cfg = cfg_in;
  m.cfg.proj.audio_in = m.cfg.speech.output_dim;
  m.cfg.proj.text_in = m.cfg.text.width;

  const SpeechEncoderConfig& sc = m.cfg.speech;
  if (sc.residual_input && (sc.stride != 1 || sc.output_dim != sc.feature_dim)) {
    throw Error("init_model: residual_input needs stride 1 and output_dim == feature_dim");
  }
  if (m.cfg.proj.residual_input &&
      (m.cfg.proj.dim != m.cfg.speech.output_dim || m.cfg.proj.dim != m.cfg.text.width)) {
    throw Error("init_model: projection residual_input needs dim == audio_in == text_in");
  }
  m.speech.cfg = sc;
  int in_ch = sc.feature_dim;
  for (int layer = 0; layer < sc.num_conv_layers; ++layer) {
    int stride = layer == 0 ? sc.stride : 1;
    m.speech.convs.push_back(init_conv1d(in_ch, sc.conv_channels, sc.kernel_width, stride, rng));
    in_ch = sc.conv_channels;
  }
  m.speech.mlp1 = init_linear(in_ch, sc.mlp_hidden, rng);
  m.speech.mlp2 = init_linear(sc.mlp_hidden, sc.output_dim, rng);

  const TextEncoderConfig& tc = m.cfg.text;
  m.text.cfg = tc;
  m.text.embedding = Matrix(tc.vocab_size, tc.width);
  double bound = 1.0 / std::sqrt(static_cast<double>(tc.width));
  for (double& v : m.text.embedding.data) v = rng.uniform(-bound, bound);
  m.text.mlp1 = init_linear(tc.width, tc.width, rng);
  m.text.mlp2 = init_linear(tc.width, tc.width, rng);

  m.cif = init_cif_predictor(sc.output_dim, m.cfg.cif_channels, m.cfg.cif_kernel_width, rng);

  const ProjectionConfig& pc = m.cfg.proj;
  m.proj.cfg = pc;
  m.proj.audio1 = init_linear(pc.audio_in, pc.hidden, rng);
  m.proj.audio2 = init_linear(pc.hidden, pc.dim, rng);
  m.proj.text1 = init_linear(pc.text_in, pc.hidden, rng);
  m.proj.text2 = init_linear(pc.hidden, pc.dim, rng);

  m.log_tau = std::log(m.cfg.init_tau);
  return m;
}

ModelParams zeros_like(const ModelParams& m) {
  ModelParams z;
  z.cfg = m.cfg;
  z.speech.cfg = m.speech.cfg;
  for (const Conv1dLayer& c : m.speech.convs) z.speech.convs.push_back(zeros_like(c));
  z.speech.mlp1 = zeros_like(m.speech.mlp1);
  z.speech.mlp2 = zeros_like(m.speech.mlp2);
  z.text.cfg = m.text.cfg;
  z.text.embedding = Matrix(m.text.embedding.rows, m.text.embedding.cols);
  z.text.mlp1 = zeros_like(m.text.mlp1);
  z.text.mlp2 = zeros_like(m.text.mlp2);
  z.cif = zeros_like(m.cif);
  z.proj.cfg = m.proj.cfg;
  z.proj.audio1 = zeros_like(m.proj.audio1);
  z.proj.audio2 = zeros_like(m.proj.audio2);
  z.proj.text1 = zeros_like(m.proj.text1);
  z.proj.text2 = zeros_like(m.proj.text2);
  z.log_tau = 0.0;
  return z;
}

void collect_params(ModelParams& m, std::vector<ParamRef>& out) {
  for (size_t i = 0; i < m.speech.convs.size(); ++i) {
    collect_params(m.speech.convs[i], strformat("speech.conv%zu", i + 1), out);
  }
  collect_params(m.speech.mlp1, "speech.mlp1", out);
  collect_params(m.speech.mlp2, "speech.mlp2", out);
  out.push_back({"text.embedding", m.text.embedding.data.data(), m.text.embedding.data.size(),
                 m.text.embedding.rows, m.text.embedding.cols});
  collect_params(m.text.mlp1, "text.mlp1", out);
  collect_params(m.text.mlp2, "text.mlp2", out);
  collect_params(m.cif, "cif", out);
  collect_params(m.proj.audio1, "proj.audio1", out);
  collect_params(m.proj.audio2, "proj.audio2", out);
  collect_params(m.proj.text1, "proj.text1", out);
  collect_params(m.proj.text2, "proj.text2", out);
  out.push_back({"log_tau", &m.log_tau, 1, 1, 0});
}

Matrix encode_speech(const FrameFeatures& features, const SpeechEncoderParams& p) {
  return encode_speech_cached(features, p, nullptr);
}

Matrix encode_speech_cached(const FrameFeatures& features, const SpeechEncoderParams& p,
                            SpeechEncoderCache* cache) {
  if (features.cols != p.cfg.feature_dim) {
    throw Error(strformat("encode_speech: feature dim %d != configured %d", features.cols,
                          p.cfg.feature_dim));
  }
  if (cache != nullptr) {
    cache->conv_in.clear();
    cache->conv_pre.clear();
  }
  Matrix x = features;
  for (const Conv1dLayer& conv : p.convs) {
    if (cache != nullptr) cache->conv_in.push_back(x);
    Matrix pre = conv1d_forward(conv, x);
    if (cache != nullptr) cache->conv_pre.push_back(pre);
    x = relu(pre);
  }
  if (cache != nullptr) cache->mlp_in = x;
  Matrix pre1 = linear_forward(p.mlp1, x);
  Matrix post1 = relu(pre1);
  Matrix out = linear_forward(p.mlp2, post1);
  if (p.cfg.residual_input) {
    for (size_t k = 0; k < out.data.size(); ++k) out.data[k] += features.data[k];
  }
  if (cache != nullptr) {
    cache->mlp1_pre = std::move(pre1);
    cache->mlp1_post = post1;
  }
  return out;
}

Matrix encode_speech_backward(const SpeechEncoderParams& p, const SpeechEncoderCache& cache,
                              const Matrix& dhidden, SpeechEncoderParams* grad) {
  Matrix dpost1 = linear_backward(p.mlp2, cache.mlp1_post, dhidden,
                                  grad != nullptr ? &grad->mlp2 : nullptr);
  Matrix dpre1 = relu_backward(cache.mlp1_pre, dpost1);
  Matrix dx = linear_backward(p.mlp1, cache.mlp_in, dpre1, grad != nullptr ? &grad->mlp1 : nullptr);
  for (int layer = static_cast<int>(p.convs.size()) - 1; layer >= 0; --layer) {
    Matrix dpre = relu_backward(cache.conv_pre[layer], dx);
    dx = conv1d_backward(p.convs[layer], cache.conv_in[layer], dpre,
                         grad != nullptr ? &grad->convs[layer] : nullptr);
  }
  if (p.cfg.residual_input) {
    for (size_t k = 0; k < dx.data.size(); ++k) dx.data[k] += dhidden.data[k];
  }
  return dx;
}

Vector encode_text(const std::vector<int>& tokens, const TextEncoderParams& p) {
  return encode_text_cached(tokens, p, nullptr);
}

Vector encode_text_cached(const std::vector<int>& tokens, const TextEncoderParams& p,
                          TextEncoderCache* cache) {
  if (tokens.empty()) throw Error("encode_text: empty token sequence");
  int n = static_cast<int>(tokens.size());
  Matrix emb(n, p.cfg.width);
  for (int i = 0; i < n; ++i) {
    int id = tokens[i];
    if (id < 0 || id >= p.cfg.vocab_size) {
      throw Error(strformat("encode_text: token id %d outside vocab of size %d", id, p.cfg.vocab_size));
    }
    auto src = p.embedding.row(id);
    auto dst = emb.row(i);
    for (int c = 0; c < p.cfg.width; ++c) dst[c] = src[c];
  }
  Matrix pre1 = linear_forward(p.mlp1, emb);
  Matrix post1 = relu(pre1);
  Matrix out = linear_forward(p.mlp2, post1);
  Vector pooled = masked_mean_pool(out, n);
  if (cache != nullptr) {
    cache->tokens = tokens;
    cache->emb = std::move(emb);
    cache->mlp1_pre = std::move(pre1);
    cache->mlp1_post = std::move(post1);
    cache->token_out = std::move(out);
  }
  return pooled;
}

void encode_text_backward(const TextEncoderParams& p, const TextEncoderCache& cache,
                          const Vector& dpooled, TextEncoderParams* grad) {
  int n = static_cast<int>(cache.tokens.size());
  Matrix dout(n, dpooled.size());
  for (int i = 0; i < n; ++i) {
    auto r = dout.row(i);
    for (int c = 0; c < dpooled.size(); ++c) r[c] = dpooled[c] / n;
  }
  Matrix dpost1 = linear_backward(p.mlp2, cache.mlp1_post, dout,
                                  grad != nullptr ? &grad->mlp2 : nullptr);
  Matrix dpre1 = relu_backward(cache.mlp1_pre, dpost1);
  Matrix demb = linear_backward(p.mlp1, cache.emb, dpre1, grad != nullptr ? &grad->mlp1 : nullptr);
  if (grad != nullptr) {
    for (int i = 0; i < n; ++i) {
      auto src = demb.row(i);
      auto dst = grad->embedding.row(cache.tokens[i]);
      for (int c = 0; c < demb.cols; ++c) dst[c] += src[c];
    }
  }
}

namespace {

Matrix projection_forward(const LinearLayer& l1, const LinearLayer& l2, const Matrix& input,
                          double eps, bool residual, ProjectionCache* cache) {
  Matrix pre1 = linear_forward(l1, input);
  Matrix post1 = relu(pre1);
  Matrix out = linear_forward(l2, post1);
  if (residual) {
    for (size_t k = 0; k < out.data.size(); ++k) out.data[k] += input.data[k];
  }
  Matrix normalized = l2_normalize_rows(out, eps);
  if (cache != nullptr) {
    cache->input = input;
    cache->pre1 = std::move(pre1);
    cache->post1 = std::move(post1);
    cache->out = std::move(out);
    cache->normalized = normalized;
  }
  return normalized;
}

Matrix projection_backward(const LinearLayer& l1, const LinearLayer& l2, const ProjectionCache& cache,
                           const Matrix& dnormalized, double eps, bool residual, LinearLayer* g1,
                           LinearLayer* g2) {
  Matrix dout = l2_normalize_rows_backward(cache.out, cache.normalized, dnormalized, eps);
  Matrix dpost1 = linear_backward(l2, cache.post1, dout, g2);
  Matrix dpre1 = relu_backward(cache.pre1, dpost1);
  Matrix dinput = linear_backward(l1, cache.input, dpre1, g1);
  if (residual) {
    for (size_t k = 0; k < dinput.data.size(); ++k) dinput.data[k] += dout.data[k];
  }
  return dinput;
}

Matrix one_row(const Vector& v) {
  Matrix m(1, v.size());
  for (int c = 0; c < v.size(); ++c) m.at(0, c) = v[c];
  return m;
}

Vector first_row(const Matrix& m) {
  Vector v(m.cols);
  for (int c = 0; c < m.cols; ++c) v[c] = m.at(0, c);
  return v;
}

}  // namespace

Matrix project_audio(const Matrix& hidden, const ProjectionParams& p, double eps) {
  return project_audio_cached(hidden, p, eps, nullptr);
}

Matrix project_audio_cached(const Matrix& hidden, const ProjectionParams& p, double eps,
                            ProjectionCache* cache) {
  if (hidden.cols != p.audio1.w.cols) {
    throw Error(strformat("project_audio: input width %d != projection fan-in %d", hidden.cols,
                          p.audio1.w.cols));
  }
  return projection_forward(p.audio1, p.audio2, hidden, eps, p.cfg.residual_input, cache);
}

Matrix project_audio_backward(const ProjectionParams& p, const ProjectionCache& cache,
                              const Matrix& dnormalized, double eps, ProjectionParams* grad) {
  return projection_backward(p.audio1, p.audio2, cache, dnormalized, eps, p.cfg.residual_input,
                             grad != nullptr ? &grad->audio1 : nullptr,
                             grad != nullptr ? &grad->audio2 : nullptr);
}

Vector project_text(const Vector& pooled, const ProjectionParams& p, double eps) {
  return project_text_cached(pooled, p, eps, nullptr);
}

Vector project_text_cached(const Vector& pooled, const ProjectionParams& p, double eps,
                           ProjectionCache* cache) {
  if (pooled.size() != p.text1.w.cols) {
    throw Error(strformat("project_text: input width %d != projection fan-in %d", pooled.size(),
                          p.text1.w.cols));
  }
  return first_row(
      projection_forward(p.text1, p.text2, one_row(pooled), eps, p.cfg.residual_input, cache));
}

Vector project_text_backward(const ProjectionParams& p, const ProjectionCache& cache,
                             const Vector& dnormalized, double eps, ProjectionParams* grad) {
  Matrix d = projection_backward(p.text1, p.text2, cache, one_row(dnormalized), eps,
                                 p.cfg.residual_input, grad != nullptr ? &grad->text1 : nullptr,
                                 grad != nullptr ? &grad->text2 : nullptr);
  return first_row(d);
}

EmbeddingBank build_bank(const std::vector<Candidate>& candidates, const TextEncoderParams& text,
                         const ProjectionParams& proj, double eps) {
  if (candidates.empty()) throw Error("build_bank: need at least one candidate");
  EmbeddingBank bank;
  bank.embeddings = Matrix(static_cast<int>(candidates.size()), proj.cfg.dim);
  for (size_t i = 0; i < candidates.size(); ++i) {
    const Candidate& c = candidates[i];
    Vector e;
    try {
      e = project_text(encode_text(c.tokens, text), proj, eps);
    } catch (const Error& err) {
      throw Error(strformat("build_bank: candidate %zu (%s): %s", i, c.label.c_str(), err.what()));
    }
    auto dst = bank.embeddings.row(static_cast<int>(i));
    for (int c2 = 0; c2 < e.size(); ++c2) dst[c2] = e[c2];
    bank.token_lengths.push_back(static_cast<int>(c.tokens.size()));
    bank.labels.push_back(c.label);
    bank.token_ids.push_back(c.tokens);
  }
  return bank;
}

void save_bank(const EmbeddingBank& bank, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_bank: cannot open " + path);
  json header{{"format_version", 1}, {"kind", "clar-bank"}, {"dim", bank.dim()}, {"count", bank.size()}};
  out << header.dump() << "\n";
  for (int i = 0; i < bank.size(); ++i) {
    std::vector<double> row(bank.embeddings.row(i).begin(), bank.embeddings.row(i).end());
    json rec{{"label", bank.labels[i]}, {"token_ids", bank.token_ids[i]}, {"embedding", row}};
    out << rec.dump() << "\n";
  }
}

namespace {

std::vector<json> read_jsonl(const std::string& path, const char* kind) {
  std::ifstream in(path);
  if (!in) throw Error(strformat("cannot open %s file %s", kind, path.c_str()));
  std::vector<json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    lines.push_back(json::parse(line));
  }
  if (lines.empty()) throw Error(strformat("%s file %s is empty", kind, path.c_str()));
  return lines;
}

}  // namespace

EmbeddingBank load_bank(const std::string& path) {
  std::vector<json> lines = read_jsonl(path, "bank");
  const json& header = lines.front();
  if (header.value("kind", "") != "clar-bank") throw Error("load_bank: " + path + " is not a bank file");
  int dim = header.at("dim").get<int>();
  EmbeddingBank bank;
  bank.embeddings = Matrix(static_cast<int>(lines.size()) - 1, dim);
  for (size_t i = 1; i < lines.size(); ++i) {
    const json& rec = lines[i];
    auto emb = rec.at("embedding").get<std::vector<double>>();
    if (static_cast<int>(emb.size()) != dim) {
      throw Error(strformat("load_bank: row %zu has dim %zu, header says %d", i - 1, emb.size(), dim));
    }
    auto dst = bank.embeddings.row(static_cast<int>(i) - 1);
    for (int c = 0; c < dim; ++c) dst[c] = emb[c];
    bank.labels.push_back(rec.at("label").get<std::string>());
    bank.token_ids.push_back(rec.at("token_ids").get<std::vector<int>>());
    bank.token_lengths.push_back(static_cast<int>(bank.token_ids.back().size()));
  }
  return bank;
}

std::vector<Candidate> load_candidates(const std::string& path) {
  std::vector<json> lines = read_jsonl(path, "candidates");
  std::vector<Candidate> out;
  for (size_t i = 0; i < lines.size(); ++i) {
    const json& rec = lines[i];
    if (rec.contains("kind")) continue;  // header
    out.push_back({rec.at("label").get<std::string>(), rec.at("token_ids").get<std::vector<int>>()});
  }
  if (out.empty()) throw Error("load_candidates: no candidate records in " + path);
  return out;
}

void save_candidates(const std::vector<Candidate>& candidates, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_candidates: cannot open " + path);
  json header{{"format_version", 1}, {"kind", "clar-candidates"}, {"count", candidates.size()}};
  out << header.dump() << "\n";
  for (const Candidate& c : candidates) {
    out << json{{"label", c.label}, {"token_ids", c.tokens}}.dump() << "\n";
  }
}

void save_checkpoint(ModelParams& model, const std::string& path) {
  std::vector<ParamRef> refs;
  collect_params(model, refs);
  json params = json::object();
  for (const ParamRef& r : refs) {
    params[r.name] = json{{"rows", r.rows},
                          {"cols", r.cols},
                          {"data", std::vector<double>(r.data, r.data + r.size)}};
  }
  json out{{"format_version", 1},
           {"kind", "clar-checkpoint"},
           {"model", model_config_to_json(model.cfg)},
           {"params", params}};
  std::ofstream f(path);
  if (!f) throw Error("save_checkpoint: cannot open " + path);
  f << out.dump(2) << "\n";
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_checkpoint: cannot open " + path);
  json j = json::parse(f);
  if (j.value("kind", "") != "clar-checkpoint") {
    throw Error("load_checkpoint: " + path + " is not a checkpoint");
  }
  ModelConfig cfg = model_config_from_json(j.at("model"));
  Rng rng(0);
  ModelParams model = init_model(cfg, rng);
  std::vector<ParamRef> refs;
  collect_params(model, refs);
  const json& params = j.at("params");
  for (ParamRef& r : refs) {
    if (!params.contains(r.name)) throw Error("load_checkpoint: missing tensor " + r.name);
    const json& rec = params.at(r.name);
    auto data = rec.at("data").get<std::vector<double>>();
    if (data.size() != r.size || rec.at("rows").get<int>() != r.rows ||
        rec.at("cols").get<int>() != r.cols) {
      throw Error(strformat("load_checkpoint: tensor %s has shape %dx%d/%zu, expected %dx%d/%zu",
                            r.name.c_str(), rec.at("rows").get<int>(), rec.at("cols").get<int>(),
                            data.size(), r.rows, r.cols, r.size));
    }
    std::copy(data.begin(), data.end(), r.data);
  }
  return model;
}

}  // namespace clar
