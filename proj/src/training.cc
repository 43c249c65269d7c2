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

#include "clar/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <tuple>
#include <unordered_map>

namespace clar {

using nlohmann::json;

std::vector<TrainItem> make_train_items(const std::vector<UtteranceRecord>& records) {
  std::vector<TrainItem> items;
  for (const UtteranceRecord& rec : records) {
    if (rec.hotwords.empty()) {
      throw Error("make_train_items: utterance " + rec.id + " has no hotword annotation");
    }
    for (size_t h = 0; h < rec.hotwords.size(); ++h) {
      const HotwordAnnotation& hw = rec.hotwords[h];
      TrainItem item;
      item.id = rec.hotwords.size() == 1 ? rec.id : strformat("%s#%zu", rec.id.c_str(), h);
      item.features = rec.features;
      item.transcript = rec.transcript;
      item.transcript_text = rec.text;
      item.hotword_tokens = hw.tokens;
      item.hotword_text = hw.text;
      item.hotword_start = hw.start;
      item.hotword_length = hw.length;
      items.push_back(std::move(item));
    }
  }
  return items;
}

TrainState make_train_state(const ModelConfig& cfg, Rng& rng) {
  TrainState state;
  state.params = init_model(cfg, rng);
  state.adam_m = zeros_like(state.params);
  state.adam_v = zeros_like(state.params);
  return state;
}

// In-batch soft targets: identity split uniformly across items that carry
// an identical key string, so duplicates are never treated as negatives.
Matrix identity_targets(const std::vector<std::string>& keys) {
  int b = static_cast<int>(keys.size());
  std::map<std::string, int> count;
  for (const std::string& k : keys) count[k] += 1;
  Matrix y(b, b);
  for (int i = 0; i < b; ++i) {
    double mass = 1.0 / count[keys[i]];
    for (int j = 0; j < b; ++j) {
      if (keys[i] == keys[j]) y.at(i, j) = mass;
    }
  }
  return y;
}

namespace {

Matrix one_row(const Vector& v) {
  Matrix m(1, v.size());
  for (int c = 0; c < v.size(); ++c) m.at(0, c) = v[c];
  return m;
}

struct ContrastiveCache {
  Matrix logits;
  Matrix p_row;  // softmax over candidates for each audio row
  Matrix p_col;  // softmax over audio rows for each candidate
  Matrix y;
};

// Symmetric InfoNCE over unit-norm rows: the average of the audio-to-text
// and text-to-audio cross-entropies against the identity targets.
double symmetric_contrastive_cached(const Matrix& audio, const Matrix& text, double tau,
                                    const std::vector<std::string>& keys,
                                    ContrastiveCache* cache) {
  int b = audio.rows;
  Matrix logits(b, b);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      logits.at(i, j) = tau * dot(audio.row(i), text.row(j));
    }
  }
  Matrix y = identity_targets(keys);

  Matrix p_row(b, b), p_col(b, b);
  std::vector<double> lse_row(b), lse_col(b);
  for (int i = 0; i < b; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < b; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < b; ++j) sum += std::exp(logits.at(i, j) - mx);
    lse_row[i] = mx + std::log(sum);
    for (int j = 0; j < b; ++j) p_row.at(i, j) = std::exp(logits.at(i, j) - lse_row[i]);
  }
  for (int j = 0; j < b; ++j) {
    double mx = logits.at(0, j);
    for (int i = 1; i < b; ++i) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (int i = 0; i < b; ++i) sum += std::exp(logits.at(i, j) - mx);
    lse_col[j] = mx + std::log(sum);
    for (int i = 0; i < b; ++i) p_col.at(i, j) = std::exp(logits.at(i, j) - lse_col[j]);
  }

  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      double yij = y.at(i, j);
      if (yij == 0.0) continue;
      double log_p = logits.at(i, j) - lse_row[i];
      double log_q = logits.at(i, j) - lse_col[j];
      loss -= yij * (log_p + log_q);
    }
  }
  loss /= 2.0 * b;

  if (cache != nullptr) {
    cache->logits = std::move(logits);
    cache->p_row = std::move(p_row);
    cache->p_col = std::move(p_col);
    cache->y = std::move(y);
  }
  return loss;
}

// dL/dlogits scaled by `weight`; accumulates into daudio, dtext, dlog_tau.
void symmetric_contrastive_backward(const ContrastiveCache& c, const Matrix& audio,
                                    const Matrix& text, double tau, double weight, Matrix* daudio,
                                    Matrix* dtext, double* dlog_tau) {
  int b = audio.rows;
  double inv = weight / (2.0 * b);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      double dl = inv * (c.p_row.at(i, j) + c.p_col.at(i, j) - 2.0 * c.y.at(i, j));
      *dlog_tau += dl * c.logits.at(i, j);  // logits are linear in tau = e^{log_tau}
      auto tr = text.row(j);
      auto dar = daudio->row(i);
      for (int d = 0; d < audio.cols; ++d) dar[d] += dl * tau * tr[d];
      auto ar = audio.row(i);
      auto dtr = dtext->row(j);
      for (int d = 0; d < audio.cols; ++d) dtr[d] += dl * tau * ar[d];
    }
  }
}

// Everything remembered about one item's forward pass.
struct ItemForward {
  SpeechEncoderCache enc_cache;
  Matrix hidden;
  CifPredictorCache cif_cache;
  Vector alpha;
  double alpha_sum = 0.0;
  // local branch
  ProjectionCache audio_proj_cache;
  Matrix audio_emb;          // per-frame projected rows
  Matrix span_pooled;        // 1 x D; used directly, no re-normalization
  int span_begin = 0, span_end = 0;
  TextEncoderCache hot_text_cache;
  ProjectionCache hot_proj_cache;
  // global branch
  int frame_count = 0;
  ProjectionCache gaudio_proj_cache;
  TextEncoderCache full_text_cache;
  ProjectionCache full_proj_cache;
};

// The teacher-forced frame range of the hotword: weights are scaled so the
// fire count matches the transcript length, then the hotword's transcript
// positions select spans. When the alignment under-fires, the span is
// clamped to the emitted tokens; a hotword whose start lies beyond them has
// no frames at all, which is an error.
void locate_hotword_frames(const TrainItem& item, const CifAlignment& alignment, int* begin,
                           int* end) {
  int k = alignment.token_count();
  if (item.hotword_start >= k) {
    throw Error(strformat(
        "hotword span of utterance %s maps to zero frames (starts at token %d, %d tokens emitted)",
        item.id.c_str(), item.hotword_start, k));
  }
  int last = std::min(item.hotword_start + item.hotword_length - 1, k - 1);
  *begin = alignment.spans[item.hotword_start].begin;
  *end = alignment.spans[last].end;
}

LossReport evaluate_losses(const std::vector<TrainItem>& batch, const ModelParams& params,
                           const LossWeights& w, bool compute_all, ModelParams* grads) {
  int b = static_cast<int>(batch.size());
  if (b < 2) throw Error(strformat("contrastive batch needs >= 2 items, got %d", b));
  bool need_local = compute_all || w.local != 0.0;
  bool need_global = compute_all || w.global != 0.0;
  bool need_cif = compute_all || w.cif != 0.0;
  bool need_alpha = need_cif || need_local;
  bool backward = grads != nullptr;
  double eps = params.cfg.norm_eps;
  double tau = params.tau();

  std::vector<ItemForward> fw(b);
  int dim = params.cfg.proj.dim;
  Matrix local_audio(b, dim), local_text(b, dim);
  Matrix global_audio(b, dim), global_text(b, dim);
  std::vector<std::string> local_keys(b), global_keys(b);
  double cif_sum = 0.0;

  for (int i = 0; i < b; ++i) {
    const TrainItem& item = batch[i];
    ItemForward& f = fw[i];
    try {
      f.hidden = encode_speech_cached(item.features, params.speech,
                                      backward ? &f.enc_cache : nullptr);
      f.frame_count = f.hidden.rows;
      int n = static_cast<int>(item.transcript.size());

      if (need_alpha) {
        f.alpha = predict_weights_cached(f.hidden, params.cif, backward ? &f.cif_cache : nullptr);
        for (int t = 0; t < f.alpha.size(); ++t) f.alpha_sum += f.alpha[t];
      }
      if (need_cif) cif_sum += std::abs(f.alpha_sum - n);

      if (need_local) {
        // Boundaries come from the discrete fire positions; no gradient
        // flows through the window selection.
        Vector scaled = scale_weights_to_length(f.alpha, n);
        CifAlignment alignment =
            accumulate_and_fire(scaled, params.cfg.theta, TailPolicy::kFireIfResidualGeHalf);
        locate_hotword_frames(item, alignment, &f.span_begin, &f.span_end);
        f.audio_emb = project_audio_cached(f.hidden, params.proj, eps,
                                           backward ? &f.audio_proj_cache : nullptr);
        f.span_pooled = Matrix(1, dim);
        for (int t = f.span_begin; t <= f.span_end; ++t) {
          auto row = f.audio_emb.row(t);
          for (int c = 0; c < dim; ++c) f.span_pooled.at(0, c) += row[c];
        }
        int count = f.span_end - f.span_begin + 1;
        for (int c = 0; c < dim; ++c) f.span_pooled.at(0, c) /= count;
        // The pooled vector enters the logits as-is: tau * a_i . e_j is then
        // the mean per-frame similarity of the span, the same quantity the
        // localized matcher maximizes over windows at inference.
        for (int c = 0; c < dim; ++c) local_audio.at(i, c) = f.span_pooled.at(0, c);

        Vector pooled = encode_text_cached(item.hotword_tokens, params.text,
                                           backward ? &f.hot_text_cache : nullptr);
        Vector e = project_text_cached(pooled, params.proj, eps,
                                       backward ? &f.hot_proj_cache : nullptr);
        for (int c = 0; c < dim; ++c) local_text.at(i, c) = e[c];
        local_keys[i] = item.hotword_text;
      }

      if (need_global) {
        Vector hpool = masked_mean_pool(f.hidden, f.hidden.rows);
        Matrix g = project_audio_cached(one_row(hpool), params.proj, eps,
                                        backward ? &f.gaudio_proj_cache : nullptr);
        for (int c = 0; c < dim; ++c) global_audio.at(i, c) = g.at(0, c);

        Vector pooled = encode_text_cached(item.transcript, params.text,
                                           backward ? &f.full_text_cache : nullptr);
        Vector z = project_text_cached(pooled, params.proj, eps,
                                       backward ? &f.full_proj_cache : nullptr);
        for (int c = 0; c < dim; ++c) global_text.at(i, c) = z[c];
        global_keys[i] = item.transcript_text;
      }
    } catch (const Error& err) {
      throw Error(strformat("loss on item %s: %s", item.id.c_str(), err.what()));
    }
  }

  LossReport report;
  report.weights = w;
  ContrastiveCache local_cache, global_cache;
  if (need_local) {
    report.local = symmetric_contrastive_cached(local_audio, local_text, tau, local_keys,
                                                backward ? &local_cache : nullptr);
  }
  if (need_global) {
    report.global = symmetric_contrastive_cached(global_audio, global_text, tau, global_keys,
                                                 backward ? &global_cache : nullptr);
  }
  if (need_cif) report.cif = cif_sum / b;
  report.total = w.local * report.local + w.global * report.global + w.cif * report.cif;

  if (!backward) return report;

  Matrix d_local_audio(b, dim), d_local_text(b, dim);
  Matrix d_global_audio(b, dim), d_global_text(b, dim);
  if (w.local != 0.0) {
    symmetric_contrastive_backward(local_cache, local_audio, local_text, tau, w.local,
                                   &d_local_audio, &d_local_text, &grads->log_tau);
  }
  if (w.global != 0.0) {
    symmetric_contrastive_backward(global_cache, global_audio, global_text, tau, w.global,
                                   &d_global_audio, &d_global_text, &grads->log_tau);
  }

  for (int i = 0; i < b; ++i) {
    const TrainItem& item = batch[i];
    ItemForward& f = fw[i];
    Matrix dhidden(f.hidden.rows, f.hidden.cols);

    if (w.local != 0.0) {
      Matrix dpooled(1, dim);
      for (int c = 0; c < dim; ++c) dpooled.at(0, c) = d_local_audio.at(i, c);
      Matrix daudio_emb(f.audio_emb.rows, f.audio_emb.cols);
      int count = f.span_end - f.span_begin + 1;
      for (int t = f.span_begin; t <= f.span_end; ++t) {
        auto row = daudio_emb.row(t);
        for (int c = 0; c < dim; ++c) row[c] = dpooled.at(0, c) / count;
      }
      Matrix dh = project_audio_backward(params.proj, f.audio_proj_cache, daudio_emb, eps,
                                         &grads->proj);
      for (size_t x = 0; x < dhidden.data.size(); ++x) dhidden.data[x] += dh.data[x];

      Vector de(dim);
      for (int c = 0; c < dim; ++c) de[c] = d_local_text.at(i, c);
      Vector dtext_pool = project_text_backward(params.proj, f.hot_proj_cache, de, eps,
                                                &grads->proj);
      encode_text_backward(params.text, f.hot_text_cache, dtext_pool, &grads->text);
    }

    if (w.global != 0.0) {
      Matrix dg(1, dim);
      for (int c = 0; c < dim; ++c) dg.at(0, c) = d_global_audio.at(i, c);
      Matrix dhpool = project_audio_backward(params.proj, f.gaudio_proj_cache, dg, eps,
                                             &grads->proj);
      for (int t = 0; t < dhidden.rows; ++t) {
        auto row = dhidden.row(t);
        for (int c = 0; c < dhidden.cols; ++c) row[c] += dhpool.at(0, c) / f.frame_count;
      }

      Vector dz(dim);
      for (int c = 0; c < dim; ++c) dz[c] = d_global_text.at(i, c);
      Vector dtext_pool = project_text_backward(params.proj, f.full_proj_cache, dz, eps,
                                                &grads->proj);
      encode_text_backward(params.text, f.full_text_cache, dtext_pool, &grads->text);
    }

    if (w.cif != 0.0) {
      double gap = f.alpha_sum - static_cast<double>(item.transcript.size());
      double sign = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
      double dsum = w.cif * sign / b;
      Vector dalpha(f.alpha.size(), dsum);
      Matrix dh = predict_weights_backward(f.hidden, params.cif, f.cif_cache, dalpha, &grads->cif);
      for (size_t x = 0; x < dhidden.data.size(); ++x) dhidden.data[x] += dh.data[x];
    }

    encode_speech_backward(params.speech, f.enc_cache, dhidden, &grads->speech);
  }
  return report;
}

}  // namespace

double symmetric_contrastive(const Matrix& audio, const Matrix& text, double tau,
                             const std::vector<std::string>& keys) {
  return symmetric_contrastive_cached(audio, text, tau, keys, nullptr);
}

LossReport loss_total(const std::vector<TrainItem>& batch, TrainState& state,
                      const LossWeights& weights, ModelParams* grads, bool compute_all) {
  LossWeights effective = weights;
  if (state.stage == Stage::kCifPretrain) {
    effective.local = 0.0;
    effective.global = 0.0;
  }
  return evaluate_losses(batch, state.params, effective, compute_all, grads);
}

double loss_local(const std::vector<TrainItem>& batch, TrainState& state, ModelParams* grads) {
  return evaluate_losses(batch, state.params, {1.0, 0.0, 0.0}, false, grads).local;
}

double loss_global(const std::vector<TrainItem>& batch, TrainState& state, ModelParams* grads) {
  return evaluate_losses(batch, state.params, {0.0, 1.0, 0.0}, false, grads).global;
}

double loss_cif(const std::vector<TrainItem>& batch, TrainState& state, ModelParams* grads) {
  return evaluate_losses(batch, state.params, {0.0, 0.0, 1.0}, false, grads).cif;
}

namespace {

bool in_scope(const std::string& name, TrainScope scope) {
  return scope == TrainScope::kAll || name.rfind("cif.", 0) == 0;
}

void zero_params(ModelParams& p) {
  std::vector<ParamRef> refs;
  collect_params(p, refs);
  for (ParamRef& r : refs) std::fill(r.data, r.data + r.size, 0.0);
}

}  // namespace

void optimizer_step(TrainState& state, ModelParams& grads, double lr, TrainScope scope,
                    double beta1, double beta2, double eps, double weight_decay) {
  std::vector<ParamRef> p, m, v, g;
  collect_params(state.params, p);
  collect_params(state.adam_m, m);
  collect_params(state.adam_v, v);
  collect_params(grads, g);

  for (size_t i = 0; i < g.size(); ++i) {
    for (size_t k = 0; k < g[i].size; ++k) {
      if (std::isnan(g[i].data[k])) {
        throw Error(strformat("optimizer_step: NaN gradient in %s[%zu]", g[i].name.c_str(), k));
      }
    }
  }

  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < p.size(); ++i) {
    if (!in_scope(p[i].name, scope)) continue;
    // Decay is decoupled from the adaptive step and skips the logit scale:
    // shrinking log_tau would drift the temperature rather than the fit.
    double wd = p[i].name == "log_tau" ? 0.0 : weight_decay;
    for (size_t k = 0; k < p[i].size; ++k) {
      double grad = g[i].data[k];
      double& mk = m[i].data[k];
      double& vk = v[i].data[k];
      mk = beta1 * mk + (1.0 - beta1) * grad;
      vk = beta2 * vk + (1.0 - beta2) * grad * grad;
      p[i].data[k] -= lr * ((mk / bc1) / (std::sqrt(vk / bc2) + eps) + wd * p[i].data[k]);
    }
  }
}

GradCheckResult grad_check(TrainState& state, const std::vector<TrainItem>& batch,
                           const LossWeights& weights,
                           const std::vector<std::string>& param_prefixes, int coords_per_group,
                           double epsilon, double denom_floor, Rng& rng) {
  if (epsilon < 1e-6 || epsilon > 1e-3) {
    throw Error(strformat("grad_check: epsilon %g outside [1e-6, 1e-3]", epsilon));
  }
  ModelParams grads = zeros_like(state.params);
  loss_total(batch, state, weights, &grads, /*compute_all=*/false);

  std::vector<ParamRef> prefs, grefs;
  collect_params(state.params, prefs);
  collect_params(grads, grefs);

  GradCheckResult result;
  for (size_t i = 0; i < prefs.size(); ++i) {
    if (!param_prefixes.empty()) {
      bool matched = false;
      for (const std::string& pre : param_prefixes) {
        if (prefs[i].name.rfind(pre, 0) == 0) {
          matched = true;
          break;
        }
      }
      if (!matched) continue;
    }
    std::vector<size_t> coords;
    if (static_cast<size_t>(coords_per_group) >= prefs[i].size) {
      coords.resize(prefs[i].size);
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      std::set<size_t> picked;
      while (picked.size() < static_cast<size_t>(coords_per_group)) {
        picked.insert(rng.uniform_int(prefs[i].size));
      }
      coords.assign(picked.begin(), picked.end());
    }
    for (size_t idx : coords) {
      double orig = prefs[i].data[idx];
      prefs[i].data[idx] = orig + epsilon;
      double f_plus = loss_total(batch, state, weights, nullptr, false).total;
      prefs[i].data[idx] = orig - epsilon;
      double f_minus = loss_total(batch, state, weights, nullptr, false).total;
      prefs[i].data[idx] = orig;
      double fd = (f_plus - f_minus) / (2.0 * epsilon);
      double analytic = grefs[i].data[idx];
      double rel = std::abs(fd - analytic) / std::max(std::abs(fd) + std::abs(analytic), denom_floor);
      result.coords_checked += 1;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = prefs[i].name;
        result.worst_index = idx;
        result.worst_analytic = analytic;
        result.worst_fd = fd;
      }
    }
  }
  return result;
}

namespace {

LossWeights weights_from_json(const json& j, LossWeights fallback) {
  LossWeights w = fallback;
  if (j.contains("local")) w.local = j.at("local").get<double>();
  if (j.contains("global")) w.global = j.at("global").get<double>();
  if (j.contains("cif")) w.cif = j.at("cif").get<double>();
  return w;
}

StageConfig stage_from_json(const json& j, StageConfig fallback) {
  StageConfig s = fallback;
  if (j.contains("epochs")) s.epochs = j.at("epochs").get<int>();
  if (j.contains("lr")) s.lr = j.at("lr").get<double>();
  if (j.contains("lr_decay")) s.lr_decay = j.at("lr_decay").get<double>();
  if (j.contains("weights")) s.weights = weights_from_json(j.at("weights"), s.weights);
  if (j.contains("scope")) {
    std::string scope = j.at("scope").get<std::string>();
    if (scope == "cif_only") {
      s.scope = TrainScope::kCifOnly;
    } else if (scope == "all") {
      s.scope = TrainScope::kAll;
    } else {
      throw Error("train config: unknown scope \"" + scope + "\" (want cif_only or all)");
    }
  }
  return s;
}

json stage_to_json(const StageConfig& s) {
  return json{{"epochs", s.epochs},
              {"lr", s.lr},
              {"lr_decay", s.lr_decay},
              {"weights", {{"local", s.weights.local}, {"global", s.weights.global}, {"cif", s.weights.cif}}},
              {"scope", s.scope == TrainScope::kCifOnly ? "cif_only" : "all"}};
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("feature_jitter")) cfg.feature_jitter = j.at("feature_jitter").get<double>();
  if (j.contains("max_tau")) cfg.max_tau = j.at("max_tau").get<double>();
  if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("span_resample_min")) cfg.span_resample_min = j.at("span_resample_min").get<int>();
  if (j.contains("span_resample_max")) cfg.span_resample_max = j.at("span_resample_max").get<int>();
  if (j.contains("hard_pair_every")) cfg.hard_pair_every = j.at("hard_pair_every").get<int>();
  if (j.contains("hard_pair_count")) cfg.hard_pair_count = j.at("hard_pair_count").get<int>();
  if (j.contains("hard_pair_items")) cfg.hard_pair_items = j.at("hard_pair_items").get<int>();
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("stage1")) cfg.stage1 = stage_from_json(j.at("stage1"), cfg.stage1);
  if (j.contains("stage2")) cfg.stage2 = stage_from_json(j.at("stage2"), cfg.stage2);
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"seed", cfg.seed},
              {"batch_size", cfg.batch_size},
              {"feature_jitter", cfg.feature_jitter},
              {"max_tau", cfg.max_tau},
              {"weight_decay", cfg.weight_decay},
              {"span_resample_min", cfg.span_resample_min},
              {"span_resample_max", cfg.span_resample_max},
              {"hard_pair_every", cfg.hard_pair_every},
              {"hard_pair_count", cfg.hard_pair_count},
              {"hard_pair_items", cfg.hard_pair_items},
              {"model", model_config_to_json(cfg.model)},
              {"stage1", stage_to_json(cfg.stage1)},
              {"stage2", stage_to_json(cfg.stage2)}};
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_trace_csv: cannot open " + path);
  out << "epoch,l_local,l_global,l_cif,total,recall@1\n";
  for (const TraceRow& r : trace) {
    out << strformat("%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.l_local, r.l_global, r.l_cif,
                     r.total, r.recall_at_1);
  }
}

TrainState train(const TrainConfig& cfg, const std::vector<TrainItem>& items,
                 std::vector<TraceRow>* trace,
                 const std::function<double(const ModelParams&)>& eval_recall) {
  if (items.empty()) throw Error("train: dataset is empty");
  if (cfg.batch_size < 2) throw Error("train: batch_size must be >= 2");
  if (cfg.span_resample_min > 0 && cfg.span_resample_max < cfg.span_resample_min) {
    throw Error("train: span_resample_max must be >= span_resample_min");
  }

  Rng root(cfg.seed);
  Rng init_rng = root.fork("init");
  TrainState state = make_train_state(cfg.model, init_rng);
  Rng order_rng = root.fork("order");
  Rng jitter_rng = root.fork("jitter");
  Rng mine_rng = root.fork("mine");

  // Token occurrences across the corpus, for hard-pair batches.
  std::vector<std::vector<std::pair<int, int>>> occurrences(cfg.model.text.vocab_size);
  for (size_t x = 0; x < items.size(); ++x) {
    for (size_t pos = 0; pos < items[x].transcript.size(); ++pos) {
      int tok = items[x].transcript[pos];
      if (tok >= 0 && tok < static_cast<int>(occurrences.size())) {
        occurrences[tok].push_back({static_cast<int>(x), static_cast<int>(pos)});
      }
    }
  }

  ModelParams grads = zeros_like(state.params);
  int global_epoch = 0;
  auto run_stage = [&](const StageConfig& sc, Stage stage_id) {
    state.stage = stage_id;
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
      // Shuffle whole utterances, keeping a multi-hotword utterance's items
      // adjacent: spans of the same audio then meet as in-batch negatives,
      // which penalizes high-scoring windows away from the annotated span.
      std::vector<std::string> ids;
      std::unordered_map<std::string, std::vector<int>> by_utterance;
      for (size_t x = 0; x < items.size(); ++x) {
        auto [it, inserted] = by_utterance.try_emplace(items[x].id);
        if (inserted) ids.push_back(items[x].id);
        it->second.push_back(static_cast<int>(x));
      }
      order_rng.shuffle(ids);
      std::vector<int> order;
      order.reserve(items.size());
      for (const std::string& id : ids)
        order.insert(order.end(), by_utterance[id].begin(), by_utterance[id].end());

      double sum_local = 0.0, sum_global = 0.0, sum_cif = 0.0, sum_total = 0.0;
      int batches = 0;
      for (size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
        size_t stop = std::min(order.size(), start + cfg.batch_size);
        if (stop - start < 2) break;  // drop a 1-item tail
        std::vector<TrainItem> batch;
        for (size_t x = start; x < stop; ++x) batch.push_back(items[order[x]]);
        if (cfg.span_resample_min > 0) {
          for (TrainItem& it : batch) {
            int t = static_cast<int>(it.transcript.size());
            int len = static_cast<int>(
                jitter_rng.uniform_range(cfg.span_resample_min, cfg.span_resample_max));
            len = std::min(len, t);
            it.hotword_length = len;
            it.hotword_start = static_cast<int>(jitter_rng.uniform_range(0, t - len));
            it.hotword_tokens.assign(it.transcript.begin() + it.hotword_start,
                                     it.transcript.begin() + it.hotword_start + len);
            it.hotword_text = tokens_to_string(it.hotword_tokens);
          }
        }
        if (cfg.feature_jitter > 0.0) {
          for (TrainItem& it : batch)
            for (double& v : it.features.data) v += jitter_rng.normal(0.0, cfg.feature_jitter);
        }
        zero_params(grads);
        LossReport rep = loss_total(batch, state, sc.weights, &grads, /*compute_all=*/true);
        optimizer_step(state, grads, sc.lr * std::pow(sc.lr_decay, epoch), sc.scope, 0.9, 0.999,
                       1e-8, cfg.weight_decay);
        if (cfg.max_tau > 0.0) {
          state.params.log_tau = std::min(state.params.log_tau, std::log(cfg.max_tau));
        }
        sum_local += rep.local;
        sum_global += rep.global;
        sum_cif += rep.cif;
        sum_total += rep.total;
        batches += 1;
      }
      if (batches == 0) throw Error("train: no full batch could be formed");

      if (cfg.hard_pair_every > 0 && epoch % cfg.hard_pair_every == 0) {
        // Embed the vocabulary and mine the most similar token pairs.
        int vocab = cfg.model.text.vocab_size;
        Matrix toks(vocab, cfg.model.proj.dim);
        for (int v = 0; v < vocab; ++v) {
          Vector e = project_text(encode_text({v}, state.params.text), state.params.proj);
          for (int c = 0; c < toks.cols; ++c) toks.at(v, c) = e[c];
        }
        std::vector<std::tuple<double, int, int>> pairs;
        for (int a = 0; a < vocab; ++a) {
          if (occurrences[a].size() < 2) continue;
          for (int b = a + 1; b < vocab; ++b) {
            if (occurrences[b].size() < 2) continue;
            double dot = 0.0;
            for (int c = 0; c < toks.cols; ++c) dot += toks.at(a, c) * toks.at(b, c);
            pairs.push_back({std::abs(dot), a, b});
          }
        }
        std::sort(pairs.rbegin(), pairs.rend());
        int rounds = std::min<int>(cfg.hard_pair_count, static_cast<int>(pairs.size()));
        for (int k = 0; k < rounds; ++k) {
          auto [cos_ab, a, b] = pairs[k];
          std::vector<TrainItem> batch;
          for (int tok : {a, b}) {
            const auto& occ = occurrences[tok];
            for (int n = 0; n < cfg.hard_pair_items; ++n) {
              auto [x, pos] = occ[mine_rng.uniform_int(occ.size())];
              TrainItem it = items[x];
              it.hotword_start = pos;
              it.hotword_length = 1;
              it.hotword_tokens = {tok};
              it.hotword_text = tokens_to_string(it.hotword_tokens);
              batch.push_back(std::move(it));
            }
          }
          if (cfg.feature_jitter > 0.0) {
            for (TrainItem& it : batch)
              for (double& v : it.features.data) v += mine_rng.normal(0.0, cfg.feature_jitter);
          }
          zero_params(grads);
          loss_total(batch, state, sc.weights, &grads, /*compute_all=*/false);
          optimizer_step(state, grads, sc.lr * std::pow(sc.lr_decay, epoch), sc.scope, 0.9, 0.999,
                         1e-8, cfg.weight_decay);
          if (cfg.max_tau > 0.0) {
            state.params.log_tau = std::min(state.params.log_tau, std::log(cfg.max_tau));
          }
        }
      }

      if (trace != nullptr) {
        TraceRow row;
        row.epoch = global_epoch;
        row.l_local = sum_local / batches;
        row.l_global = sum_global / batches;
        row.l_cif = sum_cif / batches;
        row.total = sum_total / batches;
        row.recall_at_1 =
            eval_recall ? eval_recall(state.params) : std::numeric_limits<double>::quiet_NaN();
        trace->push_back(row);
      }
      global_epoch += 1;
    }
  };

  run_stage(cfg.stage1, Stage::kCifPretrain);
  run_stage(cfg.stage2, Stage::kJoint);
  return state;
}

}  // namespace clar
