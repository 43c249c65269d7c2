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

#include "clar/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

namespace clar {

using nlohmann::json;

RetrievalResult retrieve(const UtteranceRecord& utt, const EmbeddingBank& bank,
                         const ModelParams& params, int topk, ShortUtterancePolicy policy,
                         TailPolicy tail) {
  if (utt.features.rows == 0) {
    throw Error("retrieve: utterance " + utt.id + " has zero frames");
  }
  try {
    Matrix hidden = encode_speech(utt.features, params.speech);
    Vector alpha = predict_weights(hidden, params.cif);
    CifAlignment alignment = accumulate_and_fire(alpha, params.cfg.theta, tail);
    Matrix audio_emb = project_audio(hidden, params.proj, params.cfg.norm_eps);
    SimilarityMatrix sim = similarity(audio_emb, bank, params.tau());
    ScoredCandidates scored = score_all(sim, alignment, bank, policy);
    return rank_topk(scored, bank, topk);
  } catch (const Error& err) {
    throw Error(strformat("retrieve: utterance %s: %s", utt.id.c_str(), err.what()));
  }
}

std::vector<std::vector<Candidate>> benchmark_candidates(const std::vector<UtteranceRecord>& test,
                                                         const SynthConfig& cfg, int bank_size,
                                                         uint64_t seed) {
  if (bank_size < 2) throw Error("benchmark_candidates: bank_size must be >= 2");
  Rng root(seed);
  std::vector<std::vector<Candidate>> out;
  for (size_t u = 0; u < test.size(); ++u) {
    const UtteranceRecord& rec = test[u];
    if (rec.hotwords.size() != 1) {
      throw Error(strformat("benchmark_candidates: utterance %s has %zu hotwords, expected 1",
                            rec.id.c_str(), rec.hotwords.size()));
    }
    Rng rng = root.fork("bank", static_cast<uint64_t>(u));
    int gold_pos = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(bank_size)));
    std::set<std::string> used{rec.hotwords[0].text};
    std::vector<Candidate> bank(bank_size);
    bank[gold_pos] = {rec.hotwords[0].text, rec.hotwords[0].tokens};
    for (int j = 0; j < bank_size; ++j) {
      if (j == gold_pos) continue;
      std::vector<int> tokens;
      std::string label;
      do {
        tokens = random_ngram(cfg, rng);
        label = tokens_to_string(tokens);
      } while (used.count(label) > 0);
      used.insert(label);
      bank[j] = {std::move(label), std::move(tokens)};
    }
    out.push_back(std::move(bank));
  }
  return out;
}

double heldout_recall_at_k(const std::vector<UtteranceRecord>& test,
                           const std::vector<std::vector<Candidate>>& candidates,
                           const ModelParams& params, int k) {
  if (test.size() != candidates.size()) {
    throw Error(strformat("heldout_recall_at_k: %zu utterances but %zu candidate lists",
                          test.size(), candidates.size()));
  }
  if (test.empty()) throw Error("heldout_recall_at_k: empty test set");
  std::vector<char> hit(test.size(), 0);
  parallel_for(static_cast<int>(test.size()), [&](int u) {
    EmbeddingBank bank =
        build_bank(candidates[u], params.text, params.proj, params.cfg.norm_eps);
    RetrievalResult result = retrieve(test[u], bank, params, k);
    for (const RankedEntry& e : result.entries) {
      if (e.label == test[u].hotwords[0].text) {
        hit[u] = 1;
        break;
      }
    }
  });
  int hits = 0;
  for (char h : hit) hits += h;
  return 100.0 * hits / static_cast<double>(test.size());
}

double mean_cif_gap(const std::vector<UtteranceRecord>& test, const ModelParams& params) {
  if (test.empty()) throw Error("mean_cif_gap: empty test set");
  std::vector<double> gaps(test.size(), 0.0);
  parallel_for(static_cast<int>(test.size()), [&](int u) {
    Matrix hidden = encode_speech(test[u].features, params.speech);
    Vector alpha = predict_weights(hidden, params.cif);
    double sum = 0.0;
    for (int t = 0; t < alpha.size(); ++t) sum += alpha[t];
    gaps[u] = std::abs(sum - static_cast<double>(test[u].transcript.size()));
  });
  double total = 0.0;
  for (double g : gaps) total += g;
  return total / static_cast<double>(test.size());
}

EvalReport evaluate_results(const std::vector<UtteranceRecord>& data,
                            const std::map<std::string, RetrievalResult>& results,
                            const std::vector<std::string>& bank_labels,
                            const std::map<std::string, std::string>* hyps) {
  if (data.empty()) throw Error("evaluate_results: empty dataset");

  std::vector<const UtteranceRecord*> ordered;
  for (const UtteranceRecord& rec : data) ordered.push_back(&rec);
  std::sort(ordered.begin(), ordered.end(),
            [](const UtteranceRecord* a, const UtteranceRecord* b) { return a->id < b->id; });

  EvalReport report;
  std::vector<RetrievalResult> rankings;
  std::vector<std::string> gold;
  std::vector<std::vector<std::string>> banks;
  long long err_total = 0, len_total = 0;
  long long biased_err = 0, biased_len = 0, unbiased_err = 0, unbiased_len = 0;
  bool have_hyps = false;

  for (const UtteranceRecord* rec : ordered) {
    auto it = results.find(rec->id);
    if (it == results.end()) {
      throw Error("evaluate_results: no retrieval result for utterance " + rec->id);
    }
    std::optional<double> utt_cer, utt_bwer, utt_ucer;
    if (hyps != nullptr) {
      auto hit = hyps->find(rec->id);
      if (hit != hyps->end()) {
        have_hyps = true;
        std::vector<uint32_t> r = utf8_decode(rec->text);
        std::vector<uint32_t> h = utf8_decode(hit->second);
        int dist = edit_distance(r, h);
        err_total += dist;
        len_total += static_cast<long long>(r.size());
        utt_cer = 100.0 * dist / static_cast<double>(r.size());

        std::vector<std::string> bias;
        for (const HotwordAnnotation& hw : rec->hotwords) bias.push_back(hw.text);
        BiasedMetrics bm = biased_metrics(hit->second, rec->text, bias);
        biased_err += bm.biased_errors;
        biased_len += bm.biased_length;
        unbiased_err += bm.unbiased_errors;
        unbiased_len += bm.unbiased_length;
        utt_bwer = bm.b_wer;
        utt_ucer = bm.u_cer;
      }
    }

    for (const HotwordAnnotation& hw : rec->hotwords) {
      UtteranceEval ue;
      ue.id = rec->id;
      ue.gold = hw.text;
      const auto& entries = it->second.entries;
      for (size_t e = 0; e < entries.size(); ++e) {
        if (entries[e].label == hw.text) {
          ue.gold_rank = static_cast<int>(e) + 1;
          break;
        }
      }
      ue.cer = utt_cer;
      ue.b_wer = utt_bwer;
      ue.u_cer = utt_ucer;
      report.utterances.push_back(std::move(ue));
      rankings.push_back(it->second);
      gold.push_back(hw.text);
      banks.push_back(bank_labels);
    }
  }

  report.recall_at_1 = recall_at_k(rankings, gold, banks, 1);
  report.recall_at_5 = recall_at_k(rankings, gold, banks, 5);
  report.recall_at_10 = recall_at_k(rankings, gold, banks, 10);
  report.f1 = f1_score(rankings, gold);
  if (have_hyps && len_total > 0) {
    report.cer = 100.0 * err_total / static_cast<double>(len_total);
    if (biased_len > 0) report.b_wer = 100.0 * biased_err / static_cast<double>(biased_len);
    if (unbiased_len > 0) report.u_cer = 100.0 * unbiased_err / static_cast<double>(unbiased_len);
  }
  return report;
}

namespace {

json opt_to_json(const std::optional<double>& v) {
  if (v.has_value()) return *v;
  return nullptr;
}

}  // namespace

json eval_report_to_json(const EvalReport& report) {
  json utts = json::array();
  for (const UtteranceEval& ue : report.utterances) {
    utts.push_back({{"id", ue.id},
                    {"gold", ue.gold},
                    {"gold_rank", ue.gold_rank},
                    {"cer", opt_to_json(ue.cer)},
                    {"b_wer", opt_to_json(ue.b_wer)},
                    {"u_cer", opt_to_json(ue.u_cer)}});
  }
  return json{{"format_version", 1},
              {"kind", "clar-eval-report"},
              {"recall_at_1", report.recall_at_1},
              {"recall_at_5", report.recall_at_5},
              {"recall_at_10", report.recall_at_10},
              {"f1", report.f1},
              {"cer", opt_to_json(report.cer)},
              {"b_wer", opt_to_json(report.b_wer)},
              {"u_cer", opt_to_json(report.u_cer)},
              {"utterances", utts}};
}

std::string eval_report_table(const EvalReport& report) {
  auto line = [](const char* name, const std::optional<double>& v) {
    return v.has_value() ? strformat("%-10s %8.2f\n", name, *v)
                         : strformat("%-10s %8s\n", name, "absent");
  };
  std::string out;
  out += line("recall@1", report.recall_at_1);
  out += line("recall@5", report.recall_at_5);
  out += line("recall@10", report.recall_at_10);
  out += line("f1", report.f1);
  out += line("cer", report.cer);
  out += line("b-wer", report.b_wer);
  out += line("u-cer", report.u_cer);
  return out;
}

PromptArtifact emit_prompt(const std::string& utterance_id, const RetrievalResult& result,
                           const std::string& template_str) {
  static const std::string kPlaceholder = "{hotwords}";
  if (template_str.find(kPlaceholder) == std::string::npos) {
    throw Error("emit_prompt: template has no {hotwords} placeholder");
  }
  PromptArtifact artifact;
  artifact.utterance_id = utterance_id;
  std::string joined;
  for (const RankedEntry& e : result.entries) {
    if (!joined.empty()) joined += ", ";
    joined += e.label;
    artifact.hotwords.push_back(e.label);
  }
  artifact.prompt = template_str;
  size_t pos = 0;
  while ((pos = artifact.prompt.find(kPlaceholder, pos)) != std::string::npos) {
    artifact.prompt.replace(pos, kPlaceholder.size(), joined);
    pos += joined.size();
  }
  return artifact;
}

void save_results(const std::vector<std::pair<std::string, RetrievalResult>>& results,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_results: cannot open " + path);
  json header{{"format_version", 1}, {"kind", "clar-results"}, {"count", results.size()}};
  out << header.dump() << "\n";
  for (const auto& [id, result] : results) {
    json ranked = json::array();
    for (const RankedEntry& e : result.entries) {
      ranked.push_back({{"label", e.label}, {"score", e.score}});
    }
    out << json{{"id", id}, {"ranked", ranked}}.dump() << "\n";
  }
}

std::map<std::string, RetrievalResult> load_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_results: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("load_results: " + path + " is empty");
  if (json::parse(line).value("kind", "") != "clar-results") {
    throw Error("load_results: " + path + " is not a results file");
  }
  std::map<std::string, RetrievalResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    RetrievalResult result;
    int index = 0;
    for (const json& e : rec.at("ranked")) {
      result.entries.push_back(
          {index++, e.at("label").get<std::string>(), e.at("score").get<double>()});
    }
    std::string id = rec.at("id").get<std::string>();
    if (!out.emplace(id, std::move(result)).second) {
      throw Error("load_results: duplicate utterance id " + id);
    }
  }
  return out;
}

int thread_cap() {
  const char* env = std::getenv("CLAR_THREADS");
  if (env != nullptr && *env != '\0') {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == nullptr || *end != '\0' || v < 1) {
      throw Error(strformat("CLAR_THREADS must be a positive integer, got \"%s\"", env));
    }
    return static_cast<int>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = std::min(n, thread_cap());
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);  // lowest index wins, deterministically
  }
}

}  // namespace clar
