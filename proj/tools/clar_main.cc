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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "clar/pipeline.h"

namespace {

using nlohmann::json;
using namespace clar;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return json::parse(in);
}

ShortUtterancePolicy parse_policy(const std::string& s) {
  if (s == "full_window") return ShortUtterancePolicy::kFullWindow;
  if (s == "skip") return ShortUtterancePolicy::kSkip;
  throw Error("--policy must be full_window or skip, got " + s);
}

TailPolicy parse_tail(const std::string& s) {
  if (s == "drop") return TailPolicy::kDrop;
  if (s == "half") return TailPolicy::kFireIfResidualGeHalf;
  throw Error("--tail must be drop or half, got " + s);
}

// Accepts either a prebuilt bank or a candidate list (embedded on the fly
// with the checkpoint's text encoder).
EmbeddingBank open_bank(const std::string& path, const ModelParams& params) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(path + " is empty");
  std::string kind = json::parse(line).value("kind", "");
  if (kind == "clar-bank") return load_bank(path);
  if (kind == "clar-candidates") {
    return build_bank(load_candidates(path), params.text, params.proj, params.cfg.norm_eps);
  }
  throw Error("--bank file " + path + " has kind \"" + kind +
              "\", expected clar-bank or clar-candidates");
}

int run_synth(const std::string& config_path, uint64_t seed, const std::string& out_dir,
              int test_utterances, int bank_size) {
  SynthConfig cfg;
  if (!config_path.empty()) cfg = synth_config_from_json(read_json_file(config_path));
  Rng root(seed);

  Rng proto_rng = root.fork("proto");
  Matrix prototypes = make_prototypes(cfg, proto_rng);

  Rng train_rng = root.fork("train");
  std::vector<UtteranceRecord> train = synthesize_dataset(cfg, prototypes, train_rng, "trn");

  SynthConfig test_cfg = cfg;
  test_cfg.num_utterances = test_utterances;
  Rng test_rng = root.fork("test");
  std::vector<UtteranceRecord> test = synthesize_dataset(test_cfg, prototypes, test_rng, "tst");

  // Candidate pool: every held-out gold hotword plus unique distractor
  // n-grams up to bank_size entries.
  std::vector<Candidate> pool;
  std::set<std::string> used;
  for (const UtteranceRecord& rec : test) {
    for (const HotwordAnnotation& hw : rec.hotwords) {
      if (used.insert(hw.text).second) pool.push_back({hw.text, hw.tokens});
    }
  }
  Rng cand_rng = root.fork("cand");
  while (static_cast<int>(pool.size()) < bank_size) {
    std::vector<int> tokens = random_ngram(cfg, cand_rng);
    std::string label = tokens_to_string(tokens);
    if (used.insert(label).second) pool.push_back({std::move(label), std::move(tokens)});
  }

  std::filesystem::create_directories(out_dir);
  std::string train_path = out_dir + "/train.jsonl";
  std::string test_path = out_dir + "/test.jsonl";
  std::string cand_path = out_dir + "/candidates.jsonl";
  save_dataset(train, cfg, train_path);
  save_dataset(test, test_cfg, test_path);
  save_candidates(pool, cand_path);

  std::cout << json{{"format_version", 1},
                    {"train", train.size()},
                    {"test", test.size()},
                    {"candidates", pool.size()},
                    {"out", out_dir}}
                   .dump()
            << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_path, uint64_t seed,
              bool seed_given, const std::string& out_path, const std::string& trace_path,
              const std::string& eval_data_path, const std::string& eval_bank_path) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = train_config_from_json(read_json_file(config_path));
  if (seed_given) cfg.seed = seed;

  std::vector<TrainItem> items = make_train_items(load_dataset(data_path));

  std::function<double(const ModelParams&)> eval;
  std::vector<UtteranceRecord> eval_data;
  std::vector<Candidate> eval_pool;
  if (eval_data_path.empty() != eval_bank_path.empty()) {
    throw Error("--eval-data and --eval-bank must be given together");
  }
  if (!eval_data_path.empty()) {
    eval_data = load_dataset(eval_data_path);
    eval_pool = load_candidates(eval_bank_path);
    eval = [&eval_data, &eval_pool](const ModelParams& params) {
      EmbeddingBank bank =
          build_bank(eval_pool, params.text, params.proj, params.cfg.norm_eps);
      std::vector<char> hit(eval_data.size(), 0);
      parallel_for(static_cast<int>(eval_data.size()), [&](int u) {
        RetrievalResult r = retrieve(eval_data[u], bank, params, 1);
        hit[u] = !r.entries.empty() && !eval_data[u].hotwords.empty() &&
                 r.entries[0].label == eval_data[u].hotwords[0].text;
      });
      int hits = 0;
      for (char h : hit) hits += h;
      return eval_data.empty() ? 0.0 : 100.0 * hits / static_cast<double>(eval_data.size());
    };
  }

  std::vector<TraceRow> trace;
  TrainState state = train(cfg, items, &trace, eval);
  save_checkpoint(state.params, out_path);
  if (!trace_path.empty()) write_trace_csv(trace, trace_path);

  json summary{{"format_version", 1}, {"items", items.size()}, {"checkpoint", out_path}};
  if (!trace.empty()) {
    const TraceRow& last = trace.back();
    summary["final"] = {{"epoch", last.epoch},
                        {"l_local", last.l_local},
                        {"l_global", last.l_global},
                        {"l_cif", last.l_cif},
                        {"total", last.total}};
    if (eval) summary["final"]["recall@1"] = last.recall_at_1;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int run_retrieve(const std::string& checkpoint_path, const std::string& bank_path,
                 const std::string& data_path, int topk, const std::string& policy_str,
                 const std::string& tail_str, const std::string& out_path,
                 const std::string& prompts_path, const std::string& template_str) {
  ModelParams params = load_checkpoint(checkpoint_path);
  EmbeddingBank bank = open_bank(bank_path, params);
  std::vector<UtteranceRecord> data = load_dataset(data_path);
  ShortUtterancePolicy policy = parse_policy(policy_str);
  TailPolicy tail = parse_tail(tail_str);

  std::vector<std::pair<std::string, RetrievalResult>> results(data.size());
  parallel_for(static_cast<int>(data.size()), [&](int u) {
    results[u] = {data[u].id, retrieve(data[u], bank, params, topk, policy, tail)};
  });
  save_results(results, out_path);

  if (!prompts_path.empty()) {
    std::ofstream out(prompts_path);
    if (!out) throw Error("cannot open " + prompts_path);
    out << json{{"format_version", 1}, {"kind", "clar-prompts"}, {"count", results.size()}}.dump()
        << "\n";
    for (const auto& [id, result] : results) {
      PromptArtifact artifact = emit_prompt(id, result, template_str);
      out << json{{"id", artifact.utterance_id},
                  {"hotwords", artifact.hotwords},
                  {"prompt", artifact.prompt}}
                 .dump()
          << "\n";
    }
  }

  std::cout << json{{"format_version", 1},
                    {"utterances", data.size()},
                    {"bank", bank.size()},
                    {"out", out_path}}
                   .dump()
            << "\n";
  return 0;
}

int run_evaluate(const std::string& data_path, const std::string& results_path,
                 const std::string& bank_path, const std::string& hyps_path,
                 const std::string& out_path) {
  std::vector<UtteranceRecord> data = load_dataset(data_path);
  std::map<std::string, RetrievalResult> results = load_results(results_path);

  std::vector<std::string> labels;
  {
    std::ifstream in(bank_path);
    if (!in) throw Error("cannot open " + bank_path);
    std::string line;
    if (!std::getline(in, line)) throw Error(bank_path + " is empty");
    std::string kind = json::parse(line).value("kind", "");
    if (kind == "clar-bank") {
      labels = load_bank(bank_path).labels;
    } else if (kind == "clar-candidates") {
      for (const Candidate& c : load_candidates(bank_path)) labels.push_back(c.label);
    } else {
      throw Error("--bank file " + bank_path + " has unknown kind \"" + kind + "\"");
    }
  }

  std::map<std::string, std::string> hyps;
  const std::map<std::string, std::string>* hyps_ptr = nullptr;
  if (!hyps_path.empty()) {
    json j = read_json_file(hyps_path);
    if (!j.is_object()) throw Error("--hyps must be a JSON object mapping id to hypothesis");
    for (const auto& [id, hyp] : j.items()) hyps[id] = hyp.get<std::string>();
    hyps_ptr = &hyps;
  }

  EvalReport report = evaluate_results(data, results, labels, hyps_ptr);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw Error("cannot open " + out_path);
    out << eval_report_to_json(report).dump(2) << "\n";
  }
  std::cout << eval_report_table(report);
  return 0;
}

int run_export_map(const std::string& checkpoint_path, const std::string& bank_path,
                   const std::string& data_path, const std::string& utterance_id, int topk,
                   const std::string& policy_str, const std::string& tail_str,
                   const std::string& out_path) {
  ModelParams params = load_checkpoint(checkpoint_path);
  EmbeddingBank bank = open_bank(bank_path, params);
  std::vector<UtteranceRecord> data = load_dataset(data_path);

  const UtteranceRecord* rec = nullptr;
  if (utterance_id.empty()) {
    rec = &data.front();
  } else {
    for (const UtteranceRecord& r : data) {
      if (r.id == utterance_id) {
        rec = &r;
        break;
      }
    }
    if (rec == nullptr) throw Error("utterance " + utterance_id + " not in " + data_path);
  }

  Matrix hidden = encode_speech(rec->features, params.speech);
  Vector alpha = predict_weights(hidden, params.cif);
  CifAlignment alignment = accumulate_and_fire(alpha, params.cfg.theta, parse_tail(tail_str));
  Matrix audio_emb = project_audio(hidden, params.proj, params.cfg.norm_eps);
  SimilarityMatrix sim = similarity(audio_emb, bank, params.tau());
  ScoredCandidates scored = score_all(sim, alignment, bank, parse_policy(policy_str));
  RetrievalResult ranked = rank_topk(scored, bank, topk);

  json map = export_similarity_map(sim, alignment, scored, bank, ranked);
  map["utterance_id"] = rec->id;
  map["transcript"] = rec->text;
  std::ofstream out(out_path);
  if (!out) throw Error("cannot open " + out_path);
  out << map.dump(2) << "\n";
  std::cout << json{{"format_version", 1}, {"utterance", rec->id}, {"out", out_path}}.dump()
            << "\n";
  return 0;
}

int run_grad_check(const std::string& config_path, uint64_t seed, int batch, int coords,
                   double epsilon, double denom_floor) {
  ModelConfig model_cfg;
  if (!config_path.empty()) model_cfg = model_config_from_json(read_json_file(config_path));

  SynthConfig synth_cfg;
  synth_cfg.feature_dim = model_cfg.speech.feature_dim;
  synth_cfg.vocab_size = model_cfg.text.vocab_size;
  synth_cfg.num_utterances = batch;
  Rng root(seed);
  Rng proto_rng = root.fork("proto");
  Matrix prototypes = make_prototypes(synth_cfg, proto_rng);
  Rng data_rng = root.fork("data");
  std::vector<TrainItem> items =
      make_train_items(synthesize_dataset(synth_cfg, prototypes, data_rng, "gc"));

  Rng init_rng = root.fork("init");
  TrainState state = make_train_state(model_cfg, init_rng);

  struct Check {
    const char* name;
    LossWeights weights;
  };
  const Check checks[] = {{"local", {1.0, 0.0, 0.0}},
                          {"global", {0.0, 1.0, 0.0}},
                          {"cif", {0.0, 0.0, 1.0}},
                          {"total", {1.0, 1.0, 1.0}}};
  json rows = json::array();
  double overall = 0.0;
  for (size_t i = 0; i < 4; ++i) {
    Rng coord_rng = root.fork("coords", i);
    GradCheckResult r =
        grad_check(state, items, checks[i].weights, {}, coords, epsilon, denom_floor, coord_rng);
    overall = std::max(overall, r.max_rel_error);
    rows.push_back({{"loss", checks[i].name},
                    {"max_rel_error", r.max_rel_error},
                    {"worst_param", r.worst_param},
                    {"coords_checked", r.coords_checked}});
  }
  std::cout << json{{"format_version", 1},
                    {"kind", "clar-grad-check"},
                    {"epsilon", epsilon},
                    {"denom_floor", denom_floor},
                    {"checks", rows},
                    {"max_rel_error", overall}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clar: length-aware localized audio-text retrieval toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, bank_path, checkpoint_path;
  std::string trace_path, eval_data_path, eval_bank_path, results_path, hyps_path;
  std::string prompts_path, utterance_id;
  std::string policy_str = "full_window";
  std::string tail_str = "half";
  std::string template_str = "The audio may mention the following hotwords: {hotwords}";
  uint64_t seed = 1;
  int topk = 10;
  int test_utterances = 100;
  int bank_size = 200;
  int batch = 4;
  int coords = 25;
  double epsilon = 1e-6;
  double denom_floor = 1e-4;

  CLI::App* synth = app.add_subcommand("synth", "synthesize train/test datasets and a candidate pool");
  synth->add_option("--config", config_path, "synthesis config JSON");
  synth->add_option("--seed", seed, "rng seed");
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--test-utterances", test_utterances, "held-out utterance count");
  synth->add_option("--bank-size", bank_size, "candidate pool size (>= #gold hotwords)");

  CLI::App* train = app.add_subcommand("train", "two-stage contrastive training");
  train->add_option("--config", config_path, "training config JSON");
  train->add_option("--data", data_path, "training dataset (jsonl)")->required();
  train->add_option("--seed", seed, "overrides the config seed");
  train->add_option("--out", out_path, "checkpoint path")->required();
  train->add_option("--trace", trace_path, "per-epoch loss trace CSV");
  train->add_option("--eval-data", eval_data_path, "held-out dataset for per-epoch recall@1");
  train->add_option("--eval-bank", eval_bank_path, "candidate pool for per-epoch recall@1");

  CLI::App* retrieve_cmd = app.add_subcommand("retrieve", "rank candidates for every utterance");
  retrieve_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  retrieve_cmd->add_option("--bank", bank_path, "bank or candidate file")->required();
  retrieve_cmd->add_option("--data", data_path, "utterances (jsonl)")->required();
  retrieve_cmd->add_option("--topk", topk, "entries kept per utterance");
  retrieve_cmd->add_option("--policy", policy_str, "short-utterance policy: full_window|skip");
  retrieve_cmd->add_option("--tail", tail_str, "tail handling: drop|half");
  retrieve_cmd->add_option("--out", out_path, "results path (jsonl)")->required();
  retrieve_cmd->add_option("--prompts", prompts_path, "also emit decoding prompts (jsonl)");
  retrieve_cmd->add_option("--template", template_str, "prompt template with {hotwords}");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score retrieval results against gold");
  evaluate->add_option("--data", data_path, "utterances with gold hotwords (jsonl)")->required();
  evaluate->add_option("--results", results_path, "retrieval results (jsonl)")->required();
  evaluate->add_option("--bank", bank_path, "bank or candidate file")->required();
  evaluate->add_option("--hyps", hyps_path, "JSON object {id: hypothesis transcript}");
  evaluate->add_option("--out", out_path, "report JSON path");

  CLI::App* export_map = app.add_subcommand("export-map", "dump the similarity map for one utterance");
  export_map->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  export_map->add_option("--bank", bank_path, "bank or candidate file")->required();
  export_map->add_option("--data", data_path, "utterances (jsonl)")->required();
  export_map->add_option("--utterance", utterance_id, "utterance id (default: first)");
  export_map->add_option("--topk", topk, "ranking depth in the export");
  export_map->add_option("--policy", policy_str, "short-utterance policy: full_window|skip");
  export_map->add_option("--tail", tail_str, "tail handling: drop|half");
  export_map->add_option("--out", out_path, "output JSON path")->required();

  CLI::App* grad = app.add_subcommand("grad-check", "finite-difference gradient check");
  grad->add_option("--config", config_path, "model config JSON");
  grad->add_option("--seed", seed, "rng seed");
  grad->add_option("--batch", batch, "synthetic batch size");
  grad->add_option("--coords", coords, "coordinates per parameter tensor");
  grad->add_option("--epsilon", epsilon, "finite-difference step");
  grad->add_option("--floor", denom_floor, "relative-error denominator floor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      return run_synth(config_path, seed, out_path, test_utterances, bank_size);
    }
    if (train->parsed()) {
      return run_train(config_path, data_path, seed, train->count("--seed") > 0, out_path,
                       trace_path, eval_data_path, eval_bank_path);
    }
    if (retrieve_cmd->parsed()) {
      return run_retrieve(checkpoint_path, bank_path, data_path, topk, policy_str, tail_str,
                          out_path, prompts_path, template_str);
    }
    if (evaluate->parsed()) {
      return run_evaluate(data_path, results_path, bank_path, hyps_path, out_path);
    }
    if (export_map->parsed()) {
      return run_export_map(checkpoint_path, bank_path, data_path, utterance_id, topk, policy_str,
                            tail_str, out_path);
    }
    if (grad->parsed()) {
      return run_grad_check(config_path, seed, batch, coords, epsilon, denom_floor);
    }
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
