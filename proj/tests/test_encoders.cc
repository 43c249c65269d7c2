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

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"

#include "clar/common.h"
#include "clar/encoders.h"
#include "oracles.h"

namespace clar {
namespace {

Matrix random_features(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal();
  return m;
}

std::string temp_path(const char* stem) {
  return std::string("clar_test_") + stem + "_" + std::to_string(::getpid()) + ".jsonl";
}

TEST_SUITE("encoders") {

TEST_CASE("encode_speech output shape follows ceil(T/stride) x output_dim") {
  Rng rng(301);
  ModelConfig cfg = oracle::tiny_model_config();
  SUBCASE("stride 1") {
    ModelParams m = init_model(cfg, rng);
    Matrix out = encode_speech(random_features(13, cfg.speech.feature_dim, rng), m.speech);
    CHECK(out.rows == 13);
    CHECK(out.cols == cfg.speech.output_dim);
  }
  SUBCASE("stride 2 halves the frame count, rounded up") {
    cfg.speech.stride = 2;
    ModelParams m = init_model(cfg, rng);
    Matrix out = encode_speech(random_features(13, cfg.speech.feature_dim, rng), m.speech);
    CHECK(out.rows == 7);
    CHECK(out.cols == cfg.speech.output_dim);
  }
  SUBCASE("wrong feature width is rejected") {
    ModelParams m = init_model(cfg, rng);
    CHECK_THROWS_WITH_AS(encode_speech(Matrix(5, cfg.speech.feature_dim + 1), m.speech),
                         doctest::Contains("feature dim"), Error);
  }
}

TEST_CASE("residual_input adds the raw features to the base encoder output") {
  Rng rng(302);
  ModelConfig cfg = oracle::tiny_model_config();
  cfg.speech.output_dim = cfg.speech.feature_dim;  // residual shape requirement
  cfg.proj.audio_in = cfg.speech.feature_dim;
  cfg.speech.residual_input = true;
  ModelParams with = init_model(cfg, rng);

  // Same weights, flag off: the difference must be exactly the input.
  ModelParams without = with;
  without.cfg.speech.residual_input = false;
  without.speech.cfg.residual_input = false;

  Matrix x = random_features(9, cfg.speech.feature_dim, rng);
  Matrix a = encode_speech(x, with.speech);
  Matrix b = encode_speech(x, without.speech);
  REQUIRE(a.same_shape(b));
  for (int t = 0; t < a.rows; ++t) {
    for (int c = 0; c < a.cols; ++c) {
      CHECK(a.at(t, c) - b.at(t, c) == doctest::Approx(x.at(t, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("init_model rejects residual configurations whose shapes cannot carry identity") {
  Rng rng(303);
  SUBCASE("speech skip with stride 2") {
    ModelConfig cfg = oracle::tiny_model_config();
    cfg.speech.residual_input = true;
    cfg.speech.output_dim = cfg.speech.feature_dim;
    cfg.speech.stride = 2;
    CHECK_THROWS_WITH_AS(init_model(cfg, rng), doctest::Contains("stride 1"), Error);
  }
  SUBCASE("speech skip with output_dim != feature_dim") {
    ModelConfig cfg = oracle::tiny_model_config();
    cfg.speech.residual_input = true;
    REQUIRE(cfg.speech.output_dim != cfg.speech.feature_dim);
    CHECK_THROWS_AS(init_model(cfg, rng), Error);
  }
  SUBCASE("projection skip with dim != fan-ins") {
    ModelConfig cfg = oracle::tiny_model_config();
    cfg.proj.residual_input = true;
    REQUIRE(cfg.proj.dim != cfg.speech.output_dim);
    CHECK_THROWS_WITH_AS(init_model(cfg, rng), doctest::Contains("projection residual_input"),
                         Error);
  }
}

TEST_CASE("encode_text pools a bag of tokens: order-invariant, length-normalized") {
  Rng rng(304);
  ModelParams m = init_model(oracle::tiny_model_config(), rng);
  Vector a = encode_text({1, 4, 7, 2}, m.text);
  Vector b = encode_text({7, 2, 1, 4}, m.text);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  // A doubled bag has the same mean pooling.
  Vector c = encode_text({3, 5}, m.text);
  Vector d = encode_text({3, 5, 3, 5}, m.text);
  for (int i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(d[i]).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(encode_text({}, m.text), doctest::Contains("empty token"), Error);
  CHECK_THROWS_WITH_AS(encode_text({m.cfg.text.vocab_size}, m.text),
                       doctest::Contains("outside vocab"), Error);
  CHECK_THROWS_AS(encode_text({-1}, m.text), Error);
}

TEST_CASE("projections emit unit-norm rows and validate fan-in") {
  Rng rng(305);
  ModelParams m = init_model(oracle::tiny_model_config(), rng);
  Matrix hidden = random_features(6, m.cfg.proj.audio_in, rng);
  Matrix emb = project_audio(hidden, m.proj);
  CHECK(emb.rows == 6);
  CHECK(emb.cols == m.cfg.proj.dim);
  for (int t = 0; t < emb.rows; ++t) {
    CHECK(l2_norm(emb.row(t)) == doctest::Approx(1.0).epsilon(1e-12));
  }
  Vector pooled = encode_text({2, 9}, m.text);
  Vector temb = project_text(pooled, m.proj);
  CHECK(temb.size() == m.cfg.proj.dim);
  CHECK(l2_norm({temb.data.data(), temb.data.size()}) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(project_audio(Matrix(3, m.cfg.proj.audio_in + 2), m.proj),
                       doctest::Contains("fan-in"), Error);
  CHECK_THROWS_WITH_AS(project_text(Vector(m.cfg.proj.text_in + 1), m.proj),
                       doctest::Contains("fan-in"), Error);
}

TEST_CASE("projection residual keeps distinct inputs distinct") {
  // With both skips on, two different feature rows cannot produce the same
  // embedding row unless normalization folds them together, which random
  // inputs will not hit. This is the collapse-resistance property the flag
  // exists for.
  Rng rng(306);
  ModelConfig cfg = oracle::tiny_model_config();
  int d = cfg.speech.feature_dim;
  cfg.speech.output_dim = d;
  cfg.speech.residual_input = true;
  cfg.text.width = d;
  cfg.proj.hidden = d;
  cfg.proj.dim = d;
  cfg.proj.audio_in = d;
  cfg.proj.text_in = d;
  cfg.proj.residual_input = true;
  ModelParams m = init_model(cfg, rng);
  Matrix x = random_features(4, d, rng);
  Matrix emb = project_audio(encode_speech(x, m.speech), m.proj, m.cfg.norm_eps);
  for (int i = 0; i < emb.rows; ++i) {
    for (int j = i + 1; j < emb.rows; ++j) {
      double c = dot(emb.row(i), emb.row(j));
      CHECK(std::abs(c) < 1.0 - 1e-6);
    }
  }
}

TEST_CASE("build_bank equals per-candidate encode+project, in order") {
  Rng rng(307);
  ModelParams m = init_model(oracle::tiny_model_config(), rng);
  std::vector<Candidate> cands = {
      {"ab", {0, 1}}, {"cde", {2, 3, 4}}, {"f", {5}}, {"ab2", {0, 1}}};
  EmbeddingBank bank = build_bank(cands, m.text, m.proj, m.cfg.norm_eps);
  REQUIRE(bank.size() == 4);
  CHECK(bank.dim() == m.cfg.proj.dim);
  for (int j = 0; j < bank.size(); ++j) {
    CHECK(bank.labels[j] == cands[j].label);
    CHECK(bank.token_ids[j] == cands[j].tokens);
    CHECK(bank.token_lengths[j] == static_cast<int>(cands[j].tokens.size()));
    Vector want = project_text(encode_text(cands[j].tokens, m.text), m.proj, m.cfg.norm_eps);
    for (int c = 0; c < bank.dim(); ++c) {
      CHECK(bank.embeddings.at(j, c) == doctest::Approx(want[c]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_WITH_AS(build_bank({}, m.text, m.proj), doctest::Contains("at least one"), Error);
  CHECK_THROWS_WITH_AS(build_bank({{"bad", {}}}, m.text, m.proj),
                       doctest::Contains("candidate 0 (bad)"), Error);
}

TEST_CASE("collect_params names every tensor once and aliases live storage") {
  Rng rng(308);
  ModelParams m = init_model(oracle::tiny_model_config(), rng);
  std::vector<ParamRef> refs;
  collect_params(m, refs);
  REQUIRE_FALSE(refs.empty());

  std::set<std::string> names;
  bool saw_log_tau = false;
  for (const ParamRef& r : refs) {
    CHECK(names.insert(r.name).second);  // unique
    CHECK(r.size > 0);
    if (r.cols > 0) CHECK(r.size == static_cast<size_t>(r.rows) * r.cols);
    if (r.name == "log_tau") {
      saw_log_tau = true;
      CHECK(r.size == 1);
      CHECK(r.data == &m.log_tau);
    }
  }
  CHECK(saw_log_tau);

  // Mutation through a ref must be visible to the forward pass (no copies).
  Matrix x(5, m.cfg.speech.feature_dim);
  for (double& v : x.data) v = rng.normal();
  Matrix before = encode_speech(x, m.speech);
  for (const ParamRef& r : refs) {
    if (r.name.rfind("speech.", 0) == 0) r.data[0] += 0.25;
  }
  Matrix after = encode_speech(x, m.speech);
  double diff = 0.0;
  for (size_t i = 0; i < after.data.size(); ++i) diff += std::abs(after.data[i] - before.data[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(309);
  ModelConfig cfg = oracle::tiny_model_config();
  cfg.speech.output_dim = cfg.speech.feature_dim;
  cfg.speech.residual_input = true;  // flags must survive serialization
  ModelParams m = init_model(cfg, rng);
  m.log_tau = std::log(7.5);
  std::string path = temp_path("ckpt");
  save_checkpoint(m, path);
  ModelParams loaded = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.cfg.speech.residual_input);
  CHECK(loaded.tau() == doctest::Approx(7.5).epsilon(1e-12));
  std::vector<ParamRef> a, b;
  collect_params(m, a);
  collect_params(loaded, b);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    REQUIRE(a[i].size == b[i].size);
    for (size_t k = 0; k < a[i].size; ++k) CHECK(a[i].data[k] == b[i].data[k]);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint("no_such_file.json"), doctest::Contains("cannot open"),
                       Error);
}

TEST_CASE("bank and candidate files round-trip") {
  Rng rng(310);
  ModelParams m = init_model(oracle::tiny_model_config(), rng);
  std::vector<Candidate> cands = {{"xy", {1, 2}}, {"zq", {3, 4}}, {"w", {5}}};
  EmbeddingBank bank = build_bank(cands, m.text, m.proj, m.cfg.norm_eps);

  std::string bank_path = temp_path("bank");
  save_bank(bank, bank_path);
  EmbeddingBank loaded = load_bank(bank_path);
  std::remove(bank_path.c_str());
  REQUIRE(loaded.size() == bank.size());
  CHECK(loaded.labels == bank.labels);
  CHECK(loaded.token_ids == bank.token_ids);
  CHECK(loaded.token_lengths == bank.token_lengths);
  for (size_t i = 0; i < bank.embeddings.data.size(); ++i) {
    CHECK(loaded.embeddings.data[i] == bank.embeddings.data[i]);
  }

  std::string cand_path = temp_path("cands");
  save_candidates(cands, cand_path);
  std::vector<Candidate> loaded_cands = load_candidates(cand_path);
  std::remove(cand_path.c_str());
  REQUIRE(loaded_cands.size() == cands.size());
  for (size_t i = 0; i < cands.size(); ++i) {
    CHECK(loaded_cands[i].label == cands[i].label);
    CHECK(loaded_cands[i].tokens == cands[i].tokens);
  }
}

TEST_CASE("model config JSON round-trip preserves every field") {
  ModelConfig cfg = oracle::tiny_model_config();
  cfg.speech.output_dim = cfg.speech.feature_dim;
  cfg.speech.residual_input = true;
  cfg.speech.stride = 1;
  cfg.speech.num_conv_layers = 3;
  cfg.cif_kernel_width = 5;
  cfg.theta = 0.9;
  cfg.init_tau = 11.0;
  ModelConfig back = model_config_from_json(model_config_to_json(cfg));
  CHECK(back.speech.feature_dim == cfg.speech.feature_dim);
  CHECK(back.speech.conv_channels == cfg.speech.conv_channels);
  CHECK(back.speech.kernel_width == cfg.speech.kernel_width);
  CHECK(back.speech.stride == cfg.speech.stride);
  CHECK(back.speech.num_conv_layers == cfg.speech.num_conv_layers);
  CHECK(back.speech.mlp_hidden == cfg.speech.mlp_hidden);
  CHECK(back.speech.output_dim == cfg.speech.output_dim);
  CHECK(back.speech.residual_input == cfg.speech.residual_input);
  CHECK(back.text.vocab_size == cfg.text.vocab_size);
  CHECK(back.text.width == cfg.text.width);
  CHECK(back.proj.hidden == cfg.proj.hidden);
  CHECK(back.proj.dim == cfg.proj.dim);
  CHECK(back.proj.residual_input == cfg.proj.residual_input);
  CHECK(back.cif_channels == cfg.cif_channels);
  CHECK(back.cif_kernel_width == cfg.cif_kernel_width);
  CHECK(back.theta == cfg.theta);
  CHECK(back.init_tau == cfg.init_tau);
  CHECK(back.norm_eps == cfg.norm_eps);
}

}  // TEST_SUITE

}  // namespace
}  // namespace clar
