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

#include <cmath>
#include <vector>

#include "doctest.h"

#include "clar/cif.h"
#include "clar/common.h"
#include "oracles.h"

namespace clar {
namespace {

TEST_SUITE("cif") {

TEST_CASE("accumulate_and_fire matches the cumulative-sum reference on random inputs") {
  Rng rng(201);
  for (int it = 0; it < 400; ++it) {
    int t_len = static_cast<int>(rng.uniform_range(0, 30));
    std::vector<double> w(static_cast<size_t>(t_len));
    for (double& v : w) v = rng.uniform(0.0, 1.5);
    double theta = rng.uniform(0.5, 2.0);
    TailPolicy tail = (it % 2 == 0) ? TailPolicy::kDrop : TailPolicy::kFireIfResidualGeHalf;
    CifAlignment got = accumulate_and_fire(Vector(w), theta, tail);
    oracle::CifRef ref = oracle::cif_reference(w, theta, tail);
    CHECK(oracle::cif_matches(ref, got));
  }
}

TEST_CASE("hand-picked alignments") {
  SUBCASE("exact threshold hit fires on that frame") {
    CifAlignment a = accumulate_and_fire(Vector(std::vector<double>{0.5, 0.5, 0.4}),
                                         1.0, TailPolicy::kDrop);
    REQUIRE(a.fire_count == 1);
    CHECK(a.spans[0] == TokenSpan{0, 1});
    CHECK(a.fire_flags[1]);
    CHECK_FALSE(a.fire_flags[2]);
    CHECK(a.token_of_frame == std::vector<int>{0, 0, 1});
  }
  SUBCASE("residual >= theta fires again on the very next frame") {
    // Frame 0 brings 2.5: one fire, residual 1.5 still >= theta, so frame 1
    // fires immediately even with a tiny weight.
    CifAlignment a = accumulate_and_fire(Vector(std::vector<double>{2.5, 0.01}),
                                         1.0, TailPolicy::kDrop);
    REQUIRE(a.fire_count == 2);
    CHECK(a.spans[0] == TokenSpan{0, 0});
    CHECK(a.spans[1] == TokenSpan{1, 1});
  }
  SUBCASE("zero frames, zero tokens") {
    CifAlignment a = accumulate_and_fire(Vector(), 1.0, TailPolicy::kFireIfResidualGeHalf);
    CHECK(a.token_count() == 0);
    CHECK(a.fire_count == 0);
    CHECK_FALSE(a.has_tail_token);
  }
  SUBCASE("tail residual exactly theta/2 fires under the half policy") {
    Vector w(std::vector<double>{1.0, 0.5});
    CifAlignment half = accumulate_and_fire(w, 1.0, TailPolicy::kFireIfResidualGeHalf);
    REQUIRE(half.token_count() == 2);
    CHECK(half.has_tail_token);
    CHECK(half.spans[1] == TokenSpan{1, 1});
    CifAlignment drop = accumulate_and_fire(w, 1.0, TailPolicy::kDrop);
    CHECK(drop.token_count() == 1);
    CHECK_FALSE(drop.has_tail_token);
  }
  SUBCASE("tail residual just under theta/2 never fires") {
    CifAlignment a = accumulate_and_fire(Vector(std::vector<double>{1.0, 0.49}),
                                         1.0, TailPolicy::kFireIfResidualGeHalf);
    CHECK(a.token_count() == 1);
    CHECK_FALSE(a.has_tail_token);
  }
  SUBCASE("no tail token when every frame already belongs to a span") {
    // Residual comes from the carry, not from leftover frames.
    CifAlignment a = accumulate_and_fire(Vector(std::vector<double>{1.9}),
                                         1.0, TailPolicy::kFireIfResidualGeHalf);
    CHECK(a.token_count() == 1);
    CHECK_FALSE(a.has_tail_token);
  }
}

TEST_CASE("alignment invariants hold on random inputs") {
  Rng rng(202);
  for (int it = 0; it < 100; ++it) {
    int t_len = static_cast<int>(rng.uniform_range(1, 40));
    std::vector<double> w(static_cast<size_t>(t_len));
    for (double& v : w) v = rng.uniform(0.0, 2.0);
    CifAlignment a = accumulate_and_fire(Vector(w), 1.0, TailPolicy::kFireIfResidualGeHalf);

    // token_of_frame is non-decreasing and counts prior fires.
    for (int t = 1; t < t_len; ++t) CHECK(a.token_of_frame[t] >= a.token_of_frame[t - 1]);
    // Spans are contiguous from frame 0 and ordered.
    int expected_begin = 0;
    for (const TokenSpan& s : a.spans) {
      CHECK(s.begin == expected_begin);
      CHECK(s.end >= s.begin);
      expected_begin = s.end + 1;
    }
    // counters[t] is the prefix sum minus theta per prior fire.
    double cumsum = 0.0;
    int fires = 0;
    for (int t = 0; t < t_len; ++t) {
      cumsum += w[static_cast<size_t>(t)];
      CHECK(a.counters[t] == doctest::Approx(cumsum - fires * a.theta).epsilon(1e-12));
      if (a.fire_flags[t]) fires += 1;
    }
    CHECK(fires == a.fire_count);
    CHECK(a.token_count() == a.fire_count + (a.has_tail_token ? 1 : 0));
  }
}

TEST_CASE("accumulate_and_fire input validation") {
  CHECK_THROWS_WITH_AS(accumulate_and_fire(Vector(std::vector<double>{0.5}), 0.0),
                       doctest::Contains("theta"), Error);
  CHECK_THROWS_WITH_AS(accumulate_and_fire(Vector(std::vector<double>{0.5, -0.1}), 1.0),
                       doctest::Contains("negative weight"), Error);
}

TEST_CASE("scale_weights_to_length hits the target sum exactly") {
  Rng rng(203);
  for (int it = 0; it < 50; ++it) {
    int t_len = static_cast<int>(rng.uniform_range(1, 30));
    Vector w(t_len);
    for (int t = 0; t < t_len; ++t) w[t] = rng.uniform(0.01, 1.0);
    int target = static_cast<int>(rng.uniform_range(1, 12));
    Vector scaled = scale_weights_to_length(w, target);
    double sum = 0.0;
    for (int t = 0; t < t_len; ++t) {
      sum += scaled[t];
      // Proportions preserved.
      CHECK(scaled[t] / w[t] == doctest::Approx(scaled[0] / w[0]).epsilon(1e-12));
    }
    CHECK(sum == doctest::Approx(static_cast<double>(target)).epsilon(1e-12));
  }
  CHECK_THROWS_WITH_AS(scale_weights_to_length(Vector(std::vector<double>{1.0}), 0),
                       doctest::Contains("target_len"), Error);
  CHECK_THROWS_WITH_AS(scale_weights_to_length(Vector(std::vector<double>{0.0, 0.0}), 3),
                       doctest::Contains("sum to zero"), Error);
  // Scaled weights emit exactly target_len tokens when integrated; the half
  // policy makes this robust to the final fire landing a rounding error
  // under theta (the residual is then ~theta and becomes the tail token).
  Vector w(std::vector<double>{0.2, 0.7, 0.3, 0.9, 0.1});
  CifAlignment a = accumulate_and_fire(scale_weights_to_length(w, 3), 1.0,
                                       TailPolicy::kFireIfResidualGeHalf);
  CHECK(a.token_count() == 3);
}

TEST_CASE("spans_for_window joins first begin with last end") {
  CifAlignment a = accumulate_and_fire(
      Vector(std::vector<double>{0.5, 0.5, 1.0, 0.25, 0.25, 0.5, 0.6}),
      1.0, TailPolicy::kFireIfResidualGeHalf);
  REQUIRE(a.token_count() == 4);  // spans {0,1} {2,2} {3,5} and tail {6,6}
  CHECK(spans_for_window(a, 0, 1) == TokenSpan{0, 1});
  CHECK(spans_for_window(a, 1, 2) == TokenSpan{2, 5});
  CHECK(spans_for_window(a, 0, 4) == TokenSpan{0, 6});
  CHECK_THROWS_WITH_AS(spans_for_window(a, 0, 0), doctest::Contains("width"), Error);
  CHECK_THROWS_WITH_AS(spans_for_window(a, -1, 2), doctest::Contains("exceeds"), Error);
  CHECK_THROWS_WITH_AS(spans_for_window(a, 3, 2), doctest::Contains("exceeds"), Error);
}

TEST_CASE("alignment JSON round-trip reproduces the alignment") {
  Rng rng(204);
  for (int it = 0; it < 40; ++it) {
    int t_len = static_cast<int>(rng.uniform_range(0, 20));
    Vector w(t_len);
    for (int t = 0; t < t_len; ++t) w[t] = rng.uniform(0.0, 1.5);
    TailPolicy tail = (it % 2 == 0) ? TailPolicy::kDrop : TailPolicy::kFireIfResidualGeHalf;
    CifAlignment a = accumulate_and_fire(w, 1.0, tail);
    CifAlignment b = alignment_from_json(alignment_to_json(a));
    CHECK(a.weights.data == b.weights.data);
    CHECK(a.theta == b.theta);
    CHECK(a.spans == b.spans);
    CHECK(a.token_of_frame == b.token_of_frame);
    CHECK(a.fire_count == b.fire_count);
    CHECK(a.has_tail_token == b.has_tail_token);
  }
}

TEST_CASE("predict_weights stays strictly inside (0,1) and validates width") {
  Rng rng(205);
  CifPredictorParams p = init_cif_predictor(6, 8, 3, rng);
  Matrix hidden(11, 6);
  for (double& v : hidden.data) v = rng.normal();
  Vector alpha = predict_weights(hidden, p);
  REQUIRE(alpha.size() == 11);
  for (int t = 0; t < alpha.size(); ++t) {
    CHECK(alpha[t] > 0.0);
    CHECK(alpha[t] < 1.0);
  }
  Matrix wrong(4, 5);
  CHECK_THROWS_WITH_AS(predict_weights(wrong, p), doctest::Contains("predictor input dim"), Error);
}

}  // TEST_SUITE

}  // namespace
}  // namespace clar
