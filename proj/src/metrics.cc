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

#include "clar/metrics.h"

#include <algorithm>
#include <set>

#include "clar/common.h"

namespace clar {

std::vector<uint32_t> utf8_decode(const std::string& s) {
  std::vector<uint32_t> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    int extra;
    uint32_t cp;
    if (c < 0x80) {
      extra = 0;
      cp = c;
    } else if ((c & 0xe0) == 0xc0) {
      extra = 1;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      extra = 2;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      throw Error(strformat("utf8_decode: invalid lead byte 0x%02x at offset %zu", c, i));
    }
    if (i + extra >= s.size()) throw Error(strformat("utf8_decode: truncated sequence at offset %zu", i));
    for (int k = 1; k <= extra; ++k) {
      unsigned char cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) {
        throw Error(strformat("utf8_decode: invalid continuation byte 0x%02x at offset %zu", cc, i + k));
      }
      cp = (cp << 6) | (cc & 0x3f);
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

std::string utf8_encode(const std::vector<uint32_t>& cps) {
  std::string out;
  for (uint32_t cp : cps) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }
  return out;
}

namespace {

// dp[i][j] = distance between ref[0..i) and hyp[0..j).
std::vector<std::vector<int>> edit_table(const std::vector<uint32_t>& ref,
                                         const std::vector<uint32_t>& hyp) {
  size_t m = ref.size(), n = hyp.size();
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (size_t i = 0; i <= m; ++i) dp[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= n; ++j) dp[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      int sub = dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      int del = dp[i - 1][j] + 1;
      int ins = dp[i][j - 1] + 1;
      dp[i][j] = std::min({sub, del, ins});
    }
  }
  return dp;
}

}  // namespace

int edit_distance(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b) {
  return edit_table(a, b)[a.size()][b.size()];
}

double cer(const std::string& hyp, const std::string& ref) {
  std::vector<uint32_t> r = utf8_decode(ref);
  if (r.empty()) throw Error("cer: empty reference");
  std::vector<uint32_t> h = utf8_decode(hyp);
  return 100.0 * edit_distance(r, h) / static_cast<double>(r.size());
}

BiasedMetrics biased_metrics(const std::string& hyp, const std::string& ref,
                             const std::vector<std::string>& bias_list) {
  std::vector<uint32_t> r = utf8_decode(ref);
  if (r.empty()) throw Error("biased_metrics: empty reference");
  std::vector<uint32_t> h = utf8_decode(hyp);

  // Biased region: every ref position covered by any bias-word occurrence,
  // overlaps included.
  std::vector<bool> biased(r.size(), false);
  for (const std::string& word : bias_list) {
    std::vector<uint32_t> w = utf8_decode(word);
    if (w.empty() || w.size() > r.size()) continue;
    for (size_t start = 0; start + w.size() <= r.size(); ++start) {
      if (std::equal(w.begin(), w.end(), r.begin() + start)) {
        for (size_t p = start; p < start + w.size(); ++p) biased[p] = true;
      }
    }
  }

  BiasedMetrics out;
  for (bool b : biased) (b ? out.biased_length : out.unbiased_length) += 1;

  // Charge each error on the backtraced edit path to one region. An
  // insertion sits between ref positions i-1 and i; it follows the next ref
  // character (leading edge), or the previous one when it trails the string.
  std::vector<std::vector<int>> dp = edit_table(r, h);
  auto charge = [&out, &biased](size_t pos) {
    (biased[pos] ? out.biased_errors : out.unbiased_errors) += 1;
  };
  size_t i = r.size(), j = h.size();
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1)) {
      if (r[i - 1] != h[j - 1]) charge(i - 1);
      --i;
      --j;
    } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      charge(i - 1);  // deletion of ref[i-1]
      --i;
    } else {
      charge(i < r.size() ? i : r.size() - 1);  // insertion before ref[i]
      --j;
    }
  }

  if (out.biased_length > 0) {
    out.b_wer = 100.0 * out.biased_errors / static_cast<double>(out.biased_length);
  }
  if (out.unbiased_length > 0) {
    out.u_cer = 100.0 * out.unbiased_errors / static_cast<double>(out.unbiased_length);
  }
  return out;
}

double recall_at_k(const std::vector<RetrievalResult>& rankings,
                   const std::vector<std::string>& gold,
                   const std::vector<std::vector<std::string>>& bank_labels, int k) {
  if (k < 1) throw Error("recall_at_k: k must be >= 1");
  if (rankings.size() != gold.size() || bank_labels.size() != gold.size()) {
    throw Error(strformat("recall_at_k: got %zu rankings, %zu gold labels, %zu banks",
                          rankings.size(), gold.size(), bank_labels.size()));
  }
  if (gold.empty()) throw Error("recall_at_k: no (utterance, hotword) pairs");
  int hits = 0;
  for (size_t u = 0; u < gold.size(); ++u) {
    const std::vector<std::string>& labels = bank_labels[u];
    if (std::find(labels.begin(), labels.end(), gold[u]) == labels.end()) {
      throw Error(strformat("recall_at_k: gold hotword \"%s\" missing from bank of utterance %zu",
                            gold[u].c_str(), u));
    }
    const auto& entries = rankings[u].entries;
    int top = std::min<int>(k, static_cast<int>(entries.size()));
    for (int e = 0; e < top; ++e) {
      if (entries[e].label == gold[u]) {
        hits += 1;
        break;
      }
    }
  }
  return 100.0 * hits / static_cast<double>(gold.size());
}

double f1_score(const std::vector<RetrievalResult>& rankings, const std::vector<std::string>& gold,
                std::optional<double> threshold) {
  if (rankings.size() != gold.size()) {
    throw Error(strformat("f1_score: got %zu rankings for %zu gold labels", rankings.size(),
                          gold.size()));
  }
  if (gold.empty()) throw Error("f1_score: no (utterance, hotword) pairs");
  size_t predicted = 0;
  size_t true_positives = 0;
  for (size_t u = 0; u < gold.size(); ++u) {
    std::set<std::string> preds;
    if (threshold.has_value()) {
      for (const RankedEntry& e : rankings[u].entries) {
        if (e.score >= *threshold) preds.insert(e.label);
      }
    } else if (!rankings[u].entries.empty()) {
      preds.insert(rankings[u].entries.front().label);
    }
    predicted += preds.size();
    if (preds.count(gold[u]) > 0) true_positives += 1;
  }
  if (predicted == 0 || true_positives == 0) return 0.0;
  double precision = static_cast<double>(true_positives) / static_cast<double>(predicted);
  double recall = static_cast<double>(true_positives) / static_cast<double>(gold.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

}  // namespace clar
