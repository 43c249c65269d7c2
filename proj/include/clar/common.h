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

#ifndef CLAR_COMMON_H_
#define CLAR_COMMON_H_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace clar {

// All recoverable failures are reported through this type. Messages are
// plain one-liners meant to be machine-readable enough for the CLI to wrap
// them in a JSON error record.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// printf-style message builder; keeps call sites short on gcc 11 (no
// std::format there).
template <typename... Args>
std::string strformat(const char* fmt, Args... args) {
  int n = std::snprintf(nullptr, 0, fmt, args...);
  std::string out(static_cast<size_t>(n), '\0');
  std::snprintf(out.data(), out.size() + 1, fmt, args...);
  return out;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG built on a splitmix64 counter walk. Every draw below is
// implemented by hand so that streams are bit-identical across platforms and
// standard libraries (std::*_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : s_(splitmix64(seed)), has_spare_(false) {}

  // Sub-stream derivation, e.g. Rng(seed).fork("bank", utt_index).
  Rng fork(const std::string& tag, uint64_t index = 0) const {
    uint64_t h = s_;
    for (char c : tag) h = splitmix64(h ^ static_cast<uint64_t>(c));
    return Rng(splitmix64(h ^ index));
  }

  uint64_t next_u64() {
    s_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = s_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is below 2^-53 for our n.
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // Inclusive integer range.
  int64_t uniform_range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Box-Muller; consumes two uniforms per pair of normals.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t s_;
  bool has_spare_;
  double spare_ = 0.0;
};

}  // namespace clar

#endif  // CLAR_COMMON_H_
