// rng.h
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEQVC_RNG_H_
#define SEQVC_RNG_H_

#include <cmath>
#include <cstdint>
#include <string>

namespace seqvc {

// splitmix64; every stream below is a pure function of its seed so that
// training runs are reproducible without carrying generator state around.
inline uint64_t SplitMix64(uint64_t &state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t HashCombine(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return SplitMix64(s);
}

inline uint64_t HashString(const std::string &s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic generator with hand-rolled distributions. Output does not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Warm up so that small seeds do not produce correlated first draws.
    SplitMix64(state_);
    SplitMix64(state_);
  }

  uint64_t NextU64() { return SplitMix64(state_); }

  // Uniform in [0, 1).
  double Uniform() {
    return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n) { return NextU64() % n; }

  // Standard normal via Box-Muller.
  double Normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = Uniform();
    double u2 = Uniform();
    while (u1 <= 1e-300) u1 = Uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Named sub-stream derivation, e.g. StreamSeed(seed, "shuffle", epoch).
inline uint64_t StreamSeed(uint64_t seed, const std::string &purpose) {
  return HashCombine(seed, HashString(purpose));
}
inline uint64_t StreamSeed(uint64_t seed, const std::string &purpose,
                           uint64_t a) {
  return HashCombine(StreamSeed(seed, purpose), a);
}
inline uint64_t StreamSeed(uint64_t seed, const std::string &purpose,
                           uint64_t a, uint64_t b) {
  return HashCombine(StreamSeed(seed, purpose, a), b);
}

}  // namespace seqvc

#endif  // SEQVC_RNG_H_
