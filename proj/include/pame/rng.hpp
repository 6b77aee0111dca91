#pragma once

// Counter-based RNG (Philox4x32-10) with purpose-keyed streams.
//
// Every random decision in the simulator draws from a stream addressed by
// (seed, purpose, a, b, iteration). Streams are stateless to construct and
// overlap-free by construction: the 128-bit Philox counter is
// (block, a, b, (iteration << 4) | purpose) and the 64-bit key is the run
// seed. This is what makes runs reproducible bit-for-bit regardless of node
// processing order or thread count.

#include <cstdint>
#include <vector>

namespace pame::rng {

struct Philox4x32Result {
  uint32_t v[4];
};

// One Philox-4x32 block with 10 rounds (Salmon et al. constants).
Philox4x32Result philox4x32_10(uint32_t c0, uint32_t c1, uint32_t c2,
                               uint32_t c3, uint32_t k0, uint32_t k1);

// Stream purposes; value must stay < 16 (packed into 4 bits of the counter).
enum class Purpose : uint32_t {
  GraphGen = 1,
  GroundTruth = 2,
  Features = 3,
  Noise = 4,
  Labels = 5,
  KappaInit = 6,
  NeighborSelect = 7,
  CoordSelect = 8,
  BatchSelect = 9,
  EpsilonProbe = 10,
  Oracle = 11,
  Generic = 12,
};

class Stream {
 public:
  Stream(uint64_t seed, Purpose purpose, uint32_t a = 0, uint32_t b = 0,
         uint64_t iteration = 0);

  uint32_t next_u32();
  uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Unbiased integer in [0, bound); bound >= 1.
  uint64_t below(uint64_t bound);
  // Standard normal (Box-Muller, no caching: every call costs two uniforms).
  double normal();

 private:
  void refill();

  uint32_t key_[2];
  uint32_t base_[3];  // counter words 1..3: a, b, (iter<<4)|purpose
  uint32_t block_ = 0;
  uint32_t buf_[4];
  int pos_ = 4;
};

// Simple random sample without replacement: s distinct values from
// {0, ..., n-1}, returned sorted ascending. Partial Fisher-Yates; consumes
// exactly s bounded draws from the stream.
std::vector<int> sample_without_replacement(int n, int s, Stream& stream);

}  // namespace pame::rng
