#include "pame/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pame/error.hpp"

namespace pame::rng {

namespace {
constexpr uint32_t kMul0 = 0xD2511F53u;
constexpr uint32_t kMul1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;
}  // namespace

Philox4x32Result philox4x32_10(uint32_t c0, uint32_t c1, uint32_t c2,
                               uint32_t c3, uint32_t k0, uint32_t k1) {
  for (int round = 0; round < 10; ++round) {
    const uint64_t p0 = uint64_t(kMul0) * c0;
    const uint64_t p1 = uint64_t(kMul1) * c2;
    const uint32_t hi0 = uint32_t(p0 >> 32), lo0 = uint32_t(p0);
    const uint32_t hi1 = uint32_t(p1 >> 32), lo1 = uint32_t(p1);
    c0 = hi1 ^ c1 ^ k0;
    c1 = lo1;
    c2 = hi0 ^ c3 ^ k1;
    c3 = lo0;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return {{c0, c1, c2, c3}};
}

Stream::Stream(uint64_t seed, Purpose purpose, uint32_t a, uint32_t b,
               uint64_t iteration) {
  key_[0] = uint32_t(seed);
  key_[1] = uint32_t(seed >> 32);
  base_[0] = a;
  base_[1] = b;
  base_[2] = uint32_t((iteration << 4) | uint64_t(purpose));
}

void Stream::refill() {
  const Philox4x32Result r =
      philox4x32_10(block_, base_[0], base_[1], base_[2], key_[0], key_[1]);
  ++block_;
  for (int i = 0; i < 4; ++i) buf_[i] = r.v[i];
  pos_ = 0;
}

uint32_t Stream::next_u32() {
  if (pos_ == 4) refill();
  return buf_[pos_++];
}

uint64_t Stream::next_u64() {
  const uint64_t lo = next_u32();
  const uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double Stream::uniform() {
  return double(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

uint64_t Stream::below(uint64_t bound) {
  if (bound == 0)
    throw Error(ErrorCode::InvalidSize, "below(0) is undefined");
  // Rejection threshold = 2^64 mod bound; accepted range size is a multiple
  // of bound, so the modulo is exactly uniform.
  const uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

double Stream::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

std::vector<int> sample_without_replacement(int n, int s, Stream& stream) {
  if (n <= 0 || s <= 0 || s > n)
    throw Error(ErrorCode::InvalidSize,
                "sample_without_replacement needs 1 <= s <= n, got s=" +
                    std::to_string(s) + " n=" + std::to_string(n));
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < s; ++i) {
    const int j = i + int(stream.below(uint64_t(n - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(s);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace pame::rng
