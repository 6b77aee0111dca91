#pragma once

// Partial message exchange: uniform coordinate subsampling, the
// occurrence-count (lambda) averaging rule, exact bit accounting, and the
// wire codec.
//
// The key convention: a sender transmits the *values* of s uniformly chosen
// coordinates, including explicit zeros (the "starred zero" of the protocol).
// A transmitted zero contributes 0 to the numerator and 1 to the occurrence
// count of its coordinate, which is what keeps the estimator conditionally
// unbiased. Zeros ride the wire in 8 bits instead of 64.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pame/rng.hpp"

namespace pame::pme {

struct SparseMessage {
  int sender = -1;
  int dim = 0;                 // n of the full vector
  std::vector<int> indices;    // sorted ascending, distinct, size s
  std::vector<double> values;  // aligned with indices; zeros allowed
};

// SRSWOR of s coordinates out of {0..n-1}, sorted. Each coordinate has
// inclusion probability exactly s/n.
std::vector<int> sample_coordinates(int n, int s, rng::Stream& stream);

// Samples s coordinates of w and packages them. Throws InvalidSize unless
// 1 <= s <= n, NonFiniteValue if a selected entry is NaN/Inf.
SparseMessage make_sparse_message(int sender, std::span<const double> w, int s,
                                  rng::Stream& stream);

// Protocol bit accounting: (n - s) one-bit absence marks + 64 bits per
// nonzero selected value + 8 bits per zero-valued selected coordinate, i.e.
// 63s + n when no selected value is zero (dense costs 64n).
int64_t bit_cost(const SparseMessage& msg);

struct AggregationResult {
  std::vector<double> vbar;   // partial average, length n
  std::vector<int> lambda;    // occurrence counts, length n
  std::vector<char> fallback; // 1 where lambda == 0 and own value was kept
};

// Occurrence-count averaging: vbar[l] = sum of transmitted values / lambda[l]
// when lambda[l] > 0, else own_w[l]. Messages must have distinct senders and
// dim == own_w.size().
AggregationResult aggregate(std::span<const double> own_w,
                            const std::vector<SparseMessage>& messages);

struct SrsworMoments {
  double variance;             // Var(mean of r draws SRSWOR from x)
  double second_moment_bound;  // (1/q) * sum x_j^2, bound on E[mean^2]
};

// Exact finite-population moments of the SRSWOR sample mean: for x of size q
// and 1 <= r <= q,
//   Var = (q - r) * (q*sum(x^2) - (sum x)^2) / (r * q^2 * (q - 1)),
// computed as a single division so that integer-valued inputs produce the
// correctly rounded value of the underlying rational. For q == 1 the variance
// is 0.
SrsworMoments srswor_moments(std::span<const double> x, int r);

// Wire codec (practical container, byte-aligned): [n-bit bitmap][big-endian
// binary64 per nonzero selected value, coordinate order][0xFF marker byte per
// zero-valued selected coordinate, coordinate order], zero-padded to a byte
// boundary. Its payload is s bits larger than bit_cost's accounting model
// (the bitmap spends a bit on selected coordinates too, which keeps it
// decodable). encode throws EncodingRange for values whose big-endian leading
// byte is 0xFF (|v| >= 2^1009, -inf, some NaNs): those would collide with the
// zero marker. Iterates bounded by 2*delta never get near that.
std::vector<std::byte> encode(const SparseMessage& msg);
SparseMessage decode(std::span<const std::byte> bytes, int dim, int sender);

nlohmann::json message_to_json(const SparseMessage& msg);

}  // namespace pame::pme
