#include "pame/pme.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "pame/error.hpp"

namespace pame::pme {

using pame::Error;
using pame::ErrorCode;

std::vector<int> sample_coordinates(int n, int s, rng::Stream& stream) {
  return rng::sample_without_replacement(n, s, stream);
}

SparseMessage make_sparse_message(int sender, std::span<const double> w, int s,
                                  rng::Stream& stream) {
  const int n = int(w.size());
  if (n <= 0) throw Error(ErrorCode::InvalidDimension, "empty vector");
  if (s < 1 || s > n)
    throw Error(ErrorCode::InvalidSize,
                "message size s=" + std::to_string(s) + " outside [1, " +
                    std::to_string(n) + "]");
  SparseMessage msg;
  msg.sender = sender;
  msg.dim = n;
  msg.indices = sample_coordinates(n, s, stream);
  msg.values.reserve(msg.indices.size());
  for (int idx : msg.indices) {
    const double v = w[idx];
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteValue,
                  "non-finite value at coordinate " + std::to_string(idx));
    msg.values.push_back(v);
  }
  return msg;
}

int64_t bit_cost(const SparseMessage& msg) {
  // Accounting model of the protocol: one bit per absent coordinate, 64 bits
  // per transmitted nonzero value, 8 bits per transmitted zero (the starred
  // case). At z = 0 this is 63s + n, against 64n for a dense vector.
  int64_t zeros = 0;
  for (double v : msg.values)
    if (v == 0.0) ++zeros;
  const int64_t s = int64_t(msg.values.size());
  return (int64_t(msg.dim) - s) + 64 * (s - zeros) + 8 * zeros;
}

AggregationResult aggregate(std::span<const double> own_w,
                            const std::vector<SparseMessage>& messages) {
  const int n = int(own_w.size());
  if (n <= 0) throw Error(ErrorCode::InvalidDimension, "empty own vector");
  std::set<int> senders;
  AggregationResult out;
  out.vbar.assign(n, 0.0);
  out.lambda.assign(n, 0);
  out.fallback.assign(n, 0);
  std::vector<double> numerator(n, 0.0);
  for (const auto& msg : messages) {
    if (msg.dim != n)
      throw Error(ErrorCode::DimensionMismatch,
                  "message dim " + std::to_string(msg.dim) +
                      " != own dim " + std::to_string(n));
    if (msg.indices.size() != msg.values.size())
      throw Error(ErrorCode::DimensionMismatch,
                  "message indices/values length mismatch");
    if (!senders.insert(msg.sender).second)
      throw Error(ErrorCode::DuplicateSender,
                  "sender " + std::to_string(msg.sender) +
                      " appears twice in one round");
    for (size_t t = 0; t < msg.indices.size(); ++t) {
      const int l = msg.indices[t];
      if (l < 0 || l >= n)
        throw Error(ErrorCode::DimensionMismatch,
                    "coordinate " + std::to_string(l) + " out of range");
      numerator[l] += msg.values[t];
      out.lambda[l] += 1;
    }
  }
  for (int l = 0; l < n; ++l) {
    if (out.lambda[l] > 0) {
      out.vbar[l] = numerator[l] / out.lambda[l];
    } else {
      out.vbar[l] = own_w[l];
      out.fallback[l] = 1;
    }
  }
  return out;
}

SrsworMoments srswor_moments(std::span<const double> x, int r) {
  const int q = int(x.size());
  if (q < 1 || r < 1 || r > q)
    throw Error(ErrorCode::InvalidSize,
                "srswor_moments needs 1 <= r <= q, got r=" + std::to_string(r) +
                    " q=" + std::to_string(q));
  double sum = 0.0, sumsq = 0.0;
  for (double v : x) {
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteValue, "non-finite population value");
    sum += v;
    sumsq += v * v;
  }
  SrsworMoments m;
  m.second_moment_bound = sumsq / q;
  if (q == 1) {
    m.variance = 0.0;
    return m;
  }
  // Single division: for integer-valued x both operands are exact, so the
  // result is the correctly rounded value of the rational.
  m.variance = double(q - r) * (q * sumsq - sum * sum) /
               (double(r) * q * q * (q - 1));
  return m;
}

namespace {

constexpr std::byte kZeroMark{0xFF};

void put_bit(std::vector<std::byte>* buf, size_t bit) {
  (*buf)[bit / 8] |= std::byte(1u << (bit % 8));
}

bool get_bit(std::span<const std::byte> buf, size_t bit) {
  return (buf[bit / 8] & std::byte(1u << (bit % 8))) != std::byte{0};
}

}  // namespace

std::vector<std::byte> encode(const SparseMessage& msg) {
  const int n = msg.dim;
  if (n <= 0 || msg.indices.size() != msg.values.size())
    throw Error(ErrorCode::DimensionMismatch, "malformed message");
  std::vector<std::byte> out((size_t(n) + 7) / 8, std::byte{0});
  for (int idx : msg.indices) {
    if (idx < 0 || idx >= n)
      throw Error(ErrorCode::DimensionMismatch, "coordinate out of range");
    put_bit(&out, size_t(idx));
  }
  for (size_t t = 0; t < msg.values.size(); ++t) {
    const double v = msg.values[t];
    if (v == 0.0) {
      out.push_back(kZeroMark);
      continue;
    }
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    if (uint32_t(bits >> 56) == 0xFFu)
      throw Error(ErrorCode::EncodingRange,
                  "value at coordinate " + std::to_string(msg.indices[t]) +
                      " collides with the zero marker");
    for (int b = 7; b >= 0; --b)  // big-endian
      out.push_back(std::byte(uint8_t(bits >> (8 * b))));
  }
  return out;
}

SparseMessage decode(std::span<const std::byte> bytes, int dim, int sender) {
  if (dim <= 0) throw Error(ErrorCode::InvalidDimension, "bad dim");
  const size_t bitmap_bytes = (size_t(dim) + 7) / 8;
  if (bytes.size() < bitmap_bytes)
    throw Error(ErrorCode::DimensionMismatch, "truncated bitmap");
  SparseMessage msg;
  msg.sender = sender;
  msg.dim = dim;
  for (int l = 0; l < dim; ++l)
    if (get_bit(bytes, size_t(l))) msg.indices.push_back(l);
  size_t pos = bitmap_bytes;
  for (size_t t = 0; t < msg.indices.size(); ++t) {
    if (pos >= bytes.size())
      throw Error(ErrorCode::DimensionMismatch, "truncated payload");
    if (bytes[pos] == kZeroMark) {
      msg.values.push_back(0.0);
      ++pos;
      continue;
    }
    if (pos + 8 > bytes.size())
      throw Error(ErrorCode::DimensionMismatch, "truncated payload");
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits = (bits << 8) | uint64_t(uint8_t(bytes[pos + b]));
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    msg.values.push_back(v);
  }
  return msg;
}

nlohmann::json message_to_json(const SparseMessage& msg) {
  nlohmann::json j;
  j["sender"] = msg.sender;
  j["dim"] = msg.dim;
  j["indices"] = msg.indices;
  j["values"] = msg.values;
  j["bits"] = bit_cost(msg);
  return j;
}

}  // namespace pame::pme
