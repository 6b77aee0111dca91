#include "pame/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pame/error.hpp"
#include "pame/rng.hpp"

namespace pame::losses {

using pame::Error;
using pame::ErrorCode;

const char* loss_kind_name(LossKind kind) {
  return kind == LossKind::LinearRegression ? "linear_regression" : "logistic";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "linear_regression") return LossKind::LinearRegression;
  if (name == "logistic") return LossKind::Logistic;
  throw Error(ErrorCode::ConfigError, "unknown loss kind '" + name + "'");
}

const char* shard_policy_name(ShardPolicy policy) {
  switch (policy) {
    case ShardPolicy::IID: return "iid";
    case ShardPolicy::FeatureShift: return "feature_shift";
    case ShardPolicy::LabelSkew: return "label_skew";
  }
  return "iid";
}

ShardPolicy shard_policy_from_name(const std::string& name) {
  if (name == "iid") return ShardPolicy::IID;
  if (name == "feature_shift") return ShardPolicy::FeatureShift;
  if (name == "label_skew") return ShardPolicy::LabelSkew;
  throw Error(ErrorCode::ConfigError, "unknown shard policy '" + name + "'");
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

void check_gen_args(int n, int spn, int m, double sparsity) {
  if (n < 1 || spn < 1 || m < 1)
    throw Error(ErrorCode::InvalidDimension,
                "need n >= 1, samples_per_node >= 1, m >= 1");
  if (!(sparsity >= 0.0 && sparsity <= 1.0))
    throw Error(ErrorCode::ConfigError, "sparsity must lie in [0, 1]");
}

GroundTruth gen_truth(int n, double sparsity, uint64_t seed) {
  GroundTruth truth;
  truth.w_star.assign(n, 0.0);
  truth.nonzeros = std::min(n, int(std::ceil(sparsity * n)));
  if (truth.nonzeros == 0) return truth;
  rng::Stream stream(seed, rng::Purpose::GroundTruth);
  const std::vector<int> support =
      rng::sample_without_replacement(n, truth.nonzeros, stream);
  for (int idx : support) {
    const double mag = stream.uniform(0.5, 2.0);
    truth.w_star[idx] = stream.below(2) == 1 ? mag : -mag;
  }
  return truth;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

ProblemData gen_linear_regression(int n, int samples_per_node, int m,
                                  double sparsity, double noise_scale,
                                  const ShardSpec& shard, uint64_t seed) {
  check_gen_args(n, samples_per_node, m, sparsity);
  if (shard.policy == ShardPolicy::LabelSkew)
    throw Error(ErrorCode::ConfigError,
                "label_skew sharding only applies to logistic data");
  ProblemData problem;
  problem.truth = gen_truth(n, sparsity, seed);
  problem.shards.resize(m);
  for (int i = 0; i < m; ++i) {
    rng::Stream feat(seed, rng::Purpose::Features, uint32_t(i));
    rng::Stream noise(seed, rng::Purpose::Noise, uint32_t(i));
    const double scale = shard.policy == ShardPolicy::FeatureShift
                             ? 1.0 + 0.5 * double(i) / double(m)
                             : 1.0;
    Dataset& ds = problem.shards[i];
    ds.node_id = i;
    ds.dim = n;
    ds.features.resize(size_t(samples_per_node) * n);
    ds.targets.resize(samples_per_node);
    for (int r = 0; r < samples_per_node; ++r) {
      double* row = ds.features.data() + size_t(r) * n;
      for (int t = 0; t < n; ++t) row[t] = scale * feat.normal();
      ds.targets[r] = dot({row, size_t(n)}, problem.truth.w_star) +
                      noise_scale * noise.normal();
    }
  }
  return problem;
}

ProblemData gen_logistic(int n, int samples_per_node, int m, double sparsity,
                         const ShardSpec& shard, uint64_t seed) {
  check_gen_args(n, samples_per_node, m, sparsity);
  if (shard.policy == ShardPolicy::FeatureShift)
    throw Error(ErrorCode::ConfigError,
                "feature_shift sharding only applies to linear data");
  const bool skew = shard.policy == ShardPolicy::LabelSkew && shard.label_skew_c < 2;
  ProblemData problem;
  problem.truth = gen_truth(n, sparsity, seed);
  problem.shards.resize(m);
  for (int i = 0; i < m; ++i) {
    rng::Stream feat(seed, rng::Purpose::Features, uint32_t(i));
    rng::Stream lab(seed, rng::Purpose::Labels, uint32_t(i));
    // With c=1 each node holds a single label: 0 on the first half, 1 after.
    const double want = skew ? (i < (m + 1) / 2 ? 0.0 : 1.0) : -1.0;
    Dataset& ds = problem.shards[i];
    ds.node_id = i;
    ds.dim = n;
    ds.features.resize(size_t(samples_per_node) * n);
    ds.targets.resize(samples_per_node);
    std::vector<double> row(n);
    const int64_t draw_cap = int64_t(10000) * samples_per_node;
    int64_t draws = 0;
    for (int r = 0; r < samples_per_node; ++r) {
      for (;;) {
        if (++draws > draw_cap)
          throw Error(ErrorCode::ConfigError,
                      "label-skew rejection sampling exhausted its draw cap");
        for (int t = 0; t < n; ++t) row[t] = feat.normal();
        const double p = sigmoid(dot(row, problem.truth.w_star));
        const double label = lab.uniform() < p ? 1.0 : 0.0;
        if (want >= 0.0 && label != want) continue;
        std::copy(row.begin(), row.end(),
                  ds.features.begin() + size_t(r) * n);
        ds.targets[r] = label;
        break;
      }
    }
  }
  return problem;
}

namespace {

void check_w(const Dataset& ds, std::span<const double> w) {
  if (int(w.size()) != ds.dim)
    throw Error(ErrorCode::DimensionMismatch,
                "w has dim " + std::to_string(w.size()) + ", dataset has " +
                    std::to_string(ds.dim));
}

}  // namespace

double loss_value(const LossSpec& spec, const Dataset& ds,
                  std::span<const double> w) {
  check_w(ds, w);
  const int N = ds.sample_count();
  if (N == 0) throw Error(ErrorCode::EmptyBatch, "dataset has no samples");
  double acc = 0.0;
  if (spec.kind == LossKind::LinearRegression) {
    for (int r = 0; r < N; ++r) {
      const double resid = dot(ds.row(r), w) - ds.targets[r];
      acc += resid * resid;
    }
    acc /= 2.0 * N;
  } else {
    for (int r = 0; r < N; ++r) {
      const double z = dot(ds.row(r), w);
      acc += softplus(z) - ds.targets[r] * z;
    }
    acc /= N;
  }
  if (spec.ridge != 0.0) acc += 0.5 * spec.ridge * dot(w, w);
  if (!std::isfinite(acc))
    throw Error(ErrorCode::NonFiniteValue, "loss value is not finite");
  return acc;
}

std::vector<double> gradient(const LossSpec& spec, const Dataset& ds,
                             std::span<const double> w,
                             std::span<const int> batch) {
  check_w(ds, w);
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "empty batch");
  std::vector<double> g(ds.dim, 0.0);
  for (int r : batch) {
    if (r < 0 || r >= ds.sample_count())
      throw Error(ErrorCode::DimensionMismatch,
                  "batch row " + std::to_string(r) + " out of range");
    const auto row = ds.row(r);
    const double z = dot(row, w);
    const double coeff = spec.kind == LossKind::LinearRegression
                             ? z - ds.targets[r]
                             : sigmoid(z) - ds.targets[r];
    for (int t = 0; t < ds.dim; ++t) g[t] += coeff * row[t];
  }
  const double inv = 1.0 / double(batch.size());
  for (int t = 0; t < ds.dim; ++t) {
    g[t] *= inv;
    if (spec.ridge != 0.0) g[t] += spec.ridge * w[t];
  }
  return g;
}

std::vector<double> gradient(const LossSpec& spec, const Dataset& ds,
                             std::span<const double> w) {
  std::vector<int> all(ds.sample_count());
  for (int r = 0; r < int(all.size()); ++r) all[r] = r;
  return gradient(spec, ds, w, all);
}

double lipschitz_bound(const LossSpec& spec, const Dataset& ds) {
  const int n = ds.dim, N = ds.sample_count();
  if (N == 0) throw Error(ErrorCode::EmptyBatch, "dataset has no samples");
  // lambda_max(A^T A / N) by power iteration through A (never forms A^T A).
  rng::Stream stream(0xa1fa, rng::Purpose::Generic);
  std::vector<double> v(n), Av(N), AtAv(n);
  for (double& x : v) x = stream.uniform(-1.0, 1.0);
  double lambda = 0.0, prev = -1.0;
  for (int it = 0; it < 10000; ++it) {
    for (int r = 0; r < N; ++r) Av[r] = dot(ds.row(r), v);
    std::fill(AtAv.begin(), AtAv.end(), 0.0);
    for (int r = 0; r < N; ++r) {
      const auto row = ds.row(r);
      for (int t = 0; t < n; ++t) AtAv[t] += Av[r] * row[t];
    }
    double norm = 0.0;
    for (double x : AtAv) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      lambda = 0.0;
      break;
    }
    lambda = norm / std::sqrt(dot(v, v)) / N;
    for (int t = 0; t < n; ++t) v[t] = AtAv[t] / norm;
    if (prev >= 0.0 && std::abs(lambda - prev) <= 1e-13 * std::max(1.0, lambda))
      break;
    prev = lambda;
  }
  return spec.kind == LossKind::LinearRegression ? lambda
                                                 : 0.25 * lambda + spec.ridge;
}

double epsilon_estimate(const LossSpec& spec,
                        const std::vector<Dataset>& shards, double delta,
                        int trials, uint64_t seed) {
  if (shards.empty()) throw Error(ErrorCode::InvalidDimension, "no shards");
  if (trials < 1) throw Error(ErrorCode::InvalidSize, "trials must be >= 1");
  if (!(delta > 0.0)) throw Error(ErrorCode::ConfigError, "delta must be > 0");
  const int n = shards[0].dim;
  rng::Stream stream(seed, rng::Purpose::EpsilonProbe);
  std::vector<double> w(n);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    for (const Dataset& ds : shards) {
      const int N = ds.sample_count();
      for (double& x : w) x = stream.uniform(-2.0 * delta, 2.0 * delta);
      const int q1 = 1 + int(stream.below(uint64_t(N)));
      const auto b1 = rng::sample_without_replacement(N, q1, stream);
      const int q2 = 1 + int(stream.below(uint64_t(N)));
      const auto b2 = rng::sample_without_replacement(N, q2, stream);
      const auto g1 = gradient(spec, ds, w, b1);
      const auto g2 = gradient(spec, ds, w, b2);
      for (int i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(g1[i] - g2[i]));
    }
  }
  return worst;
}

void write_datasets_csv(const ProblemData& problem, const LossSpec& spec,
                        const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  char buf[32];
  for (const Dataset& ds : problem.shards) {
    std::ofstream out(fs::path(out_dir) /
                      ("node_" + std::to_string(ds.node_id) + ".csv"));
    for (int t = 0; t < ds.dim; ++t) out << "feature_" << t << ",";
    out << "target\n";
    for (int r = 0; r < ds.sample_count(); ++r) {
      const auto row = ds.row(r);
      for (int t = 0; t < ds.dim; ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", row[t]);
        out << buf << ",";
      }
      std::snprintf(buf, sizeof buf, "%.17g", ds.targets[r]);
      out << buf << "\n";
    }
  }
  std::ofstream mout(fs::path(out_dir) / "manifest.json");
  mout << problem_manifest(problem, spec).dump(2) << "\n";
}

Dataset read_dataset_csv(const std::string& path, int node_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorCode::ConfigError, "empty CSV " + path);
  const int cols = int(std::count(line.begin(), line.end(), ',')) + 1;
  Dataset ds;
  ds.node_id = node_id;
  ds.dim = cols - 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (int(vals.size()) != cols)
      throw Error(ErrorCode::DimensionMismatch, "ragged CSV row in " + path);
    ds.features.insert(ds.features.end(), vals.begin(), vals.end() - 1);
    ds.targets.push_back(vals.back());
  }
  return ds;
}

nlohmann::json problem_manifest(const ProblemData& problem,
                                const LossSpec& spec) {
  nlohmann::json j;
  j["loss"] = loss_kind_name(spec.kind);
  j["ridge"] = spec.ridge;
  j["m"] = int(problem.shards.size());
  j["n"] = problem.shards.empty() ? 0 : problem.shards[0].dim;
  j["samples_per_node"] =
      problem.shards.empty() ? 0 : problem.shards[0].sample_count();
  j["truth_nonzeros"] = problem.truth.nonzeros;
  nlohmann::json files = nlohmann::json::array();
  for (const Dataset& ds : problem.shards)
    files.push_back("node_" + std::to_string(ds.node_id) + ".csv");
  j["files"] = files;
  return j;
}

}  // namespace pame::losses
