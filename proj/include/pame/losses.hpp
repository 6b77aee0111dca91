#pragma once

// Synthetic convex benchmarks: sparse-truth linear regression and
// ridge-regularized logistic regression, sharded across nodes (IID,
// feature-shift, or label-skew). Also the two smoothness/variability
// estimates the setup validation needs: the gradient Lipschitz bound alpha_i
// and the sampled batch-variability bound epsilon_hat.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace pame::losses {

enum class LossKind { LinearRegression, Logistic };

const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::LinearRegression;
  double ridge = 0.0;  // l2 coefficient; only sensible for logistic
};

struct Dataset {
  int node_id = 0;
  int dim = 0;
  std::vector<double> features;  // row-major sample_count x dim
  std::vector<double> targets;   // length sample_count

  int sample_count() const { return dim == 0 ? 0 : int(targets.size()); }
  std::span<const double> row(int r) const {
    return {features.data() + size_t(r) * dim, size_t(dim)};
  }
};

struct GroundTruth {
  std::vector<double> w_star;
  int nonzeros = 0;
};

enum class ShardPolicy { IID, FeatureShift, LabelSkew };

const char* shard_policy_name(ShardPolicy policy);
ShardPolicy shard_policy_from_name(const std::string& name);

struct ShardSpec {
  ShardPolicy policy = ShardPolicy::IID;
  int label_skew_c = 2;  // max distinct labels per node; c >= 2 is IID here
};

struct ProblemData {
  GroundTruth truth;
  std::vector<Dataset> shards;  // one per node
};

// Linear regression: features N(0,1) (feature-shift scales node i's rows by
// 1 + 0.5*i/m), targets <a, w*> + noise_scale * e with e ~ N(0,1).
// w* has ceil(sparsity*n) nonzeros, uniform magnitude in [0.5, 2], random sign.
ProblemData gen_linear_regression(int n, int samples_per_node, int m,
                                  double sparsity, double noise_scale,
                                  const ShardSpec& shard, uint64_t seed);

// Logistic: features N(0,1), labels Bernoulli(sigmoid(<a, w*>)).
// Label-skew with c=1 gives the first ceil(m/2) nodes only label 0 and the
// rest only label 1, via rejection sampling.
ProblemData gen_logistic(int n, int samples_per_node, int m, double sparsity,
                         const ShardSpec& shard, uint64_t seed);

// Full-dataset objective value f_i(w).
double loss_value(const LossSpec& spec, const Dataset& ds,
                  std::span<const double> w);

// Mini-batch gradient (1/|B|) sum over batch rows; batch holds row indices.
// Throws EmptyBatch when batch is empty, DimensionMismatch on bad sizes.
std::vector<double> gradient(const LossSpec& spec, const Dataset& ds,
                             std::span<const double> w,
                             std::span<const int> batch);

// Full-batch gradient (all rows).
std::vector<double> gradient(const LossSpec& spec, const Dataset& ds,
                             std::span<const double> w);

// Upper bound on the gradient Lipschitz constant: lambda_max(A^T A / N) for
// linear regression, lambda_max(A^T A / N)/4 + ridge for logistic. Power
// iteration through A (deterministic).
double lipschitz_bound(const LossSpec& spec, const Dataset& ds);

// Sampled stand-in for the batch-variability bound: max over `trials` draws
// of ||grad(w; B) - grad(w; B')||_inf with w uniform in [-2*delta, 2*delta]^n
// and B, B' independent uniform-size SRSWOR batches. Deterministic in seed;
// monotone nondecreasing in trials for a fixed seed.
double epsilon_estimate(const LossSpec& spec,
                        const std::vector<Dataset>& shards, double delta,
                        int trials, uint64_t seed);

// One CSV per node (feature_0..feature_{n-1},target) plus manifest.json.
void write_datasets_csv(const ProblemData& problem, const LossSpec& spec,
                        const std::string& out_dir);
Dataset read_dataset_csv(const std::string& path, int node_id);

nlohmann::json problem_manifest(const ProblemData& problem,
                                const LossSpec& spec);

}  // namespace pame::losses
