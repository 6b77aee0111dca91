#pragma once

// The simulator: synchronized-clock gossip with partial message exchange,
// plus a dense decentralized SGD baseline on the same topology.
//
// Semantics are snapshot-synchronous: iteration k reads only state W^k, so
// node processing order (and thread count) cannot change any result. All
// randomness is drawn from counter-based streams keyed by
// (seed, purpose, ids, k); see rng.hpp.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pame/losses.hpp"
#include "pame/topology.hpp"

namespace pame::engine {

enum class RunMode { PaME, DPSGD };

const char* run_mode_name(RunMode mode);
RunMode run_mode_from_name(const std::string& name);

struct RunConfig {
  int m = 8;
  int n = 50;
  uint64_t seed = 0;

  // Topology. `graph` overrides generation when set (node_count must be m).
  topology::GraphKind graph_kind = topology::GraphKind::Complete;
  int graph_degree = 0;
  int graph_max_retries = 1000;
  std::optional<topology::Graph> graph;

  // Data.
  losses::LossKind loss_kind = losses::LossKind::LinearRegression;
  double ridge = 0.0;
  int samples_per_node = 50;
  double sparsity = 0.01;
  double noise_scale = 0.5;
  losses::ShardSpec shard;

  // Algorithm.
  RunMode mode = RunMode::PaME;
  std::vector<double> nu = {0.2};  // size 1 (homogeneous) or m
  std::vector<int> s = {};         // size 1 or m; empty means s = n (dense)
  double gamma = 1.005;
  double sigma0 = 1.0;
  int kappa_lo = 1, kappa_hi = 1;  // lo == hi: homogeneous period
  std::optional<int> k0;           // default: homogeneous kappa, else lcm
  double delta = 2.0;              // iterate bound scale for validation
  double batch_fraction = 1.0;     // 1.0 = full batch, consumes no RNG draws
  double dpsgd_lr = 0.05;

  // Control.
  int64_t max_iters = 5000;
  int64_t min_iters = 3;
  double stop_std = 1e-3;  // population std of 3 trailing objectives; 0 = off
  bool record_history = false;
  int epsilon_trials = 200;  // draws for the epsilon_hat estimate
};

// Immutable per-run setup: graph, data, per-node derived parameters.
struct Simulation {
  RunConfig cfg;
  topology::Graph graph;
  std::vector<double> mixing;  // dense B entries, row-major m*m
  double zeta = 0.0;
  losses::LossSpec loss;
  losses::ProblemData problem;
  std::vector<double> nu;     // expanded, size m
  std::vector<int> s;         // expanded, size m
  std::vector<int> t;         // t_i = max(1, floor(nu_i * |N_i|))
  std::vector<int> kappa;     // size m
  std::vector<int> batch_size;
  int t_min = 1;
  int k0 = 1;
  std::vector<std::string> warnings;
};

Simulation prepare(const RunConfig& cfg);

struct NodeStates {
  int m = 0, n = 0;
  std::vector<double> w;      // row-major m*n, W^k
  std::vector<double> vbar;   // row-major m*n, last computed vbar
  std::vector<double> sigma;  // per-node sigma^k (identical across nodes)
};

NodeStates initial_states(const Simulation& sim);  // W^0 = 0, sigma = sigma0

struct MetricsRecord {
  int64_t iter = 0;
  double objective = 0.0;      // f(mean iterate) at W^k, summed over nodes
  double consensus_err = 0.0;  // ||W^k - mean||_F^2
  double merit = 0.0;          // H^k (computable part); 0 for the baseline
  int64_t bits = 0;            // bits received network-wide during step k
  bool comm_round = false;
  double wallclock = 0.0;      // seconds spent in the step
};

// One synchronized iteration W^k -> W^{k+1}. Returns the record for k.
MetricsRecord pame_step(const Simulation& sim, NodeStates& states, int64_t k,
                        int threads = 1);
// Dense baseline: every node mixes all neighbors every iteration
// (64n bits per received message) and takes a constant-lr gradient step.
MetricsRecord dpsgd_step(const Simulation& sim, NodeStates& states, int64_t k,
                         int threads = 1);

enum class RunStatus { Converged, MaxIters };

struct RunResult {
  RunStatus status = RunStatus::MaxIters;
  int m = 0, n = 0;
  std::vector<MetricsRecord> trajectory;
  std::vector<double> final_w;                 // m*n after the last step
  std::vector<std::vector<double>> history;    // W^0..W^end if recorded
  int64_t total_bits = 0;
  double final_objective = 0.0;  // f(mean of final_w)
  double mse_to_truth = 0.0;     // ||mean(final_w) - w*||^2 / n
  std::vector<std::string> warnings;
};

// Runs until the trailing-3 objective std drops below stop_std (population
// std, checked once k >= 2 and at least min_iters iterations ran) or
// max_iters is hit.
RunResult run(const RunConfig& cfg, int threads = 1);

struct BitsLedger {
  int64_t total = 0;
  std::vector<int64_t> per_iter;
};

BitsLedger bits_ledger(const std::vector<MetricsRecord>& trajectory);

// Setup validation: spectral gap, admissible gamma interval, the per-node
// mixing condition, and the penalty floor
// sigma_required = max{4*alpha_max, eps_hat*gamma/((gamma-1)*delta*t_min)}.
struct NodeCondition {
  int node = 0;
  double lhs = 0.0, rhs = 0.0;
  bool pass = false;
};

struct SetupReport {
  double zeta = 0.0;
  int k0 = 1;
  double gamma = 0.0;
  double gamma_max = 0.0;  // admissible interval is (1, gamma_max)
  bool gamma_admissible = false;
  std::vector<NodeCondition> nodes;
  bool condition_all = false;
  double alpha_max = 0.0;
  double eps_hat = 0.0;
  double sigma_required = 0.0;
  double sigma0 = 0.0;
  bool sigma0_ok = false;

  bool pass() const { return gamma_admissible && condition_all && sigma0_ok; }
};

// Throws BipartiteOrDisconnected when the mixing matrix cannot contract;
// everything else is reported, not thrown.
SetupReport validate_setup(const RunConfig& cfg);

nlohmann::json setup_report_json(const SetupReport& report);
// rate_slope / rate_r2 come from a separate fit of the objective gap series
// (see analysis::fit_linear_rate); the engine itself does not depend on it.
nlohmann::json summary_json(const RunResult& result, double rate_slope,
                            double rate_r2);

// Pinned columns: iter,objective,consensus_err,merit,bits,comm_round.
// Numbers are written with %.17g so reruns are byte-identical.
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& trajectory);

}  // namespace pame::engine
