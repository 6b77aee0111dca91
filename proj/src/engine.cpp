#include "pame/engine.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "pame/error.hpp"
#include "pame/parallel.hpp"
#include "pame/pme.hpp"
#include "pame/rng.hpp"

namespace pame::engine {

using pame::Error;
using pame::ErrorCode;

const char* run_mode_name(RunMode mode) {
  return mode == RunMode::PaME ? "pame" : "dpsgd";
}

RunMode run_mode_from_name(const std::string& name) {
  std::string lower(name);
  for (char& c : lower) c = char(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "pame") return RunMode::PaME;
  if (lower == "dpsgd") return RunMode::DPSGD;
  throw Error(ErrorCode::ConfigError, "unknown run mode '" + name + "'");
}

namespace {

constexpr int64_t kMaxIterCap = int64_t(1) << 28;  // k is packed into streams

template <class T>
std::vector<T> expand_per_node(const std::vector<T>& v, int m,
                               const char* what) {
  if (v.size() == 1) return std::vector<T>(m, v[0]);
  if (int(v.size()) == m) return v;
  throw Error(ErrorCode::ConfigError,
              std::string(what) + " must be a scalar or one value per node");
}

int64_t lcm_saturating(int64_t a, int64_t b, int64_t cap) {
  const int64_t g = std::gcd(a, b);
  const int64_t l = a / g * b;
  return l > cap ? cap : l;
}

}  // namespace

Simulation prepare(const RunConfig& cfg) {
  if (cfg.m < 2)
    throw Error(ErrorCode::InvalidTopology,
                "need at least two nodes, got m=" + std::to_string(cfg.m));
  if (cfg.n < 1) throw Error(ErrorCode::InvalidDimension, "need n >= 1");
  if (cfg.samples_per_node < 1)
    throw Error(ErrorCode::ConfigError, "samples_per_node must be >= 1");
  if (!(cfg.gamma >= 1.0))
    throw Error(ErrorCode::ConfigError, "gamma must be >= 1");
  if (!(cfg.sigma0 > 0.0))
    throw Error(ErrorCode::ConfigError, "sigma0 must be > 0");
  if (!(cfg.delta > 0.0))
    throw Error(ErrorCode::ConfigError, "delta must be > 0");
  if (!(cfg.batch_fraction > 0.0 && cfg.batch_fraction <= 1.0))
    throw Error(ErrorCode::ConfigError, "batch_fraction must lie in (0, 1]");
  if (cfg.kappa_lo < 1 || cfg.kappa_hi < cfg.kappa_lo)
    throw Error(ErrorCode::ConfigError, "kappa range needs 1 <= lo <= hi");
  if (cfg.max_iters < 1 || cfg.max_iters >= kMaxIterCap)
    throw Error(ErrorCode::ConfigError, "max_iters out of range");
  if (cfg.mode == RunMode::DPSGD && !(cfg.dpsgd_lr >= 0.0))
    throw Error(ErrorCode::ConfigError,
                "dpsgd_lr must be >= 0 (0 = pure gossip)");

  Simulation sim;
  sim.cfg = cfg;
  if (cfg.graph) {
    sim.graph = *cfg.graph;
    topology::validate_graph(sim.graph);
    if (sim.graph.node_count != cfg.m)
      throw Error(ErrorCode::ConfigError,
                  "supplied graph has " + std::to_string(sim.graph.node_count) +
                      " nodes, config says m=" + std::to_string(cfg.m));
  } else {
    sim.graph = topology::build_graph(cfg.graph_kind, cfg.m, cfg.graph_degree,
                                      cfg.seed, cfg.graph_max_retries);
  }
  for (const auto& nb : sim.graph.neighbors)
    if (nb.empty())
      throw Error(ErrorCode::InvalidTopology, "graph has an isolated node");

  sim.mixing = topology::mixing_entries(sim.graph);
  sim.zeta = topology::spectral_gap(sim.mixing, cfg.m);
  if (sim.zeta >= 1.0 - 1e-10)
    sim.warnings.push_back(
        "mixing matrix has zeta >= 1 (bipartite or disconnected graph); "
        "gossip will not contract");

  sim.loss.kind = cfg.loss_kind;
  sim.loss.ridge = cfg.ridge;
  sim.problem =
      cfg.loss_kind == losses::LossKind::LinearRegression
          ? losses::gen_linear_regression(cfg.n, cfg.samples_per_node, cfg.m,
                                          cfg.sparsity, cfg.noise_scale,
                                          cfg.shard, cfg.seed)
          : losses::gen_logistic(cfg.n, cfg.samples_per_node, cfg.m,
                                 cfg.sparsity, cfg.shard, cfg.seed);

  sim.nu = expand_per_node(cfg.nu, cfg.m, "nu");
  for (double v : sim.nu)
    if (!(v > 0.0 && v <= 1.0))
      throw Error(ErrorCode::ConfigError, "nu values must lie in (0, 1]");
  std::vector<int> s = cfg.s.empty() ? std::vector<int>{cfg.n} : cfg.s;
  sim.s = expand_per_node(s, cfg.m, "s");
  for (int v : sim.s)
    if (v < 1 || v > cfg.n)
      throw Error(ErrorCode::InvalidSize,
                  "s values must lie in [1, n]; got " + std::to_string(v));

  sim.t.resize(cfg.m);
  for (int i = 0; i < cfg.m; ++i) {
    const int deg = int(sim.graph.neighbors[i].size());
    sim.t[i] = std::max(1, int(std::floor(sim.nu[i] * deg)));
  }
  sim.t_min = *std::min_element(sim.t.begin(), sim.t.end());

  sim.kappa.resize(cfg.m);
  if (cfg.kappa_lo == cfg.kappa_hi) {
    std::fill(sim.kappa.begin(), sim.kappa.end(), cfg.kappa_lo);
  } else {
    for (int i = 0; i < cfg.m; ++i) {
      rng::Stream stream(cfg.seed, rng::Purpose::KappaInit, uint32_t(i));
      sim.kappa[i] =
          cfg.kappa_lo + int(stream.below(uint64_t(cfg.kappa_hi - cfg.kappa_lo + 1)));
    }
  }

  if (cfg.k0) {
    if (*cfg.k0 < 1) throw Error(ErrorCode::ConfigError, "k0 must be >= 1");
    sim.k0 = *cfg.k0;
  } else {
    int64_t l = 1;
    for (int k : sim.kappa) l = lcm_saturating(l, k, 1000000);
    sim.k0 = int(l);
  }

  sim.batch_size.resize(cfg.m);
  for (int i = 0; i < cfg.m; ++i) {
    const int N = sim.problem.shards[i].sample_count();
    sim.batch_size[i] =
        std::max(1, int(std::floor(cfg.batch_fraction * double(N))));
  }
  return sim;
}

NodeStates initial_states(const Simulation& sim) {
  NodeStates st;
  st.m = sim.cfg.m;
  st.n = sim.cfg.n;
  st.w.assign(size_t(st.m) * st.n, 0.0);
  st.vbar.assign(size_t(st.m) * st.n, 0.0);
  st.sigma.assign(st.m, sim.cfg.sigma0);
  return st;
}

namespace {

std::span<const double> row_of(const std::vector<double>& flat, int n, int i) {
  return {flat.data() + size_t(i) * n, size_t(n)};
}

// Mean iterate and network objective f(mean) = sum_i f_i(mean).
std::vector<double> mean_iterate(const std::vector<double>& w, int m, int n) {
  std::vector<double> mean(n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* row = w.data() + size_t(i) * n;
    for (int t = 0; t < n; ++t) mean[t] += row[t];
  }
  for (double& x : mean) x /= m;
  return mean;
}

double consensus_error(const std::vector<double>& w,
                       const std::vector<double>& mean, int m, int n) {
  double acc = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* row = w.data() + size_t(i) * n;
    for (int t = 0; t < n; ++t) {
      const double d = row[t] - mean[t];
      acc += d * d;
    }
  }
  return acc;
}

std::vector<int> batch_for(const Simulation& sim, int i, int64_t k) {
  const int N = sim.problem.shards[i].sample_count();
  const int size = sim.batch_size[i];
  std::vector<int> batch;
  if (size >= N) {
    batch.resize(N);
    std::iota(batch.begin(), batch.end(), 0);  // full batch: no draws
  } else {
    rng::Stream stream(sim.cfg.seed, rng::Purpose::BatchSelect, uint32_t(i), 0,
                       uint64_t(k));
    batch = rng::sample_without_replacement(N, size, stream);
  }
  return batch;
}

void check_finite_row(std::span<const double> row, int node, int64_t k) {
  for (double v : row)
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteValue,
                  "iterate of node " + std::to_string(node) +
                      " diverged at iteration " + std::to_string(k));
}

struct StepScratch {
  std::vector<double> w_next;
  std::vector<double> obj_terms;    // f_i(mean) per node
  std::vector<double> merit_terms;  // H^k contribution per node
  std::vector<int64_t> bits;
  std::vector<char> comm;
};

}  // namespace

MetricsRecord pame_step(const Simulation& sim, NodeStates& states, int64_t k,
                        int threads) {
  const auto t_start = std::chrono::steady_clock::now();
  const int m = states.m, n = states.n;
  if (k < 0 || k >= kMaxIterCap)
    throw Error(ErrorCode::ConfigError, "iteration index out of range");

  const std::vector<double> mean = mean_iterate(states.w, m, n);

  StepScratch sc;
  sc.w_next.assign(size_t(m) * n, 0.0);
  sc.obj_terms.assign(m, 0.0);
  sc.merit_terms.assign(m, 0.0);
  sc.bits.assign(m, 0);
  sc.comm.assign(m, 0);

  parallel_for(m, threads, [&](int i) {
    const auto& shard = sim.problem.shards[i];
    const auto w_i = row_of(states.w, n, i);
    double* vbar_i = states.vbar.data() + size_t(i) * n;
    double* next_i = sc.w_next.data() + size_t(i) * n;

    // Gossip: at k = 0 mod kappa_i the receiver pulls a fresh sparse message
    // from each of t_i uniformly chosen neighbors; otherwise vbar stays at
    // the local iterate.
    if (k % sim.kappa[i] == 0) {
      sc.comm[i] = 1;
      const auto& nbrs = sim.graph.neighbors[i];
      rng::Stream sel(sim.cfg.seed, rng::Purpose::NeighborSelect, uint32_t(i),
                      0, uint64_t(k));
      const std::vector<int> picks =
          rng::sample_without_replacement(int(nbrs.size()), sim.t[i], sel);
      std::vector<pme::SparseMessage> inbox;
      inbox.reserve(picks.size());
      for (int p : picks) {
        const int j = nbrs[p];
        rng::Stream coords(sim.cfg.seed, rng::Purpose::CoordSelect,
                           uint32_t(j), uint32_t(i), uint64_t(k));
        inbox.push_back(
            pme::make_sparse_message(j, row_of(states.w, n, j), sim.s[j], coords));
        sc.bits[i] += pme::bit_cost(inbox.back());
      }
      const pme::AggregationResult agg = pme::aggregate(w_i, inbox);
      std::copy(agg.vbar.begin(), agg.vbar.end(), vbar_i);
    } else {
      std::copy(w_i.begin(), w_i.end(), vbar_i);
    }

    // Local update: w = vbar - grad(vbar; batch) / (sigma^k * t_i).
    const std::vector<int> batch = batch_for(sim, i, k);
    const std::vector<double> g =
        losses::gradient(sim.loss, shard, {vbar_i, size_t(n)}, batch);
    const double scale = 1.0 / (states.sigma[i] * double(sim.t[i]));
    for (int t = 0; t < n; ++t) next_i[t] = vbar_i[t] - scale * g[t];
    check_finite_row({next_i, size_t(n)}, i, k);

    // Merit H^k term: f_i at the *current* iterate plus the penalty.
    double pen = 0.0;
    for (int t = 0; t < n; ++t) {
      const double d = w_i[t] - vbar_i[t];
      pen += d * d;
    }
    sc.merit_terms[i] = losses::loss_value(sim.loss, shard, w_i) +
                        0.5 * states.sigma[i] * double(sim.t[i]) * pen;
    sc.obj_terms[i] = losses::loss_value(sim.loss, shard, mean);
  });

  MetricsRecord rec;
  rec.iter = k;
  rec.consensus_err = consensus_error(states.w, mean, m, n);
  for (int i = 0; i < m; ++i) {
    rec.objective += sc.obj_terms[i];
    rec.merit += sc.merit_terms[i];
    rec.bits += sc.bits[i];
    if (sc.comm[i]) rec.comm_round = true;
  }

  states.w.swap(sc.w_next);
  for (double& sg : states.sigma) sg *= sim.cfg.gamma;
  rec.wallclock =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return rec;
}

MetricsRecord dpsgd_step(const Simulation& sim, NodeStates& states, int64_t k,
                         int threads) {
  const auto t_start = std::chrono::steady_clock::now();
  const int m = states.m, n = states.n;
  if (k < 0 || k >= kMaxIterCap)
    throw Error(ErrorCode::ConfigError, "iteration index out of range");

  const std::vector<double> mean = mean_iterate(states.w, m, n);

  StepScratch sc;
  sc.w_next.assign(size_t(m) * n, 0.0);
  sc.obj_terms.assign(m, 0.0);
  sc.bits.assign(m, 0);

  parallel_for(m, threads, [&](int i) {
    const auto& shard = sim.problem.shards[i];
    const auto& nbrs = sim.graph.neighbors[i];
    double* mixed = states.vbar.data() + size_t(i) * n;
    double* next_i = sc.w_next.data() + size_t(i) * n;

    // Dense neighborhood average with zero self-weight (column i of B).
    std::fill(mixed, mixed + n, 0.0);
    for (int j : nbrs) {
      const auto w_j = row_of(states.w, n, j);
      for (int t = 0; t < n; ++t) mixed[t] += w_j[t];
    }
    const double inv = 1.0 / double(nbrs.size());
    for (int t = 0; t < n; ++t) mixed[t] *= inv;
    sc.bits[i] = int64_t(nbrs.size()) * 64 * n;

    const std::vector<int> batch = batch_for(sim, i, k);
    const std::vector<double> g = losses::gradient(
        sim.loss, shard, row_of(states.w, n, i), batch);
    for (int t = 0; t < n; ++t)
      next_i[t] = mixed[t] - sim.cfg.dpsgd_lr * g[t];
    check_finite_row({next_i, size_t(n)}, i, k);
    sc.obj_terms[i] = losses::loss_value(sim.loss, shard, mean);
  });

  MetricsRecord rec;
  rec.iter = k;
  rec.comm_round = true;
  rec.consensus_err = consensus_error(states.w, mean, m, n);
  for (int i = 0; i < m; ++i) {
    rec.objective += sc.obj_terms[i];
    rec.bits += sc.bits[i];
  }
  states.w.swap(sc.w_next);
  rec.wallclock =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return rec;
}

RunResult run(const RunConfig& cfg, int threads) {
  const Simulation sim = prepare(cfg);
  NodeStates states = initial_states(sim);

  RunResult result;
  result.m = cfg.m;
  result.n = cfg.n;
  result.warnings = sim.warnings;
  result.status = RunStatus::MaxIters;

  for (int64_t k = 0; k < cfg.max_iters; ++k) {
    if (cfg.record_history) result.history.push_back(states.w);
    const MetricsRecord rec = cfg.mode == RunMode::PaME
                                  ? pame_step(sim, states, k, threads)
                                  : dpsgd_step(sim, states, k, threads);
    result.trajectory.push_back(rec);
    const int64_t count = int64_t(result.trajectory.size());
    if (cfg.stop_std > 0.0 && k >= 2 && count >= cfg.min_iters) {
      const double a = result.trajectory[count - 3].objective;
      const double b = result.trajectory[count - 2].objective;
      const double c = result.trajectory[count - 1].objective;
      const double mu = (a + b + c) / 3.0;
      const double var =
          ((a - mu) * (a - mu) + (b - mu) * (b - mu) + (c - mu) * (c - mu)) / 3.0;
      if (std::sqrt(var) < cfg.stop_std) {
        result.status = RunStatus::Converged;
        break;
      }
    }
  }
  if (cfg.record_history) result.history.push_back(states.w);

  result.final_w = states.w;
  const std::vector<double> mean = mean_iterate(states.w, cfg.m, cfg.n);
  for (int i = 0; i < cfg.m; ++i)
    result.final_objective +=
        losses::loss_value(sim.loss, sim.problem.shards[i], mean);
  double mse = 0.0;
  for (int t = 0; t < cfg.n; ++t) {
    const double d = mean[t] - sim.problem.truth.w_star[t];
    mse += d * d;
  }
  result.mse_to_truth = mse / cfg.n;
  result.total_bits = bits_ledger(result.trajectory).total;
  return result;
}

BitsLedger bits_ledger(const std::vector<MetricsRecord>& trajectory) {
  BitsLedger ledger;
  ledger.per_iter.reserve(trajectory.size());
  for (const auto& rec : trajectory) {
    ledger.per_iter.push_back(rec.bits);
    ledger.total += rec.bits;
  }
  return ledger;
}

SetupReport validate_setup(const RunConfig& cfg) {
  const Simulation sim = prepare(cfg);
  // Hard gate: a non-mixing graph is unusable, not merely out of tune.
  const topology::CommMatrix cm = topology::communication_matrix(sim.graph);

  SetupReport rep;
  rep.zeta = cm.zeta;
  rep.k0 = sim.k0;
  rep.gamma = cfg.gamma;
  rep.sigma0 = cfg.sigma0;
  rep.gamma_max = rep.zeta > 0.0
                      ? std::min(std::pow(rep.zeta, -2.0 / rep.k0), 1e300)
                      : 1e300;
  rep.gamma_admissible = cfg.gamma > 1.0 && cfg.gamma < rep.gamma_max;

  const int s_min = *std::min_element(sim.s.begin(), sim.s.end());
  const double p = double(s_min) / double(cfg.n);
  const double rhs_root = std::pow(cfg.gamma, -0.5 * rep.k0) - rep.zeta;
  const double rhs = rhs_root * rhs_root;
  rep.condition_all = true;
  for (int i = 0; i < cfg.m; ++i) {
    double nu_sum = 0.0;
    for (int j : sim.graph.neighbors[i]) nu_sum += sim.nu[j];
    NodeCondition nc;
    nc.node = i;
    nc.lhs = std::pow(1.0 - p, sim.t[i]) * (1.0 + rep.zeta) * (1.0 + rep.zeta) +
             2.0 * p * nu_sum;
    nc.rhs = rhs;
    nc.pass = rhs_root > 0.0 && nc.lhs < nc.rhs;
    rep.condition_all = rep.condition_all && nc.pass;
    rep.nodes.push_back(nc);
  }

  double alpha_max = 0.0;
  for (int i = 0; i < cfg.m; ++i)
    alpha_max =
        std::max(alpha_max, losses::lipschitz_bound(sim.loss, sim.problem.shards[i]));
  rep.alpha_max = alpha_max;
  rep.eps_hat = losses::epsilon_estimate(sim.loss, sim.problem.shards,
                                         cfg.delta, cfg.epsilon_trials, cfg.seed);
  if (cfg.gamma > 1.0) {
    rep.sigma_required =
        std::max(4.0 * alpha_max,
                 rep.eps_hat * cfg.gamma /
                     ((cfg.gamma - 1.0) * cfg.delta * double(sim.t_min)));
  } else {
    rep.sigma_required = 1e300;  // gamma = 1 has no finite penalty floor
  }
  rep.sigma0_ok = cfg.sigma0 >= rep.sigma_required;
  return rep;
}

nlohmann::json setup_report_json(const SetupReport& rep) {
  nlohmann::json j;
  j["zeta"] = rep.zeta;
  j["k0"] = rep.k0;
  j["gamma"] = rep.gamma;
  j["gamma_max"] = rep.gamma_max;
  j["gamma_admissible"] = rep.gamma_admissible;
  j["alpha_max"] = rep.alpha_max;
  j["eps_hat"] = rep.eps_hat;
  j["sigma_required"] = rep.sigma_required;
  j["sigma0"] = rep.sigma0;
  j["sigma0_ok"] = rep.sigma0_ok;
  j["condition_all"] = rep.condition_all;
  j["pass"] = rep.pass();
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& nc : rep.nodes)
    nodes.push_back({{"node", nc.node},
                     {"lhs", nc.lhs},
                     {"rhs", nc.rhs},
                     {"pass", nc.pass}});
  j["nodes"] = nodes;
  return j;
}

nlohmann::json summary_json(const RunResult& result, double rate_slope,
                            double rate_r2) {
  nlohmann::json j;
  j["status"] =
      result.status == RunStatus::Converged ? "converged" : "max_iters";
  j["iters"] = int64_t(result.trajectory.size());
  j["total_bits"] = result.total_bits;
  j["final_objective"] = result.final_objective;
  j["rate_slope"] = rate_slope;
  j["rate_r2"] = rate_r2;
  return j;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& trajectory) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot open " + path);
  out << "iter,objective,consensus_err,merit,bits,comm_round\n";
  char buf[96];
  for (const auto& rec : trajectory) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%lld,%d\n",
                  (long long)rec.iter, rec.objective, rec.consensus_err,
                  rec.merit, (long long)rec.bits, rec.comm_round ? 1 : 0);
    out << buf;
  }
}

}  // namespace pame::engine
