#pragma once

// Post-run and Monte-Carlo analysis: linear-rate fits on log series, the
// estimator unbiasedness harness, consensus trajectories, the merit-descent
// check, and seeded parameter sweeps.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pame/engine.hpp"

namespace pame::analysis {

struct RateFit {
  double slope = 0.0;  // per-iteration slope of log(series)
  double r2 = 0.0;
  int first = 0, last = 0;  // fitted window, inclusive indices into series
  bool degenerate = false;  // constant series: slope 0, r2 0
};

// OLS of log(series[k]) on k over the middle 50% of the usable range
// (entries above `floor` are usable; values at or below it are treated as
// converged-to-noise and excluded). Throws TooFewPoints when fewer than 10
// usable points remain.
RateFit fit_linear_rate(std::span<const double> series, double floor = 1e-14);

// ||W^k - mean(W^k)||_F^2 for each recorded snapshot (row-major m*n each).
std::vector<double> consensus_trajectory(
    const std::vector<std::vector<double>>& history, int m, int n);

// Largest per-step increase of the surrogate merit
// H_hat^k = merit[k] + c_hat * gamma^{-k}; descent means the result stays
// below a small tolerance.
double max_surrogate_increase(std::span<const double> merit, double gamma,
                              double c_hat);

// Deterministic-mode surrogate constant
// C_hat = 4*m*n*eps_hat^2*gamma / ((gamma-1)*sigma0*t_min).
double surrogate_constant(int m, int n, double eps_hat, double gamma,
                          double sigma0, int t_min);

struct UnbiasednessReport {
  int q = 0, n = 0, s = 0;
  int64_t trials = 0;
  std::vector<double> target;        // population mean w_bar per coordinate
  std::vector<double> cond_mean;     // mean of vbar | lambda > 0
  std::vector<double> cond_stderr;
  std::vector<int64_t> cond_count;   // trials with lambda > 0
  std::vector<double> naive_mean;    // mean of (1/q) sum of padded messages
  std::vector<double> naive_stderr;
  bool unbiased_pass = false;        // |cond_mean - w_bar| <= 4 stderr, all l
  bool naive_scaled_pass = false;    // |naive_mean - (s/n) w_bar| <= 4 stderr
  bool naive_biased = false;         // naive mean misses w_bar by > 4 stderr
                                     // on every coordinate with w_bar != scaled
};

// Monte-Carlo check of the occurrence-count estimator: q senders with fixed
// vectors w (q rows of length n) each transmit s uniformly chosen
// coordinates per trial. Deterministic in seed.
UnbiasednessReport unbiasedness_test(const std::vector<std::vector<double>>& w,
                                     int s, int64_t trials, uint64_t seed);

nlohmann::json unbiasedness_json(const UnbiasednessReport& rep);

struct GradcheckReport {
  int trials = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Analytic gradients vs central finite differences (h = 1e-6) on random
// small instances (n <= 20); rel err is ||g_fd - g||_inf / max(1, ||g||_inf).
GradcheckReport gradcheck(losses::LossKind kind, int trials, uint64_t seed,
                          double tol = 1e-5);

struct SrsworCheckReport {
  int instances = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Exhaustive subset enumeration (q <= 8) vs the closed-form SRSWOR variance
// and the second-moment bound, on random integer-valued instances.
SrsworCheckReport srswor_enumeration_check(int instances, uint64_t seed);

enum class SweepAxis { TransmissionRate, ParticipationRate, CommPeriod, Degree };

const char* sweep_axis_name(SweepAxis axis);
SweepAxis sweep_axis_from_name(const std::string& name);

struct SweepCell {
  double axis_value = 0.0;
  uint64_t seed = 0;
  std::string status;  // "converged", "max_iters" or an error code name
  int64_t iters = 0;
  int64_t total_bits = 0;
  double final_objective = 0.0;
  double mse_to_truth = 0.0;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::TransmissionRate;
  std::vector<SweepCell> cells;  // ordered by (value index, seed index)
};

// Runs the template config once per (value, seed) with the axis applied:
//   transmission_rate: s = clamp(round(value * n), 1, n)
//   participation_rate: nu = value
//   comm_period: kappa_lo = kappa_hi = int(value)
//   degree: graph_degree = int(value)
// Cells run in parallel; per-cell failures are recorded, not thrown.
SweepResult sweep(const engine::RunConfig& base, SweepAxis axis,
                  std::span<const double> values,
                  std::span<const uint64_t> seeds, int threads = 1);

// Pinned columns: axis_value,seed,final_objective,iters,total_bits.
void write_sweep_csv(const std::string& path, const SweepResult& result);
nlohmann::json sweep_manifest(const SweepResult& result);

}  // namespace pame::analysis
