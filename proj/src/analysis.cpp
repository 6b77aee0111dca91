#include "pame/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "pame/error.hpp"
#include "pame/parallel.hpp"
#include "pame/pme.hpp"
#include "pame/rng.hpp"

namespace pame::analysis {

using pame::Error;
using pame::ErrorCode;

RateFit fit_linear_rate(std::span<const double> series, double floor) {
  std::vector<int> usable;
  for (int i = 0; i < int(series.size()); ++i)
    if (std::isfinite(series[i]) && series[i] > floor) usable.push_back(i);
  if (int(usable.size()) < 10)
    throw Error(ErrorCode::TooFewPoints,
                "rate fit needs >= 10 points above the floor, got " +
                    std::to_string(usable.size()));
  // Middle 50% of the usable range: trims the transient head and the
  // converged-to-noise tail in one stroke.
  const int lo = int(usable.size()) / 4;
  const int hi = int(usable.size()) - int(usable.size()) / 4;

  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  const int count = hi - lo;
  for (int u = lo; u < hi; ++u) {
    const double x = double(usable[u]);
    const double y = std::log(series[usable[u]]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  RateFit fit;
  fit.first = usable[lo];
  fit.last = usable[hi - 1];
  const double varx = sxx - sx * sx / count;
  const double vary = syy - sy * sy / count;
  const double cov = sxy - sx * sy / count;
  // ymin == ymax catches exactly constant windows that accumulated rounding
  // would otherwise report as a minuscule positive variance.
  if (varx <= 0.0 || ymin == ymax) {
    fit.degenerate = true;
    return fit;
  }
  fit.slope = cov / varx;
  if (vary <= 0.0) {
    // Constant log-series: no trend to explain.
    fit.slope = 0.0;
    fit.r2 = 0.0;
    fit.degenerate = true;
    return fit;
  }
  fit.r2 = (cov * cov) / (varx * vary);
  return fit;
}

std::vector<double> consensus_trajectory(
    const std::vector<std::vector<double>>& history, int m, int n) {
  std::vector<double> out;
  out.reserve(history.size());
  for (const auto& w : history) {
    if (int(w.size()) != m * n)
      throw Error(ErrorCode::DimensionMismatch, "bad snapshot size");
    std::vector<double> mean(n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int t = 0; t < n; ++t) mean[t] += w[size_t(i) * n + t];
    for (double& x : mean) x /= m;
    double acc = 0.0;
    for (int i = 0; i < m; ++i)
      for (int t = 0; t < n; ++t) {
        const double d = w[size_t(i) * n + t] - mean[t];
        acc += d * d;
      }
    out.push_back(acc);
  }
  return out;
}

double surrogate_constant(int m, int n, double eps_hat, double gamma,
                          double sigma0, int t_min) {
  if (!(gamma > 1.0))
    throw Error(ErrorCode::ConfigError,
                "surrogate constant needs gamma > 1");
  if (!(sigma0 > 0.0) || t_min < 1 || m < 1 || n < 1)
    throw Error(ErrorCode::ConfigError, "bad surrogate constant inputs");
  return 4.0 * double(m) * double(n) * eps_hat * eps_hat * gamma /
         ((gamma - 1.0) * sigma0 * double(t_min));
}

double max_surrogate_increase(std::span<const double> merit, double gamma,
                              double c_hat) {
  if (merit.size() < 2)
    throw Error(ErrorCode::TooFewPoints, "need at least two merit values");
  double worst = -std::numeric_limits<double>::infinity();
  for (size_t k = 0; k + 1 < merit.size(); ++k) {
    const double h0 = merit[k] + c_hat * std::pow(gamma, -double(k));
    const double h1 = merit[k + 1] + c_hat * std::pow(gamma, -double(k + 1));
    worst = std::max(worst, h1 - h0);
  }
  return worst;
}

UnbiasednessReport unbiasedness_test(const std::vector<std::vector<double>>& w,
                                     int s, int64_t trials, uint64_t seed) {
  const int q = int(w.size());
  if (q < 1) throw Error(ErrorCode::InvalidDimension, "need q >= 1 senders");
  const int n = int(w[0].size());
  for (const auto& row : w)
    if (int(row.size()) != n)
      throw Error(ErrorCode::DimensionMismatch, "ragged sender vectors");
  if (s < 1 || s > n)
    throw Error(ErrorCode::InvalidSize, "s must lie in [1, n]");
  if (trials < 1) throw Error(ErrorCode::InvalidSize, "trials must be >= 1");

  UnbiasednessReport rep;
  rep.q = q;
  rep.n = n;
  rep.s = s;
  rep.trials = trials;
  rep.target.assign(n, 0.0);
  for (int l = 0; l < n; ++l) {
    for (int j = 0; j < q; ++j) rep.target[l] += w[j][l];
    rep.target[l] /= q;
  }

  std::vector<double> cond_sum(n, 0.0), cond_sumsq(n, 0.0);
  std::vector<double> naive_sum(n, 0.0), naive_sumsq(n, 0.0);
  rep.cond_count.assign(n, 0);

  rng::Stream stream(seed, rng::Purpose::Oracle);
  std::vector<double> value_sum(n);
  std::vector<int> lambda(n);
  for (int64_t trial = 0; trial < trials; ++trial) {
    std::fill(value_sum.begin(), value_sum.end(), 0.0);
    std::fill(lambda.begin(), lambda.end(), 0);
    for (int j = 0; j < q; ++j) {
      const std::vector<int> coords = pme::sample_coordinates(n, s, stream);
      for (int l : coords) {
        value_sum[l] += w[j][l];
        lambda[l] += 1;
      }
    }
    for (int l = 0; l < n; ++l) {
      if (lambda[l] > 0) {
        const double x = value_sum[l] / lambda[l];
        cond_sum[l] += x;
        cond_sumsq[l] += x * x;
        rep.cond_count[l] += 1;
      }
      const double y = value_sum[l] / q;  // zero-padded naive mean
      naive_sum[l] += y;
      naive_sumsq[l] += y * y;
    }
  }

  rep.cond_mean.assign(n, 0.0);
  rep.cond_stderr.assign(n, 0.0);
  rep.naive_mean.assign(n, 0.0);
  rep.naive_stderr.assign(n, 0.0);
  rep.unbiased_pass = true;
  rep.naive_scaled_pass = true;
  bool any_distinguishing = false;
  bool all_missed = true;
  const double scale = double(s) / double(n);
  for (int l = 0; l < n; ++l) {
    const int64_t c = rep.cond_count[l];
    if (c > 0) rep.cond_mean[l] = cond_sum[l] / c;
    if (c > 1) {
      const double var =
          std::max(0.0, (cond_sumsq[l] - cond_sum[l] * cond_sum[l] / c) / (c - 1));
      rep.cond_stderr[l] = std::sqrt(var / c);
    } else {
      rep.cond_stderr[l] = std::numeric_limits<double>::infinity();
    }
    rep.naive_mean[l] = naive_sum[l] / trials;
    const double nvar = std::max(
        0.0, (naive_sumsq[l] - naive_sum[l] * naive_sum[l] / trials) /
                 std::max<int64_t>(1, trials - 1));
    rep.naive_stderr[l] = std::sqrt(nvar / trials);

    if (std::abs(rep.cond_mean[l] - rep.target[l]) > 4.0 * rep.cond_stderr[l])
      rep.unbiased_pass = false;
    if (std::abs(rep.naive_mean[l] - scale * rep.target[l]) >
        4.0 * rep.naive_stderr[l])
      rep.naive_scaled_pass = false;
    if (rep.target[l] != scale * rep.target[l]) {
      any_distinguishing = true;
      if (std::abs(rep.naive_mean[l] - rep.target[l]) <=
          4.0 * rep.naive_stderr[l])
        all_missed = false;
    }
  }
  rep.naive_biased = any_distinguishing && all_missed;
  return rep;
}

nlohmann::json unbiasedness_json(const UnbiasednessReport& rep) {
  nlohmann::json j;
  j["q"] = rep.q;
  j["n"] = rep.n;
  j["s"] = rep.s;
  j["trials"] = rep.trials;
  j["target"] = rep.target;
  j["cond_mean"] = rep.cond_mean;
  j["cond_stderr"] = rep.cond_stderr;
  j["cond_count"] = rep.cond_count;
  j["naive_mean"] = rep.naive_mean;
  j["naive_stderr"] = rep.naive_stderr;
  j["unbiased_pass"] = rep.unbiased_pass;
  j["naive_scaled_pass"] = rep.naive_scaled_pass;
  j["naive_biased"] = rep.naive_biased;
  return j;
}

namespace {

// Batch-restricted loss value, the quantity whose gradient the analytic code
// claims to compute. Written independently of losses::loss_value on purpose:
// this is the finite-difference oracle's own ground truth.
double batch_loss(const losses::LossSpec& spec, const losses::Dataset& ds,
                  std::span<const double> w, std::span<const int> batch) {
  double acc = 0.0;
  for (int r : batch) {
    const auto row = ds.row(r);
    double z = 0.0;
    for (int t = 0; t < ds.dim; ++t) z += row[t] * w[t];
    if (spec.kind == losses::LossKind::LinearRegression) {
      const double resid = z - ds.targets[r];
      acc += 0.5 * resid * resid;
    } else {
      const double softplus =
          z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      acc += softplus - ds.targets[r] * z;
    }
  }
  acc /= double(batch.size());
  if (spec.ridge != 0.0) {
    double sq = 0.0;
    for (double x : w) sq += x * x;
    acc += 0.5 * spec.ridge * sq;
  }
  return acc;
}

}  // namespace

GradcheckReport gradcheck(losses::LossKind kind, int trials, uint64_t seed,
                          double tol) {
  if (trials < 1) throw Error(ErrorCode::InvalidSize, "trials must be >= 1");
  GradcheckReport rep;
  rep.trials = trials;
  losses::LossSpec spec;
  spec.kind = kind;
  spec.ridge = kind == losses::LossKind::Logistic ? 0.001 : 0.0;
  rng::Stream stream(seed, rng::Purpose::Oracle);
  const double h = 1e-6;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 2 + int(stream.below(19));
    const int N = 1 + int(stream.below(30));
    const uint64_t sub_seed = stream.next_u64();
    const losses::ShardSpec shard;
    const losses::ProblemData problem =
        kind == losses::LossKind::LinearRegression
            ? losses::gen_linear_regression(n, N, 1, 0.5, 0.3, shard, sub_seed)
            : losses::gen_logistic(n, N, 1, 0.5, shard, sub_seed);
    const losses::Dataset& ds = problem.shards[0];
    std::vector<double> w(n);
    for (double& x : w) x = stream.uniform(-2.0, 2.0);
    const int bsize = 1 + int(stream.below(uint64_t(N)));
    const std::vector<int> batch =
        rng::sample_without_replacement(N, bsize, stream);

    const std::vector<double> g = losses::gradient(spec, ds, w, batch);
    double gmax = 1.0;
    for (double x : g) gmax = std::max(gmax, std::abs(x));
    std::vector<double> wp(w), wm(w);
    for (int t = 0; t < n; ++t) {
      wp[t] = w[t] + h;
      wm[t] = w[t] - h;
      const double fd =
          (batch_loss(spec, ds, wp, batch) - batch_loss(spec, ds, wm, batch)) /
          (2.0 * h);
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(fd - g[t]) / gmax);
      wp[t] = w[t];
      wm[t] = w[t];
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

SrsworCheckReport srswor_enumeration_check(int instances, uint64_t seed) {
  if (instances < 1)
    throw Error(ErrorCode::InvalidSize, "instances must be >= 1");
  SrsworCheckReport rep;
  rep.instances = instances;
  rep.pass = true;
  rng::Stream stream(seed, rng::Purpose::Oracle, 1);
  for (int inst = 0; inst < instances; ++inst) {
    const int q = 1 + int(stream.below(8));
    const int r = 1 + int(stream.below(uint64_t(q)));
    std::vector<double> x(q);
    for (double& v : x) v = double(int(stream.below(201)) - 100);

    // Enumerate all C(q, r) subsets by bitmask.
    std::vector<double> means;
    for (unsigned mask = 0; mask < (1u << q); ++mask) {
      if (std::popcount(mask) != r) continue;
      double sum = 0.0;
      for (int j = 0; j < q; ++j)
        if (mask & (1u << j)) sum += x[j];
      means.push_back(sum / r);
    }
    double grand = 0.0;
    for (double ms : means) grand += ms;
    grand /= double(means.size());
    double var_enum = 0.0;
    for (double ms : means) var_enum += (ms - grand) * (ms - grand);
    var_enum /= double(means.size());

    const pme::SrsworMoments moments = pme::srswor_moments(x, r);
    const double err =
        std::abs(moments.variance - var_enum) / std::max(1.0, var_enum);
    rep.max_rel_err = std::max(rep.max_rel_err, err);
    if (err > 1e-12) rep.pass = false;
    const double second = var_enum + grand * grand;
    if (second > moments.second_moment_bound +
                     1e-9 * std::max(1.0, moments.second_moment_bound))
      rep.pass = false;
  }
  return rep;
}

const char* sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::TransmissionRate: return "transmission_rate";
    case SweepAxis::ParticipationRate: return "participation_rate";
    case SweepAxis::CommPeriod: return "comm_period";
    case SweepAxis::Degree: return "degree";
  }
  return "transmission_rate";
}

SweepAxis sweep_axis_from_name(const std::string& name) {
  if (name == "transmission_rate") return SweepAxis::TransmissionRate;
  if (name == "participation_rate") return SweepAxis::ParticipationRate;
  if (name == "comm_period") return SweepAxis::CommPeriod;
  if (name == "degree") return SweepAxis::Degree;
  throw Error(ErrorCode::ConfigError, "unknown sweep axis '" + name + "'");
}

namespace {

engine::RunConfig apply_axis(engine::RunConfig cfg, SweepAxis axis,
                             double value, uint64_t seed) {
  cfg.seed = seed;
  switch (axis) {
    case SweepAxis::TransmissionRate: {
      const int s = std::clamp(int(std::lround(value * cfg.n)), 1, cfg.n);
      cfg.s = {s};
      break;
    }
    case SweepAxis::ParticipationRate:
      cfg.nu = {value};
      break;
    case SweepAxis::CommPeriod:
      cfg.kappa_lo = cfg.kappa_hi = int(std::lround(value));
      break;
    case SweepAxis::Degree:
      cfg.graph_degree = int(std::lround(value));
      break;
  }
  return cfg;
}

}  // namespace

SweepResult sweep(const engine::RunConfig& base, SweepAxis axis,
                  std::span<const double> values,
                  std::span<const uint64_t> seeds, int threads) {
  if (values.empty() || seeds.empty())
    throw Error(ErrorCode::ConfigError, "sweep needs values and seeds");
  SweepResult result;
  result.axis = axis;
  result.cells.resize(values.size() * seeds.size());
  const int ns = int(seeds.size());
  // Cells are independent runs; parallelize across cells and keep each run
  // single-threaded so results never depend on the split.
  parallel_for(int(result.cells.size()), threads, [&](int idx) {
    SweepCell& cell = result.cells[idx];
    cell.axis_value = values[idx / ns];
    cell.seed = seeds[idx % ns];
    try {
      const engine::RunConfig cfg =
          apply_axis(base, axis, cell.axis_value, cell.seed);
      const engine::RunResult run = engine::run(cfg, 1);
      cell.status =
          run.status == engine::RunStatus::Converged ? "converged" : "max_iters";
      cell.iters = int64_t(run.trajectory.size());
      cell.total_bits = run.total_bits;
      cell.final_objective = run.final_objective;
      cell.mse_to_truth = run.mse_to_truth;
    } catch (const Error& e) {
      cell.status = error_code_name(e.code());
    } catch (const std::exception&) {
      cell.status = "error";
    }
  });
  return result;
}

void write_sweep_csv(const std::string& path, const SweepResult& result) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot open " + path);
  out << "axis_value,seed,final_objective,iters,total_bits\n";
  char buf[128];
  for (const auto& cell : result.cells) {
    std::snprintf(buf, sizeof buf, "%.17g,%llu,%.17g,%lld,%lld\n",
                  cell.axis_value, (unsigned long long)cell.seed,
                  cell.final_objective, (long long)cell.iters,
                  (long long)cell.total_bits);
    out << buf;
  }
}

nlohmann::json sweep_manifest(const SweepResult& result) {
  nlohmann::json j;
  j["axis"] = sweep_axis_name(result.axis);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : result.cells)
    cells.push_back({{"axis_value", cell.axis_value},
                     {"seed", cell.seed},
                     {"status", cell.status},
                     {"iters", cell.iters},
                     {"total_bits", cell.total_bits},
                     {"final_objective", cell.final_objective},
                     {"mse_to_truth", cell.mse_to_truth}});
  j["cells"] = cells;
  return j;
}

}  // namespace pame::analysis
