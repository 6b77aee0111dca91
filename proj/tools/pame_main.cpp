// Command-line front end: validate / run / sweep / oracle.
//
// Exit codes: validate 0 = all conditions hold, 2 = ran but some condition
// failed, 1 = hard error. run 0 = converged, 3 = max_iters, 1 = error.
// oracle 0 iff the named oracle passes. Everything the run writes
// (metrics.csv, summary.json, effective_config.json) is deterministic in
// (config, seed) and independent of --threads.

#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pame/analysis.hpp"
#include "pame/config.hpp"
#include "pame/engine.hpp"
#include "pame/error.hpp"
#include "pame/pme.hpp"
#include "pame/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  int threads = int(std::thread::hardware_concurrency());
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs* args, bool need_out) {
  cmd->add_option("--config", args->config_path, "JSON config file")
      ->required();
  auto* out = cmd->add_option("--out", args->out_dir, "output directory");
  if (need_out) out->required();
  cmd->add_option("--override", args->overrides,
                  "dotted-path override, e.g. engine.gamma=1.01 (repeatable)");
  cmd->add_option("--threads", args->threads, "worker threads");
  cmd->add_flag("--quiet", args->quiet, "suppress progress output");
}

// Load config, apply overrides, then the PAME_SEED environment variable
// (highest precedence for the seed).
pame::config::ParsedConfig load(const CommonArgs& args) {
  std::ifstream in(args.config_path);
  if (!in)
    throw pame::Error(pame::ErrorCode::ConfigError,
                      "cannot open config " + args.config_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw pame::Error(pame::ErrorCode::ConfigError,
                      "bad JSON in " + args.config_path + ": " + e.what());
  }
  for (const auto& ov : args.overrides) pame::config::apply_override(j, ov);
  if (const char* env = std::getenv("PAME_SEED")) {
    try {
      j["seed"] = std::stoull(env);
    } catch (const std::exception&) {
      throw pame::Error(pame::ErrorCode::ConfigError,
                        "PAME_SEED is not an unsigned integer");
    }
  }
  const std::string base = fs::path(args.config_path).parent_path().string();
  return pame::config::parse_config(j, base.empty() ? "." : base);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out)
    throw pame::Error(pame::ErrorCode::ConfigError,
                      "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

int cmd_validate(const CommonArgs& args) {
  const auto parsed = load(args);
  const pame::engine::SetupReport rep =
      pame::engine::validate_setup(parsed.run);
  const json j = pame::engine::setup_report_json(rep);
  if (!args.quiet) std::cout << j.dump(2) << "\n";
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    write_json(fs::path(args.out_dir) / "setup_report.json", j);
  }
  return rep.pass() ? 0 : 2;
}

int cmd_run(const CommonArgs& args) {
  const auto parsed = load(args);
  fs::create_directories(args.out_dir);
  const pame::engine::RunResult result =
      pame::engine::run(parsed.run, std::max(1, args.threads));
  for (const auto& warning : result.warnings)
    std::cerr << "warning: " << warning << "\n";

  // Linear-rate fit on the objective gap; a flat or too-short series is
  // reported as a zero fit rather than an error.
  double slope = 0.0, r2 = 0.0;
  {
    std::vector<double> gap;
    gap.reserve(result.trajectory.size());
    for (const auto& rec : result.trajectory)
      gap.push_back(std::abs(rec.objective - result.final_objective));
    try {
      const auto fit = pame::analysis::fit_linear_rate(gap);
      slope = fit.slope;
      r2 = fit.r2;
    } catch (const pame::Error& e) {
      if (e.code() != pame::ErrorCode::TooFewPoints) throw;
    }
  }

  pame::engine::write_metrics_csv(
      (fs::path(args.out_dir) / "metrics.csv").string(), result.trajectory);
  write_json(fs::path(args.out_dir) / "summary.json",
             pame::engine::summary_json(result, slope, r2));
  write_json(fs::path(args.out_dir) / "effective_config.json",
             pame::config::config_to_json(parsed));
  if (!args.quiet) {
    std::cout << (result.status == pame::engine::RunStatus::Converged
                      ? "converged"
                      : "max_iters")
              << " after " << result.trajectory.size() << " iterations, "
              << result.total_bits << " bits, objective "
              << result.final_objective << "\n";
  }
  return result.status == pame::engine::RunStatus::Converged ? 0 : 3;
}

int cmd_sweep(const CommonArgs& args, const std::string& axis_flag,
              const std::vector<double>& values_flag,
              const std::vector<uint64_t>& seeds_flag) {
  auto parsed = load(args);
  pame::config::SweepSpec spec;
  if (parsed.sweep) spec = *parsed.sweep;
  if (!axis_flag.empty())
    spec.axis = pame::analysis::sweep_axis_from_name(axis_flag);
  if (!values_flag.empty()) spec.values = values_flag;
  if (!seeds_flag.empty()) spec.seeds = seeds_flag;
  if (spec.values.empty() || spec.seeds.empty())
    throw pame::Error(pame::ErrorCode::ConfigError,
                      "sweep needs values and seeds (config sweep section or "
                      "--values/--seeds)");
  fs::create_directories(args.out_dir);
  const auto result =
      pame::analysis::sweep(parsed.run, spec.axis, spec.values, spec.seeds,
                            std::max(1, args.threads));
  pame::analysis::write_sweep_csv(
      (fs::path(args.out_dir) / "sweep.csv").string(), result);
  write_json(fs::path(args.out_dir) / "sweep_manifest.json",
             pame::analysis::sweep_manifest(result));
  parsed.sweep = spec;
  write_json(fs::path(args.out_dir) / "effective_config.json",
             pame::config::config_to_json(parsed));
  bool ok = true;
  for (const auto& cell : result.cells) {
    if (cell.status != "converged" && cell.status != "max_iters") ok = false;
    if (!args.quiet)
      std::cout << pame::analysis::sweep_axis_name(result.axis) << "="
                << cell.axis_value << " seed=" << cell.seed << " -> "
                << cell.status << " objective=" << cell.final_objective
                << " bits=" << cell.total_bits << "\n";
  }
  return ok ? 0 : 1;
}

// Closed-form SRSWOR variance vs direct subset enumeration for one fixed
// (q, r), on random integer populations. q <= 8 keeps enumeration trivial.
int focused_srswor(int q, int r, int instances, uint64_t seed, bool quiet) {
  if (q < 1 || q > 8 || r < 1 || r > q)
    throw pame::Error(pame::ErrorCode::InvalidSize,
                      "srswor oracle needs 1 <= r <= q <= 8");
  double max_err = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    pame::rng::Stream stream(seed, pame::rng::Purpose::Oracle, uint32_t(inst));
    std::vector<double> x(size_t(q), 0.0);
    for (double& v : x) v = double(int64_t(stream.below(19)) - 9);
    double grand = 0.0, sq = 0.0;
    int count = 0;
    for (unsigned mask = 0; mask < (1u << q); ++mask) {
      if (std::popcount(mask) != r) continue;
      double sum = 0.0;
      for (int j = 0; j < q; ++j)
        if (mask & (1u << j)) sum += x[size_t(j)];
      grand += sum / r;
      sq += (sum / r) * (sum / r);
      ++count;
    }
    grand /= count;
    const double var_enum = sq / count - grand * grand;
    const auto moments = pame::pme::srswor_moments(x, r);
    const double scale = std::max(1.0, std::abs(var_enum));
    max_err = std::max(max_err, std::abs(moments.variance - var_enum) / scale);
  }
  const bool pass = max_err <= 1e-12;
  if (!quiet)
    std::cout << "srswor q=" << q << " r=" << r << ": max rel err " << max_err
              << " over " << instances << " instances -> "
              << (pass ? "pass" : "fail") << "\n";
  return pass ? 0 : 1;
}

int cmd_oracle(const std::string& which, int64_t trials, uint64_t seed,
               int q, int r, const std::string& loss, bool quiet) {
  if (which == "unbiasedness") {
    // The worked-protocol vectors; any fixed instance would do.
    const std::vector<std::vector<double>> w = {
        {2, 8, 1, 4}, {4, 7, 2, 5}, {3, 6, 0, 6}};
    const auto rep = pame::analysis::unbiasedness_test(
        w, 2, trials > 0 ? trials : 100000, seed);
    if (!quiet) std::cout << pame::analysis::unbiasedness_json(rep).dump(2) << "\n";
    return rep.unbiased_pass && rep.naive_scaled_pass && rep.naive_biased ? 0 : 1;
  }
  if (which == "srswor") {
    if (q > 0) return focused_srswor(q, r > 0 ? r : q, 20, seed, quiet);
    const auto rep = pame::analysis::srswor_enumeration_check(
        trials > 0 ? int(trials) : 1000, seed);
    if (!quiet)
      std::cout << "srswor enumeration check: max rel err " << rep.max_rel_err
                << " over " << rep.instances << " instances -> "
                << (rep.pass ? "pass" : "fail") << "\n";
    return rep.pass ? 0 : 1;
  }
  if (which == "gradcheck") {
    std::vector<pame::losses::LossKind> kinds;
    if (loss.empty())
      kinds = {pame::losses::LossKind::LinearRegression,
               pame::losses::LossKind::Logistic};
    else
      kinds = {pame::losses::loss_kind_from_name(loss)};
    bool all = true;
    for (const auto kind : kinds) {
      const auto rep = pame::analysis::gradcheck(
          kind, trials > 0 ? int(trials) : 100, seed);
      if (!quiet)
        std::cout << "gradcheck " << pame::losses::loss_kind_name(kind)
                  << ": max rel err " << rep.max_rel_err << " -> "
                  << (rep.pass ? "pass" : "fail") << "\n";
      all = all && rep.pass;
    }
    return all ? 0 : 1;
  }
  throw pame::Error(pame::ErrorCode::UnknownOracle,
                    "no oracle named '" + which + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized optimization simulator with partial message exchange"};
  app.require_subcommand(1);

  CommonArgs validate_args, run_args, sweep_args;
  add_common(app.add_subcommand("validate",
                                "check mixing/penalty conditions for a config"),
             &validate_args, false);
  add_common(app.add_subcommand("run", "execute one seeded run"), &run_args,
             true);
  auto* sweep_cmd =
      app.add_subcommand("sweep", "run a parameter sweep over seeds");
  add_common(sweep_cmd, &sweep_args, true);
  std::string sweep_axis;
  std::vector<double> sweep_values;
  std::vector<uint64_t> sweep_seeds;
  sweep_cmd->add_option("--axis", sweep_axis,
                        "transmission_rate|participation_rate|comm_period|degree");
  sweep_cmd->add_option("--values", sweep_values, "axis values")
      ->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep_seeds, "seeds, one run per value")
      ->delimiter(',');

  auto* oracle_cmd = app.add_subcommand("oracle", "run a named self-check");
  std::string oracle_which, oracle_loss;
  int64_t oracle_trials = 0;
  uint64_t oracle_seed = 0xC0FFEE;
  int oracle_q = 0, oracle_r = 0;
  bool oracle_quiet = false;
  oracle_cmd->add_option("which", oracle_which,
                         "unbiasedness|srswor|gradcheck")
      ->required();
  oracle_cmd->add_option("--trials", oracle_trials, "trial count (0 = default)");
  oracle_cmd->add_option("--seed", oracle_seed, "oracle seed");
  oracle_cmd->add_option("--q", oracle_q, "srswor: population size (1..8)");
  oracle_cmd->add_option("--r", oracle_r, "srswor: sample size (default q)");
  oracle_cmd->add_option("--loss", oracle_loss,
                         "gradcheck: linear_regression|logistic (default both)");
  oracle_cmd->add_flag("--quiet", oracle_quiet, "suppress report output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("validate")) return cmd_validate(validate_args);
    if (app.got_subcommand("run")) return cmd_run(run_args);
    if (app.got_subcommand("sweep"))
      return cmd_sweep(sweep_args, sweep_axis, sweep_values, sweep_seeds);
    if (app.got_subcommand("oracle"))
      return cmd_oracle(oracle_which, oracle_trials, oracle_seed, oracle_q,
                        oracle_r, oracle_loss, oracle_quiet);
  } catch (const pame::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
