#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "pame/analysis.hpp"
#include "pame/error.hpp"
#include "pame/topology.hpp"

using namespace pame;
using analysis::SweepAxis;

TEST_CASE("fit_linear_rate recovers an exact geometric decay") {
  const double gamma = 1.01;
  std::vector<double> series(200);
  for (size_t k = 0; k < series.size(); ++k)
    series[k] = 3.0 * std::pow(gamma, -double(k));
  const auto fit = analysis::fit_linear_rate(series);
  CHECK(!fit.degenerate);
  CHECK(fit.slope == doctest::Approx(-std::log(gamma)).epsilon(1e-9));
  CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
  // Middle-half window of a fully usable series.
  CHECK(fit.first == 50);
  CHECK(fit.last == 149);
}

TEST_CASE("fit_linear_rate edge cases") {
  SUBCASE("constant series is degenerate, not a crash") {
    const std::vector<double> series(40, 2.5);
    const auto fit = analysis::fit_linear_rate(series);
    CHECK(fit.degenerate);
    CHECK(fit.slope == 0.0);
    CHECK(fit.r2 == 0.0);
  }
  SUBCASE("values at the floor are excluded") {
    std::vector<double> series(100);
    for (size_t k = 0; k < series.size(); ++k)
      series[k] = std::pow(2.0, -double(k));
    // Everything below 1e-14 (k >= 47) must be ignored, not log'd.
    const auto fit = analysis::fit_linear_rate(series);
    CHECK(fit.slope == doctest::Approx(-std::log(2.0)).epsilon(1e-9));
    CHECK(fit.last <= 46);
  }
  SUBCASE("too few usable points throws") {
    const std::vector<double> series(9, 1.0);
    try {
      analysis::fit_linear_rate(series);
      FAIL("expected TooFewPoints");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TooFewPoints);
    }
    const std::vector<double> wiped(50, 1e-16);
    CHECK_THROWS_AS(analysis::fit_linear_rate(wiped), Error);
  }
}

TEST_CASE("consensus trajectory matches a hand computation") {
  // Two snapshots of a 2x2 state.
  const std::vector<std::vector<double>> history = {
      {1.0, 0.0, 3.0, 4.0},  // rows (1,0) and (3,4); mean (2,2)
      {2.0, 2.0, 2.0, 2.0},  // consensus reached
  };
  const auto traj = analysis::consensus_trajectory(history, 2, 2);
  REQUIRE(traj.size() == 2);
  CHECK(traj[0] == doctest::Approx(1 + 4 + 1 + 4).epsilon(1e-15));
  CHECK(traj[1] == 0.0);
}

TEST_CASE("surrogate constant and descent detector") {
  const double c = analysis::surrogate_constant(4, 10, 0.5, 1.25, 2.0, 3);
  CHECK(c == doctest::Approx(4.0 * 4 * 10 * 0.25 * 1.25 / (0.25 * 2.0 * 3))
                 .epsilon(1e-12));
  CHECK_THROWS_AS(analysis::surrogate_constant(4, 10, 0.5, 1.0, 2.0, 3), Error);

  // merit[k] = gamma^{-k} plus a bump at k = 5; the surrogate with c_hat = 0
  // must flag exactly that bump.
  const double gamma = 1.1;
  std::vector<double> merit(12);
  for (size_t k = 0; k < merit.size(); ++k)
    merit[k] = std::pow(gamma, -double(k));
  CHECK(analysis::max_surrogate_increase(merit, gamma, 0.0) <= 0.0);
  merit[5] += 0.5;
  const double inc = analysis::max_surrogate_increase(merit, gamma, 0.0);
  const double expected = 0.5 - (std::pow(gamma, -4.0) - std::pow(gamma, -5.0));
  CHECK(inc == doctest::Approx(expected).epsilon(1e-12));
  // A large enough additive gamma^{-k} envelope re-absorbs the bump.
  const double absorbed =
      analysis::max_surrogate_increase(merit, gamma, 20.0);
  CHECK(absorbed <= 0.0);
}

TEST_CASE("unbiasedness harness separates the two estimators") {
  // The three-sender worked example: lambda-averaging is conditionally
  // unbiased for w_bar while zero-padded naive averaging lands on (s/n)w_bar.
  const std::vector<std::vector<double>> w = {
      {2, 8, 1, 4}, {4, 7, 2, 5}, {3, 6, 0, 6}};
  const auto rep = analysis::unbiasedness_test(w, 2, 40000, 99);
  CHECK(rep.q == 3);
  CHECK(rep.n == 4);
  CHECK(rep.s == 2);
  REQUIRE(rep.target.size() == 4);
  CHECK(rep.target[0] == doctest::Approx(3.0));
  CHECK(rep.target[1] == doctest::Approx(7.0));
  CHECK(rep.target[2] == doctest::Approx(1.0));
  CHECK(rep.target[3] == doctest::Approx(5.0));
  CHECK(rep.unbiased_pass);
  CHECK(rep.naive_scaled_pass);
  CHECK(rep.naive_biased);
  for (int l = 0; l < 4; ++l) {
    CHECK(std::abs(rep.cond_mean[l] - rep.target[l]) <=
          4.0 * rep.cond_stderr[l]);
    CHECK(rep.cond_count[l] > 30000);  // lambda=0 has probability (1/2)^3
  }
  // Determinism in the seed.
  const auto rep2 = analysis::unbiasedness_test(w, 2, 40000, 99);
  CHECK(rep2.cond_mean == rep.cond_mean);
  CHECK(rep2.naive_mean == rep.naive_mean);
}

TEST_CASE("gradcheck and srswor enumeration self-tests pass") {
  const auto lin =
      analysis::gradcheck(losses::LossKind::LinearRegression, 20, 7);
  CHECK(lin.pass);
  CHECK(lin.max_rel_err < 1e-5);
  const auto logi = analysis::gradcheck(losses::LossKind::Logistic, 20, 7);
  CHECK(logi.pass);
  const auto srswor = analysis::srswor_enumeration_check(60, 7);
  CHECK(srswor.pass);
  CHECK(srswor.instances == 60);
}

TEST_CASE("sweep runs every (value, seed) cell deterministically") {
  engine::RunConfig base;
  base.m = 4;
  base.n = 6;
  base.seed = 1;
  base.graph_kind = topology::GraphKind::Complete;
  base.samples_per_node = 5;
  base.nu = {0.5};
  base.max_iters = 6;
  base.stop_std = 0.0;
  const std::vector<double> values = {0.25, 0.5, 1.0};
  const std::vector<uint64_t> seeds = {11, 12};

  const auto res =
      analysis::sweep(base, SweepAxis::TransmissionRate, values, seeds, 2);
  REQUIRE(res.cells.size() == 6);
  for (size_t c = 0; c < res.cells.size(); ++c) {
    CHECK(res.cells[c].axis_value == values[c / 2]);
    CHECK(res.cells[c].seed == seeds[c % 2]);
    CHECK(res.cells[c].status == "max_iters");
    CHECK(res.cells[c].iters == 6);
    CHECK(res.cells[c].total_bits > 0);
  }
  // Smaller transmitted fraction means fewer bits, same seed.
  CHECK(res.cells[0].total_bits < res.cells[4].total_bits);

  const auto res1 =
      analysis::sweep(base, SweepAxis::TransmissionRate, values, seeds, 1);
  for (size_t c = 0; c < res.cells.size(); ++c) {
    CHECK(res.cells[c].final_objective == res1.cells[c].final_objective);
    CHECK(res.cells[c].total_bits == res1.cells[c].total_bits);
  }
}

TEST_CASE("sweep records per-cell failures instead of throwing") {
  engine::RunConfig base;
  base.m = 5;
  base.n = 4;
  base.seed = 3;
  base.graph_kind = topology::GraphKind::KRegularRandom;
  base.graph_degree = 2;
  base.samples_per_node = 4;
  base.max_iters = 3;
  base.stop_std = 0.0;
  // degree 3 with m = 5 is impossible (odd product); degree 2 works.
  const std::vector<double> values = {2.0, 3.0};
  const std::vector<uint64_t> seeds = {7};
  const auto res = analysis::sweep(base, SweepAxis::Degree, values, seeds, 1);
  REQUIRE(res.cells.size() == 2);
  CHECK(res.cells[0].status == "max_iters");
  CHECK(res.cells[1].status == "InvalidDimension");  // odd m*degree product
}

TEST_CASE("sweep CSV and manifest carry the pinned columns") {
  namespace fs = std::filesystem;
  engine::RunConfig base;
  base.m = 4;
  base.n = 4;
  base.seed = 9;
  base.graph_kind = topology::GraphKind::Complete;
  base.samples_per_node = 4;
  base.max_iters = 3;
  base.stop_std = 0.0;
  const std::vector<double> values = {1.0, 2.0};
  const std::vector<uint64_t> seeds = {5};
  const auto res = analysis::sweep(base, SweepAxis::CommPeriod, values, seeds);
  const fs::path path = fs::temp_directory_path() / "pame_sweep_test.csv";
  analysis::write_sweep_csv(path.string(), res);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "axis_value,seed,final_objective,iters,total_bits");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  fs::remove(path);

  const auto manifest = analysis::sweep_manifest(res);
  CHECK(manifest["axis"] == "comm_period");
  CHECK(manifest["cells"].size() == 2);
  CHECK(manifest["cells"][0].contains("mse_to_truth"));
  CHECK(manifest["cells"][0].contains("status"));
}

TEST_CASE("sweep axis names round-trip") {
  for (auto axis : {SweepAxis::TransmissionRate, SweepAxis::ParticipationRate,
                    SweepAxis::CommPeriod, SweepAxis::Degree})
    CHECK(analysis::sweep_axis_from_name(analysis::sweep_axis_name(axis)) ==
          axis);
  CHECK_THROWS_AS(analysis::sweep_axis_from_name("learning_rate"), Error);
}
