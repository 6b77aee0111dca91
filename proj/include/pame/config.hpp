#pragma once

// JSON config handling for the CLI: strict parsing (unknown keys are
// errors), dotted-path overrides, and canonical effective-config output that
// parses back to the identical run.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pame/analysis.hpp"
#include "pame/engine.hpp"

namespace pame::config {

struct SweepSpec {
  analysis::SweepAxis axis = analysis::SweepAxis::TransmissionRate;
  std::vector<double> values;
  std::vector<uint64_t> seeds;
};

struct ParsedConfig {
  engine::RunConfig run;
  std::optional<SweepSpec> sweep;
};

// base_dir resolves a relative graph.file reference (usually the directory
// containing the config file).
ParsedConfig parse_config(const nlohmann::json& j,
                          const std::string& base_dir = ".");

ParsedConfig load_config_file(const std::string& path);

// "engine.gamma=1.01", "loss.kind=logistic", "m=8". The value is parsed as
// JSON when possible and falls back to a string. Paths create missing
// intermediate objects; the result is validated by parse_config afterwards.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Canonical form: round-trips through parse_config to the same run.
nlohmann::json config_to_json(const ParsedConfig& cfg);

}  // namespace pame::config
