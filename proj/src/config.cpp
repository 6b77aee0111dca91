#include "pame/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "pame/error.hpp"

namespace pame::config {

using nlohmann::json;
using pame::Error;
using pame::ErrorCode;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& item : obj.items())
    if (!allowed.count(item.key()))
      throw Error(ErrorCode::ConfigError,
                  "unknown key '" + item.key() + "' in " + where);
}

template <class T>
T require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key))
    throw Error(ErrorCode::ConfigError,
                "missing key '" + key + "' in " + where);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ConfigError,
                "bad type for '" + key + "' in " + where);
  }
}

template <class T>
T optional_or(const json& obj, const std::string& key, T fallback,
              const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ConfigError,
                "bad type for '" + key + "' in " + where);
  }
}

std::vector<double> scalar_or_array(const json& v, const std::string& what) {
  try {
    if (v.is_number()) return {v.get<double>()};
    if (v.is_array()) return v.get<std::vector<double>>();
  } catch (const json::exception&) {
  }
  throw Error(ErrorCode::ConfigError,
              "'" + what + "' must be a number or an array of numbers");
}

std::vector<int> int_scalar_or_array(const json& v, const std::string& what) {
  try {
    if (v.is_number_integer()) return {v.get<int>()};
    if (v.is_array()) return v.get<std::vector<int>>();
  } catch (const json::exception&) {
  }
  throw Error(ErrorCode::ConfigError,
              "'" + what + "' must be an integer or an array of integers");
}

}  // namespace

ParsedConfig parse_config(const json& j, const std::string& base_dir) {
  if (!j.is_object())
    throw Error(ErrorCode::ConfigError, "config root must be an object");
  reject_unknown(j, {"seed", "m", "n", "graph", "loss", "engine", "sweep"},
                 "config root");

  ParsedConfig out;
  engine::RunConfig& cfg = out.run;
  cfg.m = require<int>(j, "m", "config root");
  cfg.n = require<int>(j, "n", "config root");
  cfg.seed = optional_or<uint64_t>(j, "seed", 0, "config root");

  if (j.contains("graph")) {
    const json& g = j.at("graph");
    reject_unknown(g, {"kind", "degree", "max_retries", "file", "inline"},
                   "graph");
    cfg.graph_kind = topology::graph_kind_from_name(
        optional_or<std::string>(g, "kind", "complete", "graph"));
    cfg.graph_degree = optional_or<int>(g, "degree", 0, "graph");
    cfg.graph_max_retries = optional_or<int>(g, "max_retries", 1000, "graph");
    if (g.contains("file") && g.contains("inline"))
      throw Error(ErrorCode::ConfigError,
                  "graph.file and graph.inline are mutually exclusive");
    if (g.contains("file")) {
      std::filesystem::path p = require<std::string>(g, "file", "graph");
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      std::ifstream in(p);
      if (!in)
        throw Error(ErrorCode::ConfigError,
                    "cannot open graph file " + p.string());
      json gj;
      try {
        in >> gj;
      } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError,
                    "bad JSON in graph file: " + std::string(e.what()));
      }
      cfg.graph = topology::graph_from_json(gj);
      cfg.graph_kind = cfg.graph->kind;
    } else if (g.contains("inline")) {
      cfg.graph = topology::graph_from_json(g.at("inline"));
      cfg.graph_kind = cfg.graph->kind;
    }
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l,
                   {"kind", "ridge", "samples_per_node", "sparsity",
                    "noise_scale", "shard", "label_skew_c"},
                   "loss");
    cfg.loss_kind = losses::loss_kind_from_name(
        optional_or<std::string>(l, "kind", "linear_regression", "loss"));
    const double default_ridge =
        cfg.loss_kind == losses::LossKind::Logistic ? 0.001 : 0.0;
    cfg.ridge = optional_or<double>(l, "ridge", default_ridge, "loss");
    cfg.samples_per_node =
        optional_or<int>(l, "samples_per_node", 50, "loss");
    const double default_sparsity =
        cfg.loss_kind == losses::LossKind::Logistic ? 0.5 : 0.01;
    cfg.sparsity = optional_or<double>(l, "sparsity", default_sparsity, "loss");
    cfg.noise_scale = optional_or<double>(l, "noise_scale", 0.5, "loss");
    cfg.shard.policy = losses::shard_policy_from_name(
        optional_or<std::string>(l, "shard", "iid", "loss"));
    cfg.shard.label_skew_c = optional_or<int>(l, "label_skew_c", 2, "loss");
  }

  if (j.contains("engine")) {
    const json& e = j.at("engine");
    reject_unknown(e,
                   {"mode", "nu", "s", "s_fraction", "gamma", "sigma0",
                    "kappa", "k0", "delta", "batch_fraction", "dpsgd_lr",
                    "max_iters", "min_iters", "stop_std", "record_history",
                    "epsilon_trials"},
                   "engine");
    cfg.mode = engine::run_mode_from_name(
        optional_or<std::string>(e, "mode", "pame", "engine"));
    if (e.contains("nu")) cfg.nu = scalar_or_array(e.at("nu"), "nu");
    if (e.contains("s") && e.contains("s_fraction"))
      throw Error(ErrorCode::ConfigError,
                  "engine.s and engine.s_fraction are mutually exclusive");
    if (e.contains("s")) cfg.s = int_scalar_or_array(e.at("s"), "s");
    if (e.contains("s_fraction")) {
      const double f = require<double>(e, "s_fraction", "engine");
      if (!(f > 0.0 && f <= 1.0))
        throw Error(ErrorCode::ConfigError, "s_fraction must lie in (0, 1]");
      cfg.s = {std::clamp(int(std::lround(f * cfg.n)), 1, cfg.n)};
    }
    cfg.gamma = optional_or<double>(e, "gamma", cfg.gamma, "engine");
    cfg.sigma0 = optional_or<double>(e, "sigma0", cfg.sigma0, "engine");
    if (e.contains("kappa")) {
      const json& k = e.at("kappa");
      if (k.is_number_integer()) {
        cfg.kappa_lo = cfg.kappa_hi = k.get<int>();
      } else if (k.is_array() && k.size() == 2 && k[0].is_number_integer() &&
                 k[1].is_number_integer()) {
        cfg.kappa_lo = k[0].get<int>();
        cfg.kappa_hi = k[1].get<int>();
      } else {
        throw Error(ErrorCode::ConfigError,
                    "engine.kappa must be an integer or [lo, hi]");
      }
    }
    if (e.contains("k0")) cfg.k0 = require<int>(e, "k0", "engine");
    cfg.delta = optional_or<double>(e, "delta", cfg.delta, "engine");
    cfg.batch_fraction =
        optional_or<double>(e, "batch_fraction", cfg.batch_fraction, "engine");
    cfg.dpsgd_lr = optional_or<double>(e, "dpsgd_lr", cfg.dpsgd_lr, "engine");
    cfg.max_iters = optional_or<int64_t>(e, "max_iters", cfg.max_iters, "engine");
    cfg.min_iters = optional_or<int64_t>(e, "min_iters", cfg.min_iters, "engine");
    cfg.stop_std = optional_or<double>(e, "stop_std", cfg.stop_std, "engine");
    cfg.record_history =
        optional_or<bool>(e, "record_history", cfg.record_history, "engine");
    cfg.epsilon_trials =
        optional_or<int>(e, "epsilon_trials", cfg.epsilon_trials, "engine");
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    reject_unknown(s, {"axis", "values", "seeds"}, "sweep");
    SweepSpec spec;
    spec.axis = analysis::sweep_axis_from_name(
        require<std::string>(s, "axis", "sweep"));
    spec.values = require<std::vector<double>>(s, "values", "sweep");
    spec.seeds = require<std::vector<uint64_t>>(s, "seeds", "sweep");
    if (spec.values.empty() || spec.seeds.empty())
      throw Error(ErrorCode::ConfigError, "sweep values/seeds must be non-empty");
    out.sweep = spec;
  }
  return out;
}

ParsedConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError,
                "bad JSON in " + path + ": " + e.what());
  }
  const std::string base =
      std::filesystem::path(path).parent_path().string();
  return parse_config(j, base.empty() ? "." : base);
}

void apply_override(json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::ConfigError,
                "override must look like path.to.key=value, got '" +
                    assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings like loss.kind=logistic
  }

  json* node = &j;
  size_t start = 0;
  for (;;) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty())
      throw Error(ErrorCode::ConfigError, "empty key in override path");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    if (!node->is_object())
      throw Error(ErrorCode::ConfigError,
                  "override path '" + path + "' crosses a non-object");
    start = dot + 1;
  }
}

nlohmann::json config_to_json(const ParsedConfig& parsed) {
  const engine::RunConfig& cfg = parsed.run;
  json j;
  j["m"] = cfg.m;
  j["n"] = cfg.n;
  j["seed"] = cfg.seed;

  json g;
  g["kind"] = topology::graph_kind_name(cfg.graph_kind);
  g["degree"] = cfg.graph_degree;
  g["max_retries"] = cfg.graph_max_retries;
  if (cfg.graph) g["inline"] = topology::graph_to_json(*cfg.graph);
  j["graph"] = g;

  json l;
  l["kind"] = losses::loss_kind_name(cfg.loss_kind);
  l["ridge"] = cfg.ridge;
  l["samples_per_node"] = cfg.samples_per_node;
  l["sparsity"] = cfg.sparsity;
  l["noise_scale"] = cfg.noise_scale;
  l["shard"] = losses::shard_policy_name(cfg.shard.policy);
  l["label_skew_c"] = cfg.shard.label_skew_c;
  j["loss"] = l;

  json e;
  e["mode"] = engine::run_mode_name(cfg.mode);
  e["nu"] = cfg.nu.size() == 1 ? json(cfg.nu[0]) : json(cfg.nu);
  if (!cfg.s.empty())
    e["s"] = cfg.s.size() == 1 ? json(cfg.s[0]) : json(cfg.s);
  e["gamma"] = cfg.gamma;
  e["sigma0"] = cfg.sigma0;
  e["kappa"] = cfg.kappa_lo == cfg.kappa_hi
                   ? json(cfg.kappa_lo)
                   : json::array({cfg.kappa_lo, cfg.kappa_hi});
  if (cfg.k0) e["k0"] = *cfg.k0;
  e["delta"] = cfg.delta;
  e["batch_fraction"] = cfg.batch_fraction;
  e["dpsgd_lr"] = cfg.dpsgd_lr;
  e["max_iters"] = cfg.max_iters;
  e["min_iters"] = cfg.min_iters;
  e["stop_std"] = cfg.stop_std;
  e["record_history"] = cfg.record_history;
  e["epsilon_trials"] = cfg.epsilon_trials;
  j["engine"] = e;

  if (parsed.sweep) {
    json s;
    s["axis"] = analysis::sweep_axis_name(parsed.sweep->axis);
    s["values"] = parsed.sweep->values;
    s["seeds"] = parsed.sweep->seeds;
    j["sweep"] = s;
  }
  return j;
}

}  // namespace pame::config
