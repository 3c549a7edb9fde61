// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// INI experiment files:
//
//   [job]        JobConfig fields; `preset = NAME` applies a preset first
//   [channel]    name, data, ps, and per-field overrides of the profile
//   [costmodel]  analytical-model constants (tables as "w:value,w:value")
//   [pricing]    unit prices
//   [presets]    user presets as NAME.FIELD = value, FIELD being a [job] key
//
// Unknown sections and keys are rejected with their dotted path.

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "faasml/costmodel.hpp"
#include "faasml/error.hpp"
#include "faasml/runtime.hpp"

namespace faasml {

using Preset = std::vector<std::pair<std::string, std::string>>;

/// Workload settings per dataset and model: workers, batch size, k and loss threshold.
inline const std::map<std::string, Preset>& builtin_presets() {
  static const std::map<std::string, Preset> table = {
      {"higgs_lr", {{"model", "lr"}, {"workers", "10"}, {"batch_size", "10000"}, {"threshold", "0.66"}}},
      {"higgs_svm", {{"model", "svm"}, {"workers", "10"}, {"batch_size", "10000"}, {"threshold", "0.48"}}},
      {"higgs_kmeans",
       {{"model", "kmeans"}, {"algorithm", "kmeans_em"}, {"workers", "10"}, {"clusters", "10"}, {"threshold", "0.15"}}},
      {"rcv1_lr", {{"model", "lr"}, {"workers", "5"}, {"batch_size", "2000"}, {"threshold", "0.68"}}},
      {"rcv1_svm", {{"model", "svm"}, {"workers", "5"}, {"batch_size", "2000"}, {"threshold", "0.05"}}},
      {"rcv1_kmeans",
       {{"model", "kmeans"}, {"algorithm", "kmeans_em"}, {"workers", "50"}, {"clusters", "3"}, {"threshold", "0.01"}}},
      {"yfcc_lr", {{"model", "lr"}, {"workers", "100"}, {"batch_size", "800"}, {"threshold", "50"}}},
      {"yfcc_svm", {{"model", "svm"}, {"workers", "100"}, {"batch_size", "800"}, {"threshold", "50"}}},
      {"yfcc_kmeans",
       {{"model", "kmeans"}, {"algorithm", "kmeans_em"}, {"workers", "100"}, {"clusters", "10"}, {"threshold", "50"}}},
  };
  return table;
}

namespace detail {

inline double parse_real(const std::string& path, const std::string& text) {
  double v = 0.0;
  const auto* b = text.data();
  const auto* e = b + text.size();
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ConfigError(path, "expected a number, got '" + text + "'");
  return v;
}

inline std::uint64_t parse_count(const std::string& path, const std::string& text) {
  if (!text.empty() && text[0] == '-') throw ConfigError(path, "must be >= 0, got '" + text + "'");
  std::uint64_t v = 0;
  const auto* b = text.data();
  const auto* e = b + text.size();
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ConfigError(path, "expected a non-negative integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& path, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(path, "expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
  }
  return out;
}

/// "w:value,w:value" pairs.
inline std::vector<std::pair<double, double>> parse_table(const std::string& path, const std::string& text) {
  std::vector<std::pair<double, double>> out;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 2) throw ConfigError(path, "expected w:value pairs, got '" + item + "'");
    out.emplace_back(parse_real(path, parts[0]), parse_real(path, parts[1]));
  }
  if (out.empty()) throw ConfigError(path, "table is empty");
  return out;
}

inline std::map<std::size_t, double> parse_stragglers(const std::string& path, const std::string& text) {
  std::map<std::size_t, double> out;
  if (text.empty()) return out;
  for (const auto& [rank, factor] : parse_table(path, text)) {
    if (rank < 0 || rank != static_cast<double>(static_cast<std::size_t>(rank))) {
      throw ConfigError(path, "straggler ranks must be integers");
    }
    out[static_cast<std::size_t>(rank)] = factor;
  }
  return out;
}

template <typename T>
T parse_enum(const std::string& path, const std::string& text, std::optional<T> (*from)(const std::string&),
             const char* valid) {
  if (auto v = from(text)) return *v;
  throw ConfigError(path, "unknown value '" + text + "' (valid: " + std::string(valid) + ")");
}

inline std::optional<Algorithm> algorithm_opt(const std::string& s) { return algorithm_from_string(s); }

/// Applies one [job] key. Returns false for an unknown key.
inline bool apply_job_key(JobConfig& c, const std::string& key, const std::string& v) {
  const std::string path = "job." + key;
  if (key == "model") {
    c.model = parse_enum(path, v, &model_kind_from_string, "lr, svm, ridge, kmeans");
  } else if (key == "algorithm") {
    c.algorithm = parse_enum(path, v, &algorithm_opt, "ga_sgd, ma_sgd, admm, kmeans_em");
  } else if (key == "pattern") {
    c.pattern = parse_enum(path, v, &pattern_from_string, "allreduce, scatterreduce, ps");
  } else if (key == "sync") {
    c.sync = parse_enum(path, v, &sync_from_string, "bsp, asp");
  } else if (key == "mode") {
    c.mode = parse_enum(path, v, &run_mode_from_string, "simulate, real_local");
  } else if (key == "dataset") {
    if (v == "synthetic") {
      c.dataset.kind = DatasetSource::Kind::synthetic;
    } else if (v == "libsvm") {
      c.dataset.kind = DatasetSource::Kind::libsvm;
    } else {
      throw ConfigError(path, "unknown value '" + v + "' (valid: synthetic, libsvm)");
    }
  } else if (key == "dataset_path") {
    c.dataset.path = v;
  } else if (key == "n") {
    c.dataset.n = parse_count(path, v);
  } else if (key == "d") {
    c.dataset.d = parse_count(path, v);
  } else if (key == "dataset_seed") {
    c.dataset.seed = parse_count(path, v);
  } else if (key == "workers") {
    c.workers = parse_count(path, v);
  } else if (key == "learning_rate") {
    c.learning_rate = parse_real(path, v);
  } else if (key == "batch_size") {
    c.batch_size = parse_count(path, v);
  } else if (key == "local_epochs") {
    c.local_epochs = parse_count(path, v);
  } else if (key == "rho") {
    c.rho = parse_real(path, v);
  } else if (key == "l2") {
    c.l2 = parse_real(path, v);
  } else if (key == "clusters") {
    c.clusters = parse_count(path, v);
  } else if (key == "threshold") {
    c.threshold = parse_real(path, v);
  } else if (key == "max_epochs") {
    c.max_epochs = parse_count(path, v);
  } else if (key == "lifetime_s") {
    c.lifetime_s = parse_real(path, v);
  } else if (key == "checkpoint_margin_s") {
    c.checkpoint_margin_s = parse_real(path, v);
  } else if (key == "seed") {
    c.seed = parse_count(path, v);
  } else if (key == "stragglers") {
    c.stragglers = parse_stragglers(path, v);
  } else if (key == "compute_s_per_epoch") {
    c.compute_s_per_epoch = parse_real(path, v);
  } else if (key == "compute_ns_per_value") {
    c.compute_ns_per_value = parse_real(path, v);
  } else if (key == "timeout_s") {
    c.timeout_s = parse_real(path, v);
  } else if (key == "poll_interval_s") {
    c.poll_interval_s = parse_real(path, v);
  } else if (key == "work_dir") {
    c.work_dir = v;
  } else if (key == "record_models") {
    c.record_models = parse_bool(path, v);
  } else {
    return false;
  }
  return true;
}

inline void apply_preset(JobConfig& c, const std::string& path, const Preset& preset) {
  for (const auto& [k, v] : preset) {
    if (!apply_job_key(c, k, v)) throw ConfigError(path, "preset sets unknown field '" + k + "'");
  }
}

inline bool apply_pricing_key(Pricing& p, const std::string& key, const std::string& v) {
  const std::string path = "pricing." + key;
  if (key == "faas_usd_per_worker_second") {
    p.faas_usd_per_worker_second = parse_real(path, v);
  } else if (key == "vm_usd_per_hour") {
    p.vm_usd_per_hour = parse_real(path, v);
  } else if (key == "ps_vm_usd_per_hour") {
    p.ps_vm_usd_per_hour = parse_real(path, v);
  } else if (key == "channel_usd_per_hour") {
    p.channel_usd_per_hour = parse_real(path, v);
  } else {
    return false;
  }
  return true;
}

inline bool apply_costmodel_key(CostModelParams& p, const std::string& key, const std::string& v) {
  const std::string path = "costmodel." + key;
  const std::map<std::string, double*> reals = {
      {"s", &p.s},         {"m", &p.m},         {"B_S3", &p.b_s3},     {"B_EBS", &p.b_ebs},
      {"B_n", &p.b_n},     {"B_EC", &p.b_ec},   {"B_ps", &p.b_ps},     {"L_S3", &p.l_s3},
      {"L_EBS", &p.l_ebs}, {"L_n", &p.l_n},     {"L_EC", &p.l_ec},     {"L_ps", &p.l_ps},
      {"R_F", &p.r_faas},  {"R_I", &p.r_iaas},  {"C_F", &p.c_faas},    {"C_I", &p.c_iaas},
      {"channel_startup_s", &p.channel_startup_s}};
  if (auto it = reals.find(key); it != reals.end()) {
    *it->second = parse_real(path, v);
  } else if (key == "w") {
    p.w = parse_count(path, v);
  } else if (key == "t_F") {
    try {
      p.startup_faas = StartupTable(parse_table(path, v), StartupTable::Below::scale);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(path, e.what());
    }
  } else if (key == "t_I") {
    try {
      p.startup_iaas = StartupTable(parse_table(path, v), StartupTable::Below::hold);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(path, e.what());
    }
  } else if (key == "f_F" || key == "f_I") {
    try {
      (key == "f_F" ? p.f_faas : p.f_iaas) = ScalingCurve(parse_table(path, v));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(path, e.what());
    }
  } else if (key == "channel") {
    if (v == "S3" || v == "s3") {
      p.channel = FaasChannel::s3;
    } else if (v == "EC" || v == "ec" || v == "elasticache") {
      p.channel = FaasChannel::elasticache;
    } else {
      throw ConfigError(path, "unknown value '" + v + "' (valid: S3, EC)");
    }
  } else {
    return false;
  }
  return true;
}

inline std::optional<std::string> env_value(const char* name) {
  const char* v = std::getenv(name);
  if (!v) return std::nullopt;
  return std::string(v);
}

}  // namespace detail

struct ExperimentFile {
  JobConfig job;
  CostModelParams costmodel;
  bool has_costmodel = false;
};

/// Parses INI text. `source` names the file in error messages.
inline ExperimentFile parse_experiment(std::istream& in, const std::string& source = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source, std::string("cannot parse: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(section, "key outside any section");
    if (section != "job" && section != "channel" && section != "costmodel" && section != "pricing" &&
        section != "presets") {
      throw ConfigError(section, "unknown section");
    }
  }

  // A user preset replaces a built-in one of the same name entirely.
  std::map<std::string, Preset> custom;
  if (auto sec = tree.get_child_optional("presets")) {
    for (const auto& [key, node] : *sec) {
      const auto dot = key.find('.');
      if (dot == std::string::npos || dot == 0 || dot + 1 == key.size()) {
        throw ConfigError("presets." + key, "preset keys are NAME.FIELD");
      }
      const auto name = key.substr(0, dot);
      const auto field = key.substr(dot + 1);
      JobConfig probe;
      if (!detail::apply_job_key(probe, field, node.data())) {
        throw ConfigError("presets." + key, "unknown field '" + field + "'");
      }
      custom[name].emplace_back(field, node.data());
    }
  }
  std::map<std::string, Preset> presets = builtin_presets();
  for (auto& [name, fields] : custom) presets[name] = std::move(fields);

  ExperimentFile out;
  JobConfig& job = out.job;
  if (auto sec = tree.get_child_optional("job")) {
    if (auto p = sec->get_optional<std::string>("preset")) {
      auto it = presets.find(*p);
      if (it == presets.end()) {
        std::string names;
        for (const auto& [n, _] : presets) names += (names.empty() ? "" : ", ") + n;
        throw ConfigError("job.preset", "unknown preset '" + *p + "' (known: " + names + ")");
      }
      detail::apply_preset(job, "job.preset", it->second);
    }
    for (const auto& [key, node] : *sec) {
      if (key == "preset") continue;
      if (!detail::apply_job_key(job, key, node.data())) throw ConfigError("job." + key, "unknown key");
    }
  }

  if (auto sec = tree.get_child_optional("channel")) {
    std::optional<ChannelProfile> custom;
    auto profile = [&]() -> ChannelProfile& {
      if (!custom) {
        try {
          custom = lookup_profile(job.channel);
        } catch (const Error& e) {
          throw ConfigError("channel.name", e.what());
        }
      }
      return *custom;
    };
    if (auto n = sec->get_optional<std::string>("name")) job.channel = *n;
    for (const auto& [key, node] : *sec) {
      const std::string path = "channel." + key;
      const auto& v = node.data();
      if (key == "name") continue;
      if (key == "data") {
        job.data_channel = v;
      } else if (key == "ps") {
        job.ps_channel = v;
      } else if (key == "bandwidth_MBps") {
        profile().bandwidth_MBps = detail::parse_real(path, v);
      } else if (key == "latency_s") {
        profile().latency_s = detail::parse_real(path, v);
      } else if (key == "startup_s") {
        profile().startup_s = detail::parse_real(path, v);
      } else if (key == "max_item_bytes") {
        profile().max_item_bytes = detail::parse_count(path, v);
      } else if (key == "hourly_price_usd") {
        profile().hourly_price_usd = detail::parse_real(path, v);
      } else if (key == "overhead_s_per_MB") {
        profile().overhead_s_per_MB = detail::parse_real(path, v);
      } else {
        throw ConfigError(path, "unknown key");
      }
    }
    job.channel_profile = custom;
  }

  if (auto sec = tree.get_child_optional("pricing")) {
    for (const auto& [key, node] : *sec) {
      if (!detail::apply_pricing_key(job.pricing, key, node.data())) throw ConfigError("pricing." + key, "unknown key");
    }
  }
  out.costmodel.pricing = job.pricing;

  if (auto sec = tree.get_child_optional("costmodel")) {
    out.has_costmodel = true;
    for (const auto& [key, node] : *sec) {
      if (!detail::apply_costmodel_key(out.costmodel, key, node.data())) {
        throw ConfigError("costmodel." + key, "unknown key");
      }
    }
    try {
      out.costmodel.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("costmodel", e.what());
    }
  }

  if (auto seed = detail::env_value("FAASML_SEED")) job.seed = detail::parse_count("FAASML_SEED", *seed);
  return out;
}

inline ExperimentFile load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  return parse_experiment(in, path);
}

}  // namespace faasml
