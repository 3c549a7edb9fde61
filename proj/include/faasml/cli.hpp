// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: `train`, `model` and `estimate`.
//
// Exit codes: 0 success (train: converged), 2 train finished without
// converging or an estimate failed, 1 any error.

#pragma once

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "faasml/config.hpp"
#include "faasml/costmodel.hpp"
#include "faasml/report.hpp"
#include "faasml/runtime.hpp"

namespace faasml {

struct TrainOptionsCli {
  std::string config;
  std::string out_dir = ".";
  std::optional<std::string> mode, algorithm, channel, pattern, sync;
  std::optional<std::uint64_t> workers, seed;
};

/// Cost-model inputs for a job configuration and dataset at R epochs.
inline CostModelParams params_for_config(const JobConfig& cfg, const Dataset& data, double epochs) {
  JobReport shape;
  shape.dataset_mb = static_cast<double>(data.n_rows() * (data.n_features() + 1) * 8) / 1e6;
  const std::size_t dim = cfg.model == ModelKind::kmeans ? cfg.clusters * data.n_features() : data.n_features();
  shape.model_mb = static_cast<double>(dim * 8) / 1e6;
  shape.compute_s_per_epoch = default_compute_seconds(cfg, data);
  auto p = params_for_job(cfg, shape);
  p.r_faas = p.r_iaas = epochs;
  return p;
}

inline int cmd_train(const TrainOptionsCli& o, std::ostream& out) {
  auto file = load_experiment(o.config);
  JobConfig& cfg = file.job;
  if (o.mode) detail::apply_job_key(cfg, "mode", *o.mode);
  if (o.algorithm) detail::apply_job_key(cfg, "algorithm", *o.algorithm);
  if (o.pattern) detail::apply_job_key(cfg, "pattern", *o.pattern);
  if (o.sync) detail::apply_job_key(cfg, "sync", *o.sync);
  if (o.workers) cfg.workers = *o.workers;
  if (o.seed) cfg.seed = *o.seed;
  if (o.channel) {
    cfg.channel = *o.channel;
    cfg.channel_profile.reset();
  }
  const auto report = run_job(cfg);

  const std::filesystem::path dir(o.out_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "report.json");
    f << to_json(report).dump(2) << '\n';
    if (!f) throw Error(ErrorCode::io, "cannot write " + (dir / "report.json").string());
  }
  {
    std::ofstream f(dir / "trace.csv");
    write_trace_csv(f, report.trace);
    if (!f) throw Error(ErrorCode::io, "cannot write " + (dir / "trace.csv").string());
  }
  out << (report.converged ? "converged" : "not converged") << " after " << report.epochs << " epochs, "
      << report.rounds << " rounds, " << exact_number(report.breakdown.total_s) << " s, $"
      << exact_number(report.cost_usd) << '\n';
  return report.converged ? 0 : 2;
}

inline std::vector<std::size_t> parse_w_list(const std::string& text) {
  std::vector<std::size_t> ws;
  for (const auto& item : detail::split(text, ',')) {
    if (item.empty()) continue;
    ws.push_back(detail::parse_count("--sweep", item));
  }
  if (ws.empty()) throw Error(ErrorCode::invalid_argument, "--sweep needs at least one worker count");
  for (auto w : ws) {
    if (w < 1) throw Error(ErrorCode::invalid_argument, "--sweep worker counts must be >= 1");
  }
  return ws;
}

inline int cmd_model(const std::string& constants, const std::string& sweep_list, const std::string& scenario,
                     std::ostream& out) {
  const auto sc = scenario_by_name(scenario);
  CostModelParams p;
  if (!constants.empty()) {
    auto file = load_experiment(constants);
    p = file.costmodel;
    p.pricing = file.job.pricing;
  }
  const auto rows = sweep(standard_configs(apply_scenario(p, sc)), parse_w_list(sweep_list));
  write_sweep_csv(out, rows);
  return 0;
}

inline nlohmann::json breakdown_json(const CostBreakdown& b, double cost) {
  return {{"time_s", b.total_s},   {"startup_s", b.startup_s}, {"loading_s", b.loading_s},
          {"comm_s", b.comm_s},    {"compute_s", b.compute_s}, {"cost_usd", cost}};
}

inline int cmd_estimate(const std::string& config, double sample_frac, bool actual, std::ostream& out) {
  const auto file = load_experiment(config);
  const JobConfig& cfg = file.job;
  cfg.validate();
  const Dataset data = load_dataset(cfg);

  std::vector<std::pair<std::string, Algorithm>> algos;
  if (cfg.model == ModelKind::kmeans) {
    algos = {{"kmeans", Algorithm::kmeans_em}};
  } else {
    algos = {{"sgd", Algorithm::ga_sgd}, {"admm", Algorithm::admm}};
  }

  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["sample_frac"] = sample_frac;
  j["workers"] = cfg.workers;
  auto& list = j["estimates"] = nlohmann::json::array();
  bool all_ok = true;
  for (const auto& [name, algo] : algos) {
    TrainOptions opt;
    opt.kind = cfg.model;
    opt.algorithm = algo;
    opt.learning_rate = cfg.learning_rate;
    opt.batch_size = cfg.batch_size;
    opt.local_epochs = cfg.local_epochs;
    opt.rho = cfg.rho;
    opt.l2 = cfg.l2;
    opt.clusters = cfg.clusters;
    opt.max_epochs = cfg.max_epochs;
    nlohmann::json e{{"algorithm", name}};
    try {
      const auto est = estimate_epochs(data, opt, cfg.threshold, sample_frac, cfg.seed);
      j["R_" + name] = est.epochs;
      e["R"] = est.epochs;
      e["sample_loss"] = est.loss;
      const auto p = params_for_config(cfg, data, static_cast<double>(est.epochs));
      const auto faas = faas_time(p);
      const auto iaas = iaas_time(p);
      e["faas"] = breakdown_json(faas, model_cost(p, Infra::faas, faas.total_s));
      e["iaas"] = breakdown_json(iaas, model_cost(p, Infra::iaas, iaas.total_s));
    } catch (const EstimateFailed& err) {
      all_ok = false;
      j["R_" + name] = nullptr;
      e["R"] = nullptr;
      e["error"] = err.what();
      e["best_loss"] = err.best_loss();
    }
    if (actual) {
      JobConfig run = cfg;
      run.algorithm = algo;
      if (algo == Algorithm::admm) run.pattern = run.pattern == Pattern::ps ? Pattern::allreduce : run.pattern;
      const auto r = run_job(run, data);
      e["actual"] = {{"epochs", r.epochs}, {"converged", r.converged}, {"time_s", r.breakdown.total_s},
                     {"cost_usd", r.cost_usd}};
    }
    list.push_back(e);
  }
  out << j.dump(2) << '\n';
  return all_ok ? 0 : 2;
}

/// Parses argv and dispatches. Errors go to `err` and yield exit code 1.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Serverless ML training simulator and cost model", "faasml"};
  app.require_subcommand(1);

  TrainOptionsCli train;
  auto* t = app.add_subcommand("train", "run a training job and write report.json and trace.csv");
  t->add_option("--config", train.config, "experiment INI file")->required();
  t->add_option("--out", train.out_dir, "output directory");
  t->add_option("--mode", train.mode, "real_local or simulate");
  t->add_option("--workers", train.workers, "number of workers");
  t->add_option("--algorithm", train.algorithm, "ga_sgd, ma_sgd, admm or kmeans_em");
  t->add_option("--channel", train.channel, "communication channel profile");
  t->add_option("--pattern", train.pattern, "allreduce, scatterreduce or ps");
  t->add_option("--sync", train.sync, "bsp or asp");
  t->add_option("--seed", train.seed, "random seed");

  std::string constants, sweep_list = "10", scenario = "baseline";
  auto* m = app.add_subcommand("model", "evaluate the analytical cost model as CSV");
  m->add_option("--constants", constants, "INI file with [costmodel] and [pricing]");
  m->add_option("--sweep", sweep_list, "comma-separated worker counts");
  m->add_option("--scenario", scenario, "baseline, hybrid_fast_link or hot_data");

  std::string est_config;
  double sample_frac = 0.1;
  bool actual = false;
  auto* e = app.add_subcommand("estimate", "estimate epochs by sampling and predict end-to-end time");
  e->add_option("--config", est_config, "experiment INI file")->required();
  e->add_option("--sample-frac", sample_frac, "fraction of rows to train on");
  e->add_flag("--actual", actual, "also run the simulated jobs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << '\n';
    return 1;
  }

  try {
    if (*t) return cmd_train(train, out);
    if (*m) return cmd_model(constants, sweep_list, scenario, out);
    if (*e) return cmd_estimate(est_config, sample_frac, actual, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace faasml
