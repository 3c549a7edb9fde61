// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Report serialization: report.json (schema "v1") and trace.csv.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "faasml/runtime.hpp"

namespace faasml {

inline constexpr const char* kReportSchema = "v1";
inline constexpr const char* kTraceCsvHeader = "epoch,time_s,loss";

inline nlohmann::json to_json(const PhaseBreakdown& b) {
  return {{"startup_s", b.startup_s},
          {"loading_s", b.loading_s},
          {"compute_s", b.compute_s},
          {"communication_s", b.communication_s},
          {"total_s", b.total_s}};
}

inline nlohmann::json config_json(const JobConfig& c) {
  nlohmann::json stragglers = nlohmann::json::object();
  for (const auto& [rank, f] : c.stragglers) stragglers[std::to_string(rank)] = f;
  return {{"model", to_string(c.model)},
          {"algorithm", to_string(c.algorithm)},
          {"workers", c.workers},
          {"channel", c.resolved_channel().name},
          {"pattern", to_string(c.pattern)},
          {"sync", to_string(c.sync)},
          {"mode", to_string(c.mode)},
          {"seed", c.seed},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"local_epochs", c.local_epochs},
          {"rho", c.rho},
          {"l2", c.l2},
          {"clusters", c.clusters},
          {"threshold", c.threshold},
          {"max_epochs", c.max_epochs},
          {"lifetime_s", c.lifetime_s},
          {"checkpoint_margin_s", c.checkpoint_margin_s},
          {"stragglers", stragglers}};
}

inline nlohmann::json to_json(const JobReport& r) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["config"] = config_json(r.config);
  j["converged"] = r.converged;
  j["epochs"] = r.epochs;
  j["rounds"] = r.rounds;
  j["bytes"] = r.bytes;
  j["cost_usd"] = r.cost_usd;
  j["final_loss"] = r.final_loss;
  j["final_metric"] = r.final_metric;
  j["primal_residual"] = r.primal_residual ? nlohmann::json(*r.primal_residual) : nlohmann::json(nullptr);
  j["breakdown"] = to_json(r.breakdown);
  auto& workers = j["workers"] = nlohmann::json::array();
  for (const auto& w : r.workers) {
    workers.push_back({{"rank", w.rank},
                       {"iterations", w.iterations},
                       {"respawns", w.respawns},
                       {"finish_s", w.finish_s},
                       {"breakdown", to_json(w.breakdown)}});
  }
  auto& trace = j["trace"] = nlohmann::json::array();
  for (const auto& t : r.trace) trace.push_back({{"epoch", t.epoch}, {"time_s", t.time_s}, {"loss", t.loss}});
  j["final_model"] = r.final_model;
  return j;
}

/// Shortest text that reads back to the same double.
inline std::string exact_number(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace) {
  out << kTraceCsvHeader << '\n';
  for (const auto& t : trace) out << t.epoch << ',' << exact_number(t.time_s) << ',' << exact_number(t.loss) << '\n';
}

}  // namespace faasml
