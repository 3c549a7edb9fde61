// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytical end-to-end time and dollar cost for FaaS, IaaS and hybrid
// (FaaS workers + VM parameter server) training, the sampling epoch
// estimator, what-if scenarios and w sweeps.
//
//   FaaS(w) = tF(w) + s/B_s3 + R_F f_F(w) [(3w-2)(m/w/B_sel + L_sel) + C_F/w]
//   IaaS(w) = tI(w) + s/B_s3 + R_I f_I(w) [(2w-2)(m/w/B_n + L_n) + C_I/w]
//
// Sizes are MB, bandwidths MB/s, latencies and times seconds.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "faasml/error.hpp"
#include "faasml/model_core.hpp"
#include "faasml/optimizers.hpp"

namespace faasml {

/// Measured startup seconds at a few worker counts, linearly interpolated.
class StartupTable {
 public:
  enum class Below { scale, hold };

  StartupTable() = default;
  StartupTable(std::vector<std::pair<double, double>> points, Below below)
      : points_(std::move(points)), below_(below) {
    validate();
  }

  void validate() const {
    if (points_.empty()) throw Error(ErrorCode::invalid_argument, "startup table needs at least one point");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!(points_[i].first >= 1.0) || !(points_[i].second >= 0.0)) {
        throw Error(ErrorCode::invalid_argument, "startup table points need w >= 1 and seconds >= 0");
      }
      if (i && !(points_[i].first > points_[i - 1].first)) {
        throw Error(ErrorCode::invalid_argument, "startup table worker counts must be strictly increasing");
      }
    }
  }

  /// Below the first point: scaled by w/w0 (scale) or held (hold). Above
  /// the last: extended along the last segment.
  double at(double w) const {
    if (points_.empty()) throw Error(ErrorCode::invalid_argument, "startup table is empty");
    const auto& first = points_.front();
    if (w <= first.first) return below_ == Below::scale ? first.second * w / first.first : first.second;
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const auto& [w1, t1] = points_[i];
      if (w <= w1) {
        const auto& [w0, t0] = points_[i - 1];
        if (w == w1) return t1;
        return t0 + (t1 - t0) * (w - w0) / (w1 - w0);
      }
    }
    if (points_.size() == 1) return points_.back().second;
    const auto& [w0, t0] = points_[points_.size() - 2];
    const auto& [w1, t1] = points_.back();
    return std::max(0.0, t1 + (t1 - t0) * (w - w1) / (w1 - w0));
  }

  const std::vector<std::pair<double, double>>& points() const noexcept { return points_; }
  Below below() const noexcept { return below_; }

  static StartupTable faas_default() { return {{{10, 1.2}, {50, 11}, {100, 18}, {200, 35}}, Below::scale}; }
  static StartupTable iaas_default() { return {{{10, 132}, {50, 160}, {100, 292}, {200, 606}}, Below::hold}; }

 private:
  std::vector<std::pair<double, double>> points_;
  Below below_ = Below::hold;
};

/// Multiplier on epochs-to-converge at w workers; identity unless given.
class ScalingCurve {
 public:
  ScalingCurve() = default;
  explicit ScalingCurve(std::vector<std::pair<double, double>> points) : points_(std::move(points)) {
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!(points_[i].second > 0.0)) throw Error(ErrorCode::invalid_argument, "scaling factors must be > 0");
      if (i && !(points_[i].first > points_[i - 1].first)) {
        throw Error(ErrorCode::invalid_argument, "scaling curve worker counts must be strictly increasing");
      }
    }
    if (!points_.empty() && (points_.front().first != 1.0 || points_.front().second != 1.0)) {
      throw Error(ErrorCode::invalid_argument, "scaling curve must start at f(1) = 1");
    }
  }

  double at(double w) const {
    if (points_.empty()) return 1.0;
    if (w <= points_.front().first) return points_.front().second;
    for (std::size_t i = 1; i < points_.size(); ++i) {
      if (w <= points_[i].first) {
        const auto& [w0, f0] = points_[i - 1];
        const auto& [w1, f1] = points_[i];
        return f0 + (f1 - f0) * (w - w0) / (w1 - w0);
      }
    }
    return points_.back().second;
  }

  const std::vector<std::pair<double, double>>& points() const noexcept { return points_; }

 private:
  std::vector<std::pair<double, double>> points_;
};

enum class FaasChannel { s3, elasticache };
enum class Infra { faas, iaas, hybrid };

inline const char* to_string(Infra i) {
  switch (i) {
    case Infra::faas: return "faas";
    case Infra::iaas: return "iaas";
    case Infra::hybrid: return "hybrid";
  }
  return "?";
}

/// Unit prices. The FaaS per-worker-second default is a 3 GB function at
/// a typical public list price; it is not a measured constant.
struct Pricing {
  double faas_usd_per_worker_second = 3.0 * 0.0000166667;
  double vm_usd_per_hour = 0.0464;      // t2.medium
  double ps_vm_usd_per_hour = 0.75;     // g3s.xlarge
  double channel_usd_per_hour = 0.0;    // e.g. a cache node

  void validate() const {
    if (faas_usd_per_worker_second < 0 || vm_usd_per_hour < 0 || ps_vm_usd_per_hour < 0 || channel_usd_per_hour < 0) {
      throw Error(ErrorCode::invalid_argument, "prices must be >= 0");
    }
  }
};

/// FaaS: worker-seconds plus the channel billed per started hour.
/// IaaS: VM-seconds. Hybrid: FaaS workers plus one PS VM.
inline double dollar_cost(double time_s, std::size_t w, const Pricing& pricing, Infra infra,
                          double extras_usd_per_hour = 0.0) {
  if (time_s < 0.0) throw Error(ErrorCode::invalid_argument, "time must be >= 0");
  const double workers = static_cast<double>(w);
  const double hours_started = std::ceil(time_s / 3600.0);
  switch (infra) {
    case Infra::faas:
      return workers * time_s * pricing.faas_usd_per_worker_second + extras_usd_per_hour * hours_started;
    case Infra::iaas:
      return workers * time_s * pricing.vm_usd_per_hour / 3600.0 + extras_usd_per_hour * hours_started;
    case Infra::hybrid:
      return workers * time_s * pricing.faas_usd_per_worker_second + time_s * pricing.ps_vm_usd_per_hour / 3600.0 +
             extras_usd_per_hour * hours_started;
  }
  return 0.0;
}

enum class LoadSource { s3, vm };

struct CostModelParams {
  double s = 0.0;  // dataset MB
  double m = 0.0;  // model MB
  std::size_t w = 1;
  StartupTable startup_faas = StartupTable::faas_default();
  StartupTable startup_iaas = StartupTable::iaas_default();
  double b_s3 = 65, b_ebs = 1950, b_n = 120, b_ec = 630;
  double l_s3 = 0.08, l_ebs = 3e-5, l_n = 5e-4, l_ec = 0.01;
  // Hybrid worker <-> PS VM link.
  double b_ps = 75.0 / 1.85, l_ps = 1.5e-4;
  double r_faas = 0, r_iaas = 0;
  ScalingCurve f_faas, f_iaas;
  double c_faas = 0, c_iaas = 0;
  FaasChannel channel = FaasChannel::s3;
  // Extra provisioning time of the FaaS channel (e.g. a cache cluster).
  double channel_startup_s = 0.0;
  // Where FaaS/hybrid workers load data from; IaaS reads local EBS when
  // the data is on a VM.
  LoadSource load_from = LoadSource::s3;
  Pricing pricing;

  void validate() const {
    if (w < 1) throw Error(ErrorCode::invalid_argument, "w must be >= 1");
    for (double b : {b_s3, b_ebs, b_n, b_ec, b_ps}) {
      if (!(b > 0.0) || !std::isfinite(b)) throw Error(ErrorCode::invalid_argument, "bandwidths must be > 0");
    }
    for (double l : {l_s3, l_ebs, l_n, l_ec, l_ps}) {
      if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorCode::invalid_argument, "latencies must be >= 0");
    }
    for (double v : {s, m, r_faas, r_iaas, c_faas, c_iaas, channel_startup_s}) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw Error(ErrorCode::invalid_argument, "sizes, epochs and compute times must be finite and >= 0");
      }
    }
    startup_faas.validate();
    startup_iaas.validate();
    pricing.validate();
  }

  double b_sel() const { return channel == FaasChannel::s3 ? b_s3 : b_ec; }
  double l_sel() const { return channel == FaasChannel::s3 ? l_s3 : l_ec; }
};

struct CostBreakdown {
  double startup_s = 0, loading_s = 0, comm_s = 0, compute_s = 0, total_s = 0;
};

namespace detail {

inline CostBreakdown finish(double startup, double loading, double comm, double compute) {
  // Summed in a fixed order so the parts add up to the total exactly.
  return {startup, loading, comm, compute, ((startup + loading) + comm) + compute};
}

inline double faas_loading(const CostModelParams& p) {
  return p.load_from == LoadSource::s3 ? p.s / p.b_s3 : p.s / p.b_ps;
}

}  // namespace detail

inline CostBreakdown faas_time(const CostModelParams& p) {
  p.validate();
  const double w = static_cast<double>(p.w);
  const double rounds = p.r_faas * p.f_faas.at(w);
  const double per_transfer = p.m / w / p.b_sel() + p.l_sel();
  return detail::finish(p.startup_faas.at(w) + p.channel_startup_s, detail::faas_loading(p),
                        rounds * (3.0 * w - 2.0) * per_transfer, rounds * (p.c_faas / w));
}

inline CostBreakdown iaas_time(const CostModelParams& p) {
  p.validate();
  const double w = static_cast<double>(p.w);
  const double rounds = p.r_iaas * p.f_iaas.at(w);
  const double per_transfer = p.m / w / p.b_n + p.l_n;
  const double loading = p.load_from == LoadSource::s3 ? p.s / p.b_s3 : p.s / p.b_ebs + p.l_ebs;
  return detail::finish(p.startup_iaas.at(w), loading, rounds * (2.0 * w - 2.0) * per_transfer,
                        rounds * (p.c_iaas / w));
}

/// FaaS workers exchanging through a VM parameter server: one push and one
/// pull per worker per round. The PS VM boots alongside the functions.
inline CostBreakdown hybrid_time(const CostModelParams& p) {
  p.validate();
  const double w = static_cast<double>(p.w);
  const double rounds = p.r_faas * p.f_faas.at(w);
  const double per_transfer = p.m / w / p.b_ps + p.l_ps;
  return detail::finish(std::max(p.startup_faas.at(w), p.startup_iaas.at(1.0)), detail::faas_loading(p),
                        rounds * (2.0 * w) * per_transfer, rounds * (p.c_faas / w));
}

inline CostBreakdown model_time(const CostModelParams& p, Infra infra) {
  switch (infra) {
    case Infra::faas: return faas_time(p);
    case Infra::iaas: return iaas_time(p);
    case Infra::hybrid: return hybrid_time(p);
  }
  return {};
}

inline double model_cost(const CostModelParams& p, Infra infra, double time_s) {
  const double extras = infra == Infra::iaas ? 0.0 : p.pricing.channel_usd_per_hour;
  return dollar_cost(time_s, p.w, p.pricing, infra, infra == Infra::hybrid ? 0.0 : extras);
}

// ---------------------------------------------------------------- scenarios

enum class Scenario { baseline, hybrid_fast_link, hot_data };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::baseline: return "baseline";
    case Scenario::hybrid_fast_link: return "hybrid_fast_link";
    case Scenario::hot_data: return "hot_data";
  }
  return "?";
}

inline Scenario scenario_by_name(const std::string& name) {
  for (auto s : {Scenario::baseline, Scenario::hybrid_fast_link, Scenario::hot_data}) {
    if (name == to_string(s)) return s;
  }
  throw Error(ErrorCode::invalid_argument,
              "unknown scenario '" + name + "'; valid scenarios: baseline, hybrid_fast_link, hot_data");
}

inline constexpr double kFastLinkMBps = 10000.0;  // 10 GBps

inline CostModelParams apply_scenario(CostModelParams p, Scenario s) {
  switch (s) {
    case Scenario::baseline: break;
    case Scenario::hybrid_fast_link: p.b_ps = kFastLinkMBps; break;
    case Scenario::hot_data: p.load_from = LoadSource::vm; break;
  }
  return p;
}

struct VariantResult {
  Infra infra = Infra::faas;
  CostBreakdown time;
  double cost_usd = 0.0;
};

struct WhatIfReport {
  Scenario scenario = Scenario::baseline;
  CostModelParams params;
  std::vector<VariantResult> variants;
};

inline WhatIfReport whatif(Scenario scenario, const CostModelParams& base) {
  WhatIfReport r{scenario, apply_scenario(base, scenario), {}};
  for (auto infra : {Infra::faas, Infra::iaas, Infra::hybrid}) {
    const auto t = model_time(r.params, infra);
    r.variants.push_back({infra, t, model_cost(r.params, infra, t.total_s)});
  }
  return r;
}

// -------------------------------------------------------------------- sweep

struct SweepConfig {
  std::string name;
  Infra infra = Infra::faas;
  CostModelParams params;
};

struct SweepRow {
  std::string config;
  std::size_t w = 1;
  CostBreakdown time;
  double cost_usd = 0.0;
  bool pareto = false;
};

inline constexpr const char* kSweepCsvHeader = "config,w,time_s,cost_usd,startup_s,loading_s,comm_s,compute_s,pareto";

/// Rows are ordered by config then w. A row is on its config's pareto front
/// when no other row of that config is at least as fast and as cheap and
/// strictly better in one of the two.
inline std::vector<SweepRow> sweep(const std::vector<SweepConfig>& configs, const std::vector<std::size_t>& w_values) {
  if (w_values.empty()) throw Error(ErrorCode::invalid_argument, "sweep needs at least one w");
  std::vector<SweepRow> rows;
  for (const auto& cfg : configs) {
    const std::size_t first = rows.size();
    for (auto w : w_values) {
      auto p = cfg.params;
      p.w = w;
      const auto t = model_time(p, cfg.infra);
      rows.push_back({cfg.name, w, t, model_cost(p, cfg.infra, t.total_s), false});
    }
    for (std::size_t i = first; i < rows.size(); ++i) {
      bool dominated = false;
      for (std::size_t j = first; j < rows.size() && !dominated; ++j) {
        if (i == j) continue;
        const auto& a = rows[j];
        const auto& b = rows[i];
        dominated = a.time.total_s <= b.time.total_s && a.cost_usd <= b.cost_usd &&
                    (a.time.total_s < b.time.total_s || a.cost_usd < b.cost_usd);
      }
      rows[i].pareto = !dominated;
    }
  }
  return rows;
}

inline std::vector<SweepConfig> standard_configs(const CostModelParams& p) {
  return {{"faas", Infra::faas, p}, {"iaas", Infra::iaas, p}, {"hybrid", Infra::hybrid, p}};
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.config << ',' << r.w << ',' << format_number(r.time.total_s) << ',' << format_number(r.cost_usd) << ','
        << format_number(r.time.startup_s) << ',' << format_number(r.time.loading_s) << ','
        << format_number(r.time.comm_s) << ',' << format_number(r.time.compute_s) << ',' << (r.pareto ? 1 : 0)
        << '\n';
  }
}

// ---------------------------------------------------------- epoch estimator

struct TrainOptions {
  ModelKind kind = ModelKind::logistic;
  Algorithm algorithm = Algorithm::ga_sgd;
  double learning_rate = 0.1;
  std::size_t batch_size = 1;
  std::size_t local_epochs = 1;
  double rho = 1.0;
  double l2 = 0.0;
  std::size_t clusters = 0;
  std::size_t max_epochs = 100;
};

struct EpochEstimate {
  std::size_t epochs = 0;
  std::size_t rounds = 0;
  double loss = 0.0;
};

/// Initial model every trainer starts from: zeros, or for k-means the
/// first k rows of a seeded shuffle.
inline ModelVector initial_model(ModelKind kind, const Dataset& data, std::size_t clusters, std::uint64_t seed) {
  if (kind != ModelKind::kmeans) return ModelVector(data.n_features(), 0.0);
  if (clusters < 1 || clusters > data.n_rows()) {
    throw Error(ErrorCode::invalid_argument, "k-means needs 1 <= k <= n rows");
  }
  const auto rows = shuffled_rows(0, data.n_rows(), derive_seed(seed, std::uint64_t{0x6b6d}));
  ModelVector c;
  c.reserve(clusters * data.n_features());
  for (std::size_t i = 0; i < clusters; ++i) {
    const auto r = data.row(rows[i]);
    c.insert(c.end(), r.begin(), r.end());
  }
  return c;
}

/// Single-worker training until the loss on `eval` (the training data when
/// null) reaches `threshold`. Epochs are data passes: ADMM counts
/// local_epochs per round. Throws EstimateFailed with the best loss seen if
/// the cap is hit.
inline EpochEstimate train_until(const Dataset& data, const TrainOptions& opt, double threshold, std::uint64_t seed,
                                 const Dataset* eval = nullptr) {
  const auto part = Partition::whole(data);
  const std::size_t k = opt.clusters;
  const Dataset& judge = eval ? *eval : data;
  auto model = initial_model(opt.kind, data, k, seed);
  auto loss = evaluate(model, judge, opt.kind, k).loss;
  double best = loss;
  EpochEstimate out{0, 0, loss};
  if (loss <= threshold) return out;
  ModelVector u(model.size(), 0.0);
  while (out.epochs < opt.max_epochs) {
    switch (opt.algorithm) {
      case Algorithm::ga_sgd:
      case Algorithm::ma_sgd:
        model = local_sgd_epoch(opt.kind, std::move(model), part, opt.learning_rate, opt.batch_size,
                                derive_seed(seed, std::uint64_t{0}, out.epochs), opt.l2);
        out.epochs += 1;
        break;
      case Algorithm::admm: {
        const auto wl = admm_local_solve(opt.kind, part, model, u, opt.rho, opt.local_epochs, opt.learning_rate,
                                         opt.batch_size, derive_seed(seed, std::uint64_t{0}, out.epochs));
        ModelVector sum(model.size());
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] = wl[j] + u[j];
        model = admm_consensus_from_sum(sum, 1, opt.rho, opt.l2);
        u = admm_dual_update(u, wl, model);
        out.epochs += opt.local_epochs;
        break;
      }
      case Algorithm::kmeans_em: {
        const auto stats = kmeans_assign_stats(model, part, k);
        model = kmeans_merge(std::span<const ClusterStats>(&stats, 1), model);
        out.epochs += 1;
        break;
      }
    }
    out.rounds += 1;
    loss = evaluate(model, judge, opt.kind, k).loss;
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::numerical_divergence,
                  "non-finite loss; learning rate " + std::to_string(opt.learning_rate) + " is too large");
    }
    best = std::min(best, loss);
    out.loss = loss;
    if (loss <= threshold) return out;
  }
  throw EstimateFailed(best, "threshold " + std::to_string(threshold) + " not reached within " +
                                 std::to_string(opt.max_epochs) + " epochs");
}

/// Trains on a uniform sample of sample_frac of the rows and judges the
/// loss on the full data, so sampling noise in the loss floor does not
/// move the threshold. The batch size shrinks by the same fraction so an
/// epoch keeps its number of steps.
inline EpochEstimate estimate_epochs(const Dataset& data, TrainOptions opt, double threshold, double sample_frac = 0.1,
                                     std::uint64_t seed = 0) {
  if (!(sample_frac > 0.0 && sample_frac <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "sample fraction must be in (0, 1]");
  }
  if (!std::isfinite(threshold)) throw Error(ErrorCode::invalid_argument, "threshold must be finite");
  const auto n = data.n_rows();
  const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sample_frac * static_cast<double>(n))));
  auto rows = shuffled_rows(0, n, derive_seed(seed, std::uint64_t{0x5a4d}));
  rows.resize(std::min(take, n));
  std::sort(rows.begin(), rows.end());
  const auto sample = sample_frac >= 1.0 ? data : data.gather(rows);
  opt.batch_size =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(opt.batch_size) * sample_frac)));
  if (opt.kind == ModelKind::kmeans && opt.clusters > sample.n_rows()) {
    throw Error(ErrorCode::invalid_argument, "sample has fewer rows than clusters");
  }
  return train_until(sample, opt, threshold, seed, &data);
}

}  // namespace faasml
