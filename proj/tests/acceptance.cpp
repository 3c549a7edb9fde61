// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fails.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "faasml/faasml.hpp"

using namespace faasml;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_rel_err(const ModelVector& a, const ModelVector& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(b[i]), 1e-12);
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

ModelVector seeded_vector(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ModelVector v(dim);
  for (auto& x : v) x = u(rng);
  return v;
}

struct CollectiveRun {
  std::vector<ModelVector> outputs;
  std::vector<std::size_t> transfers;
};

CollectiveRun run_collective(bool scatter, const std::vector<ModelVector>& inputs) {
  const std::size_t w = inputs.size();
  MemoryStore shared;
  CollectiveRun out;
  out.outputs.resize(w);
  out.transfers.resize(w);
  SimEngine engine;
  engine.run(w, [&](WorkerClock& clock) {
    const auto r = clock.rank();
    CountingStore counted(shared, r);
    CollectiveContext ctx;
    ctx.store = &counted;
    ctx.clock = &clock;
    ctx.workers = w;
    ctx.rank = r;
    ctx.op = ReduceOp::sum;
    out.outputs[r] = scatter ? scatterreduce(ctx, inputs[r]) : allreduce(ctx, inputs[r]);
    out.transfers[r] = counted.transfers();
  });
  return out;
}

Outcome collective_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::size_t w : {1, 2, 3, 5, 8, 16}) {
    for (std::size_t dim : {1, 7, 1000}) {
      std::vector<ModelVector> inputs;
      for (std::size_t r = 0; r < w; ++r) inputs.push_back(seeded_vector(dim, 1000 * w + 10 * dim + r));
      ModelVector serial(dim, 0.0);
      for (const auto& v : inputs) {
        for (std::size_t j = 0; j < dim; ++j) serial[j] += v[j];
      }
      for (bool scatter : {false, true}) {
        for (const auto& o : run_collective(scatter, inputs).outputs) worst = std::max(worst, max_rel_err(o, serial));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 10.0, "max rel err " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome transfer_count_law() {
  bool ok = true;
  std::string detail;
  for (std::size_t w : {2, 5, 10}) {
    std::vector<ModelVector> inputs(w, ModelVector(4, 1.0));
    std::size_t total = 0;
    for (auto t : run_collective(false, inputs).transfers) total += t;
    bool per_worker = true;
    for (auto t : run_collective(true, inputs).transfers) per_worker = per_worker && t == 3 * w - 2;
    ok = ok && total == 3 * w - 2 && per_worker;
    detail += "w=" + std::to_string(w) + ": allreduce " + std::to_string(total) + (per_worker ? " ok; " : " bad; ");
  }
  return {ok, detail + "expected 3w-2"};
}

JobConfig base_job() {
  JobConfig c;
  c.mode = RunMode::simulate;
  c.seed = 7;
  return c;
}

Outcome ma_equals_ga() {
  const auto data = generate_synthetic(800, 10, Task::classification, 3);
  JobConfig ga = base_job();
  ga.workers = 4;
  ga.batch_size = 200;
  ga.learning_rate = 0.5;
  ga.max_epochs = 50;
  ga.threshold = -1.0;
  ga.record_models = true;
  JobConfig ma = ga;
  ga.algorithm = Algorithm::ga_sgd;
  ma.algorithm = Algorithm::ma_sgd;
  ma.local_epochs = 1;
  const auto a = run_job(ga, data);
  const auto b = run_job(ma, data);
  if (a.epoch_models.size() != 51 || b.epoch_models.size() != 51) {
    return {false, "expected 51 recorded models, got " + std::to_string(a.epoch_models.size()) + " and " +
                       std::to_string(b.epoch_models.size())};
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.epoch_models.size(); ++i) {
    worst = std::max(worst, max_rel_err(b.epoch_models[i], a.epoch_models[i]));
  }
  return {worst <= 1e-12, "max rel err over 50 rounds " + fmt(worst)};
}

Outcome admm_ridge_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = 400, d = 10, w = 4;
  const double lambda = 0.1;
  const auto raw = generate_synthetic(n, d, Task::regression, 42);
  auto f = raw.features();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n / w));
  for (auto& v : f) v *= scale;
  const Dataset data(n, d, std::move(f), raw.labels());

  Eigen::MatrixXd A(n, d);
  Eigen::VectorXd b(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) A(i, j) = data.row(i)[j];
    b(i) = data.label(i);
  }
  const Eigen::VectorXd exact =
      (A.transpose() * A + lambda * Eigen::MatrixXd::Identity(d, d)).ldlt().solve(A.transpose() * b);

  JobConfig c = base_job();
  c.model = ModelKind::least_squares;
  c.algorithm = Algorithm::admm;
  c.workers = w;
  c.rho = 1.0;
  c.l2 = lambda;
  c.local_epochs = 50;
  c.learning_rate = 20.0;
  c.batch_size = n / w;
  c.threshold = -1.0;
  c.max_epochs = 50 * c.local_epochs;
  const auto r = run_job(c, data);
  double err = 0.0;
  for (std::size_t j = 0; j < d; ++j) err += (r.final_model[j] - exact(j)) * (r.final_model[j] - exact(j));
  err = std::sqrt(err);
  const double res = r.primal_residual.value_or(std::numeric_limits<double>::infinity());
  const double secs = seconds_since(t0);
  return {r.rounds <= 50 && err <= 1e-3 && res <= 1e-3 && secs < 30.0,
          std::to_string(r.rounds) + " rounds, |z - z*| " + fmt(err) + ", residual " + fmt(res) + ", " + fmt(secs) +
              " s"};
}

// Loss of a model trained to near-optimality by full-batch gradient descent.
double reference_loss(const Dataset& data, ModelKind kind, double eta, std::size_t steps) {
  const auto part = Partition::whole(data);
  ModelVector w(data.n_features(), 0.0);
  for (std::size_t t = 0; t < steps; ++t) w = local_sgd_epoch(kind, std::move(w), part, eta, data.n_rows(), t);
  return evaluate(w, data, kind).loss;
}

Outcome communication_efficiency() {
  const std::size_t n = 20000, workers = 10;
  const auto data = generate_synthetic(n, 10, Task::classification, 5);
  const double threshold = reference_loss(data, ModelKind::logistic, 1.0, 3000) * 1.001;

  // Global batch n/100, split across the workers.
  JobConfig ga = base_job();
  ga.workers = workers;
  ga.algorithm = Algorithm::ga_sgd;
  ga.batch_size = n / 100 / workers;
  ga.learning_rate = 0.1;
  ga.threshold = threshold;
  ga.max_epochs = 100;
  JobConfig admm = ga;
  admm.algorithm = Algorithm::admm;
  admm.local_epochs = 1;
  admm.rho = 1.0;
  const auto a = run_job(ga, data);
  const auto b = run_job(admm, data);
  const double ratio = static_cast<double>(a.rounds) / static_cast<double>(std::max<std::size_t>(1, b.rounds));
  return {a.converged && b.converged && ratio >= 5.0,
          "threshold " + fmt(threshold) + ", GA " + std::to_string(a.rounds) + " rounds" +
              (a.converged ? "" : " (not converged)") + ", ADMM " + std::to_string(b.rounds) + " rounds" +
              (b.converged ? "" : " (not converged)") + ", ratio " + fmt(ratio)};
}

Outcome costmodel_arithmetic() {
  CostModelParams p;
  p.s = 8000.0;
  double worst = 0.0;
  auto dev = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  p.w = 10;
  dev(faas_time(p).startup_s, 1.2);
  dev(iaas_time(p).startup_s, 132.0);
  dev(faas_time(p).loading_s, 8000.0 / 65.0);
  p.w = 200;
  dev(faas_time(p).startup_s, 35.0);
  dev(iaas_time(p).startup_s, 606.0);
  dev(faas_time(p).loading_s, 123.0769230769);
  return {worst <= 1e-6, "max abs deviation " + fmt(worst)};
}

Outcome model_vs_simulator() {
  const auto data = generate_synthetic(2000, 10, Task::classification, 11);
  bool ok = true;
  std::string detail;
  const std::vector<std::pair<std::size_t, std::string>> configs = {{5, "s3"}, {10, "s3"}, {10, "elasticache_t3"}};
  for (const auto& [w, channel] : configs) {
    JobConfig c = base_job();
    c.workers = w;
    c.channel = channel;
    c.algorithm = Algorithm::ma_sgd;
    c.pattern = Pattern::scatterreduce;
    c.local_epochs = 1;
    c.batch_size = 10;
    c.learning_rate = 0.1;
    c.threshold = -1.0;
    c.max_epochs = 20;
    c.compute_s_per_epoch = 20.0;
    const auto r = run_job(c, data);
    const auto predicted = faas_time(params_for_job(c, r)).total_s;
    const double rel = std::abs(r.breakdown.total_s - predicted) / predicted;
    ok = ok && rel <= 0.10;
    detail += "w=" + std::to_string(w) + "/" + channel + ": sim " + fmt(r.breakdown.total_s) + " s vs model " +
              fmt(predicted) + " s (" + fmt(100 * rel) + "%); ";
  }
  return {ok, detail};
}

Outcome epoch_estimator() {
  const auto data = generate_synthetic(20000, 10, Task::classification, 21);
  const double threshold = reference_loss(data, ModelKind::logistic, 1.0, 3000) * 1.05;
  bool ok = true;
  std::string detail = "threshold " + fmt(threshold) + "; ";
  for (auto algo : {Algorithm::ga_sgd, Algorithm::admm}) {
    TrainOptions opt;
    opt.kind = ModelKind::logistic;
    opt.algorithm = algo;
    opt.learning_rate = 0.002;
    opt.batch_size = 100;
    opt.local_epochs = algo == Algorithm::admm ? 2 : 1;
    opt.rho = 1.0;
    opt.max_epochs = 500;
    const auto full = train_until(data, opt, threshold, 3).epochs;
    const auto est = estimate_epochs(data, opt, threshold, 0.1, 3).epochs;
    const double rel = std::abs(static_cast<double>(est) - static_cast<double>(full)) / static_cast<double>(full);
    ok = ok && rel <= 0.20;
    detail += std::string(to_string(algo)) + ": full " + std::to_string(full) + ", sampled " + std::to_string(est) +
              " (" + fmt(100 * rel) + "%); ";
  }
  return {ok, detail};
}

Outcome respawn_transparency() {
  const auto data = generate_synthetic(1000, 10, Task::classification, 8);
  JobConfig c = base_job();
  c.workers = 4;
  c.batch_size = 25;
  c.learning_rate = 0.2;
  c.threshold = -1.0;
  c.max_epochs = 20;
  c.compute_s_per_epoch = 40.0;
  JobConfig limited = c;
  limited.lifetime_s = 60.0;
  limited.checkpoint_margin_s = 5.0;
  const auto free_run = run_job(c, data);
  const auto short_run = run_job(limited, data);
  std::size_t min_respawns = std::numeric_limits<std::size_t>::max();
  for (const auto& w : short_run.workers) min_respawns = std::min(min_respawns, w.respawns);
  const double err = max_rel_err(short_run.final_model, free_run.final_model);
  return {min_respawns >= 3 && err <= 1e-12,
          "respawns per worker >= " + std::to_string(min_respawns) + ", rel err " + fmt(err)};
}

Outcome dynamodb_limit() {
  MemoryStore inner;
  ManualClock clock;
  ProfiledStore ddb(inner, lookup_profile("dynamodb"), clock);
  bool rejected = false;
  try {
    ddb.put("k", Bytes(400 * 1024 + 1, 'x'));
  } catch (const Error& e) {
    rejected = e.code() == ErrorCode::payload_too_large;
  }
  bool accepted = true;
  try {
    ddb.put("k", Bytes(400 * 1024, 'x'));
  } catch (const Error&) {
    accepted = false;
  }
  return {rejected && accepted, std::string("409601 bytes ") + (rejected ? "rejected" : "accepted") +
                                    ", 409600 bytes " + (accepted ? "accepted" : "rejected")};
}

Outcome cost_sanity() {
  const auto data = generate_synthetic(2000, 10, Task::classification, 13);
  JobConfig c = base_job();
  c.batch_size = 100;
  c.threshold = -1.0;
  c.max_epochs = 10;
  c.compute_s_per_epoch = 100.0;
  c.workers = 1;
  const auto one = run_job(c, data);
  c.workers = 10;
  c.batch_size = 10;
  const auto ten = run_job(c, data);
  return {ten.breakdown.total_s < one.breakdown.total_s,
          "w=1 " + fmt(one.breakdown.total_s) + " s, w=10 " + fmt(ten.breakdown.total_s) + " s"};
}

// No local update of a round exists before the merged blob of the round
// before it has been written.
bool barrier_holds(const std::vector<StoreEvent>& events, std::size_t& rounds_seen) {
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::uint64_t> merged_at;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::uint64_t> first_update;
  for (const auto& e : events) {
    if (e.op != StoreOp::put) continue;
    if (e.key.rfind("m/", 0) == 0) {
      const auto k = parse_key(e.key);
      merged_at.try_emplace({k.epoch, k.iter}, e.seq);
    } else if (e.key.rfind("u/", 0) == 0) {
      const auto k = parse_key(e.key);
      first_update.try_emplace({k.epoch, k.iter}, e.seq);
    }
  }
  rounds_seen = merged_at.size();
  if (rounds_seen < 2 || first_update.size() != merged_at.size()) return false;
  auto prev = merged_at.end();
  for (auto it = merged_at.begin(); it != merged_at.end(); prev = it++) {
    if (prev == merged_at.end()) continue;
    const auto u = first_update.find(it->first);
    if (u == first_update.end() || !(prev->second < u->second)) return false;
  }
  return true;
}

Outcome bsp_and_asp() {
  const auto data = generate_synthetic(2000, 10, Task::classification, 17);
  JobConfig c = base_job();
  c.workers = 4;
  c.batch_size = 50;
  c.threshold = -1.0;
  c.max_epochs = 3;
  c.compute_s_per_epoch = 4.0;
  c.stragglers = {{3, 10.0}};
  c.record_store_trace = true;
  const auto bsp = run_job(c, data);
  std::size_t rounds = 0;
  const bool barrier = barrier_holds(bsp.store_trace, rounds);

  c.record_store_trace = false;
  c.sync = SyncMode::asp;
  c.algorithm = Algorithm::ga_sgd;
  c.max_epochs = 30;
  const auto asp = run_job(c, data);
  auto rate = [](const WorkerSummary& w) {
    const double active = w.finish_s - w.breakdown.startup_s - w.breakdown.loading_s;
    return static_cast<double>(w.iterations) / active;
  };
  const double ratio = rate(asp.workers[0]) / rate(asp.workers[3]);
  return {barrier && ratio >= 5.0, std::string("BSP barrier ") + (barrier ? "holds" : "violated") + " over " +
                                       std::to_string(rounds) + " rounds; ASP fast/straggler rate ratio " +
                                       fmt(ratio)};
}

Outcome ps_equivalence() {
  const auto data = generate_synthetic(1200, 10, Task::classification, 19);
  JobConfig c = base_job();
  c.workers = 3;
  c.batch_size = 100;
  c.learning_rate = 0.3;
  c.threshold = -1.0;
  c.max_epochs = 5;
  c.record_models = true;
  const auto reference = run_job(c, data);
  c.pattern = Pattern::ps;
  c.mode = RunMode::real_local;
  const auto ps = run_job(c, data);
  if (ps.epoch_models.size() != reference.epoch_models.size() || reference.epoch_models.empty()) {
    return {false, "epoch count mismatch"};
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < ps.epoch_models.size(); ++i) {
    worst = std::max(worst, max_rel_err(ps.epoch_models[i], reference.epoch_models[i]));
  }
  return {worst <= 1e-10, std::to_string(ps.epoch_models.size()) + " epochs, max rel err " + fmt(worst)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"collective equivalence", collective_equivalence},
      {"transfer-count law", transfer_count_law},
      {"MA equals GA at H=1", ma_equals_ga},
      {"ADMM ridge oracle", admm_ridge_oracle},
      {"communication efficiency", communication_efficiency},
      {"cost-model arithmetic", costmodel_arithmetic},
      {"model vs simulator", model_vs_simulator},
      {"epoch estimator", epoch_estimator},
      {"respawn transparency", respawn_transparency},
      {"item size limit", dynamodb_limit},
      {"COST sanity", cost_sanity},
      {"BSP/ASP behavior", bsp_and_asp},
      {"PS equivalence", ps_equivalence},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
