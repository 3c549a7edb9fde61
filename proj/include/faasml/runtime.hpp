// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Job orchestration: a starter partitions the data and writes a manifest,
// then w workers load their partition and train, synchronizing through the
// communication channel (BSP) or a shared last-writer-wins model (ASP).
// Workers checkpoint and respawn before their lifetime runs out.
//
// Every worker action is charged to a worker clock; in simulate mode the
// charges come from channel profiles and a per-epoch compute budget, in
// real_local mode from the wall clock.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "faasml/checkpoint.hpp"
#include "faasml/clock.hpp"
#include "faasml/collectives.hpp"
#include "faasml/costmodel.hpp"
#include "faasml/error.hpp"
#include "faasml/model_core.hpp"
#include "faasml/optimizers.hpp"
#include "faasml/ps_channel.hpp"
#include "faasml/storage.hpp"

namespace faasml {

enum class Pattern { allreduce, scatterreduce, ps };
enum class SyncMode { bsp, asp };
enum class RunMode { simulate, real_local };

inline const char* to_string(Pattern p) {
  switch (p) {
    case Pattern::allreduce: return "allreduce";
    case Pattern::scatterreduce: return "scatterreduce";
    case Pattern::ps: return "ps";
  }
  return "?";
}
inline const char* to_string(SyncMode s) { return s == SyncMode::bsp ? "bsp" : "asp"; }
inline const char* to_string(RunMode m) { return m == RunMode::simulate ? "simulate" : "real_local"; }

inline std::optional<ModelKind> model_kind_from_string(const std::string& s) {
  if (s == "lr" || s == "logistic") return ModelKind::logistic;
  if (s == "svm") return ModelKind::svm;
  if (s == "ridge" || s == "least_squares") return ModelKind::least_squares;
  if (s == "kmeans") return ModelKind::kmeans;
  return std::nullopt;
}
inline std::optional<Algorithm> algorithm_from_string(const std::string& s) {
  for (auto a : {Algorithm::ga_sgd, Algorithm::ma_sgd, Algorithm::admm, Algorithm::kmeans_em}) {
    if (s == to_string(a)) return a;
  }
  return std::nullopt;
}
inline std::optional<Pattern> pattern_from_string(const std::string& s) {
  for (auto p : {Pattern::allreduce, Pattern::scatterreduce, Pattern::ps}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}
inline std::optional<SyncMode> sync_from_string(const std::string& s) {
  if (s == "bsp") return SyncMode::bsp;
  if (s == "asp") return SyncMode::asp;
  return std::nullopt;
}
inline std::optional<RunMode> run_mode_from_string(const std::string& s) {
  if (s == "simulate") return RunMode::simulate;
  if (s == "real_local") return RunMode::real_local;
  return std::nullopt;
}

inline Task task_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::kmeans: return Task::clustering;
    case ModelKind::least_squares: return Task::regression;
    default: return Task::classification;
  }
}

struct DatasetSource {
  enum class Kind { synthetic, libsvm };
  Kind kind = Kind::synthetic;
  std::size_t n = 2000;
  std::size_t d = 10;
  std::uint64_t seed = 1;
  std::string path;
};

struct JobConfig {
  ModelKind model = ModelKind::logistic;
  DatasetSource dataset;
  std::size_t workers = 1;
  Algorithm algorithm = Algorithm::ga_sgd;
  std::string channel = "s3";
  Pattern pattern = Pattern::allreduce;
  SyncMode sync = SyncMode::bsp;
  double learning_rate = 0.1;
  std::size_t batch_size = 100;   // rows per worker per step
  std::size_t local_epochs = 1;   // H
  double rho = 1.0;
  double l2 = 0.0;                // lambda
  std::size_t clusters = 10;      // k
  double threshold = 0.0;
  std::size_t max_epochs = 50;
  double lifetime_s = 900.0;
  double checkpoint_margin_s = 30.0;
  RunMode mode = RunMode::simulate;
  std::uint64_t seed = 0;
  std::map<std::size_t, double> stragglers;  // rank -> compute slowdown
  Pricing pricing;
  // Single-worker seconds per epoch in simulate mode. When unset it is
  // n * d (* k) * compute_ns_per_value.
  std::optional<double> compute_s_per_epoch;
  double compute_ns_per_value = 5.0;
  std::optional<ChannelProfile> channel_profile;  // replaces the named built-in
  std::string data_channel = "s3";
  std::string ps_channel = "ps_hybrid";
  StartupTable startup_faas = StartupTable::faas_default();
  StartupTable startup_iaas = StartupTable::iaas_default();
  double timeout_s = 600.0;
  double poll_interval_s = 0.01;
  std::string work_dir;  // real_local store root; a temp dir when empty
  bool record_models = false;
  bool record_store_trace = false;

  void validate() const {
    auto bad = [](const char* key, const std::string& msg) { throw ConfigError(key, msg); };
    if (workers < 1) bad("job.workers", "must be >= 1");
    if (!std::isfinite(threshold)) bad("job.threshold", "must be finite");
    if (!(lifetime_s > checkpoint_margin_s)) bad("job.lifetime_s", "must exceed job.checkpoint_margin_s");
    if (!(checkpoint_margin_s >= 0.0)) bad("job.checkpoint_margin_s", "must be >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("job.learning_rate", "must be > 0");
    if (batch_size < 1) bad("job.batch_size", "must be >= 1");
    if (local_epochs < 1) bad("job.local_epochs", "must be >= 1");
    if (!(rho > 0.0)) bad("job.rho", "must be > 0");
    if (!(l2 >= 0.0)) bad("job.l2", "must be >= 0");
    if (max_epochs < 1) bad("job.max_epochs", "must be >= 1");
    if (!(timeout_s > 0.0)) bad("job.timeout_s", "must be > 0");
    if (!(poll_interval_s >= 0.0)) bad("job.poll_interval_s", "must be >= 0");
    if (compute_s_per_epoch && !(*compute_s_per_epoch >= 0.0)) bad("job.compute_s_per_epoch", "must be >= 0");
    if (!(compute_ns_per_value >= 0.0)) bad("job.compute_ns_per_value", "must be >= 0");
    if (dataset.kind == DatasetSource::Kind::synthetic && (dataset.n < 1 || dataset.d < 1)) {
      bad("job.dataset", "synthetic data needs n >= 1 and d >= 1");
    }
    if (dataset.kind == DatasetSource::Kind::libsvm && dataset.path.empty()) bad("job.dataset_path", "is required");
    const bool km_model = model == ModelKind::kmeans;
    const bool km_algo = algorithm == Algorithm::kmeans_em;
    if (km_model != km_algo) bad("job.algorithm", "kmeans_em pairs with the kmeans model and only with it");
    if (km_model && clusters < 1) bad("job.clusters", "must be >= 1");
    if (pattern == Pattern::ps && algorithm != Algorithm::ga_sgd) bad("job.pattern", "ps supports ga_sgd only");
    if (pattern == Pattern::ps && sync != SyncMode::bsp) bad("job.pattern", "ps is a synchronous pattern");
    if (sync == SyncMode::asp && algorithm != Algorithm::ga_sgd && algorithm != Algorithm::ma_sgd) {
      bad("job.sync", "asp supports the SGD algorithms only");
    }
    for (const auto& [rank, factor] : stragglers) {
      if (rank >= workers) bad("job.stragglers", "rank " + std::to_string(rank) + " is not a worker");
      if (!(factor > 0.0)) bad("job.stragglers", "slowdown factors must be > 0");
    }
    try {
      resolved_channel().validate();
      lookup_profile(data_channel).validate();
      if (pattern == Pattern::ps) lookup_profile(ps_channel).validate();
    } catch (const Error& e) {
      throw ConfigError("channel.name", e.what());
    }
    pricing.validate();
  }

  ChannelProfile resolved_channel() const { return channel_profile ? *channel_profile : lookup_profile(channel); }
};

inline Dataset load_dataset(const JobConfig& cfg) {
  if (cfg.dataset.kind == DatasetSource::Kind::libsvm) return load_libsvm(cfg.dataset.path, cfg.dataset.d);
  return generate_synthetic(cfg.dataset.n, cfg.dataset.d, task_for(cfg.model), cfg.dataset.seed, cfg.clusters);
}

inline std::uint64_t shuffle_seed(std::uint64_t seed, std::size_t rank, std::size_t epoch) {
  return derive_seed(seed, rank, epoch);
}

// ------------------------------------------------------------- accounting

enum class Phase { startup, loading, compute, communication };

struct PhaseBreakdown {
  double startup_s = 0, loading_s = 0, compute_s = 0, communication_s = 0, total_s = 0;
};

/// Attributes elapsed worker time to phases. Each mark() books the time
/// since the previous mark, so the phases always add up to the total.
class PhaseLedger {
 public:
  explicit PhaseLedger(double start = 0.0) : last_(start) {}

  void mark(Phase p, double now) {
    add(p, now - last_);
    last_ = now;
  }

  void add(Phase p, double seconds) {
    switch (p) {
      case Phase::startup: b_.startup_s += seconds; break;
      case Phase::loading: b_.loading_s += seconds; break;
      case Phase::compute: b_.compute_s += seconds; break;
      case Phase::communication: b_.communication_s += seconds; break;
    }
  }

  PhaseBreakdown breakdown() const {
    auto b = b_;
    b.total_s = ((b.startup_s + b.loading_s) + b.compute_s) + b.communication_s;
    return b;
  }

  double last_mark() const noexcept { return last_; }

 private:
  PhaseBreakdown b_;
  double last_;
};

/// Charges `seconds` to the clock and books everything since the last mark.
inline void account(WorkerClock& clock, PhaseLedger& ledger, Phase phase, double seconds) {
  clock.charge(seconds);
  ledger.mark(phase, clock.now());
}

// ---------------------------------------------------------------- starter

/// Partition blobs reuse the update encoding: rows as (label, features...)
/// with the feature count in the weight slot.
inline Bytes encode_partition(const Dataset& d) {
  ModelVector flat;
  flat.reserve(d.n_rows() * (d.n_features() + 1));
  for (std::size_t i = 0; i < d.n_rows(); ++i) {
    flat.push_back(d.label(i));
    const auto r = d.row(i);
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return encode_update(flat, static_cast<double>(d.n_features()));
}

inline Dataset decode_partition(std::string_view bytes) {
  const auto u = decode_update(bytes);
  const double df = u.weight;
  if (!(df >= 1.0) || df != std::floor(df)) throw Error(ErrorCode::format, "partition blob has a bad feature count");
  const auto d = static_cast<std::size_t>(df);
  if (u.values.size() % (d + 1) != 0) throw Error(ErrorCode::format, "partition blob has a partial row");
  const std::size_t n = u.values.size() / (d + 1);
  std::vector<double> features;
  std::vector<double> labels;
  features.reserve(n * d);
  labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* row = u.values.data() + i * (d + 1);
    labels.push_back(row[0]);
    features.insert(features.end(), row + 1, row + 1 + d);
  }
  return Dataset(n, d, std::move(features), std::move(labels));
}

inline constexpr const char* kManifestKey = "manifest";

inline std::string partition_key(std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return "data/part-" + digits;
}

struct WorkerHandle {
  std::size_t rank = 0;
  std::string partition_key;
  std::size_t rows = 0;
};

/// Uploads one blob per partition and the manifest, and returns one handle
/// per worker. A respawned worker keeps its handle and thus its partition.
inline std::vector<WorkerHandle> starter(const JobConfig& cfg, const Dataset& data, BlobStore& store) {
  if (cfg.workers < 1) throw ConfigError("job.workers", "must be >= 1");
  const auto parts = partition_rows(data, cfg.workers);
  std::vector<WorkerHandle> handles;
  std::string manifest;
  for (const auto& p : parts) {
    const auto key = partition_key(p.partition_id);
    try {
      store.put(key, encode_partition(data.slice(p.begin, p.end)));
    } catch (const Error& e) {
      throw Error(ErrorCode::io, "launch of worker " + std::to_string(p.owner_worker) + " failed: " + e.what());
    }
    handles.push_back({p.owner_worker, key, p.size()});
    if (!manifest.empty()) manifest += '\n';
    manifest += key;
  }
  store.put(kManifestKey, manifest);
  return handles;
}

inline std::vector<std::string> read_manifest(BlobStore& store) {
  const auto blob = store.get(kManifestKey);
  if (!blob) throw Error(ErrorCode::io, "manifest not found");
  std::vector<std::string> keys;
  std::istringstream in(*blob);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) keys.push_back(line);
  }
  return keys;
}

// ------------------------------------------------------- protocol pieces

/// One synchronous reduction through the channel. Every worker returns the
/// same merged vector for (epoch, iteration).
inline ModelVector bsp_round(Pattern pattern, const CollectiveContext& ctx, const ModelVector& v, double weight) {
  switch (pattern) {
    case Pattern::allreduce: return allreduce(ctx, v, weight);
    case Pattern::scatterreduce: return scatterreduce(ctx, v, weight);
    case Pattern::ps: break;
  }
  throw Error(ErrorCode::invalid_argument, "bsp_round runs storage patterns only");
}

/// Current shared model, or zeros before the first write.
inline ModelVector asp_fetch(BlobStore& store, std::size_t dim) {
  const auto blob = store.get(global_model_key());
  if (!blob) return ModelVector(dim, 0.0);
  auto u = decode_update(*blob);
  detail::require_dim(u.values.size(), dim, "shared model");
  return std::move(u.values);
}

inline void asp_publish(BlobStore& store, const ModelVector& model) {
  store.put(global_model_key(), encode_update(model, 1.0));
}

/// Read, one local epoch at base_eta / sqrt(step + 1), write back.
inline ModelVector asp_step(BlobStore& store, ModelKind kind, const Partition& part, double base_eta,
                            std::size_t step, std::size_t batch_size, std::uint64_t seed, double l2 = 0.0) {
  auto model = asp_fetch(store, part.n_features());
  model = local_sgd_epoch(kind, std::move(model), part, lr_schedule(base_eta, step, LrSchedule::inv_sqrt),
                          batch_size, seed, l2);
  asp_publish(store, model);
  return model;
}

enum class LifetimeAction { proceed, checkpoint };

/// Decision at a round boundary. Throws when the instance already outlived
/// its limit or cannot complete a single round within it.
inline LifetimeAction lifetime_guard(double elapsed_s, double lifetime_s, double margin_s,
                                     std::size_t rounds_this_instance) {
  if (elapsed_s > lifetime_s) {
    throw Error(ErrorCode::lifetime_exceeded,
                "worker ran " + std::to_string(elapsed_s) + " s against a " + std::to_string(lifetime_s) +
                    " s lifetime; a single iteration that outlasts the lifetime cannot be checkpointed");
  }
  if (elapsed_s < lifetime_s - margin_s) return LifetimeAction::proceed;
  if (rounds_this_instance == 0) {
    throw Error(ErrorCode::lifetime_exceeded,
                "a fresh worker reached its checkpoint margin before finishing one iteration; "
                "a single iteration longer than the lifetime is unsupported");
  }
  return LifetimeAction::checkpoint;
}

// ---------------------------------------------------------------- report

struct TracePoint {
  std::size_t epoch = 0;
  double time_s = 0.0;
  double loss = 0.0;
  friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct WorkerSummary {
  std::size_t rank = 0;
  PhaseBreakdown breakdown;
  std::size_t iterations = 0;
  std::size_t respawns = 0;
  double finish_s = 0.0;
};

struct JobReport {
  JobConfig config;
  std::vector<TracePoint> trace;
  PhaseBreakdown breakdown;  // of the worker that finished last
  std::size_t epochs = 0;
  std::size_t rounds = 0;
  std::uint64_t bytes = 0;
  double cost_usd = 0.0;
  bool converged = false;
  double final_loss = 0.0;
  double final_metric = 0.0;
  std::optional<double> primal_residual;  // ADMM: sqrt(sum_i ||w_i - z||^2), last round
  ModelVector final_model;
  std::vector<ModelVector> epoch_models;  // when record_models is set
  std::vector<WorkerSummary> workers;
  std::vector<StoreEvent> store_trace;  // when record_store_trace is set
  double compute_s_per_epoch = 0.0;
  double dataset_mb = 0.0;
  double model_mb = 0.0;
};

namespace detail {

/// Shared read-mostly job state. Losses are evaluated on the full dataset
/// off the clock and memoized so every worker sees the same stop decision.
class Monitor {
 public:
  Monitor(const Dataset& data, ModelKind kind, std::size_t k, double threshold)
      : data_(&data), kind_(kind), k_(k), threshold_(threshold) {}

  double loss_at(std::size_t epoch, const ModelVector& model) {
    std::lock_guard lock(mu_);
    auto it = memo_.find(epoch);
    if (it != memo_.end()) return it->second;
    const double loss = checked_loss(model);
    memo_.emplace(epoch, loss);
    return loss;
  }

  double checked_loss(const ModelVector& model) const {
    const double loss = evaluate(model, *data_, kind_, k_).loss;
    if (!std::isfinite(loss)) throw Error(ErrorCode::numerical_divergence, "loss became non-finite");
    return loss;
  }

  bool reached(double loss) const { return loss <= threshold_; }

  void record(TracePoint p) {
    std::lock_guard lock(mu_);
    trace_.push_back(p);
  }

  void add_residual(std::size_t epoch, double sq) {
    std::lock_guard lock(mu_);
    residual_[epoch] += sq;
  }

  std::optional<double> last_residual() const {
    std::lock_guard lock(mu_);
    if (residual_.empty()) return std::nullopt;
    return std::sqrt(residual_.rbegin()->second);
  }

  void set_converged() { converged_ = true; }
  bool converged() const { return converged_; }
  void request_stop() { stop_ = true; }
  bool stop_requested() const { return stop_; }

  std::vector<TracePoint> trace() const {
    std::lock_guard lock(mu_);
    return trace_;
  }

 private:
  const Dataset* data_;
  ModelKind kind_;
  std::size_t k_;
  double threshold_;
  mutable std::mutex mu_;
  std::map<std::size_t, double> memo_;
  std::map<std::size_t, double> residual_;
  std::vector<TracePoint> trace_;
  std::atomic<bool> converged_{false};
  std::atomic<bool> stop_{false};
};

struct JobPlan {
  const JobConfig* cfg = nullptr;
  std::size_t n_rows = 0;
  std::size_t dim = 0;
  std::size_t n_features = 0;
  std::size_t iters_per_epoch = 1;
  double compute_s_per_epoch = 0.0;
  double startup_first_s = 0.0;
  double startup_respawn_s = 0.0;
  ModelVector initial;
  ChannelProfile channel;
  ChannelProfile data_profile;
  ChannelProfile ps_profile;
  BlobStore* backing = nullptr;
  StoreTrace* trace = nullptr;
  Monitor* monitor = nullptr;
  ParameterServerState* ps_state = nullptr;
  std::uint16_t ps_port = 0;
  std::vector<WorkerHandle> handles;
};

struct WorkerRecord {
  PhaseLedger ledger;
  std::size_t iterations = 0;
  std::size_t respawns = 0;
  std::size_t rounds = 0;
  std::size_t epochs = 0;
  std::uint64_t ps_bytes = 0;
  double finish_s = 0.0;
  ModelVector final_model;
  std::vector<ModelVector> epoch_models;
  std::unique_ptr<CountingStore> counter;
};

inline std::size_t ps_frame_bytes(std::size_t dim) { return 4 + kPsFrameHeaderBytes + kUpdateHeaderBytes + 8 * (dim + 1); }

/// State that survives a respawn only through the checkpoint.
struct LoopState {
  ModelVector model;
  ModelVector dual;  // ADMM u_i
  std::size_t epoch = 0;
  std::size_t iter = 0;
};

class Worker {
 public:
  Worker(const JobPlan& plan, WorkerClock& clock, WorkerRecord& rec)
      : plan_(plan), cfg_(*plan.cfg), clock_(clock), rank_(clock.rank()), rec_(rec) {}

  void run() {
    const bool sim = clock_.simulated();
    rec_.counter = std::make_unique<CountingStore>(*plan_.backing, rank_, plan_.trace);
    std::unique_ptr<BlobStore> channel_profiled;
    std::unique_ptr<BlobStore> data_profiled;
    if (sim) {
      channel_profiled = with_profile(*rec_.counter, plan_.channel, clock_);
      data_profiled = with_profile(*plan_.backing, plan_.data_profile, clock_);
    }
    channel_ = sim ? channel_profiled.get() : rec_.counter.get();
    data_ = sim ? data_profiled.get() : plan_.backing;

    bool first = true;
    for (;;) {
      instance_start_ = clock_.now();
      account(clock_, rec_.ledger, Phase::startup, sim ? (first ? plan_.startup_first_s : plan_.startup_respawn_s) : 0.0);
      load_partition();
      rec_.ledger.mark(Phase::loading, clock_.now());
      connect_ps();
      LoopState st = first ? fresh_state() : restore();
      rec_.ledger.mark(Phase::communication, clock_.now());
      const bool done = cfg_.sync == SyncMode::bsp ? bsp_loop(st, first) : asp_loop(st, first);
      ps_link_.reset();
      if (done) {
        rec_.final_model = st.model;
        rec_.epochs = st.epoch;
        break;
      }
      first = false;
      ++rec_.respawns;
    }
    rec_.finish_s = clock_.now();
  }

 private:
  void load_partition() {
    const auto keys = read_manifest(*data_);
    if (rank_ >= keys.size()) throw Error(ErrorCode::io, "manifest has no partition for rank " + std::to_string(rank_));
    const auto blob = data_->get(keys[rank_]);
    if (!blob) throw Error(ErrorCode::io, "partition '" + keys[rank_] + "' is missing");
    local_ = decode_partition(*blob);
    part_ = Partition{&local_, 0, local_.n_rows(), rank_, rank_};
    perm_epoch_.reset();
  }

  void connect_ps() {
    if (cfg_.pattern != Pattern::ps) return;
    if (clock_.simulated()) {
      ps_link_ = std::make_unique<SimPsLink>(*plan_.ps_state, plan_.ps_profile, clock_, cfg_.timeout_s);
    } else {
      ps_link_ = std::make_unique<TcpPsLink>("127.0.0.1", plan_.ps_port);
    }
  }

  LoopState fresh_state() const {
    LoopState st;
    st.model = plan_.initial;
    if (cfg_.algorithm == Algorithm::admm) st.dual.assign(plan_.dim, 0.0);
    return st;
  }

  void save(const LoopState& st) {
    Checkpoint c;
    c.worker_id = static_cast<std::uint32_t>(rank_);
    c.epoch = static_cast<std::uint32_t>(st.epoch);
    c.iter = static_cast<std::uint32_t>(st.iter);
    c.model = st.model;
    if (cfg_.algorithm == Algorithm::admm) c.extras = {st.dual, st.model};
    channel_->put(checkpoint_key(rank_), encode_checkpoint(c));
    rec_.ledger.mark(Phase::communication, clock_.now());
  }

  LoopState restore() {
    const auto blob = channel_->get(checkpoint_key(rank_));
    if (!blob) throw Error(ErrorCode::checkpoint_corrupt, "checkpoint for rank " + std::to_string(rank_) + " is missing");
    const auto c = decode_checkpoint(*blob);
    if (c.worker_id != rank_) throw Error(ErrorCode::checkpoint_corrupt, "checkpoint belongs to another worker");
    detail::require_dim(c.model.size(), plan_.dim, "checkpoint model");
    LoopState st{c.model, {}, c.epoch, c.iter};
    if (cfg_.algorithm == Algorithm::admm) {
      if (c.extras.size() != 2) throw Error(ErrorCode::checkpoint_corrupt, "ADMM checkpoint lacks its dual state");
      detail::require_dim(c.extras[0].size(), plan_.dim, "checkpoint dual");
      st.dual = c.extras[0];
    }
    return st;
  }

  double straggle() const {
    const auto it = cfg_.stragglers.find(rank_);
    return it == cfg_.stragglers.end() ? 1.0 : it->second;
  }

  // Books compute for `rows` processed rows: modeled in simulate mode,
  // measured (and stretched for stragglers) in real mode.
  void compute_done(std::size_t rows) {
    if (clock_.simulated()) {
      const double share = plan_.n_rows ? static_cast<double>(rows) / static_cast<double>(plan_.n_rows) : 0.0;
      clock_.charge(plan_.compute_s_per_epoch * share * straggle());
    } else if (straggle() > 1.0) {
      const double spent = clock_.now() - rec_.ledger.last_mark();
      std::this_thread::sleep_for(std::chrono::duration<double>(spent * (straggle() - 1.0)));
    }
    rec_.ledger.mark(Phase::compute, clock_.now());
  }

  CollectiveContext context(RoundId round, ReduceOp op) const {
    CollectiveContext ctx;
    ctx.store = channel_;
    ctx.clock = &clock_;
    ctx.workers = cfg_.workers;
    ctx.rank = rank_;
    ctx.epoch = round.epoch;
    ctx.iteration = round.iteration;
    ctx.op = op;
    ctx.poll_interval_s = cfg_.poll_interval_s;
    ctx.timeout_s = cfg_.timeout_s;
    ctx.previous = previous_;
    return ctx;
  }

  ModelVector reduce(RoundId round, ReduceOp op, const ModelVector& v, double weight) {
    auto out = bsp_round(cfg_.pattern, context(round, op), v, weight);
    previous_ = round;
    ++rec_.rounds;
    return out;
  }

  // Returns true at an epoch boundary when training should stop.
  bool epoch_boundary(LoopState& st) {
    const double loss = plan_.monitor->loss_at(st.epoch, st.model);
    if (rank_ == 0) {
      plan_.monitor->record({st.epoch, clock_.now(), loss});
      if (cfg_.record_models) rec_.epoch_models.push_back(st.model);
    }
    if (plan_.monitor->reached(loss)) {
      plan_.monitor->set_converged();
      return true;
    }
    return st.epoch >= cfg_.max_epochs;
  }

  void ga_round(LoopState& st) {
    const std::size_t n = local_.n_rows();
    if (perm_epoch_ != st.epoch) {
      perm_ = shuffled_rows(0, n, shuffle_seed(cfg_.seed, rank_, st.epoch));
      perm_epoch_ = st.epoch;
    }
    const std::size_t off = std::min(n, st.iter * cfg_.batch_size);
    const std::size_t len = std::min(cfg_.batch_size, n - off);
    ModelVector grad(plan_.dim, 0.0);
    if (len > 0) {
      IndexBatch batch{&local_, std::span<const std::size_t>(perm_).subspan(off, len)};
      grad = loss_grad(cfg_.model, st.model, batch).grad;
    }
    if (cfg_.l2 != 0.0) {
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += cfg_.l2 * st.model[j];
    }
    compute_done(len);
    const RoundId round{st.epoch, st.iter};
    if (ps_link_) {
      ps_link_->push(grad, static_cast<double>(len), round);
      st.model = ps_link_->pull();
      rec_.ps_bytes += 2 * ps_frame_bytes(plan_.dim);
      ++rec_.rounds;
    } else {
      const auto g = reduce(round, ReduceOp::weighted_mean, grad, static_cast<double>(len));
      st.model = sgd_step(st.model, g, cfg_.learning_rate);
    }
    detail::check_finite(st.model, cfg_.learning_rate);
    rec_.ledger.mark(Phase::communication, clock_.now());
    if (++st.iter == plan_.iters_per_epoch) {
      st.iter = 0;
      ++st.epoch;
    }
  }

  void ma_round(LoopState& st) {
    for (std::size_t h = 0; h < cfg_.local_epochs; ++h) {
      st.model = local_sgd_epoch(cfg_.model, std::move(st.model), part_, cfg_.learning_rate, cfg_.batch_size,
                                 shuffle_seed(cfg_.seed, rank_, st.epoch + h), cfg_.l2);
    }
    compute_done(cfg_.local_epochs * local_.n_rows());
    st.model = reduce({st.epoch, 0}, ReduceOp::weighted_mean, st.model, static_cast<double>(local_.n_rows()));
    rec_.ledger.mark(Phase::communication, clock_.now());
    st.epoch += cfg_.local_epochs;
  }

  void admm_round(LoopState& st) {
    const auto local = admm_local_solve(cfg_.model, part_, st.model, st.dual, cfg_.rho, cfg_.local_epochs,
                                        cfg_.learning_rate, cfg_.batch_size, shuffle_seed(cfg_.seed, rank_, st.epoch));
    compute_done(cfg_.local_epochs * local_.n_rows());
    ModelVector sum(plan_.dim);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] = local[j] + st.dual[j];
    sum = reduce({st.epoch, 0}, ReduceOp::sum, sum, 1.0);
    st.model = admm_consensus_from_sum(sum, cfg_.workers, cfg_.rho, cfg_.l2);
    st.dual = admm_dual_update(st.dual, local, st.model);
    rec_.ledger.mark(Phase::communication, clock_.now());
    st.epoch += cfg_.local_epochs;
    double sq = 0.0;
    for (std::size_t j = 0; j < sum.size(); ++j) sq += (local[j] - st.model[j]) * (local[j] - st.model[j]);
    plan_.monitor->add_residual(st.epoch, sq);
  }

  void kmeans_round(LoopState& st) {
    const auto stats = kmeans_assign_stats(st.model, part_, cfg_.clusters);
    compute_done(local_.n_rows());
    const auto flat = reduce({st.epoch, 0}, ReduceOp::sum, stats.flatten(), 1.0);
    const auto total = ClusterStats::unflatten(flat, cfg_.clusters, plan_.n_features);
    st.model = kmeans_merge(std::span<const ClusterStats>(&total, 1), st.model);
    rec_.ledger.mark(Phase::communication, clock_.now());
    st.epoch += 1;
  }

  // Returns true when training is over, false after checkpointing.
  bool bsp_loop(LoopState& st, bool first) {
    if (first && st.epoch == 0 && st.iter == 0) {
      if (epoch_boundary(st)) return true;
      rec_.ledger.mark(Phase::compute, clock_.now());
    }
    std::size_t rounds_here = 0;
    for (;;) {
      if (lifetime_guard(clock_.now() - instance_start_, cfg_.lifetime_s, cfg_.checkpoint_margin_s, rounds_here) ==
          LifetimeAction::checkpoint) {
        save(st);
        return false;
      }
      const std::size_t epoch_before = st.epoch;
      switch (cfg_.algorithm) {
        case Algorithm::ga_sgd: ga_round(st); break;
        case Algorithm::ma_sgd: ma_round(st); break;
        case Algorithm::admm: admm_round(st); break;
        case Algorithm::kmeans_em: kmeans_round(st); break;
      }
      ++rounds_here;
      ++rec_.iterations;
      if (st.epoch != epoch_before) {
        const bool stop = epoch_boundary(st);
        rec_.ledger.mark(Phase::compute, clock_.now());
        if (stop) return true;
      }
    }
  }

  bool asp_loop(LoopState& st, bool first) {
    Monitor& mon = *plan_.monitor;
    if (first && st.epoch == 0 && rank_ == 0) {
      const double loss = mon.checked_loss(st.model);
      mon.record({0, clock_.now(), loss});
      if (mon.reached(loss)) {
        mon.set_converged();
        mon.request_stop();
      }
    }
    std::size_t rounds_here = 0;
    for (;;) {
      if (mon.stop_requested() || st.epoch >= cfg_.max_epochs) return true;
      if (lifetime_guard(clock_.now() - instance_start_, cfg_.lifetime_s, cfg_.checkpoint_margin_s, rounds_here) ==
          LifetimeAction::checkpoint) {
        save(st);
        return false;
      }
      auto model = asp_fetch(*channel_, plan_.dim);
      rec_.ledger.mark(Phase::communication, clock_.now());
      model = local_sgd_epoch(cfg_.model, std::move(model), part_,
                              lr_schedule(cfg_.learning_rate, st.epoch, LrSchedule::inv_sqrt), cfg_.batch_size,
                              shuffle_seed(cfg_.seed, rank_, st.epoch), cfg_.l2);
      compute_done(local_.n_rows());
      asp_publish(*channel_, model);
      rec_.ledger.mark(Phase::communication, clock_.now());
      st.model = std::move(model);
      ++st.epoch;
      ++rounds_here;
      ++rec_.iterations;
      ++rec_.rounds;
      const double loss = mon.checked_loss(st.model);
      mon.record({st.epoch, clock_.now(), loss});
      if (mon.reached(loss)) {
        mon.set_converged();
        mon.request_stop();
      }
      rec_.ledger.mark(Phase::compute, clock_.now());
    }
  }

  const JobPlan& plan_;
  const JobConfig& cfg_;
  WorkerClock& clock_;
  std::size_t rank_;
  WorkerRecord& rec_;
  BlobStore* channel_ = nullptr;
  BlobStore* data_ = nullptr;
  double instance_start_ = 0.0;
  Dataset local_;
  Partition part_;
  std::vector<std::size_t> perm_;
  std::optional<std::size_t> perm_epoch_;
  std::optional<RoundId> previous_;
  std::unique_ptr<PsLink> ps_link_;
};

inline std::filesystem::path fresh_work_dir() {
  static std::atomic<unsigned> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("faasml-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace detail

inline double default_compute_seconds(const JobConfig& cfg, const Dataset& data) {
  if (cfg.compute_s_per_epoch) return *cfg.compute_s_per_epoch;
  double values = static_cast<double>(data.n_rows()) * static_cast<double>(data.n_features());
  if (cfg.model == ModelKind::kmeans) values *= static_cast<double>(cfg.clusters);
  return values * cfg.compute_ns_per_value * 1e-9;
}

/// Runs the whole job against `data`.
inline JobReport run_job(const JobConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (data.n_rows() < cfg.workers) throw ConfigError("job.workers", "more workers than rows");
  if (cfg.model == ModelKind::kmeans && cfg.clusters > data.n_rows()) {
    throw ConfigError("job.clusters", "more clusters than rows");
  }
  if ((cfg.model == ModelKind::logistic || cfg.model == ModelKind::svm) && !data.has_binary_labels()) {
    throw Error(ErrorCode::invalid_argument, "classification needs labels in {-1, +1}");
  }
  const bool sim = cfg.mode == RunMode::simulate;
  const std::size_t w = cfg.workers;

  std::unique_ptr<BlobStore> backing;
  std::filesystem::path tmp_dir;
  if (sim) {
    backing = std::make_unique<MemoryStore>();
  } else {
    tmp_dir = cfg.work_dir.empty() ? detail::fresh_work_dir() : std::filesystem::path(cfg.work_dir);
    backing = std::make_unique<FileSystemStore>(tmp_dir);
  }
  struct Cleanup {
    std::filesystem::path dir;
    ~Cleanup() {
      std::error_code ec;
      if (!dir.empty()) std::filesystem::remove_all(dir, ec);
    }
  } cleanup{cfg.work_dir.empty() ? tmp_dir : std::filesystem::path()};

  StoreTrace trace;
  detail::JobPlan plan;
  plan.cfg = &cfg;
  plan.n_rows = data.n_rows();
  plan.n_features = data.n_features();
  plan.initial = initial_model(cfg.model, data, cfg.clusters, cfg.seed);
  plan.dim = plan.initial.size();
  const std::size_t largest = (data.n_rows() + w - 1) / w;
  plan.iters_per_epoch = std::max<std::size_t>(1, (largest + cfg.batch_size - 1) / cfg.batch_size);
  plan.compute_s_per_epoch = default_compute_seconds(cfg, data);
  plan.channel = cfg.resolved_channel();
  plan.data_profile = lookup_profile(cfg.data_channel);
  const double wd = static_cast<double>(w);
  if (cfg.pattern == Pattern::ps) {
    plan.ps_profile = lookup_profile(cfg.ps_channel);
    plan.startup_first_s = std::max(cfg.startup_faas.at(wd), cfg.startup_iaas.at(1.0)) + plan.ps_profile.startup_s;
  } else {
    plan.startup_first_s = cfg.startup_faas.at(wd) + plan.channel.startup_s;
  }
  plan.startup_respawn_s = cfg.startup_faas.at(1.0);
  plan.backing = backing.get();
  plan.trace = cfg.record_store_trace ? &trace : nullptr;
  detail::Monitor monitor(data, cfg.model, cfg.clusters, cfg.threshold);
  plan.monitor = &monitor;
  plan.handles = starter(cfg, data, *backing);

  std::unique_ptr<ParameterServerState> sim_ps;
  std::unique_ptr<TcpPsServer> tcp_ps;
  if (cfg.pattern == Pattern::ps) {
    if (sim) {
      sim_ps = std::make_unique<ParameterServerState>(plan.dim, cfg.learning_rate, w);
      plan.ps_state = sim_ps.get();
    } else {
      tcp_ps = std::make_unique<TcpPsServer>(plan.dim, cfg.learning_rate, w);
      plan.ps_port = tcp_ps->port();
    }
  }

  std::vector<detail::WorkerRecord> records(w);
  std::unique_ptr<Executor> exec;
  if (sim) {
    exec = std::make_unique<SimEngine>();
  } else {
    exec = std::make_unique<ThreadExecutor>();
  }
  exec->run(w, [&](WorkerClock& clock) { detail::Worker(plan, clock, records[clock.rank()]).run(); });
  if (tcp_ps) tcp_ps->stop();

  JobReport r;
  r.config = cfg;
  r.trace = monitor.trace();
  r.converged = monitor.converged();
  r.primal_residual = monitor.last_residual();
  std::size_t last = 0;
  for (std::size_t i = 0; i < w; ++i) {
    const auto& rec = records[i];
    r.workers.push_back({i, rec.ledger.breakdown(), rec.iterations, rec.respawns, rec.finish_s});
    if (rec.finish_s > records[last].finish_s) last = i;
    if (rec.counter) r.bytes += rec.counter->bytes_written() + rec.counter->bytes_read();
    r.bytes += rec.ps_bytes;
  }
  r.breakdown = records[last].ledger.breakdown();
  if (cfg.sync == SyncMode::bsp) {
    r.final_model = records[0].final_model;
    r.epochs = records[0].epochs;
    r.rounds = records[0].rounds;
    r.epoch_models = records[0].epoch_models;
  } else {
    r.final_model = asp_fetch(*backing, plan.dim);
    for (const auto& rec : records) {
      r.epochs = std::max(r.epochs, rec.epochs);
      r.rounds += rec.rounds;
    }
  }
  const auto ev = evaluate(r.final_model, data, cfg.model, cfg.clusters);
  r.final_loss = ev.loss;
  r.final_metric = ev.metric;
  const Infra infra = cfg.pattern == Pattern::ps ? Infra::hybrid : Infra::faas;
  r.cost_usd = dollar_cost(r.breakdown.total_s, w, cfg.pricing, infra, plan.channel.hourly_price_usd);
  if (cfg.record_store_trace) r.store_trace = trace.events();
  r.compute_s_per_epoch = plan.compute_s_per_epoch;
  r.dataset_mb = static_cast<double>(data.n_rows() * (data.n_features() + 1) * 8) / 1e6;
  r.model_mb = static_cast<double>(plan.dim * 8) / 1e6;
  return r;
}

inline JobReport run_job(const JobConfig& cfg) {
  cfg.validate();
  return run_job(cfg, load_dataset(cfg));
}

/// Cost-model inputs matching a job: sizes from the data, channel
/// constants from the job's profiles, R from the epochs it ran.
inline CostModelParams params_for_job(const JobConfig& cfg, const JobReport& report) {
  CostModelParams p;
  p.s = report.dataset_mb;
  p.m = report.model_mb;
  p.w = cfg.workers;
  p.startup_faas = cfg.startup_faas;
  p.startup_iaas = cfg.startup_iaas;
  const auto ch = cfg.resolved_channel();
  const auto data = lookup_profile(cfg.data_channel);
  p.b_s3 = data.bandwidth_MBps;
  p.channel = ch.name.rfind("elasticache", 0) == 0 ? FaasChannel::elasticache : FaasChannel::s3;
  if (p.channel == FaasChannel::elasticache) {
    p.b_ec = ch.bandwidth_MBps;
    p.l_ec = ch.latency_s;
  } else {
    p.l_s3 = ch.latency_s;
  }
  p.channel_startup_s = ch.startup_s;
  p.r_faas = p.r_iaas = static_cast<double>(report.epochs);
  p.c_faas = p.c_iaas = report.compute_s_per_epoch;
  p.pricing = cfg.pricing;
  p.pricing.channel_usd_per_hour = ch.hourly_price_usd;
  return p;
}

}  // namespace faasml
