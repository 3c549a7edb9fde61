// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Local update rules and aggregation semantics for GA-SGD, MA-SGD,
// consensus ADMM and k-means EM.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faasml/error.hpp"
#include "faasml/model_core.hpp"

namespace faasml {

enum class Algorithm { ga_sgd, ma_sgd, admm, kmeans_em };
enum class LrSchedule { constant, inv_sqrt };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ga_sgd: return "ga_sgd";
    case Algorithm::ma_sgd: return "ma_sgd";
    case Algorithm::admm: return "admm";
    case Algorithm::kmeans_em: return "kmeans_em";
  }
  return "?";
}

/// Per-worker optimizer state. Never shared between workers.
struct OptimizerState {
  Algorithm algorithm = Algorithm::ga_sgd;
  double learning_rate = 0.1;
  std::size_t batch_size = 1;
  std::size_t local_epochs = 1;
  double rho = 1.0;
  ModelVector dual;       // ADMM u_i
  ModelVector consensus;  // ADMM z
  std::size_t epoch = 0;

  void validate(std::size_t dim) const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "learning rate must be > 0");
    if (!(rho > 0.0)) throw Error(ErrorCode::invalid_argument, "ADMM rho must be > 0");
    if (batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch size must be >= 1");
    if (local_epochs < 1) throw Error(ErrorCode::invalid_argument, "local epochs must be >= 1");
    if (algorithm == Algorithm::admm) {
      detail::require_dim(dual.size(), dim, "ADMM dual");
      detail::require_dim(consensus.size(), dim, "ADMM consensus");
    }
  }
};

inline ModelVector sgd_step(const ModelVector& w, const ModelVector& grad, double eta) {
  detail::require_dim(grad.size(), w.size(), "sgd_step");
  ModelVector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - eta * grad[i];
  return out;
}

inline double lr_schedule(double base, std::size_t epoch, LrSchedule mode) {
  if (mode == LrSchedule::inv_sqrt) return base / std::sqrt(static_cast<double>(epoch) + 1.0);
  return base;
}

/// Weighted mean of equally sized vectors; summation runs in list order.
inline ModelVector weighted_mean(std::span<const ModelVector> vs, std::span<const double> weights) {
  if (vs.empty()) throw Error(ErrorCode::invalid_argument, "nothing to aggregate");
  if (weights.size() != vs.size()) {
    throw Error(ErrorCode::invalid_argument, "one weight per aggregated vector is required");
  }
  const std::size_t dim = vs.front().size();
  ModelVector out(dim, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    detail::require_dim(vs[i].size(), dim, "aggregate");
    if (weights[i] < 0.0) throw Error(ErrorCode::invalid_argument, "aggregation weights must be >= 0");
    total += weights[i];
    for (std::size_t j = 0; j < dim; ++j) out[j] += weights[i] * vs[i][j];
  }
  if (total > 0.0) {
    for (auto& v : out) v /= total;
  }
  return out;
}

/// GA-SGD: size-weighted mean of worker gradients.
inline ModelVector ga_aggregate(std::span<const ModelVector> grads, std::span<const double> weights) {
  return weighted_mean(grads, weights);
}

/// MA-SGD: size-weighted mean of worker models.
inline ModelVector ma_aggregate(std::span<const ModelVector> models, std::span<const double> weights) {
  return weighted_mean(models, weights);
}

/// Deterministic shuffle of [begin, end) for one (seed, ...) stream.
inline std::vector<std::size_t> shuffled_rows(std::size_t begin, std::size_t end, std::uint64_t seed) {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  return rows;
}

namespace detail {

inline void check_finite(const ModelVector& w, double eta) {
  for (double v : w) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::numerical_divergence,
                  "non-finite model value; learning rate " + std::to_string(eta) + " is too large");
    }
  }
}

}  // namespace detail

/// One pass of shuffled mini-batch SGD over `part`. `extra(w, grad)` may
/// add penalty terms to each mini-batch gradient before the step.
template <typename ExtraGrad>
ModelVector local_sgd_epoch(ModelKind kind, ModelVector w, const Partition& part, double eta,
                            std::size_t batch_size, std::uint64_t shuffle_seed, ExtraGrad&& extra) {
  if (batch_size == 0) throw Error(ErrorCode::invalid_argument, "batch size must be >= 1");
  const auto rows = shuffled_rows(part.begin, part.end, shuffle_seed);
  for (std::size_t off = 0; off < rows.size(); off += batch_size) {
    const std::size_t len = std::min(batch_size, rows.size() - off);
    IndexBatch batch{part.data, std::span<const std::size_t>(rows).subspan(off, len)};
    auto lg = loss_grad(kind, w, batch);
    extra(w, lg.grad);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= eta * lg.grad[j];
  }
  detail::check_finite(w, eta);
  return w;
}

inline ModelVector local_sgd_epoch(ModelKind kind, ModelVector w, const Partition& part, double eta,
                                   std::size_t batch_size, std::uint64_t shuffle_seed, double l2 = 0.0) {
  return local_sgd_epoch(kind, std::move(w), part, eta, batch_size, shuffle_seed,
                         [l2](const ModelVector& cur, ModelVector& g) {
                           if (l2 == 0.0) return;
                           for (std::size_t j = 0; j < g.size(); ++j) g[j] += l2 * cur[j];
                         });
}

/// Inexact ADMM subproblem: approximately minimizes
///   sum_{r in part} loss_r(w) + (rho/2) ||w - z + u||^2
/// with `local_epochs` passes of mini-batch SGD started from z. The
/// objective is divided by the partition size so `eta` keeps the scale it
/// has for plain SGD; the minimizer is unchanged.
inline ModelVector admm_local_solve(ModelKind kind, const Partition& part, const ModelVector& z,
                                    const ModelVector& u, double rho, std::size_t local_epochs, double eta,
                                    std::size_t batch_size, std::uint64_t seed) {
  detail::require_dim(u.size(), z.size(), "admm_local_solve dual");
  if (part.data) detail::require_dim(z.size(), part.n_features(), "admm_local_solve");
  if (!(rho > 0.0)) throw Error(ErrorCode::invalid_argument, "ADMM rho must be > 0");
  if (part.size() == 0) {
    // Penalty-only objective: the minimizer is z - u.
    ModelVector w(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) w[j] = z[j] - u[j];
    return w;
  }
  const double penalty = rho / static_cast<double>(part.size());
  auto augment = [&](const ModelVector& cur, ModelVector& g) {
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += penalty * (cur[j] - z[j] + u[j]);
  };
  ModelVector w = z;
  for (std::size_t e = 0; e < local_epochs; ++e) {
    w = local_sgd_epoch(kind, std::move(w), part, eta, batch_size, derive_seed(seed, e), augment);
  }
  return w;
}

/// Same update given the already reduced sum of (w_i + u_i).
inline ModelVector admm_consensus_from_sum(const ModelVector& sum, std::size_t n, double rho, double lambda) {
  const double scale = rho / (static_cast<double>(n) * rho + lambda);
  ModelVector z(sum.size());
  for (std::size_t j = 0; j < sum.size(); ++j) z[j] = scale * sum[j];
  return z;
}

/// z = rho * sum_i (w_i + u_i) / (n rho + lambda): the consensus step for an
/// L2 regularizer (lambda/2)||z||^2.
inline ModelVector admm_global_update(std::span<const ModelVector> ws, std::span<const ModelVector> us,
                                      double rho, double lambda) {
  if (ws.empty() || ws.size() != us.size()) {
    throw Error(ErrorCode::invalid_argument, "ADMM global update needs one dual per local model");
  }
  if (lambda < 0.0) throw Error(ErrorCode::invalid_argument, "L2 coefficient must be >= 0");
  const std::size_t dim = ws.front().size();
  ModelVector sum(dim, 0.0);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    detail::require_dim(ws[i].size(), dim, "admm_global_update");
    detail::require_dim(us[i].size(), dim, "admm_global_update dual");
    for (std::size_t j = 0; j < dim; ++j) sum[j] += ws[i][j] + us[i][j];
  }
  return admm_consensus_from_sum(sum, ws.size(), rho, lambda);
}

inline ModelVector admm_dual_update(const ModelVector& u, const ModelVector& w, const ModelVector& z) {
  detail::require_dim(w.size(), u.size(), "admm_dual_update");
  detail::require_dim(z.size(), u.size(), "admm_dual_update");
  ModelVector out(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) out[j] = u[j] + w[j] - z[j];
  return out;
}

/// Sums the statistics and divides; clusters nobody claimed keep their
/// previous centroid.
inline ModelVector kmeans_merge(std::span<const ClusterStats> stats, const ModelVector& previous) {
  if (stats.empty()) throw Error(ErrorCode::invalid_argument, "nothing to merge");
  const std::size_t k = stats.front().k;
  const std::size_t d = stats.front().d;
  detail::require_dim(previous.size(), k * d, "kmeans_merge");
  ClusterStats total(k, d);
  for (const auto& s : stats) {
    if (s.k != k || s.d != d) throw Error(ErrorCode::dimension_mismatch, "kmeans_merge: mixed shapes");
    for (std::size_t i = 0; i < k * d; ++i) total.sums[i] += s.sums[i];
    for (std::size_t c = 0; c < k; ++c) total.counts[c] += s.counts[c];
  }
  ModelVector out(previous);
  for (std::size_t c = 0; c < k; ++c) {
    if (total.counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(total.counts[c]);
    for (std::size_t j = 0; j < d; ++j) out[c * d + j] = total.sums[c * d + j] * inv;
  }
  return out;
}

}  // namespace faasml
