// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Numerical substrate: datasets, row partitions, per-model losses and
// gradients, k-means sufficient statistics, and full-dataset evaluation.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "faasml/error.hpp"

namespace faasml {

/// Flat parameter vector: LR/SVM weights, or k concatenated centroids.
using ModelVector = std::vector<double>;

enum class ModelKind { logistic, svm, least_squares, kmeans };
enum class Task { classification, clustering, regression };

inline const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::logistic: return "lr";
    case ModelKind::svm: return "svm";
    case ModelKind::least_squares: return "ridge";
    case ModelKind::kmeans: return "kmeans";
  }
  return "?";
}

/// Dense row-major feature matrix plus one label per row. Immutable once
/// built, so it can be shared read-only by every worker.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t n_rows, std::size_t n_features, std::vector<double> features,
          std::vector<double> labels)
      : n_rows_(n_rows), n_features_(n_features), features_(std::move(features)),
        labels_(std::move(labels)) {
    if (features_.size() != n_rows_ * n_features_) {
      throw Error(ErrorCode::invalid_argument, "feature matrix size does not match n_rows*n_features");
    }
    if (labels_.size() != n_rows_) {
      throw Error(ErrorCode::invalid_argument, "labels length differs from n_rows");
    }
    for (double v : features_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "non-finite feature value");
    }
    for (double v : labels_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "non-finite label");
    }
  }

  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_features() const noexcept { return n_features_; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {features_.data() + i * n_features_, n_features_};
  }
  double label(std::size_t i) const noexcept { return labels_[i]; }
  const std::vector<double>& features() const noexcept { return features_; }
  const std::vector<double>& labels() const noexcept { return labels_; }

  bool has_binary_labels() const noexcept {
    return std::all_of(labels_.begin(), labels_.end(), [](double y) { return y == 1.0 || y == -1.0; });
  }

  /// Copy of rows [begin, end) as a standalone dataset.
  Dataset slice(std::size_t begin, std::size_t end) const {
    std::vector<double> f(features_.begin() + static_cast<std::ptrdiff_t>(begin * n_features_),
                          features_.begin() + static_cast<std::ptrdiff_t>(end * n_features_));
    std::vector<double> l(labels_.begin() + static_cast<std::ptrdiff_t>(begin),
                          labels_.begin() + static_cast<std::ptrdiff_t>(end));
    return Dataset(end - begin, n_features_, std::move(f), std::move(l));
  }

  /// Copy of the listed rows, in order.
  Dataset gather(std::span<const std::size_t> rows) const {
    std::vector<double> f;
    std::vector<double> l;
    f.reserve(rows.size() * n_features_);
    l.reserve(rows.size());
    for (std::size_t r : rows) {
      auto x = row(r);
      f.insert(f.end(), x.begin(), x.end());
      l.push_back(labels_[r]);
    }
    return Dataset(rows.size(), n_features_, std::move(f), std::move(l));
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t n_rows_ = 0;
  std::size_t n_features_ = 0;
  std::vector<double> features_;
  std::vector<double> labels_;
};

/// Anything that exposes a sequence of (row, label) pairs from one dataset.
template <typename B>
concept RowBatch = requires(const B& b, std::size_t i) {
  { b.size() } -> std::convertible_to<std::size_t>;
  { b.n_features() } -> std::convertible_to<std::size_t>;
  { b.row(i) } -> std::convertible_to<std::span<const double>>;
  { b.label(i) } -> std::convertible_to<double>;
};

/// Contiguous row range of a dataset owned by one worker.
struct Partition {
  const Dataset* data = nullptr;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t partition_id = 0;
  std::size_t owner_worker = 0;

  static Partition whole(const Dataset& d) { return Partition{&d, 0, d.n_rows(), 0, 0}; }

  std::size_t size() const noexcept { return end - begin; }
  std::size_t n_features() const noexcept { return data->n_features(); }
  std::span<const double> row(std::size_t i) const noexcept { return data->row(begin + i); }
  double label(std::size_t i) const noexcept { return data->label(begin + i); }

  Partition sub(std::size_t offset, std::size_t count) const {
    return Partition{data, begin + offset, begin + offset + count, partition_id, owner_worker};
  }
};

/// Rows picked by index from a dataset (shuffled mini-batches).
struct IndexBatch {
  const Dataset* data = nullptr;
  std::span<const std::size_t> rows;

  std::size_t size() const noexcept { return rows.size(); }
  std::size_t n_features() const noexcept { return data->n_features(); }
  std::span<const double> row(std::size_t i) const noexcept { return data->row(rows[i]); }
  double label(std::size_t i) const noexcept { return data->label(rows[i]); }
};

/// Splits rows evenly: the first n % w partitions get one extra row.
inline std::vector<Partition> partition_rows(const Dataset& data, std::size_t workers) {
  if (workers == 0) throw Error(ErrorCode::invalid_argument, "cannot partition across zero workers");
  std::vector<Partition> parts;
  parts.reserve(workers);
  const std::size_t base = data.n_rows() / workers;
  const std::size_t extra = data.n_rows() % workers;
  std::size_t start = 0;
  for (std::size_t i = 0; i < workers; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    parts.push_back(Partition{&data, start, start + len, i, i});
    start += len;
  }
  return parts;
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
                    std::to_string(got));
  }
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// 1 / (1 + exp(-z)) without overflow.
inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derives an independent stream seed from a base seed and a tuple of ids.
template <typename... Ids>
std::uint64_t derive_seed(std::uint64_t seed, Ids... ids) noexcept {
  std::uint64_t s = detail::splitmix64(seed);
  ((s = detail::splitmix64(s ^ static_cast<std::uint64_t>(ids))), ...);
  return s;
}

/// Generated dataset together with the hidden parameters that produced it.
struct SyntheticDataset {
  Dataset data;
  ModelVector truth;  // hyperplane (classification/regression) or k·d centers
  std::size_t clusters = 0;
};

inline SyntheticDataset generate_synthetic_with_truth(std::size_t n, std::size_t d, Task task,
                                                      std::uint64_t seed, std::size_t clusters = 10) {
  if (n == 0 || d == 0) throw Error(ErrorCode::invalid_argument, "synthetic dataset needs n >= 1 and d >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> features(n * d);
  std::vector<double> labels(n);
  SyntheticDataset out;

  if (task == Task::clustering) {
    if (clusters == 0) throw Error(ErrorCode::invalid_argument, "clustering needs k >= 1");
    // Centers spread in a cube wide enough that k unit-variance blobs
    // stay at least 8 standard deviations apart.
    const double half_width = 5.0 * static_cast<double>(clusters);
    const double min_sep = 8.0;
    std::uniform_real_distribution<double> uni(-half_width, half_width);
    std::vector<double> centers;
    for (std::size_t c = 0; c < clusters; ++c) {
      std::vector<double> cand(d);
      for (int attempt = 0;; ++attempt) {
        for (auto& v : cand) v = uni(rng);
        bool ok = true;
        for (std::size_t o = 0; o < c && ok; ++o) {
          double dist2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double diff = cand[j] - centers[o * d + j];
            dist2 += diff * diff;
          }
          ok = dist2 >= min_sep * min_sep;
        }
        if (ok || attempt > 10000) break;
      }
      centers.insert(centers.end(), cand.begin(), cand.end());
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % clusters;
      for (std::size_t j = 0; j < d; ++j) features[i * d + j] = centers[c * d + j] + normal(rng);
      labels[i] = static_cast<double>(c);
    }
    out.truth = std::move(centers);
    out.clusters = clusters;
  } else {
    std::vector<double> hidden(d);
    double norm = 0.0;
    for (auto& v : hidden) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : hidden) v /= norm;
    std::bernoulli_distribution flip(0.1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) features[i * d + j] = normal(rng);
      const double margin = detail::dot({features.data() + i * d, d}, hidden);
      if (task == Task::classification) {
        double y = margin >= 0.0 ? 1.0 : -1.0;
        if (flip(rng)) y = -y;
        labels[i] = y;
      } else {
        labels[i] = margin + 0.1 * normal(rng);
      }
    }
    out.truth = std::move(hidden);
  }
  out.data = Dataset(n, d, std::move(features), std::move(labels));
  return out;
}

/// Classification: points around a hidden hyperplane with 10% label noise.
/// Clustering: `clusters` well-separated unit Gaussians.
/// Regression: hidden linear model plus N(0, 0.01) noise.
inline Dataset generate_synthetic(std::size_t n, std::size_t d, Task task, std::uint64_t seed,
                                  std::size_t clusters = 10) {
  return generate_synthetic_with_truth(n, d, task, seed, clusters).data;
}

/// Parses libsvm text ("label idx:val idx:val ..."), 1-based indices.
/// Labels given as 0/1 are mapped to -1/+1.
inline Dataset parse_libsvm(std::istream& in, std::size_t d) {
  if (d == 0) throw Error(ErrorCode::invalid_argument, "libsvm reader needs d >= 1");
  std::vector<double> features;
  std::vector<double> labels;
  std::string line;
  std::size_t line_no = 0;
  auto parse_double = [&](std::string_view tok, const char* what) {
    const std::string_view original = tok;
    if (tok.size() > 1 && tok[0] == '+' && tok[1] != '-' && tok[1] != '+') tok.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
      throw ParseError(line_no, std::string("bad ") + what + " '" + std::string(original) + "'");
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream tokens(line);
    std::string tok;
    if (!(tokens >> tok)) continue;
    double y = parse_double(tok, "label");
    if (y == 0.0) y = -1.0;
    std::vector<double> row(d, 0.0);
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size()) {
        throw ParseError(line_no, "expected idx:value, got '" + tok + "'");
      }
      std::string_view sv(tok);
      std::size_t idx = 0;
      auto idx_sv = sv.substr(0, colon);
      auto [ptr, ec] = std::from_chars(idx_sv.data(), idx_sv.data() + idx_sv.size(), idx);
      if (ec != std::errc() || ptr != idx_sv.data() + idx_sv.size()) {
        throw ParseError(line_no, "bad feature index '" + std::string(idx_sv) + "'");
      }
      if (idx < 1 || idx > d) {
        throw RangeError(line_no, "feature index " + std::to_string(idx) + " outside 1.." + std::to_string(d));
      }
      row[idx - 1] = parse_double(sv.substr(colon + 1), "feature value");
    }
    features.insert(features.end(), row.begin(), row.end());
    labels.push_back(y);
  }
  const std::size_t n = labels.size();
  return Dataset(n, d, std::move(features), std::move(labels));
}

inline Dataset load_libsvm(const std::string& path, std::size_t d) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open dataset '" + path + "'");
  return parse_libsvm(in, d);
}

struct LossGrad {
  double loss = 0.0;
  ModelVector grad;
};

/// Mean logistic loss log(1 + exp(-y<w,x>)) and its gradient.
template <RowBatch B>
LossGrad lr_loss_grad(const ModelVector& w, const B& batch) {
  detail::require_dim(w.size(), batch.n_features(), "lr_loss_grad");
  LossGrad out{0.0, ModelVector(w.size(), 0.0)};
  const std::size_t n = batch.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = batch.row(i);
    const double y = batch.label(i);
    const double m = y * detail::dot(w, x);
    out.loss += detail::softplus(-m);
    const double coef = -y * detail::sigmoid(-m);
    for (std::size_t j = 0; j < x.size(); ++j) out.grad[j] += coef * x[j];
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  for (auto& g : out.grad) g *= inv;
  return out;
}

/// Mean hinge loss max(0, 1 - y<w,x>); subgradient is zero at the kink.
template <RowBatch B>
LossGrad svm_loss_grad(const ModelVector& w, const B& batch) {
  detail::require_dim(w.size(), batch.n_features(), "svm_loss_grad");
  LossGrad out{0.0, ModelVector(w.size(), 0.0)};
  const std::size_t n = batch.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = batch.row(i);
    const double y = batch.label(i);
    const double margin = y * detail::dot(w, x);
    if (margin < 1.0) {
      out.loss += 1.0 - margin;
      for (std::size_t j = 0; j < x.size(); ++j) out.grad[j] -= y * x[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  for (auto& g : out.grad) g *= inv;
  return out;
}

/// Mean squared-error loss 0.5 (<w,x> - y)^2, used by the ridge workloads.
template <RowBatch B>
LossGrad lsq_loss_grad(const ModelVector& w, const B& batch) {
  detail::require_dim(w.size(), batch.n_features(), "lsq_loss_grad");
  LossGrad out{0.0, ModelVector(w.size(), 0.0)};
  const std::size_t n = batch.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = batch.row(i);
    const double r = detail::dot(w, x) - batch.label(i);
    out.loss += 0.5 * r * r;
    for (std::size_t j = 0; j < x.size(); ++j) out.grad[j] += r * x[j];
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  for (auto& g : out.grad) g *= inv;
  return out;
}

template <RowBatch B>
LossGrad loss_grad(ModelKind kind, const ModelVector& w, const B& batch) {
  switch (kind) {
    case ModelKind::logistic: return lr_loss_grad(w, batch);
    case ModelKind::svm: return svm_loss_grad(w, batch);
    case ModelKind::least_squares: return lsq_loss_grad(w, batch);
    case ModelKind::kmeans: break;
  }
  throw Error(ErrorCode::invalid_argument, "k-means has no gradient; use kmeans_assign_stats");
}

/// Mergeable EM statistic: per-cluster coordinate sums and counts plus SSE.
struct ClusterStats {
  std::size_t k = 0;
  std::size_t d = 0;
  std::vector<double> sums;            // k x d
  std::vector<std::uint64_t> counts;   // k
  double sse = 0.0;

  ClusterStats() = default;
  ClusterStats(std::size_t k_, std::size_t d_) : k(k_), d(d_), sums(k_ * d_, 0.0), counts(k_, 0) {}

  std::uint64_t total_count() const noexcept {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  /// Layout [sums..., counts..., sse] so stats can ride a sum-allreduce.
  std::vector<double> flatten() const {
    std::vector<double> out(sums);
    for (auto c : counts) out.push_back(static_cast<double>(c));
    out.push_back(sse);
    return out;
  }

  static ClusterStats unflatten(std::span<const double> flat, std::size_t k, std::size_t d) {
    detail::require_dim(flat.size(), k * d + k + 1, "ClusterStats::unflatten");
    ClusterStats s(k, d);
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(k * d), s.sums.begin());
    for (std::size_t j = 0; j < k; ++j) s.counts[j] = static_cast<std::uint64_t>(std::llround(flat[k * d + j]));
    s.sse = flat.back();
    return s;
  }

  friend bool operator==(const ClusterStats&, const ClusterStats&) = default;
};

/// Assigns each row to its nearest centroid (ties go to the lowest index).
template <RowBatch B>
ClusterStats kmeans_assign_stats(const ModelVector& centroids, const B& batch, std::size_t k) {
  const std::size_t d = batch.n_features();
  if (k == 0) throw Error(ErrorCode::invalid_argument, "k-means needs k >= 1");
  detail::require_dim(centroids.size(), k * d, "kmeans_assign_stats");
  ClusterStats stats(k, d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto x = batch.row(i);
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x[j] - centroids[c * d + j];
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = c;
      }
    }
    for (std::size_t j = 0; j < d; ++j) stats.sums[best * d + j] += x[j];
    stats.counts[best] += 1;
    stats.sse += best_d2;
  }
  return stats;
}

struct Evaluation {
  double loss = 0.0;
  /// Accuracy for classifiers, SSE for k-means, mean squared error for ridge.
  double metric = 0.0;
};

/// Full-dataset mean loss plus the model's headline metric. For k-means the
/// loss is SSE / n_rows.
inline Evaluation evaluate(const ModelVector& w, const Dataset& data, ModelKind kind, std::size_t k = 0) {
  const auto all = Partition::whole(data);
  Evaluation ev;
  if (kind == ModelKind::kmeans) {
    const auto stats = kmeans_assign_stats(w, all, k);
    ev.metric = stats.sse;
    ev.loss = data.n_rows() ? stats.sse / static_cast<double>(data.n_rows()) : 0.0;
    return ev;
  }
  detail::require_dim(w.size(), data.n_features(), "evaluate");
  const std::size_t n = data.n_rows();
  if (n == 0) return ev;
  double loss = 0.0;
  double metric = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = detail::dot(w, data.row(i));
    const double y = data.label(i);
    switch (kind) {
      case ModelKind::logistic: loss += detail::softplus(-y * s); break;
      case ModelKind::svm: loss += std::max(0.0, 1.0 - y * s); break;
      case ModelKind::least_squares: loss += 0.5 * (s - y) * (s - y); break;
      case ModelKind::kmeans: break;
    }
    if (kind == ModelKind::least_squares) {
      metric += (s - y) * (s - y);
    } else if ((s >= 0.0 ? 1.0 : -1.0) == y) {
      metric += 1.0;
    }
  }
  ev.loss = loss / static_cast<double>(n);
  ev.metric = metric / static_cast<double>(n);
  return ev;
}

}  // namespace faasml
