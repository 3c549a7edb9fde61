// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "faasml/model_core.hpp"

using namespace faasml;
using Catch::Approx;

namespace {

ModelVector random_vector(std::size_t d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  ModelVector w(d);
  for (auto& v : w) v = n(rng);
  return w;
}

template <typename F>
ModelVector central_diff(F&& loss, ModelVector w, double h = 1e-6) {
  ModelVector g(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double keep = w[j];
    w[j] = keep + h;
    const double up = loss(w);
    w[j] = keep - h;
    const double down = loss(w);
    w[j] = keep;
    g[j] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const ModelVector& a, const ModelVector& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

Dataset parse(const std::string& text, std::size_t d) {
  std::istringstream in(text);
  return parse_libsvm(in, d);
}

}  // namespace

TEST_CASE("synthetic data is deterministic and well formed") {
  const auto a = generate_synthetic(4, 2, Task::classification, 7);
  const auto b = generate_synthetic(4, 2, Task::classification, 7);
  CHECK(a == b);
  CHECK(a.features() == b.features());
  CHECK(a.n_rows() == 4);
  CHECK(a.n_features() == 2);

  const auto c = generate_synthetic(1000, 10, Task::classification, 1);
  const auto pos = std::count(c.labels().begin(), c.labels().end(), 1.0);
  const auto neg = std::count(c.labels().begin(), c.labels().end(), -1.0);
  CHECK(pos > 0);
  CHECK(neg > 0);
  CHECK(pos + neg == 1000);

  CHECK_THROWS_AS(generate_synthetic(0, 2, Task::classification, 1), Error);
  CHECK_THROWS_AS(generate_synthetic(2, 0, Task::clustering, 1), Error);
}

TEST_CASE("clustering data: true centers give near-minimal SSE") {
  const auto s = generate_synthetic_with_truth(1000, 2, Task::clustering, 3, 10);
  const auto truth_sse = kmeans_assign_stats(s.truth, Partition::whole(s.data), 10).sse;

  // Oracle: SSE of each row against its generating center.
  double generating = 0.0;
  for (std::size_t i = 0; i < s.data.n_rows(); ++i) {
    const auto c = static_cast<std::size_t>(s.data.label(i));
    for (std::size_t j = 0; j < 2; ++j) {
      const double diff = s.data.row(i)[j] - s.truth[c * 2 + j];
      generating += diff * diff;
    }
  }
  CHECK(truth_sse <= 1.1 * generating);
  CHECK(truth_sse <= generating + 1e-9);
}

TEST_CASE("libsvm parsing") {
  SECTION("sparse row with 1-based indices") {
    const auto d = parse("1 1:0.5 3:2.0", 3);
    REQUIRE(d.n_rows() == 1);
    CHECK(d.row(0)[0] == 0.5);
    CHECK(d.row(0)[1] == 0.0);
    CHECK(d.row(0)[2] == 2.0);
    CHECK(d.label(0) == 1.0);
  }
  SECTION("0 label maps to -1") {
    const auto d = parse("0 2:1.0", 2);
    CHECK(d.label(0) == -1.0);
    CHECK(d.row(0)[0] == 0.0);
    CHECK(d.row(0)[1] == 1.0);
  }
  SECTION("index beyond d is a range error naming the line") {
    try {
      parse("1 5:1.0", 3);
      FAIL("expected a range error");
    } catch (const RangeError& e) {
      CHECK(e.line() == 1);
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
  }
  SECTION("malformed line is a parse error with its line number") {
    try {
      parse("1 1:0.5\n-1 2:abc\n", 3);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse("1 1-0.5", 3), ParseError);
    CHECK_THROWS_AS(parse("x 1:0.5", 3), ParseError);
    CHECK_THROWS_AS(parse("1 0:0.5", 3), RangeError);
  }
  SECTION("comments and blank lines are skipped; +1/-1 labels kept") {
    const auto d = parse("# header\n\n+1 1:1\n-1 2:2 # trailing\n", 2);
    REQUIRE(d.n_rows() == 2);
    CHECK(d.label(0) == 1.0);
    CHECK(d.label(1) == -1.0);
    CHECK(d.row(1)[1] == 2.0);
  }
  SECTION("file loading") {
    const auto path = std::filesystem::temp_directory_path() / "faasml_test.libsvm";
    {
      std::ofstream f(path);
      f << "1 1:0.5 3:2.0\n0 2:1.0\n";
    }
    const auto d = load_libsvm(path.string(), 3);
    CHECK(d.n_rows() == 2);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_libsvm("/nonexistent/faasml.libsvm", 3), Error);
  }
}

TEST_CASE("logistic loss and gradient") {
  const auto data = generate_synthetic(32, 5, Task::classification, 11);
  const auto batch = Partition::whole(data);

  CHECK(lr_loss_grad(ModelVector(5, 0.0), batch).loss == Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(lr_loss_grad(ModelVector(5, 0.0), batch).loss == Approx(0.693147).margin(1e-6));

  const Dataset one(1, 2, {1.0, 0.0}, {1.0});
  const auto g = lr_loss_grad(ModelVector{0.0, 0.0}, Partition::whole(one)).grad;
  CHECK(g[0] == -0.5);
  CHECK(g[1] == 0.0);

  const auto w = random_vector(5, 99);
  const auto analytic = lr_loss_grad(w, batch).grad;
  const auto numeric = central_diff([&](const ModelVector& v) { return lr_loss_grad(v, batch).loss; }, w);
  CHECK(rel_err(analytic, numeric) <= 1e-6);

  CHECK_THROWS_AS(lr_loss_grad(ModelVector(4, 0.0), batch), Error);
}

TEST_CASE("logistic loss is stable for large margins") {
  const Dataset d(2, 1, {1.0, 1.0}, {1.0, -1.0});
  const auto lg = lr_loss_grad(ModelVector{800.0}, Partition::whole(d));
  CHECK(std::isfinite(lg.loss));
  CHECK(lg.loss == Approx(400.0).epsilon(1e-12));  // (0 + 800) / 2
  CHECK(std::isfinite(lg.grad[0]));
}

TEST_CASE("hinge loss and subgradient") {
  const auto data = generate_synthetic(40, 6, Task::classification, 5);
  const auto batch = Partition::whole(data);
  CHECK(svm_loss_grad(ModelVector(6, 0.0), batch).loss == 1.0);

  const Dataset one(1, 1, {2.0}, {1.0});
  CHECK(svm_loss_grad(ModelVector{1.0}, Partition::whole(one)).grad[0] == 0.0);

  const auto w = random_vector(6, 17, 0.3);
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    const double m = data.label(i) * detail::dot(w, data.row(i));
    REQUIRE(std::abs(m - 1.0) > 1e-4);
  }
  const auto analytic = svm_loss_grad(w, batch).grad;
  const auto numeric = central_diff([&](const ModelVector& v) { return svm_loss_grad(v, batch).loss; }, w);
  CHECK(rel_err(analytic, numeric) <= 1e-6);
}

TEST_CASE("least-squares loss gradient matches finite differences") {
  const auto data = generate_synthetic(25, 4, Task::regression, 9);
  const auto batch = Partition::whole(data);
  const auto w = random_vector(4, 3);
  const auto analytic = lsq_loss_grad(w, batch).grad;
  const auto numeric = central_diff([&](const ModelVector& v) { return lsq_loss_grad(v, batch).loss; }, w);
  CHECK(rel_err(analytic, numeric) <= 1e-6);
}

TEST_CASE("k-means assignment statistics") {
  const Dataset pts(2, 1, {0.0, 10.0}, {0.0, 0.0});
  const auto s = kmeans_assign_stats(ModelVector{1.0, 9.0}, Partition::whole(pts), 2);
  CHECK(s.counts == std::vector<std::uint64_t>{1, 1});
  CHECK(s.sums == std::vector<double>{0.0, 10.0});
  CHECK(s.sse == 2.0);

  const Dataset mid(1, 1, {1.0}, {0.0});
  const auto t = kmeans_assign_stats(ModelVector{0.0, 2.0}, Partition::whole(mid), 2);
  CHECK(t.counts == std::vector<std::uint64_t>{1, 0});

  CHECK_THROWS_AS(kmeans_assign_stats(ModelVector{0.0, 2.0, 3.0}, Partition::whole(mid), 2), Error);

  const auto data = generate_synthetic(300, 3, Task::clustering, 4, 5);
  const auto u = kmeans_assign_stats(random_vector(15, 8), Partition::whole(data), 5);
  CHECK(u.total_count() == 300);
  CHECK(ClusterStats::unflatten(u.flatten(), 5, 3) == u);
}

TEST_CASE("partitions are disjoint, covering and balanced") {
  const auto data = generate_synthetic(103, 2, Task::classification, 1);
  for (std::size_t w : {1, 2, 3, 7, 10, 103}) {
    const auto parts = partition_rows(data, w);
    REQUIRE(parts.size() == w);
    std::size_t next = 0, lo = data.n_rows(), hi = 0;
    for (std::size_t i = 0; i < w; ++i) {
      CHECK(parts[i].begin == next);
      CHECK(parts[i].partition_id == i);
      CHECK(parts[i].owner_worker == i);
      next = parts[i].end;
      lo = std::min(lo, parts[i].size());
      hi = std::max(hi, parts[i].size());
    }
    CHECK(next == data.n_rows());
    CHECK(hi - lo <= 1);
  }
  CHECK_THROWS_AS(partition_rows(data, 0), Error);
}

TEST_CASE("dataset invariants are enforced") {
  CHECK_THROWS_AS(Dataset(2, 2, {1, 2, 3}, {1, 1}), Error);
  CHECK_THROWS_AS(Dataset(2, 1, {1, 2}, {1}), Error);
  CHECK_THROWS_AS(Dataset(1, 1, {std::nan("")}, {1}), Error);
}

TEST_CASE("evaluation") {
  const auto data = generate_synthetic(200, 4, Task::classification, 2);
  const auto ev = evaluate(ModelVector(4, 0.0), data, ModelKind::logistic);
  CHECK(ev.loss == Approx(std::log(2.0)));
  CHECK(ev.metric >= 0.0);
  CHECK(ev.metric <= 1.0);

  const Dataset pts(2, 1, {0.0, 10.0}, {0.0, 0.0});
  const auto km = evaluate(ModelVector{1.0, 9.0}, pts, ModelKind::kmeans, 2);
  CHECK(km.metric == 2.0);
  CHECK(km.loss == 1.0);
}

TEST_CASE("perfect separator reaches accuracy 1") {
  const Dataset toy(4, 1, {-2.0, -1.0, 1.0, 2.0}, {-1.0, -1.0, 1.0, 1.0});
  CHECK(evaluate(ModelVector{1.0}, toy, ModelKind::logistic).metric == 1.0);
  CHECK(evaluate(ModelVector{1.0}, toy, ModelKind::svm).metric == 1.0);
}

TEST_CASE("full loss equals size-weighted mean of per-batch losses") {
  const auto data = generate_synthetic(101, 6, Task::classification, 21);
  const auto w = random_vector(6, 4);
  for (auto kind : {ModelKind::logistic, ModelKind::svm}) {
    const double full = evaluate(w, data, kind).loss;
    double acc = 0.0;
    for (const auto& p : partition_rows(data, 7)) {
      acc += loss_grad(kind, w, p).loss * static_cast<double>(p.size());
    }
    CHECK(std::abs(acc / 101.0 - full) <= 1e-12 * std::abs(full));
  }
}

TEST_CASE("k-means statistics match a brute-force oracle") {
  const auto data = generate_synthetic(257, 3, Task::clustering, 12, 4);
  const auto c = random_vector(12, 77, 10.0);
  const auto got = kmeans_assign_stats(c, Partition::whole(data), 4);

  ClusterStats want(4, 3);
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    std::vector<double> dist(4, 0.0);
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t j = 0; j < 3; ++j) dist[k] += std::pow(data.row(i)[j] - c[k * 3 + j], 2);
    }
    const auto best = static_cast<std::size_t>(std::min_element(dist.begin(), dist.end()) - dist.begin());
    for (std::size_t j = 0; j < 3; ++j) want.sums[best * 3 + j] += data.row(i)[j];
    want.counts[best] += 1;
    want.sse += dist[best];
  }
  CHECK(got == want);
}

TEST_CASE("losses are non-negative") {
  const auto data = generate_synthetic(64, 5, Task::classification, 31);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto w = random_vector(5, s, 3.0);
    CHECK(lr_loss_grad(w, Partition::whole(data)).loss >= 0.0);
    CHECK(svm_loss_grad(w, Partition::whole(data)).loss >= 0.0);
    CHECK(kmeans_assign_stats(random_vector(10, s), Partition::whole(data), 2).sse >= 0.0);
  }
}

TEST_CASE("libsvm and synthetic loaders are deterministic") {
  const std::string text = "1 1:0.25 2:-1\n0 2:3\n";
  CHECK(parse(text, 2) == parse(text, 2));
  CHECK(generate_synthetic(50, 3, Task::regression, 4) == generate_synthetic(50, 3, Task::regression, 4));
  CHECK_FALSE(generate_synthetic(50, 3, Task::regression, 4) == generate_synthetic(50, 3, Task::regression, 5));
}
