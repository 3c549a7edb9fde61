// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <bit>
#include <cstring>
#include <random>

#include "faasml/collectives.hpp"

using namespace faasml;

namespace {

enum class Route { allreduce, scatterreduce };

struct RoundResult {
  std::vector<ModelVector> outputs;
  std::vector<std::size_t> transfers;
  std::vector<std::size_t> bytes_read;
  std::vector<std::size_t> max_blob;
  std::vector<double> finish;
};

ModelVector seeded(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ModelVector v(dim);
  for (auto& x : v) x = u(rng);
  return v;
}

RoundResult run_round(Route route, const std::vector<ModelVector>& inputs, ReduceOp op = ReduceOp::sum,
                      const std::vector<double>& weights = {}) {
  const std::size_t w = inputs.size();
  MemoryStore shared;
  RoundResult out;
  out.outputs.resize(w);
  out.transfers.resize(w);
  out.bytes_read.resize(w);
  out.max_blob.resize(w);
  SimEngine engine;
  engine.run(w, [&](WorkerClock& clock) {
    const auto r = clock.rank();
    CountingStore counted(shared, r);
    CollectiveContext ctx;
    ctx.store = &counted;
    ctx.clock = &clock;
    ctx.workers = w;
    ctx.rank = r;
    ctx.op = op;
    const double weight = weights.empty() ? 1.0 : weights[r];
    out.outputs[r] = route == Route::allreduce ? allreduce(ctx, inputs[r], weight)
                                               : scatterreduce(ctx, inputs[r], weight);
    out.transfers[r] = counted.transfers();
    out.bytes_read[r] = counted.bytes_read();
    out.max_blob[r] = counted.max_blob_bytes();
  });
  out.finish = engine.final_times();
  return out;
}

double rel_err(const ModelVector& a, const ModelVector& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), 1e-300));
  }
  return worst;
}

}  // namespace

TEST_CASE("update blob layout") {
  CHECK(encode_update(std::span<const double>{}).size() == 14 + 8);

  const ModelVector v{1.5};
  const auto b = encode_update(v, 2.0);
  REQUIRE(b.size() == 14 + 16);
  CHECK(b.substr(0, 4) == "LMBL");
  CHECK(b[4] == 0x01);
  CHECK(b[5] == 0x01);
  CHECK(b[6] == 2);  // little-endian count: weight + one value
  for (int i = 7; i < 14; ++i) CHECK(b[static_cast<std::size_t>(i)] == 0);
  std::uint64_t bits = 0;
  std::memcpy(&bits, b.data() + 14, 8);
  CHECK(std::bit_cast<double>(bits) == 2.0);
  std::memcpy(&bits, b.data() + 22, 8);
  CHECK(std::bit_cast<double>(bits) == 1.5);
}

TEST_CASE("update blob round trip and corruption") {
  const auto v = seeded(1000, 5);
  const auto blob = encode_update(v, 0.25);
  CHECK(blob.size() == 14 + 8 * 1001);
  const auto u = decode_update(blob);
  CHECK(u.values == v);
  CHECK(u.weight == 0.25);

  auto bad = blob;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_update(bad), Error);
  try {
    decode_update(bad);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::format);
  }
  bad = blob;
  bad[4] = 0x02;
  CHECK_THROWS_AS(decode_update(bad), Error);
  bad = blob;
  bad[5] = 0x02;
  CHECK_THROWS_AS(decode_update(bad), Error);
  CHECK_THROWS_AS(decode_update(blob.substr(0, blob.size() - 1)), Error);
  CHECK_THROWS_AS(decode_update(blob.substr(0, 10)), Error);
  CHECK_THROWS_AS(decode_update(blob + "x"), Error);
}

TEST_CASE("key grammar") {
  CHECK(make_key({KeyKind::local, 2, 5, 3, 0, 0}) == "u/2/5/3");
  CHECK(merged_key(0, 0) == "m/0/0");
  CHECK(chunk_key(1, 2, 3, 4) == "c/1/2/3/4");
  CHECK(reduced_key(1, 2, 4) == "r/1/2/4");
  CHECK(global_model_key() == "g/model");
  CHECK(checkpoint_key(7) == "ckpt/7");

  const auto m = parse_key("m/0/0");
  CHECK(m.kind == KeyKind::merged);
  CHECK(m.epoch == 0);
  CHECK(m.iter == 0);

  for (const char* bad : {"u/2/x/3", "u/2/3", "m/0", "q/1/2", "g/other", "ckpt/", "u/01/2/3", "", "c/1/2/3"}) {
    try {
      parse_key(bad);
      FAIL("accepted " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::malformed_key);
    }
  }
}

TEST_CASE("keys round-trip and never collide") {
  std::set<std::string> seen;
  std::size_t made = 0;
  for (std::uint64_t e = 0; e < 12; ++e) {
    for (std::uint64_t i = 0; i < 12; ++i) {
      for (std::uint64_t s = 0; s < 12; ++s) {
        const std::vector<KeyFields> fields{{KeyKind::local, e, i, s, 0, 0},
                                            {KeyKind::chunk, e, i, s, (s + 1) % 12, 0},
                                            {KeyKind::reduced, e, i, 0, s, 0}};
        for (const auto& f : fields) {
          const auto k = make_key(f);
          CHECK(parse_key(k) == f);
          seen.insert(k);
          ++made;
        }
      }
      const KeyFields mf{KeyKind::merged, e, i, 0, 0, 0};
      CHECK(parse_key(make_key(mf)) == mf);
      seen.insert(make_key(mf));
      ++made;
    }
  }
  CHECK(seen.size() == made);
  CHECK(parse_key("ckpt/7").worker == 7);
  CHECK(parse_key("g/model").kind == KeyKind::global);
}

TEST_CASE("allreduce examples") {
  const std::vector<ModelVector> in{{1, 2}, {3, 4}, {5, 6}};
  const auto r = run_round(Route::allreduce, in);
  for (const auto& o : r.outputs) CHECK(o == ModelVector{9, 12});

  const auto one = run_round(Route::allreduce, {{7, 8}});
  CHECK(one.outputs[0] == ModelVector{7, 8});
  CHECK(one.transfers[0] == 0);
}

TEST_CASE("scatterreduce examples") {
  const std::vector<ModelVector> in{{1, 2, 3, 4}, {10, 20, 30, 40}};
  const auto r = run_round(Route::scatterreduce, in);
  for (const auto& o : r.outputs) CHECK(o == ModelVector{11, 22, 33, 44});

  const auto one = run_round(Route::scatterreduce, {{7, 8}});
  CHECK(one.outputs[0] == ModelVector{7, 8});
  CHECK(one.transfers[0] == 0);
}

TEST_CASE("both collectives equal a serial sum") {
  for (std::size_t w : {1, 2, 3, 5, 8, 16}) {
    for (std::size_t dim : {1, 7, 1000}) {
      std::vector<ModelVector> in;
      for (std::size_t r = 0; r < w; ++r) in.push_back(seeded(dim, 100 * w + 10 * dim + r));
      ModelVector oracle(dim, 0.0);
      for (const auto& v : in) {
        for (std::size_t j = 0; j < dim; ++j) oracle[j] += v[j];
      }
      const auto a = run_round(Route::allreduce, in);
      const auto s = run_round(Route::scatterreduce, in);
      for (std::size_t r = 0; r < w; ++r) {
        REQUIRE(rel_err(a.outputs[r], oracle) <= 1e-12);
        REQUIRE(rel_err(s.outputs[r], oracle) <= 1e-12);
        REQUIRE(a.outputs[r] == s.outputs[r]);
      }
    }
  }
}

TEST_CASE("weighted mean reduction") {
  const std::vector<ModelVector> in{{4.0}, {0.0}};
  for (auto route : {Route::allreduce, Route::scatterreduce}) {
    const auto r = run_round(route, in, ReduceOp::weighted_mean, {1.0, 3.0});
    for (const auto& o : r.outputs) CHECK(o == ModelVector{1.0});
  }
}

TEST_CASE("transfer counts follow 3w-2") {
  for (std::size_t w : {2, 5, 10}) {
    std::vector<ModelVector> in(w, seeded(40, w));
    const auto a = run_round(Route::allreduce, in);
    std::size_t total = 0;
    for (auto t : a.transfers) total += t;
    CHECK(total == 3 * w - 2);
    CHECK(a.transfers[0] == w);
    for (std::size_t r = 1; r < w; ++r) CHECK(a.transfers[r] == 2);

    const auto s = run_round(Route::scatterreduce, in);
    for (auto t : s.transfers) CHECK(t == 3 * w - 2);
  }
  std::vector<ModelVector> ten(10, seeded(40, 1));
  const auto s10 = run_round(Route::scatterreduce, ten);
  std::size_t total = 0;
  for (auto t : s10.transfers) total += t;
  CHECK(s10.transfers[0] == 28);
  CHECK(total == 280);
}

TEST_CASE("leader reads every full update; scatterreduce blobs shrink with w") {
  const std::size_t w = 8, dim = 800;
  std::vector<ModelVector> in;
  for (std::size_t r = 0; r < w; ++r) in.push_back(seeded(dim, r));
  const std::size_t full = encode_update(in[0]).size();
  const auto a = run_round(Route::allreduce, in);
  CHECK(a.bytes_read[0] == (w - 1) * full);
  const auto s = run_round(Route::scatterreduce, in);
  const std::size_t slice = encode_update(ModelVector(dim / w)).size();
  for (auto m : s.max_blob) CHECK(m == slice);
  CHECK(slice * w < full + w * (kUpdateHeaderBytes + 8));
}

TEST_CASE("missing worker raises a straggler timeout naming it") {
  MemoryStore shared;
  SimEngine engine;
  try {
    engine.run(3, [&](WorkerClock& clock) {
      if (clock.rank() == 2) return;
      CollectiveContext ctx;
      ctx.store = &shared;
      ctx.clock = &clock;
      ctx.workers = 3;
      ctx.rank = clock.rank();
      ctx.timeout_s = 5.0;
      allreduce(ctx, ModelVector{1.0});
    });
    FAIL("expected a timeout");
  } catch (const StragglerTimeout& e) {
    CHECK(e.missing_ranks() == std::vector<std::size_t>{2});
  }
  for (double t : engine.final_times()) CHECK(t <= 5.0);
}

TEST_CASE("repeated rounds with garbage collection stay correct and bounded") {
  for (auto route : {Route::allreduce, Route::scatterreduce}) {
    const std::size_t w = 4;
    MemoryStore shared;
    std::vector<std::size_t> max_keys(w, 0);
    std::vector<ModelVector> last(w);
    SimEngine engine;
    engine.run(w, [&](WorkerClock& clock) {
      const auto r = clock.rank();
      CollectiveContext ctx;
      ctx.store = &shared;
      ctx.clock = &clock;
      ctx.workers = w;
      ctx.rank = r;
      for (std::uint64_t it = 0; it < 20; ++it) {
        ctx.iteration = it;
        ctx.previous = it ? std::optional<RoundId>(RoundId{0, it - 1}) : std::nullopt;
        const ModelVector v{static_cast<double>(r + it), 1.0};
        last[r] = route == Route::allreduce ? allreduce(ctx, v) : scatterreduce(ctx, v);
        REQUIRE(last[r] == ModelVector{static_cast<double>(6 + 4 * it), 4.0});
        max_keys[r] = std::max(max_keys[r], shared.size());
      }
    });
    for (auto k : max_keys) CHECK(k <= 3 * w * w);
  }
}

TEST_CASE("collective rejects a bad context") {
  MemoryStore s;
  ManualClock c;
  CollectiveContext ctx;
  ctx.store = &s;
  ctx.clock = &c;
  ctx.workers = 2;
  ctx.rank = 2;
  CHECK_THROWS_AS(allreduce(ctx, ModelVector{1.0}), Error);
  ctx.rank = 0;
  ctx.workers = 0;
  CHECK_THROWS_AS(scatterreduce(ctx, ModelVector{1.0}), Error);
}

TEST_CASE("collectives also run on free threads over the filesystem store") {
  const auto root = std::filesystem::temp_directory_path() / "faasml_collective_fs";
  std::filesystem::remove_all(root);
  FileSystemStore shared(root);
  const std::size_t w = 3;
  std::vector<ModelVector> out(w);
  ThreadExecutor exec;
  exec.run(w, [&](WorkerClock& clock) {
    CollectiveContext ctx;
    ctx.store = &shared;
    ctx.clock = &clock;
    ctx.workers = w;
    ctx.rank = clock.rank();
    ctx.poll_interval_s = 0.001;
    ctx.timeout_s = 20.0;
    const ModelVector v{1.0 * static_cast<double>(clock.rank()), 2.0, 3.0, 4.0};
    ctx.iteration = 0;
    out[clock.rank()] = allreduce(ctx, v);
    ctx.iteration = 1;
    CHECK(scatterreduce(ctx, v) == out[clock.rank()]);
  });
  for (const auto& o : out) CHECK(o == ModelVector{3.0, 6.0, 9.0, 12.0});
  std::filesystem::remove_all(root);
}
