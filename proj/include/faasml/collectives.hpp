// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Storage-mediated AllReduce and ScatterReduce. Workers never talk to each
// other directly: every exchange is a put into the shared store followed by
// polling list() until the expected keys appear.

#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "faasml/clock.hpp"
#include "faasml/error.hpp"
#include "faasml/model_core.hpp"
#include "faasml/storage.hpp"

namespace faasml {

// ---------------------------------------------------------------------------
// Little-endian primitives shared by every binary format in the library.

namespace wire {

inline void put_u8(Bytes& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(Bytes& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

/// Bounds-checked sequential reader; every overrun is a format error.
class Reader {
 public:
  Reader(std::string_view data, const char* what) : data_(data), what_(what) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) {
      throw Error(ErrorCode::format, std::string(what_) + " truncated at byte " + std::to_string(pos_));
    }
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::string_view data_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace wire

// ---------------------------------------------------------------------------
// UpdateBlob: "LMBL" | version 0x01 | dtype 0x01 (float64) | u64 count |
// count float64 values. The weight rides as the first value.

inline constexpr std::size_t kUpdateHeaderBytes = 14;

struct Update {
  ModelVector values;
  double weight = 0.0;
  friend bool operator==(const Update&, const Update&) = default;
};

inline void append_update(Bytes& out, std::span<const double> v, double weight) {
  out.append("LMBL", 4);
  wire::put_u8(out, 0x01);
  wire::put_u8(out, 0x01);
  wire::put_u64(out, static_cast<std::uint64_t>(v.size()) + 1);
  wire::put_f64(out, weight);
  for (double x : v) wire::put_f64(out, x);
}

inline Bytes encode_update(std::span<const double> v, double weight = 1.0) {
  Bytes out;
  out.reserve(kUpdateHeaderBytes + 8 * (v.size() + 1));
  append_update(out, v, weight);
  return out;
}

/// Reads one blob from the reader's current position.
inline Update read_update(wire::Reader& in) {
  const auto magic = in.take(4);
  if (magic != "LMBL") throw Error(ErrorCode::format, "update blob has bad magic");
  if (in.u8() != 0x01) throw Error(ErrorCode::format, "unsupported update blob version");
  if (in.u8() != 0x01) throw Error(ErrorCode::format, "unsupported update blob dtype");
  const std::uint64_t count = in.u64();
  if (count == 0) throw Error(ErrorCode::format, "update blob lacks its weight element");
  if (count > in.remaining() / 8) throw Error(ErrorCode::format, "update blob payload truncated");
  Update u;
  u.weight = in.f64();
  u.values.resize(static_cast<std::size_t>(count - 1));
  for (auto& x : u.values) x = in.f64();
  return u;
}

inline Update decode_update(std::string_view bytes) {
  wire::Reader in(bytes, "update blob");
  auto u = read_update(in);
  if (in.remaining() != 0) throw Error(ErrorCode::format, "trailing bytes after update blob");
  return u;
}

// ---------------------------------------------------------------------------
// Key grammar.

enum class KeyKind { local, merged, chunk, reduced, global, ckpt };

struct KeyFields {
  KeyKind kind = KeyKind::local;
  std::uint64_t epoch = 0;
  std::uint64_t iter = 0;
  std::uint64_t src = 0;
  std::uint64_t dst = 0;
  std::uint64_t worker = 0;
  friend bool operator==(const KeyFields&, const KeyFields&) = default;
};

inline std::string make_key(const KeyFields& k) {
  const auto s = [](std::uint64_t v) { return std::to_string(v); };
  switch (k.kind) {
    case KeyKind::local: return "u/" + s(k.epoch) + "/" + s(k.iter) + "/" + s(k.src);
    case KeyKind::merged: return "m/" + s(k.epoch) + "/" + s(k.iter);
    case KeyKind::chunk: return "c/" + s(k.epoch) + "/" + s(k.iter) + "/" + s(k.src) + "/" + s(k.dst);
    case KeyKind::reduced: return "r/" + s(k.epoch) + "/" + s(k.iter) + "/" + s(k.dst);
    case KeyKind::global: return "g/model";
    case KeyKind::ckpt: return "ckpt/" + s(k.worker);
  }
  throw Error(ErrorCode::malformed_key, "unknown key kind");
}

inline std::string local_key(std::uint64_t e, std::uint64_t i, std::uint64_t src) {
  return make_key({KeyKind::local, e, i, src, 0, 0});
}
inline std::string merged_key(std::uint64_t e, std::uint64_t i) { return make_key({KeyKind::merged, e, i, 0, 0, 0}); }
inline std::string chunk_key(std::uint64_t e, std::uint64_t i, std::uint64_t src, std::uint64_t dst) {
  return make_key({KeyKind::chunk, e, i, src, dst, 0});
}
inline std::string reduced_key(std::uint64_t e, std::uint64_t i, std::uint64_t dst) {
  return make_key({KeyKind::reduced, e, i, 0, dst, 0});
}
inline std::string global_model_key() { return "g/model"; }
inline std::string checkpoint_key(std::uint64_t worker) { return make_key({KeyKind::ckpt, 0, 0, 0, 0, worker}); }

inline KeyFields parse_key(std::string_view key) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto slash = key.find('/', start);
    parts.push_back(key.substr(start, slash == std::string_view::npos ? std::string_view::npos : slash - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  const auto bad = [&](const char* why) {
    return Error(ErrorCode::malformed_key, "'" + std::string(key) + "': " + why);
  };
  const auto num = [&](std::string_view s) {
    std::uint64_t v = 0;
    if (s.empty() || (s.size() > 1 && s.front() == '0')) throw bad("expected a decimal field");
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw bad("expected a decimal field");
    return v;
  };
  const auto arity = [&](std::size_t n) {
    if (parts.size() != n) throw bad("wrong number of fields");
  };
  KeyFields k;
  const auto tag = parts.front();
  if (tag == "u") {
    arity(4);
    k = {KeyKind::local, num(parts[1]), num(parts[2]), num(parts[3]), 0, 0};
  } else if (tag == "m") {
    arity(3);
    k = {KeyKind::merged, num(parts[1]), num(parts[2]), 0, 0, 0};
  } else if (tag == "c") {
    arity(5);
    k = {KeyKind::chunk, num(parts[1]), num(parts[2]), num(parts[3]), num(parts[4]), 0};
  } else if (tag == "r") {
    arity(4);
    k = {KeyKind::reduced, num(parts[1]), num(parts[2]), 0, num(parts[3]), 0};
  } else if (tag == "g") {
    arity(2);
    if (parts[1] != "model") throw bad("unknown global key");
    k.kind = KeyKind::global;
  } else if (tag == "ckpt") {
    arity(2);
    k = {KeyKind::ckpt, 0, 0, 0, 0, num(parts[1])};
  } else {
    throw bad("unknown key kind");
  }
  return k;
}

// ---------------------------------------------------------------------------
// Collectives.

enum class ReduceOp { sum, weighted_mean };

struct RoundId {
  std::uint64_t epoch = 0;
  std::uint64_t iteration = 0;
  friend auto operator<=>(const RoundId&, const RoundId&) = default;
};

struct CollectiveContext {
  BlobStore* store = nullptr;
  WorkerClock* clock = nullptr;
  std::size_t workers = 1;
  std::size_t rank = 0;
  std::uint64_t epoch = 0;
  std::uint64_t iteration = 0;
  ReduceOp op = ReduceOp::sum;
  double poll_interval_s = 0.01;
  double timeout_s = 600.0;
  /// Round whose keys this worker may garbage-collect once every peer has
  /// provably moved past it.
  std::optional<RoundId> previous;

  void validate() const {
    if (!store || !clock) throw Error(ErrorCode::invalid_argument, "collective needs a store and a clock");
    if (workers == 0 || rank >= workers) {
      throw Error(ErrorCode::invalid_argument, "rank " + std::to_string(rank) + " outside 0.." +
                                                   std::to_string(workers) + "-1");
    }
  }
};

namespace detail {

/// Combines contributions in rank order so every route gives identical bits.
inline Update reduce_in_order(std::span<const Update> parts, ReduceOp op) {
  const std::size_t dim = parts.front().values.size();
  Update out{ModelVector(dim, 0.0), 0.0};
  for (const auto& p : parts) {
    require_dim(p.values.size(), dim, "collective input");
    out.weight += p.weight;
    const double scale = op == ReduceOp::weighted_mean ? p.weight : 1.0;
    for (std::size_t j = 0; j < dim; ++j) out.values[j] += scale * p.values[j];
  }
  if (op == ReduceOp::weighted_mean && out.weight > 0.0) {
    for (auto& v : out.values) v /= out.weight;
  }
  return out;
}

inline std::pair<std::size_t, std::size_t> chunk_bounds(std::size_t dim, std::size_t workers, std::size_t j) {
  const std::size_t c = (dim + workers - 1) / workers;
  const std::size_t b = std::min(dim, j * c);
  const std::size_t e = std::min(dim, b + c);
  return {b, e};
}

inline std::vector<std::size_t> missing_ranks(const std::set<std::uint64_t>& present, std::size_t workers,
                                              std::size_t skip) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < workers; ++r) {
    if (r != skip && !present.count(r)) out.push_back(r);
  }
  return out;
}

inline Update fetch(BlobStore& store, const std::string& key) {
  auto blob = store.get(key);
  if (!blob) throw Error(ErrorCode::io, "key '" + key + "' listed but not readable");
  return decode_update(*blob);
}

}  // namespace detail

/// Leader-based AllReduce. Non-leaders write their update, the leader
/// (rank 0) keeps its own in memory, reduces once all w-1 are listed and
/// writes the merged blob, which non-leaders poll for and read. That is
/// 3w-2 remote transfers per round.
inline ModelVector allreduce(const CollectiveContext& ctx, const ModelVector& v, double weight = 1.0) {
  ctx.validate();
  if (ctx.workers == 1) return v;
  BlobStore& store = *ctx.store;
  const auto e = ctx.epoch;
  const auto i = ctx.iteration;
  const std::string prefix = "u/" + std::to_string(e) + "/" + std::to_string(i) + "/";
  const std::string merged = merged_key(e, i);

  if (ctx.rank == 0) {
    std::set<std::uint64_t> present;
    auto ready = [&] {
      present.clear();
      for (const auto& key : store.list(prefix)) present.insert(parse_key(key).src);
      return present.size() >= ctx.workers - 1;
    };
    ctx.clock->wait_until(ready, ctx.timeout_s, ctx.poll_interval_s, [&] {
      throw StragglerTimeout(detail::missing_ranks(present, ctx.workers, 0),
                              "allreduce leader waiting for local updates of round " + std::to_string(e) + "/" +
                                  std::to_string(i));
    });
    std::vector<Update> parts;
    parts.reserve(ctx.workers);
    parts.push_back({v, weight});
    for (std::size_t r = 1; r < ctx.workers; ++r) parts.push_back(detail::fetch(store, local_key(e, i, r)));
    if (ctx.previous) {
      store.remove_prefix("u/" + std::to_string(ctx.previous->epoch) + "/" + std::to_string(ctx.previous->iteration) + "/");
      store.remove_prefix(merged_key(ctx.previous->epoch, ctx.previous->iteration));
    }
    auto result = detail::reduce_in_order(parts, ctx.op);
    store.put(merged, encode_update(result.values, result.weight));
    ctx.clock->notify();
    return std::move(result.values);
  }

  store.put(local_key(e, i, ctx.rank), encode_update(v, weight));
  ctx.clock->notify();
  auto ready = [&] {
    const auto keys = store.list(merged);
    return std::find(keys.begin(), keys.end(), merged) != keys.end();
  };
  ctx.clock->wait_until(ready, ctx.timeout_s, ctx.poll_interval_s, [&] {
    throw StragglerTimeout({0}, "worker " + std::to_string(ctx.rank) + " waiting for merged update of round " +
                                     std::to_string(e) + "/" + std::to_string(i));
  });
  auto merged_update = detail::fetch(store, merged);
  detail::require_dim(merged_update.values.size(), v.size(), "allreduce result");
  return std::move(merged_update.values);
}

/// ScatterReduce. Worker r splits its update into w contiguous chunks,
/// keeps chunk r, writes the rest, aggregates chunk r from every peer and
/// publishes it, then gathers the other reduced chunks. Each worker makes
/// 3w-2 remote transfers and no blob exceeds about 1/w of the model.
inline ModelVector scatterreduce(const CollectiveContext& ctx, const ModelVector& v, double weight = 1.0) {
  ctx.validate();
  if (ctx.workers == 1) return v;
  BlobStore& store = *ctx.store;
  const auto e = ctx.epoch;
  const auto i = ctx.iteration;
  const std::size_t w = ctx.workers;
  const std::size_t me = ctx.rank;
  const std::string round = std::to_string(e) + "/" + std::to_string(i) + "/";

  for (std::size_t j = 0; j < w; ++j) {
    if (j == me) continue;
    const auto [b, end] = detail::chunk_bounds(v.size(), w, j);
    store.put(chunk_key(e, i, me, j), encode_update(std::span<const double>(v).subspan(b, end - b), weight));
  }
  ctx.clock->notify();

  std::set<std::uint64_t> senders;
  auto chunks_ready = [&] {
    senders.clear();
    for (const auto& key : store.list("c/" + round)) {
      const auto k = parse_key(key);
      if (k.dst == me) senders.insert(k.src);
    }
    return senders.size() >= w - 1;
  };
  ctx.clock->wait_until(chunks_ready, ctx.timeout_s, ctx.poll_interval_s, [&] {
    throw StragglerTimeout(detail::missing_ranks(senders, w, me),
                            "aggregator " + std::to_string(me) + " waiting for chunks of round " + round);
  });

  const auto [mb, me_end] = detail::chunk_bounds(v.size(), w, me);
  std::vector<Update> parts;
  parts.reserve(w);
  for (std::size_t r = 0; r < w; ++r) {
    if (r == me) {
      parts.push_back({ModelVector(v.begin() + static_cast<std::ptrdiff_t>(mb),
                                   v.begin() + static_cast<std::ptrdiff_t>(me_end)),
                       weight});
    } else {
      parts.push_back(detail::fetch(store, chunk_key(e, i, r, me)));
    }
  }
  // Every peer has sent chunks for this round, so all of them are done with
  // the previous one: rank 0 drops that round's keys with two prefix deletes.
  if (ctx.previous && me == 0) {
    const std::string prev = std::to_string(ctx.previous->epoch) + "/" + std::to_string(ctx.previous->iteration) + "/";
    store.remove_prefix("c/" + prev);
    store.remove_prefix("r/" + prev);
  }
  auto mine = detail::reduce_in_order(parts, ctx.op);
  store.put(reduced_key(e, i, me), encode_update(mine.values, mine.weight));
  ctx.clock->notify();

  std::set<std::uint64_t> published;
  auto reduced_ready = [&] {
    published.clear();
    for (const auto& key : store.list("r/" + round)) published.insert(parse_key(key).dst);
    published.erase(me);
    return published.size() >= w - 1;
  };
  ctx.clock->wait_until(reduced_ready, ctx.timeout_s, ctx.poll_interval_s, [&] {
    throw StragglerTimeout(detail::missing_ranks(published, w, me),
                            "worker " + std::to_string(me) + " waiting for reduced partitions of round " + round);
  });

  ModelVector out(v.size(), 0.0);
  for (std::size_t j = 0; j < w; ++j) {
    const auto [b, end] = detail::chunk_bounds(v.size(), w, j);
    const ModelVector* src = &mine.values;
    Update fetched;
    if (j != me) {
      fetched = detail::fetch(store, reduced_key(e, i, j));
      src = &fetched.values;
    }
    detail::require_dim(src->size(), end - b, "reduced chunk");
    std::copy(src->begin(), src->end(), out.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return out;
}

}  // namespace faasml
