// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Blob stores standing in for the storage services that mediate worker
// communication, plus the timing personas (channel profiles) that charge
// simulated workers for each operation.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "faasml/clock.hpp"
#include "faasml/error.hpp"

namespace faasml {

using Bytes = std::string;

inline constexpr std::size_t kMaxKeyBytes = 512;

inline void validate_key(const std::string& key) {
  if (key.empty()) throw Error(ErrorCode::invalid_argument, "blob key must be non-empty");
  if (key.size() > kMaxKeyBytes) {
    throw Error(ErrorCode::invalid_argument, "blob key longer than 512 bytes");
  }
}

/// Key-value blob interface. put is atomic: readers see the old value,
/// absence, or the complete new value. list(prefix) returns every key whose
/// put finished before the listing began, sorted.
class BlobStore {
 public:
  virtual ~BlobStore() = default;
  virtual void put(const std::string& key, Bytes value) = 0;
  virtual std::optional<Bytes> get(const std::string& key) = 0;
  virtual std::vector<std::string> list(const std::string& prefix) = 0;
  /// Deletes every key starting with `prefix`; returns how many went away.
  virtual std::size_t remove_prefix(const std::string& prefix) = 0;
};

/// Thread-safe in-memory backend used by simulate mode.
class MemoryStore final : public BlobStore {
 public:
  void put(const std::string& key, Bytes value) override {
    validate_key(key);
    auto blob = std::make_shared<const Bytes>(std::move(value));
    std::unique_lock lock(mu_);
    items_[key] = std::move(blob);
  }

  std::optional<Bytes> get(const std::string& key) override {
    std::shared_ptr<const Bytes> blob;
    {
      std::shared_lock lock(mu_);
      auto it = items_.find(key);
      if (it == items_.end()) return std::nullopt;
      blob = it->second;
    }
    return *blob;
  }

  std::vector<std::string> list(const std::string& prefix) override {
    std::shared_lock lock(mu_);
    std::vector<std::string> keys;
    for (auto it = items_.lower_bound(prefix); it != items_.end() && it->first.starts_with(prefix); ++it) {
      keys.push_back(it->first);
    }
    return keys;
  }

  std::size_t remove_prefix(const std::string& prefix) override {
    std::unique_lock lock(mu_);
    std::size_t n = 0;
    auto it = items_.lower_bound(prefix);
    while (it != items_.end() && it->first.starts_with(prefix)) {
      it = items_.erase(it);
      ++n;
    }
    return n;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return items_.size();
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const Bytes>, std::less<>> items_;
};

/// One file per key under a root directory; "/" in keys becomes a
/// directory separator. Writes go to a ".tmp" sibling and are renamed into
/// place, so readers never observe a torn value and listings skip them.
class FileSystemStore final : public BlobStore {
 public:
  explicit FileSystemStore(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create store root '" + root_.string() + "': " + ec.message());
  }

  const std::filesystem::path& root() const noexcept { return root_; }

  void put(const std::string& key, Bytes value) override {
    const auto path = path_for(key);
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::io, "cannot create directory for '" + key + "': " + ec.message());
    std::ostringstream tmp_name;
    tmp_name << path.filename().string() << "." << std::this_thread::get_id() << "." << counter_++ << ".tmp";
    const auto tmp = path.parent_path() / tmp_name.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::io, "cannot open '" + tmp.string() + "' for writing");
      out.write(value.data(), static_cast<std::streamsize>(value.size()));
      if (!out) throw Error(ErrorCode::io, "short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorCode::io, "cannot publish '" + key + "'");
    }
  }

  std::optional<Bytes> get(const std::string& key) override {
    const auto path = path_for(key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw Error(ErrorCode::io, "read failed for '" + key + "'");
    return std::move(buf).str();
  }

  std::vector<std::string> list(const std::string& prefix) override {
    std::vector<std::string> keys;
    std::error_code ec;
    if (!std::filesystem::exists(root_, ec)) throw Error(ErrorCode::io, "store root vanished");
    for (auto it = std::filesystem::recursive_directory_iterator(root_, ec);
         !ec && it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
      if (!it->is_regular_file(ec)) continue;
      auto rel = std::filesystem::relative(it->path(), root_, ec).generic_string();
      if (rel.ends_with(".tmp")) continue;
      if (rel.starts_with(prefix)) keys.push_back(std::move(rel));
    }
    std::sort(keys.begin(), keys.end());
    return keys;
  }

  std::size_t remove_prefix(const std::string& prefix) override {
    std::size_t n = 0;
    for (const auto& key : list(prefix)) {
      std::error_code ec;
      if (std::filesystem::remove(root_ / key, ec)) ++n;
    }
    return n;
  }

 private:
  std::filesystem::path path_for(const std::string& key) const {
    validate_key(key);
    if (key.front() == '/' || key.back() == '/' || key.ends_with(".tmp")) {
      throw Error(ErrorCode::invalid_argument, "key '" + key + "' cannot be stored as a file");
    }
    std::size_t start = 0;
    while (start <= key.size()) {
      const auto slash = key.find('/', start);
      const auto seg = key.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
      if (seg.empty() || seg == "." || seg == "..") {
        throw Error(ErrorCode::invalid_argument, "key '" + key + "' has an invalid path segment");
      }
      if (slash == std::string::npos) break;
      start = slash + 1;
    }
    return root_ / key;
  }

  std::filesystem::path root_;
  std::atomic<std::uint64_t> counter_{0};
};

/// Latency/bandwidth persona of a communication channel.
struct ChannelProfile {
  std::string name;
  double bandwidth_MBps = 1.0;
  double latency_s = 0.0;
  double startup_s = 0.0;
  std::optional<std::size_t> max_item_bytes;
  double hourly_price_usd = 0.0;
  /// Extra seconds per MB moved (serialization); a calibration knob.
  double overhead_s_per_MB = 0.0;
  /// Set when a constant was not measured and is borrowed from another service.
  bool estimated = false;

  void validate() const {
    if (!(bandwidth_MBps > 0.0)) throw Error(ErrorCode::invalid_argument, name + ": bandwidth must be > 0");
    if (latency_s < 0.0) throw Error(ErrorCode::invalid_argument, name + ": latency must be >= 0");
    if (startup_s < 0.0) throw Error(ErrorCode::invalid_argument, name + ": startup must be >= 0");
    if (overhead_s_per_MB < 0.0) throw Error(ErrorCode::invalid_argument, name + ": overhead must be >= 0");
  }

  /// Seconds to move `bytes` in one operation (1 MB = 1e6 bytes).
  double transfer_seconds(std::size_t bytes) const { return latency_s + payload_seconds(bytes); }

  /// Bandwidth and overhead part of a transfer, without the latency.
  double payload_seconds(std::size_t bytes) const {
    const double mb = static_cast<double>(bytes) / 1e6;
    return mb / bandwidth_MBps + mb * overhead_s_per_MB;
  }

  /// Zero-cost persona for runs that only need the functional store.
  static ChannelProfile free(std::string name = "free") {
    ChannelProfile p;
    p.name = std::move(name);
    p.bandwidth_MBps = std::numeric_limits<double>::infinity();
    return p;
  }
};

/// Built-in personas. Bandwidths in MB/s, latencies in seconds.
inline const std::vector<ChannelProfile>& builtin_profiles() {
  static const std::vector<ChannelProfile> table = [] {
    std::vector<ChannelProfile> t;
    t.push_back({"s3", 65.0, 8e-2, 0.0, std::nullopt, 0.0, 0.0, false});
    // Memcached takes over two minutes to come up.
    t.push_back({"elasticache_t3", 630.0, 1e-2, 120.0, std::nullopt, 0.034, 0.0, false});
    t.push_back({"elasticache_m5", 1260.0, 1e-2, 120.0, std::nullopt, 0.156, 0.0, true});
    // No measured DynamoDB constants exist; S3 numbers are reused.
    t.push_back({"dynamodb", 65.0, 8e-2, 0.0, std::size_t{400 * 1024}, 0.0, 0.0, true});
    t.push_back({"ebs", 1950.0, 3e-5, 0.0, std::nullopt, 0.0, 0.0, false});
    t.push_back({"net_t2", 120.0, 5e-4, 0.0, std::nullopt, 0.0, 0.0, false});
    t.push_back({"net_c5", 225.0, 1.5e-4, 0.0, std::nullopt, 0.0, 0.0, false});
    // Effective FaaS-to-VM parameter server link: 75 MB in 1.85 s.
    t.push_back({"ps_hybrid", 75.0 / 1.85, 1.5e-4, 0.0, std::nullopt, 0.0, 0.0, true});
    return t;
  }();
  return table;
}

inline ChannelProfile lookup_profile(const std::string& name) {
  for (const auto& p : builtin_profiles()) {
    if (p.name == name) return p;
  }
  std::string names;
  for (const auto& p : builtin_profiles()) names += (names.empty() ? "" : ", ") + p.name;
  throw Error(ErrorCode::invalid_argument, "unknown channel '" + name + "' (known: " + names + ")");
}

/// Wraps a store so every operation charges the calling worker's clock:
/// latency plus bytes/bandwidth for put and get, latency alone for list
/// and delete. Bytes pass through unchanged. One wrapper per worker; the
/// wrapped store is shared.
class ProfiledStore final : public BlobStore {
 public:
  ProfiledStore(BlobStore& inner, ChannelProfile profile, WorkerClock& clock)
      : inner_(&inner), profile_(std::move(profile)), clock_(&clock) {
    profile_.validate();
  }

  void put(const std::string& key, Bytes value) override {
    if (profile_.max_item_bytes && value.size() > *profile_.max_item_bytes) {
      throw Error(ErrorCode::payload_too_large, profile_.name + " item limit is " +
                                                    std::to_string(*profile_.max_item_bytes) + " bytes, got " +
                                                    std::to_string(value.size()));
    }
    charge(profile_.transfer_seconds(value.size()));
    inner_->put(key, std::move(value));
    clock_->notify();
  }

  std::optional<Bytes> get(const std::string& key) override {
    charge(profile_.latency_s);
    auto v = inner_->get(key);
    if (v) charge(profile_.payload_seconds(v->size()));
    return v;
  }

  std::vector<std::string> list(const std::string& prefix) override {
    charge(profile_.latency_s);
    return inner_->list(prefix);
  }

  std::size_t remove_prefix(const std::string& prefix) override {
    charge(profile_.latency_s);
    const auto n = inner_->remove_prefix(prefix);
    clock_->notify();
    return n;
  }

  const ChannelProfile& profile() const noexcept { return profile_; }
  double total_charged() const noexcept { return charged_; }
  std::size_t operations() const noexcept { return ops_; }

 private:
  void charge(double seconds) {
    charged_ += seconds;
    ++ops_;
    clock_->charge(seconds);
  }

  BlobStore* inner_;
  ChannelProfile profile_;
  WorkerClock* clock_;
  double charged_ = 0.0;
  std::size_t ops_ = 0;
};

inline std::unique_ptr<BlobStore> with_profile(BlobStore& store, const ChannelProfile& profile, WorkerClock& clock) {
  return std::make_unique<ProfiledStore>(store, profile, clock);
}

enum class StoreOp { put, get, list, remove };

struct StoreEvent {
  std::uint64_t seq = 0;
  std::size_t rank = 0;
  StoreOp op = StoreOp::put;
  std::string key;
  std::size_t bytes = 0;
};

/// Shared, ordered log of store operations from every worker.
class StoreTrace {
 public:
  void record(std::size_t rank, StoreOp op, const std::string& key, std::size_t bytes) {
    std::lock_guard lock(mu_);
    events_.push_back({events_.size(), rank, op, key, bytes});
  }
  std::vector<StoreEvent> events() const {
    std::lock_guard lock(mu_);
    return events_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<StoreEvent> events_;
};

/// Per-worker instrumentation: counts remote transfers (put/get that moved
/// a value) and bytes, optionally logging into a shared trace.
class CountingStore final : public BlobStore {
 public:
  CountingStore(BlobStore& inner, std::size_t rank = 0, StoreTrace* trace = nullptr)
      : inner_(&inner), rank_(rank), trace_(trace) {}

  void put(const std::string& key, Bytes value) override {
    const auto n = value.size();
    inner_->put(key, std::move(value));
    ++puts_;
    bytes_written_ += n;
    max_blob_ = std::max(max_blob_, n);
    log(StoreOp::put, key, n);
  }

  std::optional<Bytes> get(const std::string& key) override {
    auto v = inner_->get(key);
    if (v) {
      ++gets_;
      bytes_read_ += v->size();
      max_blob_ = std::max(max_blob_, v->size());
    }
    log(StoreOp::get, key, v ? v->size() : 0);
    return v;
  }

  std::vector<std::string> list(const std::string& prefix) override {
    ++lists_;
    log(StoreOp::list, prefix, 0);
    return inner_->list(prefix);
  }

  std::size_t remove_prefix(const std::string& prefix) override {
    log(StoreOp::remove, prefix, 0);
    return inner_->remove_prefix(prefix);
  }

  std::size_t transfers() const noexcept { return puts_ + gets_; }
  std::size_t puts() const noexcept { return puts_; }
  std::size_t gets() const noexcept { return gets_; }
  std::size_t lists() const noexcept { return lists_; }
  std::size_t bytes_written() const noexcept { return bytes_written_; }
  std::size_t bytes_read() const noexcept { return bytes_read_; }
  std::size_t max_blob_bytes() const noexcept { return max_blob_; }

 private:
  void log(StoreOp op, const std::string& key, std::size_t bytes) {
    if (trace_) trace_->record(rank_, op, key, bytes);
  }

  BlobStore* inner_;
  std::size_t rank_;
  StoreTrace* trace_;
  std::size_t puts_ = 0;
  std::size_t gets_ = 0;
  std::size_t lists_ = 0;
  std::size_t bytes_written_ = 0;
  std::size_t bytes_read_ = 0;
  std::size_t max_blob_ = 0;
};

}  // namespace faasml
