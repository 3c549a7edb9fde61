// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Worker checkpoint written before a function instance runs out of time.
//
//   "LMCK" | u8 version=1 | u32 worker_id | u32 epoch | u32 iter
//   | UpdateBlob model | u8 n_extra | n_extra x UpdateBlob
//
// Integers little-endian. Extras carry optimizer state (ADMM dual and
// consensus); k-means and SGD store none.

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "faasml/collectives.hpp"
#include "faasml/error.hpp"
#include "faasml/model_core.hpp"

namespace faasml {

inline constexpr std::string_view kCheckpointMagic = "LMCK";
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t worker_id = 0;
  std::uint32_t epoch = 0;
  std::uint32_t iter = 0;
  ModelVector model;
  std::vector<ModelVector> extras;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline Bytes encode_checkpoint(const Checkpoint& c) {
  if (c.extras.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw Error(ErrorCode::invalid_argument, "too many optimizer-state blobs for a checkpoint");
  }
  Bytes out(kCheckpointMagic);
  wire::put_u8(out, kCheckpointVersion);
  wire::put_u32(out, c.worker_id);
  wire::put_u32(out, c.epoch);
  wire::put_u32(out, c.iter);
  append_update(out, c.model, 1.0);
  wire::put_u8(out, static_cast<std::uint8_t>(c.extras.size()));
  for (const auto& e : c.extras) append_update(out, e, 1.0);
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  try {
    wire::Reader in(bytes, "checkpoint");
    if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) {
      throw Error(ErrorCode::checkpoint_corrupt, "bad checkpoint magic");
    }
    if (const auto v = in.u8(); v != kCheckpointVersion) {
      throw Error(ErrorCode::checkpoint_corrupt, "unsupported checkpoint version " + std::to_string(v));
    }
    Checkpoint c;
    c.worker_id = in.u32();
    c.epoch = in.u32();
    c.iter = in.u32();
    c.model = read_update(in).values;
    const auto n = in.u8();
    for (std::uint8_t i = 0; i < n; ++i) c.extras.push_back(read_update(in).values);
    if (in.remaining() != 0) throw Error(ErrorCode::checkpoint_corrupt, "trailing bytes after checkpoint");
    return c;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::checkpoint_corrupt) throw;
    throw Error(ErrorCode::checkpoint_corrupt, std::string("unreadable checkpoint: ") + e.what());
  }
}

}  // namespace faasml
