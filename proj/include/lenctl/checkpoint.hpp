// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary container for named float64 arrays plus JSON
// metadata. Little-endian layout:
//
//   "LCGCKPT\0"  u32 version  u64 meta_len  meta (UTF-8 JSON)
//   u64 record_count, then per record:
//   u32 name_len  name  u32 ndim  u64 dims[ndim]  f64 data[prod(dims)]

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "lenctl/extractor.hpp"
#include "lenctl/reward.hpp"
#include "lenctl/tensor.hpp"
#include "lenctl/toy_lm.hpp"

namespace lenctl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata = "{}";  // kept verbatim so a load/save cycle is exact
  ParamSet arrays;

  nlohmann::ordered_json meta() const { return nlohmann::ordered_json::parse(metadata); }
  void set_meta(const nlohmann::ordered_json& j) { metadata = j.dump(); }
  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& c);
// Throws FormatError on a bad magic, version or truncated payload.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);  // atomic
Checkpoint load_checkpoint(const std::filesystem::path& path);  // DependencyError if missing

// Arrays are stored under their model names ("policy.*", "critic.*", ...).
void add_params(Checkpoint& c, const ParamSet& p);
// The entries whose names start with `prefix`, in stored order.
ParamSet extract_params(const Checkpoint& c, std::string_view prefix);

nlohmann::ordered_json to_json(const PolicyConfig& c);
nlohmann::ordered_json to_json(const CriticConfig& c);
PolicyConfig policy_config_from(const nlohmann::ordered_json& j);
CriticConfig critic_config_from(const nlohmann::ordered_json& j);

Checkpoint extractor_checkpoint(const Extractor& ex);
Extractor extractor_from(const Checkpoint& c);
Checkpoint regressor_checkpoint(const RewardRegressor& r);
RewardRegressor regressor_from(const Checkpoint& c);

}  // namespace lenctl
