// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "lenctl/error.hpp"
#include "lenctl/io.hpp"

namespace lenctl {

namespace {

constexpr char kMagic[8] = {'L', 'C', 'G', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::uint64_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw FormatError("checkpoint: truncated payload");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, c.metadata.size());
  out += c.metadata;
  put<std::uint64_t>(out, c.arrays.count());
  for (const auto& e : c.arrays.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.shape.size()));
    for (std::size_t d : e.value.shape) put<std::uint64_t>(out, d);
    for (double x : e.value.data) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw FormatError("checkpoint: bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  c.metadata = std::string(in.take(in.get<std::uint64_t>()));
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t r = 0; r < count; ++r) {
    std::string name(in.take(in.get<std::uint32_t>()));
    const auto ndim = in.get<std::uint32_t>();
    std::vector<std::size_t> shape;
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(in.get<std::uint64_t>());
      if (shape.back() != 0 && total > (bytes.size() / 8) / shape.back()) throw FormatError("checkpoint: bad shape");
      total *= shape.back();
    }
    if (c.arrays.contains(name)) throw FormatError("checkpoint: duplicate array " + name);
    Tensor& t = c.arrays.add(std::move(name), std::move(shape));
    for (double& x : t.data) x = std::bit_cast<double>(in.get<std::uint64_t>());
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  atomic_write(path, serialize_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

void add_params(Checkpoint& c, const ParamSet& p) {
  for (const auto& e : p.entries()) {
    if (c.arrays.contains(e.name)) throw FormatError("checkpoint: duplicate array " + e.name);
    c.arrays.add(e.name, e.value.shape) = e.value;
  }
}

ParamSet extract_params(const Checkpoint& c, std::string_view prefix) {
  ParamSet out;
  for (const auto& e : c.arrays.entries()) {
    if (e.name.starts_with(prefix)) out.add(e.name, e.value.shape) = e.value;
  }
  return out;
}

nlohmann::ordered_json to_json(const PolicyConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed", c.embed}, {"hidden", c.hidden}, {"max_len", c.max_len}};
}

nlohmann::ordered_json to_json(const CriticConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed", c.embed}, {"hidden", c.hidden}, {"positions", c.positions}};
}

PolicyConfig policy_config_from(const nlohmann::ordered_json& j) {
  try {
    return {j.at("vocab_size").get<int>(), j.at("embed").get<int>(), j.at("hidden").get<int>(),
            j.at("max_len").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: policy config: ") + e.what());
  }
}

CriticConfig critic_config_from(const nlohmann::ordered_json& j) {
  try {
    return {j.at("vocab_size").get<int>(), j.at("embed").get<int>(), j.at("hidden").get<int>(),
            j.at("positions").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: critic config: ") + e.what());
  }
}

Checkpoint extractor_checkpoint(const Extractor& ex) {
  Checkpoint c;
  nlohmann::ordered_json j;
  j["artifact"] = "extractor";
  j["vocab"] = ex.vocab().tokens();
  j["embed"] = ex.embed();
  j["feature_norm"] = ex.feature_norm();
  c.set_meta(j);
  add_params(c, ex.params());
  return c;
}

Extractor extractor_from(const Checkpoint& c) {
  const auto j = c.meta();
  if (j.value("artifact", "") != "extractor") throw FormatError("checkpoint: not an extractor");
  return Extractor::from_params(ExtractorVocab(j.at("vocab").get<std::vector<std::string>>()),
                                extract_params(c, "extractor."), j.at("feature_norm").get<double>());
}

Checkpoint regressor_checkpoint(const RewardRegressor& r) {
  Checkpoint c;
  nlohmann::ordered_json j;
  j["artifact"] = "reward_regressor";
  j["hidden"] = r.hidden();
  j["max_length"] = r.max_length();
  c.set_meta(j);
  add_params(c, r.params());
  return c;
}

RewardRegressor regressor_from(const Checkpoint& c) {
  const auto j = c.meta();
  if (j.value("artifact", "") != "reward_regressor") throw FormatError("checkpoint: not a reward regressor");
  return RewardRegressor::from_params(extract_params(c, "reward."), j.at("max_length").get<int>());
}

}  // namespace lenctl
