// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Learned discriminative prompt extractor: a bag-of-embeddings encoder with a
// type head and two value heads (minimum, maximum).

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lenctl/control_grammar.hpp"
#include "lenctl/tensor.hpp"

namespace lenctl {

// Value class 0 is "unset"; class c >= 1 is the length 49 + c.
inline constexpr int kValueClasses = kMaxTargetLength - kMinTargetLength + 2;
inline constexpr int kTypeClasses = 5;

int value_class(std::optional<int> v);
std::optional<int> class_value(int cls);

// Lower-cased template literals and the numbers 50..150. Id 0 stands for
// every other token and has a fixed zero embedding.
class ExtractorVocab {
 public:
  static constexpr int kOov = 0;

  ExtractorVocab() = default;
  explicit ExtractorVocab(const TemplateSet& templates);
  explicit ExtractorVocab(std::vector<std::string> tokens);  // tokens[0] is the OOV slot

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;  // case-insensitive; kOov when unknown
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ExtractorConfig {
  int embed = 64;
  double lr = 0.05;
  double momentum = 0.9;
  int epochs = 30;
  int batch_size = 32;
  double init_sd = 0.1;
  // Pooled features are rescaled to this L2 norm before the heads.
  double feature_norm = 8.0;
  std::uint64_t seed = 0;
};

class Extractor {
 public:
  enum : std::size_t { kEmb, kTypeW, kTypeB, kMinW, kMinB, kMaxW, kMaxB };

  Extractor(ExtractorVocab vocab, int embed, double feature_norm = 8.0);
  static Extractor from_params(ExtractorVocab vocab, ParamSet params, double feature_norm = 8.0);

  const ExtractorVocab& vocab() const { return vocab_; }
  int embed() const { return static_cast<int>(params_[kTypeW].cols()); }
  double feature_norm() const { return feature_norm_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  ExtractorVocab vocab_;
  ParamSet params_;
  double feature_norm_;
};

// Mean token embedding; throws EmptyInputError on an empty utterance.
std::vector<double> encode_utterance(const Extractor& ex, std::span<const std::string> tokens);

struct ExtractorPrediction {
  ControlKind kind = ControlKind::None;
  // After reordering so that the minimum never exceeds the maximum.
  int min_class = 0;
  int max_class = 0;
  std::vector<double> type_probs, min_probs, max_probs;

  // Decoded standard prompt. None clears both values, MoreThan keeps the
  // minimum, LessThan the maximum; a missing required value borrows the other
  // head, and with neither set the prompt decodes as None.
  StandardControlPrompt prompt() const;
};

ExtractorPrediction predict(const Extractor& ex, std::span<const std::string> tokens);

// Per-example rule keyed on the true kind: None always matches, MoreThan
// compares the minimum, LessThan the maximum, EqualTo and Between both.
bool prediction_matches(const StandardControlPrompt& truth, const ExtractorPrediction& pred);
double matching_rate(const Extractor& ex, std::span<const AugmentedUtterance> data);

// Sum of the three mean cross-entropies; accumulates gradients when non-null.
double extractor_loss(const Extractor& ex, std::span<const AugmentedUtterance> batch, ParamSet* grad);

struct ExtractorTrainResult {
  Extractor model;
  double best_val_match = 0.0;
  int best_epoch = 0;
  int lr_halvings = 0;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_match;   // per epoch
};

// Momentum SGD; the learning rate halves whenever an epoch's mean loss rises.
ExtractorTrainResult train_extractor(std::span<const AugmentedUtterance> train,
                                     std::span<const AugmentedUtterance> val, const ExtractorConfig& cfg,
                                     const TemplateSet& templates = TemplateSet::builtin());
ExtractorTrainResult train_extractor(std::span<const AugmentedUtterance> train,
                                     std::span<const AugmentedUtterance> val, const ExtractorConfig& cfg,
                                     Extractor init);

// Utterances over all kinds with random documents of content words.
std::vector<AugmentedUtterance> synth_extractor_data(std::uint64_t seed, std::size_t n,
                                                     std::span<const ControlKind> kinds = kAllKinds,
                                                     const TemplateSet& templates = TemplateSet::builtin());

}  // namespace lenctl
