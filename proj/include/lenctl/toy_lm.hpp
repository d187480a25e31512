// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// The desk-scale generation task: a fixed toy vocabulary, a synthetic corpus of
// (document, reference span, user utterance) triples, an Elman-cell policy with
// hand-written backpropagation, a small critic and supervised fine-tuning.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lenctl/control_grammar.hpp"
#include "lenctl/rng.hpp"
#include "lenctl/tensor.hpp"

namespace lenctl {

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;

  // The first four tokens must be [PAD] [BOS] [EOS] [SEP].
  explicit Vocab(std::vector<std::string> tokens);
  // 64 tokens: reserved, digits, prompt words, then 41 content words w0..w40.
  static const Vocab& standard();

  int size() const { return static_cast<int>(tokens_.size()); }
  // Throws InvalidTokenError for unknown tokens.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  // Ids that documents are made of.
  std::span<const int> content_ids() const { return content_; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> content_;
};

// Rendered standard prompt with every number split into digit tokens, e.g.
// "equal to 1 0 0 tokens". No trailing [SEP].
std::vector<int> encode_standard_prompt(const Vocab& vocab, const StandardControlPrompt& p);

struct CorpusConfig {
  int doc_min = 150;
  int doc_max = 400;
  double ref_mean = 71.0;
  double ref_sd = 28.0;
  int ref_min = 20;
  int ref_max = 180;
  // Each document favours a few topic words.
  int topic_size = 8;
  double topic_prob = 0.8;
};

struct CorpusExample {
  std::vector<int> doc;
  std::vector<int> ref;  // contiguous span of doc
  AugmentedUtterance utterance;
};

// With several kinds the corpus is cut into equal consecutive parts, one per
// kind in the given order.
std::vector<CorpusExample> synth_corpus(std::uint64_t seed, std::size_t n,
                                        std::span<const ControlKind> kinds,
                                        const CorpusConfig& cfg = {},
                                        const TemplateSet& templates = TemplateSet::builtin());

// {"doc": [...], "ref": [...], "utterance": [...], "truth": {...}} per line.
void write_corpus(const std::filesystem::path& path, std::span<const CorpusExample> corpus,
                  const Vocab& vocab = Vocab::standard());
std::vector<CorpusExample> read_corpus(const std::filesystem::path& path,
                                       const Vocab& vocab = Vocab::standard());

// Set-based unigram F1 of `a` against `reference`; special tokens are ignored.
double relevance_proxy(std::span<const int> reference, std::span<const int> a);

// What the policy conditions on: prompt tokens ending in [SEP], and the
// document, which enters as an averaged embedding.
struct PolicyInput {
  std::vector<int> prompt;
  std::vector<int> doc;
};

PolicyInput make_policy_input(const Vocab& vocab, const StandardControlPrompt& p,
                              std::span<const int> doc);

struct PolicyConfig {
  int vocab_size = 64;
  int embed = 16;
  int hidden = 32;
  // Scale of the elapsed-length input; also the default generation cap.
  int max_len = 256;
};

// h_t = tanh(Wx e(x_t) + Wh h_{t-1} + Wd c + Wc g_t + wt tau_t + b),
// logits = Wy h + by. c is the mean document embedding, g_t the state after
// [SEP] (zero while reading the prompt), tau_t the generated count / max_len.
class Policy {
 public:
  enum : std::size_t { kEmb, kWx, kWh, kWd, kWc, kWt, kB, kWy, kBy };

  explicit Policy(PolicyConfig cfg = {});
  static Policy from_params(ParamSet params, PolicyConfig cfg);
  void init_random(Rng& rng);

  const PolicyConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  PolicyConfig cfg_;
  ParamSet params_;
};

// Teacher-forced pass over generated tokens `a`; one output step per token.
struct PolicyTrace {
  std::size_t steps = 0;        // output steps (= |a|)
  std::size_t prompt_len = 0;   // includes [SEP]
  std::vector<double> cdoc;     // embed
  std::vector<double> hidden;   // (prompt_len + steps - 1) x hidden
  std::vector<double> probs;    // steps x V
  std::vector<double> token_log_probs;  // log p(a_k) per step
};

PolicyTrace policy_forward(const Policy& policy, const PolicyInput& in, std::span<const int> a);
// Accumulates into `grad` given d(loss)/d(logits), steps x V.
void policy_backward(const Policy& policy, const PolicyInput& in, std::span<const int> a,
                     const PolicyTrace& trace, std::span<const double> dlogits, ParamSet& grad);

std::vector<double> step_distribution(const Policy& policy, const PolicyInput& in,
                                      std::span<const int> prefix);

struct GenerationSample {
  std::vector<int> tokens;   // ends in [EOS] unless cut at max_len
  int length = 0;            // tokens before [EOS]
  std::vector<double> step_log_probs;
  std::vector<double> step_probs;  // steps x V, filled when requested
  double relevance = 0.0;
};

GenerationSample sample_sequence(const Policy& policy, const PolicyInput& in, std::uint64_t seed,
                                 int max_len, bool keep_distributions = false);
std::vector<int> greedy_decode(const Policy& policy, const PolicyInput& in, int max_len);
// Sum of per-step log-probabilities, the [EOS] step included.
double sequence_log_prob(const Policy& policy, const PolicyInput& in, std::span<const int> a);

struct SftExample {
  PolicyInput input;
  std::vector<int> target;  // reference followed by [EOS]
};

// Prompt shown during SFT. EqualTo uses the reference length. Other kinds
// draw bounds in [50, 150] until the reference length satisfies them; returns
// nothing if 64 draws fail.
std::optional<StandardControlPrompt> sft_prompt(ControlKind kind, int ref_length, Rng& rng);
std::vector<SftExample> make_sft_examples(std::span<const CorpusExample> corpus, std::uint64_t seed,
                                          const Vocab& vocab = Vocab::standard());

// Mean token cross-entropy; accumulates its gradient when `grad` is non-null.
double sft_loss(const Policy& policy, std::span<const SftExample> batch, ParamSet* grad);
double perplexity(const Policy& policy, std::span<const SftExample> data);

struct SftConfig {
  double lr = 3e-3;
  int epochs = 12;
  int batch_size = 16;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

struct SftResult {
  Policy policy;
  double init_val_ppl = 0.0;
  double best_val_ppl = 0.0;
  int best_epoch = 0;
  std::vector<double> val_ppl;
};

SftResult sft_train(std::span<const SftExample> train, std::span<const SftExample> val,
                    Policy init, const SftConfig& cfg);

struct CriticConfig {
  int vocab_size = 64;
  int embed = 16;
  int hidden = 32;
  int positions = 12;
};

// V(s', a): position-weighted sum of prompt embeddings and the mean embedding
// of the generated tokens, through one tanh layer. The document never enters.
class Critic {
 public:
  enum : std::size_t { kEmb, kPos, kW1, kB1, kW2, kB2 };

  explicit Critic(CriticConfig cfg = {});
  static Critic from_params(ParamSet params, CriticConfig cfg);
  void init_random(Rng& rng);

  const CriticConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  CriticConfig cfg_;
  ParamSet params_;
};

double critic_value(const Critic& critic, std::span<const int> s_prime, std::span<const int> a);
// Returns the value and accumulates dv * d(value)/d(phi) into `grad`.
double critic_backward(const Critic& critic, std::span<const int> s_prime, std::span<const int> a,
                       double dv, ParamSet& grad);

}  // namespace lenctl
