// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "lenctl/error.hpp"
#include "lenctl/toy_lm.hpp"

using namespace lenctl;

namespace {

PolicyConfig small_policy_config() { return {.vocab_size = 12, .embed = 5, .hidden = 7, .max_len = 16}; }

Policy random_policy(PolicyConfig cfg, std::uint64_t seed) {
  Policy p(cfg);
  Rng rng(seed);
  p.init_random(rng);
  // Non-zero biases exercise every gradient path.
  for (double& b : p.params()[Policy::kB].data) b = rng.normal(0.0, 0.3);
  for (double& b : p.params()[Policy::kBy].data) b = rng.normal(0.0, 0.3);
  return p;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

}  // namespace

TEST_CASE("vocabulary") {
  const Vocab& v = Vocab::standard();
  CHECK(v.size() == 64);
  CHECK(v.token(Vocab::kPad) == "[PAD]");
  CHECK(v.token(Vocab::kEos) == "[EOS]");
  CHECK(v.token(Vocab::kSep) == "[SEP]");
  CHECK(v.content_ids().size() == 41);
  CHECK_THROWS_AS(v.id("elephant"), InvalidTokenError);
  CHECK_THROWS_AS(Vocab({"a", "b", "c", "d", "e", "f", "g", "h"}), ConfigError);
  CHECK_THROWS_AS(Vocab({"[PAD]", "[BOS]", "[EOS]", "[SEP]"}), ConfigError);
  const auto ids = encode_standard_prompt(v, StandardControlPrompt::between(50, 105));
  CHECK(v.decode(ids) == std::vector<std::string>{"between", "5", "0", "and", "1", "0", "5", "tokens"});
}

TEST_CASE("synthetic corpus") {
  const ControlKind eq[] = {ControlKind::EqualTo};
  const auto corpus = synth_corpus(3, 2000, eq);
  double sum = 0.0;
  for (const auto& ex : corpus) {
    REQUIRE(ex.utterance.truth.kind == ControlKind::EqualTo);
    REQUIRE(ex.doc.size() >= 150);
    REQUIRE(ex.doc.size() <= 400);
    REQUIRE(ex.ref.size() >= 20);
    REQUIRE(ex.ref.size() <= 180);
    REQUIRE(std::search(ex.doc.begin(), ex.doc.end(), ex.ref.begin(), ex.ref.end()) != ex.doc.end());
    REQUIRE(Vocab::standard().encode(ex.utterance.document()) == ex.doc);
    REQUIRE(parse_utterance(ex.utterance.text) == ex.utterance.truth);
    sum += static_cast<double>(ex.ref.size());
  }
  // Clipping at [20, 180] moves the mean by well under the 3 sigma band.
  const double mean = sum / corpus.size();
  CHECK(std::abs(mean - 71.0) <= 3.0 * 28.0 / std::sqrt(2000.0));

  SUBCASE("four bounded kinds split the corpus evenly") {
    const auto multi = synth_corpus(4, 400, kBoundedKinds);
    for (std::size_t i = 0; i < multi.size(); ++i) {
      REQUIRE(multi[i].utterance.truth.kind == kBoundedKinds[i / 100]);
    }
  }
  SUBCASE("JSONL round trip") {
    const auto path = std::filesystem::temp_directory_path() / "lenctl_corpus.jsonl";
    const std::vector<CorpusExample> few(corpus.begin(), corpus.begin() + 20);
    write_corpus(path, few);
    const auto back = read_corpus(path);
    REQUIRE(back.size() == few.size());
    for (std::size_t i = 0; i < few.size(); ++i) {
      CHECK(back[i].doc == few[i].doc);
      CHECK(back[i].ref == few[i].ref);
      CHECK(back[i].utterance.text == few[i].utterance.text);
      CHECK(back[i].utterance.truth == few[i].utterance.truth);
      CHECK(back[i].utterance.template_id == few[i].utterance.template_id);
      CHECK(back[i].utterance.document_span == few[i].utterance.document_span);
    }
    std::filesystem::remove(path);
  }
  SUBCASE("deterministic") {
    const auto again = synth_corpus(3, 50, eq);
    for (std::size_t i = 0; i < again.size(); ++i) REQUIRE(again[i].doc == corpus[i].doc);
  }
}

TEST_CASE("sft prompts") {
  Rng rng(1);
  CHECK(*sft_prompt(ControlKind::EqualTo, 37, rng) == StandardControlPrompt::equal_to(37));
  CHECK(*sft_prompt(ControlKind::None, 37, rng) == StandardControlPrompt::none());
  for (int i = 0; i < 200; ++i) {
    const int len = 50 + i % 101;
    const auto m = sft_prompt(ControlKind::MoreThan, len, rng);
    if (m) REQUIRE(len >= *m->l_min);
    const auto b = sft_prompt(ControlKind::Between, len, rng);
    if (b) REQUIRE((len >= *b->l_min && len <= *b->l_max));
  }
  // A 20-token reference can never exceed a bound drawn from [50, 150].
  CHECK_FALSE(sft_prompt(ControlKind::MoreThan, 20, rng).has_value());
}

TEST_CASE("relevance proxy") {
  const std::vector<int> ref = {30, 31, 32, 33, 31};
  CHECK(relevance_proxy(ref, ref) == 1.0);
  CHECK(relevance_proxy(ref, std::vector<int>{40, 41, Vocab::kEos}) == 0.0);
  std::vector<int> a = {30, 40, 31, Vocab::kEos};
  const double f = relevance_proxy(ref, a);
  // 2 of 3 generated types hit, 2 of 4 reference types recalled.
  CHECK(f == doctest::Approx(2.0 * (2.0 / 3) * 0.5 / (2.0 / 3 + 0.5)));
  std::reverse(a.begin(), a.end());
  CHECK(relevance_proxy(ref, a) == f);
  CHECK(relevance_proxy(ref, std::vector<int>{Vocab::kEos}) == 0.0);
}

TEST_CASE("step distribution") {
  const PolicyInput in{{5, 6, Vocab::kSep}, {7, 8, 9}};
  SUBCASE("zero params give uniform") {
    Policy zero(small_policy_config());
    const auto p = step_distribution(zero, in, std::vector<int>{4, 5});
    for (double x : p) CHECK(x == doctest::Approx(1.0 / 12).epsilon(1e-12));
  }
  SUBCASE("normalized, bounded entropy, shift invariant") {
    Policy pol = random_policy(small_policy_config(), 4);
    std::vector<int> prefix;
    for (int k = 0; k < 10; ++k) {
      const auto p = step_distribution(pol, in, prefix);
      REQUIRE(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
      REQUIRE(entropy(p) <= std::log(12.0) + 1e-12);
      prefix.push_back(4 + k % 8);
    }
    Policy shifted = pol;
    for (double& b : shifted.params()[Policy::kBy].data) b += 3.7;
    const auto p1 = step_distribution(pol, in, prefix);
    const auto p2 = step_distribution(shifted, in, prefix);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));
  }
}

TEST_CASE("sampling and sequence log-probs") {
  const PolicyInput in{{5, 6, Vocab::kSep}, {7, 8, 9}};
  Policy pol = random_policy(small_policy_config(), 5);
  SUBCASE("deterministic and additive") {
    const auto a = sample_sequence(pol, in, 99, 16);
    const auto b = sample_sequence(pol, in, 99, 16);
    CHECK(a.tokens == b.tokens);
    CHECK(a.step_log_probs == b.step_log_probs);
    const double sum = std::accumulate(a.step_log_probs.begin(), a.step_log_probs.end(), 0.0);
    CHECK(std::abs(sum - sequence_log_prob(pol, in, a.tokens)) <= 1e-9);
    CHECK(std::exp(sum) <= 1.0);
    for (double lp : a.step_log_probs) CHECK(lp <= 0.0);
  }
  SUBCASE("length is the position of the first EOS") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto smp = sample_sequence(pol, in, s, 5);
      REQUIRE(smp.length <= 5);
      const auto eos = std::find(smp.tokens.begin(), smp.tokens.end(), Vocab::kEos);
      REQUIRE(smp.length == static_cast<int>(eos - smp.tokens.begin()));
      if (eos == smp.tokens.end()) REQUIRE(smp.length == 5);
    }
  }
  SUBCASE("forced stop") {
    Policy stop = pol;
    stop.params()[Policy::kBy][Vocab::kEos] = 1e4;
    const auto smp = sample_sequence(stop, in, 1, 16);
    CHECK(smp.length == 0);
    CHECK(smp.tokens == std::vector<int>{Vocab::kEos});
  }
  SUBCASE("uniform four-token policy") {
    Policy uni({.vocab_size = 4, .embed = 2, .hidden = 3, .max_len = 3});
    const PolicyInput tiny{{Vocab::kSep}, {}};
    CHECK(sequence_log_prob(uni, tiny, std::vector<int>{0, 1, Vocab::kEos}) == doctest::Approx(std::log(1.0 / 64)));
    CHECK(sequence_log_prob(uni, tiny, std::vector<int>{3, 1, 0}) == doctest::Approx(3.0 * std::log(0.25)));
    CHECK_THROWS_AS(sequence_log_prob(uni, tiny, std::vector<int>{0, 4}), InvalidTokenError);
  }
}

TEST_CASE("SFT cross-entropy gradient matches central differences") {
  const PolicyConfig cfg = small_policy_config();
  Policy pol = random_policy(cfg, 6);
  CHECK(pol.params().total_size() <= 5000);
  const std::vector<SftExample> batch = {
      {{{5, 9, Vocab::kSep}, {7, 8, 8, 10}}, {4, 11, Vocab::kEos}},
      {{{6, Vocab::kSep}, {9}}, {10, 10, 7, 4, Vocab::kEos}},
  };
  ParamSet grad = pol.params().zeros_like();
  sft_loss(pol, batch, &grad);
  const auto numeric = numerical_gradient(pol.params(), [&](const ParamSet& p) {
    return sft_loss(Policy::from_params(p, cfg), batch, nullptr);
  });
  CHECK(max_relative_error(grad, numeric) <= 1e-4);
}

TEST_CASE("SFT training") {
  const ControlKind eq[] = {ControlKind::EqualTo};
  SUBCASE("perplexity drops below the vocabulary size") {
    const auto corpus = synth_corpus(7, 260, eq);
    const auto ex = make_sft_examples(corpus, 7);
    const std::vector<SftExample> train(ex.begin(), ex.begin() + 200), val(ex.begin() + 200, ex.end());
    Policy init;
    Rng rng(1);
    init.init_random(rng);
    const auto res = sft_train(train, val, init, {.epochs = 2});
    CHECK(res.init_val_ppl > 30.0);
    CHECK(res.best_val_ppl < 64.0);
    CHECK(res.best_val_ppl < res.init_val_ppl);
  }
  SUBCASE("single example is memorized") {
    CorpusConfig cc;
    cc.ref_mean = 24;
    cc.ref_sd = 0.1;
    const auto corpus = synth_corpus(8, 1, eq, cc);
    const auto ex = make_sft_examples(corpus, 8);
    Policy init;
    Rng rng(2);
    init.init_random(rng);
    const auto res = sft_train(ex, ex, init, {.lr = 1e-2, .epochs = 300, .batch_size = 1});
    CHECK(greedy_decode(res.policy, ex[0].input, 256) == ex[0].target);
  }
}

TEST_CASE("critic") {
  const CriticConfig cfg{.vocab_size = 12, .embed = 4, .hidden = 6, .positions = 5};
  const std::vector<int> sp = {7, 8, 4, 5, 6, 9, 10};
  const std::vector<int> a = {4, 4, 9, 11, Vocab::kEos};
  SUBCASE("zero params give zero") { CHECK(critic_value(Critic(cfg), sp, a) == 0.0); }
  Critic c(cfg);
  Rng rng(3);
  for (auto& e : c.params().entries()) {
    for (double& w : e.value.data) w = rng.normal(0.0, 0.8);
  }
  SUBCASE("gradient matches central differences") {
    ParamSet grad = c.params().zeros_like();
    const double dv = -1.7;
    critic_backward(c, sp, a, dv, grad);
    const auto numeric = numerical_gradient(c.params(), [&](const ParamSet& p) {
      return dv * critic_value(Critic::from_params(p, cfg), sp, a);
    });
    CHECK(max_relative_error(grad, numeric) <= 1e-4);
  }
}
