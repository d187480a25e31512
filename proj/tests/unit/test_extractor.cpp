// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lenctl/error.hpp"
#include "lenctl/extractor.hpp"

using namespace lenctl;

namespace {

std::vector<std::string> words(std::string_view text) { return lex(text); }

ExtractorVocab tiny_vocab() { return ExtractorVocab({"[OOV]", "summary", "length", "80", "90", "between"}); }

}  // namespace

TEST_CASE("value classes") {
  CHECK(kValueClasses == 102);
  CHECK(value_class(std::nullopt) == 0);
  CHECK(value_class(50) == 1);
  CHECK(value_class(150) == 101);
  CHECK(value_class(151) == 0);
  CHECK(*class_value(1) == 50);
  CHECK_FALSE(class_value(0).has_value());
}

TEST_CASE("encode_utterance") {
  Extractor ex(ExtractorVocab(TemplateSet::builtin()), 6);
  Rng rng(1);
  for (double& w : ex.params()[Extractor::kEmb].data) w = rng.normal();
  CHECK(encode_utterance(ex, words("summary summary")) == encode_utterance(ex, words("summary")));
  const auto a = encode_utterance(ex, words("write a summary of 90 tokens"));
  const auto b = encode_utterance(ex, words("tokens 90 of summary a write"));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
  CHECK(encode_utterance(ex, words("Summary")) == encode_utterance(ex, words("summary")));
  CHECK_THROWS_AS(encode_utterance(ex, std::vector<std::string>{}), EmptyInputError);
  // Unknown tokens share the pinned zero embedding; they only dilute the mean.
  const auto oov = encode_utterance(ex, words("zebra quagga"));
  CHECK(std::all_of(oov.begin(), oov.end(), [](double x) { return x == 0.0; }));
}

TEST_CASE("zero parameters predict uniform heads and match at chance") {
  Extractor zero(ExtractorVocab(TemplateSet::builtin()), 8);
  const auto pr = predict(zero, words("Summarize with length 80: the cat sat"));
  for (double p : pr.type_probs) CHECK(p == doctest::Approx(1.0 / 5));
  for (double p : pr.min_probs) CHECK(p == doctest::Approx(1.0 / 102));
  for (double p : pr.max_probs) CHECK(p == doctest::Approx(1.0 / 102));

  // With every head uniform the argmax is class 0 each time: kind MoreThan,
  // both values unset. Only None truths match under the per-kind rule.
  const auto data = synth_extractor_data(3, 1000);
  std::size_t expected = 0;
  for (const auto& u : data) expected += u.truth.kind == ControlKind::None ? 1 : 0;
  CHECK(matching_rate(zero, data) == static_cast<double>(expected) / data.size());
}

TEST_CASE("matching rule") {
  const auto data = synth_extractor_data(4, 300);
  for (const auto& u : data) {
    ExtractorPrediction perfect;
    perfect.kind = u.truth.kind;
    perfect.min_class = value_class(u.truth.l_min);
    perfect.max_class = value_class(u.truth.l_max);
    REQUIRE(prediction_matches(u.truth, perfect));
    REQUIRE(perfect.prompt() == u.truth);
  }
  const ControlKind none[] = {ControlKind::None};
  ExtractorPrediction always_none;
  for (const auto& u : synth_extractor_data(5, 100, none)) REQUIRE(prediction_matches(u.truth, always_none));

  ExtractorPrediction p;
  p.kind = ControlKind::MoreThan;
  p.min_class = value_class(70);
  p.max_class = value_class(120);  // the max head is ignored for MoreThan
  CHECK(prediction_matches(StandardControlPrompt::more_than(70), p));
  CHECK_FALSE(prediction_matches(StandardControlPrompt::less_than(70), p));
  CHECK(p.prompt() == StandardControlPrompt::more_than(70));
  p.kind = ControlKind::None;
  CHECK(p.prompt() == StandardControlPrompt::none());
}

TEST_CASE("extractor gradient matches central differences") {
  Extractor ex(tiny_vocab(), 2);
  CHECK(ex.params().total_size() <= 1000);
  Rng rng(7);
  for (auto& e : ex.params().entries()) {
    for (double& w : e.value.data) w = rng.normal(0.0, 0.5);
  }
  // The OOV row is never read.
  for (double& w : ex.params()[Extractor::kEmb].row(0)) w = 0.0;
  std::vector<AugmentedUtterance> batch(3);
  batch[0].text = words("summary length 80 zebra");
  batch[0].truth = StandardControlPrompt::equal_to(80);
  batch[1].text = words("between 80 90 summary");
  batch[1].truth = StandardControlPrompt::between(80, 90);
  batch[2].text = words("summary please");
  batch[2].truth = StandardControlPrompt::none();
  ParamSet grad = ex.params().zeros_like();
  extractor_loss(ex, batch, &grad);
  const auto numeric = numerical_gradient(ex.params(), [&](const ParamSet& p) {
    return extractor_loss(Extractor::from_params(tiny_vocab(), p), batch, nullptr);
  });
  CHECK(max_relative_error(grad, numeric) <= 1e-4);
}

TEST_CASE("single example is memorized") {
  const auto one = synth_extractor_data(8, 1);
  const auto res = train_extractor(one, one, {.epochs = 200, .batch_size = 1});
  CHECK(extractor_loss(res.model, one, nullptr) < 0.01);
}

TEST_CASE("trained extractor") {
  const auto train = synth_extractor_data(11, 20000);
  const auto val = synth_extractor_data(12, 2000);
  const ExtractorConfig cfg;
  const auto res = train_extractor(train, val, cfg);
  MESSAGE("best validation matching " << res.best_val_match << " at epoch " << res.best_epoch);
  CHECK(res.best_val_match >= 0.99);
  // Loss trend: at most 5% of epochs may rise (each rise halves the rate).
  int rises = 0;
  for (std::size_t i = 1; i < res.train_loss.size(); ++i) rises += res.train_loss[i] > res.train_loss[i - 1];
  CHECK(rises == res.lr_halvings);
  CHECK(rises <= static_cast<int>(0.05 * cfg.epochs));

  {  // agrees with the rule parser on held-out utterances
    const auto held = synth_extractor_data(13, 2000);
    std::size_t agree = 0;
    for (const auto& u : held) {
      const auto pr = predict(res.model, u.text);
      REQUIRE(pr.prompt().valid());
      REQUIRE(std::abs(std::accumulate(pr.type_probs.begin(), pr.type_probs.end(), 0.0) - 1.0) <= 1e-6);
      REQUIRE(std::abs(std::accumulate(pr.min_probs.begin(), pr.min_probs.end(), 0.0) - 1.0) <= 1e-6);
      if (pr.min_class != 0 && pr.max_class != 0) REQUIRE(pr.min_class <= pr.max_class);
      agree += pr.prompt() == parse_utterance(u.text) ? 1 : 0;
    }
    CHECK(static_cast<double>(agree) / held.size() >= 0.99);
  }
  {  // template example
    std::vector<std::string> doc;
    for (int i = 0; i < 200; ++i) doc.push_back("w" + std::to_string(i % 41));
    auto text = words("Need a summary for \" ");
    text.insert(text.end(), doc.begin(), doc.end());
    for (const auto& w : words("\" with length 90")) text.push_back(w);
    const auto pr = predict(res.model, text);
    CHECK(pr.kind == ControlKind::EqualTo);
    CHECK(class_value(pr.min_class) == 90);
    CHECK(class_value(pr.max_class) == 90);
  }
  {  // matching rate ignores dataset order
    auto shuffled = val;
    Rng rng(3);
    rng.shuffle(std::span<AugmentedUtterance>(shuffled));
    CHECK(matching_rate(res.model, shuffled) == matching_rate(res.model, val));
  }
}
