// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "json.hpp"
#include "lenctl/error.hpp"
#include "lenctl/io.hpp"
#include "lenctl/toy_lm.hpp"

namespace lenctl {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  static const char* const kReserved[] = {"[PAD]", "[BOS]", "[EOS]", "[SEP]"};
  if (tokens_.size() < 8) throw ConfigError("vocab needs at least 8 tokens");
  for (int i = 0; i < 4; ++i) {
    if (tokens_[i] != kReserved[i]) throw ConfigError("vocab: reserved token " + std::string(kReserved[i]) + " misplaced");
  }
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw ConfigError("vocab: duplicate token " + tokens_[i]);
    if (tokens_[i].size() > 1 && tokens_[i][0] == 'w' &&
        std::all_of(tokens_[i].begin() + 1, tokens_[i].end(), [](char c) { return c >= '0' && c <= '9'; })) {
      content_.push_back(i);
    }
  }
}

const Vocab& Vocab::standard() {
  static const Vocab v = [] {
    std::vector<std::string> t = {"[PAD]", "[BOS]", "[EOS]", "[SEP]"};
    for (int d = 0; d <= 9; ++d) t.push_back(std::to_string(d));
    for (const char* w : {"more", "less", "than", "equal", "to", "between", "and", "tokens", "none"}) t.push_back(w);
    for (int i = 0; t.size() < 64; ++i) t.push_back("w" + std::to_string(i));
    return Vocab(std::move(t));
  }();
  return v;
}

int Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) throw InvalidTokenError("token not in vocabulary: " + std::string(token));
  return it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.contains(std::string(token)); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw InvalidTokenError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::vector<int> encode_standard_prompt(const Vocab& vocab, const StandardControlPrompt& p) {
  std::vector<int> out;
  for (const auto& word : lex(render_standard_prompt(p))) {
    if (std::isdigit(static_cast<unsigned char>(word[0]))) {
      for (char c : word) out.push_back(vocab.id(std::string(1, c)));
    } else {
      out.push_back(vocab.id(word));
    }
  }
  return out;
}

std::vector<CorpusExample> synth_corpus(std::uint64_t seed, std::size_t n,
                                        std::span<const ControlKind> kinds, const CorpusConfig& cfg,
                                        const TemplateSet& templates) {
  if (kinds.empty()) throw ConfigError("synth_corpus: empty kind set");
  if (cfg.doc_min < 1 || cfg.doc_max < cfg.doc_min || cfg.ref_min < 1 || cfg.ref_max < cfg.ref_min ||
      cfg.ref_max > cfg.doc_max || cfg.topic_size < 1) {
    throw ConfigError("synth_corpus: inconsistent corpus parameters");
  }
  const Vocab& vocab = Vocab::standard();
  const auto content = vocab.content_ids();
  Rng rng(seed);
  std::vector<CorpusExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ControlKind kind = kinds[i * kinds.size() / n];
    CorpusExample ex;

    const int ref_len = std::clamp(static_cast<int>(std::lround(rng.normal(cfg.ref_mean, cfg.ref_sd))),
                                   cfg.ref_min, cfg.ref_max);
    const int doc_len = static_cast<int>(rng.uniform_int(std::max(cfg.doc_min, ref_len), cfg.doc_max));
    std::vector<int> topic(content.begin(), content.end());
    for (int k = 0; k < cfg.topic_size; ++k) {
      std::swap(topic[static_cast<std::size_t>(k)], topic[k + rng.index(topic.size() - k)]);
    }
    topic.resize(static_cast<std::size_t>(cfg.topic_size));
    ex.doc.reserve(static_cast<std::size_t>(doc_len));
    for (int t = 0; t < doc_len; ++t) {
      ex.doc.push_back(rng.uniform() < cfg.topic_prob ? topic[rng.index(topic.size())]
                                                      : content[rng.index(content.size())]);
    }
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, doc_len - ref_len));
    ex.ref.assign(ex.doc.begin() + static_cast<std::ptrdiff_t>(start),
                  ex.doc.begin() + static_cast<std::ptrdiff_t>(start) + ref_len);

    const auto words = vocab.decode(ex.doc);
    const ControlKind one[] = {kind};
    ex.utterance = synthesize_utterance(rng, templates, one, words);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

nlohmann::ordered_json prompt_json(const StandardControlPrompt& p) {
  nlohmann::ordered_json j;
  j["kind"] = kind_name(p.kind);
  j["l_min"] = p.l_min ? nlohmann::ordered_json(*p.l_min) : nlohmann::ordered_json();
  j["l_max"] = p.l_max ? nlohmann::ordered_json(*p.l_max) : nlohmann::ordered_json();
  return j;
}

StandardControlPrompt prompt_from_json(const nlohmann::json& j) {
  StandardControlPrompt p;
  p.kind = kind_from_name(j.at("kind").get<std::string>());
  if (!j.at("l_min").is_null()) p.l_min = j.at("l_min").get<int>();
  if (!j.at("l_max").is_null()) p.l_max = j.at("l_max").get<int>();
  p.validate();
  return p;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, std::span<const CorpusExample> corpus,
                  const Vocab& vocab) {
  std::string text;
  for (const auto& ex : corpus) {
    nlohmann::ordered_json j;
    j["doc"] = vocab.decode(ex.doc);
    j["ref"] = vocab.decode(ex.ref);
    j["utterance"] = ex.utterance.text;
    j["truth"] = prompt_json(ex.utterance.truth);
    text += j.dump();
    text += '\n';
  }
  atomic_write(path, text);
}

std::vector<CorpusExample> read_corpus(const std::filesystem::path& path, const Vocab& vocab) {
  std::vector<CorpusExample> out;
  const UtteranceParser parser(TemplateSet::builtin());
  for (const auto& line : read_lines(path)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    CorpusExample ex;
    ex.doc = vocab.encode(j.at("doc").get<std::vector<std::string>>());
    ex.ref = vocab.encode(j.at("ref").get<std::vector<std::string>>());
    ex.utterance.text = j.at("utterance").get<std::vector<std::string>>();
    ex.utterance.truth = prompt_from_json(j.at("truth"));
    const auto parsed = parser.parse(ex.utterance.text);
    if (parsed.outcome != ParseOutcome::TemplateMatch) {
      throw FormatError(path.string() + ": utterance does not match any template");
    }
    ex.utterance.template_id = parsed.template_id;
    ex.utterance.document_span = parsed.document_span;
    out.push_back(std::move(ex));
  }
  return out;
}

double relevance_proxy(std::span<const int> reference, std::span<const int> a) {
  const auto collect = [](std::span<const int> xs) {
    std::set<int> s;
    for (int x : xs) {
      if (x > Vocab::kSep) s.insert(x);
    }
    return s;
  };
  const auto r = collect(reference);
  const auto g = collect(a);
  if (r.empty() || g.empty()) return r.empty() && g.empty() ? 1.0 : 0.0;
  std::size_t overlap = 0;
  for (int x : g) overlap += r.count(x);
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / g.size();
  const double recall = static_cast<double>(overlap) / r.size();
  return 2.0 * precision * recall / (precision + recall);
}

PolicyInput make_policy_input(const Vocab& vocab, const StandardControlPrompt& p,
                              std::span<const int> doc) {
  PolicyInput in;
  in.prompt = encode_standard_prompt(vocab, p);
  in.prompt.push_back(Vocab::kSep);
  in.doc.assign(doc.begin(), doc.end());
  return in;
}

std::optional<StandardControlPrompt> sft_prompt(ControlKind kind, int ref_length, Rng& rng) {
  if (kind == ControlKind::EqualTo) return StandardControlPrompt::equal_to(ref_length);
  if (kind == ControlKind::None) return StandardControlPrompt::none();
  const ControlKind one[] = {kind};
  for (int attempt = 0; attempt < 64; ++attempt) {
    const auto p = sample_control_prompt(rng, one);
    const bool ok = kind == ControlKind::MoreThan   ? ref_length >= *p.l_min
                    : kind == ControlKind::LessThan ? ref_length <= *p.l_max
                                                    : ref_length >= *p.l_min && ref_length <= *p.l_max;
    if (ok) return p;
  }
  return std::nullopt;
}

std::vector<SftExample> make_sft_examples(std::span<const CorpusExample> corpus, std::uint64_t seed,
                                          const Vocab& vocab) {
  Rng rng(seed);
  std::vector<SftExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) {
    const auto p = sft_prompt(ex.utterance.truth.kind, static_cast<int>(ex.ref.size()), rng);
    if (!p) continue;
    SftExample s;
    s.input = make_policy_input(vocab, *p, ex.doc);
    s.target = ex.ref;
    s.target.push_back(Vocab::kEos);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace lenctl
