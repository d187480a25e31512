// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Length-control instructions: the five standard control prompts, the
// augmented template grammar used to synthesize user utterances, and an exact
// rule-based parser from utterances back to standard prompts.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lenctl/rng.hpp"

namespace lenctl {

enum class ControlKind : std::uint8_t { MoreThan, LessThan, EqualTo, Between, None };

inline constexpr std::array<ControlKind, 5> kAllKinds = {
    ControlKind::MoreThan, ControlKind::LessThan, ControlKind::EqualTo,
    ControlKind::Between, ControlKind::None};
inline constexpr std::array<ControlKind, 4> kBoundedKinds = {
    ControlKind::MoreThan, ControlKind::LessThan, ControlKind::EqualTo,
    ControlKind::Between};

// Sampled target lengths are uniform integers in this closed range.
inline constexpr int kMinTargetLength = 50;
inline constexpr int kMaxTargetLength = 150;

std::string_view kind_name(ControlKind kind);  // "more_than", ...
ControlKind kind_from_name(std::string_view name);
// Number of length values the kind carries: 0, 1 or 2.
int kind_arity(ControlKind kind);

struct StandardControlPrompt {
  ControlKind kind = ControlKind::None;
  std::optional<int> l_min;
  std::optional<int> l_max;

  static StandardControlPrompt more_than(int n) { return {ControlKind::MoreThan, n, {}}; }
  static StandardControlPrompt less_than(int n) { return {ControlKind::LessThan, {}, n}; }
  static StandardControlPrompt equal_to(int n) { return {ControlKind::EqualTo, n, n}; }
  static StandardControlPrompt between(int lo, int hi) { return {ControlKind::Between, lo, hi}; }
  static StandardControlPrompt none() { return {}; }

  bool valid() const;
  // Throws InvalidPromptError naming the violated invariant.
  void validate() const;
  // Values in placeholder order: [] / [l_min] / [l_max] / [l_min, l_max].
  std::vector<int> bounds() const;
  // Inverse of bounds(); Between bounds must already be sorted.
  static StandardControlPrompt from_bounds(ControlKind kind, std::span<const int> bounds);

  bool operator==(const StandardControlPrompt&) const = default;
};

// "more than 80 tokens", "between 50 and 150 tokens", "none", ...
std::string render_standard_prompt(const StandardControlPrompt& p);
StandardControlPrompt parse_standard_prompt(std::string_view text);

// Splits on whitespace and separates punctuation (":", quotes, "?", "*", ...)
// into single-character tokens. Case is preserved.
std::vector<std::string> lex(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

class PromptTemplate {
 public:
  PromptTemplate(int id, ControlKind kind, std::string pattern);

  int id() const { return id_; }
  ControlKind kind() const { return kind_; }
  const std::string& pattern() const { return pattern_; }
  // Lexed pattern; "*" is the document slot and "?" a length slot.
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t document_slot() const { return doc_slot_; }
  std::size_t literal_count() const { return tokens_.size() - 1 - kind_arity(kind_); }

 private:
  int id_;
  ControlKind kind_;
  std::string pattern_;
  std::vector<std::string> tokens_;
  std::size_t doc_slot_ = 0;
};

class TemplateSet {
 public:
  // Parses `kind<TAB>pattern` lines; '#' starts a comment line.
  static TemplateSet parse(std::string_view text);
  static TemplateSet load(const std::filesystem::path& path);
  // The template set shipped in data/templates.tsv, compiled in.
  static const TemplateSet& builtin();

  const std::vector<PromptTemplate>& templates() const { return templates_; }
  std::vector<const PromptTemplate*> of_kind(ControlKind kind) const;
  const PromptTemplate& by_id(int id) const;
  std::size_t size() const { return templates_.size(); }

 private:
  std::vector<PromptTemplate> templates_;
};

struct DocumentSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last document token
  bool operator==(const DocumentSpan&) const = default;
};

struct AugmentedUtterance {
  std::vector<std::string> text;
  DocumentSpan document_span;
  StandardControlPrompt truth;
  int template_id = -1;

  std::span<const std::string> document() const {
    return std::span<const std::string>(text).subspan(document_span.begin,
                                                     document_span.end - document_span.begin);
  }
};

// Substitutes `bounds` into the length slots and `doc` into the document slot.
AugmentedUtterance expand_template(const PromptTemplate& t, std::span<const int> bounds,
                                   std::span<const std::string> doc);

enum class ParseOutcome : std::uint8_t {
  TemplateMatch,       // matched a shipped template
  NoConstraint,        // no template and no length phrase
  UnrecognizedPhrase,  // a length phrase outside every template family
};

struct ParseResult {
  StandardControlPrompt prompt;
  ParseOutcome outcome = ParseOutcome::NoConstraint;
  int template_id = -1;
  DocumentSpan document_span;
};

// Deterministic matcher over a template set. Among matching templates the ones
// with the most literal tokens win; disagreeing winners, or a second length
// phrase inside the document span, raise AmbiguousConstraintError.
class UtteranceParser {
 public:
  explicit UtteranceParser(const TemplateSet& templates) : templates_(&templates) {}

  ParseResult parse(std::span<const std::string> tokens) const;
  ParseResult parse(std::string_view text) const;

 private:
  const TemplateSet* templates_;
};

StandardControlPrompt parse_utterance(std::string_view text);
StandardControlPrompt parse_utterance(std::span<const std::string> tokens);

// Uniform kind over `kinds`, bounds i.i.d. uniform in [50, 150], Between sorted.
StandardControlPrompt sample_control_prompt(Rng& rng, std::span<const ControlKind> kinds);
StandardControlPrompt sample_control_prompt(std::uint64_t seed, std::span<const ControlKind> kinds);

// A sampled prompt rendered through a uniformly chosen template of its kind.
AugmentedUtterance synthesize_utterance(Rng& rng, const TemplateSet& templates,
                                        std::span<const ControlKind> kinds,
                                        std::span<const std::string> doc);

}  // namespace lenctl
