// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/control_grammar.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "lenctl/error.hpp"

namespace lenctl {

extern const char* const kBuiltinTemplates;

namespace {

constexpr std::string_view kPunctuation = ":\"',.;!?*()";

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ascii_lower(a[i]) != ascii_lower(b[i])) return false;
  }
  return true;
}

// Digit strings only; number words are outside the grammar.
std::optional<int> parse_count(std::string_view tok) {
  if (tok.empty() || tok.size() > 9) return std::nullopt;
  if (!std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  int v = 0;
  std::from_chars(tok.data(), tok.data() + tok.size(), v);
  return v;
}

bool contains_word(std::span<const std::string_view> words, std::string_view tok) {
  return std::any_of(words.begin(), words.end(), [&](std::string_view w) { return iequals(w, tok); });
}

constexpr std::array<std::string_view, 17> kCueWords = {
    "tokens", "token", "words", "word", "length", "than", "to", "exactly", "least",
    "most", "between", "over", "under", "within", "exceeding", "from", "of"};
constexpr std::array<std::string_view, 5> kLinkWords = {"and", "to", "-", "at", "most"};

// Number of distinct length phrases among tokens[begin, end). A number counts
// when a cue word touches it; numbers joined only by link words ("50 and 150",
// "at least 50 and at most 80") form a single phrase.
std::size_t count_length_phrases(std::span<const std::string> tokens, std::size_t begin,
                                 std::size_t end) {
  std::size_t phrases = 0;
  std::optional<std::size_t> last_number;
  for (std::size_t i = begin; i < end; ++i) {
    if (!parse_count(tokens[i])) continue;
    const bool cue_before = i > begin && contains_word(kCueWords, tokens[i - 1]);
    const bool cue_after = i + 1 < end && contains_word(kCueWords, tokens[i + 1]);
    if (!cue_before && !cue_after) continue;
    bool linked = false;
    if (last_number) {
      linked = true;
      for (std::size_t j = *last_number + 1; j < i; ++j) {
        if (!contains_word(kLinkWords, tokens[j])) {
          linked = false;
          break;
        }
      }
      linked = linked && i > *last_number + 1;
    }
    if (!linked) ++phrases;
    last_number = i;
  }
  return phrases;
}

std::string describe(const StandardControlPrompt& p) { return render_standard_prompt(p); }

}  // namespace

std::string_view kind_name(ControlKind kind) {
  switch (kind) {
    case ControlKind::MoreThan: return "more_than";
    case ControlKind::LessThan: return "less_than";
    case ControlKind::EqualTo: return "equal_to";
    case ControlKind::Between: return "between";
    case ControlKind::None: return "none";
  }
  return "none";
}

ControlKind kind_from_name(std::string_view name) {
  for (ControlKind k : kAllKinds) {
    if (kind_name(k) == name) return k;
  }
  throw FormatError("unknown control kind: " + std::string(name));
}

int kind_arity(ControlKind kind) {
  switch (kind) {
    case ControlKind::None: return 0;
    case ControlKind::Between: return 2;
    default: return 1;
  }
}

bool StandardControlPrompt::valid() const {
  const auto positive = [](const std::optional<int>& v) { return v && *v > 0; };
  switch (kind) {
    case ControlKind::MoreThan: return positive(l_min) && !l_max;
    case ControlKind::LessThan: return positive(l_max) && !l_min;
    case ControlKind::EqualTo: return positive(l_min) && positive(l_max) && *l_min == *l_max;
    case ControlKind::Between: return positive(l_min) && positive(l_max) && *l_min <= *l_max;
    case ControlKind::None: return !l_min && !l_max;
  }
  return false;
}

void StandardControlPrompt::validate() const {
  if (!valid()) {
    std::ostringstream os;
    os << "invalid " << kind_name(kind) << " prompt (l_min="
       << (l_min ? std::to_string(*l_min) : "unset")
       << ", l_max=" << (l_max ? std::to_string(*l_max) : "unset") << ")";
    throw InvalidPromptError(os.str());
  }
}

std::vector<int> StandardControlPrompt::bounds() const {
  switch (kind) {
    case ControlKind::MoreThan: return {*l_min};
    case ControlKind::LessThan: return {*l_max};
    case ControlKind::EqualTo: return {*l_min};
    case ControlKind::Between: return {*l_min, *l_max};
    case ControlKind::None: return {};
  }
  return {};
}

StandardControlPrompt StandardControlPrompt::from_bounds(ControlKind kind,
                                                         std::span<const int> b) {
  if (static_cast<int>(b.size()) != kind_arity(kind)) {
    throw TemplateArityError("expected " + std::to_string(kind_arity(kind)) + " length values for " +
                             std::string(kind_name(kind)) + ", got " + std::to_string(b.size()));
  }
  StandardControlPrompt p;
  switch (kind) {
    case ControlKind::MoreThan: p = more_than(b[0]); break;
    case ControlKind::LessThan: p = less_than(b[0]); break;
    case ControlKind::EqualTo: p = equal_to(b[0]); break;
    case ControlKind::Between: p = between(b[0], b[1]); break;
    case ControlKind::None: p = none(); break;
  }
  p.validate();
  return p;
}

std::string render_standard_prompt(const StandardControlPrompt& p) {
  p.validate();
  switch (p.kind) {
    case ControlKind::MoreThan: return "more than " + std::to_string(*p.l_min) + " tokens";
    case ControlKind::LessThan: return "less than " + std::to_string(*p.l_max) + " tokens";
    case ControlKind::EqualTo: return "equal to " + std::to_string(*p.l_min) + " tokens";
    case ControlKind::Between:
      return "between " + std::to_string(*p.l_min) + " and " + std::to_string(*p.l_max) + " tokens";
    case ControlKind::None: return "none";
  }
  return "none";
}

StandardControlPrompt parse_standard_prompt(std::string_view text) {
  const auto t = lex(text);
  const auto word = [&](std::size_t i, std::string_view w) { return i < t.size() && iequals(t[i], w); };
  const auto num = [&](std::size_t i) -> int {
    if (i >= t.size()) throw InvalidPromptError("truncated standard prompt: " + std::string(text));
    const auto v = parse_count(t[i]);
    if (!v || *v <= 0) throw InvalidPromptError("expected a positive length in: " + std::string(text));
    return *v;
  };
  StandardControlPrompt p;
  if (t.size() == 1 && word(0, "none")) {
    p = StandardControlPrompt::none();
  } else if (t.size() == 4 && word(0, "more") && word(1, "than") && word(3, "tokens")) {
    p = StandardControlPrompt::more_than(num(2));
  } else if (t.size() == 4 && word(0, "less") && word(1, "than") && word(3, "tokens")) {
    p = StandardControlPrompt::less_than(num(2));
  } else if (t.size() == 4 && word(0, "equal") && word(1, "to") && word(3, "tokens")) {
    p = StandardControlPrompt::equal_to(num(2));
  } else if (t.size() == 5 && word(0, "between") && word(2, "and") && word(4, "tokens")) {
    p = StandardControlPrompt::between(num(1), num(3));
  } else {
    throw InvalidPromptError("not a standard control prompt: " + std::string(text));
  }
  p.validate();
  return p;
}

std::vector<std::string> lex(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      flush();
    } else if (kPunctuation.find(c) != std::string_view::npos) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

PromptTemplate::PromptTemplate(int id, ControlKind kind, std::string pattern)
    : id_(id), kind_(kind), pattern_(std::move(pattern)), tokens_(lex(pattern_)) {
  std::size_t docs = 0;
  int lengths = 0;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == "*") {
      ++docs;
      doc_slot_ = i;
    } else if (tokens_[i] == "?") {
      ++lengths;
    }
  }
  if (docs != 1) {
    throw FormatError("template " + std::to_string(id) + " needs exactly one document slot: " + pattern_);
  }
  if (lengths != kind_arity(kind)) {
    throw TemplateArityError("template " + std::to_string(id) + " has " + std::to_string(lengths) +
                             " length slots but " + std::string(kind_name(kind)) + " needs " +
                             std::to_string(kind_arity(kind)));
  }
}

TemplateSet TemplateSet::parse(std::string_view text) {
  TemplateSet set;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("template line without a tab: " + line);
    const ControlKind kind = kind_from_name(line.substr(0, tab));
    set.templates_.emplace_back(static_cast<int>(set.templates_.size()), kind, line.substr(tab + 1));
  }
  if (set.templates_.empty()) throw FormatError("template set is empty");
  return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const TemplateSet& TemplateSet::builtin() {
  static const TemplateSet set = parse(kBuiltinTemplates);
  return set;
}

std::vector<const PromptTemplate*> TemplateSet::of_kind(ControlKind kind) const {
  std::vector<const PromptTemplate*> out;
  for (const auto& t : templates_) {
    if (t.kind() == kind) out.push_back(&t);
  }
  return out;
}

const PromptTemplate& TemplateSet::by_id(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= templates_.size()) {
    throw FormatError("unknown template id " + std::to_string(id));
  }
  return templates_[static_cast<std::size_t>(id)];
}

AugmentedUtterance expand_template(const PromptTemplate& t, std::span<const int> bounds,
                                   std::span<const std::string> doc) {
  if (static_cast<int>(bounds.size()) != kind_arity(t.kind())) {
    throw TemplateArityError("template " + std::to_string(t.id()) + " takes " +
                             std::to_string(kind_arity(t.kind())) + " length values, got " +
                             std::to_string(bounds.size()));
  }
  if (t.kind() == ControlKind::Between && bounds[0] > bounds[1]) {
    throw TemplateArityError("between bounds must be ascending");
  }
  if (doc.empty()) throw EmptyInputError("document is empty");

  AugmentedUtterance u;
  u.truth = StandardControlPrompt::from_bounds(t.kind(), bounds);
  u.template_id = t.id();
  std::size_t next_bound = 0;
  for (const auto& tok : t.tokens()) {
    if (tok == "*") {
      u.document_span.begin = u.text.size();
      u.text.insert(u.text.end(), doc.begin(), doc.end());
      u.document_span.end = u.text.size();
    } else if (tok == "?") {
      u.text.push_back(std::to_string(bounds[next_bound++]));
    } else {
      u.text.push_back(tok);
    }
  }
  return u;
}

ParseResult UtteranceParser::parse(std::span<const std::string> tokens) const {
  struct Match {
    StandardControlPrompt prompt;
    const PromptTemplate* tmpl;
    DocumentSpan span;
  };
  std::vector<Match> best;
  std::size_t best_literals = 0;

  for (const auto& t : templates_->templates()) {
    const auto& pat = t.tokens();
    const std::size_t prefix = t.document_slot();
    const std::size_t suffix = pat.size() - prefix - 1;
    if (tokens.size() < prefix + suffix + 1) continue;

    std::vector<int> values;
    bool ok = true;
    const auto match_at = [&](std::size_t pi, std::size_t ui) {
      if (pat[pi] == "?") {
        const auto v = parse_count(tokens[ui]);
        if (!v || *v <= 0) return false;
        values.push_back(*v);
        return true;
      }
      return iequals(pat[pi], tokens[ui]);
    };
    for (std::size_t i = 0; ok && i < prefix; ++i) ok = match_at(i, i);
    for (std::size_t i = 0; ok && i < suffix; ++i) {
      ok = match_at(prefix + 1 + i, tokens.size() - suffix + i);
    }
    if (!ok) continue;

    if (t.kind() == ControlKind::Between && values[0] > values[1]) std::swap(values[0], values[1]);
    Match m{StandardControlPrompt::from_bounds(t.kind(), values), &t,
            {prefix, tokens.size() - suffix}};
    if (t.literal_count() > best_literals || best.empty()) {
      best.clear();
      best_literals = t.literal_count();
    }
    if (t.literal_count() == best_literals) best.push_back(std::move(m));
  }

  ParseResult result;
  if (best.empty()) {
    const std::size_t phrases = count_length_phrases(tokens, 0, tokens.size());
    if (phrases > 1) {
      throw AmbiguousConstraintError(std::to_string(phrases) + " length phrases in one utterance");
    }
    result.outcome = phrases == 1 ? ParseOutcome::UnrecognizedPhrase : ParseOutcome::NoConstraint;
    return result;
  }
  for (const auto& m : best) {
    if (!(m.prompt == best.front().prompt)) {
      throw AmbiguousConstraintError("utterance matches conflicting templates: " +
                                     describe(best.front().prompt) + " vs " + describe(m.prompt));
    }
  }
  const Match& m = best.front();
  if (count_length_phrases(tokens, m.span.begin, m.span.end) > 0) {
    throw AmbiguousConstraintError("second length phrase inside the document of a " +
                                   describe(m.prompt) + " utterance");
  }
  result.prompt = m.prompt;
  result.outcome = ParseOutcome::TemplateMatch;
  result.template_id = m.tmpl->id();
  result.document_span = m.span;
  return result;
}

ParseResult UtteranceParser::parse(std::string_view text) const {
  const auto tokens = lex(text);
  return parse(std::span<const std::string>(tokens));
}

StandardControlPrompt parse_utterance(std::string_view text) {
  return UtteranceParser(TemplateSet::builtin()).parse(text).prompt;
}

StandardControlPrompt parse_utterance(std::span<const std::string> tokens) {
  return UtteranceParser(TemplateSet::builtin()).parse(tokens).prompt;
}

StandardControlPrompt sample_control_prompt(Rng& rng, std::span<const ControlKind> kinds) {
  if (kinds.empty()) throw ConfigError("sample_control_prompt: empty kind set");
  std::vector<ControlKind> unique(kinds.begin(), kinds.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  const ControlKind kind = unique[rng.index(unique.size())];
  std::vector<int> b;
  for (int i = 0; i < kind_arity(kind); ++i) {
    b.push_back(static_cast<int>(rng.uniform_int(kMinTargetLength, kMaxTargetLength)));
  }
  std::sort(b.begin(), b.end());
  return StandardControlPrompt::from_bounds(kind, b);
}

StandardControlPrompt sample_control_prompt(std::uint64_t seed, std::span<const ControlKind> kinds) {
  Rng rng(seed);
  return sample_control_prompt(rng, kinds);
}

AugmentedUtterance synthesize_utterance(Rng& rng, const TemplateSet& templates,
                                        std::span<const ControlKind> kinds,
                                        std::span<const std::string> doc) {
  const StandardControlPrompt p = sample_control_prompt(rng, kinds);
  const auto candidates = templates.of_kind(p.kind);
  if (candidates.empty()) {
    throw ConfigError("template set has no " + std::string(kind_name(p.kind)) + " templates");
  }
  const PromptTemplate& t = *candidates[rng.index(candidates.size())];
  const auto b = p.bounds();
  return expand_template(t, b, doc);
}

}  // namespace lenctl
