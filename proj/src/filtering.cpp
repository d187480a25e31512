// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/filtering.hpp"

#include "lenctl/error.hpp"

namespace lenctl {

CandidateSet generate_candidates(const Policy& policy, const PolicyInput& in, int n, std::uint64_t seed,
                                 int max_len, bool keep_distributions) {
  if (n < 1) throw ConfigError("generate_candidates: N must be at least 1");
  CandidateSet out;
  out.candidates.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.candidates.push_back(
        sample_sequence(policy, in, seed + static_cast<std::uint64_t>(i), max_len, keep_distributions));
  }
  return out;
}

int select_prefix(const CandidateSet& scored, int n) {
  if (n < 1 || static_cast<std::size_t>(n) > scored.scores.size()) {
    throw ShapeError("select_prefix: prefix length outside the scored set");
  }
  int best = 0;
  for (int i = 1; i < n; ++i) {
    const auto& c = scored.scores[static_cast<std::size_t>(i)];
    const auto& b = scored.scores[static_cast<std::size_t>(best)];
    const double rc = scored.candidates[static_cast<std::size_t>(i)].relevance;
    const double rb = scored.candidates[static_cast<std::size_t>(best)].relevance;
    if (c.value > b.value || (c.value == b.value && rc > rb)) best = i;
  }
  return best;
}

CandidateSet rank_and_select(CandidateSet cands, const RewardModel& reward, const StandardControlPrompt& p,
                             std::span<const int> reference) {
  if (cands.candidates.empty()) throw EmptyInputError("rank_and_select: no candidates");
  cands.scores.clear();
  for (auto& c : cands.candidates) {
    c.relevance = relevance_proxy(reference, c.tokens);
    cands.scores.push_back(reward.score(p, c.length));
  }
  cands.selected = select_prefix(cands, static_cast<int>(cands.candidates.size()));
  return cands;
}

}  // namespace lenctl
