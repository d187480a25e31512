// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Best-of-N sample filtering.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lenctl/reward.hpp"
#include "lenctl/toy_lm.hpp"

namespace lenctl {

struct CandidateSet {
  std::vector<GenerationSample> candidates;
  std::vector<RewardScore> scores;  // empty until ranked
  int selected = -1;

  const GenerationSample& best() const { return candidates.at(static_cast<std::size_t>(selected)); }
};

// Candidate i is sampled with seed + i.
CandidateSet generate_candidates(const Policy& policy, const PolicyInput& in, int n, std::uint64_t seed,
                                 int max_len, bool keep_distributions = false);

// Highest reward wins; ties go to the higher relevance, then the lower index.
// Fills every candidate's relevance against `reference`.
CandidateSet rank_and_select(CandidateSet cands, const RewardModel& reward, const StandardControlPrompt& p,
                             std::span<const int> reference);

// Index the rule above would pick among the first `n` scored candidates.
int select_prefix(const CandidateSet& scored, int n);

}  // namespace lenctl
