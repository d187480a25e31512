// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lenctl/error.hpp"
#include "lenctl/filtering.hpp"
#include "lenctl/io.hpp"

namespace lenctl {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

Selection select_checkpoint(std::span<const RlMetrics> series, double max_drop) {
  Selection sel{0, true};
  if (series.empty()) return sel;
  const double base = series[0].val_relevance;
  for (std::size_t i = 1; i < series.size(); ++i) {
    if (base - series[i].val_relevance >= max_drop) continue;
    if (sel.fallback || series[i].val_error < series[sel.index].val_error) sel = {i, false};
  }
  return sel;
}

std::vector<EvalRecord> evaluate_policy(const Policy& policy, std::span<const CorpusExample> data,
                                        const PromptExtractor& extractor, const RewardModel& reward, int n,
                                        std::uint64_t seed, int max_len) {
  const Vocab& vocab = Vocab::standard();
  std::vector<EvalRecord> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    EvalRecord r;
    r.index = i;
    r.truth = ex.utterance.truth;
    try {
      r.prompt = extractor(ex.utterance.text);
    } catch (const AmbiguousConstraintError&) {
      r.prompt = StandardControlPrompt::none();
    } catch (const InvalidPromptError&) {
      r.prompt = StandardControlPrompt::none();
    }
    const auto in = make_policy_input(vocab, r.prompt, ex.doc);
    const auto set = rank_and_select(generate_candidates(policy, in, n, derive_seed(seed, i), max_len), reward,
                                     r.prompt, ex.ref);
    const auto& best = set.best();
    r.selected = set.selected;
    r.length = best.length;
    r.error = control_error(r.truth, best.length);
    r.relevance = best.relevance;
    r.reward = set.scores[static_cast<std::size_t>(set.selected)].normalized;
    out.push_back(r);
  }
  return out;
}

namespace {

ordered_json prompt_json(const StandardControlPrompt& p) {
  ordered_json j;
  j["kind"] = kind_name(p.kind);
  j["l_min"] = p.l_min ? ordered_json(*p.l_min) : ordered_json(nullptr);
  j["l_max"] = p.l_max ? ordered_json(*p.l_max) : ordered_json(nullptr);
  return j;
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<fs::path> sorted_files(const fs::path& dir, std::string_view prefix) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".jsonl" && name.starts_with(prefix)) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int rank_of(const std::string& value, std::span<const std::string_view> order) {
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == value) return static_cast<int>(i);
  }
  return static_cast<int>(order.size());
}

}  // namespace

std::string eval_record_json(const EvalRecord& r, Setting setting, ControlScope scope) {
  ordered_json j;
  j["scope"] = scope_name(scope);
  j["setting"] = setting_name(setting);
  j["index"] = r.index;
  j["kind"] = kind_name(r.truth.kind);
  j["truth"] = prompt_json(r.truth);
  j["prompt"] = prompt_json(r.prompt);
  j["length"] = r.length;
  j["error"] = r.error;
  j["relevance"] = r.relevance;
  j["reward"] = r.reward;
  j["selected"] = r.selected;
  return j.dump();
}

Report build_report(const fs::path& run_dir, double max_drop) {
  Report rep;
  struct Acc {
    std::size_t n = 0;
    double err = 0.0, rel = 0.0;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Acc> acc;
  const auto eval_files = sorted_files(run_dir / "eval", "");
  for (const auto& f : eval_files) {
    for (const auto& line : read_lines(f)) {
      const auto j = ordered_json::parse(line);
      const std::string scope = j.at("scope"), setting = j.at("setting"), kind = j.at("kind");
      for (const auto& k : {kind, std::string("all")}) {
        auto& a = acc[{scope, setting, k}];
        ++a.n;
        a.err += j.at("error").get<double>();
        a.rel += j.at("relevance").get<double>();
      }
    }
  }
  if (acc.empty()) rep.warnings.push_back("no evaluation logs under " + (run_dir / "eval").string());
  for (const auto& [key, a] : acc) {
    rep.rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), a.n, a.err / static_cast<double>(a.n),
                        a.rel / static_cast<double>(a.n)});
  }
  std::vector<std::string_view> setting_order, kind_order;
  for (Setting s : kAllSettings) setting_order.push_back(setting_name(s));
  for (ControlKind k : kAllKinds) kind_order.push_back(kind_name(k));
  kind_order.push_back("all");
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    const auto ka = std::make_tuple(a.scope, rank_of(a.setting, setting_order), rank_of(a.kind, kind_order));
    const auto kb = std::make_tuple(b.scope, rank_of(b.setting, setting_order), rank_of(b.kind, kind_order));
    return ka < kb;
  });

  std::ostringstream curves;
  curves << "run,iter,policy_loss,value_loss,val_reward,val_error,val_relevance\n";
  const auto rl_files = sorted_files(run_dir / "metrics", "rl");
  for (const auto& f : rl_files) {
    const std::string run = f.stem().string();
    std::vector<RlMetrics> series;
    for (const auto& line : read_lines(f)) {
      const auto j = ordered_json::parse(line);
      RlMetrics m;
      m.iter = j.at("iter");
      m.policy_loss = j.at("policy_loss");
      m.value_loss = j.at("value_loss");
      m.val_reward = j.at("val_reward");
      m.val_error = j.at("val_error");
      m.val_relevance = j.at("val_relevance");
      series.push_back(m);
      curves << run << ',' << m.iter << ',' << fmt(m.policy_loss, 8) << ',' << fmt(m.value_loss, 8) << ','
             << fmt(m.val_reward, 8) << ',' << fmt(m.val_error, 6) << ',' << fmt(m.val_relevance, 6) << '\n';
    }
    if (series.empty()) continue;
    const auto sel = select_checkpoint(series, max_drop);
    AblationRow row;
    row.run = run;
    row.iterations = series.back().iter;
    row.sft_error = series.front().val_error;
    row.selected_iter = series[sel.index].iter;
    row.selected_error = series[sel.index].val_error;
    row.selected_relevance = series[sel.index].val_relevance;
    row.fallback = sel.fallback;
    if (series.size() > 1) {
      row.first_value_loss = series[1].value_loss;
      row.last_value_loss = series.back().value_loss;
    }
    rep.ablation.push_back(row);
  }
  if (rl_files.empty()) rep.warnings.push_back("no RL metrics under " + (run_dir / "metrics").string());
  rep.curves_csv = curves.str();
  return rep;
}

std::string Report::table_markdown() const {
  std::string s = "| scope | setting | kind | n | error | relevance |\n|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    s += "| " + r.scope + " | " + r.setting + " | " + r.kind + " | " + std::to_string(r.count) + " | " +
         fmt(r.error, 3) + " | " + fmt(r.relevance, 4) + " |\n";
  }
  return s;
}

std::string Report::table_csv() const {
  std::string s = "scope,setting,kind,n,error,relevance\n";
  for (const auto& r : rows) {
    s += r.scope + "," + r.setting + "," + r.kind + "," + std::to_string(r.count) + "," + fmt(r.error, 6) + "," +
         fmt(r.relevance, 6) + "\n";
  }
  return s;
}

std::string Report::ablation_markdown() const {
  std::string s =
      "| run | iterations | SFT error | selected iter | selected error | selected relevance | value loss first | "
      "value loss last |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : ablation) {
    s += "| " + r.run + " | " + std::to_string(r.iterations) + " | " + fmt(r.sft_error, 3) + " | " +
         std::to_string(r.selected_iter) + (r.fallback ? " (fallback)" : "") + " | " + fmt(r.selected_error, 3) +
         " | " + fmt(r.selected_relevance, 4) + " | " + fmt(r.first_value_loss, 6) + " | " +
         fmt(r.last_value_loss, 6) + " |\n";
  }
  return s;
}

}  // namespace lenctl
