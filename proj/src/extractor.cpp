// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/extractor.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "lenctl/error.hpp"
#include "lenctl/optim.hpp"
#include "lenctl/rng.hpp"

namespace lenctl {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Sparse bag of in-vocabulary ids; `total` also counts out-of-vocabulary tokens.
struct Bag {
  std::vector<std::pair<int, int>> counts;
  std::size_t total = 0;
};

Bag make_bag(const ExtractorVocab& vocab, std::span<const std::string> tokens) {
  if (tokens.empty()) throw EmptyInputError("extractor: empty utterance");
  Bag bag;
  bag.total = tokens.size();
  std::vector<int> ids;
  for (const auto& t : tokens) {
    const int id = vocab.id(t);
    if (id != ExtractorVocab::kOov) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size();) {
    std::size_t j = i;
    while (j < ids.size() && ids[j] == ids[i]) ++j;
    bag.counts.emplace_back(ids[i], static_cast<int>(j - i));
    i = j;
  }
  return bag;
}

std::vector<double> pool(const Extractor& ex, const Bag& bag) {
  const auto d = static_cast<std::size_t>(ex.embed());
  std::vector<double> f(d, 0.0);
  const Tensor& emb = ex.params()[Extractor::kEmb];
  for (auto [id, n] : bag.counts) {
    for (std::size_t j = 0; j < d; ++j) f[j] += n * emb(static_cast<std::size_t>(id), j);
  }
  const double inv = 1.0 / static_cast<double>(bag.total);
  for (double& x : f) x *= inv;
  return f;
}

struct Targets {
  int type = 0;
  int lo = 0;
  int hi = 0;
};

Targets targets_of(const StandardControlPrompt& p) {
  return {static_cast<int>(p.kind), value_class(p.l_min), value_class(p.l_max)};
}

// Head logits, then probabilities in place; returns the argmax.
int head(const Tensor& w, const Tensor& b, const std::vector<double>& g, std::vector<double>& probs) {
  const std::size_t n = b.size();
  probs.resize(n);
  double mx = -1e300;
  for (std::size_t k = 0; k < n; ++k) {
    double z = b[k];
    for (std::size_t j = 0; j < g.size(); ++j) z += w(k, j) * g[j];
    probs[k] = z;
    mx = std::max(mx, z);
  }
  double s = 0.0;
  for (double& p : probs) s += (p = std::exp(p - mx));
  for (double& p : probs) p /= s;
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

struct Forward {
  std::vector<double> f, g;
  double fnorm = 0.0;
  std::array<std::vector<double>, 3> probs;
  std::array<int, 3> argmax{};
};

Forward forward(const Extractor& ex, const Bag& bag) {
  Forward fw;
  fw.f = pool(ex, bag);
  fw.fnorm = std::sqrt(std::inner_product(fw.f.begin(), fw.f.end(), fw.f.begin(), 0.0));
  fw.g.assign(fw.f.size(), 0.0);
  if (fw.fnorm > 0.0) {
    for (std::size_t j = 0; j < fw.f.size(); ++j) fw.g[j] = ex.feature_norm() * fw.f[j] / fw.fnorm;
  }
  const ParamSet& p = ex.params();
  fw.argmax[0] = head(p[Extractor::kTypeW], p[Extractor::kTypeB], fw.g, fw.probs[0]);
  fw.argmax[1] = head(p[Extractor::kMinW], p[Extractor::kMinB], fw.g, fw.probs[1]);
  fw.argmax[2] = head(p[Extractor::kMaxW], p[Extractor::kMaxB], fw.g, fw.probs[2]);
  return fw;
}

ExtractorPrediction to_prediction(Forward fw) {
  ExtractorPrediction pr;
  pr.kind = static_cast<ControlKind>(fw.argmax[0]);
  pr.min_class = fw.argmax[1];
  pr.max_class = fw.argmax[2];
  if (pr.min_class != 0 && pr.max_class != 0 && pr.min_class > pr.max_class) std::swap(pr.min_class, pr.max_class);
  pr.type_probs = std::move(fw.probs[0]);
  pr.min_probs = std::move(fw.probs[1]);
  pr.max_probs = std::move(fw.probs[2]);
  return pr;
}

double loss_on_bags(const Extractor& ex, std::span<const Bag> bags, std::span<const Targets> tg, ParamSet* grad) {
  if (bags.empty()) return 0.0;
  const ParamSet& p = ex.params();
  const auto d = static_cast<std::size_t>(ex.embed());
  const double inv_n = 1.0 / static_cast<double>(bags.size());
  double total = 0.0;
  static constexpr std::size_t kW[3] = {Extractor::kTypeW, Extractor::kMinW, Extractor::kMaxW};
  static constexpr std::size_t kB[3] = {Extractor::kTypeB, Extractor::kMinB, Extractor::kMaxB};
  std::vector<double> dg(d), df(d);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const Forward fw = forward(ex, bags[i]);
    const int y[3] = {tg[i].type, tg[i].lo, tg[i].hi};
    for (int h = 0; h < 3; ++h) total -= std::log(std::max(fw.probs[h][static_cast<std::size_t>(y[h])], 1e-300));
    if (!grad) continue;
    std::fill(dg.begin(), dg.end(), 0.0);
    for (int h = 0; h < 3; ++h) {
      const auto& pr = fw.probs[h];
      Tensor& gw = (*grad)[kW[h]];
      Tensor& gb = (*grad)[kB[h]];
      const Tensor& w = p[kW[h]];
      for (std::size_t k = 0; k < pr.size(); ++k) {
        const double dz = (pr[k] - (static_cast<int>(k) == y[h] ? 1.0 : 0.0)) * inv_n;
        gb[k] += dz;
        for (std::size_t j = 0; j < d; ++j) {
          gw(k, j) += dz * fw.g[j];
          dg[j] += dz * w(k, j);
        }
      }
    }
    if (fw.fnorm == 0.0) continue;
    // g = s f / |f|  =>  df = s (dg - u (u . dg)) / |f|, u = f / |f|.
    double udg = 0.0;
    for (std::size_t j = 0; j < d; ++j) udg += fw.f[j] / fw.fnorm * dg[j];
    for (std::size_t j = 0; j < d; ++j) df[j] = ex.feature_norm() * (dg[j] - fw.f[j] / fw.fnorm * udg) / fw.fnorm;
    Tensor& ge = (*grad)[Extractor::kEmb];
    const double inv_total = 1.0 / static_cast<double>(bags[i].total);
    for (auto [id, n] : bags[i].counts) {
      for (std::size_t j = 0; j < d; ++j) ge(static_cast<std::size_t>(id), j) += df[j] * n * inv_total;
    }
  }
  return total * inv_n;
}

}  // namespace

int value_class(std::optional<int> v) {
  if (!v || *v < kMinTargetLength || *v > kMaxTargetLength) return 0;
  return *v - kMinTargetLength + 1;
}

std::optional<int> class_value(int cls) {
  if (cls <= 0 || cls >= kValueClasses) return std::nullopt;
  return cls + kMinTargetLength - 1;
}

ExtractorVocab::ExtractorVocab(const TemplateSet& templates) {
  std::vector<std::string> tokens = {"[OOV]"};
  for (const auto& t : templates.templates()) {
    for (const auto& tok : t.tokens()) {
      if (tok == "*" || tok == "?") continue;
      const auto l = lower(tok);
      if (std::find(tokens.begin(), tokens.end(), l) == tokens.end()) tokens.push_back(l);
    }
  }
  for (int n = kMinTargetLength; n <= kMaxTargetLength; ++n) {
    const auto s = std::to_string(n);
    if (std::find(tokens.begin(), tokens.end(), s) == tokens.end()) tokens.push_back(s);
  }
  *this = ExtractorVocab(std::move(tokens));
}

ExtractorVocab::ExtractorVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw ConfigError("extractor vocab needs the OOV slot");
  for (std::size_t i = 1; i < tokens_.size(); ++i) {
    if (!index_.emplace(lower(tokens_[i]), static_cast<int>(i)).second) {
      throw ConfigError("extractor vocab: duplicate token " + tokens_[i]);
    }
  }
}

int ExtractorVocab::id(std::string_view token) const {
  const auto it = index_.find(lower(token));
  return it == index_.end() ? kOov : it->second;
}

Extractor::Extractor(ExtractorVocab vocab, int embed, double feature_norm)
    : vocab_(std::move(vocab)), feature_norm_(feature_norm) {
  if (embed < 1 || !(feature_norm > 0.0)) throw ConfigError("extractor: invalid dimensions");
  const auto v = static_cast<std::size_t>(vocab_.size());
  const auto d = static_cast<std::size_t>(embed);
  params_.add("extractor.emb", {v, d});
  params_.add("extractor.type_w", {static_cast<std::size_t>(kTypeClasses), d});
  params_.add("extractor.type_b", {static_cast<std::size_t>(kTypeClasses)});
  params_.add("extractor.min_w", {static_cast<std::size_t>(kValueClasses), d});
  params_.add("extractor.min_b", {static_cast<std::size_t>(kValueClasses)});
  params_.add("extractor.max_w", {static_cast<std::size_t>(kValueClasses), d});
  params_.add("extractor.max_b", {static_cast<std::size_t>(kValueClasses)});
}

Extractor Extractor::from_params(ExtractorVocab vocab, ParamSet params, double feature_norm) {
  const int d = params.contains("extractor.type_w") ? static_cast<int>(params.get("extractor.type_w").cols()) : 0;
  Extractor ex(std::move(vocab), std::max(d, 1), feature_norm);
  if (!params.same_layout(ex.params_)) throw FormatError("extractor: parameter layout does not match vocabulary");
  ex.params_ = std::move(params);
  return ex;
}

std::vector<double> encode_utterance(const Extractor& ex, std::span<const std::string> tokens) {
  return pool(ex, make_bag(ex.vocab(), tokens));
}

StandardControlPrompt ExtractorPrediction::prompt() const {
  const auto lo = class_value(min_class);
  const auto hi = class_value(max_class);
  switch (kind) {
    case ControlKind::None: return StandardControlPrompt::none();
    case ControlKind::MoreThan:
      if (lo || hi) return StandardControlPrompt::more_than(lo ? *lo : *hi);
      return StandardControlPrompt::none();
    case ControlKind::LessThan:
      if (lo || hi) return StandardControlPrompt::less_than(hi ? *hi : *lo);
      return StandardControlPrompt::none();
    case ControlKind::EqualTo:
      if (lo || hi) return StandardControlPrompt::equal_to(lo ? *lo : *hi);
      return StandardControlPrompt::none();
    case ControlKind::Between:
      if (lo && hi) return StandardControlPrompt::between(*lo, *hi);
      if (lo || hi) return StandardControlPrompt::between(lo ? *lo : *hi, lo ? *lo : *hi);
      return StandardControlPrompt::none();
  }
  return StandardControlPrompt::none();
}

ExtractorPrediction predict(const Extractor& ex, std::span<const std::string> tokens) {
  return to_prediction(forward(ex, make_bag(ex.vocab(), tokens)));
}

bool prediction_matches(const StandardControlPrompt& truth, const ExtractorPrediction& pred) {
  const int lo = value_class(truth.l_min);
  const int hi = value_class(truth.l_max);
  switch (truth.kind) {
    case ControlKind::None: return true;
    case ControlKind::MoreThan: return lo != 0 && pred.min_class == lo;
    case ControlKind::LessThan: return hi != 0 && pred.max_class == hi;
    case ControlKind::EqualTo:
    case ControlKind::Between: return lo != 0 && hi != 0 && pred.min_class == lo && pred.max_class == hi;
  }
  return false;
}

double matching_rate(const Extractor& ex, std::span<const AugmentedUtterance> data) {
  if (data.empty()) throw EmptyInputError("matching_rate: empty dataset");
  std::size_t hits = 0;
  for (const auto& u : data) hits += prediction_matches(u.truth, predict(ex, u.text)) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double extractor_loss(const Extractor& ex, std::span<const AugmentedUtterance> batch, ParamSet* grad) {
  std::vector<Bag> bags;
  std::vector<Targets> tg;
  for (const auto& u : batch) {
    bags.push_back(make_bag(ex.vocab(), u.text));
    tg.push_back(targets_of(u.truth));
  }
  return loss_on_bags(ex, bags, tg, grad);
}

ExtractorTrainResult train_extractor(std::span<const AugmentedUtterance> train,
                                     std::span<const AugmentedUtterance> val, const ExtractorConfig& cfg,
                                     const TemplateSet& templates) {
  Extractor init(ExtractorVocab(templates), cfg.embed, cfg.feature_norm);
  Rng rng(derive_seed(cfg.seed, 1));
  Tensor& emb = init.params()[Extractor::kEmb];
  for (std::size_t r = 1; r < emb.rows(); ++r) {
    for (std::size_t j = 0; j < emb.cols(); ++j) emb(r, j) = rng.normal(0.0, cfg.init_sd);
  }
  return train_extractor(train, val, cfg, std::move(init));
}

ExtractorTrainResult train_extractor(std::span<const AugmentedUtterance> train,
                                     std::span<const AugmentedUtterance> val, const ExtractorConfig& cfg,
                                     Extractor init) {
  if (train.empty()) throw EmptyInputError("train_extractor: empty training set");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ConfigError("train_extractor: invalid config");
  for (const auto& u : train) u.truth.validate();

  std::vector<Bag> bags;
  std::vector<Targets> tg;
  bags.reserve(train.size());
  for (const auto& u : train) {
    bags.push_back(make_bag(init.vocab(), u.text));
    tg.push_back(targets_of(u.truth));
  }
  const auto eval = val.empty() ? train : val;

  Extractor model = std::move(init);
  ExtractorTrainResult res{model, matching_rate(model, eval), 0, 0, {}, {}};
  // Ties on matching rate go to the lower validation loss.
  double best_loss = extractor_loss(model, eval, nullptr);
  SgdMomentum opt(model.params(), cfg.lr, cfg.momentum);
  Rng rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Bag> bb;
  std::vector<Targets> bt;
  ParamSet grad = model.params().zeros_like();
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      bb.clear();
      bt.clear();
      for (std::size_t i = start; i < end; ++i) {
        bb.push_back(bags[order[i]]);
        bt.push_back(tg[order[i]]);
      }
      grad.fill(0.0);
      const double loss = loss_on_bags(model, bb, bt, &grad);
      ++step;
      if (!std::isfinite(loss)) throw DivergenceError("extractor", step);
      epoch_loss += loss * static_cast<double>(end - start);
      opt.step(model.params(), grad);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!res.train_loss.empty() && epoch_loss > res.train_loss.back()) {
      opt.set_lr(opt.lr() * 0.5);
      ++res.lr_halvings;
    }
    res.train_loss.push_back(epoch_loss);
    const double m = matching_rate(model, eval);
    res.val_match.push_back(m);
    const double vl = extractor_loss(model, eval, nullptr);
    if (m > res.best_val_match || (m == res.best_val_match && vl < best_loss)) {
      res.best_val_match = m;
      best_loss = vl;
      res.best_epoch = epoch;
      res.model = model;
    }
  }
  return res;
}

std::vector<AugmentedUtterance> synth_extractor_data(std::uint64_t seed, std::size_t n,
                                                     std::span<const ControlKind> kinds,
                                                     const TemplateSet& templates) {
  Rng rng(seed);
  std::vector<AugmentedUtterance> out;
  out.reserve(n);
  std::vector<std::string> doc;
  for (std::size_t i = 0; i < n; ++i) {
    doc.clear();
    const auto len = rng.uniform_int(150, 400);
    for (std::int64_t t = 0; t < len; ++t) doc.push_back("w" + std::to_string(rng.uniform_int(0, 40)));
    out.push_back(synthesize_utterance(rng, templates, kinds, doc));
  }
  return out;
}

}  // namespace lenctl
