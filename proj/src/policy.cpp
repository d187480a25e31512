// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lenctl/error.hpp"
#include "lenctl/optim.hpp"
#include "lenctl/toy_lm.hpp"

namespace lenctl {

namespace {

using Index = std::size_t;

// y += M x for a row-major rows x cols matrix.
inline void gemv_add(const double* m, const double* x, double* y, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const double* row = m + r * cols;
    double s = 0.0;
    for (Index c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] += s;
  }
}

// y += M^T x.
inline void gemv_t_add(const double* m, const double* x, double* y, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* row = m + r * cols;
    for (Index c = 0; c < cols; ++c) y[c] += row[c] * xr;
  }
}

// M += x y^T.
inline void outer_add(double* m, const double* x, const double* y, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    double* row = m + r * cols;
    for (Index c = 0; c < cols; ++c) row[c] += xr * y[c];
  }
}

// Softmax of `logits` into `probs`; returns log-sum-exp.
inline double softmax(const double* logits, double* probs, Index n) {
  double mx = logits[0];
  for (Index i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (Index i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  const double inv = 1.0 / z;
  for (Index i = 0; i < n; ++i) probs[i] *= inv;
  return mx + std::log(z);
}

void check_tokens(std::span<const int> ids, int vocab_size, const char* what) {
  for (int t : ids) {
    if (t < 0 || t >= vocab_size) {
      throw InvalidTokenError(std::string(what) + ": token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

// Step-by-step evaluator shared by sampling, decoding and teacher forcing.
class Runner {
 public:
  Runner(const Policy& policy, const PolicyInput& in)
      : p_(policy.params()),
        v_(static_cast<Index>(policy.config().vocab_size)),
        d_(static_cast<Index>(policy.config().embed)),
        h_(static_cast<Index>(policy.config().hidden)),
        inv_len_(1.0 / policy.config().max_len),
        cdoc_(d_, 0.0),
        ctx_(h_, 0.0),
        gctx_(h_, 0.0),
        state_(h_, 0.0),
        next_(h_, 0.0),
        logits_(v_, 0.0) {
    if (in.prompt.empty()) throw InvalidPromptError("policy input has an empty prompt");
    check_tokens(in.prompt, static_cast<int>(v_), "prompt");
    check_tokens(in.doc, static_cast<int>(v_), "document");
    const Tensor& emb = p_[Policy::kEmb];
    if (!in.doc.empty()) {
      for (int t : in.doc) {
        const double* e = &emb.data[static_cast<Index>(t) * d_];
        for (Index i = 0; i < d_; ++i) cdoc_[i] += e[i];
      }
      const double inv = 1.0 / static_cast<double>(in.doc.size());
      for (double& c : cdoc_) c *= inv;
    }
    ctx_ = p_[Policy::kB].data;
    gemv_add(p_[Policy::kWd].data.data(), cdoc_.data(), ctx_.data(), h_, d_);
    for (int t : in.prompt) advance(t, 0.0, false);
    gemv_add(p_[Policy::kWc].data.data(), state_.data(), gctx_.data(), h_, h_);
  }

  // Feeds generated token `x` as input; `generated` counts tokens so far.
  void feed(int x, std::size_t generated) { advance(x, static_cast<double>(generated) * inv_len_, true); }

  const std::vector<double>& state() const { return state_; }
  const std::vector<double>& cdoc() const { return cdoc_; }

  // Output distribution at the current state; returns log-sum-exp.
  double distribution(double* probs) {
    std::copy(p_[Policy::kBy].data.begin(), p_[Policy::kBy].data.end(), logits_.begin());
    gemv_add(p_[Policy::kWy].data.data(), state_.data(), logits_.data(), v_, h_);
    const double lse = softmax(logits_.data(), probs, v_);
    return lse;
  }
  double logit(int k) const { return logits_[static_cast<Index>(k)]; }

 private:
  void advance(int x, double tau, bool gen) {
    next_ = ctx_;
    if (gen) {
      for (Index i = 0; i < h_; ++i) next_[i] += gctx_[i];
    }
    const double* wt = p_[Policy::kWt].data.data();
    if (tau != 0.0) {
      for (Index i = 0; i < h_; ++i) next_[i] += wt[i] * tau;
    }
    gemv_add(p_[Policy::kWx].data.data(), &p_[Policy::kEmb].data[static_cast<Index>(x) * d_], next_.data(), h_, d_);
    gemv_add(p_[Policy::kWh].data.data(), state_.data(), next_.data(), h_, h_);
    for (Index i = 0; i < h_; ++i) state_[i] = std::tanh(next_[i]);
  }

  const ParamSet& p_;
  Index v_, d_, h_;
  double inv_len_;
  std::vector<double> cdoc_, ctx_, gctx_, state_, next_, logits_;
};

std::size_t sample_index(const double* probs, std::size_t n, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u above the final cumulative sum; take the last token with mass.
  for (std::size_t i = n; i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return n - 1;
}

}  // namespace

Policy::Policy(PolicyConfig cfg) : cfg_(cfg) {
  if (cfg.vocab_size < 4 || cfg.embed < 1 || cfg.hidden < 1 || cfg.max_len < 1) {
    throw ConfigError("policy: invalid dimensions");
  }
  const auto v = static_cast<Index>(cfg.vocab_size);
  const auto d = static_cast<Index>(cfg.embed);
  const auto h = static_cast<Index>(cfg.hidden);
  params_.add("policy.emb", {v, d});
  params_.add("policy.wx", {h, d});
  params_.add("policy.wh", {h, h});
  params_.add("policy.wd", {h, d});
  params_.add("policy.wc", {h, h});
  params_.add("policy.wt", {h});
  params_.add("policy.b", {h});
  params_.add("policy.wy", {v, h});
  params_.add("policy.by", {v});
}

Policy Policy::from_params(ParamSet params, PolicyConfig cfg) {
  Policy p(cfg);
  if (!params.same_layout(p.params_)) throw FormatError("policy: parameter layout does not match config");
  p.params_ = std::move(params);
  return p;
}

void Policy::init_random(Rng& rng) {
  const double d = cfg_.embed;
  const double h = cfg_.hidden;
  const auto fill = [&](std::size_t idx, double sd) {
    for (double& w : params_[idx].data) w = rng.normal(0.0, sd);
  };
  fill(kEmb, 1.0);
  fill(kWx, 1.0 / std::sqrt(d));
  fill(kWh, 0.5 / std::sqrt(h));
  fill(kWd, 1.0 / std::sqrt(d));
  fill(kWc, 0.5 / std::sqrt(h));
  fill(kWt, 1.0);
  params_[kB].data.assign(params_[kB].size(), 0.0);
  fill(kWy, 0.5 / std::sqrt(h));
  params_[kBy].data.assign(params_[kBy].size(), 0.0);
}

PolicyTrace policy_forward(const Policy& policy, const PolicyInput& in, std::span<const int> a) {
  const auto v = static_cast<Index>(policy.config().vocab_size);
  const auto h = static_cast<Index>(policy.config().hidden);
  check_tokens(a, static_cast<int>(v), "generated sequence");
  Runner run(policy, in);
  PolicyTrace tr;
  tr.steps = a.size();
  tr.prompt_len = in.prompt.size();
  tr.cdoc = run.cdoc();
  tr.probs.resize(tr.steps * v);
  tr.token_log_probs.resize(tr.steps);
  tr.hidden.reserve((tr.prompt_len + tr.steps) * h);

  // Prompt-phase states are recomputed here so backward has all of them.
  {
    const ParamSet& p = policy.params();
    const auto d = static_cast<Index>(policy.config().embed);
    std::vector<double> state(h, 0.0), next(h);
    std::vector<double> ctx = p[Policy::kB].data;
    gemv_add(p[Policy::kWd].data.data(), tr.cdoc.data(), ctx.data(), h, d);
    for (int x : in.prompt) {
      next = ctx;
      gemv_add(p[Policy::kWx].data.data(), &p[Policy::kEmb].data[static_cast<Index>(x) * d], next.data(), h, d);
      gemv_add(p[Policy::kWh].data.data(), state.data(), next.data(), h, h);
      for (Index i = 0; i < h; ++i) state[i] = std::tanh(next[i]);
      tr.hidden.insert(tr.hidden.end(), state.begin(), state.end());
    }
  }
  for (std::size_t k = 0; k < tr.steps; ++k) {
    if (k > 0) {
      run.feed(a[k - 1], k);
      tr.hidden.insert(tr.hidden.end(), run.state().begin(), run.state().end());
    }
    double* probs = &tr.probs[k * v];
    const double lse = run.distribution(probs);
    tr.token_log_probs[k] = run.logit(a[k]) - lse;
  }
  return tr;
}

void policy_backward(const Policy& policy, const PolicyInput& in, std::span<const int> a,
                     const PolicyTrace& tr, std::span<const double> dlogits, ParamSet& grad) {
  const ParamSet& p = policy.params();
  const auto v = static_cast<Index>(policy.config().vocab_size);
  const auto d = static_cast<Index>(policy.config().embed);
  const auto h = static_cast<Index>(policy.config().hidden);
  if (dlogits.size() != tr.steps * v) throw ShapeError("policy_backward: dlogits has wrong size");
  if (tr.steps == 0) return;
  const Index plen = tr.prompt_len;
  const Index total = plen + tr.steps - 1;
  const double inv_len = 1.0 / policy.config().max_len;
  const double* gstate = &tr.hidden[(plen - 1) * h];

  std::vector<double> dh(h, 0.0), dh_prev(h), da(h), sum_da(h, 0.0), sum_da_gen(h, 0.0);
  double* g_emb = grad[Policy::kEmb].data.data();
  double* g_wx = grad[Policy::kWx].data.data();
  double* g_wh = grad[Policy::kWh].data.data();
  double* g_wt = grad[Policy::kWt].data.data();
  double* g_wy = grad[Policy::kWy].data.data();
  double* g_by = grad[Policy::kBy].data.data();

  for (Index t = total; t-- > 0;) {
    const double* ht = &tr.hidden[t * h];
    if (t + 1 >= plen) {
      const Index k = t + 1 - plen;
      const double* dz = &dlogits[k * v];
      outer_add(g_wy, dz, ht, v, h);
      for (Index i = 0; i < v; ++i) g_by[i] += dz[i];
      gemv_t_add(p[Policy::kWy].data.data(), dz, dh.data(), v, h);
    }
    if (t + 1 == plen) {
      // The post-[SEP] state also feeds every generation step through Wc.
      gemv_t_add(p[Policy::kWc].data.data(), sum_da_gen.data(), dh.data(), h, h);
      outer_add(grad[Policy::kWc].data.data(), sum_da_gen.data(), gstate, h, h);
    }
    for (Index i = 0; i < h; ++i) da[i] = dh[i] * (1.0 - ht[i] * ht[i]);
    const int x = t < plen ? in.prompt[t] : a[t - plen];
    const Index xo = static_cast<Index>(x) * d;
    outer_add(g_wx, da.data(), &p[Policy::kEmb].data[xo], h, d);
    gemv_t_add(p[Policy::kWx].data.data(), da.data(), g_emb + xo, h, d);
    for (Index i = 0; i < h; ++i) sum_da[i] += da[i];
    if (t >= plen) {
      const double tau = static_cast<double>(t + 1 - plen) * inv_len;
      for (Index i = 0; i < h; ++i) {
        sum_da_gen[i] += da[i];
        g_wt[i] += da[i] * tau;
      }
    }
    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    if (t > 0) {
      outer_add(g_wh, da.data(), &tr.hidden[(t - 1) * h], h, h);
      gemv_t_add(p[Policy::kWh].data.data(), da.data(), dh_prev.data(), h, h);
    }
    std::swap(dh, dh_prev);
  }

  outer_add(grad[Policy::kWd].data.data(), sum_da.data(), tr.cdoc.data(), h, d);
  for (Index i = 0; i < h; ++i) grad[Policy::kB][i] += sum_da[i];
  if (!in.doc.empty()) {
    std::vector<double> dc(d, 0.0);
    gemv_t_add(p[Policy::kWd].data.data(), sum_da.data(), dc.data(), h, d);
    const double inv = 1.0 / static_cast<double>(in.doc.size());
    for (int tok : in.doc) {
      double* ge = g_emb + static_cast<Index>(tok) * d;
      for (Index i = 0; i < d; ++i) ge[i] += dc[i] * inv;
    }
  }
}

std::vector<double> step_distribution(const Policy& policy, const PolicyInput& in,
                                      std::span<const int> prefix) {
  check_tokens(prefix, policy.config().vocab_size, "prefix");
  Runner run(policy, in);
  for (std::size_t k = 0; k < prefix.size(); ++k) run.feed(prefix[k], k + 1);
  std::vector<double> probs(static_cast<Index>(policy.config().vocab_size));
  run.distribution(probs.data());
  return probs;
}

GenerationSample sample_sequence(const Policy& policy, const PolicyInput& in, std::uint64_t seed,
                                 int max_len, bool keep_distributions) {
  if (max_len < 1) throw ConfigError("sample_sequence: max_len must be at least 1");
  const auto v = static_cast<Index>(policy.config().vocab_size);
  Runner run(policy, in);
  Rng rng(seed);
  GenerationSample out;
  std::vector<double> probs(v);
  for (;;) {
    const double lse = run.distribution(probs.data());
    const auto tok = static_cast<int>(sample_index(probs.data(), v, rng.uniform()));
    out.tokens.push_back(tok);
    out.step_log_probs.push_back(run.logit(tok) - lse);
    if (keep_distributions) out.step_probs.insert(out.step_probs.end(), probs.begin(), probs.end());
    if (tok == Vocab::kEos) break;
    ++out.length;
    if (out.length >= max_len) break;
    run.feed(tok, out.tokens.size());
  }
  return out;
}

std::vector<int> greedy_decode(const Policy& policy, const PolicyInput& in, int max_len) {
  const auto v = static_cast<Index>(policy.config().vocab_size);
  Runner run(policy, in);
  std::vector<int> out;
  std::vector<double> probs(v);
  int length = 0;
  for (;;) {
    run.distribution(probs.data());
    const auto tok = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    out.push_back(tok);
    if (tok == Vocab::kEos || ++length >= max_len) break;
    run.feed(tok, out.size());
  }
  return out;
}

double sequence_log_prob(const Policy& policy, const PolicyInput& in, std::span<const int> a) {
  const auto tr = policy_forward(policy, in, a);
  return std::accumulate(tr.token_log_probs.begin(), tr.token_log_probs.end(), 0.0);
}

double sft_loss(const Policy& policy, std::span<const SftExample> batch, ParamSet* grad) {
  const auto v = static_cast<Index>(policy.config().vocab_size);
  std::size_t tokens = 0;
  for (const auto& ex : batch) tokens += ex.target.size();
  if (tokens == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(tokens);
  double total = 0.0;
  std::vector<double> dz;
  for (const auto& ex : batch) {
    const auto tr = policy_forward(policy, ex.input, ex.target);
    for (double lp : tr.token_log_probs) total -= lp;
    if (grad) {
      dz.assign(tr.probs.begin(), tr.probs.end());
      for (std::size_t k = 0; k < tr.steps; ++k) {
        dz[k * v + static_cast<Index>(ex.target[k])] -= 1.0;
      }
      for (double& g : dz) g *= inv;
      policy_backward(policy, ex.input, ex.target, tr, dz, *grad);
    }
  }
  return total * inv;
}

double perplexity(const Policy& policy, std::span<const SftExample> data) {
  return std::exp(sft_loss(policy, data, nullptr));
}

SftResult sft_train(std::span<const SftExample> train, std::span<const SftExample> val, Policy init,
                    const SftConfig& cfg) {
  if (train.empty()) throw ConfigError("sft_train: empty training set");
  if (cfg.batch_size < 1 || cfg.epochs < 0 || !(cfg.lr >= 0.0)) throw ConfigError("sft_train: invalid config");
  const auto eval = val.empty() ? train : val;
  Policy policy = std::move(init);
  SftResult res{policy, perplexity(policy, eval), 0.0, 0, {}};
  res.best_val_ppl = res.init_val_ppl;

  AdamW opt(policy.params(), {.lr = cfg.lr});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<SftExample> batch;
  ParamSet grad = policy.params().zeros_like();
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      grad.fill(0.0);
      const double loss = sft_loss(policy, batch, &grad);
      ++step;
      if (!std::isfinite(loss) || !grad.all_finite()) throw DivergenceError("sft", step);
      const double gn = grad.norm();
      if (cfg.clip_norm > 0.0 && gn > cfg.clip_norm) {
        for (auto& e : grad.entries()) {
          for (double& g : e.value.data) g *= cfg.clip_norm / gn;
        }
      }
      opt.step(policy.params(), grad);
    }
    const double ppl = perplexity(policy, eval);
    res.val_ppl.push_back(ppl);
    if (ppl < res.best_val_ppl) {
      res.best_val_ppl = ppl;
      res.best_epoch = epoch;
      res.policy = policy;
    }
  }
  return res;
}

}  // namespace lenctl
