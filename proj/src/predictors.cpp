#include "hmmlab/predictors.hpp"

#include "hmmlab/llm_bridge.hpp"
#include "hmmlab/rng.hpp"
#include "hmmlab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace hmmlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

}  // namespace

Symbol argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Symbol best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = Symbol(i);
  }
  return best;
}

PredictiveDistribution PredictiveDistribution::from_scores(Eigen::VectorXd scores, std::uint32_t flags) {
  if (scores.size() == 0) throw std::invalid_argument("PredictiveDistribution: empty score vector");
  if (!scores.allFinite() || scores.minCoeff() < 0.0) {
    throw std::invalid_argument("PredictiveDistribution: scores must be finite and nonnegative");
  }
  const double total = scores.sum();
  if (!(total > 0.0)) throw std::invalid_argument("PredictiveDistribution: scores sum to zero");
  PredictiveDistribution out;
  out.probs = scores / total;
  out.argmax_symbol = argmax_lowest(out.probs);
  out.flags = flags;
  return out;
}

PredictiveDistribution PredictiveDistribution::uniform(int num_obs, std::uint32_t flags) {
  return from_scores(Eigen::VectorXd::Ones(num_obs), flags);
}

// ---------------------------------------------------------------------------
// Viterbi

std::vector<Symbol> viterbi_path(const HmmParams& params, SymbolView observations) {
  if (observations.empty()) throw std::invalid_argument("viterbi: history must be nonempty");
  check_symbols(observations, params.num_obs());
  const int m = params.num_states();
  const std::size_t len = observations.size();
  const Eigen::MatrixXd log_a = params.transition.unaryExpr(&safe_log);
  const Eigen::MatrixXd log_b = params.emission.unaryExpr(&safe_log);

  Eigen::VectorXd score(m);
  for (int s = 0; s < m; ++s) score(s) = safe_log(params.initial(s)) + log_b(s, observations[0]);
  std::vector<Symbol> back(len * std::size_t(m), 0);
  Eigen::VectorXd next(m);
  for (std::size_t t = 1; t < len; ++t) {
    for (int s = 0; s < m; ++s) {
      double best = kNegInf;
      Symbol arg = 0;
      for (int r = 0; r < m; ++r) {
        const double cand = score(r) + log_a(r, s);
        if (cand > best) {
          best = cand;
          arg = r;
        }
      }
      next(s) = best + log_b(s, observations[t]);
      back[t * std::size_t(m) + std::size_t(s)] = arg;
    }
    score.swap(next);
  }
  if (!(score.maxCoeff() > kNegInf)) throw std::domain_error("viterbi: history has zero probability");

  std::vector<Symbol> path(len);
  path[len - 1] = argmax_lowest(score);
  for (std::size_t t = len - 1; t > 0; --t) path[t - 1] = back[t * std::size_t(m) + std::size_t(path[t])];
  return path;
}

PredictiveDistribution viterbi_predict(const HmmParams& params, SymbolView observations) {
  const Symbol last = viterbi_path(params, observations).back();
  Eigen::VectorXd scores = (params.transition.row(last) * params.emission).transpose();
  return PredictiveDistribution::from_scores(scores.cwiseMax(0.0));
}

// ---------------------------------------------------------------------------
// Truncated-memory forward prediction

PredictiveDistribution truncated_forward_predict(const HmmParams& params, SymbolView observations,
                                                 std::size_t window) {
  return truncated_forward_predict(params, stationary_distribution(params.transition), observations, window);
}

PredictiveDistribution truncated_forward_predict(const HmmParams& params, const Eigen::VectorXd& stationary,
                                                 SymbolView observations, std::size_t window) {
  check_symbols(observations, params.num_obs());
  const auto& a = params.transition;
  const auto& b = params.emission;
  if (observations.empty()) {
    return PredictiveDistribution::from_scores((stationary.transpose() * b).transpose().cwiseMax(0.0));
  }
  const std::size_t span = window >= observations.size() - 1 ? observations.size() : window + 1;
  const SymbolView recent = observations.subspan(observations.size() - span);

  Eigen::RowVectorXd alpha = stationary.transpose().cwiseProduct(b.col(recent[0]).transpose());
  double norm = alpha.sum();
  if (!(norm > 0.0)) throw std::domain_error("truncated_forward: window has zero probability");
  alpha /= norm;
  for (std::size_t i = 1; i < recent.size(); ++i) {
    alpha = (alpha * a).cwiseProduct(b.col(recent[i]).transpose());
    norm = alpha.sum();
    if (!(norm > 0.0)) throw std::domain_error("truncated_forward: window has zero probability");
    alpha /= norm;
  }
  Eigen::VectorXd scores = ((alpha * a) * b).transpose();
  return PredictiveDistribution::from_scores(scores.cwiseMax(0.0));
}

// ---------------------------------------------------------------------------
// Baum-Welch

namespace {

struct EStep {
  double log_likelihood = 0.0;
  Eigen::VectorXd gamma_first;
  Eigen::MatrixXd xi_sum;          // sum_{t<T} xi_t
  Eigen::VectorXd gamma_head_sum;  // sum_{t<T} gamma_t
  Eigen::MatrixXd emission_counts;  // sum_t gamma_t(s) 1[o_t = v]
  Eigen::VectorXd gamma_sum;       // sum_t gamma_t
};

EStep expectation(const HmmParams& p, SymbolView obs) {
  const int m = p.num_states();
  const std::size_t len = obs.size();
  const auto& a = p.transition;
  const auto& b = p.emission;

  Eigen::MatrixXd alpha(m, len);
  std::vector<double> scale(len);
  alpha.col(0) = p.initial.cwiseProduct(b.col(obs[0]));
  for (std::size_t t = 0; t < len; ++t) {
    if (t > 0) alpha.col(t) = (a.transpose() * alpha.col(t - 1)).cwiseProduct(b.col(obs[t]));
    scale[t] = alpha.col(t).sum();
    if (!(scale[t] > 0.0)) throw std::domain_error("baum_welch: sequence has zero probability");
    alpha.col(t) /= scale[t];
  }

  Eigen::MatrixXd beta(m, len);
  beta.col(len - 1).setOnes();
  for (std::size_t t = len - 1; t > 0; --t) {
    beta.col(t - 1) = a * b.col(obs[t]).cwiseProduct(beta.col(t)) / scale[t];
  }

  EStep e;
  e.log_likelihood = 0.0;
  for (double c : scale) e.log_likelihood += std::log(c);
  e.xi_sum = Eigen::MatrixXd::Zero(m, m);
  e.gamma_head_sum = Eigen::VectorXd::Zero(m);
  e.gamma_sum = Eigen::VectorXd::Zero(m);
  e.emission_counts = Eigen::MatrixXd::Zero(m, b.cols());
  for (std::size_t t = 0; t < len; ++t) {
    const Eigen::VectorXd gamma = alpha.col(t).cwiseProduct(beta.col(t));
    if (t == 0) e.gamma_first = gamma;
    e.gamma_sum += gamma;
    e.emission_counts.col(obs[t]) += gamma;
    if (t + 1 < len) {
      e.gamma_head_sum += gamma;
      const Eigen::VectorXd right = b.col(obs[t + 1]).cwiseProduct(beta.col(t + 1)) / scale[t + 1];
      e.xi_sum += (alpha.col(t) * right.transpose()).cwiseProduct(a);
    }
  }
  return e;
}

void maximization(HmmParams& p, const EStep& e) {
  const int m = p.num_states();
  p.initial = e.gamma_first / e.gamma_first.sum();
  for (int s = 0; s < m; ++s) {
    if (e.gamma_head_sum(s) > 0.0) {
      Eigen::RowVectorXd row = e.xi_sum.row(s);
      const double total = row.sum();
      if (total > 0.0) p.transition.row(s) = row / total;
    }
    if (e.gamma_sum(s) > 0.0) {
      Eigen::RowVectorXd row = e.emission_counts.row(s);
      const double total = row.sum();
      if (total > 0.0) p.emission.row(s) = row / total;
    }
  }
}

Eigen::MatrixXd random_stochastic(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) out(i, j) = -std::log(1.0 - rng.uniform());
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

double log_likelihood(const HmmParams& params, SymbolView observations) {
  if (observations.empty()) return 0.0;
  check_symbols(observations, params.num_obs());
  return expectation(params, observations).log_likelihood;
}

HmmParams random_initial_params(int num_states, int num_obs, std::uint64_t seed) {
  Rng rng(seed);
  HmmParams p;
  p.initial = Eigen::VectorXd::Constant(num_states, 1.0 / double(num_states));
  p.transition = random_stochastic(num_states, num_states, rng);
  p.emission = random_stochastic(num_states, num_obs, rng);
  return p;
}

BaumWelchFit baum_welch_fit(SymbolView observations, int num_states, int num_obs,
                            const BaumWelchOptions& options) {
  if (num_states < 1 || num_obs < 1) throw std::invalid_argument("baum_welch: M and L must be positive");
  return baum_welch_fit_from(observations, random_initial_params(num_states, num_obs, options.init_seed),
                             options);
}

BaumWelchFit baum_welch_fit_from(SymbolView observations, HmmParams initial, const BaumWelchOptions& options) {
  if (observations.empty()) throw std::invalid_argument("baum_welch: sequence must be nonempty");
  require_valid(initial);
  check_symbols(observations, initial.num_obs());
  BaumWelchFit fit;
  fit.params = std::move(initial);

  const std::set<Symbol> distinct(observations.begin(), observations.end());
  if (distinct.size() == 1 && fit.params.num_states() > 1) {
    fit.degenerate = true;
    fit.warnings.push_back("sequence has a single distinct symbol; states are not identifiable");
  }

  const double length = double(observations.size());
  double previous = kNegInf;
  for (int iter = 0; iter < std::max(1, options.max_iters); ++iter) {
    const EStep e = expectation(fit.params, observations);
    fit.log_likelihoods.push_back(e.log_likelihood);
    if (iter > 0) {
      const double slack = 1e-10 * std::max(1.0, std::abs(previous));
      if (e.log_likelihood < previous - slack) ++fit.monotonicity_violations;
      if ((e.log_likelihood - previous) / length < options.tol) {
        fit.converged = true;
        break;
      }
    }
    previous = e.log_likelihood;
    maximization(fit.params, e);
    ++fit.iterations;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// n-gram

NgramModel::NgramModel(SymbolView history, int order, double delta, int num_obs)
    : order_(order), delta_(delta), num_obs_(num_obs) {
  if (order < 1) throw std::invalid_argument("ngram: order must be >= 1");
  if (!(delta > 0.0)) throw std::invalid_argument("ngram: smoothing must be positive");
  check_symbols(history, num_obs);
  const std::set<Symbol> seen(history.begin(), history.end());
  seen_.assign(seen.begin(), seen.end());
  const std::size_t ctx = std::size_t(order - 1);
  for (std::size_t t = ctx; t < history.size(); ++t) {
    std::vector<Symbol> context(history.begin() + std::ptrdiff_t(t - ctx), history.begin() + std::ptrdiff_t(t));
    context_counts_[context] += 1.0;
    auto& next = next_counts_[context];
    if (next.empty()) next.assign(std::size_t(num_obs), 0.0);
    next[std::size_t(history[t])] += 1.0;
  }
}

bool NgramModel::has_context(const std::vector<Symbol>& context) const {
  return context_counts_.count(context) > 0;
}

Eigen::VectorXd NgramModel::backoff() const {
  if (seen_.empty()) return Eigen::VectorXd::Constant(num_obs_, 1.0 / double(num_obs_));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(num_obs_);
  for (Symbol s : seen_) out(s) = 1.0 / double(seen_.size());
  return out;
}

Eigen::VectorXd NgramModel::distribution(const std::vector<Symbol>& context) const {
  const auto it = context_counts_.find(context);
  if (it == context_counts_.end()) return backoff();
  const auto& next = next_counts_.at(context);
  const double v = double(seen_.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(num_obs_);
  for (Symbol s : seen_) out(s) = (next[std::size_t(s)] + delta_) / (v * delta_ + it->second);
  return out / out.sum();
}

double NgramModel::probability(const std::vector<Symbol>& context, Symbol next) const {
  return distribution(context)(next);
}

PredictiveDistribution ngram_predict(SymbolView history, int order, double delta, int num_obs) {
  const NgramModel model(history, order, delta, num_obs);
  const std::size_t ctx = std::size_t(order - 1);
  if (history.size() < ctx) {
    return PredictiveDistribution::from_scores(model.backoff(), kFallbackUniform);
  }
  const std::vector<Symbol> context(history.end() - std::ptrdiff_t(ctx), history.end());
  const std::uint32_t flags = model.has_context(context) ? 0u : kFallbackUniform;
  return PredictiveDistribution::from_scores(model.distribution(context), flags);
}

// ---------------------------------------------------------------------------
// In-context prediction through an LLM completion source

PredictiveDistribution icl_predict(CompletionSource& client, const TokenCodec& codec, SymbolView observations,
                                   const std::string& prefix, IclDiagnostics* diagnostics) {
  const std::string prompt = prefix + codec.encode(observations);
  const TokenDistribution dist = client.next_token_distribution(prompt);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(codec.num_obs());
  double dropped = 0.0;
  for (const auto& [token, logprob] : dist.logprobs) {
    const Symbol s = codec.lookup(normalize_token(token));
    const double p = std::exp(logprob);
    if (s < 0) {
      dropped += p;
    } else {
      mass(s) += p;
    }
  }
  if (diagnostics) {
    diagnostics->dropped_mass = dropped;
    diagnostics->source = token_source_name(dist.source);
  }
  std::uint32_t flags = dropped > 0.0 ? kDroppedMass : 0u;
  if (!(mass.sum() > 0.0)) return PredictiveDistribution::uniform(codec.num_obs(), flags | kFallbackUniform);
  return PredictiveDistribution::from_scores(mass, flags);
}

}  // namespace hmmlab
