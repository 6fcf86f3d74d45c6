#include "hmmlab/metrics.hpp"

#include "hmmlab/errors.hpp"
#include "hmmlab/llm_bridge.hpp"
#include "hmmlab/parallel.hpp"
#include "hmmlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hmmlab {

double accuracy_at(const std::vector<PredictiveDistribution>& predictions, const std::vector<Symbol>& actuals) {
  if (predictions.size() != actuals.size()) {
    throw LengthMismatch("accuracy_at: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(actuals.size()) + " actuals");
  }
  if (predictions.empty()) throw LengthMismatch("accuracy_at: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < actuals.size(); ++i) hits += predictions[i].argmax_symbol == actuals[i];
  return double(hits) / double(actuals.size());
}

double hellinger(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw LengthMismatch("hellinger: vectors differ in length");
  if (p.size() == 0) throw LengthMismatch("hellinger: empty vectors");
  if (std::abs(p.sum() - 1.0) > 1e-6 || std::abs(q.sum() - 1.0) > 1e-6 || p.minCoeff() < 0.0 ||
      q.minCoeff() < 0.0) {
    throw NotNormalized("hellinger: inputs must be probability vectors");
  }
  const double sq = (p.cwiseSqrt() - q.cwiseSqrt()).squaredNorm();
  return std::min(1.0, std::sqrt(sq / 2.0));
}

CurveSummary convergence_summary(const std::vector<CurvePoint>& curve, const std::vector<CurvePoint>& reference,
                                 const std::string& reference_method) {
  if (curve.size() != reference.size() || curve.empty()) {
    throw GridMismatch("convergence_summary: curves have different grids");
  }
  for (std::size_t g = 0; g < curve.size(); ++g) {
    if (curve[g].context_len != reference[g].context_len) {
      throw GridMismatch("convergence_summary: context length " + std::to_string(curve[g].context_len) + " vs " +
                         std::to_string(reference[g].context_len));
    }
  }
  // a hair of slack so that an exact 0.025 gap counts despite round-off
  constexpr double slack = 1e-12;
  CurveSummary out;
  out.method = curve.front().method;
  out.reference_method = reference_method;
  for (std::size_t g = 0; g < curve.size(); ++g) {
    const double ref = reference[g].accuracy;
    const double acc = curve[g].accuracy;
    if (ref - acc <= kConvergenceGap + slack && acc >= kConvergenceRatio * ref - slack) {
      out.t_converge = curve[g].context_len;
      break;
    }
  }
  out.epsilon_gap = reference.back().accuracy - curve.back().accuracy;
  return out;
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= double(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / double(values.size() - 1))};
}

// ---------------------------------------------------------------------------

MethodSpec MethodSpec::viterbi() {
  MethodSpec m;
  m.name = "viterbi";
  m.kind = MethodKind::Viterbi;
  return m;
}

MethodSpec MethodSpec::truncated_forward(std::size_t window) {
  MethodSpec m;
  m.kind = MethodKind::TruncatedForward;
  m.window = window;
  m.name = window == kFullHistory ? "truncated_forward_full" : "truncated_forward_k" + std::to_string(window);
  return m;
}

MethodSpec MethodSpec::ngram(int order, double delta) {
  MethodSpec m;
  m.kind = MethodKind::Ngram;
  m.order = order;
  m.delta = delta;
  m.name = order == 2 ? "bigram" : "ngram_n" + std::to_string(order);
  return m;
}

MethodSpec MethodSpec::baum_welch(int states) {
  MethodSpec m;
  m.kind = MethodKind::BaumWelch;
  m.states = states;
  m.name = "baum_welch";
  return m;
}

MethodSpec MethodSpec::spectral(int states) {
  MethodSpec m;
  m.kind = MethodKind::Spectral;
  m.states = states;
  m.name = "spectral";
  return m;
}

MethodSpec MethodSpec::icl(CodecScheme codec) {
  MethodSpec m;
  m.kind = MethodKind::Icl;
  m.codec = codec;
  m.name = "icl_" + TokenCodec::scheme_name(codec);
  return m;
}

void MethodDiagnostics::merge(const MethodDiagnostics& o) {
  predictions += o.predictions;
  fallback_uniform += o.fallback_uniform;
  clamp_fired += o.clamp_fired;
  numerical_blowup += o.numerical_blowup;
  rank_deficient += o.rank_deficient;
  dropped_mass_events += o.dropped_mass_events;
  dropped_mass_total += o.dropped_mass_total;
  em_monotonicity_violations += o.em_monotonicity_violations;
  em_not_converged += o.em_not_converged;
  for (const auto& [k, v] : o.sources) sources[k] += v;
}

namespace {

struct MethodRuntime {
  const MethodSpec* spec = nullptr;
  int states = 0;
  std::optional<TokenCodec> codec;
};

PredictiveDistribution predict_one(const MethodRuntime& rt, const HmmParams* params, const Eigen::VectorXd& mu,
                                   SymbolView history, int num_obs, const EvaluationOptions& opt,
                                   std::uint64_t fit_seed, MethodDiagnostics& d) {
  const MethodSpec& m = *rt.spec;
  switch (m.kind) {
    case MethodKind::Viterbi:
      return viterbi_predict(*params, history);
    case MethodKind::TruncatedForward:
      return truncated_forward_predict(*params, mu, history, m.window);
    case MethodKind::Ngram:
      return ngram_predict(history, m.order, m.delta, num_obs);
    case MethodKind::BaumWelch: {
      BaumWelchOptions bw;
      bw.max_iters = m.max_iters;
      bw.tol = m.tol;
      bw.init_seed = fit_seed;
      const BaumWelchFit fit = baum_welch_fit(history, rt.states, num_obs, bw);
      d.em_monotonicity_violations += fit.monotonicity_violations;
      d.em_not_converged += !fit.converged;
      if (m.filtered_prediction) {
        return PredictiveDistribution::from_scores(oracle_forward(fit.params, history).cwiseMax(0.0));
      }
      return viterbi_predict(fit.params, history);
    }
    case MethodKind::Spectral: {
      int burn_in = 0;
      if (m.burn_in) {
        burn_in = *m.burn_in;
      } else if (opt.true_lambda2 && !opt.start_is_stationary) {
        // a chain that never mixes gets the longest burn-in the cap allows
        burn_in = *opt.true_lambda2 < 1.0 - 1e-12 ? default_spectral_burn_in(*opt.true_lambda2)
                                                  : std::numeric_limits<int>::max();
      }
      burn_in = std::min<int>(burn_in, int(history.size() / 2));
      if (history.size() < std::size_t(burn_in) + 3) return PredictiveDistribution::uniform(num_obs, kFallbackUniform);
      try {
        const SpectralParams sp = spectral_fit(history, rt.states, num_obs, burn_in, m.clamp);
        return spectral_predict(sp, history);
      } catch (const RankDeficient&) {
        return PredictiveDistribution::uniform(num_obs, kRankDeficient | kFallbackUniform);
      }
    }
    case MethodKind::Icl: {
      IclDiagnostics icl;
      PredictiveDistribution p = icl_predict(*opt.llm, *rt.codec, history, m.prefix, &icl);
      d.dropped_mass_total += icl.dropped_mass;
      ++d.sources[icl.source];
      return p;
    }
  }
  throw std::logic_error("unknown method kind");
}

void tally_flags(const PredictiveDistribution& p, MethodDiagnostics& d) {
  ++d.predictions;
  d.fallback_uniform += (p.flags & kFallbackUniform) != 0;
  d.clamp_fired += (p.flags & kClampFired) != 0;
  d.numerical_blowup += (p.flags & kNumericalBlowup) != 0;
  d.rank_deficient += (p.flags & kRankDeficient) != 0;
  d.dropped_mass_events += (p.flags & kDroppedMass) != 0;
}

void check_grid(const std::vector<int>& grid) {
  if (grid.empty()) throw std::invalid_argument("context grid is empty");
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (grid[g] < 1) throw std::invalid_argument("context grid values must be >= 1");
    if (g && grid[g] <= grid[g - 1]) throw std::invalid_argument("context grid must be strictly increasing");
  }
}

}  // namespace

Evaluation evaluate_sequences(const HmmParams* params, const std::vector<SymbolSeq>& sequences, int num_obs,
                              const std::vector<MethodSpec>& methods, const std::vector<int>& grid,
                              const EvaluationOptions& options) {
  check_grid(grid);
  if (params) {
    require_valid(*params);
    if (params->num_obs() != num_obs) throw std::invalid_argument("evaluate: alphabet does not match params");
  }
  for (const auto& seq : sequences) check_symbols(seq, num_obs);

  std::vector<MethodRuntime> runtimes;
  for (const auto& m : methods) {
    MethodRuntime rt;
    rt.spec = &m;
    if (m.needs_true_params() && !params) {
      throw std::invalid_argument("method " + m.name + " needs true parameters");
    }
    if (m.kind == MethodKind::BaumWelch || m.kind == MethodKind::Spectral) {
      rt.states = m.states > 0 ? m.states : params ? params->num_states() : 0;
      if (rt.states < 1) throw std::invalid_argument("method " + m.name + " needs a state count");
      if (m.kind == MethodKind::Spectral && rt.states > num_obs) {
        throw std::invalid_argument("method " + m.name + ": spectral learning needs L >= M");
      }
    }
    if (m.kind == MethodKind::Icl) {
      if (!options.llm) throw std::invalid_argument("method " + m.name + " needs an LLM endpoint or fixture");
      rt.codec.emplace(m.codec, num_obs);
    }
    runtimes.push_back(std::move(rt));
  }

  // only the truncated forward predictor needs mu; periodic chains are fine otherwise
  Eigen::VectorXd mu;
  const bool needs_mu = std::any_of(methods.begin(), methods.end(),
                                    [](const MethodSpec& m) { return m.kind == MethodKind::TruncatedForward; });
  if (params && needs_mu) mu = stationary_distribution(params->transition);

  const std::size_t nm = methods.size();
  const std::size_t ng = grid.size();
  const std::size_t ns = sequences.size();
  // slot (method, grid, sequence); NaN marks a sequence too short for the grid point
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> correct(nm * ng * ns, nan);
  std::vector<double> dist(nm * ng * ns, nan);
  std::vector<MethodDiagnostics> diags(nm * ns);
  auto slot = [&](std::size_t m, std::size_t g, std::size_t i) { return (m * ng + g) * ns + i; };

  parallel_for(ns, options.threads, [&](std::size_t i) {
    const SymbolSeq& seq = sequences[i];
    const std::uint64_t seq_seed = derive_seed(options.seed, i);
    for (std::size_t g = 0; g < ng; ++g) {
      const std::size_t t = std::size_t(grid[g]);
      if (t >= seq.size()) continue;
      const SymbolView history(seq.data(), t);
      const Symbol actual = seq[t];
      Eigen::VectorXd oracle;
      if (params) {
        oracle = oracle_forward(*params, history);
        oracle /= oracle.sum();
      }
      for (std::size_t m = 0; m < nm; ++m) {
        MethodDiagnostics& d = diags[m * ns + i];
        const std::uint64_t fit_seed = derive_seed(derive_seed(seq_seed, m), t);
        PredictiveDistribution p;
        try {
          p = predict_one(runtimes[m], params, mu, history, num_obs, options, fit_seed, d);
        } catch (const std::domain_error&) {
          // history impossible under the model the method holds
          p = PredictiveDistribution::uniform(num_obs, kFallbackUniform);
        }
        tally_flags(p, d);
        correct[slot(m, g, i)] = p.argmax_symbol == actual ? 1.0 : 0.0;
        if (params) dist[slot(m, g, i)] = hellinger(p.probs, oracle);
      }
    }
  });

  Evaluation out;
  for (std::size_t m = 0; m < nm; ++m) {
    MethodDiagnostics total;
    for (std::size_t i = 0; i < ns; ++i) total.merge(diags[m * ns + i]);
    out.diagnostics[methods[m].name] = total;
    for (std::size_t g = 0; g < ng; ++g) {
      std::vector<double> acc;
      std::vector<double> hell;
      for (std::size_t i = 0; i < ns; ++i) {
        const double c = correct[slot(m, g, i)];
        if (std::isnan(c)) continue;
        acc.push_back(c);
        if (params) hell.push_back(dist[slot(m, g, i)]);
      }
      if (acc.empty()) continue;
      CurvePoint pt;
      pt.method = methods[m].name;
      pt.context_len = grid[g];
      std::tie(pt.accuracy, pt.acc_std) = mean_and_std(acc);
      if (params) {
        const auto [mean, sd] = mean_and_std(hell);
        pt.mean_hellinger = mean;
        pt.hell_std = sd;
      }
      pt.n_samples = int(acc.size());
      out.points.push_back(std::move(pt));
    }
  }
  return out;
}

Evaluation evaluate_setting(const HmmParams& params, const TrajectoryBatch& batch,
                            const std::vector<MethodSpec>& methods, const std::vector<int>& grid,
                            const EvaluationOptions& options) {
  for (int t : grid) {
    if (t >= batch.length()) {
      throw GridExceedsLength("context length " + std::to_string(t) + " is not below sequence length " +
                              std::to_string(batch.length()));
    }
  }
  return evaluate_sequences(&params, batch_observations(batch), params.num_obs(), methods, grid, options);
}

}  // namespace hmmlab
