#include "hmmlab/predictors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hmmlab {

namespace {

constexpr double kRankFloor = 1e-12;
constexpr double kBlowupFloor = 1e-300;

}  // namespace

int default_spectral_burn_in(double lambda2) {
  if (!(lambda2 >= 0.0 && lambda2 < 1.0)) throw std::invalid_argument("burn-in: lambda2 must lie in [0, 1)");
  return int(std::ceil(10.0 / (1.0 - lambda2) - 1e-9));
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rcond) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = sv.size() ? rcond * sv(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

SpectralParams spectral_fit(SymbolView observations, int num_states, int num_obs, int burn_in,
                            double clamp_floor) {
  if (num_states < 1 || num_obs < 1) throw std::invalid_argument("spectral_fit: M and L must be positive");
  if (num_states > num_obs) throw std::invalid_argument("spectral_fit: requires L >= M");
  if (burn_in < 0) throw std::invalid_argument("spectral_fit: burn-in must be nonnegative");
  if (observations.size() < std::size_t(burn_in) + 3) {
    throw std::invalid_argument("spectral_fit: sequence shorter than burn-in + 3");
  }
  check_symbols(observations, num_obs);
  const SymbolView obs = observations.subspan(std::size_t(burn_in));
  const std::size_t n = obs.size();
  const int l = num_obs;

  SpectralParams sp;
  sp.burn_in_used = burn_in;
  sp.clamp_floor = clamp_floor;
  sp.unigram = Eigen::VectorXd::Zero(l);
  sp.bigram = Eigen::MatrixXd::Zero(l, l);
  std::vector<Eigen::MatrixXd> trigram(std::size_t(l), Eigen::MatrixXd::Zero(l, l));
  for (std::size_t k = 0; k < n; ++k) {
    sp.unigram(obs[k]) += 1.0;
    if (k >= 1) sp.bigram(obs[k], obs[k - 1]) += 1.0;
    if (k >= 2) trigram[std::size_t(obs[k - 1])](obs[k], obs[k - 2]) += 1.0;
  }
  sp.unigram /= double(n);
  sp.bigram /= double(n - 1);
  for (auto& t : trigram) t /= double(n - 2);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sp.bigram, Eigen::ComputeThinU);
  sp.diagnostics.sigma_min = svd.singularValues()(num_states - 1);
  if (sp.diagnostics.sigma_min < kRankFloor) {
    throw RankDeficient("spectral_fit: sigma_M of the bigram matrix is " +
                            std::to_string(sp.diagnostics.sigma_min),
                        sp.diagnostics);
  }
  sp.projection = svd.matrixU().leftCols(num_states);
  const Eigen::MatrixXd& u = sp.projection;

  sp.initial_belief = u.transpose() * sp.unigram;
  sp.normalizer = pseudo_inverse(sp.bigram.transpose() * u) * sp.unigram;
  const Eigen::MatrixXd right = pseudo_inverse(u.transpose() * sp.bigram);
  sp.operators.reserve(std::size_t(l));
  for (int o = 0; o < l; ++o) sp.operators.push_back(u.transpose() * trigram[std::size_t(o)] * right);
  return sp;
}

PredictiveDistribution spectral_predict(const SpectralParams& sp, SymbolView observations,
                                        SpectralDiagnostics* diagnostics) {
  check_symbols(observations, sp.num_obs());
  SpectralDiagnostics local;
  SpectralDiagnostics& diag = diagnostics ? *diagnostics : local;
  const int l = sp.num_obs();

  Eigen::VectorXd belief = sp.initial_belief;
  for (Symbol o : observations) {
    Eigen::VectorXd next = sp.operators[std::size_t(o)] * belief;
    const double norm = sp.normalizer.dot(next);
    diag.min_belief_normalizer = std::min(diag.min_belief_normalizer, std::abs(norm));
    if (!(std::abs(norm) >= kBlowupFloor) || !std::isfinite(norm)) {
      return PredictiveDistribution::uniform(l, kNumericalBlowup | kFallbackUniform);
    }
    belief = next / norm;
  }

  Eigen::VectorXd scores(l);
  bool clamped = false;
  for (int o = 0; o < l; ++o) {
    double s = sp.normalizer.dot(sp.operators[std::size_t(o)] * belief);
    if (!std::isfinite(s)) return PredictiveDistribution::uniform(l, kNumericalBlowup | kFallbackUniform);
    if (s < sp.clamp_floor) {
      s = sp.clamp_floor;
      clamped = true;
    }
    scores(o) = s;
  }
  if (clamped) ++diag.clamp_events;
  return PredictiveDistribution::from_scores(scores, clamped ? kClampFired : 0u);
}

}  // namespace hmmlab
