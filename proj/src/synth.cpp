#include "hmmlab/synth.hpp"

#include "hmmlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace hmmlab {

namespace {

constexpr double kLogFloor = 1e-12;


double transition_entropy_of(const Eigen::MatrixXd& a, const Eigen::VectorXd& mu) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double p = a(i, j);
      if (p > 0.0) h -= mu(i) * p * std::log(std::max(p, kLogFloor));
    }
  }
  return h;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits, double temperature) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    const double top = logits.row(j).maxCoeff();
    Eigen::RowVectorXd e = ((logits.row(j).array() - top) / temperature).exp().matrix();
    out.row(j) = e / e.sum();
  }
  return out;
}

Eigen::MatrixXd one_hot_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    Eigen::Index best = 0;
    logits.row(j).maxCoeff(&best);
    out(j, best) = 1.0;
  }
  return out;
}

double weighted_entropy(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mu) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < rows.rows(); ++j) h += mu(j) * row_entropy(rows.row(j));
  return h;
}

}  // namespace

void check_spec(const SynthesisSpec& spec) {
  if (spec.num_states < 1 || spec.num_obs < 1) {
    throw std::invalid_argument("synthesis: M and L must be positive");
  }
  if (!(spec.target_lambda2 >= 0.0 && spec.target_lambda2 < 1.0)) {
    throw std::invalid_argument("synthesis: target lambda2 must lie in [0, 1)");
  }
  if (spec.stationary.kind == StationaryMode::Kind::BetaSkew && !(spec.stationary.beta >= 1.0)) {
    throw std::invalid_argument("synthesis: beta skew requires beta >= 1");
  }
  if (spec.target_transition_entropy) {
    const double h = *spec.target_transition_entropy;
    if (!(h >= 0.0) || h > std::log(double(spec.num_states)) + 1e-12) {
      throw std::invalid_argument("synthesis: target H(A) must lie in [0, ln M]");
    }
  }
  const double hb = spec.target_emission_entropy;
  if (!(hb >= 0.0) || hb > std::log(double(spec.num_obs)) + 1e-9) {
    throw std::invalid_argument("synthesis: target H(B) must lie in [0, ln L]");
  }
}

Eigen::VectorXd construct_stationary(int num_states, const StationaryMode& mode) {
  if (num_states < 1) throw std::invalid_argument("construct_stationary: M must be positive");
  const double m = double(num_states);
  if (mode.kind == StationaryMode::Kind::Uniform) return Eigen::VectorXd::Constant(num_states, 1.0 / m);
  if (!(mode.beta >= 1.0)) throw std::invalid_argument("construct_stationary: beta must be >= 1");
  // Beta(1, beta) has CDF 1 - (1 - x)^beta; bin i receives F(i/M) - F((i-1)/M).
  Eigen::VectorXd mu(num_states);
  for (int i = 0; i < num_states; ++i) {
    const double lo = double(i) / m;
    const double hi = double(i + 1) / m;
    mu(i) = std::pow(1.0 - lo, mode.beta) - std::pow(1.0 - hi, mode.beta);
  }
  return mu / mu.sum();
}

// ---------------------------------------------------------------------------
// TransitionObjective

struct TransitionObjective::Parts {
  Eigen::MatrixXd v;
  Eigen::MatrixXd u;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd a;
};

TransitionObjective::TransitionObjective(Eigen::VectorXd stationary, double lambda2,
                                         std::optional<double> target_entropy)
    : mu_(std::move(stationary)), lambda2_(lambda2), target_entropy_(target_entropy) {
  if (mu_.size() < 2) throw std::invalid_argument("TransitionObjective: needs at least two states");
}

int TransitionObjective::num_variables() const {
  const int m = num_states();
  return m * (m - 1) + (m - 2);
}

TransitionObjective::Parts TransitionObjective::forward(const Eigen::VectorXd& theta) const {
  const int m = num_states();
  if (theta.size() != num_variables()) throw std::invalid_argument("TransitionObjective: bad theta size");
  Parts p;
  const Eigen::Map<const Eigen::MatrixXd> z(theta.data(), m, m - 1);
  const Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(m, m) - Eigen::VectorXd::Ones(m) * mu_.transpose();
  p.v.resize(m, m);
  p.v.col(0).setOnes();
  p.v.rightCols(m - 1) = proj * z;
  p.u = p.v.partialPivLu().inverse();
  p.eigenvalues.resize(m);
  p.eigenvalues(0) = 1.0;
  p.eigenvalues(1) = lambda2_;
  for (int k = 2; k < m; ++k) p.eigenvalues(k) = theta(m * (m - 1) + (k - 2));
  p.a = p.v * p.eigenvalues.asDiagonal() * p.u;
  return p;
}

Eigen::MatrixXd TransitionObjective::transition(const Eigen::VectorXd& theta) const {
  return forward(theta).a;
}

double TransitionObjective::value(const Eigen::VectorXd& theta, Eigen::VectorXd* gradient) const {
  const int m = num_states();
  const Parts p = forward(theta);
  const Eigen::MatrixXd& a = p.a;

  Eigen::MatrixXd grad_a = Eigen::MatrixXd::Zero(m, m);
  double total = 0.0;

  // Negativity hinge.
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (a(i, j) < 0.0) {
        total -= a(i, j);
        grad_a(i, j) -= 1.0;
      }
    }
  }

  // Row sums.
  const Eigen::VectorXd row_err = a.rowwise().sum() - Eigen::VectorXd::Ones(m);
  total += row_err.squaredNorm();
  grad_a.colwise() += 2.0 * row_err;

  // Inverse consistency.
  const Eigen::MatrixXd inv_err = p.v * p.u - Eigen::MatrixXd::Identity(m, m);
  total += inv_err.squaredNorm();

  // Eigenvalue magnitudes beyond lambda2.
  Eigen::VectorXd grad_eig = Eigen::VectorXd::Zero(m);
  for (int k = 2; k < m; ++k) {
    const double excess = std::abs(p.eigenvalues(k)) - lambda2_;
    if (excess > 0.0) {
      total += excess;
      grad_eig(k) += p.eigenvalues(k) >= 0.0 ? 1.0 : -1.0;
    }
  }

  if (target_entropy_) {
    const double h = transition_entropy_of(a, mu_);
    const double diff = h - *target_entropy_;
    total += diff * diff;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (a(i, j) > 0.0) {
          grad_a(i, j) += 2.0 * diff * (-mu_(i) * (std::log(std::max(a(i, j), kLogFloor)) + 1.0));
        }
      }
    }
  }

  if (gradient == nullptr) return total;

  // A = V D U with U = V^{-1}.
  const auto d = p.eigenvalues.asDiagonal();
  Eigen::MatrixXd grad_v = grad_a * p.u.transpose() * d;
  Eigen::MatrixXd grad_u = d * p.v.transpose() * grad_a;
  const Eigen::MatrixXd grad_d = p.v.transpose() * grad_a * p.u.transpose();
  for (int k = 2; k < m; ++k) grad_eig(k) += grad_d(k, k);

  grad_v += 2.0 * inv_err * p.u.transpose();
  grad_u += 2.0 * p.v.transpose() * inv_err;
  grad_v -= p.u.transpose() * grad_u * p.u.transpose();

  const Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(m, m) - Eigen::VectorXd::Ones(m) * mu_.transpose();
  const Eigen::MatrixXd grad_z = proj.transpose() * grad_v.rightCols(m - 1);

  gradient->resize(num_variables());
  Eigen::Map<Eigen::MatrixXd>(gradient->data(), m, m - 1) = grad_z;
  for (int k = 2; k < m; ++k) (*gradient)(m * (m - 1) + (k - 2)) = grad_eig(k);
  return total;
}

// ---------------------------------------------------------------------------
// construct_transition

namespace {

struct Candidate {
  Eigen::MatrixXd a;
  int iteration = -1;
  double score = std::numeric_limits<double>::infinity();
};

// Clamps solver noise, renormalizes, then fills the report from an
// independent re-analysis of the matrix.
SynthesisReport verify(Eigen::MatrixXd& a, const Eigen::VectorXd& mu, const SynthesisSpec& spec,
                       const SynthesisOptions& options) {
  SynthesisReport r;
  r.max_row_sum_error = (a.rowwise().sum().array() - 1.0).abs().maxCoeff();
  r.max_negativity = std::max(0.0, -a.minCoeff());
  const bool clamp_ok = a.minCoeff() >= options.negativity_floor;
  a = a.cwiseMax(0.0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) a.row(i) /= a.row(i).sum();
  r.achieved_lambda2 = mixing_rate(a);
  r.stationary_error = (mu.transpose() * a - mu.transpose()).cwiseAbs().maxCoeff();
  r.achieved_transition_entropy = transition_entropy_of(a, mu);
  bool entropy_ok = true;
  if (spec.target_transition_entropy) {
    entropy_ok = std::abs(r.achieved_transition_entropy - *spec.target_transition_entropy) <=
                 options.entropy_band;
  }
  r.accepted = clamp_ok && entropy_ok && r.max_row_sum_error <= options.row_sum_tolerance &&
               std::abs(r.achieved_lambda2 - spec.target_lambda2) <= options.lambda2_tolerance &&
               r.stationary_error <= options.stationary_tolerance && std::isfinite(a.sum());
  return r;
}

// Distance of a failed report from acceptance, used to pick the best failure.
double rejection_distance(const SynthesisReport& r, const SynthesisSpec& spec) {
  double d = r.max_negativity + r.max_row_sum_error + r.stationary_error +
             std::abs(r.achieved_lambda2 - spec.target_lambda2);
  if (spec.target_transition_entropy) {
    d += std::abs(r.achieved_transition_entropy - *spec.target_transition_entropy);
  }
  return std::isfinite(d) ? d : std::numeric_limits<double>::infinity();
}

Candidate optimize_once(const TransitionObjective& objective, const SynthesisSpec& spec,
                        const SynthesisOptions& options, std::uint64_t seed) {
  const int m = objective.num_states();
  const int n = objective.num_variables();
  const int first_eig = m * (m - 1);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd theta(n);
  for (int i = 0; i < first_eig; ++i) theta(i) = normal(rng.engine());
  for (int i = first_eig; i < n; ++i) theta(i) = spec.target_lambda2 * (2.0 * rng.uniform() - 1.0);

  Candidate best;
  Candidate last;
  // Tracks the best iterate that already meets the hard constraints; Adam
  // with a constant step keeps moving once the entropy term is active.
  auto consider = [&](int iteration) {
    Eigen::MatrixXd a = objective.transition(theta);
    if (!a.allFinite()) return;
    last.a = a;
    last.iteration = iteration;
    if (a.minCoeff() < options.negativity_floor) return;
    if ((a.rowwise().sum().array() - 1.0).abs().maxCoeff() > options.row_sum_tolerance) return;
    for (int k = first_eig; k < n; ++k) {
      if (std::abs(theta(k)) > spec.target_lambda2 + 0.5 * options.lambda2_tolerance) return;
    }
    double score = 0.0;
    if (spec.target_transition_entropy) {
      score = std::abs(transition_entropy_of(a, objective.stationary()) -
                       *spec.target_transition_entropy);
    }
    if (score <= best.score) best = {std::move(a), iteration, score};
  };

  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  Eigen::VectorXd first = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd second = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad(n);
  double bias1 = 1.0;
  double bias2 = 1.0;
  consider(0);
  for (int it = 1; it <= options.adam_iterations; ++it) {
    objective.value(theta, &grad);
    if (!grad.allFinite()) break;
    first = beta1 * first + (1.0 - beta1) * grad;
    second = beta2 * second + (1.0 - beta2) * grad.cwiseProduct(grad);
    bias1 *= beta1;
    bias2 *= beta2;
    const Eigen::VectorXd m_hat = first / (1.0 - bias1);
    const Eigen::VectorXd v_hat = second / (1.0 - bias2);
    theta -= options.learning_rate * m_hat.cwiseQuotient((v_hat.array().sqrt() + eps).matrix());
    consider(it);
  }
  if (best.iteration < 0) return last;
  return best;
}

}  // namespace

TransitionResult construct_transition(const SynthesisSpec& spec, const SynthesisOptions& options) {
  check_spec(spec);
  if (spec.num_states < 2) throw std::invalid_argument("construct_transition: requires M >= 2");
  const Eigen::VectorXd mu = construct_stationary(spec.num_states, spec.stationary);
  const TransitionObjective objective(mu, spec.target_lambda2, spec.target_transition_entropy);

  SynthesisReport best_failure;
  double best_distance = std::numeric_limits<double>::infinity();
  const int attempts = std::max(1, options.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    const std::uint64_t seed = spec.seed + std::uint64_t(attempt);
    Candidate c = optimize_once(objective, spec, options, seed);
    if (c.iteration < 0) continue;
    SynthesisReport r = verify(c.a, mu, spec, options);
    r.iterations_used = c.iteration;
    r.attempts = attempt + 1;
    r.seed_used = seed;
    if (r.accepted) return {std::move(c.a), std::move(r)};
    const double d = rejection_distance(r, spec);
    if (d < best_distance || best_distance == std::numeric_limits<double>::infinity()) {
      best_distance = d;
      best_failure = r;
    }
  }
  best_failure.attempts = attempts;
  throw SynthesisFailed("construct_transition: no accepted matrix after " + std::to_string(attempts) +
                            " attempts",
                        best_failure);
}

// ---------------------------------------------------------------------------
// construct_emission

EmissionResult construct_emission(int num_states, int num_obs, const Eigen::VectorXd& stationary,
                                  double target_entropy, std::uint64_t seed) {
  if (num_states < 1 || num_obs < 1) throw std::invalid_argument("construct_emission: M, L must be positive");
  if (stationary.size() != num_states || stationary.minCoeff() <= 0.0) {
    throw std::invalid_argument("construct_emission: stationary vector must be strictly positive");
  }
  if (!(target_entropy >= 0.0)) throw std::invalid_argument("construct_emission: target must be >= 0");
  const double max_entropy = std::log(double(num_obs));
  if (target_entropy > max_entropy + 1e-9) {
    throw EntropyUnreachable("construct_emission: target " + std::to_string(target_entropy) +
                             " exceeds ln L = " + std::to_string(max_entropy));
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd logits(num_states, num_obs);
  for (int j = 0; j < num_states; ++j) {
    for (int l = 0; l < num_obs; ++l) logits(j, l) = normal(rng.engine());
  }
  if (num_obs >= num_states) {
    std::vector<bool> taken(num_obs, false);
    for (int j = 0; j < num_states; ++j) {
      Eigen::Index top = 0;
      logits.row(j).maxCoeff(&top);
      if (taken[top]) {
        int replacement = -1;
        for (int l = 0; l < num_obs; ++l) {
          if (!taken[l] && (replacement < 0 || logits(j, l) > logits(j, replacement))) replacement = l;
        }
        std::swap(logits(j, top), logits(j, replacement));
        top = replacement;
      }
      taken[top] = true;
    }
  }

  EmissionResult out;
  if (num_obs == 1 || target_entropy <= 1e-12) {
    out.emission = one_hot_rows(logits);
    out.temperature = 0.0;
  } else if (target_entropy >= max_entropy - 1e-9) {
    out.emission = Eigen::MatrixXd::Constant(num_states, num_obs, 1.0 / double(num_obs));
    out.temperature = std::numeric_limits<double>::infinity();
  } else {
    double lo = std::log(1e-6);
    double hi = std::log(1e6);
    for (int it = 0; it < 50; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (weighted_entropy(softmax_rows(logits, std::exp(mid)), stationary) < target_entropy) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    out.temperature = std::exp(0.5 * (lo + hi));
    out.emission = softmax_rows(logits, out.temperature);
  }
  out.achieved_entropy = weighted_entropy(out.emission, stationary);
  if (std::abs(out.achieved_entropy - target_entropy) > 1e-3) {
    throw EntropyUnreachable("construct_emission: bisection missed target by " +
                             std::to_string(std::abs(out.achieved_entropy - target_entropy)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// build_setting

Setting build_setting(const SynthesisSpec& spec, const SynthesisOptions& options) {
  check_spec(spec);
  const int m = spec.num_states;
  const Eigen::VectorXd mu = construct_stationary(m, spec.stationary);

  Setting out;
  if (m == 1) {
    out.params.transition = Eigen::MatrixXd::Ones(1, 1);
    out.report.accepted = true;
    out.report.attempts = 1;
    out.report.seed_used = spec.seed;
    if (spec.target_lambda2 != 0.0) {
      out.report.warnings.push_back("single-state chain: lambda2 target ignored");
    }
    if (spec.target_transition_entropy && *spec.target_transition_entropy != 0.0) {
      out.report.warnings.push_back("single-state chain: H(A) target ignored");
    }
  } else {
    TransitionResult t = construct_transition(spec, options);
    out.params.transition = std::move(t.transition);
    out.report = std::move(t.report);
  }

  const EmissionResult e =
      construct_emission(m, spec.num_obs, mu, spec.target_emission_entropy, derive_seed(spec.seed, 0xB));
  out.params.emission = e.emission;
  out.report.emission_temperature = e.temperature;
  out.report.achieved_emission_entropy = e.achieved_entropy;

  if (spec.init == InitMode::Uniform) {
    out.params.initial = Eigen::VectorXd::Constant(m, 1.0 / double(m));
  } else {
    out.params.initial = Eigen::VectorXd::Zero(m);
    out.params.initial(0) = 1.0;
  }
  require_valid(out.params);
  out.analysis = analyze(out.params);
  return out;
}

}  // namespace hmmlab
