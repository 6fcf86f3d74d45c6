#include "hmmlab/hmm.hpp"

#include "hmmlab/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hmmlab {

namespace {

constexpr double kUnitGapTolerance = 1e-10;
constexpr double kPowerTolerance = 1e-12;
constexpr int kPowerIterationCap = 100000;

void check_stochastic(const Eigen::MatrixXd& m, const std::string& name,
                      std::vector<Violation>& out) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (!std::isfinite(v)) {
        out.push_back({Violation::Kind::NonFinite, name, int(i), int(j), v});
        continue;
      }
      if (v < 0.0) out.push_back({Violation::Kind::Negative, name, int(i), int(j), v});
      if (v > 1.0) out.push_back({Violation::Kind::AboveOne, name, int(i), int(j), v});
      sum += v;
    }
    if (std::abs(sum - 1.0) > kStochasticTolerance) {
      out.push_back({Violation::Kind::RowSum, name, int(i), -1, sum});
    }
  }
}

// Stationary vector by iterating p <- p A from uniform. The lazy variant
// (A + I) / 2 shares A's fixed points and converges for periodic chains too.
Eigen::VectorXd power_iteration(const Eigen::MatrixXd& transition, bool lazy) {
  const Eigen::Index m = transition.rows();
  Eigen::MatrixXd step = transition;
  if (lazy) step = 0.5 * (transition + Eigen::MatrixXd::Identity(m, m));
  Eigen::RowVectorXd p = Eigen::RowVectorXd::Constant(m, 1.0 / double(m));
  for (int it = 0; it < kPowerIterationCap; ++it) {
    Eigen::RowVectorXd next = p * step;
    next /= next.sum();
    const double delta = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (delta < kPowerTolerance) break;
  }
  return p.transpose();
}

double stationary_residual(const Eigen::MatrixXd& transition, const Eigen::VectorXd& mu) {
  return (mu.transpose() * transition - mu.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace

std::string Violation::describe() const {
  std::ostringstream os;
  os << matrix;
  if (row >= 0) os << "[" << row;
  if (col >= 0) os << "," << col;
  if (row >= 0) os << "]";
  switch (kind) {
    case Kind::Shape: os << ": shape mismatch"; break;
    case Kind::Negative: os << ": negative entry " << magnitude; break;
    case Kind::AboveOne: os << ": entry above one " << magnitude; break;
    case Kind::RowSum: os << ": row sums to " << magnitude; break;
    case Kind::InitialSum: os << ": sums to " << magnitude; break;
    case Kind::NonFinite: os << ": non-finite entry"; break;
  }
  return os.str();
}

std::vector<Violation> validate(const HmmParams& params) {
  std::vector<Violation> out;
  const auto& a = params.transition;
  const auto& b = params.emission;
  const auto& pi = params.initial;
  if (a.rows() < 1 || a.rows() != a.cols()) {
    out.push_back({Violation::Kind::Shape, "A", -1, -1, double(a.cols())});
  }
  if (b.rows() != a.rows() || b.cols() < 1) {
    out.push_back({Violation::Kind::Shape, "B", -1, -1, double(b.rows())});
  }
  if (pi.size() != a.rows()) {
    out.push_back({Violation::Kind::Shape, "pi", -1, -1, double(pi.size())});
  }
  if (!out.empty()) return out;

  check_stochastic(a, "A", out);
  check_stochastic(b, "B", out);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    const double v = pi(i);
    if (!std::isfinite(v)) {
      out.push_back({Violation::Kind::NonFinite, "pi", int(i), -1, v});
      continue;
    }
    if (v < 0.0) out.push_back({Violation::Kind::Negative, "pi", int(i), -1, v});
    if (v > 1.0) out.push_back({Violation::Kind::AboveOne, "pi", int(i), -1, v});
    sum += v;
  }
  if (std::abs(sum - 1.0) > kStochasticTolerance) {
    out.push_back({Violation::Kind::InitialSum, "pi", -1, -1, sum});
  }
  return out;
}

void require_valid(const HmmParams& params) {
  const auto violations = validate(params);
  if (violations.empty()) return;
  std::string msg = "invalid HMM parameters:";
  for (const auto& v : violations) msg += " " + v.describe() + ";";
  throw std::invalid_argument(msg);
}

std::vector<double> eigenvalue_moduli(const Eigen::MatrixXd& transition) {
  if (transition.rows() == 1) return {std::abs(transition(0, 0))};
  Eigen::EigenSolver<Eigen::MatrixXd> solver(transition, false);
  std::vector<double> moduli;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    moduli.push_back(std::abs(solver.eigenvalues()(i)));
  }
  std::sort(moduli.begin(), moduli.end(), std::greater<>());
  return moduli;
}

bool is_ergodic(const Eigen::MatrixXd& transition) {
  if (transition.rows() == 1) return true;
  const auto moduli = eigenvalue_moduli(transition);
  return moduli[1] < 1.0 - kUnitGapTolerance;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition) {
  const Eigen::Index m = transition.rows();
  if (m != transition.cols() || m < 1) {
    throw std::invalid_argument("stationary_distribution: transition matrix must be square");
  }
  if (m == 1) return Eigen::VectorXd::Ones(1);

  Eigen::EigenSolver<Eigen::MatrixXd> solver(transition.transpose());
  const auto& values = solver.eigenvalues();
  std::vector<double> moduli(values.size());
  Eigen::Index unit = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    moduli[i] = std::abs(values(i));
    if (std::abs(values(i) - 1.0) < std::abs(values(unit) - 1.0)) unit = i;
  }
  std::vector<double> sorted = moduli;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  if (sorted[1] >= 1.0 - kUnitGapTolerance) {
    throw NonErgodic("stationary_distribution: unit eigenvalue is not simple (second modulus " +
                     std::to_string(sorted[1]) + ")");
  }

  Eigen::VectorXd mu = solver.eigenvectors().col(unit).real();
  const double total = mu.sum();
  bool usable = std::abs(total) > 1e-12;
  if (usable) {
    mu /= total;
    usable = mu.minCoeff() > -1e-12 && stationary_residual(transition, mu) <= 1e-10;
  }
  if (!usable) mu = power_iteration(transition, false);
  mu = mu.cwiseMax(0.0);
  mu /= mu.sum();
  return mu;
}

double mixing_rate(const Eigen::MatrixXd& transition) {
  if (transition.rows() <= 1) return 0.0;
  const auto moduli = eigenvalue_moduli(transition);
  return std::clamp(moduli[1], 0.0, 1.0);
}

double row_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    const double p = row(j);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Entropies entropies(const HmmParams& params, const Eigen::VectorXd& stationary) {
  Entropies e;
  const int m = params.num_states();
  const int l = params.num_obs();
  for (int i = 0; i < m; ++i) {
    e.transition += stationary(i) * row_entropy(params.transition.row(i));
    e.emission += stationary(i) * row_entropy(params.emission.row(i));
  }
  const double log_m = std::log(double(m));
  const double log_l = std::log(double(l));
  e.normalized_transition = m > 1 ? e.transition / log_m : 0.0;
  e.normalized_emission = l > 1 ? e.emission / log_l : 0.0;
  e.normalized_joint = (m > 1 || l > 1) ? (e.transition + e.emission) / (log_m + log_l) : 0.0;
  return e;
}

ChainAnalysis analyze(const HmmParams& params) {
  ChainAnalysis out;
  out.ergodic = is_ergodic(params.transition);
  out.stationary = out.ergodic ? stationary_distribution(params.transition)
                               : power_iteration(params.transition, true);
  out.mixing_rate = mixing_rate(params.transition);
  out.entropy = entropies(params, out.stationary);
  return out;
}

void check_symbols(SymbolView observations, int alphabet_size) {
  for (Symbol s : observations) {
    if (s < 0 || s >= alphabet_size) throw SymbolOutOfRange(s, alphabet_size);
  }
}

Eigen::VectorXd oracle_forward(const HmmParams& params, SymbolView observations) {
  check_symbols(observations, params.num_obs());
  const auto& a = params.transition;
  const auto& b = params.emission;
  if (observations.empty()) {
    Eigen::VectorXd out = (params.initial.transpose() * b).transpose();
    return out / out.sum();
  }
  Eigen::RowVectorXd alpha = params.initial.transpose().cwiseProduct(b.col(observations[0]).transpose());
  double norm = alpha.sum();
  if (norm <= 0.0) throw std::domain_error("oracle_forward: history has zero probability");
  alpha /= norm;
  for (std::size_t t = 1; t < observations.size(); ++t) {
    alpha = (alpha * a).cwiseProduct(b.col(observations[t]).transpose());
    norm = alpha.sum();
    if (norm <= 0.0) throw std::domain_error("oracle_forward: history has zero probability");
    alpha /= norm;
  }
  Eigen::VectorXd out = ((alpha * a) * b).transpose();
  return out / out.sum();
}

}  // namespace hmmlab
