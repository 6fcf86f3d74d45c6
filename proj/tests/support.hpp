#pragma once

// Test-only helpers: random models and brute-force oracles that enumerate
// hidden paths directly, sharing no code with the library's recursions.

#include "hmmlab/hmm.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testing_support {

using hmmlab::HmmParams;
using hmmlab::Symbol;
using hmmlab::SymbolSeq;

inline Eigen::RowVectorXd random_simplex(int n, std::mt19937_64& g, double zero_prob = 0.0) {
  std::exponential_distribution<double> ex(1.0);
  std::bernoulli_distribution zero(zero_prob);
  Eigen::RowVectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = zero(g) ? 0.0 : ex(g) + 1e-3;
  if (v.sum() == 0.0) v(std::uniform_int_distribution<int>(0, n - 1)(g)) = 1.0;
  return v / v.sum();
}

inline HmmParams random_hmm(int m, int l, std::mt19937_64& g, double zero_prob = 0.0) {
  HmmParams p;
  p.initial = random_simplex(m, g).transpose();
  p.transition.resize(m, m);
  p.emission.resize(m, l);
  for (int i = 0; i < m; ++i) {
    p.transition.row(i) = random_simplex(m, g, zero_prob);
    p.emission.row(i) = random_simplex(l, g, zero_prob);
  }
  return p;
}

inline SymbolSeq random_sequence(int len, int l, std::mt19937_64& g) {
  std::uniform_int_distribution<int> d(0, l - 1);
  SymbolSeq s(static_cast<std::size_t>(len));
  for (auto& x : s) x = d(g);
  return s;
}

// Calls f(path, probability of path and observations) for every hidden path.
inline void for_each_path(const HmmParams& p, const SymbolSeq& obs,
                          const std::function<void(const std::vector<int>&, double)>& f) {
  const int m = p.num_states();
  const std::size_t t = obs.size();
  std::vector<int> path(t, 0);
  if (t == 0) {
    f(path, 1.0);
    return;
  }
  for (;;) {
    double pr = p.initial(path[0]) * p.emission(path[0], obs[0]);
    for (std::size_t i = 1; i < t; ++i) pr *= p.transition(path[i - 1], path[i]) * p.emission(path[i], obs[i]);
    f(path, pr);
    std::size_t k = 0;
    while (k < t && ++path[k] == m) path[k++] = 0;
    if (k == t) break;
  }
}

inline double brute_joint(const HmmParams& p, const SymbolSeq& obs) {
  double total = 0.0;
  for_each_path(p, obs, [&](const std::vector<int>&, double pr) { total += pr; });
  return total;
}

// P(O_{t+1} = . | O_{1:t}) by summing over every hidden path of length t+1.
inline Eigen::VectorXd brute_next(const HmmParams& p, const SymbolSeq& obs) {
  const int l = p.num_obs();
  Eigen::VectorXd out(l);
  SymbolSeq ext = obs;
  ext.push_back(0);
  for (int v = 0; v < l; ++v) {
    ext.back() = v;
    out(v) = brute_joint(p, ext);
  }
  return out / out.sum();
}

// Highest joint probability among paths ending in each state.
inline Eigen::VectorXd brute_best_by_final_state(const HmmParams& p, const SymbolSeq& obs) {
  Eigen::VectorXd best = Eigen::VectorXd::Zero(p.num_states());
  for_each_path(p, obs, [&](const std::vector<int>& path, double pr) {
    best(path.back()) = std::max(best(path.back()), pr);
  });
  return best;
}

// Stationary law by solving the linear system directly.
inline Eigen::VectorXd solve_stationary(const Eigen::MatrixXd& a) {
  const int m = int(a.rows());
  Eigen::MatrixXd sys = a.transpose() - Eigen::MatrixXd::Identity(m, m);
  sys.row(m - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  rhs(m - 1) = 1.0;
  return sys.fullPivLu().solve(rhs);
}

// Every sequence over [0, l) of length len.
inline std::vector<SymbolSeq> all_sequences(int len, int l) {
  std::vector<SymbolSeq> out;
  SymbolSeq s(std::size_t(len), 0);
  for (;;) {
    out.push_back(s);
    std::size_t k = 0;
    while (k < s.size() && ++s[k] == l) s[k++] = 0;
    if (k == s.size()) break;
  }
  return out;
}

inline double hellinger_ref(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) s += std::pow(std::sqrt(p(i)) - std::sqrt(q(i)), 2);
  return std::sqrt(s) / std::sqrt(2.0);
}

}  // namespace testing_support
