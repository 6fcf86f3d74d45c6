#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hmmlab {

// Observation and state symbols are 0-based inside the library. Files and
// CLI output use 1-based symbols; conversion happens only at I/O boundaries.
using Symbol = int;
using SymbolSeq = std::vector<Symbol>;
using SymbolView = std::span<const Symbol>;

// Finite-alphabet HMM lambda = (pi, A, B).
struct HmmParams {
  Eigen::VectorXd initial;     // pi, length M
  Eigen::MatrixXd transition;  // A, M x M, row-stochastic
  Eigen::MatrixXd emission;    // B, M x L, row-stochastic

  int num_states() const { return static_cast<int>(transition.rows()); }
  int num_obs() const { return static_cast<int>(emission.cols()); }
};

struct Violation {
  enum class Kind { Shape, Negative, AboveOne, RowSum, InitialSum, NonFinite };
  Kind kind;
  std::string matrix;  // "pi", "A" or "B"
  int row = -1;
  int col = -1;
  double magnitude = 0.0;  // the offending entry or sum

  std::string describe() const;
};

inline constexpr double kStochasticTolerance = 1e-9;

// Every invariant violation of params; empty iff valid.
std::vector<Violation> validate(const HmmParams& params);

// Throws std::invalid_argument listing the violations when params is invalid.
void require_valid(const HmmParams& params);

struct Entropies {
  double transition = 0.0;             // H(A) in nats
  double emission = 0.0;               // H(B, mu) in nats
  double normalized_transition = 0.0;  // H(A) / ln M
  double normalized_emission = 0.0;    // H(B, mu) / ln L
  double normalized_joint = 0.0;       // (H(A) + H(B, mu)) / (ln M + ln L)
};

struct ChainAnalysis {
  Eigen::VectorXd stationary;
  double mixing_rate = 0.0;
  Entropies entropy;
  bool ergodic = false;
};

// Eigenvalue moduli of A sorted in descending order.
std::vector<double> eigenvalue_moduli(const Eigen::MatrixXd& transition);

// True when the unit eigenvalue is simple and no other eigenvalue lies on the
// unit circle (irreducible and aperiodic on the recurrent class).
bool is_ergodic(const Eigen::MatrixXd& transition);

// mu with mu A = mu. Eigendecomposition of A^T, power-iteration fallback.
// Throws NonErgodic when the modulus gap at 1 is below 1e-10.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition);

// Second-largest eigenvalue modulus of A (0 for a single state).
double mixing_rate(const Eigen::MatrixXd& transition);

// Stationary-weighted row entropies, 0 ln 0 := 0.
Entropies entropies(const HmmParams& params, const Eigen::VectorXd& stationary);

// Shannon entropy in nats of one probability row.
double row_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& row);

// Full analysis. For non-ergodic chains the stationary vector is a fixed
// point of the lazy chain started from uniform (one of many).
ChainAnalysis analyze(const HmmParams& params);

// Throws SymbolOutOfRange if any symbol lies outside [0, alphabet_size).
void check_symbols(SymbolView observations, int alphabet_size);

// Exact P(O_{t+1} | O_{1:t}) under the true parameters: forward filtering
// over the whole history with per-step normalization. Empty history gives
// the law of O_1, i.e. pi B.
Eigen::VectorXd oracle_forward(const HmmParams& params, SymbolView observations);

}  // namespace hmmlab
