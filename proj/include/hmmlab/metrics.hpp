#pragma once

#include "hmmlab/hmm.hpp"
#include "hmmlab/predictors.hpp"
#include "hmmlab/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hmmlab {

class CompletionSource;

struct CurvePoint {
  std::string method;
  int context_len = 0;
  double accuracy = 0.0;
  double acc_std = 0.0;
  std::optional<double> mean_hellinger;  // absent when there are no true parameters
  std::optional<double> hell_std;
  int n_samples = 0;
};

struct CurveSummary {
  std::string method;
  std::optional<int> t_converge;  // nullopt prints as "none"
  double epsilon_gap = 0.0;
  std::string reference_method = "viterbi";
};

inline constexpr double kConvergenceGap = 0.025;
inline constexpr double kConvergenceRatio = 0.95;

// Fraction of positions whose argmax equals the realized symbol.
double accuracy_at(const std::vector<PredictiveDistribution>& predictions, const std::vector<Symbol>& actuals);

double hellinger(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// curve and reference must list the same context lengths in the same order.
CurveSummary convergence_summary(const std::vector<CurvePoint>& curve, const std::vector<CurvePoint>& reference,
                                 const std::string& reference_method = "viterbi");

// ---------------------------------------------------------------------------
// Methods evaluated by the harness.

enum class MethodKind { Viterbi, TruncatedForward, Ngram, BaumWelch, Spectral, Icl };

struct MethodSpec {
  std::string name;
  MethodKind kind = MethodKind::Viterbi;
  std::size_t window = kFullHistory;  // truncated forward
  int order = 2;                      // n-gram
  double delta = 1.0;
  int states = 0;  // Baum-Welch / spectral; 0 means the true state count
  int max_iters = 500;
  double tol = 1e-6;
  bool filtered_prediction = false;  // Baum-Welch: posterior instead of Viterbi final state
  std::optional<int> burn_in;        // spectral; nullopt = automatic
  double clamp = 1e-10;
  CodecScheme codec = CodecScheme::Abc;
  std::string prefix;  // ICL prompt prefix

  bool needs_true_params() const { return kind == MethodKind::Viterbi || kind == MethodKind::TruncatedForward; }

  static MethodSpec viterbi();
  static MethodSpec truncated_forward(std::size_t window);
  static MethodSpec ngram(int order, double delta = 1.0);
  static MethodSpec baum_welch(int states = 0);
  static MethodSpec spectral(int states = 0);
  static MethodSpec icl(CodecScheme codec);
};

struct MethodDiagnostics {
  long predictions = 0;
  long fallback_uniform = 0;
  long clamp_fired = 0;
  long numerical_blowup = 0;
  long rank_deficient = 0;
  long dropped_mass_events = 0;
  double dropped_mass_total = 0.0;
  long em_monotonicity_violations = 0;
  long em_not_converged = 0;
  std::map<std::string, long> sources;  // ICL: live / cache / fixture

  void merge(const MethodDiagnostics& other);
  bool spectral_trouble() const { return clamp_fired + numerical_blowup + rank_deficient > 0; }
};

struct EvaluationOptions {
  int threads = 1;
  std::uint64_t seed = 0;              // feeds Baum-Welch initializations
  CompletionSource* llm = nullptr;     // required by ICL methods
  std::optional<double> true_lambda2;  // enables automatic spectral burn-in
  bool start_is_stationary = true;
};

struct Evaluation {
  std::vector<CurvePoint> points;  // method-major, then grid order
  std::map<std::string, MethodDiagnostics> diagnostics;
};

// Every method predicts o_{t+1} from o_{1:t} for each grid t and each
// sequence long enough. Hellinger is taken against oracle_forward when
// params is non-null. Results do not depend on options.threads.
Evaluation evaluate_sequences(const HmmParams* params, const std::vector<SymbolSeq>& sequences, int num_obs,
                              const std::vector<MethodSpec>& methods, const std::vector<int>& grid,
                              const EvaluationOptions& options = {});

// Batch form. Throws GridExceedsLength when a grid value is not below T.
Evaluation evaluate_setting(const HmmParams& params, const TrajectoryBatch& batch,
                            const std::vector<MethodSpec>& methods, const std::vector<int>& grid,
                            const EvaluationOptions& options = {});

// Sample mean and standard deviation (n - 1 denominator, 0 for n = 1).
std::pair<double, double> mean_and_std(const std::vector<double>& values);

}  // namespace hmmlab
