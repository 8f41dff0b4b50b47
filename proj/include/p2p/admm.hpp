#pragma once

#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "p2p/market_model.hpp"
#include "p2p/solution.hpp"

namespace p2p {

/// Penalty, proximal and stopping parameters of the parallel proximal ADMM.
/// Convergence requires phi > rho(1/mu1 - 1), psi > rho(1/mu2 - 1) and
/// mu1 + mu2 < 2 - kappa.
struct AdmmConfig {
  double rho = 0.02;
  double phi = 0.021;
  double psi = 0.021;
  double kappa = 0.99;
  double mu1 = 0.5;
  double mu2 = 0.5;
  double eps_abs = 1e-4;
  double eps_rel = 1e-3;
  int max_iter = 20000;
  int workers = 1;  ///< threads for the per-prosumer and per-pair steps

  /// Throws InvalidConfig.
  void validate() const;

  bool operator==(const AdmmConfig&) const = default;
};

/// Iterates of the ADMM. All vectors use the market's pair layout.
struct AdmmState {
  PairVector p;
  PairVector x;
  PairVector u;
  PairVector x_prev;
  PairVector lambda;
  int iter = 0;
  std::vector<TraceRecord> trace;

  static AdmmState zeros(const TradingGraph& graph);
};

/// Euclidean projection of y onto {x : sign(x_k) matches role, lo <= sum x <= hi}.
/// Writes into `out` (same length as y).
void project_prosumer(std::span<const double> y, Role role, double lo, double hi, std::span<double> out);

/// X-update: per-prosumer projection of (rho (P + u) + psi X) / (rho + psi).
PairVector x_update(const AdmmState& state, const AdmmConfig& config, const Market& market);

/// v_ij = b_i + d_ij + rho (u_ij - X_ij) - phi P_ij.
PairVector compute_v(const AdmmState& state, const AdmmConfig& config, const Market& market);

/// Right-hand side sum_j v_ji - sum_j v_ij per prosumer.
std::vector<double> totals_rhs(const PairVector& v, const TradingGraph& graph);

/// Factorises (L + Gamma), Gamma = (rho + phi) diag(1/a_i), once per market
/// and solves it for q_i = 2 a_i P_i,tr.
class TotalsSolver {
 public:
  TotalsSolver(const Market& market, const AdmmConfig& config);

  std::vector<double> solve(const PairVector& v) const;
  std::vector<double> solve_rhs(std::span<const double> rhs) const;

  const Eigen::MatrixXd& matrix() const noexcept { return system_; }

 private:
  const TradingGraph* graph_;
  Eigen::MatrixXd system_;
  Eigen::LLT<Eigen::MatrixXd> factor_;
};

std::vector<double> solve_totals(const PairVector& v, const Market& market, const AdmmConfig& config);

struct PUpdate {
  PairVector p;
  PairVector lambda;
};

/// P_ij = (v_ji + q_j - v_ij - q_i) / 2(rho + phi), lambda_ij = (v_ji + q_j + v_ij + q_i) / 2.
/// Antisymmetry of P and symmetry of lambda hold bit-exactly.
PUpdate p_update(const PairVector& v, std::span<const double> q, const AdmmConfig& config, const Market& market);

/// u + kappa rho (P - X).
PairVector u_update(const AdmmState& state, const AdmmConfig& config, const PairVector& p_next,
                    const PairVector& x_next);

enum class Convergence { Converged, Continue };

struct ConvergenceCheck {
  Convergence status = Convergence::Continue;
  TraceRecord record;
};

/// Residuals of the current iterate against the mixed absolute/relative
/// tolerances; `num_prosumers` is n in sqrt(n + m).
ConvergenceCheck check_convergence(const AdmmState& state, const AdmmConfig& config, std::size_t num_prosumers);

struct AdmmRun {
  MarketSolution solution;
  AdmmState state;  ///< final iterate; pass back as `initial` to warm-start
};

/// Runs the ADMM from zero (or from `initial`) until convergence or
/// max_iter. On MaxIterExceeded the iterate with the smallest scaled
/// residual is returned. Throws InvalidConfig.
AdmmRun run(const Market& market, const AdmmConfig& config, const AdmmState* initial = nullptr);

}  // namespace p2p
