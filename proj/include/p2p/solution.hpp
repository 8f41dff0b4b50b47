#pragma once

#include <string>
#include <vector>

#include "p2p/market_model.hpp"

namespace p2p {

enum class SolveStatus { Exact, Converged, MaxIterExceeded };

std::string_view to_string(SolveStatus status) noexcept;

/// One ADMM iteration's stopping quantities.
struct TraceRecord {
  int iter = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double eps_pri = 0.0;
  double eps_dual = 0.0;
};

/// A connected component of the realized-trade graph and its price.
/// `price` is the mean of lambda_ij over realized pairs; `price_spread` is
/// max - min over the same pairs.
struct Cluster {
  std::vector<int> members;
  double price = 0.0;
  double price_spread = 0.0;
};

struct MarketSolution {
  PairVector pair_powers;  ///< P_ij, positive when i buys from j
  PairVector pair_prices;  ///< lambda_ij
  std::vector<double> totals;
  std::vector<bool> success;
  std::vector<Cluster> clusters;
  std::vector<int> non_traders;
  int iterations = 0;
  SolveStatus status = SolveStatus::Exact;
  std::vector<TraceRecord> trace;
  std::string method;

  bool all_successful() const;
};

/// Fills totals, success flags and clusters from pair powers and prices.
MarketSolution summarize(const Market& market, PairVector powers, PairVector prices,
                         double threshold = kTradeThreshold);

}  // namespace p2p
