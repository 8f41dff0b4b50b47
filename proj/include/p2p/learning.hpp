#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <vector>

#include "p2p/market_model.hpp"
#include "p2p/solution.hpp"

namespace p2p {

struct LearningPolicy {
  double delta_b = 0.5;  ///< b step per round, currency/kW
  double gamma = 2.0;    ///< a is divided by gamma when boosting volume
  int max_rounds = 20;
  double success_threshold = kTradeThreshold;

  /// Throws InvalidConfig.
  void validate() const;

  bool operator==(const LearningPolicy&) const = default;
};

using ClearFn = std::function<MarketSolution(const Market&)>;

/// One clearing inside a learning loop.
struct LearningRound {
  int round = 0;
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> totals;
  std::vector<bool> success;
};

struct LearningResult {
  Market market;  ///< parameters after the last adjustment that was cleared
  int rounds = 0;  ///< number of parameter adjustments performed
  bool converged = false;
  int best_round = 0;  ///< round with the most successful prosumers (earliest on ties)
  std::vector<LearningRound> history;
  MarketSolution solution;  ///< clearing of `market`
  std::optional<MarketSolution> confirmation;
};

/// Repeatedly clears; every failed buyer lowers b by delta_b and every
/// failed seller raises it, until all succeed or max_rounds adjustments.
/// Only ids in `participants` adapt (empty = everybody). If `confirm` is
/// set, the final market is cleared once more with it. When the round
/// budget runs out, the best round's market is returned with
/// converged = false.
LearningResult learn_successful_trading(const Market& market, const LearningPolicy& policy, const ClearFn& clear,
                                        const ClearFn& confirm = {}, const std::set<int>& participants = {});

struct BoostResult {
  Market market;
  std::vector<double> totals_before;
  std::vector<double> totals_after;
  MarketSolution before;
  MarketSolution after;
  /// True if every opted-in prosumer that was interior before and after
  /// kept or grew |total|. Reported, not enforced.
  bool interior_nondecreasing = true;
};

/// Single pass of a <- a / gamma for every id in `opted_in` (empty = all),
/// clearing before and after.
BoostResult learn_boost_volume(const Market& market, const LearningPolicy& policy, const ClearFn& clear,
                               const std::set<int>& opted_in = {});

/// CSV with header round,prosumer,b,a,total,success.
void write_learning_history(std::ostream& out, const Market& market, const std::vector<LearningRound>& history);

}  // namespace p2p
