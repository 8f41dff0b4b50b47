#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "p2p/admm.hpp"
#include "p2p/decentralized.hpp"
#include "p2p/learning.hpp"
#include "p2p/market_model.hpp"
#include "p2p/solution.hpp"

namespace p2p {

enum class Method { Oracle, Admm, Decentralized };

std::string_view to_string(Method method) noexcept;
/// Throws ValidationError.
Method method_from_string(std::string_view text);

/// Prosumer row as written in a scenario file. Bounds are the raw values;
/// zero-extension happens when a market is built.
struct ProsumerSpec {
  int id = 0;
  Role role = Role::Buyer;
  double a = 0.0;
  double b = 0.0;
  double p_tr_min = 0.0;
  double p_tr_max = 0.0;

  bool operator==(const ProsumerSpec&) const = default;
};

/// Per-step change to one prosumer. Unset fields keep the base value.
struct ProsumerOverride {
  int id = 0;
  std::optional<Role> role;
  std::optional<double> a;
  std::optional<double> b;
  std::optional<double> p_tr_min;
  std::optional<double> p_tr_max;

  bool operator==(const ProsumerOverride&) const = default;
};

/// Limits on the change of a prosumer's total from the previous step.
struct RampLimit {
  int id = 0;
  double ramp_min = -std::numeric_limits<double>::infinity();
  double ramp_max = std::numeric_limits<double>::infinity();

  bool operator==(const RampLimit&) const = default;
};

struct StepSpec {
  std::vector<ProsumerOverride> overrides;
  std::optional<std::vector<std::pair<int, int>>> edges;  ///< replaces the base edge set
  std::optional<bool> complete_bipartite;
  std::vector<RampLimit> ramps;

  bool operator==(const StepSpec&) const = default;
};

enum class LearningMode { SuccessfulTrading, BoostVolume };

struct LearningSpec {
  LearningPolicy policy;
  LearningMode mode = LearningMode::SuccessfulTrading;
  std::set<int> participants;     ///< empty = all
  bool inner_uses_method = false;  ///< false: oracle inside the loop, `method` only to confirm

  bool operator==(const LearningSpec&) const = default;
};

struct ScenarioSpec {
  std::string name;
  std::vector<ProsumerSpec> prosumers;
  bool complete_bipartite = false;
  std::vector<std::pair<int, int>> edges;
  WeightMap weights;
  AdmmConfig admm;
  Method method = Method::Admm;
  std::optional<LearningSpec> learning;
  std::vector<StepSpec> steps;  ///< empty = one step with the base market
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t num_steps() const noexcept { return steps.empty() ? 1 : steps.size(); }
  bool operator==(const ScenarioSpec&) const = default;
};

/// Throws ParseError, ValidationError.
ScenarioSpec scenario_from_json(const nlohmann::json& doc);
nlohmann::json scenario_to_json(const ScenarioSpec& spec);

/// Reads and validates a scenario file. Throws ParseError, ValidationError.
ScenarioSpec load_scenario(const std::filesystem::path& path);
void write_scenario(const ScenarioSpec& spec, const std::filesystem::path& path);

/// Checks cross-references and builds every step once. Throws ValidationError.
void validate_scenario(const ScenarioSpec& spec);

/// [max(lo, ramp_min + previous), min(hi, ramp_max + previous)].
/// Throws RangeError if ramp_min > ramp_max, EmptyFeasibleInterval if empty.
std::pair<double, double> merge_ramp_bounds(double p_tr_min, double p_tr_max, double previous_total, double ramp_min,
                                            double ramp_max);

/// Market of step `t`. With `previous_totals` (indexed like the sorted
/// prosumers) ramp limits of the step are merged into the bounds.
Market build_step_market(const ScenarioSpec& spec, std::size_t t,
                         const std::vector<double>* previous_totals = nullptr);

struct FeederSpec {
  int nodes = 55;
  int solar_nodes = 25;
  double a_min = 0.005;
  double a_max = 0.009;
  double b_min = 12.4;
  double b_max = 31.2;
  double solar_peak_kw = 5.5;
  double solar_node_max_demand_kw = 3.5;
  int steps = 24;
  std::uint64_t seed = 1;
};

/// Feeder with the given node count; solar counts follow the 25-of-55,
/// 75-of-165 and 150-of-330 splits for the standard sizes.
FeederSpec feeder_of_size(int nodes, std::uint64_t seed = 1);

/// Hourly synthetic feeder market, step 12 is noon. Roles follow the sign
/// of generation minus demand; bounds are the net position. Throws RangeError.
ScenarioSpec generate_feeder(const FeederSpec& spec);

struct ClearOptions {
  DecentralizedOptions decentralized;
};

struct ClearOutcome {
  MarketSolution solution;
  std::optional<MessageStats> messages;
  std::vector<Message> message_trace;
};

ClearOutcome clear_market(const Market& market, Method method, const AdmmConfig& config,
                          const ClearOptions& options = {});

struct RunOptions {
  std::optional<Method> method;
  std::optional<int> max_iter;
  bool trace_messages = false;
};

struct StepReport {
  std::size_t step = 0;
  MarketSolution solution;
  std::optional<LearningResult> learning;
  std::optional<MessageStats> messages;
  double wall_seconds = 0.0;
};

struct RunReport {
  std::vector<StepReport> steps;
  bool all_converged = true;
  double wall_seconds = 0.0;
};

/// Clears every step in order and writes solution_t<k>.csv, totals_t<k>.csv,
/// trace_t<k>.csv, optional messages_t<k>.csv and learning_t<k>.csv, and
/// summary.json into `outdir`.
RunReport run_scenario(const ScenarioSpec& spec, const std::filesystem::path& outdir, const RunOptions& options = {});

struct SweepRow {
  int nodes = 0;
  std::size_t sellers = 0;
  std::size_t buyers = 0;
  std::size_t edges = 0;
  int iterations = 0;
  SolveStatus status = SolveStatus::Converged;
  double wall_seconds = 0.0;
};

/// Noon step of feeders of the given sizes cleared with the ADMM using the
/// generated feeder's settings.
std::vector<SweepRow> run_sweep(const std::vector<int>& sizes, std::uint64_t seed,
                                std::optional<int> max_iter = std::nullopt);

}  // namespace p2p
