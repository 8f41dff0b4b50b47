// Command-line front end: clear, simulate, feeder-gen, learn, sweep, oracle.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "p2p/analytic_clearing.hpp"
#include "p2p/output.hpp"
#include "p2p/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNotConverged = 3;

bool is_validation(p2p::ErrorCode code) {
  using p2p::ErrorCode;
  switch (code) {
    case ErrorCode::DuplicateId:
    case ErrorCode::NonBipartiteEdge:
    case ErrorCode::DanglingEdge:
    case ErrorCode::WeightOnNonEdge:
    case ErrorCode::MissingPair:
    case ErrorCode::InvalidProsumer:
    case ErrorCode::EmptySet:
    case ErrorCode::InvalidConfig:
    case ErrorCode::NonFiniteInput:
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError:
    case ErrorCode::RangeError:
    case ErrorCode::EmptyFeasibleInterval:
      return true;
    default:
      return false;
  }
}

struct Common {
  std::string config;
  std::string out = "out";
  std::string method;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iter;
  bool trace_messages = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_method) {
  cmd->add_option("--config", c.config, "scenario JSON file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory");
  if (with_method) {
    cmd->add_option("--method", c.method, "oracle | admm | decentralized")
        ->check(CLI::IsMember({"oracle", "admm", "decentralized"}));
  }
  cmd->add_option("--seed", c.seed, "override the scenario seed");
  cmd->add_option("--max-iter", c.max_iter, "ADMM iteration cap")->check(CLI::PositiveNumber);
  cmd->add_flag("--trace-messages", c.trace_messages, "write the decentralized message log");
}

p2p::RunOptions run_options(const Common& c) {
  p2p::RunOptions o;
  if (!c.method.empty()) o.method = p2p::method_from_string(c.method);
  o.max_iter = c.max_iter;
  o.trace_messages = c.trace_messages;
  return o;
}

p2p::ScenarioSpec load(const Common& c) {
  auto spec = p2p::load_scenario(c.config);
  if (c.seed) spec.seed = *c.seed;
  return spec;
}

void print_report(const p2p::RunReport& r) {
  for (const auto& s : r.steps) {
    std::printf("step %zu  %s  iterations %d\n", s.step, std::string(p2p::to_string(s.solution.status)).c_str(),
                s.solution.iterations);
    for (const auto& c : s.solution.clusters) {
      std::ostringstream members;
      for (std::size_t k = 0; k < c.members.size(); ++k) members << (k ? "," : "") << c.members[k];
      std::printf("  cluster {%s}  price %.6f\n", members.str().c_str(), c.price);
    }
  }
}

int finish(const p2p::RunReport& r) {
  print_report(r);
  return r.all_converged ? kExitOk : kExitNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer electricity market clearing"};
  app.require_subcommand(1);

  Common clear_opts;
  std::size_t clear_step = 0;
  auto* clear = app.add_subcommand("clear", "clear one step of a scenario");
  add_common(clear, clear_opts, true);
  clear->add_option("--step", clear_step, "step index");

  Common sim_opts;
  auto* simulate = app.add_subcommand("simulate", "run every step of a scenario");
  add_common(simulate, sim_opts, true);

  Common learn_opts;
  auto* learn = app.add_subcommand("learn", "run a scenario with its learning policy");
  add_common(learn, learn_opts, true);

  Common oracle_opts;
  auto* oracle = app.add_subcommand("oracle", "exact clearing only");
  add_common(oracle, oracle_opts, false);

  int feeder_nodes = 55;
  std::uint64_t feeder_seed = 1;
  std::string feeder_out = "feeder.json";
  auto* feeder = app.add_subcommand("feeder-gen", "write a synthetic feeder scenario");
  feeder->add_option("--nodes", feeder_nodes, "node count")->check(CLI::Range(2, 100000));
  feeder->add_option("--seed", feeder_seed, "generator seed");
  feeder->add_option("--out", feeder_out, "output JSON file");

  std::vector<int> sweep_sizes{55, 165, 330};
  std::uint64_t sweep_seed = 1;
  std::string sweep_out = "sweep";
  std::optional<int> sweep_max_iter;
  auto* sweep = app.add_subcommand("sweep", "ADMM timing over feeder sizes");
  sweep->add_option("--sizes", sweep_sizes, "node counts")->delimiter(',');
  sweep->add_option("--seed", sweep_seed, "generator seed");
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_option("--max-iter", sweep_max_iter, "ADMM iteration cap")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*clear) {
      auto spec = load(clear_opts);
      if (clear_step >= spec.num_steps()) {
        throw p2p::MarketError(p2p::ErrorCode::ValidationError, "--step is out of range");
      }
      if (!spec.steps.empty()) spec.steps = {spec.steps[clear_step]};
      spec.learning.reset();
      return finish(p2p::run_scenario(spec, clear_opts.out, run_options(clear_opts)));
    }
    if (*simulate) {
      return finish(p2p::run_scenario(load(sim_opts), sim_opts.out, run_options(sim_opts)));
    }
    if (*learn) {
      auto spec = load(learn_opts);
      if (!spec.learning) spec.learning = p2p::LearningSpec{};
      return finish(p2p::run_scenario(spec, learn_opts.out, run_options(learn_opts)));
    }
    if (*oracle) {
      auto opts = run_options(oracle_opts);
      opts.method = p2p::Method::Oracle;
      return finish(p2p::run_scenario(load(oracle_opts), oracle_opts.out, opts));
    }
    if (*feeder) {
      const auto spec = p2p::generate_feeder(p2p::feeder_of_size(feeder_nodes, feeder_seed));
      p2p::write_scenario(spec, feeder_out);
      std::printf("wrote %s (%d nodes)\n", feeder_out.c_str(), feeder_nodes);
      return kExitOk;
    }
    if (*sweep) {
      const auto rows = p2p::run_sweep(sweep_sizes, sweep_seed, sweep_max_iter);
      std::filesystem::create_directories(sweep_out);
      std::ostringstream csv;
      csv << "nodes,sellers,buyers,edges,iterations,status,wall_seconds\n";
      bool ok = true;
      for (const auto& r : rows) {
        csv << r.nodes << ',' << r.sellers << ',' << r.buyers << ',' << r.edges << ',' << r.iterations << ','
            << p2p::to_string(r.status) << ',' << r.wall_seconds << '\n';
        std::printf("%4d nodes  %4zu edges  %6d iterations  %.3f s\n", r.nodes, r.edges, r.iterations, r.wall_seconds);
        ok = ok && r.status == p2p::SolveStatus::Converged;
      }
      p2p::write_text_file(std::filesystem::path(sweep_out) / "sweep.csv", csv.str());
      return ok ? kExitOk : kExitNotConverged;
    }
  } catch (const p2p::MarketError& e) {
    std::cerr << "error: " << p2p::to_string(e.code()) << ": " << e.what() << '\n';
    return is_validation(e.code()) ? kExitValidation : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
