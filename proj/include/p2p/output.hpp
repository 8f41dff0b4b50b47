#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "p2p/market_model.hpp"
#include "p2p/solution.hpp"

namespace p2p {

/// pair_i,pair_j,power_kw,price; one row per directed pair, ids not indices.
void write_solution_csv(std::ostream& out, const Market& market, const MarketSolution& sol);

/// prosumer,role,total_kw,success
void write_totals_csv(std::ostream& out, const Market& market, const MarketSolution& sol);

/// iter,primal_residual,dual_residual,eps_pri,eps_dual
void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace);

struct SolutionRow {
  int pair_i = 0;
  int pair_j = 0;
  double power_kw = 0.0;
  double price = 0.0;
};

/// Reads back a file written by write_solution_csv. Throws ParseError.
std::vector<SolutionRow> read_solution_csv(const std::filesystem::path& path);

/// Writes through a temporary file in the same directory.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace p2p
