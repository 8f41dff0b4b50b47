#include "p2p/output.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

namespace p2p {

namespace {

constexpr int kDigits = 17;

}  // namespace

void write_solution_csv(std::ostream& out, const Market& market, const MarketSolution& sol) {
  const auto& g = market.graph();
  out << "pair_i,pair_j,power_kw,price\n" << std::setprecision(kDigits);
  for (std::size_t k = 0; k < g.num_pairs(); ++k) {
    out << g.id(g.pair_from(k)) << ',' << g.id(g.pair_to(k)) << ',' << sol.pair_powers[k] << ','
        << sol.pair_prices[k] << '\n';
  }
}

void write_totals_csv(std::ostream& out, const Market& market, const MarketSolution& sol) {
  out << "prosumer,role,total_kw,success\n" << std::setprecision(kDigits);
  for (std::size_t i = 0; i < market.size(); ++i) {
    const Prosumer& p = market.prosumer(i);
    out << p.id << ',' << to_string(p.role) << ',' << sol.totals[i] << ',' << (sol.success[i] ? 1 : 0) << '\n';
  }
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace) {
  out << "iter,primal_residual,dual_residual,eps_pri,eps_dual\n" << std::setprecision(kDigits);
  for (const TraceRecord& r : trace) {
    out << r.iter << ',' << r.primal_residual << ',' << r.dual_residual << ',' << r.eps_pri << ',' << r.eps_dual
        << '\n';
  }
}

std::vector<SolutionRow> read_solution_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MarketError(ErrorCode::ParseError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "pair_i,pair_j,power_kw,price") {
    throw MarketError(ErrorCode::ParseError, path.string() + ": unexpected header");
  }
  std::vector<SolutionRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    SolutionRow r;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> r.pair_i >> c1 >> r.pair_j >> c2 >> r.power_kw >> c3 >> r.price) || c1 != ',' || c2 != ',' ||
        c3 != ',') {
      throw MarketError(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    rows.push_back(r);
  }
  return rows;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw MarketError(ErrorCode::ValidationError, "cannot write " + path.string());
    out << text;
    if (!out) throw MarketError(ErrorCode::ValidationError, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace p2p
