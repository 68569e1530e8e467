#pragma once

// Centralized reference solver for the KKT system grad F(x*) = psi* 1,
// sum x* = K. Used for residuals and acceptance checks, never by agents.

#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "fsalloc/cost.hpp"

namespace fsalloc {

enum class OracleMethod { ClosedForm, Bisection };

const char* to_string(OracleMethod m);

struct OracleSolution {
  std::vector<double> x_star;
  double psi_star = 0.0;
  double f_star = 0.0;
  OracleMethod method = OracleMethod::ClosedForm;
  double residual_kkt = 0.0;  // max_i |f_i'(x_i*) - psi*|
};

/// Quadratic or CPU costs without penalties. Throws on any curvature <= 0.
OracleSolution solve_closed_form(const AllocationProblem& problem);

struct BisectionOptions {
  std::optional<std::pair<double, double>> bracket;  // on psi; auto when empty
  double psi_tolerance = 1e-12;  // relative to 1 + |psi|
  double sum_tolerance = 1e-10;  // relative to 1 + |K|
  int max_expansions = 60;
};

/// Bisection on the common marginal cost psi, inverting each gradient
/// (closed form when available, inner bisection otherwise).
OracleSolution solve_bisection(const AllocationProblem& problem, const BisectionOptions& options = {});

/// Closed form when every cost allows it, bisection otherwise.
OracleSolution solve(const AllocationProblem& problem);

/// x with f'(x) = psi. Throws if the gradient is found to decrease.
double inverse_gradient(const CostModel& cost, double psi);

/// Generation plus battery reserves over the stacked variable y = [x; -r].
struct StackedReserveProblem {
  AllocationProblem problem;  // generators first, then batteries
  std::size_t generators = 0;
  std::size_t batteries = 0;
  double battery_curvature = 0.0;  // rho_b in c_j r + rho_b r^2
  bool strictly_convex = true;

  /// Splits y into generation x and reserves r = -y_batt.
  std::pair<std::vector<double>, std::vector<double>> unstack(const std::vector<double>& y) const;
};

/// Battery j costs c_j r_j + rho_b r_j^2, i.e. -c_j y + rho_b y^2 in y.
/// rho_b defaults to 1e-3 times the smallest generator gamma. The stacked
/// constraint is sum y = demand.
StackedReserveProblem stack_reserve_problem(const std::vector<CostModel>& generators,
                                            const std::vector<double>& battery_coefficients,
                                            double demand,
                                            std::optional<double> battery_curvature = std::nullopt);

/// Structured text record of a solution.
void write_oracle_record(std::ostream& out, const OracleSolution& s);

}  // namespace fsalloc
