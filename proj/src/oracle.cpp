#include "fsalloc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "fsalloc/error.hpp"
#include "fsalloc/format.hpp"

namespace fsalloc {

namespace {

// f'(x) = slope x + offset, when the cost is a penalty-free quadratic.
struct AffineGradient {
  double slope = 0.0;
  double offset = 0.0;
};

std::optional<AffineGradient> affine_gradient(const CostModel& c) {
  if (c.has_penalty()) return std::nullopt;
  if (const auto* q = std::get_if<QuadraticCost>(&c.base())) return AffineGradient{2.0 * q->gamma, q->beta};
  if (const auto* p = std::get_if<CpuCost>(&c.base())) return AffineGradient{p->pi, -p->pi * p->target};
  return std::nullopt;
}

void finish(const AllocationProblem& problem, OracleSolution& s) {
  s.f_star = total_cost(problem.costs, s.x_star);
  s.residual_kkt = 0.0;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    s.residual_kkt = std::max(s.residual_kkt, std::abs(problem.costs[i].gradient(s.x_star[i]) - s.psi_star));
  }
}

void require_nonempty(const AllocationProblem& problem) {
  if (problem.costs.empty()) throw ValidationError("allocation problem has no agents");
  if (!std::isfinite(problem.total)) throw ValidationError("constraint total must be finite");
}

}  // namespace

const char* to_string(OracleMethod m) {
  return m == OracleMethod::ClosedForm ? "closed-form" : "bisection";
}

OracleSolution solve_closed_form(const AllocationProblem& problem) {
  require_nonempty(problem);
  std::vector<AffineGradient> g;
  g.reserve(problem.size());
  for (const CostModel& c : problem.costs) {
    auto a = affine_gradient(c);
    if (!a) throw ValidationError("closed-form oracle needs quadratic or CPU costs without penalties");
    if (!(a->slope > 0.0)) throw ValidationError("closed-form oracle needs strictly convex costs (gamma > 0)");
    g.push_back(*a);
  }
  // x_i = (psi - b_i) / a_i and sum x_i = K.
  double inv_sum = 0.0;
  double offset_sum = 0.0;
  for (const auto& a : g) {
    inv_sum += 1.0 / a.slope;
    offset_sum += a.offset / a.slope;
  }
  OracleSolution s;
  s.method = OracleMethod::ClosedForm;
  s.psi_star = (problem.total + offset_sum) / inv_sum;
  s.x_star.resize(problem.size());
  for (std::size_t i = 0; i < g.size(); ++i) s.x_star[i] = (s.psi_star - g[i].offset) / g[i].slope;
  finish(problem, s);
  return s;
}

double inverse_gradient(const CostModel& cost, double psi) {
  if (auto a = affine_gradient(cost); a && a->slope > 0.0) return (psi - a->offset) / a->slope;
  double lo = -1.0, hi = 1.0;
  double glo = cost.gradient(lo), ghi = cost.gradient(hi);
  if (glo > ghi) throw ValidationError("gradient is not monotone");
  for (int k = 0; k < 200 && glo > psi; ++k) {
    hi = lo;
    ghi = glo;
    lo -= 2.0 * (1.0 + std::abs(lo));
    glo = cost.gradient(lo);
    if (glo > ghi) throw ValidationError("gradient is not monotone");
  }
  for (int k = 0; k < 200 && ghi < psi; ++k) {
    lo = hi;
    glo = ghi;
    hi += 2.0 * (1.0 + std::abs(hi));
    ghi = cost.gradient(hi);
    if (glo > ghi) throw ValidationError("gradient is not monotone");
  }
  if (glo > psi || ghi < psi) throw ValidationError("gradient does not reach the requested marginal cost");
  for (int k = 0; k < 400; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double gm = cost.gradient(mid);
    if (gm < glo || gm > ghi) throw ValidationError("gradient is not monotone");
    if (gm < psi) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
      ghi = gm;
    }
  }
  // Pick the endpoint with the smaller gradient mismatch.
  return std::abs(glo - psi) <= std::abs(ghi - psi) ? lo : hi;
}

OracleSolution solve_bisection(const AllocationProblem& problem, const BisectionOptions& options) {
  require_nonempty(problem);
  const double K = problem.total;
  const std::size_t n = problem.size();
  OracleSolution s;
  s.method = OracleMethod::Bisection;
  if (n == 1) {
    s.x_star = {K};
    s.psi_star = problem.costs[0].gradient(K);
    finish(problem, s);
    return s;
  }
  for (const CostModel& c : problem.costs) {
    if (!c.strictly_convex() && !c.has_penalty()) {
      throw ValidationError("bisection oracle needs strictly increasing gradients");
    }
  }
  std::vector<double> x(n);
  auto gap = [&](double psi) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = inverse_gradient(problem.costs[i], psi);
      sum += x[i];
    }
    return sum - K;
  };

  double lo, hi;
  if (options.bracket) {
    std::tie(lo, hi) = *options.bracket;
    if (!(lo < hi)) throw ValidationError("bisection bracket must satisfy lo < hi");
  } else {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (const CostModel& c : problem.costs) {
      const double g = c.gradient(K / static_cast<double>(n));
      lo = std::min(lo, g);
      hi = std::max(hi, g);
    }
    lo -= 1.0;
    hi += 1.0;
  }
  double gap_lo = gap(lo);
  double gap_hi = gap(hi);
  if (!options.bracket) {
    for (int k = 0; k < options.max_expansions && (gap_lo > 0.0 || gap_hi < 0.0); ++k) {
      const double width = hi - lo;
      if (gap_lo > 0.0) {
        lo -= width;
        gap_lo = gap(lo);
      }
      if (gap_hi < 0.0) {
        hi += width;
        gap_hi = gap(hi);
      }
    }
  }
  if (gap_lo > 0.0 || gap_hi < 0.0) {
    throw ValidationError("bisection bracket [" + shortest(lo) + ", " + shortest(hi) +
                          "] does not straddle the constraint");
  }
  const double sum_tol = options.sum_tolerance * (1.0 + std::abs(K));
  double psi = 0.5 * (lo + hi);
  double g = gap(psi);
  for (int k = 0; k < 2000; ++k) {
    if (std::abs(g) <= sum_tol && hi - lo <= options.psi_tolerance * (1.0 + std::abs(psi))) break;
    if (g < 0.0) {
      lo = psi;
    } else {
      hi = psi;
    }
    const double mid = 0.5 * (lo + hi);
    if (mid == psi) break;
    psi = mid;
    g = gap(psi);
  }
  // Newton polish on psi; kept only while the sum gap shrinks.
  std::vector<double> best_x = x;
  for (int k = 0; k < 3 && g != 0.0; ++k) {
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = problem.costs[i].curvature(best_x[i]);
      if (c > 0.0) slope += 1.0 / c;
    }
    if (!(slope > 0.0)) break;
    const double trial = psi - g / slope;
    if (!(trial >= lo && trial <= hi)) break;
    const double gt = gap(trial);
    if (!(std::abs(gt) < std::abs(g))) break;
    psi = trial;
    g = gt;
    best_x = x;
  }
  s.psi_star = psi;
  s.x_star = best_x;
  finish(problem, s);
  return s;
}

OracleSolution solve(const AllocationProblem& problem) {
  const bool closed = std::all_of(problem.costs.begin(), problem.costs.end(), [](const CostModel& c) {
    auto a = affine_gradient(c);
    return a && a->slope > 0.0;
  });
  return closed ? solve_closed_form(problem) : solve_bisection(problem);
}

std::pair<std::vector<double>, std::vector<double>> StackedReserveProblem::unstack(
    const std::vector<double>& y) const {
  if (y.size() != generators + batteries) throw ValidationError("stacked vector has the wrong size");
  std::vector<double> x(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(generators));
  std::vector<double> r;
  r.reserve(batteries);
  for (std::size_t j = 0; j < batteries; ++j) r.push_back(-y[generators + j]);
  return {std::move(x), std::move(r)};
}

StackedReserveProblem stack_reserve_problem(const std::vector<CostModel>& generators,
                                            const std::vector<double>& battery_coefficients,
                                            double demand, std::optional<double> battery_curvature) {
  if (generators.empty()) throw ValidationError("reserve problem needs at least one generator");
  StackedReserveProblem out;
  out.generators = generators.size();
  out.batteries = battery_coefficients.size();
  out.problem.costs = generators;
  out.problem.total = demand;
  if (battery_curvature) {
    if (!(*battery_curvature >= 0.0)) throw ValidationError("battery curvature must be >= 0");
    out.battery_curvature = *battery_curvature;
  } else {
    double min_gamma = std::numeric_limits<double>::infinity();
    for (const CostModel& c : generators) min_gamma = std::min(min_gamma, 0.5 * c.curvature(demand / static_cast<double>(generators.size())));
    out.battery_curvature = 1e-3 * min_gamma;
  }
  for (double c : battery_coefficients) {
    out.problem.costs.emplace_back(QuadraticCost{out.battery_curvature, -c, 0.0});
  }
  out.strictly_convex = std::all_of(out.problem.costs.begin(), out.problem.costs.end(),
                                    [](const CostModel& c) { return c.strictly_convex(); });
  return out;
}

void write_oracle_record(std::ostream& out, const OracleSolution& s) {
  out << "[oracle]\n";
  out << "method = " << to_string(s.method) << "\n";
  out << "psi_star = " << shortest(s.psi_star) << "\n";
  out << "f_star = " << shortest(s.f_star) << "\n";
  out << "residual_kkt = " << shortest(s.residual_kkt) << "\n";
  out << "x_star =";
  for (std::size_t i = 0; i < s.x_star.size(); ++i) out << (i ? ", " : " ") << shortest(s.x_star[i]);
  out << "\n";
}

}  // namespace fsalloc
