#pragma once

// Per-agent convex costs over a scalar resource, optional box penalties, and
// unit rescaling of box-bounded variables.

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace fsalloc {

/// f(x) = gamma x^2 + beta x + alpha. gamma = 0 is admitted only so that
/// linear costs can be represented and flagged; solvers reject it.
struct QuadraticCost {
  double gamma = 1.0;
  double beta = 0.0;
  double alpha = 0.0;
};

/// f(x) = pi/2 (x - target)^2, with target the ratio (rho + u) / pi.
struct CpuCost {
  double pi = 0.1;
  double target = 0.0;
};

/// Convex cost given by a piecewise-linear, nondecreasing gradient through
/// (knot, gradient) pairs. End segments extend linearly.
class TabulatedCost {
 public:
  TabulatedCost(std::vector<double> knots, std::vector<double> gradients, double value_at_first = 0.0);

  double value(double x) const;
  double gradient(double x) const;
  double curvature(double x) const;
  /// Smallest and largest segment slope over [lo, hi].
  std::pair<double, double> slope_range(double lo, double hi) const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& gradients() const { return gradients_; }

 private:
  std::size_t segment(double x) const;
  double slope(std::size_t s) const;

  std::vector<double> knots_;
  std::vector<double> gradients_;
  std::vector<double> values_;  // cost at each knot
};

enum class Smoothing { ExactHinge, Softplus, SquaredHinge };

const char* to_string(Smoothing s);
Smoothing parse_smoothing(const std::string& name);

/// eps([x - upper]+ + [lower - x]+) with the chosen smoothing of [.]+.
struct BoxPenalty {
  double lower = 0.0;
  double upper = 1.0;
  double epsilon = 1.0;
  Smoothing smoothing = Smoothing::SquaredHinge;
  double smoothing_mu = 10.0;  // softplus sharpness

  void validate() const;
  double value(double x) const;
  /// Exact hinge returns 0 on the box boundary (one-sided from inside).
  double gradient(double x) const;
  /// Zero for the exact hinge.
  double curvature(double x) const;
  double distance_outside(double x) const;
};

struct CurvatureBounds {
  double lower = 0.0;  // v
  double upper = 0.0;  // u
  bool base_only = false;  // exact-hinge penalty present; bounds ignore it
};

class CostModel {
 public:
  using Base = std::variant<QuadraticCost, CpuCost, TabulatedCost>;

  CostModel(Base base, std::optional<BoxPenalty> penalty = std::nullopt);

  double value(double x) const;
  double gradient(double x) const;
  double curvature(double x) const;
  /// f(x) - f(y) - f'(y)(x - y), evaluated without the cancellation of the
  /// naive difference for quadratic bases.
  double bregman(double x, double y) const;

  /// Certified v <= f'' <= u on [lo, hi].
  CurvatureBounds curvature_bounds(double lo, double hi) const;

  const Base& base() const { return base_; }
  const std::optional<BoxPenalty>& penalty() const { return penalty_; }
  bool has_penalty() const { return penalty_.has_value(); }
  bool strictly_convex() const;
  /// Base cost only, dropping any penalty.
  CostModel without_penalty() const { return CostModel(base_); }

 private:
  double base_value(double x) const;
  double base_gradient(double x) const;
  double base_curvature(double x) const;

  Base base_;
  std::optional<BoxPenalty> penalty_;
};

double total_cost(const std::vector<CostModel>& costs, const std::vector<double>& x);

/// min sum_i f_i(x_i) subject to sum_i x_i = total.
struct AllocationProblem {
  std::vector<CostModel> costs;
  double total = 0.0;  // K (or demand D)

  std::size_t size() const { return costs.size(); }
};

/// z = (x - lower) / (upper - lower).
double rescale_to_unit(double x, double lower, double upper);
double rescale_back(double z, double lower, double upper);

}  // namespace fsalloc
