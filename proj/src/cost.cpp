#include "fsalloc/cost.hpp"

#include <algorithm>
#include <cmath>

#include "fsalloc/error.hpp"

namespace fsalloc {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// (1/mu) log(1 + exp(mu u)), overflow-safe.
double softplus(double u, double mu) {
  const double t = mu * u;
  return (std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)))) / mu;
}

// sigma'(t) = sigma(t)(1 - sigma(t)); unimodal with peak 1/4 at t = 0.
double logistic_slope(double t) {
  const double s = logistic(t);
  return s * (1.0 - s);
}

// Max and min of logistic_slope(mu (x - c)) over x in [lo, hi].
std::pair<double, double> logistic_slope_range(double lo, double hi, double c, double mu) {
  const double a = logistic_slope(mu * (lo - c));
  const double b = logistic_slope(mu * (hi - c));
  const double top = (lo <= c && c <= hi) ? 0.25 : std::max(a, b);
  return {std::min(a, b), top};
}

double hinge(double u) { return u > 0.0 ? u : 0.0; }

}  // namespace

// --- TabulatedCost ---------------------------------------------------------

TabulatedCost::TabulatedCost(std::vector<double> knots, std::vector<double> gradients,
                             double value_at_first)
    : knots_(std::move(knots)), gradients_(std::move(gradients)) {
  if (knots_.size() < 2 || knots_.size() != gradients_.size()) {
    throw ValidationError("tabulated cost needs at least two (knot, gradient) pairs");
  }
  for (std::size_t k = 1; k < knots_.size(); ++k) {
    if (!(knots_[k] > knots_[k - 1])) throw ValidationError("tabulated knots must increase");
    if (gradients_[k] < gradients_[k - 1]) {
      throw ValidationError("tabulated gradient must be nondecreasing (convex cost)");
    }
  }
  values_.resize(knots_.size());
  values_[0] = value_at_first;
  for (std::size_t k = 1; k < knots_.size(); ++k) {
    values_[k] = values_[k - 1] +
                 0.5 * (gradients_[k] + gradients_[k - 1]) * (knots_[k] - knots_[k - 1]);
  }
}

std::size_t TabulatedCost::segment(double x) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
  const auto idx = static_cast<std::size_t>(it - knots_.begin());
  return std::clamp<std::size_t>(idx, 1, knots_.size() - 1) - 1;
}

double TabulatedCost::slope(std::size_t s) const {
  return (gradients_[s + 1] - gradients_[s]) / (knots_[s + 1] - knots_[s]);
}

double TabulatedCost::gradient(double x) const {
  const std::size_t s = segment(x);
  return gradients_[s] + slope(s) * (x - knots_[s]);
}

double TabulatedCost::value(double x) const {
  const std::size_t s = segment(x);
  const double d = x - knots_[s];
  return values_[s] + gradients_[s] * d + 0.5 * slope(s) * d * d;
}

double TabulatedCost::curvature(double x) const { return slope(segment(x)); }

std::pair<double, double> TabulatedCost::slope_range(double lo, double hi) const {
  double mn = slope(segment(lo));
  double mx = mn;
  for (std::size_t s = segment(lo); s <= segment(hi); ++s) {
    mn = std::min(mn, slope(s));
    mx = std::max(mx, slope(s));
  }
  return {mn, mx};
}

// --- BoxPenalty ------------------------------------------------------------

const char* to_string(Smoothing s) {
  switch (s) {
    case Smoothing::ExactHinge: return "exact-hinge";
    case Smoothing::Softplus: return "softplus";
    case Smoothing::SquaredHinge: return "squared-hinge";
  }
  return "?";
}

Smoothing parse_smoothing(const std::string& name) {
  if (name == "exact-hinge" || name == "hinge") return Smoothing::ExactHinge;
  if (name == "softplus") return Smoothing::Softplus;
  if (name == "squared-hinge") return Smoothing::SquaredHinge;
  throw ValidationError("unknown penalty smoothing '" + name + "'");
}

void BoxPenalty::validate() const {
  if (!(lower < upper)) throw ValidationError("box needs lower < upper");
  if (!(epsilon > 0.0)) throw ValidationError("penalty weight epsilon must be positive");
  if (smoothing == Smoothing::Softplus && !(smoothing_mu > 0.0)) {
    throw ValidationError("softplus smoothing_mu must be positive");
  }
}

double BoxPenalty::value(double x) const {
  switch (smoothing) {
    case Smoothing::ExactHinge: return epsilon * (hinge(x - upper) + hinge(lower - x));
    case Smoothing::Softplus:
      return epsilon * (softplus(x - upper, smoothing_mu) + softplus(lower - x, smoothing_mu));
    case Smoothing::SquaredHinge: {
      const double a = hinge(x - upper);
      const double b = hinge(lower - x);
      return epsilon * (a * a + b * b);
    }
  }
  return 0.0;
}

double BoxPenalty::gradient(double x) const {
  switch (smoothing) {
    case Smoothing::ExactHinge:
      return x > upper ? epsilon : (x < lower ? -epsilon : 0.0);
    case Smoothing::Softplus:
      return epsilon * (logistic(smoothing_mu * (x - upper)) - logistic(smoothing_mu * (lower - x)));
    case Smoothing::SquaredHinge:
      return 2.0 * epsilon * (hinge(x - upper) - hinge(lower - x));
  }
  return 0.0;
}

double BoxPenalty::curvature(double x) const {
  switch (smoothing) {
    case Smoothing::ExactHinge: return 0.0;
    case Smoothing::Softplus:
      return epsilon * smoothing_mu *
             (logistic_slope(smoothing_mu * (x - upper)) + logistic_slope(smoothing_mu * (lower - x)));
    case Smoothing::SquaredHinge: return (x > upper || x < lower) ? 2.0 * epsilon : 0.0;
  }
  return 0.0;
}

double BoxPenalty::distance_outside(double x) const { return hinge(x - upper) + hinge(lower - x); }

// --- CostModel -------------------------------------------------------------

CostModel::CostModel(Base base, std::optional<BoxPenalty> penalty)
    : base_(std::move(base)), penalty_(std::move(penalty)) {
  std::visit(overloaded{
                 [](const QuadraticCost& q) {
                   if (!(q.gamma >= 0.0) || !std::isfinite(q.gamma) || !std::isfinite(q.beta) ||
                       !std::isfinite(q.alpha)) {
                     throw ValidationError("quadratic cost needs finite gamma >= 0");
                   }
                 },
                 [](const CpuCost& c) {
                   if (!(c.pi > 0.0) || !std::isfinite(c.pi) || !std::isfinite(c.target)) {
                     throw ValidationError("CPU cost needs pi > 0");
                   }
                 },
                 [](const TabulatedCost&) {},
             },
             base_);
  if (penalty_) penalty_->validate();
}

double CostModel::base_value(double x) const {
  return std::visit(overloaded{
                        [x](const QuadraticCost& q) { return (q.gamma * x + q.beta) * x + q.alpha; },
                        [x](const CpuCost& c) {
                          const double d = x - c.target;
                          return 0.5 * c.pi * d * d;
                        },
                        [x](const TabulatedCost& t) { return t.value(x); },
                    },
                    base_);
}

double CostModel::base_gradient(double x) const {
  return std::visit(overloaded{
                        [x](const QuadraticCost& q) { return 2.0 * q.gamma * x + q.beta; },
                        [x](const CpuCost& c) { return c.pi * (x - c.target); },
                        [x](const TabulatedCost& t) { return t.gradient(x); },
                    },
                    base_);
}

double CostModel::base_curvature(double x) const {
  return std::visit(overloaded{
                        [](const QuadraticCost& q) { return 2.0 * q.gamma; },
                        [](const CpuCost& c) { return c.pi; },
                        [x](const TabulatedCost& t) { return t.curvature(x); },
                    },
                    base_);
}

double CostModel::value(double x) const {
  return base_value(x) + (penalty_ ? penalty_->value(x) : 0.0);
}

double CostModel::gradient(double x) const {
  return base_gradient(x) + (penalty_ ? penalty_->gradient(x) : 0.0);
}

double CostModel::curvature(double x) const {
  return base_curvature(x) + (penalty_ ? penalty_->curvature(x) : 0.0);
}

double CostModel::bregman(double x, double y) const {
  const double d = x - y;
  double out = std::visit(overloaded{
                              [d](const QuadraticCost& q) { return q.gamma * d * d; },
                              [d](const CpuCost& c) { return 0.5 * c.pi * d * d; },
                              [x, y, d](const TabulatedCost& t) {
                                return t.value(x) - t.value(y) - t.gradient(y) * d;
                              },
                          },
                          base_);
  if (penalty_) out += penalty_->value(x) - penalty_->value(y) - penalty_->gradient(y) * d;
  return out;
}

CurvatureBounds CostModel::curvature_bounds(double lo, double hi) const {
  if (!(lo < hi)) throw ValidationError("curvature interval must be non-degenerate");
  CurvatureBounds b = std::visit(
      overloaded{
          [](const QuadraticCost& q) { return CurvatureBounds{2.0 * q.gamma, 2.0 * q.gamma}; },
          [](const CpuCost& c) { return CurvatureBounds{c.pi, c.pi}; },
          [lo, hi](const TabulatedCost& t) {
            auto [mn, mx] = t.slope_range(lo, hi);
            return CurvatureBounds{mn, mx};
          },
      },
      base_);
  if (!penalty_) return b;
  const BoxPenalty& p = *penalty_;
  switch (p.smoothing) {
    case Smoothing::ExactHinge:
      b.base_only = true;
      break;
    case Smoothing::SquaredHinge:
      if (hi > p.upper || lo < p.lower) b.upper += 2.0 * p.epsilon;
      if (lo >= p.upper || hi <= p.lower) b.lower += 2.0 * p.epsilon;
      break;
    case Smoothing::Softplus: {
      // Terms are logistic_slope(mu (x - upper)) and logistic_slope(mu (x - lower)).
      const auto up = logistic_slope_range(lo, hi, p.upper, p.smoothing_mu);
      const auto dn = logistic_slope_range(lo, hi, p.lower, p.smoothing_mu);
      const double scale = p.epsilon * p.smoothing_mu;
      b.lower += scale * (up.first + dn.first);
      b.upper += scale * (up.second + dn.second);
      break;
    }
  }
  return b;
}

bool CostModel::strictly_convex() const {
  return std::visit(overloaded{
                        [](const QuadraticCost& q) { return q.gamma > 0.0; },
                        [](const CpuCost&) { return true; },
                        [](const TabulatedCost& t) {
                          const auto& k = t.knots();
                          auto [mn, mx] = t.slope_range(k.front(), k.back());
                          (void)mx;
                          return mn > 0.0;
                        },
                    },
                    base_);
}

double total_cost(const std::vector<CostModel>& costs, const std::vector<double>& x) {
  double sum = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) sum += costs[i].value(x[i]);
  return sum;
}

double rescale_to_unit(double x, double lower, double upper) {
  if (!(upper > lower)) throw ValidationError("rescaling needs upper > lower");
  return (x - lower) / (upper - lower);
}

double rescale_back(double z, double lower, double upper) {
  if (!(upper > lower)) throw ValidationError("rescaling needs upper > lower");
  return lower + z * (upper - lower);
}

}  // namespace fsalloc
