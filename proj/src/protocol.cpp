#include "fsalloc/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>

#include "fsalloc/error.hpp"
#include "fsalloc/format.hpp"

namespace fsalloc {

namespace {

constexpr double kDivergenceLimit = 1e12;
// Step ratios are only meaningful while the gap sits well above rounding
// noise of the Bregman terms.
constexpr double kRatioFloor = 1e-9;

const double kNaN = std::numeric_limits<double>::quiet_NaN();

void gradients(const std::vector<double>& x, const std::vector<CostModel>& costs, std::vector<double>& g) {
  g.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = costs[i].gradient(x[i]);
    if (!std::isfinite(g[i])) {
      throw DivergenceError("non-finite gradient at agent " + std::to_string(i), 0);
    }
  }
}

// delta_i = sum_j W_ji h_a(g_j - g_i)  or  sum_j W_ji (h_c(g_j) - h_c(g_i)),
// accumulated edge by edge in a fixed order so each link moves equal and
// opposite amounts.
void flow(const std::vector<double>& x, const Topology& topology, const std::vector<CostModel>& costs,
          const ProtocolConfig& config, std::vector<double>& g, std::vector<double>& delta) {
  gradients(x, costs, g);
  delta.assign(x.size(), 0.0);
  if (uses_communication_map(config.variant)) {
    const NonlinearMap& h = config.communication;
    for (double& gi : g) gi = h.apply_unchecked(gi);
    for (const Edge& e : topology.edges()) {
      const double f = e.weight * (g[e.j] - g[e.i]);
      delta[e.i] += f;
      delta[e.j] -= f;
    }
  } else {
    const NonlinearMap& h = config.actuation;
    for (const Edge& e : topology.edges()) {
      const double f = e.weight * h.apply_unchecked(g[e.j] - g[e.i]);
      delta[e.i] += f;
      delta[e.j] -= f;
    }
  }
}

struct Workspace {
  std::vector<double> g, delta, k1, k2, k3, k4, tmp;
};

void advance(std::vector<double>& x, const Topology& topology, const std::vector<CostModel>& costs,
             const ProtocolConfig& config, Workspace& w) {
  const std::size_t n = x.size();
  if (!is_continuous(config.variant)) {
    flow(x, topology, costs, config, w.g, w.delta);
    for (std::size_t i = 0; i < n; ++i) x[i] += config.rate * w.delta[i];
    return;
  }
  if (config.integrator == Integrator::Euler) {
    // Gain folded first so Euler(dt) matches DT with eta_bar = eta * dt bit for bit.
    const double gain = config.rate * config.dt;
    flow(x, topology, costs, config, w.g, w.delta);
    for (std::size_t i = 0; i < n; ++i) x[i] += gain * w.delta[i];
    return;
  }
  const double dt = config.dt;
  const double eta = config.rate;
  flow(x, topology, costs, config, w.g, w.k1);
  w.tmp.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.tmp[i] = x[i] + 0.5 * dt * eta * w.k1[i];
  flow(w.tmp, topology, costs, config, w.g, w.k2);
  for (std::size_t i = 0; i < n; ++i) w.tmp[i] = x[i] + 0.5 * dt * eta * w.k2[i];
  flow(w.tmp, topology, costs, config, w.g, w.k3);
  for (std::size_t i = 0; i < n; ++i) w.tmp[i] = x[i] + dt * eta * w.k3[i];
  flow(w.tmp, topology, costs, config, w.g, w.k4);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] += dt * eta / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
  }
}

void check_sizes(const std::vector<double>& x, const Topology& t, const std::vector<CostModel>& costs) {
  if (x.size() != costs.size() || x.size() != t.size()) {
    throw ValidationError("state, costs and topology disagree on the number of agents");
  }
}

}  // namespace

// --- names -----------------------------------------------------------------

const char* to_string(Variant v) {
  switch (v) {
    case Variant::DtActuation: return "dt-actuation";
    case Variant::DtCommunication: return "dt-communication";
    case Variant::CtActuation: return "ct-actuation";
    case Variant::CtCommunication: return "ct-communication";
    case Variant::DtLinear: return "dt-linear";
    case Variant::CtLinear: return "ct-linear";
  }
  return "?";
}

const char* to_string(Integrator i) { return i == Integrator::Euler ? "euler" : "rk4"; }
const char* to_string(StopMetric m) { return m == StopMetric::Residual ? "residual" : "dispersion"; }

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::DtActuation, Variant::DtCommunication, Variant::CtActuation,
                    Variant::CtCommunication, Variant::DtLinear, Variant::CtLinear}) {
    if (name == to_string(v)) return v;
  }
  throw ValidationError("unknown protocol variant '" + name + "'");
}

Integrator parse_integrator(const std::string& name) {
  if (name == "euler") return Integrator::Euler;
  if (name == "rk4") return Integrator::Rk4;
  throw ValidationError("unknown integrator '" + name + "'");
}

StopMetric parse_stop_metric(const std::string& name) {
  if (name == "residual") return StopMetric::Residual;
  if (name == "dispersion") return StopMetric::Dispersion;
  throw ValidationError("unknown threshold metric '" + name + "'");
}

bool is_continuous(Variant v) {
  return v == Variant::CtActuation || v == Variant::CtCommunication || v == Variant::CtLinear;
}

bool uses_communication_map(Variant v) {
  return v == Variant::DtCommunication || v == Variant::CtCommunication;
}

// --- config ----------------------------------------------------------------

void ProtocolConfig::validate() const {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw ValidationError("protocol rate must be positive");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be positive");
  if (is_continuous(variant) && (!(dt > 0.0) || !std::isfinite(dt))) {
    throw ValidationError("integrator step dt must be positive");
  }
  if (record_stride == 0) throw ValidationError("record stride must be at least 1");
  const bool linear = variant == Variant::DtLinear || variant == Variant::CtLinear;
  if (linear && (!actuation.is_identity() || !communication.is_identity())) {
    throw ValidationError(std::string(to_string(variant)) + " takes no nonlinear maps");
  }
  if (uses_communication_map(variant) && !actuation.is_identity()) {
    throw ValidationError(std::string(to_string(variant)) + " uses the communication map; actuation must be identity");
  }
  if (!linear && !uses_communication_map(variant) && !communication.is_identity()) {
    throw ValidationError(std::string(to_string(variant)) + " uses the actuation map; communication must be identity");
  }
  if (threshold && !(*threshold > 0.0)) throw ValidationError("threshold must be positive");
}

std::size_t ProtocolConfig::total_steps() const {
  if (!is_continuous(variant)) return static_cast<std::size_t>(std::llround(horizon));
  return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
}

double ProtocolConfig::step_duration() const { return is_continuous(variant) ? dt : 1.0; }

// --- single steps ----------------------------------------------------------

std::vector<double> dt_step(const std::vector<double>& x, const Topology& topology,
                            const std::vector<CostModel>& costs, const ProtocolConfig& config) {
  if (is_continuous(config.variant)) throw ValidationError("dt_step needs a discrete-time variant");
  check_sizes(x, topology, costs);
  Workspace w;
  std::vector<double> next = x;
  advance(next, topology, costs, config, w);
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (!std::isfinite(next[i])) throw DivergenceError("non-finite state at agent " + std::to_string(i), 0);
  }
  return next;
}

std::vector<double> ct_field(const std::vector<double>& x, const Topology& topology,
                             const std::vector<CostModel>& costs, const ProtocolConfig& config) {
  check_sizes(x, topology, costs);
  std::vector<double> g, delta;
  flow(x, topology, costs, config, g, delta);
  for (double& d : delta) d *= config.rate;
  return delta;
}

std::vector<double> ct_step(const std::vector<double>& x, const Topology& topology,
                            const std::vector<CostModel>& costs, const ProtocolConfig& config) {
  if (!is_continuous(config.variant)) throw ValidationError("ct_step needs a continuous-time variant");
  check_sizes(x, topology, costs);
  Workspace w;
  std::vector<double> next = x;
  advance(next, topology, costs, config, w);
  return next;
}

// --- rate bound ------------------------------------------------------------

double StepBound::contraction(double r) const {
  return 1.0 - r * v * (alpha_lo * lambda2 - 0.5 * u * lambda_n * lambda_n * alpha_hi * r);
}

StepBound step_bound(const std::vector<CostModel>& costs, const Topology& topology,
                     const MapClassification& map, double x_lo, double x_hi) {
  if (!map.has_rate_sector()) {
    throw ValidationError(
        "map has no sector with a positive lower bound and finite upper bound; it is at most "
        "sign-preserving, so no convergence rate is guaranteed");
  }
  if (costs.empty()) throw ValidationError("no costs given");
  StepBound b;
  const SpectralSummary spec = spectral_summary(topology);
  if (!(spec.lambda2 > 1e-9)) throw ValidationError("rate bound needs a connected graph");
  b.lambda2 = spec.lambda2;
  b.lambda_n = spec.lambda_n;
  b.v = std::numeric_limits<double>::infinity();
  b.u = 0.0;
  for (const CostModel& c : costs) {
    const CurvatureBounds cb = c.curvature_bounds(x_lo, x_hi);
    b.v = std::min(b.v, cb.lower);
    b.u = std::max(b.u, cb.upper);
  }
  if (!(b.v > 0.0)) throw ValidationError("rate bound needs strongly convex costs (v > 0)");
  b.alpha_lo = map.sector->lower;
  b.alpha_hi = map.sector->upper;
  b.max_rate = 2.0 * b.alpha_lo * b.lambda2 / (b.u * b.lambda_n * b.lambda_n * b.alpha_hi);
  return b;
}

// --- metrics ---------------------------------------------------------------

ResidualParts residual(const std::vector<CostModel>& costs, const std::vector<double>& x,
                       const OracleSolution& oracle) {
  ResidualParts r;
  double sum_d = 0.0;
  double skew = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xs = oracle.x_star[i];
    const double d = x[i] - xs;
    r.gap += costs[i].bregman(x[i], xs);
    sum_d += d;
    skew += (costs[i].gradient(xs) - oracle.psi_star) * d;
  }
  r.first_order = oracle.psi_star * sum_d + skew;
  return r;
}

// --- driver ----------------------------------------------------------------

TrajectoryRecord run(const std::vector<double>& x0, const RunInputs& inputs, const ProtocolConfig& config) {
  config.validate();
  const AllocationProblem& problem = inputs.problem;
  const std::size_t n = problem.size();
  if (x0.size() != n || inputs.schedule.size() != n) {
    throw ValidationError("initial state, costs and schedule disagree on the number of agents");
  }
  if (inputs.oracle && inputs.oracle->x_star.size() != n) {
    throw ValidationError("oracle solution has the wrong size");
  }
  if (config.threshold && config.threshold_metric == StopMetric::Residual && !inputs.oracle) {
    throw ValidationError("residual threshold needs an oracle solution");
  }
  const double K = problem.total;
  double sum0 = 0.0;
  for (double v : x0) sum0 += v;
  const double gap0 = sum0 - K;
  if (std::abs(gap0) > 1e-9 * (1.0 + std::abs(K)) || !std::isfinite(gap0)) {
    throw InfeasibleError("initial state misses the sum constraint by " + shortest(gap0), gap0);
  }

  const TopologySchedule steps = inputs.schedule.in_steps(config.step_duration());
  const std::size_t total = config.total_steps();
  const double tau = config.step_duration();
  const double f_star = inputs.oracle ? inputs.oracle->f_star : kNaN;
  const double ratio_floor = kRatioFloor * (1.0 + std::abs(f_star));
  const auto window_steps = static_cast<std::size_t>(steps.period());
  const bool track_window = !steps.is_static() && inputs.oracle;

  TrajectoryRecord rec;
  TrajectorySummary& sum = rec.summary;
  std::vector<double> x = x0;
  std::vector<double> g;
  Workspace w;
  double prev_gap = kNaN;
  std::deque<double> recent_gaps;

  for (std::size_t k = 0;; ++k) {
    Sample s;
    s.step = k;
    s.time = static_cast<double>(k) * tau;
    double total_x = 0.0;
    for (double v : x) total_x += v;
    s.sum_drift = total_x - K;
    gradients(x, problem.costs, g);
    const auto [gmin, gmax] = std::minmax_element(g.begin(), g.end());
    s.dispersion = *gmax - *gmin;
    s.cost = total_cost(problem.costs, x);
    if (inputs.oracle) {
      const ResidualParts parts = residual(problem.costs, x, *inputs.oracle);
      s.gap = parts.gap;
      s.residual = parts.total();
    } else {
      s.gap = kNaN;
      s.residual = kNaN;
    }
    sum.max_abs_sum_drift = std::max(sum.max_abs_sum_drift, std::abs(s.sum_drift));
    if (inputs.oracle) {
      if (k > 0 && prev_gap > ratio_floor) sum.max_step_ratio = std::max(sum.max_step_ratio, s.gap / prev_gap);
      prev_gap = s.gap;
      if (track_window) {
        recent_gaps.push_back(s.gap);
        if (recent_gaps.size() > window_steps + 1) recent_gaps.pop_front();
        if (recent_gaps.size() == window_steps + 1 && recent_gaps.front() > ratio_floor) {
          sum.max_window_ratio = std::max(sum.max_window_ratio, s.gap / recent_gaps.front());
        }
      }
    }
    bool hit = false;
    if (config.threshold && !sum.steps_to_threshold) {
      const double metric = config.threshold_metric == StopMetric::Residual ? s.residual : s.dispersion;
      if (metric < *config.threshold) {
        sum.steps_to_threshold = k;
        sum.time_to_threshold = s.time;
        hit = true;
      }
    }
    const bool last = k == total || (hit && config.stop_at_threshold);
    if (k % config.record_stride == 0 || last) {
      if (config.record_states) s.x = x;
      rec.samples.push_back(std::move(s));
    }
    if (last) {
      sum.steps_run = k;
      sum.stopped_early = k < total;
      break;
    }
    try {
      advance(x, steps.at(static_cast<double>(k)), problem.costs, config, w);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(k), k);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(x[i]) || std::abs(x[i]) > kDivergenceLimit) {
        throw DivergenceError("state diverged at step " + std::to_string(k + 1) + " (agent " +
                                  std::to_string(i) + ", x = " + shortest(x[i]) +
                                  "); reduce the step rate",
                              k + 1);
      }
    }
  }

  // Steady-state statistics over the final 10% of samples (at least 100).
  const std::size_t m = rec.samples.size();
  const std::size_t win = std::min(m, std::max<std::size_t>(100, m / 10));
  double fmin = std::numeric_limits<double>::infinity();
  double fmax = -fmin;
  double res_sum = 0.0;
  double disp_sum = 0.0;
  for (std::size_t k = m - win; k < m; ++k) {
    const Sample& s = rec.samples[k];
    fmin = std::min(fmin, s.cost);
    fmax = std::max(fmax, s.cost);
    res_sum += s.residual;
    disp_sum += s.dispersion;
  }
  sum.chattering_amplitude = fmax - fmin;
  sum.steady_state_residual = res_sum / static_cast<double>(win);
  sum.steady_state_dispersion = disp_sum / static_cast<double>(win);
  rec.final_state = std::move(x);
  return rec;
}

TrajectoryRecord ct_integrate(const std::vector<double>& x0, const RunInputs& inputs,
                              const ProtocolConfig& config) {
  if (!is_continuous(config.variant)) throw ValidationError("ct_integrate needs a continuous-time variant");
  return run(x0, inputs, config);
}

// --- output ----------------------------------------------------------------

void write_trajectory_csv(std::ostream& out, const TrajectoryRecord& record) {
  out << "step,time,residual,sum_drift,grad_dispersion,cost";
  const std::size_t nx = record.samples.empty() ? 0 : record.samples.front().x.size();
  for (std::size_t i = 0; i < nx; ++i) out << ",x" << i;
  out << "\n";
  for (const Sample& s : record.samples) {
    out << s.step << ',' << shortest(s.time) << ',' << shortest(s.residual) << ','
        << shortest(s.sum_drift) << ',' << shortest(s.dispersion) << ',' << shortest(s.cost);
    for (double v : s.x) out << ',' << shortest(v);
    out << "\n";
  }
}

void write_summary(std::ostream& out, const TrajectorySummary& s) {
  auto opt = [](const auto& v) { return v ? shortest(static_cast<double>(*v)) : std::string("none"); };
  out << "steps_run = " << s.steps_run << "\n";
  out << "stopped_early = " << (s.stopped_early ? "true" : "false") << "\n";
  out << "steps_to_threshold = " << opt(s.steps_to_threshold) << "\n";
  out << "time_to_threshold = " << opt(s.time_to_threshold) << "\n";
  out << "steady_state_residual = " << shortest(s.steady_state_residual) << "\n";
  out << "steady_state_dispersion = " << shortest(s.steady_state_dispersion) << "\n";
  out << "chattering_amplitude = " << shortest(s.chattering_amplitude) << "\n";
  out << "max_abs_sum_drift = " << shortest(s.max_abs_sum_drift) << "\n";
  out << "max_step_ratio = " << shortest(s.max_step_ratio) << "\n";
  out << "max_window_ratio = " << shortest(s.max_window_ratio) << "\n";
}

}  // namespace fsalloc
