#pragma once

// Laplacian-gradient protocols: discrete-time steppers and continuous-time
// integrators with nonlinear actuation or communication maps, plus the
// per-run metrics (residual, feasibility drift, gradient dispersion).

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fsalloc/cost.hpp"
#include "fsalloc/network.hpp"
#include "fsalloc/nonlinearity.hpp"
#include "fsalloc/oracle.hpp"

namespace fsalloc {

enum class Variant {
  DtActuation,      // x_i += eta sum_j W_ji h_a(g_j - g_i)
  DtCommunication,  // x_i += eta sum_j W_ji (h_c(g_j) - h_c(g_i))
  CtActuation,
  CtCommunication,
  DtLinear,
  CtLinear,
};

enum class Integrator { Euler, Rk4 };
enum class StopMetric { Residual, Dispersion };

const char* to_string(Variant v);
const char* to_string(Integrator i);
const char* to_string(StopMetric m);
Variant parse_variant(const std::string& name);
Integrator parse_integrator(const std::string& name);
StopMetric parse_stop_metric(const std::string& name);

bool is_continuous(Variant v);
bool uses_communication_map(Variant v);

struct ProtocolConfig {
  Variant variant = Variant::DtLinear;
  double rate = 0.1;  // eta_bar (DT gain) or eta (CT gain)
  double dt = 0.01;   // CT integrator step
  Integrator integrator = Integrator::Rk4;
  double horizon = 1000.0;  // DT steps or CT final time
  NonlinearMap actuation;
  NonlinearMap communication;

  std::size_t record_stride = 1;  // integrator steps between samples
  bool record_states = false;
  StopMetric threshold_metric = StopMetric::Residual;
  std::optional<double> threshold;  // absolute; first crossing is reported
  bool stop_at_threshold = false;

  /// Throws ValidationError on bad gains, horizons, or a map placed in the
  /// slot the variant does not use.
  void validate() const;
  std::size_t total_steps() const;
  /// Time represented by one integrator step (1 for DT).
  double step_duration() const;
};

struct Sample {
  std::size_t step = 0;
  double time = 0.0;
  double residual = 0.0;  // F(x) - F*, NaN without an oracle
  double gap = 0.0;       // sum_i of Bregman terms D_i(x_i, x_i*)
  double sum_drift = 0.0;  // sum x - K
  double dispersion = 0.0;  // max_i f_i' - min_i f_i'
  double cost = 0.0;
  std::vector<double> x;  // only with record_states
};

struct TrajectorySummary {
  std::size_t steps_run = 0;
  bool stopped_early = false;
  std::optional<std::size_t> steps_to_threshold;
  std::optional<double> time_to_threshold;
  double steady_state_residual = 0.0;  // mean residual over the final window
  double chattering_amplitude = 0.0;   // max - min of F over the final window
  double steady_state_dispersion = 0.0;
  double max_abs_sum_drift = 0.0;
  double max_step_ratio = 0.0;    // max gap(k+1)/gap(k) over consecutive steps
  double max_window_ratio = 0.0;  // max gap(k+T)/gap(k), T = schedule period
};

struct TrajectoryRecord {
  std::vector<Sample> samples;
  TrajectorySummary summary;
  std::vector<double> final_state;
};

/// One synchronous DT update; gradients are all taken at the current state.
std::vector<double> dt_step(const std::vector<double>& x, const Topology& topology,
                            const std::vector<CostModel>& costs, const ProtocolConfig& config);

/// Right-hand side of the CT dynamics.
std::vector<double> ct_field(const std::vector<double>& x, const Topology& topology,
                             const std::vector<CostModel>& costs, const ProtocolConfig& config);

/// One integrator step of length config.dt with the topology held fixed.
std::vector<double> ct_step(const std::vector<double>& x, const Topology& topology,
                            const std::vector<CostModel>& costs, const ProtocolConfig& config);

/// Rate guarantee for sector-bounded maps on a static connected graph.
struct StepBound {
  double max_rate = 0.0;  // 2 a_lo lambda2 / (u lambda_n^2 a_hi)
  double lambda2 = 0.0;
  double lambda_n = 0.0;
  double v = 0.0;
  double u = 0.0;
  double alpha_lo = 0.0;
  double alpha_hi = 0.0;

  /// Predicted per-step factor 1 - rate v (a_lo lambda2 - u/2 lambda_n^2 a_hi rate).
  double contraction(double rate) const;
};

/// Throws ValidationError when the map has no positive finite sector (only
/// sign preservation holds and no rate is guaranteed) or the graph is
/// disconnected.
StepBound step_bound(const std::vector<CostModel>& costs, const Topology& topology,
                     const MapClassification& map, double x_lo, double x_hi);

struct RunInputs {
  const AllocationProblem& problem;
  const TopologySchedule& schedule;
  const OracleSolution* oracle = nullptr;
};

/// Drives the configured protocol from x0. Rejects x0 whose sum misses K by
/// more than 1e-9 (1 + |K|) with InfeasibleError; throws DivergenceError when
/// any |x_i| exceeds 1e12 or turns non-finite.
TrajectoryRecord run(const std::vector<double>& x0, const RunInputs& inputs, const ProtocolConfig& config);

/// run() restricted to the CT variants.
TrajectoryRecord ct_integrate(const std::vector<double>& x0, const RunInputs& inputs,
                              const ProtocolConfig& config);

/// F(x) - F(x*) split as Bregman terms plus the first-order term, which
/// vanishes on the feasible set.
struct ResidualParts {
  double gap = 0.0;
  double first_order = 0.0;
  double total() const { return gap + first_order; }
};
ResidualParts residual(const std::vector<CostModel>& costs, const std::vector<double>& x,
                       const OracleSolution& oracle);

/// step,time,residual,sum_drift,grad_dispersion,cost[,x0..]
void write_trajectory_csv(std::ostream& out, const TrajectoryRecord& record);
void write_summary(std::ostream& out, const TrajectorySummary& summary);

}  // namespace fsalloc
