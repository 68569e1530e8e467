// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fd_checks.hpp"
#include "fsalloc/error.hpp"
#include "fsalloc/format.hpp"
#include "fsalloc/nonlinearity.hpp"
#include "fsalloc/oracle.hpp"
#include "fsalloc/protocol.hpp"
#include "fsalloc/random.hpp"
#include "fsalloc/scenario.hpp"

using namespace fsalloc;

namespace {

using Clock = std::chrono::steady_clock;

const std::filesystem::path kScenarios = std::filesystem::path(FSALLOC_SOURCE_DIR) / "scenarios";

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[violated] " << what << "; ";
    }
  }
  void note(const std::string& what) { detail << what << "; "; }
};

double sum(const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0); }

// Random quadratic costs and a feasible random start.
AllocationProblem random_quadratic(Rng& rng, std::size_t n, double gamma_lo, double gamma_hi) {
  AllocationProblem p;
  for (std::size_t i = 0; i < n; ++i) {
    p.costs.emplace_back(QuadraticCost{rng.uniform(gamma_lo, gamma_hi), rng.uniform(-5.0, 5.0), rng.uniform(0.0, 10.0)});
  }
  p.total = rng.uniform(-50.0, 200.0);
  return p;
}

std::vector<double> random_feasible(Rng& rng, std::size_t n, double total, double spread) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.uniform(-spread, spread);
  const double shift = (total - sum(x)) / static_cast<double>(n);
  for (double& v : x) v += shift;
  return x;
}

RunOptions quiet() {
  RunOptions o;
  o.write_files = false;
  return o;
}

// ---------------------------------------------------------------------------

void feasibility(Outcome& out) {
  Rng rng(101);
  const std::size_t n = 20;
  const Topology t = connected_random_geometric(n, 0.4, 17);
  const TopologySchedule sched = TopologySchedule::constant(t);
  AllocationProblem p = random_quadratic(rng, n, 0.05, 1.0);
  const double K = p.total;
  const std::vector<double> x0 = random_feasible(rng, n, K, 10.0);
  const std::vector<NonlinearMap> maps{NonlinearMap::identity(),          NonlinearMap::saturation(1.0),
                                       NonlinearMap::uniform_quantizer(1.0), NonlinearMap::log_quantizer(1.0),
                                       NonlinearMap::sign_power(0.5),        NonlinearMap::composite_sign_power(0.5, 1.5)};
  const Variant variants[] = {Variant::DtLinear,        Variant::CtLinear,    Variant::DtActuation,
                              Variant::DtCommunication, Variant::CtActuation, Variant::CtCommunication};
  double worst = 0.0, slowest = 0.0;
  int cases = 0;
  for (Variant v : variants) {
    const bool linear = v == Variant::DtLinear || v == Variant::CtLinear;
    for (const NonlinearMap& m : maps) {
      if (linear && !m.is_identity()) continue;
      ProtocolConfig c;
      c.variant = v;
      c.rate = is_continuous(v) ? 0.5 : 0.01;
      c.dt = 0.01;
      c.horizon = is_continuous(v) ? 100.0 : 1e4;
      c.record_stride = 100;
      if (!linear) (uses_communication_map(v) ? c.communication : c.actuation) = m;
      const auto t0 = Clock::now();
      const TrajectoryRecord r = run(x0, RunInputs{p, sched, nullptr}, c);
      const double dt = seconds_since(t0);
      slowest = std::max(slowest, dt);
      worst = std::max(worst, r.summary.max_abs_sum_drift);
      ++cases;
      out.require(r.summary.max_abs_sum_drift <= 1e-9 * (1.0 + std::abs(K)),
                  std::string(to_string(v)) + " " + m.describe() + " drift " + shortest(r.summary.max_abs_sum_drift));
      out.require(dt < 10.0, std::string(to_string(v)) + " " + m.describe() + " took " + shortest(dt) + " s");
    }
  }
  out.note(std::to_string(cases) + " cases, max drift " + shortest(worst) + " (limit " +
           shortest(1e-9 * (1.0 + std::abs(K))) + "), slowest case " + fixed(slowest, 3) + " s");
}

void oracle_equivalence(Outcome& out) {
  Rng rng(202);
  double worst_x = 0.0;
  std::size_t worst_steps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    const AllocationProblem p = random_quadratic(rng, n, 0.05, 1.0);
    const OracleSolution a = solve_closed_form(p);
    const OracleSolution b = solve_bisection(p);
    for (std::size_t i = 0; i < n; ++i) worst_x = std::max(worst_x, std::abs(a.x_star[i] - b.x_star[i]));

    const Topology t = connected_random_geometric(n, 0.5, 1000 + static_cast<std::uint64_t>(trial));
    const auto cls = classify(NonlinearMap::identity(), {-1.0, 1.0});
    const StepBound bound = step_bound(p.costs, t, cls, -1e3, 1e3);
    ProtocolConfig c;
    c.variant = Variant::DtLinear;
    c.rate = bound.max_rate / 2.0;
    c.horizon = 1e5;
    c.record_stride = 1000;
    c.threshold = 1e-8 * (1.0 + std::abs(a.f_star));
    c.stop_at_threshold = true;
    const std::vector<double> x0(n, p.total / static_cast<double>(n));
    const TrajectoryRecord r = run(x0, RunInputs{p, TopologySchedule::constant(t), &a}, c);
    if (!r.summary.steps_to_threshold) {
      out.require(false, "trial " + std::to_string(trial) + " (n=" + std::to_string(n) +
                             ") final residual " + shortest(r.samples.back().residual));
    } else {
      worst_steps = std::max(worst_steps, *r.summary.steps_to_threshold);
    }
  }
  out.require(worst_x <= 1e-8, "closed form vs bisection differ by " + shortest(worst_x));
  out.note("max |x_cf - x_bis| = " + shortest(worst_x) + ", slowest convergence " + std::to_string(worst_steps) +
           " steps");
}

void rate_bound(Outcome& out) {
  Rng rng(303);
  double worst_margin = -std::numeric_limits<double>::infinity();
  std::size_t ratios = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 10 + rng.below(11);
    const AllocationProblem p = random_quadratic(rng, n, 0.1, 1.0);
    const OracleSolution s = solve(p);
    const Topology t = connected_random_geometric(n, 0.5, 500 + static_cast<std::uint64_t>(trial));
    const std::vector<double> x0 = random_feasible(rng, n, p.total, 20.0);
    for (double delta : {0.5, 1.0}) {
      const NonlinearMap m = NonlinearMap::log_quantizer(delta);
      const StepBound b = step_bound(p.costs, t, classify(m, {-1.0, 1.0}), -1e3, 1e3);
      for (double frac : {0.25, 0.5, 1.0}) {
        ProtocolConfig c;
        c.variant = Variant::DtActuation;
        c.actuation = m;
        c.rate = frac * b.max_rate;
        c.horizon = 2e4;
        const double predicted = b.contraction(c.rate);
        const TrajectoryRecord r = run(x0, RunInputs{p, TopologySchedule::constant(t), &s}, c);
        // Ratios below the floor measure rounding, not the dynamics.
        const double floor = 1e-9 * (1.0 + std::abs(s.f_star));
        for (std::size_t k = 1; k < r.samples.size(); ++k) {
          const double prev = r.samples[k - 1].residual;
          if (!(prev > floor)) break;
          const double ratio = r.samples[k].residual / prev;
          ++ratios;
          worst_margin = std::max(worst_margin, ratio - predicted);
          if (ratio > predicted + 1e-9) {
            out.require(false, "trial " + std::to_string(trial) + " delta " + shortest(delta) + " at " +
                                   shortest(frac) + "x: step " + std::to_string(k) + " ratio " + shortest(ratio) +
                                   " > predicted " + shortest(predicted));
            break;
          }
        }
      }
    }
  }
  out.note(std::to_string(ratios) + " step ratios checked, max (ratio - predicted) = " + shortest(worst_margin));
}

void sector_dichotomy(Outcome& out) {
  const ScenarioSpec spec = load_scenario(kScenarios / "cpu_small.cfg");
  out.require(spec.size() == 20 && spec.problem.total == 100.0, "scenario is not n=20, K=100");
  const ScenarioResult r = run_cpu_scenario(spec, quiet());
  const double scale = 1.0 + std::abs(r.oracle.f_star);
  std::vector<std::pair<double, double>> uniform;  // delta, steady-state residual
  int logs = 0;
  for (const RunArtifact& a : r.artifacts) {
    const NonlinearMap& m = a.config.actuation;
    if (m.kind() == MapKind::LogQuantizer) {
      ++logs;
      double best = std::numeric_limits<double>::infinity();
      for (const Sample& s : a.record.samples) best = std::min(best, s.residual);
      out.require(best < 1e-6 * scale, a.label + " best residual " + shortest(best));
    } else if (m.kind() == MapKind::UniformQuantizer) {
      const double ss = a.record.summary.steady_state_residual;
      out.require(ss > 1e-6 * scale, a.label + " did not stall (" + shortest(ss) + ")");
      uniform.emplace_back(m.delta(), ss);
    }
  }
  out.require(logs > 0, "no log-quantizer runs");
  std::sort(uniform.begin(), uniform.end(), [](auto a, auto b) { return a.first > b.first; });
  std::vector<double> deltas;
  for (auto [d, v] : uniform) deltas.push_back(d);
  out.require(deltas == std::vector<double>{2.0, 1.0, 0.5}, "uniform deltas are not {2, 1, 0.5}");
  double largest = 0.0;
  for (auto [d, v] : uniform) largest = std::max(largest, v);
  std::string series;
  for (std::size_t i = 0; i < uniform.size(); ++i) {
    series += (i ? ", " : "") + std::string("delta ") + shortest(uniform[i].first) + ": " + shortest(uniform[i].second);
    if (i > 0) {
      out.require(uniform[i].second <= uniform[i - 1].second + 0.05 * largest,
                  "residual grows from delta " + shortest(uniform[i - 1].first) + " to " + shortest(uniform[i].first));
    }
  }
  out.note("uniform steady state " + series + "; " + std::to_string(logs) + " log runs below " +
           shortest(1e-6 * scale));
}

void uniform_connectivity(Outcome& out) {
  const ScenarioSpec spec = load_scenario(kScenarios / "cpu.cfg");
  int connected_phases = 0;
  for (const Phase& ph : spec.schedule.phases()) connected_phases += is_connected(ph.topology) ? 1 : 0;
  out.require(spec.schedule.phases().size() == 4, "schedule does not have 4 phases");
  out.require(connected_phases == 0, std::to_string(connected_phases) + " phases are connected on their own");
  const Topology cycle_union = spec.schedule.union_over_window(0.0, spec.schedule.period());
  out.require(is_connected(cycle_union), "union over one cycle is disconnected");

  RunOptions only = quiet();
  only.only_label = "log-switching";
  const ScenarioResult r = run_scenario(spec, only);
  const RunArtifact& sw = r.artifacts.at(0);
  const double threshold = 1e-5 * (1.0 + std::abs(r.oracle.f_star));

  ScenarioSpec fixed_spec = spec;
  fixed_spec.schedule = TopologySchedule::constant(cycle_union);
  fixed_spec.switching = false;
  const ScenarioResult s = run_scenario(fixed_spec, only);
  const RunArtifact& st = s.artifacts.at(0);

  const auto ks = sw.record.summary.steps_to_threshold;
  const auto kf = st.record.summary.steps_to_threshold;
  out.require(sw.threshold && std::abs(*sw.threshold - threshold) <= 1e-15 * threshold,
              "scenario threshold is not 1e-5 (1 + |F*|)");
  out.require(kf.has_value(), "static union graph never reached the threshold");
  out.require(ks.has_value(), "switching run never reached the threshold");
  if (ks && kf) {
    out.require(*ks <= 10 * *kf, "switching took " + std::to_string(*ks) + " > 10 x " + std::to_string(*kf));
    out.note("switching " + std::to_string(*ks) + " steps vs static union " + std::to_string(*kf) + " (ratio " +
             fixed(static_cast<double>(*ks) / static_cast<double>(*kf), 2) + ")");
  }
}

void dispatch(Outcome& out) {
  const ScenarioSpec spec = load_scenario(kScenarios / "dispatch.cfg");
  out.require(spec.size() == 12 && spec.problem.total == 1200.0, "scenario is not n=12, D=1200");
  out.require(spec.graph == cycle_graph(12), "graph is not the 12-cycle");
  const ScenarioResult r = run_dispatch_scenario(spec, quiet());
  const RunArtifact* lin = r.find("linear");
  const RunArtifact* mu02 = r.find("mu-0.2");
  const RunArtifact* mu0 = r.find("mu-0");
  if (!lin || !mu02 || !mu0) {
    out.require(false, "missing linear, mu-0.2 or mu-0 run");
    return;
  }
  const auto t02 = mu02->record.summary.time_to_threshold;
  const auto tlin = lin->record.summary.time_to_threshold;
  out.require(t02.has_value(), "mu=0.2 never reaches the dispersion threshold");
  if (t02) {
    out.require(*t02 < 100.0, "mu=0.2 threshold time " + shortest(*t02) + " >= 100");
    out.require(!tlin || *t02 < *tlin, "mu=0.2 not faster than linear");
  }
  const double a0 = mu0->record.summary.chattering_amplitude;
  const double a02 = mu02->record.summary.chattering_amplitude;
  out.require(a0 > a02, "mu=0 chattering " + shortest(a0) + " not above mu=0.2's " + shortest(a02));
  std::string times;
  for (const RunArtifact& a : r.artifacts) {
    const auto t = a.record.summary.time_to_threshold;
    times += a.label + "=" + (t ? shortest(*t) : std::string("never")) + " ";
  }
  out.note("time to dispersion < 1e-3: " + times);
  out.note("chattering mu=0 " + shortest(a0) + " vs mu=0.2 " + shortest(a02) + " (factor " +
           (a02 > 0.0 ? shortest(a0 / a02) : std::string("inf")) + ")");
}

void reserve(Outcome& out) {
  const ScenarioSpec spec = load_scenario(kScenarios / "reserve.cfg");
  out.require(spec.reserve && spec.reserve->generators == 8 && spec.reserve->battery_coefficients.size() == 4,
              "scenario is not 8 generators + 4 batteries");
  out.require(spec.problem.total == 800.0, "demand is not 800");
  const ScenarioResult r = run_dispatch_scenario(spec, quiet());
  double consensus = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    consensus = std::max(consensus, std::abs(spec.problem.costs[i].gradient(r.oracle.x_star[i]) - r.oracle.psi_star));
  }
  out.require(consensus <= 1e-8, "oracle gradient consensus " + shortest(consensus));
  const RunArtifact* comp = r.find("composite");
  const RunArtifact* lin = r.find("linear");
  if (!comp || !lin) {
    out.require(false, "missing composite or linear run");
    return;
  }
  // Stacked vector y = (x, -r): componentwise error on y covers x and r.
  double err = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    err = std::max(err, std::abs(comp->record.final_state[i] - r.oracle.x_star[i]));
  }
  out.require(err <= 1e-4, "composite final error " + shortest(err));
  const auto tc = comp->record.summary.time_to_threshold;
  const auto tl = lin->record.summary.time_to_threshold;
  out.require(tc.has_value(), "composite never reaches the threshold");
  out.require(tc && (!tl || *tc < *tl), "composite not faster than linear");
  out.note("consensus " + shortest(consensus) + ", composite error " + shortest(err) + ", time to threshold " +
           (tc ? shortest(*tc) : "never") + " vs linear " + (tl ? shortest(*tl) : "never"));
}

void hygiene(Outcome& out) {
  Rng rng(404);
  std::size_t points = 0, fd_bad = 0;
  for (const CostModel& c : testing::fd_suite_models()) {
    const auto xs = testing::sample_points(rng, -2.0, 12.0, 1000, testing::kinks_of(c), 1e-4);
    points += xs.size();
    fd_bad += testing::gradient_failures(c, xs, 1e-6).size();
  }
  out.require(fd_bad == 0, std::to_string(fd_bad) + " finite-difference mismatches");

  const std::vector<NonlinearMap> kinds{
      NonlinearMap::identity(),
      NonlinearMap::saturation(1.0),
      NonlinearMap::uniform_quantizer(1.0),
      NonlinearMap::log_quantizer(1.0),
      NonlinearMap::sign_power(0.0),
      NonlinearMap::sign_power(0.5),
      NonlinearMap::sign_power(1.5),
      NonlinearMap::composite_sign_power(0.5, 1.5),
      NonlinearMap::compose(NonlinearMap::saturation(2.0), NonlinearMap::log_quantizer(1.0)),
  };
  std::size_t violations = 0, samples = 0;
  for (const NonlinearMap& m : kinds) {
    for (OperatingRange range : {OperatingRange{-1.0, 1.0}, OperatingRange{-50.0, 30.0}}) {
      const auto rep = verify_classification(m, classify(m, range), range, 10000);
      samples += rep.samples;
      out.require(rep.samples >= 10000, m.describe() + " verified on only " + std::to_string(rep.samples) + " points");
      violations += rep.violations.size();
      for (const auto& v : rep.violations) out.require(false, m.describe() + " " + v.property + " at " + shortest(v.z));
    }
  }
  out.note(std::to_string(points) + " gradient points, " + std::to_string(fd_bad) + " mismatches; " +
           std::to_string(samples) + " classification samples over " + std::to_string(kinds.size()) + " kinds, " +
           std::to_string(violations) + " violations");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;  // 0: no runtime limit
    std::function<void(Outcome&)> body;
  };
  const std::vector<Criterion> criteria{
      {"feasibility invariance", 0.0, feasibility},
      {"oracle equivalence", 0.0, oracle_equivalence},
      {"rate bound soundness", 30.0, rate_bound},
      {"sector vs non-sector dichotomy", 60.0, sector_dichotomy},
      {"uniform connectivity", 60.0, uniform_connectivity},
      {"dispatch fixed-time behavior", 120.0, dispatch},
      {"reserve stacking", 120.0, reserve},
      {"numerical hygiene", 0.0, hygiene},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const Criterion& c = criteria[i];
    Outcome out;
    const auto t0 = Clock::now();
    try {
      c.body(out);
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    const double elapsed = seconds_since(t0);
    if (c.limit_s > 0.0) out.require(elapsed < c.limit_s, "runtime over " + shortest(c.limit_s) + " s");
    std::printf("%s %zu. %s (%.2f s): %s\n", out.pass ? "PASS" : "FAIL", i + 1, c.name, elapsed,
                out.detail.str().c_str());
    std::fflush(stdout);
    failed += out.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
