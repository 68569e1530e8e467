#pragma once

// Scenario configs, experiment drivers and artifact writers. The config
// grammar is documented in README.md.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fsalloc/cost.hpp"
#include "fsalloc/network.hpp"
#include "fsalloc/oracle.hpp"
#include "fsalloc/protocol.hpp"

namespace fsalloc {

enum class ScenarioKind { Custom, Cpu, Dispatch };
enum class InitRule { Equal, Random, Vector };

const char* to_string(ScenarioKind k);
const char* to_string(InitRule r);

struct ParseOptions {
  bool literal_constants = false;  // use `literal_total` instead of `total`
  std::optional<std::uint64_t> seed;  // overrides [scenario] seed
  std::optional<std::size_t> stride;  // overrides every protocol's stride
};

struct InitSpec {
  InitRule rule = InitRule::Equal;
  std::vector<double> values;  // InitRule::Vector
  bool respect_box = true;     // clamp-and-repair into the box
};

struct ProtocolRun {
  std::string label;
  ProtocolConfig config;
  bool relative_threshold = false;  // threshold scaled by 1 + |F*|
};

struct ReserveSpec {
  std::size_t generators = 0;
  std::vector<double> battery_coefficients;
  double battery_curvature = 0.0;  // rho_b, resolved at parse time
};

struct ScenarioSpec {
  std::string name;
  ScenarioKind kind = ScenarioKind::Custom;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  Topology graph{1};  // static graph, or the union of the switching phases
  TopologySchedule schedule = TopologySchedule::constant(Topology(1));
  bool switching = false;

  AllocationProblem problem;  // stacked when `reserve` is set
  std::optional<std::pair<double, double>> box;
  std::optional<BoxPenalty> penalty;
  double stated_total = 0.0;  // K as written in the file
  std::optional<double> literal_total;
  std::vector<double> coefficients;  // weighted-sum a_i; x = a_i y_i
  std::optional<ReserveSpec> reserve;

  InitSpec init;
  std::vector<ProtocolRun> runs;
  std::filesystem::path output_dir = "out";

  std::size_t size() const { return problem.size(); }
};

/// Parses and validates a scenario. Throws ValidationError with line and
/// key on bad input (non-odd maps, asymmetric edges, CT dwell not a multiple
/// of dt, schedules that are not uniformly connected, empty sweeps).
ScenarioSpec parse_scenario(std::string_view text, const ParseOptions& options = {});
ScenarioSpec load_scenario(const std::filesystem::path& path, const ParseOptions& options = {});

/// Feasible initial state. Throws InfeasibleError for box-infeasible totals
/// or a user vector that misses the total.
std::vector<double> initialize(const ScenarioSpec& spec);

/// Clamp into [lo, hi], then spread the sum gap equally over the agents not
/// yet at the relevant bound, repeating until the sum is exact.
std::vector<double> clamp_and_repair(std::vector<double> x, double total, double lo, double hi);

OracleSolution solve_oracle(const ScenarioSpec& spec);

struct Provenance {
  std::string scenario;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string label;
  std::string variant;
  std::string integrator;
  double dt = 0.0;
  double rate = 0.0;
  std::string actuation;
  std::string communication;
  std::optional<double> epsilon;
  std::optional<double> rho_b;
};

void write_provenance(std::ostream& out, const Provenance& p);

struct RunArtifact {
  std::string label;
  ProtocolConfig config;
  Provenance provenance;
  TrajectoryRecord record;
  std::optional<double> threshold;  // absolute value used for the run
  std::filesystem::path csv_path;   // empty when nothing was written
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ScenarioResult {
  ScenarioSpec spec;
  OracleSolution oracle;
  std::vector<double> x0;
  std::vector<RunArtifact> artifacts;
  std::vector<Check> checks;

  const RunArtifact* find(std::string_view label) const;
};

struct RunOptions {
  bool write_files = true;
  bool parallel = true;
  std::optional<std::string> only_label;  // run a single protocol block
};

/// Runs every protocol block and writes <label>.csv files plus summary.txt.
ScenarioResult run_scenario(const ScenarioSpec& spec, const RunOptions& options = {});

/// run_scenario plus the uniform-quantizer and identity-baseline checks and
/// the phase connectivity assertions.
ScenarioResult run_cpu_scenario(const ScenarioSpec& spec, const RunOptions& options = {});

/// run_scenario plus the sign-power ordering checks, or the stacked-reserve
/// checks when the spec carries batteries.
ScenarioResult run_dispatch_scenario(const ScenarioSpec& spec, const RunOptions& options = {});

/// Dispatches on spec.kind.
ScenarioResult run_any(const ScenarioSpec& spec, const RunOptions& options = {});

struct PlotRow {
  std::string series;
  double time = 0.0;
  double value = 0.0;
};

struct PlotData {
  std::vector<PlotRow> residual;
  std::vector<PlotRow> states;
  std::vector<PlotRow> cost;
  std::vector<PlotRow> average;  // mean of x, which the protocols keep fixed
};

PlotData emit_plot_data(const std::vector<RunArtifact>& artifacts);
void write_plot_table(std::ostream& out, const std::vector<PlotRow>& rows);
/// Writes plot_<kind>.csv files into dir, each with a provenance header.
void write_plot_files(const std::filesystem::path& dir, const ScenarioResult& result, const PlotData& data);

void write_result_summary(std::ostream& out, const ScenarioResult& result);

}  // namespace fsalloc
