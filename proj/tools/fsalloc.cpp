// Command-line front end for scenario files.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "fsalloc/error.hpp"
#include "fsalloc/scenario.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stride;
  bool literal = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("config", c.config, "scenario file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (overrides the scenario)");
  cmd->add_option("--seed", c.seed, "seed override");
  cmd->add_option("--stride", c.stride, "record every k-th integrator step")->check(CLI::PositiveNumber);
  cmd->add_flag("--literal", c.literal, "use the scenario's literal_total instead of total");
}

fsalloc::ScenarioSpec load(const Common& c) {
  fsalloc::ParseOptions opt;
  opt.literal_constants = c.literal;
  opt.seed = c.seed;
  opt.stride = c.stride;
  fsalloc::ScenarioSpec spec = fsalloc::load_scenario(c.config, opt);
  if (!c.out.empty()) spec.output_dir = c.out;
  return spec;
}

void write_outputs(const fsalloc::ScenarioResult& res, bool plots) {
  std::filesystem::create_directories(res.spec.output_dir);
  std::ofstream summary(res.spec.output_dir / "summary.txt", std::ios::binary);
  fsalloc::write_result_summary(summary, res);
  if (plots) fsalloc::write_plot_files(res.spec.output_dir, res, fsalloc::emit_plot_data(res.artifacts));
  for (const auto& c : res.checks) std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  std::cout << "wrote " << (res.spec.output_dir / "summary.txt").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-sum allocation over networks with nonlinear channels"};
  app.require_subcommand(1);

  Common c;
  std::string label;
  bool serial = false;

  auto* run = app.add_subcommand("run", "run one protocol block (the first, or --label)");
  add_common(run, c);
  run->add_option("--label", label, "protocol label to run");

  auto* sweep = app.add_subcommand("sweep", "run every protocol block with scenario checks and plot data");
  add_common(sweep, c);
  sweep->add_flag("--serial", serial, "run sweep members one after another");

  auto* oracle = app.add_subcommand("oracle", "solve the problem centrally and print x*, psi*, F*");
  add_common(oracle, c);

  auto* validate = app.add_subcommand("validate", "parse, check connectivity and feasibility");
  add_common(validate, c);

  CLI11_PARSE(app, argc, argv);

  try {
    const fsalloc::ScenarioSpec spec = load(c);
    if (*validate) {
      const auto x0 = fsalloc::initialize(spec);
      (void)x0;
      std::cout << "ok: " << spec.name << " (" << fsalloc::to_string(spec.kind) << "), " << spec.size()
                << " agents, total " << spec.problem.total << ", " << spec.runs.size() << " protocol runs\n";
    } else if (*oracle) {
      fsalloc::write_oracle_record(std::cout, fsalloc::solve_oracle(spec));
    } else if (*run) {
      fsalloc::RunOptions opt;
      opt.only_label = label.empty() ? spec.runs.front().label : label;
      write_outputs(fsalloc::run_scenario(spec, opt), false);
    } else {
      fsalloc::RunOptions opt;
      opt.parallel = !serial;
      write_outputs(fsalloc::run_any(spec, opt), true);
    }
  } catch (const fsalloc::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const fsalloc::ValidationError& e) {
    std::cerr << "invalid: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
