#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fsalloc/error.hpp"
#include "fsalloc/scenario.hpp"

using namespace fsalloc;

namespace {

const std::filesystem::path kScenarios = std::filesystem::path(FSALLOC_SOURCE_DIR) / "scenarios";

const char* kMinimal = R"(
[scenario]
name = tiny
seed = 3
[network]
family = path
n = 2
[problem]
total = 12
[cost]
family = explicit
[agent]
pi = 1
target = 4
[agent]
pi = 1
target = 6
[protocol]
label = lin
variant = dt-linear
rate = 0.2
horizon = 200
)";

std::string with(std::string text, const std::string& from, const std::string& to) {
  const auto p = text.find(from);
  REQUIRE(p != std::string::npos);
  return text.replace(p, from.size(), to);
}

double sum(const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0); }

}  // namespace

TEST_CASE("minimal two-agent scenario") {
  const ScenarioSpec s = parse_scenario(kMinimal);
  CHECK(s.name == "tiny");
  CHECK(s.size() == 2);
  CHECK(s.runs.size() == 1);
  const OracleSolution o = solve_oracle(s);
  CHECK(o.x_star[0] == doctest::Approx(5.0));
  RunOptions opt;
  opt.write_files = false;
  const ScenarioResult r = run_scenario(s, opt);
  CHECK(r.artifacts.at(0).record.samples.back().residual < 1e-10);
}

TEST_CASE("validation errors name the offending key") {
  CHECK_THROWS_WITH_AS(
      parse_scenario(with(kMinimal, "variant = dt-linear", "variant = dt-actuation\nactuation = saturation(lower=-1, upper=2)")),
      doctest::Contains("actuation"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_scenario(with(kMinimal, "family = path", "family = edges\nedges = 0 1 1; 1 0 2")),
                       doctest::Contains("edges"), ValidationError);
  CHECK_THROWS_AS(parse_scenario(with(kMinimal, "rate = 0.2", "rate = -1")), ValidationError);
  CHECK_THROWS_AS(parse_scenario(with(kMinimal, "[protocol]", "[protocl]")), ValidationError);
  CHECK_THROWS_AS(parse_scenario(with(kMinimal, "label = lin", "label = lin\nbogus = 1")), ValidationError);
}

TEST_CASE("CT dwell must be a multiple of dt") {
  const std::string phases = R"(
[network]
family = path
n = 2
schedule = phases
[phase]
edges = 0 1
dwell = 0.25
[phase]
edges =
dwell = 0.25
)";
  std::string text = with(kMinimal, "[network]\nfamily = path\nn = 2\n", phases);
  text = with(text, "variant = dt-linear", "variant = ct-linear\ndt = 0.1");
  CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("dwell"), ValidationError);
  CHECK_NOTHROW(parse_scenario(with(text, "dt = 0.1", "dt = 0.05")));
}

TEST_CASE("schedules must be uniformly connected") {
  const std::string phases = R"(
[network]
family = path
n = 3
schedule = phases
[phase]
edges = 0 1
dwell = 1
)";
  std::string text = with(kMinimal, "[network]\nfamily = path\nn = 2\n", phases);
  text = with(text, "[agent]\npi = 1\ntarget = 4\n", "[agent]\npi = 1\ntarget = 4\n[agent]\npi = 1\ntarget = 4\n");
  CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("uniformly connected"), ValidationError);
}

TEST_CASE("shipped CPU scenario") {
  const ScenarioSpec s = load_scenario(kScenarios / "cpu.cfg");
  CHECK(s.size() == 100);
  CHECK(s.stated_total == 500.0);
  REQUIRE(s.literal_total);
  CHECK(*s.literal_total == 1000.0);
  REQUIRE(s.box);
  CHECK(s.box->first == 3.0);
  CHECK(s.box->second == 7.0);
  CHECK(s.switching);
  CHECK(sum(initialize(s)) == doctest::Approx(500.0).epsilon(1e-12));

  ParseOptions literal;
  literal.literal_constants = true;
  const ScenarioSpec l = load_scenario(kScenarios / "cpu.cfg", literal);
  CHECK(l.problem.total == 1000.0);
  CHECK_THROWS_AS(initialize(l), InfeasibleError);
}

TEST_CASE("every shipped scenario parses") {
  for (const auto& e : std::filesystem::directory_iterator(kScenarios)) {
    CAPTURE(e.path().string());
    CHECK_NOTHROW(load_scenario(e.path()));
  }
}

TEST_CASE("initialization rules") {
  std::string text = with(kMinimal, "total = 12", "total = 8");
  text = with(text, "family = path\nn = 2", "family = path\nn = 4");
  text = with(text, "family = explicit\n[agent]\npi = 1\ntarget = 4\n[agent]\npi = 1\ntarget = 6\n",
              "family = cpu\n");
  SUBCASE("equal") {
    CHECK(initialize(parse_scenario(text)) == std::vector<double>{2, 2, 2, 2});
  }
  SUBCASE("vector missing the total") {
    const ScenarioSpec s = parse_scenario(text + "[init]\nrule = vector\nvalues = 2, 2, 2, 1.5\n");
    try {
      (void)initialize(s);
      FAIL("expected InfeasibleError");
    } catch (const InfeasibleError& e) {
      CHECK(std::abs(e.gap()) == doctest::Approx(0.5));
    }
  }
  SUBCASE("random is seeded and feasible") {
    const ScenarioSpec s = parse_scenario(text + "[init]\nrule = random\n");
    const auto a = initialize(s), b = initialize(s);
    CHECK(a == b);
    CHECK(sum(a) == doctest::Approx(8.0).epsilon(1e-12));
    for (double v : a) CHECK(v > 0.0);
  }
}

TEST_CASE("clamp and repair") {
  const auto x = clamp_and_repair({0, 10, 5, 5}, 20, 3, 7);
  CHECK(sum(x) == doctest::Approx(20.0).epsilon(1e-14));
  for (double v : x) {
    CHECK(v >= 3.0);
    CHECK(v <= 7.0);
  }
  CHECK(x[1] == 7.0);
  CHECK_THROWS_AS(clamp_and_repair({5, 5}, 20, 3, 7), InfeasibleError);
  CHECK_THROWS_AS(clamp_and_repair({5, 5}, 4, 3, 7), InfeasibleError);
  const auto y = clamp_and_repair({3, 3, 3}, 21, 3, 7);
  for (double v : y) CHECK(v == doctest::Approx(7.0));
}

TEST_CASE("protocol sweeps expand to the cartesian product") {
  const std::string text = with(kMinimal, "variant = dt-linear\nrate = 0.2",
                                "variant = dt-actuation\nactuation = log(delta={0.5 | 1})\nrate = {0.1 | 0.2 | 0.3}");
  const ScenarioSpec s = parse_scenario(text);
  REQUIRE(s.runs.size() == 6);
  CHECK(s.runs[0].label == "lin-0.5-0.1");
  CHECK(s.runs[5].label == "lin-1-0.3");
  CHECK(s.runs[5].config.rate == 0.3);
  CHECK_THROWS_AS(parse_scenario(with(kMinimal, "rate = 0.2", "rate = {0.2 | }")), ValidationError);
}

TEST_CASE("reruns are byte-identical and plot data has one series per run") {
  const auto dir = std::filesystem::temp_directory_path() / "fsalloc_rerun";
  std::filesystem::remove_all(dir);
  std::string text = with(kMinimal, "seed = 3", "seed = 3\noutput = " + (dir / "a").string());
  text = with(text, "horizon = 200", "horizon = 200\nrecord_states = true");
  text += "[protocol]\nlabel = q\nvariant = dt-actuation\nactuation = log(delta=1)\nrate = 0.1\nhorizon = 100\n";
  const ScenarioResult a = run_scenario(parse_scenario(text));
  const ScenarioResult b = run_scenario(parse_scenario(text), RunOptions{true, false, std::nullopt});
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  for (const char* f : {"lin.csv", "q.csv"}) {
    const std::string x = slurp(dir / "a" / f);
    CHECK_FALSE(x.empty());
    CHECK(x.rfind("# ", 0) == 0);
  }
  CHECK(a.artifacts.size() == b.artifacts.size());
  for (std::size_t i = 0; i < a.artifacts.size(); ++i) {
    std::ostringstream ca, cb;
    write_trajectory_csv(ca, a.artifacts[i].record);
    write_trajectory_csv(cb, b.artifacts[i].record);
    CHECK(ca.str() == cb.str());
  }
  const PlotData p = emit_plot_data(a.artifacts);
  const std::size_t rows0 = a.artifacts[0].record.samples.size(), rows1 = a.artifacts[1].record.samples.size();
  CHECK(p.residual.size() == rows0 + rows1);
  CHECK(p.cost.size() == rows0 + rows1);
  CHECK(rows1 > 0);
  // Only the run that records states contributes state and average series.
  CHECK(p.average.size() == rows0);
  CHECK(p.states.size() == 2 * rows0);
  for (const PlotRow& r : p.average) CHECK(r.value == doctest::Approx(6.0).epsilon(1e-12));
  std::ostringstream t;
  write_plot_table(t, {{"s", 1.0, 2.0}});
  CHECK(t.str() == "series,time,value\ns,1,2\n");
  std::filesystem::remove_all(dir);
}

TEST_CASE("dispatch sweep plots four sign-power series plus the baseline") {
  const ScenarioSpec spec = load_scenario(kScenarios / "dispatch.cfg");
  RunOptions o;
  o.write_files = false;
  const ScenarioResult r = run_scenario(spec, o);
  std::set<std::string> series;
  for (const PlotRow& row : emit_plot_data(r.artifacts).residual) series.insert(row.series);
  CHECK(series == std::set<std::string>{"linear", "mu-0", "mu-0.2", "mu-0.5", "mu-0.7"});
}
