#include "fsalloc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "fsalloc/config.hpp"
#include "fsalloc/error.hpp"
#include "fsalloc/format.hpp"
#include "fsalloc/random.hpp"

namespace fsalloc {

namespace {

// Generator cost table (alpha, beta, gamma) by type letter.
struct GeneratorType {
  char name;
  double alpha, beta, gamma;
};
constexpr GeneratorType kGeneratorTypes[] = {
    {'A', 561.0, 2.0, 0.04}, {'B', 310.0, 3.0, 0.03}, {'C', 78.0, 4.0, 0.035},
    {'D', 561.0, 4.0, 0.03}, {'E', 78.0, 2.5, 0.04},
};

std::string trimmed(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t p = 0; p <= s.size(); ++p) {
    if (p == s.size() || s[p] == sep) {
      out.push_back(trimmed(s.substr(start, p - start)));
      start = p + 1;
    }
  }
  return out;
}

ScenarioKind parse_kind(const ConfigSection& s) {
  const std::string k = s.text("kind", "custom");
  if (k == "custom") return ScenarioKind::Custom;
  if (k == "cpu") return ScenarioKind::Cpu;
  if (k == "dispatch") return ScenarioKind::Dispatch;
  s.fail(*s.find("kind"), "expected custom, cpu or dispatch");
}

// "i j [w]; i j [w]; ..."
std::vector<Edge> parse_edges(const ConfigSection& s, const char* key) {
  const ConfigEntry* e = s.find(key);
  if (!e) s.fail(std::string("missing required key '") + key + "'");
  std::vector<Edge> edges;
  for (const std::string& item : split(e->value, ';')) {
    if (item.empty()) continue;
    std::istringstream in(item);
    long long i = -1, j = -1;
    double w = 1.0;
    if (!(in >> i >> j) || i < 0 || j < 0) s.fail(*e, "bad edge '" + item + "'");
    if (!(in >> w)) w = 1.0;
    in >> std::ws;
    if (!in.eof()) s.fail(*e, "bad edge '" + item + "'");
    edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), w});
  }
  return edges;
}

Topology edge_topology(const ConfigSection& s, const char* key, std::size_t n) {
  try {
    return Topology(n, parse_edges(s, key));
  } catch (const ValidationError& err) {
    s.fail(*s.find(key), err.what());
  }
}

NonlinearMap parse_odd_map(const ConfigSection& s, const char* key) {
  const ConfigEntry* e = s.find(key);
  if (!e) return NonlinearMap::identity();
  NonlinearMap m;
  try {
    m = parse_map(e->value);
  } catch (const ValidationError& err) {
    s.fail(*e, err.what());
  }
  if (!classify(m, {-1.0, 1.0}).odd) s.fail(*e, "map must be odd");
  return m;
}

// Expands `{a | b | c}` lists in protocol values into the cartesian product.
struct Expansion {
  std::vector<std::pair<std::string, std::string>> values;  // key -> value
  std::string suffix;
};

std::vector<Expansion> expand_block(const ConfigSection& s) {
  std::vector<Expansion> out(1);
  for (const ConfigEntry& e : s.entries()) {
    const std::size_t open = e.value.find('{');
    if (open == std::string::npos) {
      for (auto& x : out) x.values.emplace_back(e.key, e.value);
      continue;
    }
    const std::size_t close = e.value.find('}', open);
    if (close == std::string::npos) s.fail(e, "unterminated '{'");
    if (e.value.find('{', close) != std::string::npos) s.fail(e, "only one {..} list per value");
    const auto options = split(std::string_view(e.value).substr(open + 1, close - open - 1), '|');
    if (options.empty() || std::any_of(options.begin(), options.end(), [](const auto& o) { return o.empty(); })) {
      s.fail(e, "empty entry in sweep list");
    }
    std::vector<Expansion> next;
    for (const auto& x : out) {
      for (const auto& o : options) {
        Expansion y = x;
        y.values.emplace_back(e.key, e.value.substr(0, open) + o + e.value.substr(close + 1));
        y.suffix += "-" + o;
        next.push_back(std::move(y));
      }
    }
    out = std::move(next);
  }
  return out;
}

ProtocolRun parse_protocol(const ConfigSection& block, const Expansion& ex, const ParseOptions& opt) {
  ConfigSection s(block.name(), block.line());
  for (const auto& [k, v] : ex.values) s.add({k, v, block.find(k)->line});
  s.restrict_keys({"label", "variant", "rate", "dt", "integrator", "horizon", "actuation", "communication",
                   "stride", "record_states", "threshold", "threshold_metric", "relative_threshold",
                   "stop_at_threshold"});
  ProtocolRun r;
  r.label = s.text("label") + ex.suffix;
  ProtocolConfig& c = r.config;
  auto guarded = [&](const char* key, auto fn) {
    try {
      fn();
    } catch (const ValidationError& err) {
      s.fail(*s.find(key), err.what());
    }
  };
  guarded("variant", [&] { c.variant = parse_variant(s.text("variant")); });
  c.rate = s.number("rate");
  c.dt = s.number("dt", c.dt);
  if (s.has("integrator")) guarded("integrator", [&] { c.integrator = parse_integrator(s.text("integrator")); });
  c.horizon = s.number("horizon");
  c.actuation = parse_odd_map(s, "actuation");
  c.communication = parse_odd_map(s, "communication");
  c.record_stride = opt.stride ? *opt.stride : s.count("stride", 1);
  c.record_states = s.flag("record_states", false);
  if (s.has("threshold")) c.threshold = s.number("threshold");
  if (s.has("threshold_metric")) {
    guarded("threshold_metric", [&] { c.threshold_metric = parse_stop_metric(s.text("threshold_metric")); });
  }
  r.relative_threshold = s.flag("relative_threshold", false);
  c.stop_at_threshold = s.flag("stop_at_threshold", false);
  try {
    c.validate();
  } catch (const ValidationError& err) {
    s.fail(err.what());
  }
  return r;
}

CostModel weighted(const CostModel& c, double a) {
  // Cost in y evaluated at y = x / a.
  return std::visit(
      [&](const auto& b) -> CostModel {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, QuadraticCost>) {
          return CostModel(QuadraticCost{b.gamma / (a * a), b.beta / a, b.alpha});
        } else if constexpr (std::is_same_v<T, CpuCost>) {
          return CostModel(CpuCost{b.pi / (a * a), a * b.target});
        } else {
          std::vector<double> knots = b.knots();
          std::vector<double> grads = b.gradients();
          for (double& k : knots) k *= a;
          for (double& g : grads) g /= a;
          if (a < 0.0) {
            std::reverse(knots.begin(), knots.end());
            std::reverse(grads.begin(), grads.end());
          }
          return CostModel(TabulatedCost(knots, grads, b.value(a < 0.0 ? b.knots().back() : b.knots().front())));
        }
      },
      c.base());
}

double max_base_curvature(const std::vector<CostModel>& costs) {
  double u = 0.0;
  for (const CostModel& c : costs) {
    u = std::max(u, c.without_penalty().curvature_bounds(-1.0, 1.0).upper);
  }
  return u;
}

std::vector<CostModel> build_costs(const ConfigSection& s, std::size_t n, Rng& rng,
                                   const std::vector<const ConfigSection*>& agents) {
  const std::string family = s.text("family");
  std::vector<CostModel> costs;
  if (family == "cpu") {
    const double pi_lo = s.number("pi_min", 0.0), pi_hi = s.number("pi_max", 0.1);
    const double t_lo = s.number("target_min", 4.5), t_hi = s.number("target_max", 5.5);
    if (!(0.0 <= pi_lo && pi_lo < pi_hi) || !(t_lo <= t_hi)) s.fail("bad CPU parameter ranges");
    for (std::size_t i = 0; i < n; ++i) {
      const double pi = rng.uniform_left_open(pi_lo, pi_hi);
      const double target = rng.uniform(t_lo, t_hi);
      costs.emplace_back(CpuCost{pi, target});
    }
  } else if (family == "generators") {
    const std::string types = s.text("types", "A,B,C,D,E");
    std::vector<GeneratorType> cycle;
    for (const std::string& t : split(types, ',')) {
      auto it = std::find_if(std::begin(kGeneratorTypes), std::end(kGeneratorTypes),
                             [&](const GeneratorType& g) { return t.size() == 1 && g.name == t[0]; });
      if (it == std::end(kGeneratorTypes)) s.fail(*s.find("types"), "unknown generator type '" + t + "'");
      cycle.push_back(*it);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const GeneratorType& g = cycle[i % cycle.size()];
      costs.emplace_back(QuadraticCost{g.gamma, g.beta, g.alpha});
    }
  } else if (family == "quadratic") {
    const double g_lo = s.number("gamma_min"), g_hi = s.number("gamma_max");
    const double b_lo = s.number("beta_min", 0.0), b_hi = s.number("beta_max", 0.0);
    const double a_lo = s.number("alpha_min", 0.0), a_hi = s.number("alpha_max", 0.0);
    if (!(0.0 < g_lo && g_lo <= g_hi) || b_lo > b_hi || a_lo > a_hi) s.fail("bad quadratic parameter ranges");
    for (std::size_t i = 0; i < n; ++i) {
      const double gamma = rng.uniform(g_lo, g_hi);
      const double beta = rng.uniform(b_lo, b_hi);
      const double alpha = rng.uniform(a_lo, a_hi);
      costs.emplace_back(QuadraticCost{gamma, beta, alpha});
    }
  } else if (family == "explicit") {
    if (agents.size() != n) {
      s.fail("explicit family needs one [agent] block per agent (" + std::to_string(n) + "), found " +
             std::to_string(agents.size()));
    }
    for (const ConfigSection* a : agents) {
      a->restrict_keys({"gamma", "beta", "alpha", "pi", "target", "knots", "gradients", "value"});
      try {
        if (a->has("gamma")) {
          const double gamma = a->number("gamma");
          if (!(gamma >= 0.0)) a->fail(*a->find("gamma"), "gamma must be >= 0");
          costs.emplace_back(QuadraticCost{gamma, a->number("beta", 0.0), a->number("alpha", 0.0)});
        } else if (a->has("pi")) {
          const double pi = a->number("pi");
          if (!(pi > 0.0)) a->fail(*a->find("pi"), "pi must be > 0");
          costs.emplace_back(CpuCost{pi, a->number("target")});
        } else if (a->has("knots")) {
          costs.emplace_back(TabulatedCost(a->numbers("knots"), a->numbers("gradients"), a->number("value", 0.0)));
        } else {
          a->fail("agent needs gamma, pi or knots");
        }
      } catch (const ValidationError& err) {
        const std::string what = err.what();
        if (what.rfind("line ", 0) == 0) throw;
        a->fail(what);
      }
    }
  } else {
    s.fail(*s.find("family"), "expected cpu, generators, quadratic or explicit");
  }
  return costs;
}

const NonlinearMap& active_map(const ProtocolConfig& c) {
  return uses_communication_map(c.variant) ? c.communication : c.actuation;
}

bool is_linear(const ProtocolConfig& c) { return active_map(c).is_identity(); }

std::string file_label(const std::string& label) {
  std::string out = label;
  for (char& ch : out) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
  }
  return out;
}

std::string hex(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

}  // namespace

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Cpu: return "cpu";
    case ScenarioKind::Dispatch: return "dispatch";
    default: return "custom";
  }
}

const char* to_string(InitRule r) {
  switch (r) {
    case InitRule::Random: return "random";
    case InitRule::Vector: return "vector";
    default: return "equal";
  }
}

// --- parsing ----------------------------------------------------------------

ScenarioSpec parse_scenario(std::string_view text, const ParseOptions& options) {
  const ConfigDocument doc = ConfigDocument::parse(text);
  doc.restrict_sections({"scenario", "network", "phase", "cost", "agent", "problem", "reserve", "init", "protocol"});
  auto single = [&](const char* name, bool required) -> const ConfigSection* {
    const auto all = doc.all(name);
    if (all.size() > 1) all[1]->fail("section may appear only once");
    if (all.empty() && required) throw ValidationError(std::string("missing [") + name + "] section");
    return all.empty() ? nullptr : all.front();
  };

  ScenarioSpec spec;
  spec.config_hash = fnv1a64(text);

  const ConfigSection& sc = *single("scenario", true);
  sc.restrict_keys({"name", "kind", "seed", "output"});
  spec.name = sc.text("name");
  spec.kind = parse_kind(sc);
  spec.seed = options.seed ? *options.seed : sc.seed("seed", 0);
  spec.output_dir = sc.text("output", "out/" + spec.name);
  Rng rng(spec.seed);

  // Network.
  const ConfigSection& net = *single("network", true);
  net.restrict_keys({"family", "n", "hops", "radius", "weight", "edges", "schedule", "parts", "dwell", "cyclic",
                     "shuffle", "window"});
  const std::size_t n = net.count("n");
  if (n < 1) net.fail(*net.find("n"), "need at least one agent");
  const std::string family = net.text("family");
  const double weight = net.number("weight", 1.0);
  if (!(weight > 0.0)) net.fail(*net.find("weight"), "weight must be > 0");
  const std::uint64_t net_seed = rng.bits();
  if (family == "path") {
    spec.graph = path_graph(n, weight);
  } else if (family == "cycle") {
    spec.graph = cycle_graph(n, weight);
  } else if (family == "complete") {
    spec.graph = complete_graph(n, weight);
  } else if (family == "ring") {
    spec.graph = k_hop_ring(n, net.count("hops"), weight);
  } else if (family == "geometric") {
    spec.graph = connected_random_geometric(n, net.number("radius"), net_seed, weight);
  } else if (family == "edges") {
    spec.graph = edge_topology(net, "edges", n);
  } else {
    net.fail(*net.find("family"), "expected path, cycle, complete, ring, geometric or edges");
  }

  const std::string mode = net.text("schedule", "static");
  const bool cyclic = net.flag("cyclic", true);
  const std::optional<std::uint64_t> shuffle =
      net.flag("shuffle", false) ? std::optional<std::uint64_t>(rng.bits()) : std::nullopt;
  if (mode == "static") {
    spec.schedule = TopologySchedule::constant(spec.graph);
  } else if (mode == "partition") {
    const std::size_t parts = net.count("parts");
    const double dwell = net.number("dwell", 1.0);
    if (parts < 1) net.fail(*net.find("parts"), "need at least one part");
    std::vector<Phase> phases;
    for (Topology& t : partition_edges(spec.graph, parts, rng.bits())) phases.push_back({std::move(t), dwell});
    try {
      spec.schedule = TopologySchedule(std::move(phases), cyclic, shuffle);
    } catch (const ValidationError& err) {
      net.fail(err.what());
    }
    spec.switching = parts > 1;
  } else if (mode == "phases") {
    std::vector<Phase> phases;
    for (const ConfigSection* p : doc.all("phase")) {
      p->restrict_keys({"edges", "dwell"});
      phases.push_back({edge_topology(*p, "edges", n), p->number("dwell", 1.0)});
    }
    if (phases.empty()) net.fail("schedule = phases needs [phase] blocks");
    try {
      spec.schedule = TopologySchedule(phases, cyclic, shuffle);
    } catch (const ValidationError& err) {
      net.fail(err.what());
    }
    spec.graph = spec.schedule.union_over_window(0.0, spec.schedule.period());
    spec.switching = phases.size() > 1;
  } else {
    net.fail(*net.find("schedule"), "expected static, partition or phases");
  }
  if (mode != "phases" && !doc.all("phase").empty()) doc.all("phase").front()->fail("[phase] needs schedule = phases");
  if (n > 1) {
    const double window = net.number("window", spec.schedule.period());
    if (!(window > 0.0)) net.fail("window must be > 0");
    if (!spec.schedule.uniformly_connected(window)) {
      net.fail("schedule is not uniformly connected over windows of length " + shortest(window));
    }
  }

  // Constraint.
  const ConfigSection& pr = *single("problem", true);
  pr.restrict_keys({"total", "literal_total"});
  spec.stated_total = pr.number("total");
  if (pr.has("literal_total")) spec.literal_total = pr.number("literal_total");
  if (options.literal_constants && !spec.literal_total) {
    pr.fail("no literal_total to switch to");
  }
  const double total = options.literal_constants ? *spec.literal_total : spec.stated_total;

  // Costs.
  const ConfigSection& cs = *single("cost", true);
  cs.restrict_keys({"family", "pi_min", "pi_max", "target_min", "target_max", "types", "gamma_min", "gamma_max",
                    "beta_min", "beta_max", "alpha_min", "alpha_max", "box_lower", "box_upper", "penalty",
                    "epsilon", "smoothing_mu", "coefficients"});
  const ConfigSection* rs = single("reserve", false);
  std::size_t generators = n;
  if (rs) {
    rs->restrict_keys({"generators", "battery_coefficients", "battery_curvature"});
    generators = rs->count("generators");
    const std::vector<double> c = rs->numbers("battery_coefficients");
    if (generators + c.size() != n) {
      rs->fail("generators + batteries (" + std::to_string(generators + c.size()) + ") must equal network n (" +
               std::to_string(n) + ")");
    }
    if (generators < 1) rs->fail("need at least one generator");
  }
  std::vector<CostModel> costs = build_costs(cs, generators, rng, doc.all("agent"));

  if (cs.has("coefficients")) {
    if (rs) cs.fail(*cs.find("coefficients"), "coefficients are not supported with reserves");
    spec.coefficients = cs.numbers("coefficients");
    if (spec.coefficients.size() != n) cs.fail(*cs.find("coefficients"), "need one coefficient per agent");
    for (std::size_t i = 0; i < n; ++i) {
      if (spec.coefficients[i] == 0.0) cs.fail(*cs.find("coefficients"), "coefficients must be nonzero");
      costs[i] = weighted(costs[i], spec.coefficients[i]);
    }
  }

  const bool has_lower = cs.has("box_lower"), has_upper = cs.has("box_upper");
  if (has_lower != has_upper) cs.fail("box_lower and box_upper go together");
  const std::string penalty = cs.text("penalty", has_lower ? "squared-hinge" : "none");
  if (has_lower) {
    if (!spec.coefficients.empty()) cs.fail("boxes are not supported with coefficients");
    spec.box = {cs.number("box_lower"), cs.number("box_upper")};
    if (!(spec.box->first < spec.box->second)) cs.fail("box_lower must be < box_upper");
  }
  if (penalty != "none") {
    if (!spec.box) cs.fail(*cs.find("penalty"), "penalty needs box_lower and box_upper");
    BoxPenalty p;
    p.lower = spec.box->first;
    p.upper = spec.box->second;
    try {
      p.smoothing = parse_smoothing(penalty);
    } catch (const ValidationError& err) {
      cs.fail(*cs.find("penalty"), err.what());
    }
    p.epsilon = cs.number("epsilon", 10.0 * max_base_curvature(costs));
    p.smoothing_mu = cs.number("smoothing_mu", p.smoothing_mu);
    try {
      p.validate();
    } catch (const ValidationError& err) {
      cs.fail(err.what());
    }
    spec.penalty = p;
    for (CostModel& c : costs) c = CostModel(c.base(), p);
  }

  if (rs) {
    std::optional<double> rho;
    if (rs->has("battery_curvature")) rho = rs->number("battery_curvature");
    try {
      StackedReserveProblem st = stack_reserve_problem(costs, rs->numbers("battery_coefficients"), total, rho);
      spec.reserve = ReserveSpec{st.generators, rs->numbers("battery_coefficients"), st.battery_curvature};
      spec.problem = std::move(st.problem);
    } catch (const ValidationError& err) {
      rs->fail(err.what());
    }
  } else {
    spec.problem.costs = std::move(costs);
    spec.problem.total = total;
  }

  // Initialization.
  if (const ConfigSection* in = single("init", false)) {
    in->restrict_keys({"rule", "values", "respect_box"});
    const std::string rule = in->text("rule", "equal");
    if (rule == "equal") {
      spec.init.rule = InitRule::Equal;
    } else if (rule == "random") {
      spec.init.rule = InitRule::Random;
    } else if (rule == "vector") {
      spec.init.rule = InitRule::Vector;
      spec.init.values = in->numbers("values");
      if (spec.init.values.size() != n) in->fail(*in->find("values"), "need one value per agent");
    } else {
      in->fail(*in->find("rule"), "expected equal, random or vector");
    }
    spec.init.respect_box = in->flag("respect_box", true);
  }

  // Protocols.
  for (const ConfigSection* block : doc.all("protocol")) {
    for (const Expansion& ex : expand_block(*block)) {
      ProtocolRun r = parse_protocol(*block, ex, options);
      if (is_continuous(r.config.variant)) {
        try {
          (void)spec.schedule.in_steps(r.config.dt);
        } catch (const ValidationError& err) {
          block->fail(std::string("dwell times vs dt: ") + err.what());
        }
      } else {
        try {
          (void)spec.schedule.in_steps(1.0);
        } catch (const ValidationError& err) {
          block->fail(std::string("DT dwell times must be whole steps: ") + err.what());
        }
      }
      for (const ProtocolRun& other : spec.runs) {
        if (other.label == r.label) block->fail("duplicate protocol label '" + r.label + "'");
      }
      spec.runs.push_back(std::move(r));
    }
  }
  if (spec.runs.empty()) throw ValidationError("scenario has no [protocol] blocks");
  return spec;
}

ScenarioSpec load_scenario(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_scenario(buf.str(), options);
  } catch (const InfeasibleError&) {
    throw;
  } catch (const ValidationError& err) {
    throw ValidationError(path.string() + ": " + err.what());
  }
}

// --- initialization ----------------------------------------------------------

std::vector<double> clamp_and_repair(std::vector<double> x, double total, double lo, double hi) {
  const std::size_t n = x.size();
  const double lo_sum = lo * static_cast<double>(n), hi_sum = hi * static_cast<double>(n);
  if (lo_sum > total) {
    throw InfeasibleError("box-infeasible: sum of lower bounds " + shortest(lo_sum) + " exceeds total " +
                              shortest(total),
                          lo_sum - total);
  }
  if (hi_sum < total) {
    throw InfeasibleError("box-infeasible: sum of upper bounds " + shortest(hi_sum) + " is below total " +
                              shortest(total),
                          hi_sum - total);
  }
  for (double& v : x) v = std::clamp(v, lo, hi);
  for (std::size_t round = 0; round <= n; ++round) {
    double sum = 0.0;
    for (double v : x) sum += v;
    const double gap = total - sum;
    if (gap == 0.0) break;
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < n; ++i) {
      if ((gap > 0.0 && x[i] < hi) || (gap < 0.0 && x[i] > lo)) free.push_back(i);
    }
    if (free.empty()) break;
    const double share = gap / static_cast<double>(free.size());
    bool saturated = false;
    for (std::size_t i : free) {
      const double v = x[i] + share;
      x[i] = std::clamp(v, lo, hi);
      saturated = saturated || x[i] != v;
    }
    if (!saturated) {
      // Put the rounding remainder on one free agent that can absorb it.
      sum = 0.0;
      for (double v : x) sum += v;
      const double rest = total - sum;
      for (std::size_t i : free) {
        if (x[i] + rest >= lo && x[i] + rest <= hi) {
          x[i] += rest;
          break;
        }
      }
      break;
    }
  }
  return x;
}

std::vector<double> initialize(const ScenarioSpec& spec) {
  const std::size_t n = spec.size();
  const double K = spec.problem.total;
  std::vector<double> x(n);
  switch (spec.init.rule) {
    case InitRule::Equal:
      std::fill(x.begin(), x.end(), K / static_cast<double>(n));
      break;
    case InitRule::Random: {
      // Exponential draws normalized to the total (flat Dirichlet split).
      Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
      double sum = 0.0;
      for (double& v : x) {
        v = -std::log1p(-rng.uniform());
        sum += v;
      }
      for (double& v : x) v *= K / sum;
      break;
    }
    case InitRule::Vector: {
      x = spec.init.values;
      double sum = 0.0;
      for (double v : x) sum += v;
      const double gap = sum - K;
      if (std::abs(gap) > 1e-9 * (1.0 + std::abs(K))) {
        throw InfeasibleError("initial vector sums to " + shortest(sum) + ", expected " + shortest(K) +
                                  " (gap " + shortest(gap) + ")",
                              gap);
      }
      return x;
    }
  }
  if (spec.box && spec.init.respect_box) return clamp_and_repair(std::move(x), K, spec.box->first, spec.box->second);
  if (spec.box && !spec.init.respect_box) {
    // Soft boxes still need a total the penalty can reach.
    (void)clamp_and_repair(x, K, spec.box->first, spec.box->second);
  }
  return x;
}

OracleSolution solve_oracle(const ScenarioSpec& spec) { return solve(spec.problem); }

// --- artifacts -----------------------------------------------------------------

void write_provenance(std::ostream& out, const Provenance& p) {
  out << "# scenario = " << p.scenario << "\n";
  out << "# config_hash = " << hex(p.config_hash) << "\n";
  out << "# seed = " << p.seed << "\n";
  if (!p.label.empty()) {
    out << "# run = " << p.label << "\n";
    out << "# variant = " << p.variant << "\n";
    out << "# rate = " << shortest(p.rate) << "\n";
    out << "# integrator = " << p.integrator << "\n";
    out << "# dt = " << shortest(p.dt) << "\n";
    out << "# actuation = " << p.actuation << "\n";
    out << "# communication = " << p.communication << "\n";
  }
  out << "# epsilon = " << (p.epsilon ? shortest(*p.epsilon) : "none") << "\n";
  out << "# rho_b = " << (p.rho_b ? shortest(*p.rho_b) : "none") << "\n";
}

namespace {

Provenance base_provenance(const ScenarioSpec& spec) {
  Provenance p;
  p.scenario = spec.name;
  p.config_hash = spec.config_hash;
  p.seed = spec.seed;
  if (spec.penalty) p.epsilon = spec.penalty->epsilon;
  if (spec.reserve) p.rho_b = spec.reserve->battery_curvature;
  return p;
}

RunArtifact execute(const ScenarioSpec& spec, const ProtocolRun& r, const std::vector<double>& x0,
                    const OracleSolution& oracle, bool write) {
  RunArtifact a;
  a.label = r.label;
  a.config = r.config;
  if (a.config.threshold && r.relative_threshold) {
    a.config.threshold = *a.config.threshold * (1.0 + std::abs(oracle.f_star));
  }
  a.threshold = a.config.threshold;
  a.provenance = base_provenance(spec);
  a.provenance.label = r.label;
  a.provenance.variant = to_string(r.config.variant);
  a.provenance.rate = r.config.rate;
  a.provenance.integrator = is_continuous(r.config.variant) ? to_string(r.config.integrator) : "none";
  a.provenance.dt = r.config.step_duration();
  a.provenance.actuation = r.config.actuation.describe();
  a.provenance.communication = r.config.communication.describe();
  a.record = run(x0, RunInputs{spec.problem, spec.schedule, &oracle}, a.config);
  if (write) {
    std::filesystem::create_directories(spec.output_dir);
    a.csv_path = spec.output_dir / (file_label(r.label) + ".csv");
    std::ofstream out(a.csv_path, std::ios::binary);
    write_provenance(out, a.provenance);
    write_trajectory_csv(out, a.record);
    if (!out) throw ValidationError("failed to write " + a.csv_path.string());
  }
  return a;
}

Check make_check(std::string name, bool passed, std::string detail) {
  return Check{std::move(name), passed, std::move(detail)};
}

std::string opt_text(const std::optional<double>& v) { return v ? shortest(*v) : std::string("never"); }

void add_feasibility_check(ScenarioResult& res) {
  const double tol = 1e-9 * (1.0 + std::abs(res.spec.problem.total));
  double worst = 0.0;
  for (const RunArtifact& a : res.artifacts) worst = std::max(worst, a.record.summary.max_abs_sum_drift);
  res.checks.push_back(make_check("sum_preserved", worst <= tol, "max |sum x - K| = " + shortest(worst)));
}

}  // namespace

const RunArtifact* ScenarioResult::find(std::string_view label) const {
  for (const RunArtifact& a : artifacts) {
    if (a.label == label) return &a;
  }
  return nullptr;
}

ScenarioResult run_scenario(const ScenarioSpec& spec, const RunOptions& options) {
  ScenarioResult res{spec, solve_oracle(spec), initialize(spec), {}, {}};
  std::vector<const ProtocolRun*> todo;
  for (const ProtocolRun& r : spec.runs) {
    if (!options.only_label || r.label == *options.only_label) todo.push_back(&r);
  }
  if (todo.empty()) throw ValidationError("no protocol block labelled '" + options.only_label.value_or("") + "'");

  if (options.parallel && todo.size() > 1) {
    std::vector<std::future<RunArtifact>> jobs;
    for (const ProtocolRun* r : todo) {
      jobs.push_back(std::async(std::launch::async, execute, std::cref(res.spec), std::cref(*r), std::cref(res.x0),
                                std::cref(res.oracle), options.write_files));
    }
    for (auto& j : jobs) res.artifacts.push_back(j.get());
  } else {
    for (const ProtocolRun* r : todo) res.artifacts.push_back(execute(res.spec, *r, res.x0, res.oracle, options.write_files));
  }
  add_feasibility_check(res);
  return res;
}

ScenarioResult run_cpu_scenario(const ScenarioSpec& spec, const RunOptions& options) {
  ScenarioResult res = run_scenario(spec, options);
  auto& checks = res.checks;

  if (spec.switching) {
    std::size_t connected = 0;
    for (const Phase& p : spec.schedule.phases()) connected += is_connected(p.topology) ? 1 : 0;
    checks.push_back(make_check("phases_disconnected", connected == 0,
                                std::to_string(connected) + " of " + std::to_string(spec.schedule.phases().size()) +
                                    " phases connected"));
    const bool uc = is_connected(spec.schedule.union_over_window(0.0, spec.schedule.period()));
    checks.push_back(make_check("union_connected", uc, "union of one cycle of " +
                                                           std::to_string(spec.schedule.phases().size()) + " phases"));
  }

  // Uniform quantizer: residual should not grow as delta shrinks.
  std::vector<const RunArtifact*> uniform;
  for (const RunArtifact& a : res.artifacts) {
    if (active_map(a.config).kind() == MapKind::UniformQuantizer) uniform.push_back(&a);
  }
  std::sort(uniform.begin(), uniform.end(), [](const RunArtifact* a, const RunArtifact* b) {
    return active_map(a->config).delta() > active_map(b->config).delta();
  });
  if (uniform.size() >= 2) {
    double largest = 0.0;
    for (const RunArtifact* a : uniform) largest = std::max(largest, a->record.summary.steady_state_residual);
    const double slack = 0.05 * largest;
    bool monotone = true;
    std::string detail;
    for (std::size_t k = 0; k < uniform.size(); ++k) {
      const double r = uniform[k]->record.summary.steady_state_residual;
      detail += (k ? ", " : "") + std::string("delta=") + shortest(active_map(uniform[k]->config).delta()) + ": " +
                shortest(r);
      if (k > 0 && r > uniform[k - 1]->record.summary.steady_state_residual + slack) monotone = false;
    }
    checks.push_back(make_check("uniform_residual_nonincreasing_in_delta", monotone, detail));
  }
  for (const RunArtifact* a : uniform) {
    const double r = a->record.summary.steady_state_residual;
    const bool stalled = a->threshold ? r >= *a->threshold : r > 0.0;
    checks.push_back(make_check("uniform_stalls:" + a->label, stalled, "steady-state residual " + shortest(r)));
  }
  for (const RunArtifact& a : res.artifacts) {
    if (active_map(a.config).kind() == MapKind::LogQuantizer && a.threshold) {
      checks.push_back(make_check("log_converges:" + a.label, a.record.summary.steps_to_threshold.has_value(),
                                  "steps to threshold " + opt_text(a.record.summary.time_to_threshold)));
    }
  }

  // Identity map as the control: fastest among runs that converge.
  const RunArtifact* control = nullptr;
  for (const RunArtifact& a : res.artifacts) {
    if (is_linear(a.config)) control = &a;
  }
  if (control && control->threshold) {
    const auto t0 = control->record.summary.time_to_threshold;
    bool fastest = t0.has_value();
    for (const RunArtifact& a : res.artifacts) {
      const auto t = a.record.summary.time_to_threshold;
      if (&a != control && t && t0 && *t < *t0) fastest = false;
    }
    checks.push_back(make_check("identity_fastest", fastest, control->label + " reaches threshold at " + opt_text(t0)));
  }
  return res;
}

ScenarioResult run_dispatch_scenario(const ScenarioSpec& spec, const RunOptions& options) {
  ScenarioResult res = run_scenario(spec, options);
  auto& checks = res.checks;

  const RunArtifact* linear = nullptr;
  for (const RunArtifact& a : res.artifacts) {
    if (is_linear(a.config)) linear = &a;
  }
  auto time_of = [](const RunArtifact* a) { return a ? a->record.summary.time_to_threshold : std::nullopt; };
  auto faster = [&](const RunArtifact* a, const RunArtifact* b) {
    const auto ta = time_of(a), tb = time_of(b);
    return ta && (!tb || *ta < *tb);
  };

  if (spec.reserve) {
    checks.push_back(make_check("oracle_consensus", res.oracle.residual_kkt <= 1e-8,
                                "max |f_i'(y*) - psi*| = " + shortest(res.oracle.residual_kkt)));
    StackedReserveProblem st;
    st.generators = spec.reserve->generators;
    st.batteries = spec.reserve->battery_coefficients.size();
    const auto [x_star, r_star] = st.unstack(res.oracle.x_star);
    for (const RunArtifact& a : res.artifacts) {
      if (active_map(a.config).kind() != MapKind::CompositeSignPower) continue;
      const auto [x, r] = st.unstack(a.record.final_state);
      double err = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(x[i] - x_star[i]));
      for (std::size_t j = 0; j < r.size(); ++j) err = std::max(err, std::abs(r[j] - r_star[j]));
      checks.push_back(make_check("reaches_oracle:" + a.label, err <= 1e-4, "max componentwise error " + shortest(err)));
      if (linear) {
        checks.push_back(make_check("faster_than_linear:" + a.label, faster(&a, linear),
                                    opt_text(time_of(&a)) + " vs " + opt_text(time_of(linear))));
      }
    }
  } else {
    std::map<double, const RunArtifact*> by_mu;
    for (const RunArtifact& a : res.artifacts) {
      if (active_map(a.config).kind() == MapKind::SignPower) by_mu[active_map(a.config).mu()] = &a;
    }
    std::string detail;
    for (const auto& [mu, a] : by_mu) detail += "mu=" + shortest(mu) + ": " + opt_text(time_of(a)) + ", ";
    detail += "linear: " + opt_text(time_of(linear));
    checks.push_back(make_check("time_to_threshold", true, detail));
    const auto it02 = by_mu.find(0.2);
    const RunArtifact* mu02 = it02 == by_mu.end() ? nullptr : it02->second;
    if (mu02) {
      const auto t = time_of(mu02);
      checks.push_back(make_check("mu0.2_before_t100", t && *t < 100.0, "time " + opt_text(t)));
      if (linear) {
        checks.push_back(make_check("mu0.2_faster_than_linear", faster(mu02, linear),
                                    opt_text(t) + " vs " + opt_text(time_of(linear))));
      }
      const auto it0 = by_mu.find(0.0);
      if (it0 != by_mu.end()) {
        const double c0 = it0->second->record.summary.chattering_amplitude;
        const double c02 = mu02->record.summary.chattering_amplitude;
        checks.push_back(make_check("mu0_chatters_more", c0 > c02,
                                    "amplitude " + shortest(c0) + " vs " + shortest(c02) +
                                        (c02 > 0.0 ? " (factor " + shortest(c0 / c02) + ")" : "")));
      }
    }
  }
  return res;
}

ScenarioResult run_any(const ScenarioSpec& spec, const RunOptions& options) {
  switch (spec.kind) {
    case ScenarioKind::Cpu: return run_cpu_scenario(spec, options);
    case ScenarioKind::Dispatch: return run_dispatch_scenario(spec, options);
    default: return run_scenario(spec, options);
  }
}

// --- plot data ----------------------------------------------------------------

PlotData emit_plot_data(const std::vector<RunArtifact>& artifacts) {
  PlotData d;
  for (const RunArtifact& a : artifacts) {
    for (const Sample& s : a.record.samples) {
      d.residual.push_back({a.label, s.time, s.residual});
      d.cost.push_back({a.label, s.time, s.cost});
      if (!s.x.empty()) {
        double mean = 0.0;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          d.states.push_back({a.label + "/x" + std::to_string(i), s.time, s.x[i]});
          mean += s.x[i];
        }
        d.average.push_back({a.label, s.time, mean / static_cast<double>(s.x.size())});
      }
    }
  }
  return d;
}

void write_plot_table(std::ostream& out, const std::vector<PlotRow>& rows) {
  out << "series,time,value\n";
  for (const PlotRow& r : rows) out << r.series << ',' << shortest(r.time) << ',' << shortest(r.value) << "\n";
}

void write_plot_files(const std::filesystem::path& dir, const ScenarioResult& result, const PlotData& data) {
  std::filesystem::create_directories(dir);
  const Provenance p = base_provenance(result.spec);
  const std::pair<const char*, const std::vector<PlotRow>*> tables[] = {
      {"residual", &data.residual}, {"states", &data.states}, {"cost", &data.cost}, {"average", &data.average}};
  for (const auto& [name, rows] : tables) {
    std::ofstream out(dir / (std::string("plot_") + name + ".csv"), std::ios::binary);
    write_provenance(out, p);
    write_plot_table(out, *rows);
  }
}

void write_result_summary(std::ostream& out, const ScenarioResult& res) {
  const ScenarioSpec& spec = res.spec;
  write_provenance(out, base_provenance(spec));
  out << "[scenario]\n";
  out << "name = " << spec.name << "\n";
  out << "kind = " << to_string(spec.kind) << "\n";
  out << "agents = " << spec.size() << "\n";
  out << "total = " << shortest(spec.problem.total) << "\n";
  out << "init = " << to_string(spec.init.rule) << "\n";
  if (spec.box) out << "box = " << shortest(spec.box->first) << ", " << shortest(spec.box->second) << "\n";
  if (spec.switching) out << "phases = " << spec.schedule.phases().size() << "\n";
  out << "\n";
  write_oracle_record(out, res.oracle);
  if (spec.reserve) {
    StackedReserveProblem st;
    st.generators = spec.reserve->generators;
    st.batteries = spec.reserve->battery_coefficients.size();
    const auto [x, r] = st.unstack(res.oracle.x_star);
    out << "generation_star =";
    for (std::size_t i = 0; i < x.size(); ++i) out << (i ? ", " : " ") << shortest(x[i]);
    out << "\nreserve_star =";
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? ", " : " ") << shortest(r[j]);
    out << "\n";
  }
  if (!spec.coefficients.empty()) {
    out << "y_star =";
    for (std::size_t i = 0; i < spec.size(); ++i) {
      out << (i ? ", " : " ") << shortest(res.oracle.x_star[i] / spec.coefficients[i]);
    }
    out << "\n";
  }
  for (const RunArtifact& a : res.artifacts) {
    out << "\n[run]\n";
    out << "label = " << a.label << "\n";
    out << "variant = " << to_string(a.config.variant) << "\n";
    out << "map = " << active_map(a.config).describe() << "\n";
    out << "rate = " << shortest(a.config.rate) << "\n";
    out << "threshold = " << (a.threshold ? shortest(*a.threshold) : "none") << " ("
        << to_string(a.config.threshold_metric) << ")\n";
    if (!a.csv_path.empty()) out << "csv = " << a.csv_path.filename().string() << "\n";
    // Rate guarantee on static graphs with sector-bounded maps.
    if (!is_continuous(a.config.variant) && spec.schedule.is_static() && spec.size() > 1) {
      double spread = 0.0;
      for (const Sample& s : a.record.samples) spread = std::max(spread, s.dispersion);
      const OperatingRange range{-std::max(spread, 1e-12), std::max(spread, 1e-12)};
      const MapClassification cls = classify(active_map(a.config), range);
      if (cls.has_rate_sector()) {
        double lo = res.x0.front(), hi = lo;
        for (const Sample& s : a.record.samples) {
          for (double v : s.x) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        }
        for (double v : res.x0) lo = std::min(lo, v), hi = std::max(hi, v);
        for (double v : res.oracle.x_star) lo = std::min(lo, v), hi = std::max(hi, v);
        const StepBound b = step_bound(spec.problem.costs, spec.graph, cls, lo, hi);
        const double c = b.contraction(a.config.rate);
        out << "rate_bound = " << shortest(b.max_rate) << "\n";
        out << "predicted_contraction = " << shortest(c) << "\n";
        out << "rate_bound_verdict = "
            << (a.config.rate >= b.max_rate ? "outside-guarantee"
                                            : (a.record.summary.max_step_ratio <= c + 1e-9 ? "holds" : "violated"))
            << "\n";
      } else {
        out << "rate_bound = none (no positive finite sector)\n";
      }
    }
    write_summary(out, a.record.summary);
  }
  out << "\n[checks]\n";
  for (const Check& c : res.checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
}

}  // namespace fsalloc
