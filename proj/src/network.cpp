#include "fsalloc/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <queue>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "fsalloc/error.hpp"
#include "fsalloc/random.hpp"

namespace fsalloc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Topology::Topology(std::size_t n) : weights_(Eigen::MatrixXd::Zero(n, n)) {
  if (n == 0) throw ValidationError("topology needs at least one agent");
}

Topology::Topology(std::size_t n, std::span<const Edge> edges) : Topology(n) {
  for (const Edge& e : edges) {
    if (e.i >= n || e.j >= n) {
      throw ValidationError("edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                            ") out of range for n = " + std::to_string(n));
    }
    if (e.i == e.j) throw ValidationError("self-loop at node " + std::to_string(e.i));
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw ValidationError("edge weight must be finite and nonnegative");
    }
    double& wij = weights_(e.i, e.j);
    if (wij != 0.0 && wij != e.weight) {
      throw ValidationError("conflicting weights for link (" + std::to_string(e.i) + ", " +
                            std::to_string(e.j) + ")");
    }
    wij = e.weight;
    weights_(e.j, e.i) = e.weight;
  }
  rebuild_edges();
}

Topology Topology::from_matrix(const Eigen::MatrixXd& weights) {
  if (weights.rows() != weights.cols()) throw ValidationError("weight matrix must be square");
  const auto n = static_cast<std::size_t>(weights.rows());
  Topology t(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights(i, i) != 0.0) throw ValidationError("weight matrix diagonal must be zero");
    for (std::size_t j = 0; j < n; ++j) {
      if (weights(i, j) != weights(j, i)) {
        throw ValidationError("weight matrix is not symmetric at (" + std::to_string(i) + ", " +
                              std::to_string(j) + ")");
      }
      if (!(weights(i, j) >= 0.0) || !std::isfinite(weights(i, j))) {
        throw ValidationError("weights must be finite and nonnegative");
      }
    }
  }
  t.weights_ = weights;
  t.rebuild_edges();
  return t;
}

void Topology::rebuild_edges() {
  edges_.clear();
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (weights_(i, j) != 0.0) edges_.push_back({i, j, weights_(i, j)});
    }
  }
}

std::vector<std::size_t> Topology::neighbors(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < size(); ++j) {
    if (weights_(j, i) != 0.0) out.push_back(j);
  }
  return out;
}

Eigen::MatrixXd laplacian(const Topology& t) {
  Eigen::MatrixXd lap = -t.weights();
  lap.diagonal() = t.weights().rowwise().sum();
  return lap;
}

SpectralSummary spectral_summary(const Topology& t) {
  if (t.size() < 2) throw ValidationError("spectral summary needs at least two agents");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian(t), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw ValidationError("Laplacian eigensolve failed");
  const Eigen::VectorXd& ev = solver.eigenvalues();  // ascending
  // The zero eigenvalue can come back as a tiny negative number.
  return {std::max(ev(1), 0.0), ev(ev.size() - 1)};
}

bool is_connected(const Topology& t) {
  const std::size_t n = t.size();
  std::vector<char> seen(n, 0);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = 1;
  std::size_t visited = 1;
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop();
    for (std::size_t j = 0; j < n; ++j) {
      if (!seen[j] && t.weight(i, j) != 0.0) {
        seen[j] = 1;
        ++visited;
        frontier.push(j);
      }
    }
  }
  return visited == n;
}

// ---------------------------------------------------------------------------

TopologySchedule::TopologySchedule(std::vector<Phase> phases, bool cyclic,
                                   std::optional<std::uint64_t> shuffle_seed)
    : phases_(std::move(phases)), cyclic_(cyclic), shuffle_seed_(shuffle_seed) {
  if (phases_.empty()) throw ValidationError("schedule needs at least one phase");
  const std::size_t n = phases_.front().topology.size();
  for (const Phase& p : phases_) {
    if (p.topology.size() != n) throw ValidationError("all schedule phases must share n");
    if (!(p.dwell > 0.0) || !std::isfinite(p.dwell)) {
      throw ValidationError("phase dwell must be positive");
    }
    period_ += p.dwell;
  }
}

TopologySchedule TopologySchedule::constant(Topology t) {
  std::vector<Phase> phases;
  phases.push_back({std::move(t), 1.0});
  return TopologySchedule(std::move(phases), true);
}

std::vector<std::size_t> TopologySchedule::cycle_order(std::uint64_t cycle) const {
  std::vector<std::size_t> order(phases_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed_) {
    Rng rng(splitmix64(*shuffle_seed_ ^ splitmix64(cycle)));
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[rng.below(k)]);
    }
  }
  return order;
}

const Topology& TopologySchedule::at(double t) const {
  if (!(t >= 0.0)) throw ValidationError("schedule queried at negative time");
  if (phases_.size() == 1) {
    if (!cyclic_ && t >= period_) throw ValidationError("time beyond end of schedule");
    return phases_.front().topology;
  }
  double cycle_f = std::floor(t / period_);
  if (!cyclic_ && cycle_f >= 1.0) throw ValidationError("time beyond end of schedule");
  double local = t - cycle_f * period_;
  if (local >= period_) {  // rounding at the cycle boundary
    local -= period_;
    cycle_f += 1.0;
  }
  const auto order = cycle_order(static_cast<std::uint64_t>(cycle_f));
  double start = 0.0;
  for (std::size_t k : order) {
    if (local < start + phases_[k].dwell) return phases_[k].topology;
    start += phases_[k].dwell;
  }
  return phases_[order.back()].topology;
}

void TopologySchedule::phases_in(double lo, double hi, std::uint64_t cycle,
                                 std::vector<std::size_t>& out) const {
  double start = 0.0;
  for (std::size_t k : cycle_order(cycle)) {
    const double end = start + phases_[k].dwell;
    if (start < hi && end > lo) out.push_back(k);
    start = end;
  }
}

Topology TopologySchedule::union_over_window(double start, double length) const {
  if (!(length > 0.0)) throw ValidationError("union window must have positive length");
  if (!(start >= 0.0)) throw ValidationError("union window must start at t >= 0");
  const double end = start + length;
  if (!cyclic_ && end > period_ * (1.0 + 1e-12)) {
    throw ValidationError("union window extends beyond end of schedule");
  }
  std::vector<std::size_t> members;
  if (length >= 2.0 * period_) {
    members.resize(phases_.size());
    std::iota(members.begin(), members.end(), std::size_t{0});
  } else {
    const auto first = static_cast<std::uint64_t>(std::floor(start / period_));
    const auto last = static_cast<std::uint64_t>(std::floor(end / period_));
    for (std::uint64_t c = first; c <= last; ++c) {
      const double base = static_cast<double>(c) * period_;
      phases_in(start - base, end - base, c, members);
    }
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(size(), size());
  for (std::size_t k : members) w = w.cwiseMax(phases_[k].topology.weights());
  return Topology::from_matrix(w);
}

bool TopologySchedule::uniformly_connected(double window) const {
  if (!(window > 0.0)) throw ValidationError("connectivity window must be positive");
  // Union sets only shrink when a window edge sits on a phase boundary, so
  // those starts are the only candidates worth checking.
  const std::uint64_t cycles = (cyclic_ && shuffle_seed_) ? 16 : 1;
  const double span = static_cast<double>(cycles) * period_;
  std::vector<double> starts;
  for (std::uint64_t c = 0; c < cycles; ++c) {
    double b = static_cast<double>(c) * period_;
    for (std::size_t k : cycle_order(c)) {
      starts.push_back(b);
      starts.push_back(b + phases_[k].dwell - window);
      b += phases_[k].dwell;
    }
  }
  for (double s : starts) {
    if (cyclic_ && !shuffle_seed_) s -= std::floor(s / period_) * period_;
    if (s < 0.0) continue;
    if (cyclic_ ? s >= span : s + window > period_) continue;
    if (!is_connected(union_over_window(s, window))) return false;
  }
  if (!cyclic_ && window > period_) return false;
  return true;
}

TopologySchedule TopologySchedule::in_steps(double dt) const {
  if (!(dt > 0.0)) throw ValidationError("time step must be positive");
  std::vector<Phase> phases = phases_;
  for (Phase& p : phases) {
    const double ratio = p.dwell / dt;
    const double whole = std::round(ratio);
    if (whole < 1.0) throw ValidationError("integrator step is longer than a phase dwell");
    if (std::abs(ratio - whole) > 1e-9 * whole) {
      throw ValidationError("phase dwell " + std::to_string(p.dwell) +
                            " is not a multiple of dt = " + std::to_string(dt));
    }
    p.dwell = whole;
  }
  return TopologySchedule(std::move(phases), cyclic_, shuffle_seed_);
}

// ---------------------------------------------------------------------------

Topology path_graph(std::size_t n, double weight) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.push_back({i, i + 1, weight});
  return Topology(n, e);
}

Topology cycle_graph(std::size_t n, double weight) { return k_hop_ring(n, 1, weight); }

Topology complete_graph(std::size_t n, double weight) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e.push_back({i, j, weight});
  return Topology(n, e);
}

Topology k_hop_ring(std::size_t n, std::size_t hops, double weight) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 1; h <= hops; ++h) {
      const std::size_t j = (i + h) % n;
      if (j == i) continue;
      w(i, j) = weight;
      w(j, i) = weight;
    }
  }
  return Topology::from_matrix(w);
}

Topology random_geometric(std::size_t n, double radius, std::uint64_t seed, double weight) {
  Rng rng(seed);
  std::vector<std::pair<double, double>> pts(n);
  for (auto& p : pts) {
    p.first = rng.uniform();
    p.second = rng.uniform();
  }
  std::vector<Edge> e;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::hypot(pts[i].first - pts[j].first, pts[i].second - pts[j].second) <= radius) {
        e.push_back({i, j, weight});
      }
    }
  }
  return Topology(n, e);
}

Topology connected_random_geometric(std::size_t n, double radius, std::uint64_t seed,
                                    double weight) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Topology t = random_geometric(n, radius, seed + attempt, weight);
    if (is_connected(t)) return t;
  }
  throw ValidationError("no connected random geometric graph found; increase the radius");
}

std::vector<Topology> partition_edges(const Topology& t, std::size_t parts, std::uint64_t seed) {
  if (parts == 0) throw ValidationError("edge partition needs at least one part");
  Rng rng(seed);
  std::vector<std::vector<Edge>> buckets(parts);
  for (const Edge& e : t.edges()) buckets[rng.below(parts)].push_back(e);
  std::vector<Topology> out;
  out.reserve(parts);
  for (const auto& b : buckets) out.emplace_back(t.size(), b);
  return out;
}

Topology read_edge_list(std::istream& in, std::size_t n) {
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  std::size_t max_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    long long i = 0, j = 0;
    double w = 0.0;
    if (!(ls >> i)) continue;  // blank
    if (!(ls >> j >> w) || i < 0 || j < 0) {
      throw ValidationError("edge list line " + std::to_string(line_no) +
                            ": expected `i j weight`");
    }
    std::string rest;
    if (ls >> rest) {
      throw ValidationError("edge list line " + std::to_string(line_no) + ": trailing text");
    }
    edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), w});
    max_index = std::max({max_index, edges.back().i, edges.back().j});
  }
  if (n == 0) n = edges.empty() ? 1 : max_index + 1;
  // Explicit lists may carry both directions; they must agree.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(n, n);
  for (const Edge& e : edges) {
    if (e.i >= n || e.j >= n) throw ValidationError("edge index out of range");
    if (e.i == e.j) throw ValidationError("self-loop at node " + std::to_string(e.i));
    if (seen(e.i, e.j) && w(e.i, e.j) != e.weight) {
      throw ValidationError("duplicate link (" + std::to_string(e.i) + ", " +
                            std::to_string(e.j) + ") with different weight");
    }
    seen(e.i, e.j) = 1;
    w(e.i, e.j) = e.weight;
  }
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < w.cols(); ++j) {
      if (seen(i, j) && seen(j, i) && w(i, j) != w(j, i)) {
        throw ValidationError("asymmetric link weights between " + std::to_string(i) + " and " +
                              std::to_string(j));
      }
      const double v = seen(i, j) ? w(i, j) : w(j, i);
      w(i, j) = v;
      w(j, i) = v;
    }
  }
  return Topology::from_matrix(w);
}

}  // namespace fsalloc
