#pragma once

// Agent network: static weighted undirected graphs, switching schedules, and
// the Laplacian spectrum used by the convergence-rate bound.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fsalloc {

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 1.0;
};

/// Undirected weighted graph on n agents. W is symmetric, nonnegative, with a
/// zero diagonal; these are checked at construction and hold afterwards.
class Topology {
 public:
  explicit Topology(std::size_t n);
  Topology(std::size_t n, std::span<const Edge> edges);
  static Topology from_matrix(const Eigen::MatrixXd& weights);

  std::size_t size() const { return static_cast<std::size_t>(weights_.rows()); }
  double weight(std::size_t i, std::size_t j) const { return weights_(i, j); }
  const Eigen::MatrixXd& weights() const { return weights_; }
  /// Nonzero links with i < j, in row-major order.
  const std::vector<Edge>& edges() const { return edges_; }
  std::vector<std::size_t> neighbors(std::size_t i) const;

  bool operator==(const Topology& other) const { return weights_ == other.weights_; }

 private:
  void rebuild_edges();

  Eigen::MatrixXd weights_;
  std::vector<Edge> edges_;
};

struct SpectralSummary {
  double lambda2 = 0.0;  // Fiedler value
  double lambda_n = 0.0;
};

/// diag(W 1) - W.
Eigen::MatrixXd laplacian(const Topology& t);

/// Second-smallest and largest Laplacian eigenvalues (dense symmetric solve).
/// Throws ValidationError for n < 2.
SpectralSummary spectral_summary(const Topology& t);

/// Breadth-first traversal over nonzero weights.
bool is_connected(const Topology& t);

struct Phase {
  Topology topology;
  double dwell = 1.0;  // DT steps or CT duration
};

/// Ordered sequence of topologies with dwell times. Phase k is active on
/// [start_k, start_k + dwell_k); the boundary instant belongs to the new
/// phase. An optional shuffle seed draws a fresh pseudo-random phase order
/// for every cycle.
class TopologySchedule {
 public:
  TopologySchedule(std::vector<Phase> phases, bool cyclic,
                   std::optional<std::uint64_t> shuffle_seed = std::nullopt);
  static TopologySchedule constant(Topology t);

  std::size_t size() const { return phases_.front().topology.size(); }
  const std::vector<Phase>& phases() const { return phases_; }
  bool cyclic() const { return cyclic_; }
  bool is_static() const { return phases_.size() == 1; }
  double period() const { return period_; }
  std::optional<std::uint64_t> shuffle_seed() const { return shuffle_seed_; }

  /// Topology active at instant t.
  const Topology& at(double t) const;

  /// Edge-wise maximum over all phases intersecting [start, start + length).
  Topology union_over_window(double start, double length) const;

  /// True if the union over every window of the given length is connected.
  bool uniformly_connected(double window) const;

  /// Rescales dwell times to integer multiples of dt. Throws if any dwell is
  /// not a multiple of dt (relative tolerance 1e-9) or shorter than dt.
  TopologySchedule in_steps(double dt) const;

 private:
  std::vector<std::size_t> cycle_order(std::uint64_t cycle) const;
  // Appends indices of phases intersecting [lo, hi) within one cycle.
  void phases_in(double lo, double hi, std::uint64_t cycle, std::vector<std::size_t>& out) const;

  std::vector<Phase> phases_;
  bool cyclic_;
  std::optional<std::uint64_t> shuffle_seed_;
  double period_ = 0.0;
};

// Generators. All weights are uniform unless noted.
Topology path_graph(std::size_t n, double weight = 1.0);
Topology cycle_graph(std::size_t n, double weight = 1.0);
Topology complete_graph(std::size_t n, double weight = 1.0);
/// Ring where each node links to every node within `hops` positions.
Topology k_hop_ring(std::size_t n, std::size_t hops, double weight = 1.0);
/// Points uniform in the unit square, linked when closer than `radius`.
Topology random_geometric(std::size_t n, double radius, std::uint64_t seed, double weight = 1.0);
/// Retries random_geometric with successive seeds until connected.
Topology connected_random_geometric(std::size_t n, double radius, std::uint64_t seed,
                                    double weight = 1.0);

/// Assigns each edge of t to one of `parts` subgraphs uniformly at random.
std::vector<Topology> partition_edges(const Topology& t, std::size_t parts, std::uint64_t seed);

/// Parses `i j weight` lines (0-based, '#' comments). n = 0 infers the size
/// from the largest index. Asymmetric duplicates are rejected.
Topology read_edge_list(std::istream& in, std::size_t n = 0);

}  // namespace fsalloc
