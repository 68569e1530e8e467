#pragma once

// Odd nonlinear maps applied on the actuation or communication path, and
// their analytic classification (sign preservation, sector bounds).

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fsalloc {

enum class MapKind {
  Identity,
  Saturation,        // clamp to [-limit, limit]
  UniformQuantizer,  // delta * round(z / delta)
  LogQuantizer,      // sgn(z) exp(q_u(log|z|))
  SignPower,         // sgn(z) |z|^mu
  CompositeSignPower,  // sgn^mu1 + sgn^mu2, 0 <= mu1 < 1 < mu2
  Composition,       // outer(inner(z))
};

class NonlinearMap {
 public:
  NonlinearMap() = default;  // identity

  static NonlinearMap identity() { return {}; }
  static NonlinearMap saturation(double limit);
  static NonlinearMap uniform_quantizer(double delta);
  static NonlinearMap log_quantizer(double delta);
  static NonlinearMap sign_power(double mu);
  static NonlinearMap composite_sign_power(double mu1, double mu2);
  static NonlinearMap compose(NonlinearMap outer, NonlinearMap inner);

  /// Rejects non-finite input with ValidationError.
  double operator()(double z) const;
  /// Same as operator() without the finiteness check.
  double apply_unchecked(double z) const;

  MapKind kind() const { return kind_; }
  bool is_identity() const { return kind_ == MapKind::Identity; }
  double limit() const { return a_; }
  double delta() const { return a_; }
  double mu() const { return a_; }
  double mu1() const { return a_; }
  double mu2() const { return b_; }
  const NonlinearMap& outer() const { return *outer_; }
  const NonlinearMap& inner() const { return *inner_; }

  /// Canonical text form accepted by parse_map.
  std::string describe() const;

 private:
  MapKind kind_ = MapKind::Identity;
  double a_ = 0.0;
  double b_ = 0.0;
  std::shared_ptr<const NonlinearMap> outer_;
  std::shared_ptr<const NonlinearMap> inner_;
};

/// Grammar:
///   identity | saturation(limit=L) | saturation(lower=a, upper=b)
///   uniform(delta=d) | log(delta=d) | sign-power(mu=m)
///   composite(mu1=a, mu2=b) | compose(<map>, <map>)
/// Asymmetric saturation bounds are rejected: the protocols need odd maps.
NonlinearMap parse_map(std::string_view text);

struct OperatingRange {
  double lo = -1.0;
  double hi = 1.0;
};

struct Sector {
  double lower = 0.0;  // alpha_lo
  double upper = 0.0;  // alpha_hi; +inf when unbounded near 0
  bool finite() const;
};

struct MapClassification {
  bool odd = true;
  bool sign_preserving = true;
  bool strongly_sign_preserving = true;
  std::optional<Sector> sector;
  bool lipschitz = true;

  /// Sector with alpha_lo > 0 and finite alpha_hi: the rate bound applies.
  bool has_rate_sector() const;
};

/// Analytic classification on the given range (must contain 0).
MapClassification classify(const NonlinearMap& m, OperatingRange range);

struct Violation {
  double z = 0.0;
  std::string property;
  std::string detail;
};

struct VerificationReport {
  std::size_t samples = 0;
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks a claimed classification against `samples` deterministic points
/// over the range (half uniform grid, half log-spaced toward 0) plus any
/// extra points. Requires samples >= 1000.
VerificationReport verify_classification(const NonlinearMap& m, const MapClassification& c,
                                         OperatingRange range, std::size_t samples,
                                         const std::vector<double>& extra_points = {});

}  // namespace fsalloc
