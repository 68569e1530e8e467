#include "fsalloc/nonlinearity.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>

#include "fsalloc/error.hpp"
#include "fsalloc/format.hpp"

namespace fsalloc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double signed_power(double z, double mu) {
  if (z == 0.0) return 0.0;
  if (mu == 0.0) return std::copysign(1.0, z);
  return std::copysign(std::pow(std::abs(z), mu), z);
}

// min over a in (0, r] of a^p + a^q with p < 0 < q.
double composite_ratio_floor(double p, double q, double r) {
  const double a_star = std::pow(-p / q, 1.0 / (q - p));
  const double a = std::min(a_star, r);
  return std::pow(a, p) + std::pow(a, q);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace

NonlinearMap NonlinearMap::saturation(double limit) {
  require(limit > 0.0 && std::isfinite(limit), "saturation limit must be positive");
  NonlinearMap m;
  m.kind_ = MapKind::Saturation;
  m.a_ = limit;
  return m;
}

NonlinearMap NonlinearMap::uniform_quantizer(double delta) {
  require(delta > 0.0 && std::isfinite(delta), "quantization level delta must be positive");
  NonlinearMap m;
  m.kind_ = MapKind::UniformQuantizer;
  m.a_ = delta;
  return m;
}

NonlinearMap NonlinearMap::log_quantizer(double delta) {
  require(delta > 0.0 && std::isfinite(delta), "quantization level delta must be positive");
  NonlinearMap m;
  m.kind_ = MapKind::LogQuantizer;
  m.a_ = delta;
  return m;
}

NonlinearMap NonlinearMap::sign_power(double mu) {
  require(mu >= 0.0 && std::isfinite(mu), "sign-power exponent must be >= 0");
  if (mu == 1.0) return identity();
  NonlinearMap m;
  m.kind_ = MapKind::SignPower;
  m.a_ = mu;
  return m;
}

NonlinearMap NonlinearMap::composite_sign_power(double mu1, double mu2) {
  require(mu1 >= 0.0 && mu1 < 1.0 && mu2 > 1.0 && std::isfinite(mu2),
          "composite sign-power needs 0 <= mu1 < 1 < mu2");
  NonlinearMap m;
  m.kind_ = MapKind::CompositeSignPower;
  m.a_ = mu1;
  m.b_ = mu2;
  return m;
}

NonlinearMap NonlinearMap::compose(NonlinearMap outer, NonlinearMap inner) {
  if (outer.is_identity()) return inner;
  if (inner.is_identity()) return outer;
  NonlinearMap m;
  m.kind_ = MapKind::Composition;
  m.outer_ = std::make_shared<const NonlinearMap>(std::move(outer));
  m.inner_ = std::make_shared<const NonlinearMap>(std::move(inner));
  return m;
}

double NonlinearMap::operator()(double z) const {
  if (!std::isfinite(z)) throw ValidationError("nonlinear map applied to non-finite input");
  return apply_unchecked(z);
}

double NonlinearMap::apply_unchecked(double z) const {
  switch (kind_) {
    case MapKind::Identity: return z;
    case MapKind::Saturation: return std::clamp(z, -a_, a_);
    // std::round rounds halves away from zero, which keeps q_u odd.
    case MapKind::UniformQuantizer: return a_ * std::round(z / a_);
    case MapKind::LogQuantizer:
      if (z == 0.0) return 0.0;
      return std::copysign(std::exp(a_ * std::round(std::log(std::abs(z)) / a_)), z);
    case MapKind::SignPower: return signed_power(z, a_);
    case MapKind::CompositeSignPower: {
      if (z == 0.0) return 0.0;
      const double r = std::abs(z);
      const double head = a_ == 0.0 ? 1.0 : std::pow(r, a_);
      return std::copysign(head + std::pow(r, b_), z);
    }
    case MapKind::Composition: return outer_->apply_unchecked(inner_->apply_unchecked(z));
  }
  return z;
}

std::string NonlinearMap::describe() const {
  switch (kind_) {
    case MapKind::Identity: return "identity";
    case MapKind::Saturation: return "saturation(limit=" + shortest(a_) + ")";
    case MapKind::UniformQuantizer: return "uniform(delta=" + shortest(a_) + ")";
    case MapKind::LogQuantizer: return "log(delta=" + shortest(a_) + ")";
    case MapKind::SignPower: return "sign-power(mu=" + shortest(a_) + ")";
    case MapKind::CompositeSignPower:
      return "composite(mu1=" + shortest(a_) + ", mu2=" + shortest(b_) + ")";
    case MapKind::Composition: return "compose(" + outer_->describe() + ", " + inner_->describe() + ")";
  }
  return "?";
}

// --- parsing ---------------------------------------------------------------

namespace {

class MapParser {
 public:
  explicit MapParser(std::string_view text) : text_(text) {}

  NonlinearMap parse() {
    NonlinearMap m = parse_map_expr();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing text");
    return m;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError("map spec '" + std::string(text_) + "' at column " +
                          std::to_string(pos_ + 1) + ": " + msg);
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::string word() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '-' ||
            text_[pos_] == '_' || text_[pos_] == '.' || text_[pos_] == '+')) {
      ++pos_;
    }
    if (start == pos_) fail("expected a name or number");
    return std::string(text_.substr(start, pos_ - start));
  }

  double number() {
    const std::string w = word();
    try {
      std::size_t used = 0;
      const double v = std::stod(w, &used);
      if (used != w.size()) fail("bad number '" + w + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("bad number '" + w + "'");
    }
  }

  std::map<std::string, double> keyword_args() {
    std::map<std::string, double> args;
    if (!accept('(')) return args;
    if (accept(')')) return args;
    do {
      const std::string key = word();
      if (!accept('=')) fail("expected '=' after '" + key + "'");
      args[key] = number();
    } while (accept(','));
    if (!accept(')')) fail("expected ')'");
    return args;
  }

  static double take(std::map<std::string, double>& args, const std::string& key, MapParser& p) {
    auto it = args.find(key);
    if (it == args.end()) p.fail("missing parameter '" + key + "'");
    const double v = it->second;
    args.erase(it);
    return v;
  }

  NonlinearMap parse_map_expr() {
    const std::string name = word();
    if (name == "compose") {
      if (!accept('(')) fail("compose needs (outer, inner)");
      NonlinearMap outer = parse_map_expr();
      if (!accept(',')) fail("compose needs two maps");
      NonlinearMap inner = parse_map_expr();
      if (!accept(')')) fail("expected ')'");
      return NonlinearMap::compose(std::move(outer), std::move(inner));
    }
    auto args = keyword_args();
    NonlinearMap m;
    if (name == "identity" || name == "linear") {
      m = NonlinearMap::identity();
    } else if (name == "saturation" || name == "sat") {
      if (args.count("limit")) {
        m = NonlinearMap::saturation(take(args, "limit", *this));
      } else {
        const double lo = take(args, "lower", *this);
        const double hi = take(args, "upper", *this);
        if (lo != -hi) fail("saturation bounds must be symmetric (map must be odd)");
        m = NonlinearMap::saturation(hi);
      }
    } else if (name == "uniform" || name == "uniform-quantizer") {
      m = NonlinearMap::uniform_quantizer(take(args, "delta", *this));
    } else if (name == "log" || name == "log-quantizer") {
      m = NonlinearMap::log_quantizer(take(args, "delta", *this));
    } else if (name == "sign-power" || name == "sgn") {
      m = NonlinearMap::sign_power(take(args, "mu", *this));
    } else if (name == "sign") {
      m = NonlinearMap::sign_power(0.0);
    } else if (name == "composite" || name == "composite-sign-power") {
      const double mu1 = take(args, "mu1", *this);
      const double mu2 = take(args, "mu2", *this);
      m = NonlinearMap::composite_sign_power(mu1, mu2);
    } else {
      fail("unknown map kind '" + name + "'");
    }
    if (!args.empty()) fail("unexpected parameter '" + args.begin()->first + "'");
    return m;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

NonlinearMap parse_map(std::string_view text) { return MapParser(text).parse(); }

// --- classification --------------------------------------------------------

bool Sector::finite() const { return std::isfinite(upper); }

bool MapClassification::has_rate_sector() const {
  return sector && sector->lower > 0.0 && sector->finite();
}

MapClassification classify(const NonlinearMap& m, OperatingRange range) {
  if (!(range.lo < range.hi) || range.lo > 0.0 || range.hi < 0.0) {
    throw ValidationError("operating range must be non-empty and contain 0");
  }
  const double r = std::max(std::abs(range.lo), std::abs(range.hi));
  MapClassification c;
  switch (m.kind()) {
    case MapKind::Identity:
      c.sector = Sector{1.0, 1.0};
      break;
    case MapKind::Saturation:
      c.sector = Sector{std::min(1.0, m.limit() / r), 1.0};
      break;
    case MapKind::UniformQuantizer:
      // Dead zone |z| < delta/2 maps to 0; the ratio peaks at 2 on z = delta/2.
      c.strongly_sign_preserving = false;
      c.sector = Sector{0.0, 2.0};
      c.lipschitz = false;
      break;
    case MapKind::LogQuantizer:
      c.sector = Sector{std::exp(-m.delta() / 2.0), std::exp(m.delta() / 2.0)};
      c.lipschitz = false;
      break;
    case MapKind::SignPower: {
      const double mu = m.mu();
      if (mu < 1.0) {
        c.sector = Sector{std::pow(r, mu - 1.0), kInf};
        c.lipschitz = false;
      } else {
        c.sector = Sector{0.0, std::pow(r, mu - 1.0)};
        c.lipschitz = true;  // on the bounded range
      }
      break;
    }
    case MapKind::CompositeSignPower:
      c.sector = Sector{composite_ratio_floor(m.mu1() - 1.0, m.mu2() - 1.0, r), kInf};
      c.lipschitz = false;
      break;
    case MapKind::Composition: {
      const MapClassification in = classify(m.inner(), range);
      // Every shipped kind is nondecreasing, so the image of the range is
      // spanned by the images of its endpoints.
      const OperatingRange image{m.inner().apply_unchecked(range.lo),
                                 m.inner().apply_unchecked(range.hi)};
      c.odd = in.odd;
      c.lipschitz = in.lipschitz;
      if (!(image.lo < image.hi)) {
        c.strongly_sign_preserving = false;
        c.sector = Sector{0.0, 0.0};
        break;
      }
      const MapClassification out = classify(m.outer(), image);
      c.odd = in.odd && out.odd;
      c.sign_preserving = in.sign_preserving && out.sign_preserving;
      c.strongly_sign_preserving = in.strongly_sign_preserving && out.strongly_sign_preserving;
      c.lipschitz = in.lipschitz && out.lipschitz;
      if (in.sector && out.sector) {
        c.sector = Sector{in.sector->lower * out.sector->lower, in.sector->upper * out.sector->upper};
        if (c.sector->lower == 0.0 || in.sector->lower == 0.0 || out.sector->lower == 0.0) {
          c.sector->lower = 0.0;
        }
      } else {
        c.sector.reset();
      }
      break;
    }
  }
  return c;
}

VerificationReport verify_classification(const NonlinearMap& m, const MapClassification& c,
                                         OperatingRange range, std::size_t samples,
                                         const std::vector<double>& extra_points) {
  if (samples < 1000) throw ValidationError("verification needs at least 1000 samples");
  if (!(range.lo < range.hi)) throw ValidationError("empty operating range");
  std::vector<double> zs;
  zs.reserve(samples + extra_points.size() + 1);
  const std::size_t grid = samples / 2;
  for (std::size_t k = 0; k < grid; ++k) {
    zs.push_back(range.lo + (range.hi - range.lo) * static_cast<double>(k) /
                                static_cast<double>(grid - 1));
  }
  // Log-spaced magnitudes from 1e-8 of each side's extent up to the extent.
  const std::size_t logs = (samples - grid + 1) / 2;
  for (double side : {range.hi, range.lo}) {
    const double r = std::abs(side);
    const double sign = side < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < logs && r > 0.0; ++k) {
      zs.push_back(sign * r * std::pow(10.0, -8.0 + 8.0 * static_cast<double>(k) /
                                                         static_cast<double>(logs > 1 ? logs - 1 : 1)));
    }
  }
  zs.push_back(0.0);
  zs.insert(zs.end(), extra_points.begin(), extra_points.end());

  VerificationReport report;
  report.samples = zs.size();
  auto flag = [&](double z, const char* prop, const std::string& detail) {
    report.violations.push_back({z, prop, detail});
  };
  for (double z : zs) {
    const double h = m(z);
    if (z == 0.0) {
      if (h != 0.0) flag(z, "zero", "h(0) = " + shortest(h));
      continue;
    }
    if (c.odd && m(-z) != -h) flag(z, "odd", "h(-z) = " + shortest(m(-z)) + ", -h(z) = " + shortest(-h));
    if (c.sign_preserving && z * h < 0.0) flag(z, "sign-preserving", "z h(z) < 0");
    if (c.strongly_sign_preserving && !(z * h > 0.0)) {
      flag(z, "strongly-sign-preserving", "z h(z) = " + shortest(z * h));
    }
    if (c.sector) {
      const double ratio = h / z;
      const double slack = 1e-12;
      if (ratio < c.sector->lower * (1.0 - slack)) {
        flag(z, "sector-lower", "h(z)/z = " + shortest(ratio) + " < " + shortest(c.sector->lower));
      }
      if (ratio > c.sector->upper * (1.0 + slack)) {
        flag(z, "sector-upper", "h(z)/z = " + shortest(ratio) + " > " + shortest(c.sector->upper));
      }
    }
  }
  return report;
}

}  // namespace fsalloc
