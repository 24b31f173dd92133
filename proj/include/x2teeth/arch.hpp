#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

// Symmetric beta-function dental arch and the arc-length machinery used to
// unroll / re-bend the panoramic frame.
namespace x2t {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct ArchCurve {
  double D = 0.0;  // depth, mm
  double W = 1.0;  // width, mm
  double e = 0.8;

  void validate() const {
    if (!(W > 0) || !std::isfinite(W)) throw std::invalid_argument("arch width must be positive");
    if (!(D >= 0) || !std::isfinite(D)) throw std::invalid_argument("arch depth must be non-negative");
    if (!(e > 0) || !std::isfinite(e)) throw std::invalid_argument("arch exponent must be positive");
  }
  friend bool operator==(const ArchCurve&, const ArchCurve&) = default;
};

inline ArchCurve fit_arch(double measured_D, double measured_W, double e = 0.8) {
  if (!(measured_W > 0)) throw std::invalid_argument("fit_arch: width must be positive");
  ArchCurve c{measured_D, measured_W, e};
  c.validate();
  return c;
}

/// Scale that lifts max_t (t(1-t))^e to 1, i.e. 4^e.
inline double arch_normalization(double e) { return std::pow(4.0, e); }

inline Point2 beta_arch(double t, const ArchCurve& c) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("beta_arch: t outside [0, 1]");
  // (t(1-t)/0.25)^e; the exact apex comes from 4·0.5·0.5 == 1.
  const double g = 4.0 * t * (1.0 - t);
  return {c.W * t - 0.5 * c.W, c.D * std::pow(g, c.e)};
}

/// dy/dt; infinite at the endpoints when e < 1 and D > 0.
inline double arch_dy(double t, const ArchCurve& c) {
  if (c.D == 0.0) return 0.0;
  const double g = 4.0 * t * (1.0 - t);
  if (g <= 0.0) {
    if (c.e < 1.0) return t < 0.5 ? std::numeric_limits<double>::infinity()
                                  : -std::numeric_limits<double>::infinity();
    if (c.e > 1.0) return 0.0;
    return t < 0.5 ? 4.0 * c.D : -4.0 * c.D;
  }
  return c.D * c.e * std::pow(g, c.e - 1.0) * 4.0 * (1.0 - 2.0 * t);
}

inline double arch_ddy(double t, const ArchCurve& c) {
  if (c.D == 0.0) return 0.0;
  const double g = 4.0 * t * (1.0 - t);
  const double gp = 4.0 * (1.0 - 2.0 * t);
  return c.D * c.e * ((c.e - 1.0) * std::pow(g, c.e - 2.0) * gp * gp + std::pow(g, c.e - 1.0) * -8.0);
}

/// Unit tangent and inward normal (toward the chord, i.e. into the mouth).
inline Point2 arch_tangent(double t, const ArchCurve& c) {
  const double dy = arch_dy(t, c);
  if (std::isinf(dy)) return {0.0, dy > 0 ? 1.0 : -1.0};
  const double n = std::hypot(c.W, dy);
  return {c.W / n, dy / n};
}

inline Point2 arch_inward_normal(double t, const ArchCurve& c) {
  const Point2 T = arch_tangent(t, c);
  return {T.y, -T.x};
}

/// Radius of curvature in mm (infinite where the curve is straight).
inline double curvature_radius(double t, const ArchCurve& c) {
  const double dy = arch_dy(t, c);
  if (std::isinf(dy)) return 0.0;
  const double ddy = arch_ddy(t, c);
  if (ddy == 0.0) return std::numeric_limits<double>::infinity();
  return std::pow(c.W * c.W + dy * dy, 1.5) / (c.W * std::abs(ddy));
}

namespace detail {

inline double integrate(const std::function<double(double)>& f, double a, double b) {
  if (b <= a) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, 15, 1e-11);
}

// Arc length over [a, b] ⊂ [0, 0.5]. For e < 1 the speed blows up like
// t^(e-1) at t = 0; with t = u^p, p = 3/e, the integrand becomes
// p·sqrt(W²·u^(2p-2) + m(t)²·u^4) with m smooth, which quadrature handles well.
inline double left_half_length(const ArchCurve& c, double a, double b) {
  if (c.e >= 1.0) {
    return integrate([&](double t) { return std::hypot(c.W, arch_dy(t, c)); }, a, b);
  }
  const double p = 3.0 / c.e;
  const double k = c.D * c.e * std::pow(4.0, c.e);
  auto h = [&](double u) {
    const double t = std::pow(u, p);
    const double m = k * std::pow(1.0 - t, c.e - 1.0) * (1.0 - 2.0 * t);
    return p * std::hypot(c.W * std::pow(u, p - 1.0), m * u * u);
  };
  return integrate(h, std::pow(a, 1.0 / p), std::pow(b, 1.0 / p));
}

}  // namespace detail

/// Length of the arch between parameters t0 <= t1, in mm.
inline double arc_length(const ArchCurve& c, double t0, double t1) {
  if (!(t0 >= 0.0 && t1 <= 1.0 && t0 <= t1)) {
    throw std::domain_error("arc_length: need 0 <= t0 <= t1 <= 1");
  }
  if (c.D == 0.0) return c.W * (t1 - t0);
  double total = 0.0;
  if (t0 < 0.5) total += detail::left_half_length(c, t0, std::min(t1, 0.5));
  if (t1 > 0.5) total += detail::left_half_length(c, 1.0 - t1, 1.0 - std::max(t0, 0.5));
  return total;
}

inline double arc_length(const ArchCurve& c) { return arc_length(c, 0.0, 1.0); }

/// Parameter t with arc_length(0, t) == s. Newton steps inside a shrinking
/// bisection bracket.
inline double t_at_arc_length(const ArchCurve& c, double s) {
  const double L = arc_length(c);
  if (!(s >= 0.0 && s <= L)) throw std::domain_error("t_at_arc_length: s outside [0, L]");
  if (c.D == 0.0) return s / c.W;
  if (s == L) return 1.0;
  double lo = 0.0, hi = 1.0, t = s / L;
  for (int it = 0; it < 100; ++it) {
    const double f = arc_length(c, 0.0, t) - s;
    if (std::abs(f) <= 1e-12 * L) break;
    (f > 0 ? hi : lo) = t;
    const double speed = std::hypot(c.W, arch_dy(t, c));
    double next = t - f / speed;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (hi - lo < 1e-15) break;
    t = next;
  }
  return t;
}

/// Parameters of the column stations s_j = (j + 0.5)·L/count, solved
/// incrementally so each Newton step only integrates a short interval.
inline std::vector<double> station_params(const ArchCurve& c, std::int64_t count) {
  if (count <= 0) throw std::invalid_argument("station_params: count must be positive");
  const double L = arc_length(c);
  const double ds = L / static_cast<double>(count);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  double t_prev = 0.0, s_prev = 0.0;
  for (std::int64_t j = 0; j < count; ++j) {
    const double target = (static_cast<double>(j) + 0.5) * ds;
    double t = c.D == 0.0 ? target / c.W : t_prev;
    if (c.D != 0.0) {
      double lo = t_prev, hi = 1.0;
      for (int it = 0; it < 100; ++it) {
        const double f = s_prev + arc_length(c, t_prev, t) - target;
        if (std::abs(f) <= 1e-12 * L) break;
        (f > 0 ? hi : lo) = t;
        double next = t - f / std::hypot(c.W, arch_dy(t, c));
        if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
        if (hi - lo < 1e-15) break;
        t = next;
      }
      s_prev = target;
      t_prev = t;
    }
    out.push_back(t);
  }
  return out;
}

/// Dense arc-length-uniform sampling of the arch for nearest-point queries.
class ArchPolyline {
 public:
  struct Nearest {
    double s = 0.0;  // arc length of the foot point, mm
    double d = 0.0;  // signed offset along the inward normal, mm
    bool interior = true;  // false when the foot falls past an endpoint
  };

  ArchPolyline(const ArchCurve& c, double max_step_mm) : curve_(c) {
    c.validate();
    length_ = arc_length(c);
    const auto n = std::max<std::int64_t>(8, static_cast<std::int64_t>(std::ceil(length_ / max_step_mm)));
    // Invert s(t) through a fine table in the smooth u-coordinate.
    const std::int64_t fine = 64 * n;
    std::vector<double> ts(static_cast<std::size_t>(fine + 1)), ss(ts.size());
    const double p = c.e < 1.0 ? 1.0 / c.e : 1.0;
    for (std::int64_t i = 0; i <= fine; ++i) {
      const double u = static_cast<double>(i) / static_cast<double>(fine);
      ts[i] = u <= 0.5 ? 0.5 * std::pow(2.0 * u, p) : 1.0 - 0.5 * std::pow(2.0 * (1.0 - u), p);
    }
    ss[0] = 0.0;
    Point2 prev = beta_arch(0.0, c);
    for (std::int64_t i = 1; i <= fine; ++i) {
      const Point2 q = beta_arch(ts[i], c);
      ss[i] = ss[i - 1] + std::hypot(q.x - prev.x, q.y - prev.y);
      prev = q;
    }
    const double scale = length_ / ss.back();
    for (auto& v : ss) v *= scale;

    std::size_t j = 0;
    for (std::int64_t k = 0; k <= n; ++k) {
      const double s = length_ * static_cast<double>(k) / static_cast<double>(n);
      while (j + 1 < ss.size() - 1 && ss[j + 1] < s) ++j;
      const double w = ss[j + 1] > ss[j] ? (s - ss[j]) / (ss[j + 1] - ss[j]) : 0.0;
      const double t = std::clamp(ts[j] + w * (ts[j + 1] - ts[j]), 0.0, 1.0);
      s_.push_back(s);
      pts_.push_back(beta_arch(t, c));
    }
    for (std::size_t i = 0; i + 1 < pts_.size(); i += kChunk) {
      std::array<double, 4> bb{pts_[i].x, pts_[i].y, pts_[i].x, pts_[i].y};
      for (std::size_t k = i; k <= std::min(i + kChunk, pts_.size() - 1); ++k) {
        bb[0] = std::min(bb[0], pts_[k].x);
        bb[1] = std::min(bb[1], pts_[k].y);
        bb[2] = std::max(bb[2], pts_[k].x);
        bb[3] = std::max(bb[3], pts_[k].y);
      }
      boxes_.push_back(bb);
    }
  }

  double length() const { return length_; }
  const std::vector<Point2>& points() const { return pts_; }

  Nearest nearest(Point2 p) const {
    double best = std::numeric_limits<double>::infinity();
    Nearest out;
    const std::size_t segs = pts_.size() - 1;
    for (std::size_t ch = 0; ch < boxes_.size(); ++ch) {
      // Skip chunks whose bounding box is already farther than the best hit.
      const auto& bb = boxes_[ch];
      const double gx = std::max({bb[0] - p.x, 0.0, p.x - bb[2]});
      const double gy = std::max({bb[1] - p.y, 0.0, p.y - bb[3]});
      if (gx * gx + gy * gy > best) continue;
      const std::size_t end = std::min(segs, (ch + 1) * kChunk);
      for (std::size_t i = ch * kChunk; i < end; ++i) {
        const Point2 a = pts_[i], b = pts_[i + 1];
        const double dx = b.x - a.x, dy = b.y - a.y;
        const double len2 = dx * dx + dy * dy;
        const double raw = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
        const double w = std::clamp(raw, 0.0, 1.0);
        const double qx = a.x + w * dx, qy = a.y + w * dy;
        const double dist2 = (p.x - qx) * (p.x - qx) + (p.y - qy) * (p.y - qy);
        if (dist2 < best) {
          best = dist2;
          const double seglen = std::sqrt(len2);
          out.s = s_[i] + w * (s_[i + 1] - s_[i]);
          // Signed by the inward side, i.e. the tangent turned clockwise.
          const double side = (p.x - qx) * (dy / seglen) - (p.y - qy) * (dx / seglen);
          out.d = std::copysign(std::sqrt(dist2), side);
          out.interior = !((i == 0 && raw < 0.0) || (i + 1 == segs && raw > 1.0));
        }
      }
    }
    return out;
  }

 private:
  ArchCurve curve_;
  double length_ = 0.0;
  std::vector<double> s_;
  std::vector<Point2> pts_;
  static constexpr std::size_t kChunk = 16;
  std::vector<std::array<double, 4>> boxes_;  // per chunk: xmin, ymin, xmax, ymax
};

}  // namespace x2t
