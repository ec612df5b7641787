// Flat two-dimensional domains (unit-area torus, unit square), their distance,
// exponential/logarithm maps, and the regular grid carrying the reference measure.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace otlab {

enum class DomainKind { Torus, Square };

struct Point {
  double x1 = 0.0;
  double x2 = 0.0;
};

struct TangentVector {
  double v1 = 0.0;
  double v2 = 0.0;

  double norm() const { return std::hypot(v1, v2); }
  double norm_sq() const { return v1 * v1 + v2 * v2; }
};

inline TangentVector operator*(double a, const TangentVector& v) {
  return {a * v.v1, a * v.v2};
}
inline TangentVector operator+(const TangentVector& a, const TangentVector& b) {
  return {a.v1 + b.v1, a.v2 + b.v2};
}
inline TangentVector operator-(const TangentVector& a, const TangentVector& b) {
  return {a.v1 - b.v1, a.v2 - b.v2};
}

namespace detail {

// Shortest wrapped representative of d on the unit circle, in (-1/2, 1/2].
// The antipodal tie (|d| = 1/2 exactly) resolves to +1/2.
inline double wrap_delta(double d) {
  double u = d - std::floor(d);  // [0, 1)
  return (u > 0.5) ? u - 1.0 : u;
}

inline double wrap01(double x) {
  double u = x - std::floor(x);
  return (u >= 1.0) ? 0.0 : u;  // guard against floor rounding at the seam
}

}  // namespace detail

struct ExpResult {
  Point p;
  double clamp = 0.0;  // distance clipped away at the square's boundary
};

class Domain {
 public:
  static Domain torus() { return Domain(DomainKind::Torus); }
  static Domain square() { return Domain(DomainKind::Square); }

  DomainKind kind() const { return kind_; }
  bool is_torus() const { return kind_ == DomainKind::Torus; }

  double diameter() const {
    return is_torus() ? std::sqrt(0.5) : std::sqrt(2.0);
  }

  Point canonicalize(Point p) const {
    if (is_torus()) return {detail::wrap01(p.x1), detail::wrap01(p.x2)};
    return p;
  }

  double dist(Point p, Point q) const {
    if (is_torus()) {
      double d1 = detail::wrap_delta(q.x1 - p.x1);
      double d2 = detail::wrap_delta(q.x2 - p.x2);
      return std::hypot(d1, d2);
    }
    return std::hypot(q.x1 - p.x1, q.x2 - p.x2);
  }

  double dist_sq(Point p, Point q) const {
    if (is_torus()) {
      double d1 = detail::wrap_delta(q.x1 - p.x1);
      double d2 = detail::wrap_delta(q.x2 - p.x2);
      return d1 * d1 + d2 * d2;
    }
    double d1 = q.x1 - p.x1, d2 = q.x2 - p.x2;
    return d1 * d1 + d2 * d2;
  }

  // Inverse of exp at p: the tangent vector pointing along the shortest
  // geodesic from p to q, with |log(p,q)| = dist(p,q).
  TangentVector log(Point p, Point q) const {
    if (is_torus()) {
      return {detail::wrap_delta(q.x1 - p.x1), detail::wrap_delta(q.x2 - p.x2)};
    }
    return {q.x1 - p.x1, q.x2 - p.x2};
  }

  Point exp(Point p, TangentVector v) const { return exp_checked(p, v).p; }

  // On the square, p+v may exit [0,1]^2 when the datum violates the null
  // Neumann smallness assumption; we clamp and report the clipped distance
  // instead of hiding the violation.
  ExpResult exp_checked(Point p, TangentVector v) const {
    if (is_torus()) {
      return {{detail::wrap01(p.x1 + v.v1), detail::wrap01(p.x2 + v.v2)}, 0.0};
    }
    double y1 = p.x1 + v.v1, y2 = p.x2 + v.v2;
    double c1 = std::min(std::max(y1, 0.0), 1.0);
    double c2 = std::min(std::max(y2, 0.0), 1.0);
    double clamp = std::hypot(y1 - c1, y2 - c2);
    return {{c1, c2}, clamp};
  }

 private:
  explicit Domain(DomainKind k) : kind_(k) {}
  DomainKind kind_;
};

// Regular N x N discretization of the reference probability measure m.
// Cell centers sit at ((i+1/2)/N, (j+1/2)/N); each cell carries mass 1/N^2.
class Grid {
 public:
  Grid(Domain domain, int resolution) : domain_(domain), n_(resolution) {
    if (resolution < 2) throw std::invalid_argument("grid resolution must be >= 2");
  }

  const Domain& domain() const { return domain_; }
  int resolution() const { return n_; }
  int size() const { return n_ * n_; }
  double spacing() const { return 1.0 / n_; }
  double cell_weight() const { return 1.0 / (static_cast<double>(n_) * n_); }

  Point center(int i, int j) const {
    return {(i + 0.5) / n_, (j + 0.5) / n_};
  }
  Point center(int flat) const { return center(flat / n_, flat % n_); }
  int index(int i, int j) const { return i * n_ + j; }

  bool operator==(const Grid& o) const {
    return n_ == o.n_ && domain_.kind() == o.domain_.kind();
  }

 private:
  Domain domain_;
  int n_;
};

}  // namespace otlab
