// Hopf-Lax semigroup Q_t f(y) = min_x d^2(x,y)/(2t) + f(x) on the flat
// domains, by two independent methods:
//   * hopflax_grid — exact discrete Lax-Oleinik minimization over grid nodes,
//     computed with the separable parabola-envelope transform (exact, O(N^2));
//   * hopflax_characteristics — forward geodesic flow y = exp(x, t grad f(x))
//     carrying the value f(x) + (t/2)|grad f(x)|^2, resampled onto the grid by
//     moving-least-squares over the 12 nearest forward images.
// Plus the derived diagnostics: Hamilton-Jacobi residual, strict-convexity
// gap, Lipschitz defect of Q_tf - f, and the c-transform (t = 1).
#pragma once

#include <algorithm>
#include <limits>
#include <optional>

#include "otlab/config.hpp"
#include "otlab/fields.hpp"
#include "otlab/rng.hpp"

namespace otlab {

class AdmissibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HopfLaxMethod { GridMin, Characteristics };

struct HopfLaxResult {
  ScalarField Qf;
  std::vector<Point> argmin;  // per physical cell (row-major), x_t(y) = phi_t^{-1}(y)
  HopfLaxMethod method;
  std::optional<VectorField> gradQ;  // characteristics only: transported gamma'(t)
};

// C^{1,1} size of the datum, the quantity limiting the characteristics method.
struct DatumNorms {
  double grad_sup;
  double hess_sup;
  double total() const { return grad_sup + hess_sup; }
};

inline DatumNorms datum_norms(const ScalarField& f) {
  return {gradient(f).sup_norm(), hessian_sup_norm(f)};
}

namespace detail {

// Lower envelope of the parabolas v -> c*(v - xs[i])^2 + g[i] (xs strictly
// increasing), evaluated at the increasing query positions q. Exact.
inline void parabola_envelope(const std::vector<double>& xs,
                              const std::vector<double>& g, double c,
                              const std::vector<double>& q,
                              std::vector<double>& out, std::vector<int>& arg) {
  const int n = static_cast<int>(xs.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  auto lifted = [&](int i) { return g[i] + c * xs[i] * xs[i]; };
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int i = 1; i < n; ++i) {
    double s = 0;
    while (true) {
      int j = v[k];
      s = (lifted(i) - lifted(j)) / (2 * c * (xs[i] - xs[j]));
      if (s <= z[k]) {
        --k;  // z[0] = -inf keeps this from underflowing
      } else {
        break;
      }
    }
    ++k;
    v[k] = i;
    z[k] = s;
    z[k + 1] = inf;
  }
  int kk = 0;
  out.resize(q.size());
  arg.resize(q.size());
  for (size_t j = 0; j < q.size(); ++j) {
    while (z[kk + 1] < q[j]) ++kk;
    int i = v[kk];
    double d = xs[i] - q[j];
    out[j] = c * d * d + g[i];
    arg[j] = i;
  }
}

}  // namespace detail

// Exact discrete minimizer per node via the separable envelope transform;
// serves as the oracle for the characteristics method.
inline HopfLaxResult hopflax_grid(const ScalarField& f, double t) {
  if (t <= 0) throw std::invalid_argument("hopflax needs t > 0");
  const Grid& grid = f.grid();
  const Domain& dom = grid.domain();
  const int N = grid.resolution();
  const bool torus = dom.is_torus();
  const double c = 1.0 / (2.0 * t);

  // Source copies: on the torus three periodic images cover every wrapped
  // representative (per-coordinate distance <= 1/2); on the square just [0,1].
  const int S = torus ? 3 * N : N;
  const int off = torus ? N : 0;
  std::vector<double> xs(S), q(N);
  for (int s = 0; s < S; ++s) xs[s] = (s - off + 0.5) / N;
  for (int j = 0; j < N; ++j) q[j] = (j + 0.5) / N;

  std::vector<double> fv = f.physical_values();

  // Pass 1 over x1 (index i), one column j at a time: A(a, j), arg1(a, j).
  std::vector<double> A(static_cast<size_t>(N) * N);
  std::vector<int> arg1(A.size());
  {
    std::vector<double> g(S), out;
    std::vector<int> arg;
    for (int j = 0; j < N; ++j) {
      for (int s = 0; s < S; ++s)
        g[s] = fv[static_cast<size_t>((s - off + N) % N) * N + j];
      detail::parabola_envelope(xs, g, c, q, out, arg);
      for (int a = 0; a < N; ++a) {
        A[static_cast<size_t>(a) * N + j] = out[a];
        arg1[static_cast<size_t>(a) * N + j] = (arg[a] - off + N) % N;
      }
    }
  }

  // Pass 2 over x2 (index j) for each fixed y1-index a.
  std::vector<double> Q(A.size());
  std::vector<Point> argmin(A.size());
  {
    std::vector<double> g(S), out;
    std::vector<int> arg;
    for (int a = 0; a < N; ++a) {
      for (int s = 0; s < S; ++s)
        g[s] = A[static_cast<size_t>(a) * N + (s - off + N) % N];
      detail::parabola_envelope(xs, g, c, q, out, arg);
      for (int b = 0; b < N; ++b) {
        int jstar = (arg[b] - off + N) % N;
        int istar = arg1[static_cast<size_t>(a) * N + jstar];
        Q[static_cast<size_t>(a) * N + b] = out[b];
        argmin[static_cast<size_t>(a) * N + b] = grid.center(istar, jstar);
      }
    }
  }

  return {ScalarField::from_physical_values(grid, std::move(Q)),
          std::move(argmin), HopfLaxMethod::GridMin, std::nullopt};
}

namespace detail {

// Weighted moving-least-squares with quadratic basis (1, u, v, u^2, uv, v^2)
// in offsets scaled by the grid spacing; one geometry factorization serves all
// data channels. Degenerate neighborhoods fall back to a linear fit, then to
// the weighted mean.
struct MlsFit {
  static constexpr int kBasis = 6;
  static constexpr int kMaxChannels = 8;
  double A[kBasis][kBasis] = {};
  double rhs[kMaxChannels][kBasis] = {};
  int channels = 0;

  void add(double u, double v, double w, const double* data, int nch) {
    channels = nch;
    double b[kBasis] = {1, u, v, u * u, u * v, v * v};
    for (int r = 0; r < kBasis; ++r) {
      for (int c = r; c < kBasis; ++c) A[r][c] += w * b[r] * b[c];
      for (int ch = 0; ch < nch; ++ch) rhs[ch][r] += w * data[ch] * b[r];
    }
  }

  // Cholesky on the leading k x k block; false when a pivot degenerates.
  bool try_solve(int k, double* out) const {
    double L[kBasis][kBasis];
    double scale = 0;
    for (int r = 0; r < k; ++r) scale = std::max(scale, A[r][r]);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c <= r; ++c) {
        double s = A[c][r];  // upper triangle stored
        for (int p = 0; p < c; ++p) s -= L[r][p] * L[c][p];
        if (r == c) {
          if (s <= 1e-10 * scale) return false;
          L[r][r] = std::sqrt(s);
        } else {
          L[r][c] = s / L[c][c];
        }
      }
    }
    for (int ch = 0; ch < channels; ++ch) {
      double y[kBasis], x[kBasis];
      for (int r = 0; r < k; ++r) {
        double s = rhs[ch][r];
        for (int p = 0; p < r; ++p) s -= L[r][p] * y[p];
        y[r] = s / L[r][r];
      }
      for (int r = k - 1; r >= 0; --r) {
        double s = y[r];
        for (int p = r + 1; p < k; ++p) s -= L[p][r] * x[p];
        x[r] = s / L[r][r];
      }
      out[ch] = x[0];  // fit value at the origin
    }
    return true;
  }

  void solve(double* out) const {
    if (try_solve(kBasis, out)) return;
    if (try_solve(3, out)) return;
    for (int ch = 0; ch < channels; ++ch) out[ch] = rhs[ch][0] / A[0][0];
  }
};

}  // namespace detail

// Theorem-side method: forward-map every node x along its geodesic to
// y = exp(x, t grad f(x)) with value f(x) + (t/2)|grad f(x)|^2; the carried
// gradient gamma'(t) = grad f(x) and the inverse displacement log(y, x) ride
// along and are resampled onto the grid the same way.
inline HopfLaxResult hopflax_characteristics(const ScalarField& f, double t) {
  if (t <= 0) throw std::invalid_argument("hopflax needs t > 0");
  const Grid& grid = f.grid();
  const Domain& dom = grid.domain();
  const int N = grid.resolution();

  VectorField g = gradient(f);
  DatumNorms norms{g.sup_norm(), hessian_sup_norm(f)};
  if (t * norms.total() > config::kAdmissibleCM)
    throw AdmissibilityError(
        "characteristics inadmissible: t*(|grad f| + |Hess f|) = " +
        std::to_string(t * norms.total()) + " exceeds " +
        std::to_string(config::kAdmissibleCM));

  const size_t M = static_cast<size_t>(N) * N;
  std::vector<Point> fwd(M);
  // Channels carried by each characteristic: Q value, gamma', log(y, x).
  std::vector<double> chan(M * 5);
  std::vector<std::vector<int>> buckets(M);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      size_t s = static_cast<size_t>(i) * N + j;
      Point x = grid.center(i, j);
      TangentVector gv = g.at_cell(i, j);
      Point y = dom.exp(x, t * gv);
      fwd[s] = y;
      chan[s * 5 + 0] = f.value_at_cell(i, j) + 0.5 * t * gv.norm_sq();
      chan[s * 5 + 1] = gv.v1;
      chan[s * 5 + 2] = gv.v2;
      TangentVector back = dom.log(y, x);
      chan[s * 5 + 3] = back.v1;
      chan[s * 5 + 4] = back.v2;
      int bi = std::min(N - 1, static_cast<int>(y.x1 * N));
      int bj = std::min(N - 1, static_cast<int>(y.x2 * N));
      buckets[static_cast<size_t>(bi) * N + bj].push_back(static_cast<int>(s));
    }
  }

  const double h = grid.spacing();
  const double sigma2 = 2.25 * h * h;  // MLS kernel width 1.5h
  const bool torus = dom.is_torus();
  std::vector<double> Q(M), c1(M), c2(M);
  std::vector<Point> argmin(M);
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      Point y = grid.center(i, j);
      cand.clear();
      // Grow Chebyshev rings of buckets until at least 12 candidates, plus one
      // guard ring so the 12 nearest are truly nearest.
      int have = 0;
      for (int rho = 0; rho < N; ++rho) {
        bool enough_before = have >= 12;
        for (int di = -rho; di <= rho; ++di) {
          for (int dj = -rho; dj <= rho; ++dj) {
            if (std::max(std::abs(di), std::abs(dj)) != rho) continue;
            int bi = i + di, bj = j + dj;
            if (torus) {
              bi = (bi % N + N) % N;
              bj = (bj % N + N) % N;
            } else if (bi < 0 || bi >= N || bj < 0 || bj >= N) {
              continue;
            }
            for (int s : buckets[static_cast<size_t>(bi) * N + bj]) {
              cand.push_back({dom.dist_sq(y, fwd[s]), s});
              ++have;
            }
          }
        }
        if (enough_before) break;
      }
      int use = std::min<int>(12, static_cast<int>(cand.size()));
      std::partial_sort(cand.begin(), cand.begin() + use, cand.end());
      detail::MlsFit fit;
      for (int kk = 0; kk < use; ++kk) {
        int s = cand[kk].second;
        TangentVector d = dom.log(y, fwd[s]);
        double w = std::exp(-cand[kk].first / sigma2);
        fit.add(d.v1 / h, d.v2 / h, w, &chan[static_cast<size_t>(s) * 5], 5);
      }
      double out[5];
      fit.solve(out);
      size_t sidx = static_cast<size_t>(i) * N + j;
      Q[sidx] = out[0];
      c1[sidx] = out[1];
      c2[sidx] = out[2];
      argmin[sidx] = dom.exp(y, TangentVector{out[3], out[4]});
    }
  }

  return {ScalarField::from_physical_values(grid, std::move(Q)),
          std::move(argmin), HopfLaxMethod::Characteristics,
          detail::vector_field_from_physical(grid, c1, c2)};
}

// Sup-norm Hamilton-Jacobi residual d/dt Q_tf + kinetic_factor * |grad Q_tf|^2
// with a central time difference; kinetic_factor 0.5 is the equation, 1.0 is
// exposed for the comparison diagnostic.
inline double hj_residual(const ScalarField& f, double t, double dt,
                          double kinetic_factor = 0.5) {
  if (dt <= 0 || t - dt <= 0) throw std::invalid_argument("need 0 < dt < t");
  HopfLaxResult lo = hopflax_characteristics(f, t - dt);
  HopfLaxResult mid = hopflax_characteristics(f, t);
  HopfLaxResult hi = hopflax_characteristics(f, t + dt);
  const Grid& grid = f.grid();
  const int N = grid.resolution();
  double worst = 0;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      double ddt = (hi.Qf.value_at_cell(i, j) - lo.Qf.value_at_cell(i, j)) / (2 * dt);
      TangentVector gq = mid.gradQ->at_cell(i, j);
      worst = std::max(worst, std::abs(ddt + kinetic_factor * gq.norm_sq()));
    }
  }
  return worst;
}

// Largest violation of the strict-convexity estimate
//   d^2(y, y')/t <= C * [Q_tf(y) - Q_tf(y')
//                        + (1/2t)(d^2(x_t(y), y') - d^2(x_t(y), y))]
// over the given pairs; nonpositive return means no violation.
inline double strict_convexity_gap(const ScalarField& f, double t,
                                   const std::vector<std::pair<Point, Point>>& pairs,
                                   double C = config::kCCal) {
  HopfLaxResult res = hopflax_characteristics(f, t);
  const Grid& grid = f.grid();
  const Domain& dom = grid.domain();
  const int N = grid.resolution();
  auto snap = [&](Point p) {
    int i = std::min(N - 1, std::max(0, static_cast<int>(p.x1 * N)));
    int j = std::min(N - 1, std::max(0, static_cast<int>(p.x2 * N)));
    return std::pair<int, int>(i, j);
  };
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& [yraw, ypraw] : pairs) {
    auto [yi, yj] = snap(dom.canonicalize(yraw));
    auto [pi, pj] = snap(dom.canonicalize(ypraw));
    Point y = grid.center(yi, yj), yp = grid.center(pi, pj);
    Point x = res.argmin[static_cast<size_t>(yi) * N + yj];
    double lhs = dom.dist_sq(y, yp) / t;
    double rhs = res.Qf.value_at_cell(yi, yj) - res.Qf.value_at_cell(pi, pj) +
                 (dom.dist_sq(x, yp) - dom.dist_sq(x, y)) / (2 * t);
    worst = std::max(worst, lhs - C * rhs);
  }
  return worst;
}

// Sup-norm of grad(Q_tf - f); the theorem bounds it by t |grad f| |Hess f|.
inline double lip_defect(const ScalarField& f, double t) {
  HopfLaxResult res = hopflax_characteristics(f, t);
  std::vector<double> diff = res.Qf.physical_values();
  std::vector<double> fv = f.physical_values();
  for (size_t s = 0; s < diff.size(); ++s) diff[s] -= fv[s];
  return gradient(ScalarField::from_physical_values(f.grid(), std::move(diff)))
      .sup_norm();
}

// c-transform: Q_1 f by the always-valid grid method.
inline ScalarField c_transform(const ScalarField& f) {
  return hopflax_grid(f, 1.0).Qf;
}

// Pinned corpus for property tests and calibration: three shapes at three
// amplitudes, Neumann-compatible cosine analogues on the square.
inline std::vector<ScalarField> hopflax_test_family(const Grid& grid) {
  const bool torus = grid.domain().is_torus();
  std::vector<ScalarField> out;
  for (double eps : {0.003, 0.01, 0.03}) {
    out.push_back(ScalarField::from_function(grid, [torus, eps](Point p) {
      return torus ? eps * std::cos(2 * M_PI * p.x1) : eps * std::cos(M_PI * p.x1);
    }));
    out.push_back(ScalarField::from_function(grid, [torus, eps](Point p) {
      return torus ? eps * (std::cos(2 * M_PI * p.x1) + std::sin(2 * M_PI * p.x2))
                   : eps * (std::cos(M_PI * p.x1) + std::cos(M_PI * p.x2));
    }));
    // Smoothed random band-limited member, fixed seed, normalized to sup 1.
    Rng rng(2718281828ULL);
    std::vector<double> amp, ph;
    std::vector<std::pair<int, int>> modes;
    for (int k1 = 0; k1 <= 3; ++k1)
      for (int k2 = 0; k2 <= 3; ++k2) {
        if (k1 == 0 && k2 == 0) continue;
        modes.push_back({k1, k2});
        amp.push_back((2 * rng.uniform() - 1) * std::exp(-0.5 * (k1 * k1 + k2 * k2)));
        ph.push_back(2 * M_PI * rng.uniform());
      }
    ScalarField raw = ScalarField::from_function(grid, [&](Point p) {
      double v = 0;
      for (size_t s = 0; s < modes.size(); ++s) {
        auto [k1, k2] = modes[s];
        if (torus)
          v += amp[s] * std::cos(2 * M_PI * (k1 * p.x1 + k2 * p.x2) + ph[s]);
        else
          v += amp[s] * std::cos(M_PI * k1 * p.x1) * std::cos(M_PI * k2 * p.x2);
      }
      return v;
    });
    double sup = std::max(std::abs(raw.max_value()), std::abs(raw.min_value()));
    std::vector<double> vals = raw.physical_values();
    for (double& v : vals) v *= eps / sup;
    out.push_back(ScalarField::from_physical_values(grid, std::move(vals)));
  }
  return out;
}

// Largest tau = t * (|grad f| + |Hess f|) for which the forward flow stays
// orientation-preserving (det(I + t Hess f) > 0 at every node); the frozen
// admissibility budget is half the family minimum.
inline double injectivity_breakdown(const ScalarField& f) {
  DatumNorms norms = datum_norms(f);
  const int m = f.rep_m();
  double nyq = f.layout().base_omega * (m / 2);
  auto fxx = detail::multiplier_values(
      f, [](double w1, double) { return std::complex<double>(-w1 * w1, 0); });
  auto fyy = detail::multiplier_values(
      f, [](double, double w2) { return std::complex<double>(-w2 * w2, 0); });
  auto fxy = detail::multiplier_values(f, [nyq](double w1, double w2) {
    if (w1 == -nyq || w2 == -nyq) return std::complex<double>(0, 0);
    return std::complex<double>(-w1 * w2, 0);
  });
  auto ok = [&](double t) {
    for (size_t s = 0; s < fxx.size(); ++s) {
      double det = (1 + t * fxx[s]) * (1 + t * fyy[s]) - t * t * fxy[s] * fxy[s];
      if (det <= 0) return false;
    }
    return true;
  };
  double lo = 0, hi = 1.0 / std::max(norms.hess_sup, 1e-300);
  hi *= 4;  // safe upper bracket: breakdown occurs by t = 1/lambda_min
  while (!ok(lo + 1e-12) && lo > 0) return 0;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  return lo * norms.total();
}

}  // namespace otlab
