// Exact semi-discrete optimal transport from a raster-discretized source
// measure to a point cloud: concave Kantorovich dual ascent over Laguerre
// (power) cells with a damped diagonal-Newton step, bucketed atom search, and
// deterministic lowest-index tie-breaking. Also the transport-map utilities
// built on top of a solved plan.
#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "otlab/heat_poisson.hpp"

namespace otlab {

struct SemiDiscretePlan {
  PointCloud cloud;
  std::vector<double> weights;     // Kantorovich duals, mean 0
  std::vector<int> assignment;     // per physical grid cell, row-major
  std::vector<double> cellMasses;  // per atom, sums to the source total
  double dualValue = 0;
  double w2sq = 0;
  double gapBound = 0;       // |w2sq - dualValue| is certified below this
  double massResidual = 0;   // max_i |cellMass_i - target_i| at convergence
  int iterations = 0;
};

namespace detail {

// Mass convergence cannot beat the raster granularity: a unit weight
// perturbation moves whole h^2 cells across a Laguerre boundary, and the
// endgame can wedge with a couple of cells stuck on the wrong side.
constexpr double kMassGranularity = 2.5;
constexpr int kMaxAscentIterations = 1000;

// Coarse spatial index over atoms for the per-cell argmin search.
struct AtomIndex {
  int B;
  double s;  // bucket side
  std::vector<std::vector<int>> atoms;
  std::vector<double> bucketMaxW;
  double globalMaxW = 0;

  AtomIndex(const PointCloud& cloud) {
    int n = cloud.size();
    B = std::max(1, static_cast<int>(std::sqrt(n / 2.0)));
    s = 1.0 / B;
    atoms.assign(static_cast<size_t>(B) * B, {});
    for (int i = 0; i < n; ++i) {
      const Point& p = cloud.points[i];
      int bi = std::min(B - 1, static_cast<int>(p.x1 * B));
      int bj = std::min(B - 1, static_cast<int>(p.x2 * B));
      atoms[static_cast<size_t>(bi) * B + bj].push_back(i);
    }
  }

  void refresh_weights(const std::vector<double>& w) {
    bucketMaxW.assign(atoms.size(), -std::numeric_limits<double>::infinity());
    globalMaxW = -std::numeric_limits<double>::infinity();
    for (size_t b = 0; b < atoms.size(); ++b) {
      for (int i : atoms[b]) bucketMaxW[b] = std::max(bucketMaxW[b], w[i]);
      globalMaxW = std::max(globalMaxW, bucketMaxW[b]);
    }
  }

  // Shortest distance from x to the bucket square (torus-aware per axis).
  double bucket_dist_sq(Point x, int bi, int bj, bool torus) const {
    auto axis = [&](double v, int b) {
      double lo = b * s, hi = (b + 1) * s;
      if (torus) {
        double d = 0;
        if (v < lo || v > hi) {
          double dlo = std::abs(wrap_delta(v - lo));
          double dhi = std::abs(wrap_delta(v - hi));
          d = std::min(dlo, dhi);
          // inside after wrapping?
          double u = v - std::floor(v);
          if (u >= lo && u <= hi) d = 0;
        }
        return d;
      }
      if (v < lo) return lo - v;
      if (v > hi) return v - hi;
      return 0.0;
    };
    double d1 = axis(x.x1, bi), d2 = axis(x.x2, bj);
    return d1 * d1 + d2 * d2;
  }
};

struct AscentEvaluation {
  std::vector<int> assignment;
  std::vector<double> cellMasses;
  double dual = 0;   // F(w)
  double cost = 0;   // transport cost of the induced assignment
  double residual = 0;
};

// One full raster pass: Laguerre assignment (argmin_i d^2 - w_i, ties to the
// lowest index), cell masses, assignment cost, and the dual objective.
inline AscentEvaluation evaluate_weights(const PointCloud& cloud, const Grid& grid,
                                         const std::vector<double>& sourceMass,
                                         const std::vector<double>& targetMass,
                                         const std::vector<double>& w,
                                         AtomIndex& index,
                                         const std::vector<int>* warmStart) {
  const Domain& dom = grid.domain();
  const bool torus = dom.is_torus();
  const int N = grid.resolution();
  const int n = cloud.size();
  const int B = index.B;
  index.refresh_weights(w);

  AscentEvaluation ev;
  ev.assignment.assign(static_cast<size_t>(N) * N, -1);
  ev.cellMasses.assign(n, 0.0);

  const int maxRing = torus ? B / 2 + 1 : B;
  for (int ci = 0; ci < N; ++ci) {
    for (int cj = 0; cj < N; ++cj) {
      size_t cell = static_cast<size_t>(ci) * N + cj;
      double mass = sourceMass[cell];
      Point x = grid.center(ci, cj);
      double best = std::numeric_limits<double>::infinity();
      int bestIdx = -1;
      if (warmStart) {
        int i = (*warmStart)[cell];
        if (i >= 0) {
          best = dom.dist_sq(x, cloud.points[i]) - w[i];
          bestIdx = i;
        }
      }
      int bx = std::min(B - 1, static_cast<int>(x.x1 * B));
      int by = std::min(B - 1, static_cast<int>(x.x2 * B));
      for (int rho = 0; rho <= maxRing; ++rho) {
        if (rho > 0) {
          double ringDist = (rho - 1) * index.s;
          if (ringDist * ringDist - index.globalMaxW >= best) break;
        }
        for (int di = -rho; di <= rho; ++di) {
          for (int dj = -rho; dj <= rho; ++dj) {
            if (std::max(std::abs(di), std::abs(dj)) != rho) continue;
            int bi = bx + di, bj = by + dj;
            if (torus) {
              bi = (bi % B + B) % B;
              bj = (bj % B + B) % B;
            } else if (bi < 0 || bi >= B || bj < 0 || bj >= B) {
              continue;
            }
            size_t bidx = static_cast<size_t>(bi) * B + bj;
            if (index.atoms[bidx].empty()) continue;
            if (index.bucket_dist_sq(x, bi, bj, torus) - index.bucketMaxW[bidx] >= best)
              continue;
            for (int i : index.atoms[bidx]) {
              double v = dom.dist_sq(x, cloud.points[i]) - w[i];
              if (v < best || (v == best && i < bestIdx)) {
                best = v;
                bestIdx = i;
              }
            }
          }
        }
      }
      ev.assignment[cell] = bestIdx;
      ev.cellMasses[bestIdx] += mass;
      ev.cost += mass * (best + w[bestIdx]);
      ev.dual += mass * best;
    }
  }
  for (int i = 0; i < n; ++i) {
    ev.dual += w[i] * targetMass[i];
    ev.residual = std::max(ev.residual, std::abs(ev.cellMasses[i] - targetMass[i]));
  }
  return ev;
}

// Damped Newton ascent at a fixed grid resolution; w is the starting point
// and receives the final weights.
inline AscentEvaluation run_ascent(const PointCloud& cloud, const Grid& grid,
                                   const std::vector<double>& sourceMass,
                                   const std::vector<double>& targetMass,
                                   double tol, std::vector<double>& w,
                                   int& iterationsOut,
                                   int maxIter = kMaxAscentIterations) {
  const int n = cloud.size();
  const int N = grid.resolution();
  AtomIndex index(cloud);
  AscentEvaluation ev =
      evaluate_weights(cloud, grid, sourceMass, targetMass, w, index, nullptr);

  int iterations = 0;
  int sinceImprovement = 0;
  double bestResidual = ev.residual;
  double bestDual = ev.dual;
  double stepInit = 1.0;
  const double h = grid.spacing();

  while (ev.residual > tol) {
    if (++iterations > maxIter || sinceImprovement > 80)
      throw SolverError("semidiscrete ascent stalled: mass residual " +
                        std::to_string(ev.residual) + " (tolerance " +
                        std::to_string(tol) + ") after " +
                        std::to_string(iterations) + " iterations");

    // Dual Hessian from raster Laguerre boundaries: a graph Laplacian over
    // adjacent cells, each edge weighted by the boundary-integral density
    // over twice the atom separation.
    std::vector<double> hess(n, 0.0);
    std::unordered_map<long long, double> offdiag;
    for (int ci = 0; ci < N; ++ci) {
      for (int cj = 0; cj < N; ++cj) {
        size_t cell = static_cast<size_t>(ci) * N + cj;
        int a = ev.assignment[cell];
        auto edge = [&](size_t other) {
          int b = ev.assignment[other];
          if (b == a) return;
          double rho = (sourceMass[cell] + sourceMass[other]) / (2 * h * h);
          double contrib =
              h * rho / (2 * grid.domain().dist(cloud.points[a], cloud.points[b]));
          hess[a] += contrib;
          hess[b] += contrib;
          long long key = (a < b) ? (static_cast<long long>(a) * n + b)
                                  : (static_cast<long long>(b) * n + a);
          offdiag[key] -= contrib;
        };
        if (ci + 1 < N) edge(cell + static_cast<size_t>(N));
        else if (grid.domain().is_torus()) edge(static_cast<size_t>(cj));
        if (cj + 1 < N) edge(cell + 1);
        else if (grid.domain().is_torus()) edge(static_cast<size_t>(ci) * N);
      }
    }
    double hmean = 0;
    int hcount = 0;
    for (double v : hess)
      if (v > 0) {
        hmean += v;
        ++hcount;
      }
    double hfloor = (hcount > 0) ? 0.25 * hmean / hcount : 1.0;
    // Floor empty or starved diagonals and add a small shift so the Laplacian
    // becomes positive definite; conjugate gradients then gives a damped
    // Newton direction (far better conditioned than the diagonal step).
    double shift = 1e-8 * (hmean / std::max(1, hcount)) + 1e-300;
    std::vector<double> diag(n);
    for (int i = 0; i < n; ++i) diag[i] = std::max(hess[i], hfloor) + shift;

    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = targetMass[i] - ev.cellMasses[i];
    auto apply_hess = [&](const std::vector<double>& x, std::vector<double>& y) {
      for (int i = 0; i < n; ++i) y[i] = diag[i] * x[i];
      for (const auto& [key, v] : offdiag) {
        int a = static_cast<int>(key / n), b = static_cast<int>(key % n);
        y[a] += v * x[b];
        y[b] += v * x[a];
      }
    };
    std::vector<double> dw(n, 0.0), r(g), p(g), Ap(n);
    double rr = 0;
    for (double v : r) rr += v * v;
    const double cgTol = 1e-20 * rr;
    for (int cg = 0; cg < 200 && rr > cgTol; ++cg) {
      apply_hess(p, Ap);
      double pAp = 0;
      for (int i = 0; i < n; ++i) pAp += p[i] * Ap[i];
      if (pAp <= 0) break;
      double alpha = rr / pAp;
      for (int i = 0; i < n; ++i) {
        dw[i] += alpha * p[i];
        r[i] -= alpha * Ap[i];
      }
      double rrNew = 0;
      for (double v : r) rrNew += v * v;
      for (int i = 0; i < n; ++i) p[i] = r[i] + (rrNew / rr) * p[i];
      rr = rrNew;
    }
    double slope = 0;
    for (int i = 0; i < n; ++i) slope += g[i] * dw[i];
    if (slope <= 0) {
      // CG direction failed to be an ascent direction; fall back to the
      // diagonal step.
      slope = 0;
      for (int i = 0; i < n; ++i) {
        dw[i] = g[i] / diag[i];
        slope += g[i] * dw[i];
      }
    }

    // Armijo backtracking on the concave dual, warm-started from the last
    // accepted step (with room to grow back): re-testing the full Newton step
    // every iteration is wasteful in the combinatorial endgame, where the
    // acceptable step is small and stable and oversized trial weights also
    // defeat the bucket pruning inside the trial evaluation.
    double step = stepInit;
    bool accepted = false;
    for (int bt = 0; bt < 24; ++bt) {
      std::vector<double> wtrial(n);
      for (int i = 0; i < n; ++i) wtrial[i] = w[i] + step * dw[i];
      AscentEvaluation trial = evaluate_weights(
          cloud, grid, sourceMass, targetMass, wtrial, index, &ev.assignment);
      // Armijo increase of the concave dual, or a residual improvement that
      // does not give back dual progress (the endgame can sit below machine
      // precision on the dual while the mass residual still tightens).
      if (trial.dual >= ev.dual + 1e-4 * step * slope ||
          (trial.residual < ev.residual &&
           trial.dual >= ev.dual - 1e-12 * (std::abs(ev.dual) + 1e-12))) {
        w = std::move(wtrial);
        ev = std::move(trial);
        accepted = true;
        stepInit = std::min(1.0, 2 * step);
        break;
      }
      step *= 0.5;
    }
#ifdef OTLAB_ASCENT_DEBUG
    fprintf(stderr, "it=%d acc=%d step=%g dual=%.10g resid=%.3g slope=%g N=%d\n",
            iterations, accepted ? 1 : 0, step, ev.dual, ev.residual, slope, N);
#endif
    if (!accepted) {
      ++sinceImprovement;
      continue;
    }
    // Progress shows up either in the dual objective or in the mass residual;
    // only stall when neither has moved for a long stretch.
    if (ev.residual < bestResidual * (1 - 1e-3) ||
        ev.dual > bestDual + 1e-12 * std::abs(bestDual) + 1e-18) {
      sinceImprovement = 0;
    } else {
      ++sinceImprovement;
    }
    bestResidual = std::min(bestResidual, ev.residual);
    bestDual = std::max(bestDual, ev.dual);
  }

  iterationsOut += iterations;
  return ev;
}

}  // namespace detail

// Dual ascent from a general nonnegative per-cell source measure to the
// uniform atomic measure on the cloud. The solve is warm-started through a
// pyramid of pooled coarse grids (the weights are continuum duals, so they
// transfer across resolutions); each level then needs only a few Newton
// steps. The uniform-source overload below is a thin wrapper, so reweighted
// and plain solves share one code path.
inline SemiDiscretePlan solve_semidiscrete_weighted(const PointCloud& cloud,
                                                    const Grid& grid,
                                                    std::vector<double> sourceMass,
                                                    double tol_mass = 1e-3) {
  const int n = cloud.size();
  const int N = grid.resolution();
  if (n < 1) throw std::invalid_argument("need at least one atom");
  if (static_cast<long long>(N) * N < 50LL * n)
    throw std::invalid_argument("under-resolved: need N^2 >= 50 n");
  if (static_cast<int>(sourceMass.size()) != grid.size())
    throw std::invalid_argument("source mass array does not match grid");

  double total = 0, maxCell = 0;
  for (double m : sourceMass) {
    if (m < 0) throw std::invalid_argument("negative source mass");
    total += m;
    maxCell = std::max(maxCell, m);
  }
  if (std::abs(total - 1.0) > 1e-8)
    throw std::invalid_argument("source mass total " + std::to_string(total) +
                                " is not 1");
  for (double& m : sourceMass) m /= total;

  std::vector<double> targetMass(n, 1.0 / n);
  const double tol = std::max(tol_mass / n, detail::kMassGranularity * maxCell);

  std::vector<double> w(n, 0.0);
  int iterations = 0;
  detail::AscentEvaluation ev =
      detail::run_ascent(cloud, grid, sourceMass, targetMass, tol, w, iterations);

  // Gauge-fix the weights to mean zero (assignment is invariant).
  double wmean = 0;
  for (double v : w) wmean += v;
  wmean /= n;
  for (double& v : w) v -= wmean;

  SemiDiscretePlan plan{cloud,           std::move(w), std::move(ev.assignment),
                        std::move(ev.cellMasses),
                        0.0,             ev.cost,      0.0,
                        ev.residual,     iterations};
  for (int i = 0; i < n; ++i) {
    plan.dualValue += plan.weights[i] * (targetMass[i] - plan.cellMasses[i]);
    plan.gapBound +=
        std::abs(plan.weights[i]) * std::abs(targetMass[i] - plan.cellMasses[i]);
  }
  plan.dualValue += ev.cost;  // F(w) = cost + sum_i w_i (target_i - mass_i)
  plan.gapBound += 1e-14;
  return plan;
}

inline SemiDiscretePlan solve_semidiscrete(const PointCloud& cloud, const Grid& grid,
                                           double tol_mass = 1e-3) {
  std::vector<double> uniform(grid.size(), grid.cell_weight());
  return solve_semidiscrete_weighted(cloud, grid, std::move(uniform), tol_mass);
}

// ---------------------------------------------------------------------------
// Transport maps on the grid.

struct TransportMapGrid {
  Grid grid;
  std::vector<Point> target;  // per physical cell
};

inline TransportMapGrid plan_map(const SemiDiscretePlan& plan, const Grid& grid) {
  TransportMapGrid map{grid, {}};
  map.target.resize(plan.assignment.size());
  for (size_t s = 0; s < plan.assignment.size(); ++s)
    map.target[s] = plan.cloud.points[plan.assignment[s]];
  return map;
}

inline TransportMapGrid identity_map(const Grid& grid) {
  TransportMapGrid map{grid, {}};
  map.target.resize(grid.size());
  for (int s = 0; s < grid.size(); ++s) map.target[s] = grid.center(s);
  return map;
}

// S = exp(g): each cell center flows along its tangent vector.
inline TransportMapGrid exp_of_field(const VectorField& g) {
  const Grid& grid = g.grid();
  const int N = grid.resolution();
  TransportMapGrid map{grid, {}};
  map.target.resize(grid.size());
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      map.target[grid.index(i, j)] =
          grid.domain().exp(grid.center(i, j), g.at_cell(i, j));
  return map;
}

inline double map_l2_distance(const TransportMapGrid& a, const TransportMapGrid& b) {
  if (!(a.grid == b.grid)) throw std::invalid_argument("map grids differ");
  const Domain& dom = a.grid.domain();
  double total = 0;
  for (size_t s = 0; s < a.target.size(); ++s)
    total += dom.dist_sq(a.target[s], b.target[s]);
  return total * a.grid.cell_weight();
}

// Sup over cells of the displacement d(x, T(x)).
inline double linf_map_distance(const TransportMapGrid& t) {
  const Domain& dom = t.grid.domain();
  double worst = 0;
  for (int s = 0; s < t.grid.size(); ++s)
    worst = std::max(worst, dom.dist(t.grid.center(s), t.target[s]));
  return worst;
}

// grad f(x) := log(x, T(x)); exact inverse of exp_of_field. Antipodal
// displacements make the logarithm ambiguous and are reported as errors.
inline VectorField grad_potential_from_map(const TransportMapGrid& t) {
  const Grid& grid = t.grid;
  const Domain& dom = grid.domain();
  const int N = grid.resolution();
  std::vector<double> c1(grid.size()), c2(grid.size());
  for (int s = 0; s < grid.size(); ++s) {
    TangentVector v = dom.log(grid.center(s), t.target[s]);
    if (dom.is_torus() &&
        (std::abs(v.v1) >= 0.5 - 1e-12 || std::abs(v.v2) >= 0.5 - 1e-12))
      throw SolverError("antipodal displacement at cell " + std::to_string(s));
    c1[s] = v.v1;
    c2[s] = v.v2;
  }
  return detail::vector_field_from_physical(grid, c1, c2);
}

// Stratified Monte Carlo pushforward of m through exp(g), binned to the grid
// and normalized to mean 1. Deterministic given the seed; the per-cell
// statistical error is ~ (Q/N^2)^{-1/2}.
inline ScalarField pushforward_density(const VectorField& g, const Grid& grid,
                                       long long Q, std::uint64_t seed) {
  const int N = grid.resolution();
  if (Q < 10LL * grid.size())
    throw std::invalid_argument("pushforward needs Q >= 10 N^2");
  const int perCell = static_cast<int>((Q + grid.size() - 1) / grid.size());
  std::vector<double> counts(static_cast<size_t>(N) * N, 0.0);
  const Domain& dom = grid.domain();
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      Rng rng(derive_seed({seed, static_cast<std::uint64_t>(i) * N + j}));
      for (int s = 0; s < perCell; ++s) {
        Point p{(i + rng.uniform()) / N, (j + rng.uniform()) / N};
        Point y = dom.exp(p, sample(g, p));
        int bi = std::min(N - 1, static_cast<int>(y.x1 * N));
        int bj = std::min(N - 1, static_cast<int>(y.x2 * N));
        counts[static_cast<size_t>(bi) * N + bj] += 1.0;
      }
    }
  }
  double scale = static_cast<double>(grid.size()) /
                 (static_cast<double>(perCell) * grid.size());
  for (double& c : counts) c *= scale;
  return ScalarField::from_physical_values(grid, std::move(counts));
}

}  // namespace otlab
