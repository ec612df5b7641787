// Empirical check of the optimal-map stability inequality
//   int d^2(S, T) dm  <~  W2^2(mu1, mu2) + W2(mu1, mu2) * W2(m, mu1)
// in the perturbative regime S = exp(grad f), mu1 = S # m, mu2 empirical.
#pragma once

#include "otlab/config.hpp"
#include "otlab/semidiscrete.hpp"
#include "otlab/sinkhorn.hpp"

namespace otlab {

struct StabilityReport {
  double lhs = 0;         // int d^2(S, T) dm
  double rhsA = 0;        // W2^2(mu1, mu2)
  double rhsB = 0;        // W2(mu1, mu2) * W2(m, mu1)
  double ratio = 0;       // lhs / (rhsA + rhsB), 0 when the rhs vanishes
  double w2BracketWidth = 0;  // entropic bracket width behind the W2(m, mu1) factor
  bool admissible = false;    // sup|grad f| + sup|Hess f| within the frozen budget
};

inline StabilityReport stability_check(const ScalarField& f,
                                       const PointCloud& cloud2,
                                       std::uint64_t seed) {
  const Grid& grid = f.grid();
  if (grid.domain().kind() != cloud2.domain.kind())
    throw std::invalid_argument("stability_check: domain mismatch");

  StabilityReport rep;
  VectorField g = gradient(f);
  rep.admissible =
      g.sup_norm() + hessian_sup_norm(f) <= config::kAdmissibleCM;

  // T: optimal map m -> mu2; its quadrature doubles as W2^2(m, mu2).
  SemiDiscretePlan plan2 = solve_semidiscrete(cloud2, grid);
  TransportMapGrid t = plan_map(plan2, grid);
  TransportMapGrid s = exp_of_field(g);
  rep.lhs = map_l2_distance(s, t);

  // mu1 = S # m as a density; the pushforward of the zero field is exactly
  // uniform, which keeps the f == 0 anchor noise-free.
  long long q = 16LL * grid.size();
  ScalarField mu1 = pushforward_density(g, grid, q, derive_seed({seed, 71}));

  // W2^2(mu1, mu2): reweighted semi-discrete solve from the mu1 raster.
  std::vector<double> mu1Mass(grid.size());
  for (int i = 0; i < grid.resolution(); ++i)
    for (int j = 0; j < grid.resolution(); ++j)
      mu1Mass[static_cast<size_t>(i) * grid.resolution() + j] =
          grid.cell_weight() * mu1.value_at_cell(i, j);
  rep.rhsA = solve_semidiscrete_weighted(cloud2, grid, mu1Mass).w2sq;

  // W2(m, mu1): entropic bracket midpoint between the two densities.
  ScalarField uniform = ScalarField::from_function(grid, [](Point) { return 1.0; });
  SinkhornBracket br = sinkhorn_w2(uniform, mu1);
  rep.w2BracketWidth = br.upper - br.lower;
  double w2m = std::sqrt(std::max(0.0, 0.5 * (br.lower + br.upper)));
  rep.rhsB = std::sqrt(rep.rhsA) * w2m;

  double rhs = rep.rhsA + rep.rhsB;
  rep.ratio = (rhs > 0) ? rep.lhs / rhs : 0.0;
  return rep;
}

// stability_check with f replaced by alpha * f over the given scales.
inline std::vector<StabilityReport> perturbation_scaling(
    const ScalarField& f, const PointCloud& cloud2,
    const std::vector<double>& scales, std::uint64_t seed) {
  std::vector<StabilityReport> out;
  out.reserve(scales.size());
  for (size_t k = 0; k < scales.size(); ++k) {
    double alpha = scales[k];
    ScalarField fa =
        f.apply_multiplier([alpha](double, double) {
          return std::complex<double>(alpha, 0);
        });
    out.push_back(stability_check(fa, cloud2, derive_seed({seed, k})));
  }
  return out;
}

}  // namespace otlab
