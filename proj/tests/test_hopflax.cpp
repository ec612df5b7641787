#include <catch2/catch_amalgamated.hpp>

#include "otlab/hopflax.hpp"
#include "otlab/rng.hpp"

using namespace otlab;

namespace {

ScalarField constant_field(const Grid& grid, double c) {
  return ScalarField::from_function(grid, [c](Point) { return c; });
}

ScalarField mode_field(const Grid& grid, double eps) {
  bool torus = grid.domain().is_torus();
  return ScalarField::from_function(grid, [torus, eps](Point p) {
    return torus ? eps * std::cos(2 * M_PI * p.x1) : eps * std::cos(M_PI * p.x1);
  });
}

double sup_diff(const ScalarField& a, const ScalarField& b) {
  auto av = a.physical_values(), bv = b.physical_values();
  double err = 0;
  for (size_t s = 0; s < av.size(); ++s) err = std::max(err, std::abs(av[s] - bv[s]));
  return err;
}

// Mid-range admissible time for the characteristics method.
double half_admissible_time(const ScalarField& f) {
  return 0.5 * config::kAdmissibleCM / datum_norms(f).total();
}

}  // namespace

TEST_CASE("grid method on a constant datum") {
  for (Domain dom : {Domain::torus(), Domain::square()}) {
    Grid grid(dom, 64);
    ScalarField f = constant_field(grid, 1.25);
    HopfLaxResult res = hopflax_grid(f, 0.7);
    CHECK(sup_diff(res.Qf, f) < 1e-13);
    for (int i = 0; i < 64; i += 13)
      for (int j = 0; j < 64; j += 7) {
        Point y = grid.center(i, j);
        CHECK(dom.dist(res.argmin[static_cast<size_t>(i) * 64 + j], y) < 1e-13);
      }
  }
}

TEST_CASE("Q_tf converges uniformly to f as t -> 0") {
  Grid grid(Domain::torus(), 256);
  double eps = 0.01, t = 1e-4;
  ScalarField f = mode_field(grid, eps);
  HopfLaxResult res = hopflax_grid(f, t);
  double lip = 2 * M_PI * eps;
  CHECK(sup_diff(res.Qf, f) <= 1.05 * t * lip * lip / 2);
}

TEST_CASE("grid method matches a dense 1-D inf-convolution oracle") {
  const int N = 512;
  Grid grid(Domain::torus(), N);
  double eps = 0.01, t = 0.5;
  ScalarField f = mode_field(grid, eps);
  HopfLaxResult res = hopflax_grid(f, t);
  // The datum depends only on x1, so Q_tf(y) is the 1-D inf-convolution in y1.
  const int S = 100000;
  double h = 1.0 / N;
  double err = 0;
  for (int a = 0; a < N; ++a) {
    double y1 = (a + 0.5) / N;
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < S; ++s) {
      double x1 = (s + 0.5) / S;
      double d = detail::wrap_delta(x1 - y1);
      best = std::min(best, d * d / (2 * t) + eps * std::cos(2 * M_PI * x1));
    }
    err = std::max(err, std::abs(res.Qf.value_at_cell(a, 0) - best));
  }
  CHECK(err < 2 * h * h);
}

TEST_CASE("characteristics agree with the grid oracle on admissible data") {
  for (Domain dom : {Domain::torus(), Domain::square()}) {
    const int N = 512;
    Grid grid(dom, N);
    double h = 1.0 / N;
    ScalarField f = mode_field(grid, 0.01);
    double t = half_admissible_time(f);
    HopfLaxResult byGrid = hopflax_grid(f, t);
    HopfLaxResult byChar = hopflax_characteristics(f, t);
    CHECK(sup_diff(byGrid.Qf, byChar.Qf) <= 5 * h);
  }
}

TEST_CASE("characteristics constant datum is exact") {
  Grid grid(Domain::torus(), 64);
  ScalarField f = constant_field(grid, -0.4);
  HopfLaxResult res = hopflax_characteristics(f, 0.5);
  CHECK(sup_diff(res.Qf, f) < 1e-12);
  CHECK(res.gradQ->sup_norm() < 1e-12);
}

TEST_CASE("characteristics reject inadmissible times") {
  Grid grid(Domain::torus(), 128);
  ScalarField f = mode_field(grid, 0.03);
  double tmax = config::kAdmissibleCM / datum_norms(f).total();
  CHECK_THROWS_AS(hopflax_characteristics(f, 2.5 * tmax), AdmissibilityError);
}

TEST_CASE("gradient conservation along characteristics") {
  const int N = 512;
  Grid grid(Domain::torus(), N);
  double h = 1.0 / N;
  ScalarField f = mode_field(grid, 0.01);
  double t = half_admissible_time(f);
  VectorField g = gradient(f);
  HopfLaxResult res = hopflax_characteristics(f, t);
  double err = 0;
  for (int i = 0; i < N; i += 3) {
    for (int j = 0; j < N; j += 3) {
      Point x = grid.center(i, j);
      TangentVector gv = g.at_cell(i, j);
      Point y = grid.domain().exp(x, t * gv);
      TangentVector carried = sample(*res.gradQ, y);
      err = std::max(err, (carried - gv).norm());
    }
  }
  CHECK(err <= 10 * h);
}

TEST_CASE("Hamilton-Jacobi residual") {
  SECTION("constant datum gives zero residual") {
    Grid grid(Domain::torus(), 64);
    CHECK(hj_residual(constant_field(grid, 2.0), 0.3, 1e-3) < 1e-12);
  }
  SECTION("small residual at N=512 and halving convergence") {
    double eps = 0.01, t = 0.3;
    ScalarField fine = mode_field(Grid(Domain::torus(), 512), eps);
    ScalarField coarse = mode_field(Grid(Domain::torus(), 256), eps);
    double rFine = hj_residual(fine, t, 1e-3);
    double rCoarse = hj_residual(coarse, t, 2e-3);
    CHECK(rFine < 0.02);
    CHECK(rCoarse / rFine >= 1.8);
  }
  SECTION("the 1/2 kinetic factor beats the factor-1 variant fourfold") {
    ScalarField f = mode_field(Grid(Domain::torus(), 512), 0.01);
    double with_half = hj_residual(f, 0.3, 0.01, 0.5);
    double without = hj_residual(f, 0.3, 0.01, 1.0);
    CHECK(with_half <= 0.25 * without);
  }
}

TEST_CASE("strict convexity estimate") {
  Grid grid(Domain::torus(), 256);
  SECTION("identical pair gives zero on both sides") {
    ScalarField f = mode_field(grid, 0.01);
    double t = half_admissible_time(f);
    std::vector<std::pair<Point, Point>> pairs{{{0.3, 0.4}, {0.3, 0.4}}};
    CHECK(std::abs(strict_convexity_gap(f, t, pairs)) < 1e-12);
  }
  SECTION("f = 0 reduces to the identity-map case where C = 2 is exact") {
    ScalarField f = constant_field(grid, 0.0);
    Rng rng(41);
    std::vector<std::pair<Point, Point>> pairs;
    for (int it = 0; it < 200; ++it)
      pairs.push_back({{rng.uniform(), rng.uniform()}, {rng.uniform(), rng.uniform()}});
    CHECK(strict_convexity_gap(f, 0.5, pairs, 2.0) < 1e-10);
  }
  SECTION("no violations with the frozen constant on the test family") {
    for (Domain dom : {Domain::torus(), Domain::square()}) {
      Grid g(dom, 256);
      for (const ScalarField& f : hopflax_test_family(g)) {
        double t = half_admissible_time(f);
        Rng rng(97);
        std::vector<std::pair<Point, Point>> pairs;
        for (int it = 0; it < 1000; ++it)
          pairs.push_back(
              {{rng.uniform(), rng.uniform()}, {rng.uniform(), rng.uniform()}});
        CHECK(strict_convexity_gap(f, t, pairs) <= 2e-4);
      }
    }
  }
}

TEST_CASE("Lipschitz defect of Q_tf - f") {
  SECTION("constant datum") {
    Grid grid(Domain::torus(), 64);
    CHECK(lip_defect(constant_field(grid, 3.0), 0.4) < 1e-11);
  }
  SECTION("single mode stays below the product bound") {
    const int N = 512;
    Grid grid(Domain::torus(), N);
    double eps = 0.01;
    ScalarField f = mode_field(grid, eps);
    double t = half_admissible_time(f);
    double bound = t * (2 * M_PI * eps) * (4 * M_PI * M_PI * eps);
    CHECK(lip_defect(f, t) <= bound + 10.0 / N);
  }
  SECTION("defect scales like O(t)") {
    Grid grid(Domain::torus(), 512);
    ScalarField f = mode_field(grid, 0.01);
    double t = half_admissible_time(f);
    double ratio = lip_defect(f, t) / lip_defect(f, t / 2);
    CHECK(ratio >= 1.7);
    CHECK(ratio <= 2.3);
  }
}

TEST_CASE("c-transform") {
  Grid grid(Domain::torus(), 256);
  SECTION("zero is a fixed point") {
    CHECK(sup_diff(c_transform(constant_field(grid, 0.0)), constant_field(grid, 0.0)) <
          1e-13);
  }
  SECTION("double transform restores a c-concave function") {
    ScalarField chi = mode_field(grid, 0.02);
    auto negate = [&](const ScalarField& f) {
      auto v = f.physical_values();
      for (double& x : v) x = -x;
      return ScalarField::from_physical_values(grid, std::move(v));
    };
    ScalarField psi = c_transform(negate(chi));   // c-concave by construction
    ScalarField back = c_transform(negate(c_transform(negate(psi))));
    CHECK(sup_diff(back, psi) < 2.0 / (256.0 * 256.0));
  }
  SECTION("order reversal is monotone") {
    ScalarField f = mode_field(grid, 0.01);
    auto shifted = f.physical_values();
    for (double& v : shifted) v += 0.05;
    ScalarField g = ScalarField::from_physical_values(grid, std::move(shifted));
    auto qf = c_transform(f).physical_values();
    auto qg = c_transform(g).physical_values();
    for (size_t s = 0; s < qf.size(); s += 101) CHECK(qf[s] <= qg[s] + 1e-12);
  }
}

TEST_CASE("semigroup property within grid error") {
  Grid grid(Domain::torus(), 256);
  double h = 1.0 / 256;
  ScalarField f = mode_field(grid, 0.01);
  double s = 0.2, t = 0.3;
  ScalarField direct = hopflax_grid(f, s + t).Qf;
  ScalarField nested = hopflax_grid(hopflax_grid(f, t).Qf, s).Qf;
  CHECK(sup_diff(direct, nested) <= 3 * h);
}

TEST_CASE("grid method is a sup-norm contraction") {
  Grid grid(Domain::torus(), 128);
  ScalarField f = mode_field(grid, 0.02);
  ScalarField g = hopflax_test_family(grid)[5];
  double dist = sup_diff(f, g);
  CHECK(sup_diff(hopflax_grid(f, 0.4).Qf, hopflax_grid(g, 0.4).Qf) <= dist + 1e-12);
}

TEST_CASE("forward and inverse characteristics are bi-Lipschitz") {
  const int N = 256;
  double h = 1.0 / N;
  for (Domain dom : {Domain::torus(), Domain::square()}) {
    Grid grid(dom, N);
    ScalarField f = mode_field(grid, 0.02);
    double t = half_admissible_time(f);
    VectorField g = gradient(f);
    HopfLaxResult res = hopflax_characteristics(f, t);
    double lo = 0.5 - 10 * h, hi = 2.0 + 10 * h;
    for (int i = 0; i < N - 1; i += 5) {
      for (int j = 0; j < N - 1; j += 5) {
        Point x = grid.center(i, j), xr = grid.center(i + 1, j);
        Point yx = dom.exp(x, t * g.at_cell(i, j));
        Point yr = dom.exp(xr, t * g.at_cell(i + 1, j));
        double fwd = dom.dist(yx, yr) / dom.dist(x, xr);
        CHECK(fwd >= lo);
        CHECK(fwd <= hi);
        Point ix = res.argmin[static_cast<size_t>(i) * N + j];
        Point ir = res.argmin[static_cast<size_t>(i) * N + j + 1];
        double inv = dom.dist(ix, ir) / dom.dist(grid.center(i, j), grid.center(i, j + 1));
        CHECK(inv >= lo);
        CHECK(inv <= hi);
      }
    }
  }
}

TEST_CASE("Q_tf lies below f and is nonincreasing in t") {
  Grid grid(Domain::square(), 128);
  ScalarField f = hopflax_test_family(grid)[7];
  auto fv = f.physical_values();
  auto q1 = hopflax_grid(f, 0.2).Qf.physical_values();
  auto q2 = hopflax_grid(f, 0.6).Qf.physical_values();
  for (size_t s = 0; s < fv.size(); s += 37) {
    CHECK(q1[s] <= fv[s] + 1e-13);
    CHECK(q2[s] <= q1[s] + 1e-13);
  }
}

TEST_CASE("frozen admissibility budget is half the measured breakdown") {
  for (Domain dom : {Domain::torus(), Domain::square()}) {
    Grid grid(dom, 256);
    double worst = std::numeric_limits<double>::infinity();
    for (const ScalarField& f : hopflax_test_family(grid))
      worst = std::min(worst, injectivity_breakdown(f));
    INFO("family breakdown tau = " << worst);
    CHECK(config::kAdmissibleCM <= 0.5 * worst);
  }
}
