// Grid-sampled scalar/vector fields with spectral representations.
//
// Torus fields live on an N x N Fourier grid. Square fields with null Neumann
// boundary conditions are stored as their even reflection on a 2N x 2N torus of
// period 2, which makes every operator (heat, Poisson, derivatives) a diagonal
// spectral multiplier in one unified code path. Sample positions are the cell
// centers (i+1/2)/N in both cases.
#pragma once

#include <fftw3.h>

#include <complex>
#include <functional>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "otlab/geometry.hpp"

namespace otlab {

class ResolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Process-wide FFTW plan cache. Plan creation is serialized; execution on
// caller-owned buffers is thread-safe.
class FftEngine {
 public:
  static void dft2d(std::vector<std::complex<double>>& data, int m, int sign) {
    fftw_plan plan = instance().plan_for(m, sign);
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(data.data()),
                     reinterpret_cast<fftw_complex*>(data.data()));
  }

 private:
  static FftEngine& instance() {
    static FftEngine engine;
    return engine;
  }

  fftw_plan plan_for(int m, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = (static_cast<long long>(m) << 2) | (sign == FFTW_FORWARD ? 0 : 1);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<std::complex<double>> scratch(static_cast<size_t>(m) * m);
    fftw_plan plan = fftw_plan_dft_2d(
        m, m, reinterpret_cast<fftw_complex*>(scratch.data()),
        reinterpret_cast<fftw_complex*>(scratch.data()), sign,
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

  std::mutex mutex_;
  std::unordered_map<long long, fftw_plan> plans_;
};

inline int signed_freq(int k, int m) { return (k < m / 2) ? k : k - m; }

// Catmull-Rom weights for fractional offset t in [0,1).
inline void catmull_rom_weights(double t, double w[4]) {
  double t2 = t * t, t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2 * t2 - t);
  w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
  w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

}  // namespace detail

// Shared spectral layout for a (grid, representation) pair.
struct SpectralLayout {
  int rep_m;          // representation grid size per axis (N or 2N)
  double base_omega;  // wavenumber of mode k: omega = base_omega * k

  static SpectralLayout of(const Grid& grid) {
    if (grid.domain().is_torus())
      return {grid.resolution(), 2.0 * M_PI};
    return {2 * grid.resolution(), M_PI};  // period-2 mirrored torus
  }
};

class ScalarField;
ScalarField inverse_transform(const std::vector<std::complex<double>>& coeffs,
                              const Grid& grid);

class ScalarField {
 public:
  // Evaluates fn at physical cell centers; mirrors to the representation grid
  // on the square.
  static ScalarField from_function(const Grid& grid,
                                   const std::function<double(Point)>& fn) {
    const int n = grid.resolution();
    std::vector<double> vals(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) vals[grid.index(i, j)] = fn(grid.center(i, j));
    return from_physical_values(grid, std::move(vals));
  }

  static ScalarField from_physical_values(const Grid& grid,
                                          std::vector<double> vals) {
    if (static_cast<int>(vals.size()) != grid.size())
      throw std::invalid_argument("value array does not match grid");
    ScalarField f(grid);
    const int n = grid.resolution();
    const int m = f.layout_.rep_m;
    f.rep_.resize(static_cast<size_t>(m) * m);
    for (int bi = 0; bi < m; ++bi) {
      int i = (bi < n) ? bi : 2 * n - 1 - bi;
      for (int bj = 0; bj < m; ++bj) {
        int j = (bj < n) ? bj : 2 * n - 1 - bj;
        f.rep_[static_cast<size_t>(bi) * m + bj] = vals[static_cast<size_t>(i) * n + j];
      }
    }
    f.compute_spectrum();
    return f;
  }

  // coeffs indexed k1*m + k2 in FFT order; true Fourier coefficients of
  // f(x) = sum_k c_k exp(i omega_k . x) on the representation torus.
  static ScalarField from_spectral(const Grid& grid,
                                   std::vector<std::complex<double>> coeffs) {
    ScalarField f(grid);
    const int m = f.layout_.rep_m;
    if (static_cast<int>(coeffs.size()) != m * m)
      throw std::invalid_argument("spectral array does not match grid");
    f.spec_ = std::move(coeffs);
    f.compute_values();
    return f;
  }

  const Grid& grid() const { return grid_; }
  const SpectralLayout& layout() const { return layout_; }
  const std::vector<double>& rep_values() const { return rep_; }
  const std::vector<std::complex<double>>& spectrum() const { return spec_; }

  int rep_m() const { return layout_.rep_m; }

  double value_at_cell(int i, int j) const {
    return rep_[static_cast<size_t>(i) * layout_.rep_m + j];
  }

  std::vector<double> physical_values() const {
    const int n = grid_.resolution();
    std::vector<double> out(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out[grid_.index(i, j)] = value_at_cell(i, j);
    return out;
  }

  double mean() const { return spec_[0].real(); }

  double max_value() const {
    double v = rep_[0];
    for (double x : rep_) v = std::max(v, x);
    return v;
  }
  double min_value() const {
    double v = rep_[0];
    for (double x : rep_) v = std::min(v, x);
    return v;
  }

  double omega(int k) const {
    return layout_.base_omega * detail::signed_freq(k, layout_.rep_m);
  }

  // Returns a field with coefficients multiplier(k1_signed, k2_signed) * c_k.
  ScalarField apply_multiplier(
      const std::function<std::complex<double>(double, double)>& multiplier) const {
    const int m = layout_.rep_m;
    std::vector<std::complex<double>> out(spec_);
    for (int k1 = 0; k1 < m; ++k1) {
      double w1 = omega(k1);
      for (int k2 = 0; k2 < m; ++k2) {
        out[static_cast<size_t>(k1) * m + k2] *= multiplier(w1, omega(k2));
      }
    }
    return from_spectral(grid_, std::move(out));
  }

  friend ScalarField inverse_transform(
      const std::vector<std::complex<double>>& coeffs, const Grid& grid);

 private:
  explicit ScalarField(const Grid& grid)
      : grid_(grid), layout_(SpectralLayout::of(grid)) {}

  void compute_spectrum() {
    const int m = layout_.rep_m;
    std::vector<std::complex<double>> buf(rep_.begin(), rep_.end());
    detail::FftEngine::dft2d(buf, m, FFTW_FORWARD);
    const double inv = 1.0 / (static_cast<double>(m) * m);
    for (int k1 = 0; k1 < m; ++k1) {
      int kk1 = detail::signed_freq(k1, m);
      for (int k2 = 0; k2 < m; ++k2) {
        int kk2 = detail::signed_freq(k2, m);
        // half-cell shift: samples sit at (j+1/2), not j
        double phase = -M_PI * (kk1 + kk2) / m;
        buf[static_cast<size_t>(k1) * m + k2] *=
            inv * std::complex<double>(std::cos(phase), std::sin(phase));
      }
    }
    spec_ = std::move(buf);
  }

  void compute_values() {
    const int m = layout_.rep_m;
    std::vector<std::complex<double>> buf(spec_);
    for (int k1 = 0; k1 < m; ++k1) {
      int kk1 = detail::signed_freq(k1, m);
      for (int k2 = 0; k2 < m; ++k2) {
        int kk2 = detail::signed_freq(k2, m);
        double phase = M_PI * (kk1 + kk2) / m;
        buf[static_cast<size_t>(k1) * m + k2] *=
            std::complex<double>(std::cos(phase), std::sin(phase));
      }
    }
    detail::FftEngine::dft2d(buf, m, FFTW_BACKWARD);
    rep_.resize(buf.size());
    for (size_t s = 0; s < buf.size(); ++s) rep_[s] = buf[s].real();
  }

  Grid grid_;
  SpectralLayout layout_;
  std::vector<double> rep_;                 // rep_m x rep_m values
  std::vector<std::complex<double>> spec_;  // matching Fourier coefficients
};

// Vector fields store per-component values on the representation grid, so that
// reflected sampling on the square (odd normal component) comes out right.
class VectorField {
 public:
  VectorField(const Grid& grid, std::vector<double> c1, std::vector<double> c2)
      : grid_(grid), layout_(SpectralLayout::of(grid)), c1_(std::move(c1)),
        c2_(std::move(c2)) {
    size_t expect = static_cast<size_t>(layout_.rep_m) * layout_.rep_m;
    if (c1_.size() != expect || c2_.size() != expect)
      throw std::invalid_argument("component array does not match grid");
  }

  const Grid& grid() const { return grid_; }
  int rep_m() const { return layout_.rep_m; }
  const std::vector<double>& comp1() const { return c1_; }
  const std::vector<double>& comp2() const { return c2_; }

  TangentVector at_cell(int i, int j) const {
    size_t s = static_cast<size_t>(i) * layout_.rep_m + j;
    return {c1_[s], c2_[s]};
  }

  double sup_norm() const {
    double v = 0;
    for (size_t s = 0; s < c1_.size(); ++s)
      v = std::max(v, c1_[s] * c1_[s] + c2_[s] * c2_[s]);
    return std::sqrt(v);
  }

 private:
  Grid grid_;
  SpectralLayout layout_;
  std::vector<double> c1_, c2_;
};

inline std::vector<std::complex<double>> transform(const ScalarField& f) {
  return f.spectrum();
}

inline ScalarField inverse_transform(
    const std::vector<std::complex<double>>& coeffs, const Grid& grid) {
  return ScalarField::from_spectral(grid, coeffs);
}

namespace detail {

// Mirror physical vector components onto the representation grid; on the
// square the reflected normal component flips sign (odd extension).
inline VectorField vector_field_from_physical(const Grid& grid,
                                              const std::vector<double>& c1,
                                              const std::vector<double>& c2) {
  const int n = grid.resolution();
  SpectralLayout layout = SpectralLayout::of(grid);
  const int m = layout.rep_m;
  std::vector<double> r1(static_cast<size_t>(m) * m), r2(r1.size());
  for (int bi = 0; bi < m; ++bi) {
    int i = (bi < n) ? bi : 2 * n - 1 - bi;
    double s1 = (bi < n) ? 1.0 : -1.0;
    for (int bj = 0; bj < m; ++bj) {
      int j = (bj < n) ? bj : 2 * n - 1 - bj;
      double s2 = (bj < n) ? 1.0 : -1.0;
      size_t src = static_cast<size_t>(i) * n + j;
      size_t dst = static_cast<size_t>(bi) * m + bj;
      r1[dst] = s1 * c1[src];
      r2[dst] = s2 * c2[src];
    }
  }
  return VectorField(grid, std::move(r1), std::move(r2));
}

inline std::vector<double> multiplier_values(
    const ScalarField& f,
    const std::function<std::complex<double>(double, double)>& mult) {
  return f.apply_multiplier(mult).rep_values();
}

}  // namespace detail

inline VectorField gradient(const ScalarField& f) {
  const int m = f.rep_m();
  auto first_deriv = [m, &f](int axis) {
    return f.apply_multiplier([axis, m, &f](double w1, double w2) {
      double w = (axis == 0) ? w1 : w2;
      // Nyquist line has no well-defined odd multiplier; band-limited data
      // never populates it.
      double nyq = f.layout().base_omega * (m / 2);
      if (w == -nyq) return std::complex<double>(0, 0);
      return std::complex<double>(0, w);
    });
  };
  return VectorField(f.grid(), first_deriv(0).rep_values(),
                     first_deriv(1).rep_values());
}

inline ScalarField laplacian(const ScalarField& f) {
  return f.apply_multiplier([](double w1, double w2) {
    return std::complex<double>(-(w1 * w1 + w2 * w2), 0);
  });
}

// Max over grid nodes of the operator norm of the spectral Hessian.
inline double hessian_sup_norm(const ScalarField& f) {
  const int m = f.rep_m();
  double nyq = f.layout().base_omega * (m / 2);
  auto fxx = detail::multiplier_values(f, [](double w1, double) {
    return std::complex<double>(-w1 * w1, 0);
  });
  auto fyy = detail::multiplier_values(f, [](double, double w2) {
    return std::complex<double>(-w2 * w2, 0);
  });
  auto fxy = detail::multiplier_values(f, [nyq](double w1, double w2) {
    if (w1 == -nyq || w2 == -nyq) return std::complex<double>(0, 0);
    return std::complex<double>(-w1 * w2, 0);
  });
  double best = 0;
  for (size_t s = 0; s < fxx.size(); ++s) {
    double half_tr = 0.5 * (fxx[s] + fyy[s]);
    double half_diff = 0.5 * (fxx[s] - fyy[s]);
    double r = std::sqrt(half_diff * half_diff + fxy[s] * fxy[s]);
    best = std::max(best, std::abs(half_tr) + r);
  }
  return best;
}

inline double dirichlet_energy(const ScalarField& f) {
  const int m = f.rep_m();
  const auto& c = f.spectrum();
  double total = 0;
  for (int k1 = 0; k1 < m; ++k1) {
    double w1 = f.omega(k1);
    for (int k2 = 0; k2 < m; ++k2) {
      double w2 = f.omega(k2);
      total += std::norm(c[static_cast<size_t>(k1) * m + k2]) * (w1 * w1 + w2 * w2);
    }
  }
  return total;
}

// Bicubic (Catmull-Rom) interpolation, periodic on the representation grid.
// On the square the mirrored representation makes this reflected interpolation.
inline double sample(const ScalarField& f, Point p) {
  const int m = f.rep_m();
  const auto& rep = f.rep_values();
  const double scale = f.grid().resolution();  // samples at (i+1/2)/N in [0, L)
  double u = p.x1 * scale - 0.5;
  double v = p.x2 * scale - 0.5;
  int i0 = static_cast<int>(std::floor(u));
  int j0 = static_cast<int>(std::floor(v));
  double tu = u - i0, tv = v - j0;
  double wu[4], wv[4];
  detail::catmull_rom_weights(tu, wu);
  detail::catmull_rom_weights(tv, wv);
  double acc = 0;
  for (int a = 0; a < 4; ++a) {
    int i = ((i0 - 1 + a) % m + m) % m;
    double row = 0;
    const double* base = rep.data() + static_cast<size_t>(i) * m;
    for (int b = 0; b < 4; ++b) {
      int j = ((j0 - 1 + b) % m + m) % m;
      row += wv[b] * base[j];
    }
    acc += wu[a] * row;
  }
  return acc;
}

inline TangentVector sample(const VectorField& g, Point p) {
  const int m = g.rep_m();
  const double scale = g.grid().resolution();
  double u = p.x1 * scale - 0.5;
  double v = p.x2 * scale - 0.5;
  int i0 = static_cast<int>(std::floor(u));
  int j0 = static_cast<int>(std::floor(v));
  double wu[4], wv[4];
  detail::catmull_rom_weights(u - i0, wu);
  detail::catmull_rom_weights(v - j0, wv);
  double a1 = 0, a2 = 0;
  for (int a = 0; a < 4; ++a) {
    int i = ((i0 - 1 + a) % m + m) % m;
    const double* b1 = g.comp1().data() + static_cast<size_t>(i) * m;
    const double* b2 = g.comp2().data() + static_cast<size_t>(i) * m;
    double r1 = 0, r2 = 0;
    for (int b = 0; b < 4; ++b) {
      int j = ((j0 - 1 + b) % m + m) % m;
      r1 += wv[b] * b1[j];
      r2 += wv[b] * b2[j];
    }
    a1 += wu[a] * r1;
    a2 += wu[a] * r2;
  }
  return {a1, a2};
}

// Grid quadrature of f against m (the physical domain, via mirror symmetry).
inline double quadrature(const ScalarField& f) {
  double total = 0;
  for (double v : f.rep_values()) total += v;
  return total / f.rep_values().size();
}

}  // namespace otlab
