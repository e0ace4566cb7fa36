#pragma once

// Flat square torus [0,L)^2 sampled on an n x n grid, real fields on it, and
// the spectral calculus used everywhere else: Laplacian, gradients, inverse
// shifted Laplacians, trapezoid quadrature and periodic geodesic balls.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meanflow/error.hpp"
#include "meanflow/fft.hpp"

namespace meanflow {

inline constexpr double kPi = std::numbers::pi;

/// Geometry of the sampled torus. Cheap value type; two grids are compatible
/// iff n and side length match exactly.
class TorusGrid {
public:
  TorusGrid(int n, double side_length) : n_(n), side_(side_length) {
    if (n < 8 || n % 2 != 0) {
      throw ParameterError("grid size must be even and >= 8, got " + std::to_string(n));
    }
    if (!(side_length > 0.0) || !std::isfinite(side_length)) {
      throw ParameterError("side length must be positive and finite");
    }
    spacing_ = side_ / n_;
    cell_area_ = spacing_ * spacing_;
  }

  [[nodiscard]] int n() const noexcept { return n_; }
  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(n_) * n_; }
  [[nodiscard]] double side_length() const noexcept { return side_; }
  [[nodiscard]] double spacing() const noexcept { return spacing_; }
  [[nodiscard]] double cell_area() const noexcept { return cell_area_; }
  [[nodiscard]] double area() const noexcept { return side_ * side_; }

  [[nodiscard]] std::size_t index(int i, int j) const noexcept {
    return static_cast<std::size_t>(i) * n_ + static_cast<std::size_t>(j);
  }
  [[nodiscard]] double coord(int i) const noexcept { return i * spacing_; }

  /// Signed integer frequency of FFT index `i` along the full axis.
  [[nodiscard]] int frequency(int i) const noexcept { return i <= n_ / 2 ? i : i - n_; }
  [[nodiscard]] double wavenumber(int m) const noexcept { return 2.0 * kPi * m / side_; }

  friend bool operator==(const TorusGrid& a, const TorusGrid& b) noexcept {
    return a.n_ == b.n_ && a.side_ == b.side_;
  }

private:
  int n_;
  double side_;
  double spacing_ = 0.0;
  double cell_area_ = 0.0;
};

/// Point on the torus, coordinates reduced into [0, L).
struct Point {
  double x = 0.0;
  double y = 0.0;

  static Point on(const TorusGrid& grid, double x, double y) {
    const double L = grid.side_length();
    auto wrap = [L](double c) {
      double r = std::fmod(c, L);
      if (r < 0.0) r += L;
      return r >= L ? 0.0 : r;
    };
    return {wrap(x), wrap(y)};
  }
};

/// Minimum-image displacement b - a along one axis.
[[nodiscard]] inline double min_image(double d, double L) noexcept {
  d = std::fmod(d, L);
  if (d > 0.5 * L) d -= L;
  if (d < -0.5 * L) d += L;
  return d;
}

[[nodiscard]] inline double periodic_distance(const TorusGrid& grid, const Point& a, const Point& b) {
  const double L = grid.side_length();
  return std::hypot(min_image(b.x - a.x, L), min_image(b.y - a.y, L));
}

/// Real samples on a TorusGrid, row-major, value (i,j) at (i*h, j*h).
/// Every Field holds finite values only.
class Field {
public:
  explicit Field(const TorusGrid& grid, double value = 0.0)
      : grid_(grid), values_(grid.size(), value) {
    check_finite();
  }
  Field(const TorusGrid& grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
      throw ParameterError("field size does not match grid");
    }
    check_finite();
  }

  /// Samples f(x, y) at every grid point.
  template <class F>
  static Field sample(const TorusGrid& grid, F&& f) {
    std::vector<double> v(grid.size());
    for (int i = 0; i < grid.n(); ++i) {
      for (int j = 0; j < grid.n(); ++j) {
        v[grid.index(i, j)] = f(grid.coord(i), grid.coord(j));
      }
    }
    return Field(grid, std::move(v));
  }

  [[nodiscard]] const TorusGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t k) const noexcept { return values_[k]; }
  [[nodiscard]] double at(int i, int j) const noexcept { return values_[grid_.index(i, j)]; }

  [[nodiscard]] double max() const { return *std::max_element(values_.begin(), values_.end()); }
  [[nodiscard]] double min() const { return *std::min_element(values_.begin(), values_.end()); }
  [[nodiscard]] std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(values_.begin(), values_.end()) - values_.begin());
  }
  [[nodiscard]] double sup_norm() const {
    double m = 0.0;
    for (double x : values_) m = std::max(m, std::abs(x));
    return m;
  }
  [[nodiscard]] double mean() const {
    double s = 0.0;
    for (double x : values_) s += x;
    return s / static_cast<double>(values_.size());
  }

  /// Pointwise map; the result must again be finite.
  template <class F>
  [[nodiscard]] Field map(F&& f) const {
    std::vector<double> out(values_.size());
    std::transform(values_.begin(), values_.end(), out.begin(), std::forward<F>(f));
    return Field(grid_, std::move(out));
  }

  template <class F>
  [[nodiscard]] Field zip(const Field& other, F&& f) const {
    require_same_grid(other);
    std::vector<double> out(values_.size());
    std::transform(values_.begin(), values_.end(), other.values_.begin(), out.begin(),
                   std::forward<F>(f));
    return Field(grid_, std::move(out));
  }

  void require_same_grid(const Field& other) const {
    if (!(grid_ == other.grid_)) {
      throw ParameterError("fields live on different grids");
    }
  }

  friend Field operator+(const Field& a, const Field& b) { return a.zip(b, std::plus<>{}); }
  friend Field operator-(const Field& a, const Field& b) { return a.zip(b, std::minus<>{}); }
  friend Field operator*(const Field& a, const Field& b) { return a.zip(b, std::multiplies<>{}); }
  friend Field operator+(const Field& a, double c) { return a.map([c](double x) { return x + c; }); }
  friend Field operator-(const Field& a, double c) { return a.map([c](double x) { return x - c; }); }
  friend Field operator*(double c, const Field& a) { return a.map([c](double x) { return c * x; }); }

private:
  void check_finite() const {
    for (double x : values_) {
      if (!std::isfinite(x)) {
        throw DataError("field contains non-finite samples");
      }
    }
  }

  TorusGrid grid_;
  std::vector<double> values_;
};

[[nodiscard]] inline double max_abs_difference(const Field& a, const Field& b) {
  a.require_same_grid(b);
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

// ---------------------------------------------------------------------------
// Spectral operators
// ---------------------------------------------------------------------------

namespace detail {

/// Multiplies the spectrum of `in` by symbol(kx, ky, nyquist_x, nyquist_y) and
/// transforms back. Works on raw spans so Krylov loops avoid Field overhead.
template <class Symbol>
void apply_symbol(const TorusGrid& grid, std::span<const double> in, std::span<double> out,
                  Symbol&& symbol) {
  const int n = grid.n();
  const auto& plan = SpectralPlan::get(n);
  std::vector<std::complex<double>> spec(plan.spectral_size());
  plan.forward(in, spec);
  const int half = n / 2 + 1;
  const double scale = 1.0 / (static_cast<double>(n) * n);
  for (int i = 0; i < n; ++i) {
    const int mx = grid.frequency(i);
    const double kx = grid.wavenumber(mx);
    const bool nyq_x = (i == n / 2);
    for (int j = 0; j < half; ++j) {
      const double ky = grid.wavenumber(j);
      const bool nyq_y = (j == n / 2);
      spec[static_cast<std::size_t>(i) * half + j] *= symbol(kx, ky, nyq_x, nyq_y) * scale;
    }
  }
  plan.backward(spec, out);
}

template <class Symbol>
Field apply_symbol(const Field& f, Symbol&& symbol) {
  std::vector<double> out(f.size());
  apply_symbol(f.grid(), f.values(), std::span<double>(out), std::forward<Symbol>(symbol));
  return Field(f.grid(), std::move(out));
}

inline void laplacian(const TorusGrid& grid, std::span<const double> in, std::span<double> out) {
  apply_symbol(grid, in, out, [](double kx, double ky, bool, bool) {
    return std::complex<double>(-(kx * kx + ky * ky), 0.0);
  });
}

/// out = (shift - scale * Laplacian)^{-1} in. The zero mode is dropped when
/// shift == 0 (inverse Laplacian on mean-zero data).
inline void shifted_inverse_laplacian(const TorusGrid& grid, double shift, double scale,
                                      std::span<const double> in, std::span<double> out) {
  apply_symbol(grid, in, out, [shift, scale](double kx, double ky, bool, bool) {
    const double d = shift + scale * (kx * kx + ky * ky);
    return std::complex<double>(d == 0.0 ? 0.0 : 1.0 / d, 0.0);
  });
}

}  // namespace detail

/// Spectral Laplacian. The Nyquist mode is kept.
[[nodiscard]] inline Field laplacian(const Field& f) {
  return detail::apply_symbol(f, [](double kx, double ky, bool, bool) {
    return std::complex<double>(-(kx * kx + ky * ky), 0.0);
  });
}

/// Spectral first derivatives with the Nyquist mode zeroed.
[[nodiscard]] inline Field derivative_x(const Field& f) {
  return detail::apply_symbol(f, [](double kx, double, bool nyq_x, bool) {
    return std::complex<double>(0.0, nyq_x ? 0.0 : kx);
  });
}

[[nodiscard]] inline Field derivative_y(const Field& f) {
  return detail::apply_symbol(f, [](double, double ky, bool, bool nyq_y) {
    return std::complex<double>(0.0, nyq_y ? 0.0 : ky);
  });
}

[[nodiscard]] inline Field derivative_xy(const Field& f) {
  return detail::apply_symbol(f, [](double kx, double ky, bool nyq_x, bool nyq_y) {
    return std::complex<double>((nyq_x || nyq_y) ? 0.0 : -kx * ky, 0.0);
  });
}

/// |grad f|^2 pointwise.
[[nodiscard]] inline Field grad_sq(const Field& f) {
  const Field fx = derivative_x(f);
  const Field fy = derivative_y(f);
  return fx.zip(fy, [](double a, double b) { return a * a + b * b; });
}

/// grad f . grad g pointwise.
[[nodiscard]] inline Field grad_dot(const Field& f, const Field& g) {
  return derivative_x(f) * derivative_x(g) + derivative_y(f) * derivative_y(g);
}

/// (shift - scale * Laplacian)^{-1} f.
[[nodiscard]] inline Field solve_shifted_laplacian(const Field& f, double shift, double scale = 1.0) {
  std::vector<double> out(f.size());
  detail::shifted_inverse_laplacian(f.grid(), shift, scale, f.values(), out);
  return Field(f.grid(), std::move(out));
}

/// Trapezoid rule on the torus: cell_area * sum of samples.
[[nodiscard]] inline double integrate(const Field& f) {
  double s = 0.0;
  for (double x : f.values()) s += x;
  return f.grid().cell_area() * s;
}

[[nodiscard]] inline double inner(const Field& f, const Field& g) {
  f.require_same_grid(g);
  double s = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) s += f[k] * g[k];
  return f.grid().cell_area() * s;
}

/// L2(dV) norm.
[[nodiscard]] inline double l2_norm(const Field& f) { return std::sqrt(inner(f, f)); }

// ---------------------------------------------------------------------------
// Geodesic balls
// ---------------------------------------------------------------------------

namespace detail {

inline void check_radius(const TorusGrid& grid, double radius) {
  if (!(radius > 0.0) || radius > 0.5 * grid.side_length()) {
    throw ParameterError("ball radius must lie in (0, L/2], got " + std::to_string(radius));
  }
}

/// Calls visit(k) for every sample index whose periodic distance to `center`
/// is at most `radius`. Each sample is visited at most once.
template <class Visit>
void for_each_in_ball(const TorusGrid& grid, const Point& center, double radius, Visit&& visit) {
  const int n = grid.n();
  const double h = grid.spacing();
  const double L = grid.side_length();
  const double r2 = radius * radius;
  const int reach = static_cast<int>(std::ceil(radius / h)) + 1;
  if (2 * reach + 1 >= n) {
    for (int i = 0; i < n; ++i) {
      const double dx = min_image(grid.coord(i) - center.x, L);
      for (int j = 0; j < n; ++j) {
        const double dy = min_image(grid.coord(j) - center.y, L);
        if (dx * dx + dy * dy <= r2) visit(grid.index(i, j));
      }
    }
    return;
  }
  const int ci = static_cast<int>(std::lround(center.x / h));
  const int cj = static_cast<int>(std::lround(center.y / h));
  for (int di = -reach; di <= reach; ++di) {
    const int i = ((ci + di) % n + n) % n;
    const double dx = min_image(grid.coord(i) - center.x, L);
    if (dx * dx > r2) continue;
    for (int dj = -reach; dj <= reach; ++dj) {
      const int j = ((cj + dj) % n + n) % n;
      const double dy = min_image(grid.coord(j) - center.y, L);
      if (dx * dx + dy * dy <= r2) visit(grid.index(i, j));
    }
  }
}

}  // namespace detail

/// Integral of f over the periodic disk B_radius(center); membership decided
/// by sample-center distance.
[[nodiscard]] inline double ball_mass(const Field& f, const Point& center, double radius) {
  detail::check_radius(f.grid(), radius);
  double s = 0.0;
  const auto vals = f.values();
  detail::for_each_in_ball(f.grid(), center, radius, [&](std::size_t k) { s += vals[k]; });
  return f.grid().cell_area() * s;
}

/// ball_mass(f, x_ij, radius) for every grid point x_ij at once (periodic
/// convolution with the disk indicator).
[[nodiscard]] inline Field ball_mass_map(const Field& f, double radius) {
  const TorusGrid& grid = f.grid();
  detail::check_radius(grid, radius);
  const int n = grid.n();
  std::vector<double> disk(grid.size(), 0.0);
  detail::for_each_in_ball(grid, Point{0.0, 0.0}, radius, [&](std::size_t k) { disk[k] = 1.0; });

  const auto& plan = detail::SpectralPlan::get(n);
  std::vector<std::complex<double>> fs(plan.spectral_size());
  std::vector<std::complex<double>> ds(plan.spectral_size());
  plan.forward(f.values(), fs);
  plan.forward(disk, ds);
  const double scale = grid.cell_area() / (static_cast<double>(n) * n);
  for (std::size_t k = 0; k < fs.size(); ++k) {
    // The disk is symmetric, so correlation and convolution coincide.
    fs[k] *= ds[k] * scale;
  }
  std::vector<double> out(grid.size());
  plan.backward(fs, out);
  return Field(grid, std::move(out));
}

/// Grid point nearest to `index`.
[[nodiscard]] inline Point grid_point(const TorusGrid& grid, std::size_t index) {
  const int i = static_cast<int>(index / static_cast<std::size_t>(grid.n()));
  const int j = static_cast<int>(index % static_cast<std::size_t>(grid.n()));
  return Point{grid.coord(i), grid.coord(j)};
}

}  // namespace meanflow
