#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "meanflow/grid.hpp"

namespace meanflow {

/// Periodic bicubic Hermite interpolant of a field. Corner derivatives come
/// from the spectral operators, so the interpolant is C^1 and O(h^4) accurate
/// for smooth data.
class BicubicInterpolator {
public:
  explicit BicubicInterpolator(const Field& f)
      : grid_(f.grid()),
        f_(f.values().begin(), f.values().end()),
        fx_(to_vector(derivative_x(f))),
        fy_(to_vector(derivative_y(f))),
        fxy_(to_vector(derivative_xy(f))) {}

  [[nodiscard]] double operator()(double x, double y) const {
    const int n = grid_.n();
    const double h = grid_.spacing();
    const Point p = Point::on(grid_, x, y);
    const double sx = p.x / h;
    const double sy = p.y / h;
    int i0 = static_cast<int>(std::floor(sx));
    int j0 = static_cast<int>(std::floor(sy));
    const double t = sx - i0;
    const double u = sy - j0;
    i0 %= n;
    j0 %= n;
    const int i1 = (i0 + 1) % n;
    const int j1 = (j0 + 1) % n;

    const std::array<double, 2> vt{h00(t), h01(t)};
    const std::array<double, 2> dt{h * h10(t), h * h11(t)};
    const std::array<double, 2> vu{h00(u), h01(u)};
    const std::array<double, 2> du{h * h10(u), h * h11(u)};
    const std::array<int, 2> is{i0, i1};
    const std::array<int, 2> js{j0, j1};

    double s = 0.0;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        const std::size_t k = grid_.index(is[a], js[b]);
        s += vt[a] * vu[b] * f_[k] + dt[a] * vu[b] * fx_[k] + vt[a] * du[b] * fy_[k] +
             dt[a] * du[b] * fxy_[k];
      }
    }
    return s;
  }

private:
  static std::vector<double> to_vector(const Field& f) { return {f.values().begin(), f.values().end()}; }
  static double h00(double t) { return (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t); }
  static double h01(double t) { return t * t * (3.0 - 2.0 * t); }
  static double h10(double t) { return t * (1.0 - t) * (1.0 - t); }
  static double h11(double t) { return t * t * (t - 1.0); }

  TorusGrid grid_;
  std::vector<double> f_, fx_, fy_, fxy_;
};

/// Blow-up rescaling: samples f(center + r*xi) + 2 log r on an m x m uniform
/// xi-window [-window_radius, window_radius]^2. Row-major, first index along x.
[[nodiscard]] inline std::vector<double> rescale_sample(const Field& f, const Point& center, double r,
                                                        double window_radius, int m) {
  const double L = f.grid().side_length();
  if (!(r > 0.0) || !(window_radius > 0.0)) {
    throw ParameterError("rescale_sample: r and window_radius must be positive");
  }
  if (r * window_radius > 0.5 * L) {
    throw ParameterError("rescale_sample: window exceeds half the torus period");
  }
  if (m < 2) {
    throw ParameterError("rescale_sample: need at least 2 samples per axis");
  }
  const BicubicInterpolator interp(f);
  const double shift = 2.0 * std::log(r);
  const double step = 2.0 * window_radius / (m - 1);
  std::vector<double> out(static_cast<std::size_t>(m) * m);
  for (int a = 0; a < m; ++a) {
    const double xi = -window_radius + a * step;
    for (int b = 0; b < m; ++b) {
      const double eta = -window_radius + b * step;
      out[static_cast<std::size_t>(a) * m + b] = interp(center.x + r * xi, center.y + r * eta) + shift;
    }
  }
  return out;
}

}  // namespace meanflow
