#pragma once

// Variational quantities of the mean-field-type problem
//   -Lap v + Q = rho e^v / int e^v,      int Q = rho,
// and of its gradient flow: the energy J, the functional I of the equivalent
// mean field equation, the conserved volume, the dissipation rate, and the
// Jensen / Moser-Trudinger monitors.

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "meanflow/grid.hpp"

namespace meanflow {

/// e^v is refused above this exponent.
inline constexpr double kOverflowCeiling = 700.0;

/// rho, Q and the optional positive weight f of the equivalent mean field
/// equation. Construction shifts Q by a constant so that int Q = rho.
class ProblemData {
public:
  ProblemData(double rho, Field q, std::optional<Field> f_weight = std::nullopt)
      : rho_(rho), q_(normalize(rho, std::move(q))), f_(std::move(f_weight)) {
    if (!std::isfinite(rho)) throw ParameterError("rho must be finite");
    if (f_) {
      q_.require_same_grid(*f_);
      if (f_->min() <= 0.0) throw ParameterError("f weight must be strictly positive");
    }
  }

  /// Q = rho / |M| (the constant-curvature case).
  static ProblemData constant(const TorusGrid& grid, double rho) {
    return ProblemData(rho, Field(grid, rho / grid.area()));
  }

  [[nodiscard]] double rho() const noexcept { return rho_; }
  [[nodiscard]] const Field& Q() const noexcept { return q_; }
  [[nodiscard]] const TorusGrid& grid() const noexcept { return q_.grid(); }
  [[nodiscard]] bool has_weight() const noexcept { return f_.has_value(); }
  /// f, or the constant 1 when none was given.
  [[nodiscard]] Field weight() const { return f_ ? *f_ : Field(q_.grid(), 1.0); }

private:
  static Field normalize(double rho, Field q) {
    const double excess = integrate(q) - rho;
    if (excess == 0.0) return q;
    return q - excess / q.grid().area();
  }

  double rho_;
  Field q_;
  std::optional<Field> f_;
};

inline void require_no_overflow(const Field& v, const char* where) {
  const double vmax = v.max();
  if (vmax > kOverflowCeiling) throw BlowUpOverflow(vmax, where);
}

/// e^v, refusing exponents above the overflow ceiling.
[[nodiscard]] inline Field exp_field(const Field& v) {
  require_no_overflow(v, "exp");
  return v.map([](double x) { return std::exp(x); });
}

/// int e^v dV.
[[nodiscard]] inline double volume(const Field& v) {
  require_no_overflow(v, "volume");
  double s = 0.0;
  for (double x : v.values()) s += std::exp(x);
  return v.grid().cell_area() * s;
}

/// 1/2 int |grad v|^2.
[[nodiscard]] inline double dirichlet_energy(const Field& v) { return 0.5 * integrate(grad_sq(v)); }

/// J(v) = 1/2 int |grad v|^2 + int Q v - rho log int e^v.
[[nodiscard]] inline double energy_J(const ProblemData& p, const Field& v) {
  return dirichlet_energy(v) + inner(p.Q(), v) - p.rho() * std::log(volume(v));
}

/// I(u) = 1/2 int |grad u|^2 + rho/|M| int u - rho log int f e^u.
[[nodiscard]] inline double energy_I(const ProblemData& p, const Field& u) {
  require_no_overflow(u, "energy_I");
  const double rho = p.rho();
  const double weighted = integrate(p.weight() * u.map([](double x) { return std::exp(x); }));
  return dirichlet_energy(u) + rho / u.grid().area() * integrate(u) - rho * std::log(weighted);
}

struct ChangeOfVariables {
  Field v;
  Field Q;
};

/// Maps a mean field solution u to v = u + log f, a solution of the
/// mean-field-type equation with Q = rho/|M| + Lap log f.
[[nodiscard]] inline ChangeOfVariables change_of_variables(const ProblemData& p, const Field& u) {
  const Field log_f = p.weight().map([](double x) { return std::log(x); });
  Field q = laplacian(log_f) + p.rho() / u.grid().area();
  // Lap log f integrates to zero up to rounding; pin int Q = rho exactly.
  q = q - (integrate(q) - p.rho()) / u.grid().area();
  return {u + log_f, std::move(q)};
}

/// int v_dot^2 e^v dV, the rate at which J decreases along the flow.
[[nodiscard]] inline double dissipation(const Field& v, const Field& v_dot) {
  v.require_same_grid(v_dot);
  require_no_overflow(v, "dissipation");
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) s += v_dot[k] * v_dot[k] * std::exp(v[k]);
  return v.grid().cell_area() * s;
}

/// log int e^{v - mean(v)} dV.
[[nodiscard]] inline double log_centered_volume(const Field& v) {
  const double mean = v.mean();
  const Field centered = v - mean;
  return std::log(volume(centered));
}

/// log int e^{v - v_bar} - log |M|; nonnegative by Jensen's inequality.
[[nodiscard]] inline double jensen_gap(const Field& v) {
  return log_centered_volume(v) - std::log(v.grid().area());
}

/// (1/16 pi) int |grad v|^2 + c_mt - log int e^{v - v_bar}. The sharp constant
/// depends on the surface; callers pass their own c_mt (0 reports the trend).
[[nodiscard]] inline double moser_trudinger_gap(const Field& v, double c_mt = 0.0) {
  return integrate(grad_sq(v)) / (16.0 * kPi) + c_mt - log_centered_volume(v);
}

}  // namespace meanflow
