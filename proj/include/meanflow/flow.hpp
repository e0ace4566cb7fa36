#pragma once

// Time integration of the gradient flow
//   d/dt e^v = Lap v - Q + rho e^v / int e^v,
// i.e. v_t = e^{-v}(Lap v - Q) + rho / int e^v, together with the runtime
// monitors that follow from its structure: volume conservation, energy
// dissipation, the maximum-principle bound on v_max and the decay bound on
// min R where R = e^{-v}(-Lap v + Q).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meanflow/functionals.hpp"
#include "meanflow/krylov.hpp"
#include "meanflow/stationary.hpp"

namespace meanflow {

enum class StepScheme { ExplicitRK4, LinearlyImplicit };

struct FlowConfig {
  double dt_init = 1e-3;
  double dt_min = 1e-10;
  double dt_max = 0.1;
  StepScheme scheme = StepScheme::LinearlyImplicit;
  double imex_tolerance = 1e-10;
  int max_inner_iters = 500;
  double t_end = 50.0;
  double stop_residual = 1e-8;
  double stop_energy = -1e4;
  double volume_drift_max = 1e-7;
  /// Emit a record whenever t crosses a multiple of this; 0 records every step.
  double record_interval = 0.0;
  /// Grow dt by grow_factor after grow_after clean steps; off keeps dt fixed.
  bool adaptive = true;
  int grow_after = 20;
  double grow_factor = 1.2;
  /// Shift every accepted iterate by a constant so int e^v stays exactly a.
  bool volume_projection = true;
  /// Single-cell share of the volume above which concentration is declared
  /// unresolved on the grid (reported as suspected blow-up). 0 disables.
  double resolution_mass_fraction = 0.9;

  void validate() const {
    if (!(dt_min > 0.0 && dt_init > 0.0 && dt_max > 0.0)) throw ParameterError("time steps must be positive");
    if (!(dt_min <= dt_init && dt_init <= dt_max)) throw ParameterError("need dt_min <= dt_init <= dt_max");
    if (!(imex_tolerance > 0.0 && stop_residual > 0.0 && volume_drift_max > 0.0)) {
      throw ParameterError("tolerances must be positive");
    }
    if (!(t_end > 0.0)) throw ParameterError("t_end must be positive");
    if (record_interval < 0.0) throw ParameterError("record_interval must be nonnegative");
    if (max_inner_iters < 1 || grow_after < 1 || !(grow_factor >= 1.0)) {
      throw ParameterError("invalid step-controller settings");
    }
  }
};

struct FlowState {
  double t = 0.0;
  Field v;
  double a = 0.0;  ///< int e^{v0}, conserved by the flow
  std::size_t steps_taken = 0;
  double last_dt = 0.0;
  double next_dt = 0.0;
  int clean_steps = 0;
  std::size_t rejected_steps = 0;
  int last_inner_iterations = 0;
  /// Relative volume defect of the last step before projection.
  double last_volume_defect = 0.0;
  double energy = 0.0;

  static FlowState initial(const ProblemData& p, Field v0, const FlowConfig& cfg) {
    const double a = volume(v0);
    const double J = energy_J(p, v0);
    FlowState s{0.0, std::move(v0), a};
    s.next_dt = cfg.dt_init;
    s.energy = J;
    return s;
  }
};

struct DiagnosticsRecord {
  double t = 0.0;
  double J = 0.0;
  double volume_rel_drift = 0.0;  ///< int e^v / a - 1
  double dissipation = 0.0;
  double v_max = 0.0;
  double v_min = 0.0;
  double residual = 0.0;
  double r_min = 0.0;
  double maxbound_margin = 0.0;
  double dt = 0.0;
  double peak_cell_fraction = 0.0;  ///< largest single-cell share of int e^v
};

/// v_t = e^{-v}(Lap v - Q) + rho / int e^v.
[[nodiscard]] inline Field rhs(const ProblemData& p, const Field& v) {
  const double vol = volume(v);
  const Field lap = laplacian(v);
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    out[k] = std::exp(-v[k]) * (lap[k] - p.Q()[k]) + p.rho() / vol;
  }
  return Field(v.grid(), std::move(out));
}

/// R = e^{-v}(-Lap v + Q). Constant (= rho / int e^v) at stationary points.
[[nodiscard]] inline Field curvature_field(const ProblemData& p, const Field& v) {
  const Field lap = laplacian(v);
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = std::exp(-v[k]) * (-lap[k] + p.Q()[k]);
  return Field(v.grid(), std::move(out));
}

/// Largest stable explicit step: 1 / (max e^{-v} ((pi n / L)^2 + |rho| / a)).
[[nodiscard]] inline double explicit_stability_cap(const ProblemData& p, const Field& v, double a) {
  const TorusGrid& g = v.grid();
  const double kmax = kPi * g.n() / g.side_length();
  return 1.0 / (std::exp(-v.min()) * (kmax * kmax + std::abs(p.rho()) / a));
}

[[nodiscard]] inline double peak_cell_fraction(const Field& v) {
  return v.grid().cell_area() * std::exp(v.max()) / volume(v);
}

namespace detail {

inline Field rk4_step(const ProblemData& p, const Field& v, double dt) {
  const Field k1 = rhs(p, v);
  const Field k2 = rhs(p, v + (0.5 * dt) * k1);
  const Field k3 = rhs(p, v + (0.5 * dt) * k2);
  const Field k4 = rhs(p, v + dt * k3);
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    out[k] = v[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
  }
  return Field(v.grid(), std::move(out));
}

/// Linearly implicit step with frozen diffusion coefficient D = e^{-v}:
///   (Id - dt D Lap) v+ = v + dt (-D Q + rho / vol).
/// Solved for the increment d = v+ - v in the symmetric form
///   (e^v - dt Lap) d = dt (Lap v - Q + rho e^v / vol)
/// by CG, preconditioned with (mean(e^v) - dt Lap)^{-1}.
inline Field linearly_implicit_step(const ProblemData& p, const Field& v, double dt, double tol,
                                    int max_iters, int& iterations) {
  const TorusGrid& grid = v.grid();
  const std::size_t N = grid.size();
  const Field ev = exp_field(v);
  const double vol = integrate(ev);
  const Field lap = laplacian(v);
  std::vector<double> b(N);
  for (std::size_t k = 0; k < N; ++k) b[k] = dt * (lap[k] - p.Q()[k] + p.rho() * ev[k] / vol);

  auto apply = [&](std::span<const double> x, std::span<double> y) {
    detail::laplacian(grid, x, y);
    for (std::size_t k = 0; k < N; ++k) y[k] = ev[k] * x[k] - dt * y[k];
  };
  const double shift = ev.mean();
  auto precondition = [&](std::span<const double> r, std::span<double> z) {
    detail::shifted_inverse_laplacian(grid, shift, dt, r, z);
  };
  std::vector<double> d(N);
  const auto res = krylov::conjugate_gradient(apply, precondition, std::span<const double>(b),
                                              std::span<double>(d), tol, max_iters);
  iterations = res.iterations;
  if (!res.converged) {
    throw SolverFailure("implicit step: CG did not converge in " + std::to_string(max_iters) +
                        " iterations (relative residual " + std::to_string(res.relative_residual) + ")");
  }
  for (std::size_t k = 0; k < N; ++k) d[k] += v[k];
  return Field(grid, std::move(d));
}

}  // namespace detail

/// Relative evaluation noise of J tolerated by the step controller.
inline constexpr double kEnergyRoundoff = 1e-12;

/// Advances the state by one accepted step. The step is rejected and dt
/// halved whenever J grows by more than (10 dt^2 + roundoff)(1 + |J|); dt falling below
/// dt_min raises StiffnessFailure. `dt_limit` caps the step (e.g. to land on
/// t_end) without affecting the controller.
[[nodiscard]] inline FlowState step(const ProblemData& p, const FlowState& s, const FlowConfig& cfg,
                                    double dt_limit = std::numeric_limits<double>::infinity()) {
  double dt = std::clamp(s.next_dt, cfg.dt_min, cfg.dt_max);
  double cap = dt_limit;
  if (cfg.scheme == StepScheme::ExplicitRK4) {
    const double stab = explicit_stability_cap(p, s.v, s.a);
    if (stab < cfg.dt_min && stab < dt_limit) {
      throw StiffnessFailure("explicit stability cap " + std::to_string(stab) + " below dt_min");
    }
    cap = std::min(cap, stab);
  }
  const double J0 = s.energy;
  std::size_t rejected = 0;
  bool halved = false;

  while (true) {
    const double used = std::min(dt, cap);
    int inner = 0;
    Field next = cfg.scheme == StepScheme::ExplicitRK4
                     ? detail::rk4_step(p, s.v, used)
                     : detail::linearly_implicit_step(p, s.v, used, cfg.imex_tolerance, cfg.max_inner_iters,
                                                      inner);
    const double vol = volume(next);
    const double defect = vol / s.a - 1.0;
    if (cfg.volume_projection) next = next + std::log(s.a / vol);
    const double J1 = energy_J(p, next);

    if (J1 - J0 > (10.0 * used * used + kEnergyRoundoff) * (1.0 + std::abs(J0))) {
      dt *= 0.5;
      ++rejected;
      halved = true;
      if (dt < cfg.dt_min) {
        throw StiffnessFailure("energy controller drove dt below dt_min at t = " + std::to_string(s.t));
      }
      continue;
    }

    FlowState out{s.t + used, std::move(next), s.a};
    out.steps_taken = s.steps_taken + 1;
    out.last_dt = used;
    out.rejected_steps = s.rejected_steps + rejected;
    out.last_inner_iterations = inner;
    out.last_volume_defect = defect;
    out.energy = J1;
    out.clean_steps = halved ? 0 : s.clean_steps + 1;
    out.next_dt = dt;
    if (cfg.adaptive && out.clean_steps >= cfg.grow_after) {
      out.next_dt = std::min(dt * cfg.grow_factor, cfg.dt_max);
      out.clean_steps = 0;
    }
    if (!cfg.adaptive && !halved) out.next_dt = cfg.dt_init;
    return out;
  }
}

/// RHS minus LHS of the maximum-principle bound
///   e^{v_max(t)} + k <= (e^{v_max(0)} + k) e^{rho t / a},  k = ||Q||_inf a / rho,
/// for rho > 0; for rho <= 0 the bound reads e^{v_max(t)} <= e^{v_max(0)} + ||Q||_inf t.
[[nodiscard]] inline double max_principle_margin(const ProblemData& p, double a, const DiagnosticsRecord& rec_0,
                                                 const DiagnosticsRecord& rec_t) {
  const double qinf = p.Q().sup_norm();
  const double t = rec_t.t - rec_0.t;
  const double rho = p.rho();
  if (rho > 0.0) {
    const double k = qinf * a / rho;
    const double rhs_bound = (std::exp(rec_0.v_max) + k) * std::exp(rho * t / a);
    return rhs_bound - (std::exp(rec_t.v_max) + k);
  }
  return std::exp(rec_0.v_max) + qinf * t - std::exp(rec_t.v_max);
}

/// Right-hand side of the maximum-principle bound, used to scale its margin.
[[nodiscard]] inline double max_principle_bound(const ProblemData& p, double a, const DiagnosticsRecord& rec_0,
                                                const DiagnosticsRecord& rec_t) {
  const double qinf = p.Q().sup_norm();
  const double t = rec_t.t - rec_0.t;
  if (p.rho() > 0.0) {
    return (std::exp(rec_0.v_max) + qinf * a / p.rho()) * std::exp(p.rho() * t / a);
  }
  return std::exp(rec_0.v_max) + qinf * t;
}

/// R_min(later) - e^{-rho (t_later - t_earlier) / a} R_min(earlier). The
/// continuous flow keeps this nonnegative.
[[nodiscard]] inline double r_min_decay_margin(double rho, double a, const DiagnosticsRecord& earlier,
                                               const DiagnosticsRecord& later) {
  return later.r_min - std::exp(-rho * (later.t - earlier.t) / a) * earlier.r_min;
}

/// Full diagnostics of a state. `rec_0` (the t = 0 record of the same run)
/// enables the maximum-principle margin.
[[nodiscard]] inline DiagnosticsRecord diagnose(const ProblemData& p, const FlowState& s,
                                                const DiagnosticsRecord* rec_0 = nullptr) {
  const Field& v = s.v;
  const Field ev = exp_field(v);
  const double vol = integrate(ev);
  const Field lap = laplacian(v);
  const std::size_t N = v.size();
  std::vector<double> vdot(N), res(N);
  double r_min = std::numeric_limits<double>::infinity();
  double res_sq = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    const double q = p.Q()[k];
    const double R = (-lap[k] + q) / ev[k];
    r_min = std::min(r_min, R);
    vdot[k] = -R + p.rho() / vol;
    const double r = -lap[k] + q - p.rho() * ev[k] / vol;
    res_sq += r * r;
  }
  DiagnosticsRecord rec;
  rec.t = s.t;
  rec.J = s.energy;
  rec.volume_rel_drift = vol / s.a - 1.0;
  rec.dissipation = dissipation(v, Field(v.grid(), std::move(vdot)));
  rec.v_max = v.max();
  rec.v_min = v.min();
  rec.residual = std::sqrt(v.grid().cell_area() * res_sq);
  rec.r_min = r_min;
  rec.dt = s.last_dt;
  rec.peak_cell_fraction = v.grid().cell_area() * std::exp(rec.v_max) / vol;
  rec.maxbound_margin = rec_0 ? max_principle_margin(p, s.a, *rec_0, rec) : 0.0;
  return rec;
}

enum class Outcome { Converged, Diverged, BlowUpSuspected, TimeExhausted };
enum class BlowUpCause { None, Overflow, Stiffness, Unresolved };

[[nodiscard]] inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Converged: return "Converged";
    case Outcome::Diverged: return "Diverged";
    case Outcome::BlowUpSuspected: return "BlowUpSuspected";
    case Outcome::TimeExhausted: return "TimeExhausted";
  }
  return "?";
}

[[nodiscard]] inline const char* to_string(BlowUpCause c) {
  switch (c) {
    case BlowUpCause::None: return "none";
    case BlowUpCause::Overflow: return "overflow";
    case BlowUpCause::Stiffness: return "stiffness";
    case BlowUpCause::Unresolved: return "unresolved_concentration";
  }
  return "?";
}

struct RunOutcome {
  Outcome outcome = Outcome::TimeExhausted;
  BlowUpCause cause = BlowUpCause::None;
  FlowState state;  ///< final (or last good) state
  DiagnosticsRecord last;
  std::string detail;
};

using RecordSink = std::function<void(const DiagnosticsRecord&, const FlowState&)>;

/// Integrates from v0 until convergence, divergence, suspected blow-up or t_end.
/// Records go to `sink` at t = 0, every record_interval, and at termination.
[[nodiscard]] inline RunOutcome run(const ProblemData& p, const Field& v0, const FlowConfig& cfg,
                                    const RecordSink& sink = {}) {
  cfg.validate();
  FlowState state = FlowState::initial(p, v0, cfg);
  const DiagnosticsRecord rec0 = diagnose(p, state);
  if (sink) sink(rec0, state);

  auto finish = [&](Outcome o, BlowUpCause c, const DiagnosticsRecord& rec, bool emitted, std::string detail) {
    if (!emitted && sink) sink(rec, state);
    return RunOutcome{o, c, state, rec, std::move(detail)};
  };

  if (rec0.residual <= cfg.stop_residual) {
    return finish(Outcome::Converged, BlowUpCause::None, rec0, true, "stationary initial data");
  }
  if (cfg.resolution_mass_fraction > 0.0 && rec0.peak_cell_fraction >= cfg.resolution_mass_fraction) {
    return finish(Outcome::BlowUpSuspected, BlowUpCause::Unresolved, rec0, true,
                  "initial data already concentrated below grid resolution");
  }

  DiagnosticsRecord last = rec0;
  bool last_emitted = true;
  double next_record = cfg.record_interval;
  const double t_end = cfg.t_end;

  while (state.t < t_end * (1.0 - 1e-14)) {
    try {
      state = step(p, state, cfg, t_end - state.t);
    } catch (const StiffnessFailure& e) {
      return finish(Outcome::BlowUpSuspected, BlowUpCause::Stiffness, last, last_emitted, e.what());
    } catch (const BlowUpOverflow& e) {
      return finish(Outcome::BlowUpSuspected, BlowUpCause::Overflow, last, last_emitted, e.what());
    }
    DiagnosticsRecord rec;
    try {
      rec = diagnose(p, state, &rec0);
    } catch (const BlowUpOverflow& e) {
      return finish(Outcome::BlowUpSuspected, BlowUpCause::Overflow, last, last_emitted, e.what());
    }
    if (std::abs(rec.volume_rel_drift) > cfg.volume_drift_max) {
      throw IntegratorAccuracyError("volume drift " + std::to_string(rec.volume_rel_drift) + " at t = " +
                                    std::to_string(rec.t) + " exceeds " + std::to_string(cfg.volume_drift_max));
    }
    last = rec;
    last_emitted = false;

    if (rec.residual <= cfg.stop_residual) {
      return finish(Outcome::Converged, BlowUpCause::None, rec, false, "stationarity residual reached");
    }
    if (rec.J <= cfg.stop_energy) {
      return finish(Outcome::Diverged, BlowUpCause::None, rec, false, "energy below stop_energy");
    }
    if (cfg.resolution_mass_fraction > 0.0 && rec.peak_cell_fraction >= cfg.resolution_mass_fraction) {
      return finish(Outcome::BlowUpSuspected, BlowUpCause::Unresolved, rec, false,
                    "volume concentrated in a single cell");
    }
    if (cfg.record_interval == 0.0 || state.t >= next_record * (1.0 - 1e-12)) {
      if (sink) sink(rec, state);
      last_emitted = true;
      if (cfg.record_interval > 0.0) {
        while (next_record <= state.t * (1.0 + 1e-12)) next_record += cfg.record_interval;
      }
    }
  }
  return finish(Outcome::TimeExhausted, BlowUpCause::None, last, last_emitted, "reached t_end");
}

}  // namespace meanflow
