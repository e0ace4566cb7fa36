#pragma once

// Direct solvers for the stationary equation -Lap v + Q = rho e^v / int e^v:
// a globalized Newton-Krylov method and H^1 gradient descent on J.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meanflow/functionals.hpp"
#include "meanflow/krylov.hpp"

namespace meanflow {

/// -Lap v + Q - rho e^v / int e^v. Also the L2(dV) gradient of J.
[[nodiscard]] inline Field residual(const ProblemData& p, const Field& v) {
  const double vol = volume(v);
  const double c = p.rho() / vol;
  const Field lap = laplacian(v);
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    out[k] = -lap[k] + p.Q()[k] - c * std::exp(v[k]);
  }
  return Field(v.grid(), std::move(out));
}

[[nodiscard]] inline double residual_norm(const ProblemData& p, const Field& v) {
  return l2_norm(residual(p, v));
}

enum class Gauge { ZeroMean, FixedVolume };

/// Shifts v by a constant: zero mean, or int e^v = target_volume.
[[nodiscard]] inline Field apply_gauge(const Field& v, Gauge gauge, double target_volume = 1.0) {
  if (gauge == Gauge::ZeroMean) return v - v.mean();
  return v + std::log(target_volume / volume(v));
}

struct NewtonConfig {
  int max_iters = 100;
  double tol = 1e-11;
  double damping = 1.0;
  double min_damping = 0x1p-20;
  Gauge gauge = Gauge::ZeroMean;
  double target_volume = 1.0;  // used by Gauge::FixedVolume
  int krylov_restart = 60;
  int krylov_max_iters = 600;
};

struct NewtonResult {
  Field v;
  std::vector<double> residual_history;  // ||residual||_2 of each iterate, first = initial guess
  int iterations = 0;
};

/// Newton did not reach the tolerance; carries the best iterate.
class NewtonFailure : public SolverFailure {
public:
  NewtonFailure(const std::string& what, NewtonResult best)
      : SolverFailure(what), best_(std::move(best)) {}
  [[nodiscard]] const NewtonResult& best() const noexcept { return best_; }

private:
  NewtonResult best_;
};

/// The linearization stalled the Krylov solver: rho is likely close to 8k pi
/// (or the iterate sits at a degenerate critical point).
class DegeneracyError : public NewtonFailure {
public:
  using NewtonFailure::NewtonFailure;
};

namespace detail {

inline void remove_mean(std::span<double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  s /= static_cast<double>(x.size());
  for (double& v : x) v -= s;
}

}  // namespace detail

/// Solves the stationary equation from v_init. The linearized operator
///   phi -> -Lap phi - rho (e^v phi / V - e^v (int e^v phi) / V^2)
/// is applied matrix-free and inverted on mean-zero functions by GMRES with a
/// (1 - Lap)^{-1} preconditioner; steps are globalized by backtracking on the
/// residual norm.
[[nodiscard]] inline NewtonResult newton_solve(const ProblemData& p, const Field& v_init,
                                               const NewtonConfig& cfg = {}) {
  if (!(cfg.tol > 0.0)) throw ParameterError("Newton tolerance must be positive");
  const TorusGrid& grid = v_init.grid();
  const std::size_t N = grid.size();
  const double dA = grid.cell_area();
  const double rho = p.rho();

  auto finish = [&](Field v) { return apply_gauge(v, cfg.gauge, cfg.target_volume); };

  Field v = v_init - v_init.mean();
  Field res = residual(p, v);
  double rnorm = l2_norm(res);
  NewtonResult out{v, {rnorm}, 0};

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    if (rnorm <= cfg.tol) {
      out.v = finish(v);
      return out;
    }
    const Field ev = exp_field(v);
    const double vol = integrate(ev);
    auto apply = [&](std::span<const double> phi, std::span<double> y) {
      detail::laplacian(grid, phi, y);
      double weighted = 0.0;
      for (std::size_t k = 0; k < N; ++k) weighted += ev[k] * phi[k];
      weighted *= dA;
      for (std::size_t k = 0; k < N; ++k) {
        y[k] = -y[k] - rho * (ev[k] * phi[k] / vol - ev[k] * weighted / (vol * vol));
      }
    };
    auto precondition = [&](std::span<const double> r, std::span<double> z) {
      detail::shifted_inverse_laplacian(grid, 1.0, 1.0, r, z);
    };
    auto project = [](std::span<double> x) { detail::remove_mean(x); };

    std::vector<double> rhs(N);
    for (std::size_t k = 0; k < N; ++k) rhs[k] = -res[k];
    detail::remove_mean(rhs);
    std::vector<double> delta(N);
    // Inexact Newton forcing term; tightens with the residual for quadratic convergence.
    const double forcing = std::max(1e-13, std::min(1e-4, rnorm));
    const auto kr = krylov::gmres(apply, precondition, project, std::span<const double>(rhs),
                                  std::span<double>(delta), forcing, cfg.krylov_restart,
                                  cfg.krylov_max_iters);
    if (!kr.converged && kr.relative_residual > 0.5) {
      out.v = finish(v);
      throw DegeneracyError("Krylov solve stagnated (relative residual " +
                                std::to_string(kr.relative_residual) +
                                "); linearization near-singular, rho may be close to 8k*pi",
                            out);
    }
    const Field step(grid, std::move(delta));

    double alpha = cfg.damping;
    bool accepted = false;
    while (alpha >= cfg.min_damping) {
      try {
        Field trial = v + alpha * step;
        trial = trial - trial.mean();
        Field trial_res = residual(p, trial);
        const double trial_norm = l2_norm(trial_res);
        if (trial_norm < (1.0 - 1e-4 * alpha) * rnorm || trial_norm <= cfg.tol) {
          v = std::move(trial);
          res = std::move(trial_res);
          rnorm = trial_norm;
          accepted = true;
          break;
        }
      } catch (const BlowUpOverflow&) {
        // Overshoot; shorten the step.
      }
      alpha *= 0.5;
    }
    out.iterations = iter + 1;
    if (!accepted) {
      out.v = finish(v);
      throw NewtonFailure("Newton line search failed to reduce the residual", out);
    }
    out.residual_history.push_back(rnorm);
  }
  if (rnorm <= cfg.tol) {
    out.v = finish(v);
    return out;
  }
  out.v = finish(v);
  throw NewtonFailure("Newton did not converge in " + std::to_string(cfg.max_iters) +
                          " iterations (residual " + std::to_string(rnorm) + ")",
                      out);
}

/// J increased during fixed-step descent.
class StepSizeError : public Error {
public:
  using Error::Error;
};

struct DescentResult {
  Field v;
  std::vector<double> energies;  // J at every iterate, first = initial
  double residual = 0.0;
};

/// H^1 gradient descent on J with a fixed step, zero-mean gauge:
///   v <- v - step (1 - Lap)^{-1} residual(v).
/// Meaningful in the coercive regime rho < 8 pi.
[[nodiscard]] inline DescentResult minimize_direct(const ProblemData& p, const Field& v_init, double step,
                                                   int iters) {
  if (!(step > 0.0)) throw ParameterError("descent step must be positive");
  Field v = v_init - v_init.mean();
  double J = energy_J(p, v);
  DescentResult out{v, {J}, 0.0};
  for (int k = 0; k < iters; ++k) {
    const Field g = residual(p, v);
    Field next = v - step * solve_shifted_laplacian(g, 1.0, 1.0);
    next = next - next.mean();
    double J_next = 0.0;
    try {
      J_next = energy_J(p, next);
    } catch (const BlowUpOverflow&) {
      throw StepSizeError("descent step overflowed e^v at iteration " + std::to_string(k));
    }
    if (J_next > J + 1e-12 * (1.0 + std::abs(J))) {
      throw StepSizeError("J increased at iteration " + std::to_string(k) + " (" + std::to_string(J) +
                          " -> " + std::to_string(J_next) + "); reduce the step");
    }
    v = std::move(next);
    J = J_next;
    out.energies.push_back(J);
  }
  out.residual = residual_norm(p, v);
  out.v = std::move(v);
  return out;
}

}  // namespace meanflow
