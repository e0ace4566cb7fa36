#pragma once

// Matrix-free Krylov solvers on plain vectors. Operators and preconditioners
// are callables `void(std::span<const double> in, std::span<double> out)`.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace meanflow::krylov {

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct Result {
  bool converged = false;
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Preconditioned conjugate gradients for SPD systems, starting from x = 0.
/// Stops when ||r|| <= rel_tol * ||b||.
template <class Op, class Prec>
Result conjugate_gradient(Op&& apply, Prec&& precondition, std::span<const double> b, std::span<double> x,
                          double rel_tol, int max_iters) {
  const std::size_t n = b.size();
  std::fill(x.begin(), x.end(), 0.0);
  const double bnorm = norm(b);
  if (bnorm == 0.0) return {true, 0, 0.0};

  Vec r(b.begin(), b.end());
  Vec z(n), p(n), ap(n);
  precondition(std::span<const double>(r), std::span<double>(z));
  p = z;
  double rz = dot(r, z);
  for (int it = 0; it < max_iters; ++it) {
    const double rn = norm(r);
    if (rn <= rel_tol * bnorm) return {true, it, rn / bnorm};
    apply(std::span<const double>(p), std::span<double>(ap));
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) return {false, it, rn / bnorm};
    const double alpha = rz / pap;
    for (std::size_t k = 0; k < n; ++k) {
      x[k] += alpha * p[k];
      r[k] -= alpha * ap[k];
    }
    precondition(std::span<const double>(r), std::span<double>(z));
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + beta * p[k];
  }
  const double rn = norm(r);
  return {rn <= rel_tol * bnorm, max_iters, rn / bnorm};
}

/// Restarted GMRES with right preconditioning, starting from x = 0.
/// `project` (optional, may be a no-op) is applied to every Krylov vector; it
/// is used to stay inside the mean-zero subspace.
template <class Op, class Prec, class Project>
Result gmres(Op&& apply, Prec&& precondition, Project&& project, std::span<const double> b,
             std::span<double> x, double rel_tol, int restart, int max_iters) {
  const std::size_t n = b.size();
  std::fill(x.begin(), x.end(), 0.0);
  const double bnorm = norm(b);
  if (bnorm == 0.0) return {true, 0, 0.0};

  Vec r(b.begin(), b.end());
  Vec w(n), z(n);
  std::vector<Vec> basis;
  std::vector<std::vector<double>> hess;
  int total = 0;
  double rel = 1.0;

  while (total < max_iters) {
    double beta = norm(r);
    rel = beta / bnorm;
    if (rel <= rel_tol) return {true, total, rel};

    basis.assign(1, Vec(n));
    for (std::size_t k = 0; k < n; ++k) basis[0][k] = r[k] / beta;
    hess.assign(static_cast<std::size_t>(restart) + 1, std::vector<double>(restart, 0.0));
    std::vector<double> cs(restart, 0.0), sn(restart, 0.0), g(restart + 1, 0.0);
    g[0] = beta;

    int j = 0;
    for (; j < restart && total < max_iters; ++j, ++total) {
      precondition(std::span<const double>(basis[j]), std::span<double>(z));
      project(std::span<double>(z));
      apply(std::span<const double>(z), std::span<double>(w));
      project(std::span<double>(w));
      // Modified Gram-Schmidt.
      for (int i = 0; i <= j; ++i) {
        const double hij = dot(w, basis[i]);
        hess[i][j] = hij;
        for (std::size_t k = 0; k < n; ++k) w[k] -= hij * basis[i][k];
      }
      const double hnext = norm(w);
      hess[j + 1][j] = hnext;
      for (int i = 0; i < j; ++i) {
        const double t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
        hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
        hess[i][j] = t;
      }
      const double denom = std::hypot(hess[j][j], hess[j + 1][j]);
      cs[j] = denom == 0.0 ? 1.0 : hess[j][j] / denom;
      sn[j] = denom == 0.0 ? 0.0 : hess[j + 1][j] / denom;
      hess[j][j] = denom;
      hess[j + 1][j] = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];
      rel = std::abs(g[j + 1]) / bnorm;
      if (rel <= rel_tol || hnext == 0.0) {
        ++j;
        ++total;
        break;
      }
      Vec next(n);
      for (std::size_t k = 0; k < n; ++k) next[k] = w[k] / hnext;
      basis.push_back(std::move(next));
    }

    // Back substitution for the least-squares coefficients.
    std::vector<double> y(j, 0.0);
    for (int i = j - 1; i >= 0; --i) {
      double s = g[i];
      for (int k = i + 1; k < j; ++k) s -= hess[i][k] * y[k];
      y[i] = hess[i][i] == 0.0 ? 0.0 : s / hess[i][i];
    }
    Vec update(n, 0.0);
    for (int i = 0; i < j; ++i) {
      for (std::size_t k = 0; k < n; ++k) update[k] += y[i] * basis[i][k];
    }
    precondition(std::span<const double>(update), std::span<double>(z));
    project(std::span<double>(z));
    for (std::size_t k = 0; k < n; ++k) x[k] += z[k];

    // True residual for the restart.
    apply(std::span<const double>(x), std::span<double>(w));
    for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - w[k];
    project(std::span<double>(r));
    rel = norm(r) / bnorm;
    if (rel <= rel_tol) return {true, total, rel};
  }
  return {false, total, rel};
}

}  // namespace meanflow::krylov
