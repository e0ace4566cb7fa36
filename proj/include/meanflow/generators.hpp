#pragma once

// Data generators: the seeded random stream, Q fields, band-limited random
// fields and Chen-Li bubble initial data.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "meanflow/functionals.hpp"

namespace meanflow {

/// SplitMix64. Counter-based: the k-th draw of a stream is a fixed mixing
/// function of (seed, stream id, k), so streams split off a seed are
/// reproducible on every platform.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  /// Independent stream `id` derived from `seed`.
  static SplitMix64 stream(std::uint64_t seed, std::uint64_t id) noexcept {
    return SplitMix64(mix(seed ^ mix(id + kGolden)));
  }

  std::uint64_t next() noexcept {
    state_ += kGolden;
    return mix(state_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t state_;
};

/// Stream ids used by the harness.
enum class RngStream : std::uint64_t { InitialData = 1, Perturbation = 2, Property = 3 };

[[nodiscard]] inline SplitMix64 rng_stream(std::uint64_t seed, RngStream id) {
  return SplitMix64::stream(seed, static_cast<std::uint64_t>(id));
}

/// sum over 0 < |k|_inf <= k_max of a_k cos(k.x) + b_k sin(k.x), a_k, b_k
/// uniform in [-1, 1], rescaled to sup norm `amplitude`.
[[nodiscard]] inline Field random_bandlimited(const TorusGrid& grid, int k_max, double amplitude, SplitMix64& rng) {
  if (k_max < 1 || 2 * k_max >= grid.n()) throw ParameterError("k_max must satisfy 1 <= k_max < n/2");
  struct Mode {
    int kx, ky;
    double a, b;
  };
  std::vector<Mode> modes;
  for (int ky = 0; ky <= k_max; ++ky) {
    for (int kx = -k_max; kx <= k_max; ++kx) {
      if (ky == 0 && kx <= 0) continue;
      const double a = rng.uniform(-1.0, 1.0);
      const double b = rng.uniform(-1.0, 1.0);
      modes.push_back({kx, ky, a, b});
    }
  }
  const double w = grid.wavenumber(1);
  Field f = Field::sample(grid, [&](double x, double y) {
    double s = 0.0;
    for (const auto& m : modes) {
      const double phase = w * (m.kx * x + m.ky * y);
      s += m.a * std::cos(phase) + m.b * std::sin(phase);
    }
    return s;
  });
  const double sup = f.sup_norm();
  return sup > 0.0 ? (amplitude / sup) * f : f;
}

/// Q = rho / |M| + amplitude cos(mode x).
[[nodiscard]] inline Field cosine_perturbed_q(const TorusGrid& grid, double rho, double amplitude, int mode) {
  const double w = grid.wavenumber(mode);
  return Field::sample(grid, [&](double x, double) { return rho / grid.area() + amplitude * std::cos(w * x); });
}

/// f = exp(amplitude cos(mode x)), the weight behind Q = rho / |M| + Lap log f.
[[nodiscard]] inline Field exp_cosine_weight(const TorusGrid& grid, double amplitude, int mode) {
  const double w = grid.wavenumber(mode);
  return Field::sample(grid, [&](double x, double) { return std::exp(amplitude * std::cos(w * x)); });
}

/// Center used for bubble data when none is given: the middle of the torus
/// moved a quarter cell off the grid nodes.
[[nodiscard]] inline Point default_bubble_center(const TorusGrid& grid) {
  const double c = 0.5 * grid.side_length() + 0.25 * grid.spacing();
  return Point::on(grid, c, c);
}

/// 2 log(2 lambda / (1 + lambda^2 d^2)) + log(2 / rho), d the min-image distance to center.
[[nodiscard]] inline Field make_bubble_data(const TorusGrid& grid, double rho, double lambda, const Point& center) {
  if (!(lambda >= 1.0)) throw ParameterError("bubble lambda must be >= 1");
  if (!(rho > 0.0)) throw ParameterError("bubble data needs rho > 0");
  const double L = grid.side_length();
  const double l2 = lambda * lambda;
  const double base = std::log(2.0 / rho);
  return Field::sample(grid, [&](double x, double y) {
    const double dx = min_image(x - center.x, L);
    const double dy = min_image(y - center.y, L);
    return 2.0 * std::log(2.0 * lambda / (1.0 + l2 * (dx * dx + dy * dy))) + base;
  });
}

[[nodiscard]] inline Field make_bubble_data(const ProblemData& p, double lambda, const Point& center) {
  return make_bubble_data(p.grid(), p.rho(), lambda, center);
}

[[nodiscard]] inline Field make_bubble_data(const ProblemData& p, double lambda) {
  return make_bubble_data(p.grid(), p.rho(), lambda, default_bubble_center(p.grid()));
}

struct BubbleSpec {
  double lambda;
  Point center;
};

/// log(sum_i e^{bubble_i} + c), with the constant c chosen so that the floor
/// carries `floor_fraction` of the total volume.
[[nodiscard]] inline Field sum_of_bubbles(const TorusGrid& grid, double rho, const std::vector<BubbleSpec>& bubbles,
                                          double floor_fraction) {
  if (bubbles.empty()) throw ParameterError("sum_of_bubbles needs at least one bubble");
  if (!(floor_fraction >= 0.0 && floor_fraction < 1.0)) throw ParameterError("floor_fraction must lie in [0, 1)");
  std::vector<double> density(grid.size(), 0.0);
  for (const auto& b : bubbles) {
    const Field v = make_bubble_data(grid, rho, b.lambda, b.center);
    for (std::size_t k = 0; k < density.size(); ++k) density[k] += std::exp(v[k]);
  }
  double mass = 0.0;
  for (double d : density) mass += d;
  mass *= grid.cell_area();
  const double c = floor_fraction / (1.0 - floor_fraction) * mass / grid.area();
  for (double& d : density) d = std::log(d + c);
  return Field(grid, std::move(density));
}

/// Energy target not reached by bubble data up to lambda = 2^16.
class UnreachableTarget : public Error {
public:
  UnreachableTarget(const std::string& what, std::vector<std::pair<double, double>> trace)
      : Error(what), trace_(std::move(trace)) {}
  /// (lambda, J) for every probe.
  [[nodiscard]] const std::vector<std::pair<double, double>>& trace() const noexcept { return trace_; }

private:
  std::vector<std::pair<double, double>> trace_;
};

struct CalibratedData {
  Field v;
  double lambda;
  double energy;
};

/// Doubles lambda from 8 until energy_J(bubble) <= target_J.
[[nodiscard]] inline CalibratedData calibrate_negative_energy(const ProblemData& p, double target_J,
                                                              const Point& center) {
  std::vector<std::pair<double, double>> trace;
  for (double lambda = 8.0; lambda <= 65536.0; lambda *= 2.0) {
    Field v = make_bubble_data(p, lambda, center);
    const double J = energy_J(p, v);
    trace.emplace_back(lambda, J);
    if (J <= target_J) return {std::move(v), lambda, J};
  }
  throw UnreachableTarget("no bubble with lambda <= 2^16 reaches J <= " + std::to_string(target_J), std::move(trace));
}

[[nodiscard]] inline CalibratedData calibrate_negative_energy(const ProblemData& p, double target_J) {
  return calibrate_negative_energy(p, target_J, default_bubble_center(p.grid()));
}

}  // namespace meanflow
