#pragma once

// Concentration diagnostics for near-blow-up fields: the mass scan, the
// core selection at a prescribed mass level, bubble extraction with mass
// quantization, Chen-Li profile fitting in blow-up coordinates and the dyadic
// annulus mass profile.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "meanflow/functionals.hpp"

namespace meanflow {

struct Bubble {
  Point center;
  double scale = 0.0;             ///< half-mass radius of the bubble
  double detection_radius = 0.0;  ///< R; the bubble mass is measured on B_{2R}
  double local_mass = 0.0;        ///< int_{B_{2R}} e^v
  double quantized_fraction = 0.0;
};

struct BubbleReport {
  std::vector<Bubble> bubbles;
  double residual_mass_fraction = 1.0;
  bool separation_ok = true;
  double h_n_l2 = 0.0;
  bool concentrated = false;  ///< at least one bubble found
  bool inconsistent = false;  ///< more bubbles than floor(rho / 8 pi)
};

struct ConcentrationConfig {
  double annulus_ratio = 0.02;      ///< stop growing R once mass(B_2R \ B_R) < ratio * mass(B_R)
  double residual_fraction = 0.05;  ///< stop extracting once the unmasked mass share drops below this
  double growth = 1.189207115002721;  ///< radius growth factor per trial (2^{1/4})
  double separation_max = 0.2;      ///< bound on R_i / |x_i - x_j|
  double mask_floor = -745.0;       ///< value written into extracted balls
  /// Volume unit for the quantized fraction rho * mass / (8 pi * normalization).
  /// 1 matches the Chen-Li profile 2 log(2 lambda / (1 + lambda^2 r^2)) + log(2 / rho),
  /// whose total mass is 8 pi / rho.
  double normalization = 1.0;
};

/// Grid centers whose ball of radius r carries at least 4 pi of |F|, with
///   F = rho e^v / V - Q + h e^v,   V = int e^v,
/// i.e. F = -Lap v along the flow when h = -v_t. Only maxima of the ball
/// mass over their r-neighborhood qualify; ties are thinned by greedy
/// suppression at radius r. Each surviving ball reports the peak of |F|
/// inside it. Sorted by mass, largest first.
[[nodiscard]] inline std::vector<Point> concentration_scan(const Field& v, const std::optional<Field>& h,
                                                           const ProblemData& p, double r) {
  const TorusGrid& grid = v.grid();
  if (!(r > 0.0) || r > 0.25 * grid.side_length()) {
    throw ParameterError("concentration_scan: radius must lie in (0, L/4]");
  }
  const double vol = volume(v);
  std::vector<double> absF(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double ev = std::exp(v[k]);
    const double hk = h ? (*h)[k] : 0.0;
    absF[k] = std::abs(p.rho() * ev / vol - p.Q()[k] + hk * ev);
  }
  const Field F(grid, std::move(absF));
  const Field masses = ball_mass_map(F, r);

  // Candidates: above threshold and maximal over the closed r-neighborhood.
  const int n = grid.n();
  auto neighbor_max = [&](std::size_t k) {
    const int i = static_cast<int>(k / static_cast<std::size_t>(n));
    const int j = static_cast<int>(k % static_cast<std::size_t>(n));
    double m = -std::numeric_limits<double>::infinity();
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        if (di == 0 && dj == 0) continue;
        m = std::max(m, masses[static_cast<std::size_t>(((i + di + n) % n) * n + (j + dj + n) % n)]);
      }
    }
    return m;
  };
  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < masses.size(); ++k) {
    if (masses[k] < 4.0 * kPi || neighbor_max(k) > masses[k]) continue;
    bool dominated = false;
    detail::for_each_in_ball(grid, grid_point(grid, k), r, [&](std::size_t q) { dominated |= masses[q] > masses[k]; });
    if (!dominated) candidates.push_back(k);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return masses[a] > masses[b]; });
  std::vector<Point> kept;
  std::vector<Point> peaks;
  for (std::size_t k : candidates) {
    const Point c = grid_point(grid, k);
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Point& q) { return periodic_distance(grid, c, q) <= r; });
    if (suppressed) continue;
    kept.push_back(c);
    std::size_t peak = k;
    detail::for_each_in_ball(grid, c, r, [&](std::size_t q) {
      if (F[q] > F[peak]) peak = q;
    });
    peaks.push_back(grid_point(grid, peak));
  }
  return peaks;
}

/// No ball of radius up to L/2 reaches the requested mass share.
class NotConcentrated : public Error {
public:
  using Error::Error;
};

struct CoreSelection {
  Point center;
  double radius = 0.0;
  double mass_fraction = 0.0;  ///< ball_mass(e^v, center, radius) / int e^v
};

/// Smallest radius r* (to one cell) such that some ball of radius r* holds
/// the share beta of int e^v, and the center attaining it. By construction no
/// ball of radius below r* - h holds beta.
[[nodiscard]] inline CoreSelection select_core(const Field& v, double beta) {
  const TorusGrid& grid = v.grid();
  if (!(beta > 0.0) || beta * 1.1 > 1.0) {
    throw ParameterError("select_core: need 0 < beta and 1.1 * beta <= 1");
  }
  const Field ev = exp_field(v);
  const double vol = integrate(ev);
  auto best = [&](double radius) {
    const Field m = ball_mass_map(ev, radius);
    const std::size_t k = m.argmax();
    return std::pair{k, m[k] / vol};
  };
  const double h = grid.spacing();
  double hi = 0.5 * grid.side_length();
  auto [k_hi, f_hi] = best(hi);
  if (f_hi < beta) {
    throw NotConcentrated("no ball of radius <= L/2 carries the requested mass share");
  }
  double lo = 0.25 * h;
  if (best(lo).second >= beta) {
    hi = lo;
  } else {
    while (hi - lo > h) {
      const double mid = 0.5 * (lo + hi);
      if (best(mid).second >= beta) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
  }
  const auto [k, frac] = best(hi);
  return CoreSelection{grid_point(grid, k), hi, frac};
}

/// Masses of the dyadic annuli B_{2^{j+1} r0} \ B_{2^j r0} for 2^{j+1} r0 <= r1,
/// as (outer radius, mass) pairs.
[[nodiscard]] inline std::vector<std::pair<double, double>> annulus_profile(const Field& v, const Point& center,
                                                                           double r0, double r1) {
  if (!(r0 > 0.0) || !(r0 < r1) || r1 > 0.5 * v.grid().side_length()) {
    throw ParameterError("annulus_profile: need 0 < r0 < r1 <= L/2");
  }
  const Field ev = exp_field(v);
  std::vector<std::pair<double, double>> out;
  double inner = r0;
  double inner_mass = ball_mass(ev, center, inner);
  while (2.0 * inner <= r1 * (1.0 + 1e-12)) {
    const double outer = std::min(2.0 * inner, 0.5 * v.grid().side_length());
    const double outer_mass = ball_mass(ev, center, outer);
    out.emplace_back(outer, outer_mass - inner_mass);
    inner = outer;
    inner_mass = outer_mass;
  }
  return out;
}

namespace detail {

inline double masked_ball(const TorusGrid& grid, const std::vector<double>& density, const Point& c, double r) {
  double s = 0.0;
  detail::for_each_in_ball(grid, c, r, [&](std::size_t k) { s += density[k]; });
  return grid.cell_area() * s;
}

/// Radius at which the ball around c first holds half of `target`.
inline double half_mass_radius(const TorusGrid& grid, const std::vector<double>& density, const Point& c,
                               double r_max, double target) {
  std::vector<std::pair<double, double>> samples;
  const double L = grid.side_length();
  detail::for_each_in_ball(grid, c, r_max, [&](std::size_t k) {
    const Point q = grid_point(grid, k);
    samples.emplace_back(std::hypot(min_image(q.x - c.x, L), min_image(q.y - c.y, L)), density[k]);
  });
  std::sort(samples.begin(), samples.end());
  double acc = 0.0;
  for (const auto& [d, m] : samples) {
    acc += grid.cell_area() * m;
    if (acc >= 0.5 * target) return d;
  }
  return r_max;
}

}  // namespace detail

/// Greedy bubble extraction: take the peak of e^v, grow R until the dyadic
/// annulus B_2R \ B_R carries less than annulus_ratio of B_R, record the mass
/// of B_2R, mask B_2R and repeat while the unmasked share exceeds
/// residual_fraction and at most floor(rho / 8 pi) + 1 bubbles were found.
[[nodiscard]] inline BubbleReport extract_bubbles(const Field& v, const ProblemData& p,
                                                  const std::optional<Field>& h = std::nullopt,
                                                  const ConcentrationConfig& cfg = {}) {
  const TorusGrid& grid = v.grid();
  const double total = volume(v);
  const double cell = grid.cell_area();
  const double r_cap = 0.25 * grid.side_length();
  const double floor_density = std::exp(cfg.mask_floor);
  const auto max_regular = static_cast<std::size_t>(std::max(0.0, std::floor(p.rho() / (8.0 * kPi))));

  std::vector<double> density(v.size());
  std::transform(v.values().begin(), v.values().end(), density.begin(), [](double x) { return std::exp(x); });
  auto unmasked_share = [&] {
    return cell * std::accumulate(density.begin(), density.end(), 0.0) / total;
  };

  BubbleReport report;
  double share = unmasked_share();
  while (share > cfg.residual_fraction && report.bubbles.size() <= max_regular) {
    const auto peak = static_cast<std::size_t>(std::max_element(density.begin(), density.end()) - density.begin());
    const Point c = grid_point(grid, peak);
    double R = grid.spacing();
    bool found = false;
    while (R <= r_cap) {
      const double inner = detail::masked_ball(grid, density, c, R);
      const double outer = detail::masked_ball(grid, density, c, 2.0 * R);
      if (outer - inner < cfg.annulus_ratio * inner) {
        found = true;
        break;
      }
      R *= cfg.growth;
    }
    if (!found) break;

    Bubble b;
    b.center = c;
    b.detection_radius = R;
    b.local_mass = detail::masked_ball(grid, density, c, 2.0 * R);
    b.scale = std::max(detail::half_mass_radius(grid, density, c, 2.0 * R, b.local_mass), 0.5 * grid.spacing());
    b.scale = std::min(b.scale, b.detection_radius);
    b.quantized_fraction = p.rho() * b.local_mass / (8.0 * kPi * cfg.normalization);
    report.bubbles.push_back(b);
    detail::for_each_in_ball(grid, c, 2.0 * R, [&](std::size_t k) { density[k] = floor_density; });
    share = unmasked_share();
  }

  report.concentrated = !report.bubbles.empty();
  report.residual_mass_fraction = report.concentrated ? std::clamp(share, 0.0, 1.0) : 1.0;
  report.inconsistent = report.bubbles.size() > max_regular;
  for (std::size_t i = 0; i < report.bubbles.size(); ++i) {
    for (std::size_t j = i + 1; j < report.bubbles.size(); ++j) {
      const auto& bi = report.bubbles[i];
      const auto& bj = report.bubbles[j];
      const double d = periodic_distance(grid, bi.center, bj.center);
      const double ratio = std::max(bi.detection_radius, bj.detection_radius) / d;
      if (!(ratio < cfg.separation_max)) report.separation_ok = false;
    }
  }
  if (h) report.h_n_l2 = dissipation(v, *h);
  return report;
}

[[nodiscard]] inline nlohmann::json to_json(const BubbleReport& r) {
  nlohmann::json bubbles = nlohmann::json::array();
  for (const auto& b : r.bubbles) {
    bubbles.push_back({{"cx", b.center.x},
                       {"cy", b.center.y},
                       {"scale", b.scale},
                       {"radius", b.detection_radius},
                       {"mass", b.local_mass},
                       {"quantized_fraction", b.quantized_fraction}});
  }
  return {{"bubbles", std::move(bubbles)},
          {"residual_mass_fraction", r.residual_mass_fraction},
          {"separation_ok", r.separation_ok},
          {"h_n_l2", r.h_n_l2}};
}

// ---------------------------------------------------------------------------
// Chen-Li profile
// ---------------------------------------------------------------------------

/// 2 log(2 lambda / (1 + lambda^2 |x - x0|^2)) + log(2 / rho), with r = |x - x0|.
[[nodiscard]] inline double chen_li_profile(double lambda, double rho, double r) {
  return 2.0 * std::log(2.0 * lambda / (1.0 + lambda * lambda * r * r)) + std::log(2.0 / rho);
}

/// int_{|x - x0| <= radius} rho e^{profile} dx by composite Simpson in the
/// radial variable (the profile is radial, so the angle integrates exactly).
[[nodiscard]] inline double chen_li_mass(double lambda, double rho, double radius, int panels = 4096) {
  auto integrand = [&](double r) { return 2.0 * kPi * r * rho * std::exp(chen_li_profile(lambda, rho, r)); };
  const double hstep = radius / panels;
  double s = integrand(0.0) + integrand(radius);
  for (int i = 1; i < panels; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * integrand(i * hstep);
  return s * hstep / 3.0;
}

struct ChenLiFit {
  double lambda = 0.0;
  double x0 = 0.0;  ///< center in window (xi) coordinates
  double y0 = 0.0;
  double shift = 0.0;  ///< additive constant absorbed by the fit
  double rms_error = 0.0;
  double mass_check = 0.0;  ///< int over |xi - x0| <= half width of rho e^{profile}
  int iterations = 0;
};

class FitFailure : public Error {
public:
  FitFailure(const std::string& what, ChenLiFit initial) : Error(what), initial_(initial) {}
  [[nodiscard]] const ChenLiFit& initial() const noexcept { return initial_; }

private:
  ChenLiFit initial_;
};

/// Least-squares fit of the Chen-Li profile plus a constant to an m x m
/// window sampled on [-W, W]^2 (row-major, first index along x). Gauss-Newton
/// in (log lambda, x0, y0, c), initialized from the peak location and the
/// discrete Laplacian at the peak (-8 lambda^2 for the exact profile).
[[nodiscard]] inline ChenLiFit chen_li_fit(const std::vector<double>& window, double xi_half_width, double rho) {
  const auto m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(window.size()))));
  if (m < 5 || static_cast<std::size_t>(m) * m != window.size()) {
    throw ParameterError("chen_li_fit: window must be square with at least 5 x 5 samples");
  }
  if (!(xi_half_width > 0.0) || !(rho > 0.0)) {
    throw ParameterError("chen_li_fit: need positive half width and rho");
  }
  const double step = 2.0 * xi_half_width / (m - 1);
  auto xi = [&](int a) { return -xi_half_width + a * step; };
  auto at = [&](int a, int b) { return window[static_cast<std::size_t>(a) * m + b]; };

  // Moment-style initialization.
  const auto peak = static_cast<int>(std::max_element(window.begin(), window.end()) - window.begin());
  const int pa = std::clamp(peak / m, 1, m - 2);
  const int pb = std::clamp(peak % m, 1, m - 2);
  const double lap = (at(pa + 1, pb) + at(pa - 1, pb) + at(pa, pb + 1) + at(pa, pb - 1) - 4.0 * at(pa, pb)) /
                     (step * step);
  double lambda0 = lap < 0.0 ? std::sqrt(-lap / 8.0) : 1.0 / xi_half_width;
  // Refine the peak location with a parabola through the neighbors.
  auto vertex = [](double fm, double f0, double fp) {
    const double denom = fm - 2.0 * f0 + fp;
    return denom < 0.0 ? std::clamp(0.5 * (fm - fp) / denom, -0.5, 0.5) : 0.0;
  };
  double x0 = xi(pa) + step * vertex(at(pa - 1, pb), at(pa, pb), at(pa + 1, pb));
  double y0 = xi(pb) + step * vertex(at(pa, pb - 1), at(pa, pb), at(pa, pb + 1));
  double shift = at(pa, pb) - chen_li_profile(lambda0, rho, std::hypot(xi(pa) - x0, xi(pb) - y0));

  auto sse = [&](double s, double cx, double cy, double c) {
    const double lam = std::exp(s);
    double acc = 0.0;
    for (int a = 0; a < m; ++a) {
      for (int b = 0; b < m; ++b) {
        const double r = std::hypot(xi(a) - cx, xi(b) - cy);
        const double e = chen_li_profile(lam, rho, r) + c - at(a, b);
        acc += e * e;
      }
    }
    return acc;
  };

  ChenLiFit init{lambda0, x0, y0, shift, std::sqrt(sse(std::log(lambda0), x0, y0, shift) / (m * m)), 0.0, 0};
  Eigen::Vector4d theta(std::log(lambda0), x0, y0, shift);
  double current = sse(theta[0], theta[1], theta[2], theta[3]);
  int it = 0;
  for (; it < 200; ++it) {
    const double lam = std::exp(theta[0]);
    const double l2 = lam * lam;
    Eigen::Matrix4d JtJ = Eigen::Matrix4d::Zero();
    Eigen::Vector4d Jtr = Eigen::Vector4d::Zero();
    for (int a = 0; a < m; ++a) {
      for (int b = 0; b < m; ++b) {
        const double dx = xi(a) - theta[1];
        const double dy = xi(b) - theta[2];
        const double q = dx * dx + dy * dy;
        const double D = 1.0 + l2 * q;
        const double res = chen_li_profile(lam, rho, std::sqrt(q)) + theta[3] - at(a, b);
        const Eigen::Vector4d g(2.0 - 4.0 * l2 * q / D, 4.0 * l2 * dx / D, 4.0 * l2 * dy / D, 1.0);
        JtJ.noalias() += g * g.transpose();
        Jtr.noalias() += g * res;
      }
    }
    const Eigen::Vector4d delta = JtJ.ldlt().solve(-Jtr);
    if (!delta.allFinite()) throw FitFailure("chen_li_fit: singular normal equations", init);
    double t = 1.0;
    bool improved = false;
    for (int k = 0; k < 40; ++k, t *= 0.5) {
      const Eigen::Vector4d trial = theta + t * delta;
      const double value = sse(trial[0], trial[1], trial[2], trial[3]);
      if (std::isfinite(value) && value <= current) {
        theta = trial;
        improved = value < current;
        current = value;
        break;
      }
    }
    if (!improved || delta.norm() < 1e-13 * (1.0 + theta.norm())) {
      ++it;
      break;
    }
  }
  if (!theta.allFinite() || theta[0] > 700.0) throw FitFailure("chen_li_fit: Gauss-Newton diverged", init);

  ChenLiFit fit;
  fit.lambda = std::exp(theta[0]);
  fit.x0 = theta[1];
  fit.y0 = theta[2];
  fit.shift = theta[3];
  fit.rms_error = std::sqrt(current / (m * m));
  fit.mass_check = chen_li_mass(fit.lambda, rho, xi_half_width);
  fit.iterations = it;
  return fit;
}

}  // namespace meanflow
