// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "meanflow/meanflow.hpp"
#include "oracles.hpp"

using namespace meanflow;

namespace {

const double kTwoPi = 2.0 * kPi;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Worst max-principle margin relative to its bound, over every record after t = 0.
struct MarginAudit {
  double worst = std::numeric_limits<double>::infinity();
  std::size_t records = 0;
  void add(const ProblemData& p, double a, const DiagnosticsRecord& r0, const DiagnosticsRecord& r) {
    if (!(r.t > r0.t)) return;  // zero by definition
    worst = std::min(worst, max_principle_margin(p, a, r0, r) / max_principle_bound(p, a, r0, r));
    ++records;
  }
};

MarginAudit g_margins;

ProblemData subcritical_problem() {
  const TorusGrid g(64, kTwoPi);
  return ProblemData(4 * kPi, cosine_perturbed_q(g, 4 * kPi, 0.5, 1));
}

// Subcritical run shared by criteria 2, 3, 4 and 6.
struct SubcriticalRun {
  std::vector<DiagnosticsRecord> records;
  std::vector<FlowState> unit_states;  // first records at or after t = 0, 1, ..., 5
  std::optional<RunOutcome> outcome;
  double max_step_defect = 0.0;
  double seconds = 0.0;
};

const SubcriticalRun& subcritical_run() {
  static const SubcriticalRun run_data = [] {
    SubcriticalRun s;
    const ProblemData p = subcritical_problem();
    FlowConfig c;
    c.t_end = 50.0;
    c.record_interval = 0.1;
    std::optional<DiagnosticsRecord> r0;
    const auto t0 = std::chrono::steady_clock::now();
    s.outcome = run(p, Field(p.grid(), 0.0), c, [&](const DiagnosticsRecord& r, const FlowState& st) {
      if (!r0) r0 = r;
      s.records.push_back(r);
      g_margins.add(p, st.a, *r0, r);
      s.max_step_defect = std::max(s.max_step_defect, std::abs(st.last_volume_defect));
      if (s.unit_states.size() <= 5 && st.t >= static_cast<double>(s.unit_states.size()) - 1e-9) {
        s.unit_states.push_back(st);
      }
    });
    s.seconds = seconds_since(t0);
    return s;
  }();
  return run_data;
}

// Divergence run shared by criteria 7 and 9.
struct DivergenceRun {
  std::optional<RunOutcome> outcome;
  std::optional<ProblemData> problem;
  double J0 = 0.0;
  double lambda = 0.0;
  std::size_t increases = 0;
  std::size_t records = 0;
  double seconds = 0.0;
};

const DivergenceRun& divergence_run() {
  static const DivergenceRun run_data = [] {
    DivergenceRun d;
    const TorusGrid g(128, kTwoPi);
    d.problem.emplace(ProblemData::constant(g, 12 * kPi));
    const ProblemData& p = *d.problem;
    const auto t0 = std::chrono::steady_clock::now();
    const CalibratedData cal = calibrate_negative_energy(p, -200.0);
    d.J0 = cal.energy;
    d.lambda = cal.lambda;
    FlowConfig c;
    c.t_end = 10.0;
    c.dt_init = 1e-4;
    c.dt_max = 1e-2;
    c.record_interval = 0.0;
    std::optional<DiagnosticsRecord> r0;
    double prev = std::numeric_limits<double>::infinity();
    d.outcome = run(p, cal.v, c, [&](const DiagnosticsRecord& r, const FlowState& st) {
      if (!r0) r0 = r;
      g_margins.add(p, st.a, *r0, r);
      if (!(r.J < prev) && d.records > 0) ++d.increases;
      prev = r.J;
      ++d.records;
    });
    d.seconds = seconds_since(t0);
    return d;
  }();
  return run_data;
}

Verdict fixed_point() {
  const TorusGrid g(64, kTwoPi);
  const ProblemData p = ProblemData::constant(g, 4 * kPi);
  const FlowConfig c;
  const auto t0 = std::chrono::steady_clock::now();
  FlowState s = FlowState::initial(p, Field(g, 0.0), c);
  const DiagnosticsRecord r0 = diagnose(p, s);
  while (s.t < 1.0 - 1e-14) {
    s = step(p, s, c, 1.0 - s.t);
    g_margins.add(p, s.a, r0, diagnose(p, s, &r0));
  }
  const double secs = seconds_since(t0);
  const double sup = s.v.sup_norm();
  return {sup <= 1e-10 && secs < 5.0, fmt("||v(1)||_inf = %.2e after %zu steps, %.2f s", sup, s.steps_taken, secs)};
}

Verdict volume_conservation() {
  const auto& s = subcritical_run();
  double worst = 0.0;
  for (const auto& r : s.records) worst = std::max(worst, std::abs(r.volume_rel_drift));
  return {worst <= 1e-7 && s.seconds < 60.0,
          fmt("max |vol/a - 1| = %.2e over %zu records (largest per-step defect before projection %.2e), %.1f s",
              worst, s.records.size(), s.max_step_defect, s.seconds)};
}

Verdict dissipation_identity() {
  const auto& s = subcritical_run();
  const ProblemData p = subcritical_problem();
  if (s.unit_states.size() < 4) return {false, "too few unit-time states"};
  double slope_lo = 1e9, slope_hi = -1e9, C = 0.0;
  for (const FlowState& st : s.unit_states) {
    const double y = diagnose(p, st).dissipation;
    std::vector<double> dts{1e-2, 5e-3, 2.5e-3, 1.25e-3}, err;
    for (double dt : dts) {
      FlowConfig c;
      c.adaptive = false;
      c.dt_init = c.dt_max = dt;
      FlowState from = st;
      from.next_dt = dt;
      const FlowState next = step(p, from, c, dt);
      if (next.last_dt != dt) return {false, "step controller rejected a probe step"};
      err.push_back(std::abs((next.energy - st.energy) / dt + y));
      C = std::max(C, err.back() / dt);
    }
    const double slope = oracle::loglog_slope(dts, err);
    slope_lo = std::min(slope_lo, slope);
    slope_hi = std::max(slope_hi, slope);
  }
  return {slope_lo >= 0.8 && slope_hi <= 1.2,
          fmt("Richardson slopes in [%.3f, %.3f] at %zu states up to t = %.2f, C = %.2f", slope_lo, slope_hi,
              s.unit_states.size(), s.unit_states.back().t, C)};
}

Verdict subcritical_convergence() {
  const auto& s = subcritical_run();
  const RunOutcome& o = *s.outcome;
  const ProblemData p = subcritical_problem();
  const NewtonResult n = newton_solve(p, Field(p.grid(), 0.0));
  const double diff = max_abs_difference(apply_gauge(o.state.v, Gauge::ZeroMean), n.v);
  return {o.outcome == Outcome::Converged && o.last.residual < 1e-8 && diff <= 1e-6,
          fmt("%s at t = %.2f, residual %.2e, |v - v_newton|_inf = %.2e", to_string(o.outcome), o.state.t,
              o.last.residual, diff)};
}

Verdict max_principle() {
  // Runs of criteria 1, 2, 7 feed the audit; make sure they have happened.
  (void)subcritical_run();
  (void)divergence_run();
  return {g_margins.worst >= -1e-3,
          fmt("worst margin / bound = %.3e over %zu records", g_margins.worst, g_margins.records)};
}

Verdict r_min_decay() {
  const auto& s = subcritical_run();
  const ProblemData p = subcritical_problem();
  const double a = s.outcome->state.a;
  double worst = std::numeric_limits<double>::infinity();
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    for (std::size_t j = i + 1; j < s.records.size(); ++j) {
      const double slack = 0.1 * std::abs(s.records[i].r_min);
      worst = std::min(worst, r_min_decay_margin(p.rho(), a, s.records[i], s.records[j]) + slack);
      ++pairs;
    }
  }
  return {worst >= 0.0, fmt("worst slack-adjusted margin %.3e over %zu record pairs", worst, pairs)};
}

Verdict divergence() {
  const auto& d = divergence_run();
  const RunOutcome& o = *d.outcome;
  const bool regime = o.outcome == Outcome::Diverged || o.outcome == Outcome::BlowUpSuspected;
  return {d.J0 <= -200.0 && regime && d.increases == 0 && o.state.t <= 10.0 && d.seconds < 600.0,
          fmt("J0 = %.2f (lambda %.0f), %s (%s) at t = %.4f, J = %.2f, %zu records with %zu non-decreases, %.1f s",
              d.J0, d.lambda, to_string(o.outcome), to_string(o.cause), o.state.t, o.last.J, d.records, d.increases,
              d.seconds)};
}

Verdict synthetic_quantization() {
  const TorusGrid g(512, kTwoPi);
  const double L = g.side_length();
  const double q = 0.25 * g.spacing();
  struct Case {
    double rho;
    std::vector<BubbleSpec> specs;
  };
  const std::vector<Case> cases{
      {12 * kPi, {{40.0, Point::on(g, 0.5 * L + q, 0.5 * L + q)}}},
      {20 * kPi, {{40.0, Point::on(g, 0.25 * L + q, 0.5 * L + q)}, {40.0, Point::on(g, 0.75 * L + q, 0.5 * L + q)}}}};
  bool ok = true;
  std::string detail;
  for (const auto& cs : cases) {
    const ProblemData p = ProblemData::constant(g, cs.rho);
    const BubbleReport r = extract_bubbles(sum_of_bubbles(g, cs.rho, cs.specs, 0.01), p);
    double lo = 1e9, hi = -1e9;
    for (const auto& b : r.bubbles) {
      lo = std::min(lo, b.quantized_fraction);
      hi = std::max(hi, b.quantized_fraction);
    }
    ok = ok && r.bubbles.size() == cs.specs.size() && lo >= 0.95 && hi <= 1.05 && r.residual_mass_fraction < 0.05;
    detail += fmt("k=%zu: %zu found, fractions [%.4f, %.4f], residual %.4f; ", cs.specs.size(), r.bubbles.size(), lo,
                  hi, r.residual_mass_fraction);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Verdict dynamic_quantization() {
  const auto& d = divergence_run();
  const ProblemData& p = *d.problem;
  const Field& v = d.outcome->state.v;
  const BubbleReport r = extract_bubbles(v, p, -1.0 * rhs(p, v));
  bool any = false;
  std::string fr;
  for (const auto& b : r.bubbles) {
    any = any || (b.quantized_fraction >= 0.8 && b.quantized_fraction <= 1.1);
    fr += fmt("%.4f ", b.quantized_fraction);
  }
  return {any, fmt("%zu bubble(s), fractions [ %s], residual %.4f", r.bubbles.size(), fr.c_str(),
                   r.residual_mass_fraction)};
}

Verdict chen_li_mass_check() {
  const double ref = 8 * kPi * 100.0 / 101.0;
  const double rho = 12 * kPi, lambda = 40.0;
  const double radial = chen_li_mass(lambda, rho, 10.0 / lambda);
  const TorusGrid g(512, kTwoPi);
  const Point c = default_bubble_center(g);
  const Field v = make_bubble_data(g, rho, lambda, c);
  const double grid_mass = rho * ball_mass(exp_field(v), c, 10.0 / lambda);
  const ChenLiFit fit = chen_li_fit(rescale_sample(v, c, 1.0 / lambda, 10.0, 81), 10.0, rho);
  const double e1 = std::abs(radial / ref - 1.0), e2 = std::abs(grid_mass / ref - 1.0),
               e3 = std::abs(fit.mass_check / ref - 1.0);
  return {e1 <= 0.01 && e2 <= 0.01 && e3 <= 0.01,
          fmt("radial %.6f, grid %.6f, fitted profile %.6f vs %.6f (rel. errors %.1e, %.1e, %.1e)", radial, grid_mass,
              fit.mass_check, ref, e1, e2, e3)};
}

Verdict gradient_check() {
  const ProblemData p = subcritical_problem();
  double lo = 1e9, hi = -1e9;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SplitMix64 r1 = rng_stream(seed, RngStream::Property);
    SplitMix64 r2 = rng_stream(seed + 1000, RngStream::Property);
    const Field v = random_bandlimited(p.grid(), 4, 1.0, r1);
    const Field phi = random_bandlimited(p.grid(), 4, 1.0, r2);
    const double J0 = energy_J(p, v);
    const double dJ = inner(residual(p, v), phi);
    std::vector<double> eps{1e-2, 1e-3, 1e-4}, err;
    for (double e : eps) err.push_back(std::abs(energy_J(p, v + e * phi) - J0 - e * dJ));
    const double s = oracle::loglog_slope(eps, err);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return {lo >= 1.8 && hi <= 2.2, fmt("slopes in [%.4f, %.4f] over 5 seeds", lo, hi)};
}

Verdict continuity() {
  ExperimentConfig c;
  c.experiment = ExperimentKind::ContinuityProbe;
  c.rho = 4 * kPi;
  c.grid_n = 64;
  c.q_spec.kind = QSpec::Kind::CosinePerturbed;
  c.probe.t_end = 1.0;
  c.probe.deltas = {1e-3, 1e-4};
  const ContinuityReport r = continuity_probe(c);
  const bool stable = r.quotient >= 1.0 / 1.5 && r.quotient <= 1.5;
  return {stable, fmt("ratios %.6f (1e-3), %.6f (1e-4), quotient %.6f, e^{kappa T} = %.3f", r.ratios[0], r.ratios[1],
                      r.quotient, r.growth_bound)};
}

Verdict newton_quadratic() {
  const ProblemData p = subcritical_problem();
  const NewtonConfig cfg;
  const NewtonResult n = newton_solve(p, Field(p.grid(), 0.0), cfg);
  const auto& h = n.residual_history;
  const double C = 1.0;
  double worst = 0.0;
  std::size_t pairs = 0;
  std::string hist;
  for (double x : h) hist += fmt("%.1e ", x);
  for (std::size_t k = 0; k + 1 < h.size(); ++k) {
    // Terminal phase; successors below the solve tolerance sit on the roundoff floor.
    if (h[k] < 1e-3 && h[k + 1] > cfg.tol) {
      worst = std::max(worst, h[k + 1] / (h[k] * h[k]));
      ++pairs;
    }
  }
  return {pairs >= 1 && worst <= C,
          fmt("max r_{k+1}/r_k^2 = %.3f over %zu terminal pairs (C = %.0f); residuals [ %s]", worst, pairs, C,
              hist.c_str())};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "fixed-point preservation", fixed_point},
      {2, "volume conservation", volume_conservation},
      {3, "energy dissipation identity", dissipation_identity},
      {4, "subcritical convergence", subcritical_convergence},
      {5, "maximum-principle bound", max_principle},
      {6, "R_min decay bound", r_min_decay},
      {7, "supercritical divergence", divergence},
      {8, "quantization on synthetics", synthetic_quantization},
      {9, "quantization on dynamic blow-up", dynamic_quantization},
      {10, "Chen-Li truncated mass", chen_li_mass_check},
      {11, "gradient check", gradient_check},
      {12, "continuity in initial data", continuity},
      {13, "Newton quadratic convergence", newton_quadratic},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
