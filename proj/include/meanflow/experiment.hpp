#pragma once

// Experiment drivers: problem and initial data from a config, flow runs with
// CSV / snapshot / verdict output, the continuity probe and the stationary
// solve.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "meanflow/concentration.hpp"
#include "meanflow/config.hpp"
#include "meanflow/flow.hpp"
#include "meanflow/generators.hpp"
#include "meanflow/snapshot.hpp"
#include "meanflow/stationary.hpp"

namespace meanflow {

inline constexpr const char* kCsvHeader = "t,J,volume_drift,dissipation,v_max,v_min,residual,r_min,dt";

enum ExitCode : int { kExitExpected = 0, kExitError = 1, kExitContrary = 2 };

/// Shortest round-trip decimal form; '.' separator regardless of locale.
[[nodiscard]] inline std::string format_real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

[[nodiscard]] inline ProblemData make_problem(const ExperimentConfig& cfg) {
  const TorusGrid grid(cfg.grid_n, cfg.side_length);
  switch (cfg.q_spec.kind) {
    case QSpec::Kind::Constant:
      return ProblemData::constant(grid, cfg.rho);
    case QSpec::Kind::CosinePerturbed:
      return ProblemData(cfg.rho, cosine_perturbed_q(grid, cfg.rho, cfg.q_spec.amplitude, cfg.q_spec.mode));
    case QSpec::Kind::FromF: {
      const Field f = exp_cosine_weight(grid, cfg.q_spec.f_amplitude, cfg.q_spec.f_mode);
      const ProblemData base(cfg.rho, Field(grid, cfg.rho / grid.area()), f);
      return ProblemData(cfg.rho, change_of_variables(base, Field(grid, 0.0)).Q, f);
    }
  }
  throw ParameterError("unknown q_spec kind");
}

[[nodiscard]] inline Field make_initial(const ExperimentConfig& cfg, const ProblemData& p) {
  const TorusGrid& grid = p.grid();
  const InitSpec& s = cfg.init_spec;
  switch (s.kind) {
    case InitSpec::Kind::Zero:
      return Field(grid, 0.0);
    case InitSpec::Kind::RandomBandlimited: {
      SplitMix64 rng = rng_stream(s.seed.value_or(cfg.seed), RngStream::InitialData);
      return random_bandlimited(grid, s.k_max, s.amplitude, rng);
    }
    case InitSpec::Kind::Bubble: {
      const Point c = s.center ? Point::on(grid, s.center->x, s.center->y) : default_bubble_center(grid);
      if (s.target_energy) return calibrate_negative_energy(p, *s.target_energy, c).v;
      return make_bubble_data(p, s.lambda, c);
    }
  }
  throw ParameterError("unknown init_spec kind");
}

namespace detail {

inline void prepare_out_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "snapshots", ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".write_test";
  {
    std::ofstream out(probe, std::ios::binary);
    if (!out) throw IoError("output directory " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string csv_row(const DiagnosticsRecord& r) {
  std::string line;
  for (double x : {r.t, r.J, r.volume_rel_drift, r.dissipation, r.v_max, r.v_min, r.residual, r.r_min, r.dt}) {
    if (!line.empty()) line += ',';
    line += format_real(x);
  }
  line += '\n';
  return line;
}

inline std::string snapshot_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snap_%06zu.mfld", index);
  return buf;
}

}  // namespace detail

struct ExperimentReport {
  int exit_code = kExitError;
  nlohmann::json verdict;
};

/// Flow run with CSV, snapshots and a bubble report on concentration.
[[nodiscard]] inline ExperimentReport run_flow_experiment(const ExperimentConfig& cfg) {
  const ProblemData p = make_problem(cfg);
  const Field v0 = make_initial(cfg, p);
  const auto& dir = cfg.out_dir;
  detail::prepare_out_dir(dir);

  std::ofstream csv(dir / "timeseries.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write " + (dir / "timeseries.csv").string());
  csv << kCsvHeader << '\n';

  double next_snapshot = 0.0;
  std::size_t snapshot_index = 0;
  double min_J = std::numeric_limits<double>::infinity();
  auto sink = [&](const DiagnosticsRecord& rec, const FlowState& s) {
    csv << detail::csv_row(rec);
    min_J = std::min(min_J, rec.J);
    if (s.t >= next_snapshot * (1.0 - 1e-12)) {
      write_snapshot(dir / "snapshots" / detail::snapshot_name(snapshot_index++), s.v, s.t, p.rho());
      while (next_snapshot <= s.t * (1.0 + 1e-12)) next_snapshot += cfg.snapshot_interval;
    }
  };
  const RunOutcome out = run(p, v0, cfg.flow, sink);
  csv.flush();
  if (!csv) throw IoError("write failed for timeseries.csv");

  const FlowState& s = out.state;
  write_snapshot(dir / "final.mfld", s.v, s.t, p.rho());

  nlohmann::json verdict{{"experiment", to_string(cfg.experiment)},
                         {"outcome", to_string(out.outcome)},
                         {"cause", to_string(out.cause)},
                         {"t", s.t},
                         {"steps", s.steps_taken},
                         {"rejected_steps", s.rejected_steps},
                         {"J", out.last.J},
                         {"min_J", min_J},
                         {"residual", out.last.residual},
                         {"detail", out.detail}};
  verdict["residual_or_J"] = out.outcome == Outcome::Converged ? out.last.residual : out.last.J;

  const bool concentrated = out.outcome == Outcome::BlowUpSuspected || out.outcome == Outcome::Diverged;
  std::optional<BubbleReport> bubbles;
  if (concentrated) {
    const Field h = -1.0 * rhs(p, s.v);
    write_snapshot(dir / "blowup.mfld", s.v, s.t, p.rho());
    write_snapshot(dir / "blowup_h.mfld", h, s.t, p.rho());
    bubbles = extract_bubbles(s.v, p, h, cfg.concentration);
    verdict["bubble_report"] = to_json(*bubbles);
  }

  bool expected = false;
  switch (cfg.experiment) {
    case ExperimentKind::FixedPoint:
      expected = out.outcome == Outcome::Converged;
      break;
    case ExperimentKind::SubcriticalConverge:
      expected = out.outcome == Outcome::Converged;
      if (expected) {
        try {
          const NewtonResult nr = newton_solve(p, s.v, cfg.newton);
          verdict["newton_linf"] = max_abs_difference(nr.v, s.v - s.v.mean());
        } catch (const NewtonFailure& e) {
          verdict["newton_error"] = e.what();
        }
      }
      break;
    case ExperimentKind::SupercriticalBounded:
      // Either behavior is admissible; the verdict says which one occurred.
      expected = out.outcome != Outcome::TimeExhausted;
      verdict["bounded_energy_violated"] = concentrated;
      break;
    case ExperimentKind::SupercriticalDiverge:
      expected = concentrated && bubbles && !bubbles->bubbles.empty();
      break;
    case ExperimentKind::QuantizationAudit:
      expected = concentrated && bubbles && !bubbles->bubbles.empty() &&
                 std::all_of(bubbles->bubbles.begin(), bubbles->bubbles.end(), [&](const Bubble& b) {
                   return b.quantized_fraction >= cfg.band_lo && b.quantized_fraction <= cfg.band_hi;
                 });
      verdict["band"] = {cfg.band_lo, cfg.band_hi};
      break;
    case ExperimentKind::ContinuityProbe:
      throw ParameterError("continuity_probe is not a flow experiment");
  }
  verdict["expected"] = expected;
  detail::write_json(dir / "verdict.json", verdict);
  return {expected ? kExitExpected : kExitContrary, verdict};
}

struct ContinuityReport {
  double t_end = 0.0;
  std::vector<double> deltas;
  std::vector<double> ratios;  ///< ||v_delta(T) - v(T)||_inf / delta
  double quotient = 0.0;       ///< ratios[0] / ratios[1]
  double kappa = 0.0;          ///< sup over the base run of ||e^{-v}(Lap v - Q)||_inf + |rho| / int e^v
  double growth_bound = 0.0;   ///< e^{kappa T}
};

namespace detail {

/// Fixed-step integration to t_end; tracks the linear growth rate kappa.
inline Field integrate_fixed(const ProblemData& p, const Field& v0, FlowConfig flow, double t_end,
                             double* kappa = nullptr) {
  flow.adaptive = false;
  flow.t_end = t_end;
  flow.validate();
  FlowState s = FlowState::initial(p, v0, flow);
  auto rate = [&](const Field& v) {
    const Field lap = laplacian(v);
    double sup = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) sup = std::max(sup, std::abs(std::exp(-v[k]) * (lap[k] - p.Q()[k])));
    return sup + std::abs(p.rho()) / volume(v);
  };
  double k = rate(s.v);
  while (s.t < t_end * (1.0 - 1e-14)) {
    s = step(p, s, flow, t_end - s.t);
    if (kappa) k = std::max(k, rate(s.v));
  }
  if (kappa) *kappa = k;
  return s.v;
}

}  // namespace detail

/// Runs the flow from v0 and v0 + delta phi for each delta, phi a fixed
/// band-limited field of sup norm 1, and compares the states at t_end.
[[nodiscard]] inline ContinuityReport continuity_probe(const ExperimentConfig& cfg) {
  const ProblemData p = make_problem(cfg);
  const Field v0 = make_initial(cfg, p);
  SplitMix64 rng = rng_stream(cfg.seed, RngStream::Perturbation);
  const Field phi = random_bandlimited(p.grid(), cfg.probe.k_max, 1.0, rng);

  ContinuityReport r;
  r.t_end = cfg.probe.t_end;
  r.deltas = cfg.probe.deltas;
  const Field base = detail::integrate_fixed(p, v0, cfg.flow, r.t_end, &r.kappa);
  for (double delta : r.deltas) {
    const Field moved = detail::integrate_fixed(p, v0 + delta * phi, cfg.flow, r.t_end);
    const double diff = max_abs_difference(moved, base);
    r.ratios.push_back(delta == 0.0 ? diff : diff / delta);
  }
  r.quotient = r.ratios.size() >= 2 && r.ratios[1] != 0.0 ? r.ratios[0] / r.ratios[1] : 0.0;
  r.growth_bound = std::exp(r.kappa * r.t_end);
  return r;
}

[[nodiscard]] inline nlohmann::json to_json(const ContinuityReport& r) {
  return {{"t_end", r.t_end},   {"deltas", r.deltas}, {"ratios", r.ratios},
          {"quotient", r.quotient}, {"kappa", r.kappa}, {"growth_bound", r.growth_bound}};
}

[[nodiscard]] inline ExperimentReport run_continuity_experiment(const ExperimentConfig& cfg) {
  detail::prepare_out_dir(cfg.out_dir);
  const ContinuityReport r = continuity_probe(cfg);
  const bool expected = r.quotient >= 2.0 / 3.0 && r.quotient <= 1.5 &&
                        std::all_of(r.ratios.begin(), r.ratios.end(), [&](double x) { return x <= r.growth_bound; });
  nlohmann::json verdict{{"experiment", to_string(cfg.experiment)},
                         {"outcome", expected ? "Stable" : "Unstable"},
                         {"residual_or_J", r.quotient},
                         {"probe", to_json(r)},
                         {"expected", expected}};
  detail::write_json(cfg.out_dir / "verdict.json", verdict);
  return {expected ? kExitExpected : kExitContrary, verdict};
}

[[nodiscard]] inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.experiment == ExperimentKind::ContinuityProbe) return run_continuity_experiment(cfg);
  return run_flow_experiment(cfg);
}

/// Newton solve from the configured initial data; writes stationary.mfld and
/// stationary.json.
[[nodiscard]] inline ExperimentReport run_stationary(const ExperimentConfig& cfg) {
  cfg.validate();
  const ProblemData p = make_problem(cfg);
  const Field v0 = make_initial(cfg, p);
  detail::prepare_out_dir(cfg.out_dir);
  nlohmann::json report{{"rho", p.rho()}};
  int code = kExitExpected;
  NewtonResult result{v0, {}, 0};
  try {
    result = newton_solve(p, v0, cfg.newton);
    report["outcome"] = "Converged";
  } catch (const DegeneracyError& e) {
    result = e.best();
    report["outcome"] = "Degenerate";
    report["detail"] = e.what();
    code = kExitContrary;
  } catch (const NewtonFailure& e) {
    result = e.best();
    report["outcome"] = "NotConverged";
    report["detail"] = e.what();
    code = kExitContrary;
  }
  report["iterations"] = result.iterations;
  report["residual_history"] = result.residual_history;
  report["residual"] = residual_norm(p, result.v);
  report["J"] = energy_J(p, result.v);
  write_snapshot(cfg.out_dir / "stationary.mfld", result.v, 0.0, p.rho());
  detail::write_json(cfg.out_dir / "stationary.json", report);
  return {code, report};
}

}  // namespace meanflow
