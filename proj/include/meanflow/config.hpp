#pragma once

// Experiment configuration and its TOML form. Keys mirror the field names;
// unknown keys are rejected so that typos do not silently fall back to
// defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <tomlplusplus/toml.hpp>

#include "meanflow/concentration.hpp"
#include "meanflow/flow.hpp"
#include "meanflow/generators.hpp"
#include "meanflow/stationary.hpp"

namespace meanflow {

enum class ExperimentKind {
  FixedPoint,
  SubcriticalConverge,
  SupercriticalBounded,
  SupercriticalDiverge,
  QuantizationAudit,
  ContinuityProbe,
};

[[nodiscard]] inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::FixedPoint: return "fixed_point";
    case ExperimentKind::SubcriticalConverge: return "subcritical_converge";
    case ExperimentKind::SupercriticalBounded: return "supercritical_bounded";
    case ExperimentKind::SupercriticalDiverge: return "supercritical_diverge";
    case ExperimentKind::QuantizationAudit: return "quantization_audit";
    case ExperimentKind::ContinuityProbe: return "continuity_probe";
  }
  return "?";
}

struct QSpec {
  enum class Kind { Constant, CosinePerturbed, FromF };
  Kind kind = Kind::Constant;
  double amplitude = 0.5;  ///< cosine_perturbed: Q = rho/|M| + amplitude cos(mode x)
  int mode = 1;
  double f_amplitude = 1.0;  ///< from_f: f = exp(f_amplitude cos(f_mode x))
  int f_mode = 1;
};

struct InitSpec {
  enum class Kind { Zero, RandomBandlimited, Bubble };
  Kind kind = Kind::Zero;
  int k_max = 4;
  double amplitude = 0.1;
  std::optional<std::uint64_t> seed;  ///< defaults to the experiment seed
  double lambda = 8.0;
  std::optional<Point> center;
  std::optional<double> target_energy;  ///< calibrate lambda instead of using `lambda`
};

struct ProbeSpec {
  double t_end = 1.0;
  std::vector<double> deltas{1e-3, 1e-4};
  int k_max = 3;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::FixedPoint;
  double rho = 4.0 * kPi;
  int grid_n = 64;
  double side_length = 2.0 * kPi;
  std::uint64_t seed = 0;
  FlowConfig flow;
  QSpec q_spec;
  InitSpec init_spec;
  ProbeSpec probe;
  ConcentrationConfig concentration;
  /// Accepted quantized_fraction band for quantization_audit.
  double band_lo = 0.8;
  double band_hi = 1.1;
  NewtonConfig newton;
  double snapshot_interval = 0.1;
  std::filesystem::path out_dir = "out";

  void validate() const {
    if (grid_n < 32 || grid_n % 2 != 0) throw ParameterError("grid_n must be even and >= 32");
    if (!(side_length > 0.0)) throw ParameterError("side_length must be positive");
    if (!std::isfinite(rho)) throw ParameterError("rho must be finite");
    if (!(snapshot_interval > 0.0)) throw ParameterError("snapshot_interval must be positive");
    if (!(band_lo < band_hi)) throw ParameterError("band must satisfy lo < hi");
    if (!(probe.t_end > 0.0) || probe.deltas.empty()) throw ParameterError("probe needs t_end > 0 and deltas");
    if (init_spec.kind == InitSpec::Kind::Bubble && !(init_spec.lambda >= 1.0)) {
      throw ParameterError("bubble lambda must be >= 1");
    }
    flow.validate();
  }
};

namespace detail {

class TableReader {
public:
  TableReader(const toml::table& table, std::string path) : table_(table), path_(std::move(path)) {}

  template <class T>
  std::optional<T> get(std::string_view key) {
    seen_.insert(std::string(key));
    const toml::node* node = table_.get(key);
    if (!node) return std::nullopt;
    std::optional<T> value;
    if constexpr (std::is_same_v<T, double>) {
      if (auto d = node->value<double>()) value = *d;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (node->is_boolean()) value = node->value<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (node->is_string()) value = node->value<std::string>();
    } else {
      if (node->is_integer()) value = static_cast<T>(*node->value<std::int64_t>());
    }
    if (!value) throw ParameterError("config key " + qualified(key) + " has the wrong type");
    return value;
  }

  template <class T>
  void read(std::string_view key, T& target) {
    if (auto v = get<T>(key)) target = *v;
  }

  std::optional<std::vector<double>> get_reals(std::string_view key) {
    seen_.insert(std::string(key));
    const toml::node* node = table_.get(key);
    if (!node) return std::nullopt;
    const toml::array* arr = node->as_array();
    if (!arr) throw ParameterError("config key " + qualified(key) + " must be an array");
    std::vector<double> out;
    for (const auto& el : *arr) {
      auto d = el.value<double>();
      if (!d) throw ParameterError("config key " + qualified(key) + " must hold numbers");
      out.push_back(*d);
    }
    return out;
  }

  std::optional<TableReader> sub(std::string_view key) {
    seen_.insert(std::string(key));
    const toml::node* node = table_.get(key);
    if (!node) return std::nullopt;
    const toml::table* t = node->as_table();
    if (!t) throw ParameterError("config key " + qualified(key) + " must be a table");
    return TableReader(*t, qualified(key));
  }

  void finish() const {
    for (const auto& [k, v] : table_) {
      if (!seen_.count(std::string(k.str()))) {
        throw ParameterError("unknown config key " + qualified(k.str()));
      }
    }
  }

private:
  std::string qualified(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const toml::table& table_;
  std::string path_;
  std::set<std::string> seen_;
};

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::FixedPoint, ExperimentKind::SubcriticalConverge, ExperimentKind::SupercriticalBounded,
                 ExperimentKind::SupercriticalDiverge, ExperimentKind::QuantizationAudit,
                 ExperimentKind::ContinuityProbe}) {
    if (s == to_string(k)) return k;
  }
  throw ParameterError("unknown experiment '" + s + "'");
}

inline void read_flow(TableReader& t, FlowConfig& f) {
  t.read("dt_init", f.dt_init);
  t.read("dt_min", f.dt_min);
  t.read("dt_max", f.dt_max);
  if (auto s = t.get<std::string>("scheme")) {
    if (*s == "linearly_implicit") {
      f.scheme = StepScheme::LinearlyImplicit;
    } else if (*s == "explicit_rk4") {
      f.scheme = StepScheme::ExplicitRK4;
    } else {
      throw ParameterError("unknown flow.scheme '" + *s + "'");
    }
  }
  t.read("imex_tolerance", f.imex_tolerance);
  t.read("max_inner_iters", f.max_inner_iters);
  t.read("t_end", f.t_end);
  t.read("stop_residual", f.stop_residual);
  t.read("stop_energy", f.stop_energy);
  t.read("volume_drift_max", f.volume_drift_max);
  t.read("record_interval", f.record_interval);
  t.read("adaptive", f.adaptive);
  t.read("grow_after", f.grow_after);
  t.read("grow_factor", f.grow_factor);
  t.read("volume_projection", f.volume_projection);
  t.read("resolution_mass_fraction", f.resolution_mass_fraction);
  t.finish();
}

inline void read_q_spec(TableReader& t, QSpec& q) {
  const std::string kind = t.get<std::string>("kind").value_or("constant");
  if (kind == "constant") {
    q.kind = QSpec::Kind::Constant;
  } else if (kind == "cosine_perturbed") {
    q.kind = QSpec::Kind::CosinePerturbed;
    t.read("amplitude", q.amplitude);
    t.read("mode", q.mode);
  } else if (kind == "from_f") {
    q.kind = QSpec::Kind::FromF;
    if (auto f = t.sub("f_spec")) {
      const std::string fk = f->get<std::string>("kind").value_or("exp_cosine");
      if (fk != "exp_cosine") throw ParameterError("q_spec.f_spec.kind must be 'exp_cosine'");
      f->read("amplitude", q.f_amplitude);
      f->read("mode", q.f_mode);
      f->finish();
    }
  } else {
    throw ParameterError("unknown q_spec.kind '" + kind + "'");
  }
  t.finish();
}

inline void read_init_spec(TableReader& t, InitSpec& s) {
  const std::string kind = t.get<std::string>("kind").value_or("zero");
  if (kind == "zero") {
    s.kind = InitSpec::Kind::Zero;
  } else if (kind == "random_bandlimited") {
    s.kind = InitSpec::Kind::RandomBandlimited;
    t.read("k_max", s.k_max);
    t.read("amplitude", s.amplitude);
    if (auto seed = t.get<std::int64_t>("seed")) s.seed = static_cast<std::uint64_t>(*seed);
  } else if (kind == "bubble") {
    s.kind = InitSpec::Kind::Bubble;
    t.read("lambda", s.lambda);
    if (auto c = t.get_reals("center")) {
      if (c->size() != 2) throw ParameterError("init_spec.center must be [x, y]");
      s.center = Point{(*c)[0], (*c)[1]};
    }
    if (auto e = t.get<double>("target_energy")) s.target_energy = *e;
  } else {
    throw ParameterError("unknown init_spec.kind '" + kind + "'");
  }
  t.finish();
}

inline void read_newton(TableReader& t, NewtonConfig& n) {
  t.read("max_iters", n.max_iters);
  t.read("tol", n.tol);
  t.read("damping", n.damping);
  t.read("krylov_restart", n.krylov_restart);
  t.read("krylov_max_iters", n.krylov_max_iters);
  if (auto g = t.get<std::string>("gauge")) {
    if (*g == "zero_mean") {
      n.gauge = Gauge::ZeroMean;
    } else if (*g == "fixed_volume") {
      n.gauge = Gauge::FixedVolume;
    } else {
      throw ParameterError("unknown newton.gauge '" + *g + "'");
    }
  }
  t.read("target_volume", n.target_volume);
  t.finish();
}

}  // namespace detail

/// Builds an ExperimentConfig from TOML text. `rho` may be given directly or
/// as `rho_over_pi`.
[[nodiscard]] inline ExperimentConfig parse_config(std::string_view text, std::string_view source = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << e;
    throw ParameterError("TOML parse error: " + os.str());
  }
  ExperimentConfig cfg;
  detail::TableReader t(root, "");
  if (auto e = t.get<std::string>("experiment")) {
    cfg.experiment = detail::parse_experiment_kind(*e);
  } else {
    throw ParameterError("config key 'experiment' is required");
  }
  const auto rho = t.get<double>("rho");
  const auto rho_over_pi = t.get<double>("rho_over_pi");
  if (rho && rho_over_pi) throw ParameterError("give either rho or rho_over_pi, not both");
  if (rho) cfg.rho = *rho;
  if (rho_over_pi) cfg.rho = *rho_over_pi * kPi;
  t.read("grid_n", cfg.grid_n);
  t.read("side_length", cfg.side_length);
  if (auto s = t.get<std::int64_t>("seed")) cfg.seed = static_cast<std::uint64_t>(*s);
  t.read("snapshot_interval", cfg.snapshot_interval);
  if (auto o = t.get<std::string>("out_dir")) cfg.out_dir = *o;
  if (auto f = t.sub("flow")) detail::read_flow(*f, cfg.flow);
  if (auto q = t.sub("q_spec")) detail::read_q_spec(*q, cfg.q_spec);
  if (auto i = t.sub("init_spec")) detail::read_init_spec(*i, cfg.init_spec);
  if (auto p = t.sub("probe")) {
    p->read("t_end", cfg.probe.t_end);
    p->read("k_max", cfg.probe.k_max);
    if (auto d = p->get_reals("deltas")) cfg.probe.deltas = *d;
    p->finish();
  }
  if (auto c = t.sub("concentration")) {
    c->read("annulus_ratio", cfg.concentration.annulus_ratio);
    c->read("residual_fraction", cfg.concentration.residual_fraction);
    c->read("growth", cfg.concentration.growth);
    c->read("separation_max", cfg.concentration.separation_max);
    c->read("mask_floor", cfg.concentration.mask_floor);
    c->read("normalization", cfg.concentration.normalization);
    if (auto b = c->get_reals("band")) {
      if (b->size() != 2) throw ParameterError("concentration.band must be [lo, hi]");
      cfg.band_lo = (*b)[0];
      cfg.band_hi = (*b)[1];
    }
    c->finish();
  }
  if (auto n = t.sub("newton")) detail::read_newton(*n, cfg.newton);
  t.finish();
  cfg.validate();
  return cfg;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

}  // namespace meanflow
