#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "meanflow/meanflow.hpp"

using namespace meanflow;
namespace fs = std::filesystem;

namespace {

const double kTwoPi = 2.0 * kPi;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "meanflow_test_harness" / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MEANFLOW_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig quick_subcritical(const fs::path& out) {
  ExperimentConfig c;
  c.experiment = ExperimentKind::SubcriticalConverge;
  c.rho = 4 * kPi;
  c.grid_n = 32;
  c.q_spec.kind = QSpec::Kind::CosinePerturbed;
  c.init_spec.kind = InitSpec::Kind::RandomBandlimited;
  c.init_spec.amplitude = 0.3;
  c.seed = 17;
  c.flow.t_end = 2.0;
  c.flow.record_interval = 0.05;
  c.snapshot_interval = 0.5;
  c.out_dir = out;
  return c;
}

}  // namespace

TEST(Config, ParsesAllTables) {
  const ExperimentConfig c = parse_config(R"(
experiment = "continuity_probe"
rho_over_pi = 12
grid_n = 96
seed = 42
out_dir = "somewhere"
snapshot_interval = 0.25

[flow]
t_end = 3.0
dt_init = 1e-4
dt_min = 1e-9
dt_max = 1e-2
scheme = "explicit_rk4"
record_interval = 0.5

[q_spec]
kind = "from_f"
[q_spec.f_spec]
kind = "exp_cosine"
amplitude = 0.7
mode = 2

[init_spec]
kind = "bubble"
lambda = 16.0
center = [1.0, 2.0]

[probe]
t_end = 0.5
deltas = [1e-2, 1e-3]

[concentration]
annulus_ratio = 0.03
band = [0.9, 1.2]

[newton]
tol = 1e-10
)");
  EXPECT_EQ(c.experiment, ExperimentKind::ContinuityProbe);
  EXPECT_DOUBLE_EQ(c.rho, 12 * kPi);
  EXPECT_EQ(c.grid_n, 96);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.out_dir, fs::path("somewhere"));
  EXPECT_EQ(c.snapshot_interval, 0.25);
  EXPECT_EQ(c.flow.t_end, 3.0);
  EXPECT_EQ(c.flow.dt_init, 1e-4);
  EXPECT_EQ(c.flow.scheme, StepScheme::ExplicitRK4);
  EXPECT_EQ(c.q_spec.kind, QSpec::Kind::FromF);
  EXPECT_EQ(c.q_spec.f_amplitude, 0.7);
  EXPECT_EQ(c.q_spec.f_mode, 2);
  EXPECT_EQ(c.init_spec.kind, InitSpec::Kind::Bubble);
  EXPECT_EQ(c.init_spec.lambda, 16.0);
  ASSERT_TRUE(c.init_spec.center.has_value());
  EXPECT_EQ(c.init_spec.center->y, 2.0);
  EXPECT_EQ(c.probe.deltas, (std::vector<double>{1e-2, 1e-3}));
  EXPECT_EQ(c.concentration.annulus_ratio, 0.03);
  EXPECT_EQ(c.band_lo, 0.9);
  EXPECT_EQ(c.band_hi, 1.2);
  EXPECT_EQ(c.newton.tol, 1e-10);
}

TEST(Config, RejectsInvalidInput) {
  EXPECT_THROW((void)parse_config("experiment = \"fixed_point\"\nunknown = 1\n"), ParameterError);
  EXPECT_THROW((void)parse_config("experiment = \"fixed_point\"\n[flow]\ndt = 1\n"), ParameterError);
  EXPECT_THROW((void)parse_config("experiment = \"nonsense\"\n"), ParameterError);
  EXPECT_THROW((void)parse_config("rho = 1.0\n"), ParameterError);
  EXPECT_THROW((void)parse_config("experiment = \"fixed_point\"\nrho = 1.0\nrho_over_pi = 1.0\n"), ParameterError);
  EXPECT_THROW((void)parse_config("experiment = \"fixed_point\"\ngrid_n = 33\n"), ParameterError);
  EXPECT_THROW((void)parse_config("experiment = \"fixed_point\"\ngrid_n = 16\n"), ParameterError);
  EXPECT_THROW((void)parse_config("experiment = \"fixed_point\"\ngrid_n = \"64\"\n"), ParameterError);
  EXPECT_THROW((void)parse_config("experiment = \"fixed_point\"\n[flow]\ndt_init = 1.0\ndt_max = 0.1\n"),
               ParameterError);
  EXPECT_THROW((void)parse_config("experiment = = \n"), ParameterError);
  EXPECT_THROW((void)load_config("/nonexistent/config.toml"), IoError);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"fixed_point", "subcritical", "supercritical_diverge"}) {
    EXPECT_NO_THROW((void)load_config(fs::path(MEANFLOW_SOURCE_DIR) / "configs" / (std::string(name) + ".toml")))
        << name;
  }
}

TEST(Generators, SplitMixReferenceVector) {
  SplitMix64 r(0);
  EXPECT_EQ(r.next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(r.next(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(r.next(), 0x06c45d188009454fULL);
}

TEST(Generators, StreamsAreReproducibleAndDistinct) {
  SplitMix64 a = rng_stream(7, RngStream::InitialData);
  SplitMix64 b = rng_stream(7, RngStream::InitialData);
  SplitMix64 c = rng_stream(7, RngStream::Perturbation);
  for (int k = 0; k < 100; ++k) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
  for (int k = 0; k < 1000; ++k) {
    const double u = a.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Generators, RandomBandlimited) {
  const TorusGrid g(64, kTwoPi);
  SplitMix64 r1 = rng_stream(3, RngStream::InitialData);
  SplitMix64 r2 = rng_stream(3, RngStream::InitialData);
  const Field a = random_bandlimited(g, 4, 0.7, r1);
  const Field b = random_bandlimited(g, 4, 0.7, r2);
  EXPECT_EQ(max_abs_difference(a, b), 0.0);
  EXPECT_NEAR(a.sup_norm(), 0.7, 1e-14);
  EXPECT_NEAR(a.mean(), 0.0, 1e-14);
  // Band limit: the Laplacian is bounded by k_max^2 times the field in L2.
  EXPECT_LE(l2_norm(laplacian(a)), 32.0 * l2_norm(a));
}

TEST(Generators, CosineQAndWeights) {
  const TorusGrid g(64, kTwoPi);
  const Field q = cosine_perturbed_q(g, 4 * kPi, 0.5, 1);
  EXPECT_NEAR(integrate(q), 4 * kPi, 1e-12);
  EXPECT_NEAR(q.max() - q.min(), 1.0, 1e-12);
  const Field f = exp_cosine_weight(g, 1.0, 2);
  EXPECT_NEAR(f.max(), std::exp(1.0), 1e-12);
  EXPECT_GT(f.min(), 0.0);
}

TEST(BubbleData, PeakValue) {
  const TorusGrid g(64, kTwoPi);
  const double rho = 12 * kPi;
  const Point node = grid_point(g, 32 * 64 + 32);
  const Field v = make_bubble_data(g, rho, 1.0, node);
  EXPECT_NEAR(v.max(), 2 * std::log(2.0) + std::log(2.0 / rho), 1e-14);
  EXPECT_THROW((void)make_bubble_data(g, rho, 0.5, node), ParameterError);
  EXPECT_THROW((void)make_bubble_data(g, -1.0, 2.0, node), ParameterError);
}

TEST(BubbleData, VolumeApproachesPlanarMass) {
  // At lambda = 40 the core is resolved from n = 256 on (lambda h < 1).
  for (int n : {256, 512}) {
    const TorusGrid g(n, kTwoPi);
    const ProblemData p = ProblemData::constant(g, 12 * kPi);
    const double ref = 8 * kPi / p.rho();
    EXPECT_NEAR(volume(make_bubble_data(p, 40.0)), ref, 0.02 * ref) << n;
  }
  const TorusGrid g(512, kTwoPi);
  const ProblemData p = ProblemData::constant(g, 12 * kPi);
  const double ref = 8 * kPi / p.rho();
  double prev = 1.0;
  for (double lambda : {5.0, 10.0, 20.0, 40.0}) {
    const double err = std::abs(volume(make_bubble_data(p, lambda)) / ref - 1.0);
    EXPECT_LT(err, prev) << lambda;
    prev = err;
  }
}

TEST(BubbleData, EnergyDecreasesInLambda) {
  const TorusGrid g(256, kTwoPi);
  const ProblemData p = ProblemData::constant(g, 12 * kPi);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {5.0, 10.0, 20.0, 40.0}) {
    const double J = energy_J(p, make_bubble_data(p, lambda));
    EXPECT_LT(J, prev) << lambda;
    prev = J;
  }
}

TEST(BubbleData, SumOfBubblesFloor) {
  const TorusGrid g(256, kTwoPi);
  const double rho = 20 * kPi;
  const std::vector<BubbleSpec> specs{{40.0, Point::on(g, 1.0, 1.0)}, {40.0, Point::on(g, 4.0, 4.0)}};
  const Field v = sum_of_bubbles(g, rho, specs, 0.02);
  const double floor_mass = std::exp(v.min()) * g.area();
  EXPECT_NEAR(floor_mass / volume(v), 0.02, 2e-3);
  EXPECT_THROW((void)sum_of_bubbles(g, rho, {}, 0.0), ParameterError);
  EXPECT_THROW((void)sum_of_bubbles(g, rho, specs, 1.0), ParameterError);
}

TEST(Calibrate, ReachesNegativeTarget) {
  const TorusGrid g(128, kTwoPi);
  const ProblemData p = ProblemData::constant(g, 12 * kPi);
  const CalibratedData d = calibrate_negative_energy(p, -200.0);
  EXPECT_LE(d.energy, -200.0);
  EXPECT_EQ(d.energy, energy_J(p, d.v));
  EXPECT_GE(d.lambda, 8.0);
  EXPECT_LE(d.lambda, 65536.0);
}

TEST(Calibrate, FirstProbeSucceeds) {
  const TorusGrid g(128, kTwoPi);
  const ProblemData p = ProblemData::constant(g, 12 * kPi);
  const double J8 = energy_J(p, make_bubble_data(p, 8.0));
  EXPECT_EQ(calibrate_negative_energy(p, J8).lambda, 8.0);
}

TEST(Calibrate, BoundedBelowRegimeIsUnreachable) {
  const TorusGrid g(64, kTwoPi);
  const ProblemData p = ProblemData::constant(g, 4 * kPi);
  try {
    (void)calibrate_negative_energy(p, -1e6);
    FAIL() << "expected UnreachableTarget";
  } catch (const UnreachableTarget& e) {
    ASSERT_FALSE(e.trace().empty());
    EXPECT_EQ(e.trace().front().first, 8.0);
    for (const auto& [lambda, J] : e.trace()) EXPECT_GT(J, -1e6) << lambda;
  }
}

TEST(Experiment, CsvHeaderIsExact) {
  EXPECT_STREQ(kCsvHeader, "t,J,volume_drift,dissipation,v_max,v_min,residual,r_min,dt");
}

TEST(Experiment, FixedPointRun) {
  ExperimentConfig c;
  c.out_dir = scratch("fixed_point");
  const ExperimentReport r = run_experiment(c);
  EXPECT_EQ(r.exit_code, kExitExpected);
  EXPECT_EQ(r.verdict["outcome"], "Converged");
  EXPECT_TRUE(r.verdict["expected"].get<bool>());
  EXPECT_FALSE(r.verdict.contains("bubble_report"));
  const std::string csv = slurp(c.out_dir / "timeseries.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  EXPECT_TRUE(fs::exists(c.out_dir / "final.mfld"));
  EXPECT_TRUE(fs::exists(c.out_dir / "verdict.json"));
  EXPECT_TRUE(fs::exists(c.out_dir / "snapshots" / "snap_000000.mfld"));
}

TEST(Experiment, OutputsAreWellFormedAndDeterministic) {
  ExperimentConfig c = quick_subcritical(scratch("det_a"));
  const ExperimentReport a = run_experiment(c);
  const std::string csv_a = slurp(c.out_dir / "timeseries.csv");
  c.out_dir = scratch("det_b");
  const ExperimentReport b = run_experiment(c);
  const std::string csv_b = slurp(c.out_dir / "timeseries.csv");
  EXPECT_EQ(csv_a, csv_b);
  EXPECT_EQ(a.verdict.dump(), b.verdict.dump());

  std::istringstream lines(csv_a);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, kCsvHeader);
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 8) << line;
    EXPECT_EQ(line.find('\r'), std::string::npos);
  }
  EXPECT_GE(rows, 40u);
  // Snapshots every 0.5 time units: t = 0, 0.5, 1, 1.5, 2.
  std::size_t snaps = 0;
  for (const auto& e : fs::directory_iterator(c.out_dir / "snapshots")) snaps += e.is_regular_file();
  EXPECT_EQ(snaps, 5u);
  const Snapshot last = read_snapshot(c.out_dir / "final.mfld");
  EXPECT_NEAR(last.time, 2.0, 1e-12);
  EXPECT_EQ(last.rho, c.rho);
}

TEST(Experiment, ContraryOutcomeExitsTwo) {
  ExperimentConfig c = quick_subcritical(scratch("contrary"));
  c.flow.t_end = 0.2;  // too short to converge
  const ExperimentReport r = run_experiment(c);
  EXPECT_EQ(r.verdict["outcome"], "TimeExhausted");
  EXPECT_EQ(r.exit_code, kExitContrary);
}

TEST(Experiment, SubcriticalMatchesNewton) {
  ExperimentConfig c = load_config(fs::path(MEANFLOW_SOURCE_DIR) / "configs" / "subcritical.toml");
  c.out_dir = scratch("subcritical");
  c.flow.record_interval = 1.0;
  c.snapshot_interval = 10.0;
  const ExperimentReport r = run_experiment(c);
  EXPECT_EQ(r.exit_code, kExitExpected);
  EXPECT_EQ(r.verdict["outcome"], "Converged");
  EXPECT_LT(r.verdict["residual_or_J"].get<double>(), 1e-8);
  EXPECT_LT(r.verdict["newton_linf"].get<double>(), 1e-6);
}

TEST(Experiment, ConcentratedStartAttachesBubbleReport) {
  ExperimentConfig c;
  c.experiment = ExperimentKind::SupercriticalDiverge;
  c.rho = 12 * kPi;
  c.grid_n = 32;
  c.init_spec.kind = InitSpec::Kind::Bubble;
  c.init_spec.lambda = 500.0;
  c.out_dir = scratch("concentrated");
  const ExperimentReport r = run_experiment(c);
  EXPECT_EQ(r.verdict["outcome"], "BlowUpSuspected");
  ASSERT_TRUE(r.verdict.contains("bubble_report"));
  EXPECT_GE(r.verdict["bubble_report"]["bubbles"].size(), 1u);
  EXPECT_EQ(r.exit_code, kExitExpected);
  EXPECT_TRUE(fs::exists(c.out_dir / "blowup.mfld"));
  EXPECT_TRUE(fs::exists(c.out_dir / "blowup_h.mfld"));
}

TEST(Experiment, StationaryDriver) {
  ExperimentConfig c = load_config(fs::path(MEANFLOW_SOURCE_DIR) / "configs" / "subcritical.toml");
  c.out_dir = scratch("stationary");
  const ExperimentReport r = run_stationary(c);
  EXPECT_EQ(r.exit_code, kExitExpected);
  EXPECT_LT(r.verdict["residual"].get<double>(), 1e-10);
  EXPECT_TRUE(fs::exists(c.out_dir / "stationary.mfld"));
}

TEST(Continuity, ZeroPerturbationIsBitwiseIdentical) {
  ExperimentConfig c;
  c.experiment = ExperimentKind::ContinuityProbe;
  c.q_spec.kind = QSpec::Kind::CosinePerturbed;
  c.grid_n = 32;
  c.probe.deltas = {0.0, 0.0};
  const ContinuityReport r = continuity_probe(c);
  EXPECT_EQ(r.ratios[0], 0.0);
  EXPECT_EQ(r.ratios[1], 0.0);
}

TEST(Continuity, FixedPointBaseRespectsGrowthBound) {
  ExperimentConfig c;
  c.experiment = ExperimentKind::ContinuityProbe;
  c.grid_n = 32;
  c.probe.deltas = {1e-3, 1e-4};
  const ContinuityReport r = continuity_probe(c);
  EXPECT_GT(r.kappa, 0.0);
  for (double x : r.ratios) {
    EXPECT_GT(x, 0.0);
    EXPECT_LE(x, r.growth_bound);
  }
}

TEST(Continuity, SubcriticalQuotientIsStable) {
  ExperimentConfig c;
  c.experiment = ExperimentKind::ContinuityProbe;
  c.q_spec.kind = QSpec::Kind::CosinePerturbed;
  c.out_dir = scratch("probe");
  const ExperimentReport rep = run_experiment(c);
  EXPECT_EQ(rep.exit_code, kExitExpected);
  const double q = rep.verdict["probe"]["quotient"].get<double>();
  EXPECT_GE(q, 0.5);
  EXPECT_LE(q, 1.5);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  const fs::path cfg = dir / "fixed.toml";
  std::ofstream(cfg) << "experiment = \"fixed_point\"\nout_dir = \"" << (dir / "out").string() << "\"\n";
  EXPECT_EQ(run_cli("run " + cfg.string()), 0);

  const fs::path short_cfg = dir / "short.toml";
  std::ofstream(short_cfg) << "experiment = \"subcritical_converge\"\ngrid_n = 32\nout_dir = \""
                           << (dir / "short").string() << "\"\n[flow]\nt_end = 0.1\n[q_spec]\nkind = \"cosine_perturbed\"\n";
  EXPECT_EQ(run_cli("run " + short_cfg.string()), 2);

  const fs::path bad = dir / "bad.toml";
  std::ofstream(bad) << "experiment = \"fixed_point\"\nbogus = 3\n";
  EXPECT_EQ(run_cli("run " + bad.string()), 1);
  EXPECT_EQ(run_cli("run /nonexistent.toml"), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);

  EXPECT_EQ(run_cli("analyze " + (dir / "out" / "final.mfld").string() + " --rho 12.566370614359172"), 0);
  EXPECT_EQ(run_cli("stationary " + cfg.string()), 0);
  EXPECT_EQ(run_cli("batch " + cfg.string() + " " + cfg.string()), 1);  // shared out_dir
}
