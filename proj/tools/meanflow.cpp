// meanflow: command-line driver for the gradient-flow experiments.
//
//   meanflow run <config.toml>
//   meanflow analyze <snapshot> --rho <rho> [--h <snapshot>] [--normalization <a>] [--fit]
//   meanflow stationary <config.toml>
//   meanflow probe-continuity <config.toml>
//   meanflow batch <config.toml>... [--jobs N]
//
// Exit codes: 0 expected-regime outcome, 2 contrary outcome, 1 error.

#include <cli11/CLI11.hpp>

#include <atomic>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "meanflow/meanflow.hpp"

namespace {

using meanflow::ExperimentConfig;

int report(const meanflow::ExperimentReport& r) {
  std::cout << r.verdict.dump(2) << '\n';
  return r.exit_code;
}

int cmd_run(const std::string& path) {
  const ExperimentConfig cfg = meanflow::load_config(path);
  return report(meanflow::run_experiment(cfg));
}

int cmd_stationary(const std::string& path) {
  const ExperimentConfig cfg = meanflow::load_config(path);
  return report(meanflow::run_stationary(cfg));
}

int cmd_probe(const std::string& path) {
  ExperimentConfig cfg = meanflow::load_config(path);
  cfg.experiment = meanflow::ExperimentKind::ContinuityProbe;
  return report(meanflow::run_experiment(cfg));
}

int cmd_analyze(const std::string& snapshot, double rho, const std::string& h_path, double normalization,
                bool fit) {
  const meanflow::Snapshot snap = meanflow::read_snapshot(snapshot);
  const meanflow::Field& v = snap.field;
  const meanflow::ProblemData p = meanflow::ProblemData::constant(v.grid(), rho);
  std::optional<meanflow::Field> h;
  if (!h_path.empty()) {
    h = meanflow::read_snapshot(h_path).field;
    v.require_same_grid(*h);
  }
  meanflow::ConcentrationConfig cc;
  cc.normalization = normalization;
  const meanflow::BubbleReport br = meanflow::extract_bubbles(v, p, h, cc);
  nlohmann::json out = meanflow::to_json(br);
  if (fit && !br.bubbles.empty()) {
    const auto& b = br.bubbles.front();
    const double window = 10.0;
    const double r = std::min(b.scale, 0.45 * v.grid().side_length() / window);
    const auto samples = meanflow::rescale_sample(v, b.center, r, window, 65);
    try {
      const meanflow::ChenLiFit f = meanflow::chen_li_fit(samples, window, rho);
      out["chen_li"] = {{"lambda", f.lambda}, {"x0", f.x0},
                        {"y0", f.y0},         {"shift", f.shift},
                        {"rms_error", f.rms_error}, {"mass_check", f.mass_check}};
    } catch (const meanflow::FitFailure& e) {
      out["chen_li"] = {{"error", e.what()}};
    }
  }
  std::cout << out.dump(2) << '\n';
  return meanflow::kExitExpected;
}

int cmd_batch(const std::vector<std::string>& paths, unsigned jobs) {
  std::vector<ExperimentConfig> cfgs;
  std::set<std::filesystem::path> dirs;
  for (const auto& p : paths) {
    cfgs.push_back(meanflow::load_config(p));
    if (!dirs.insert(std::filesystem::weakly_canonical(cfgs.back().out_dir)).second) {
      throw meanflow::ParameterError("batch configs must use distinct out_dir values (" + p + ")");
    }
  }
  std::vector<int> codes(cfgs.size(), meanflow::kExitError);
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < cfgs.size(); i = next++) {
      try {
        codes[i] = meanflow::run_experiment(cfgs[i]).exit_code;
      } catch (const std::exception& e) {
        const std::lock_guard<std::mutex> lock(io);
        std::cerr << paths[i] << ": error: " << e.what() << '\n';
      }
      const std::lock_guard<std::mutex> lock(io);
      std::cout << paths[i] << ": exit " << codes[i] << '\n';
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::max(1u, jobs); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  int worst = meanflow::kExitExpected;
  for (int c : codes) {
    if (c == meanflow::kExitError) return meanflow::kExitError;
    if (c == meanflow::kExitContrary) worst = meanflow::kExitContrary;
  }
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient flow for mean-field-type equations on the flat torus"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config");
  run->add_option("config", config, "TOML config")->required()->check(CLI::ExistingFile);

  auto* stationary = app.add_subcommand("stationary", "Newton solve of the stationary equation");
  stationary->add_option("config", config, "TOML config")->required()->check(CLI::ExistingFile);

  auto* probe = app.add_subcommand("probe-continuity", "Perturbation response of the flow");
  probe->add_option("config", config, "TOML config")->required()->check(CLI::ExistingFile);

  std::string snapshot, h_path;
  double rho = 0.0;
  double normalization = 1.0;
  bool fit = false;
  auto* analyze = app.add_subcommand("analyze", "Bubble report of a snapshot");
  analyze->add_option("snapshot", snapshot, "Field snapshot")->required()->check(CLI::ExistingFile);
  analyze->add_option("--rho", rho, "rho")->required();
  analyze->set_help_flag("--help", "Print this help message and exit");
  analyze->add_option("--h", h_path, "Snapshot of h = -v_t")->check(CLI::ExistingFile);
  analyze->add_option("--normalization", normalization, "Volume unit of the quantized fraction");
  analyze->add_flag("--fit", fit, "Also fit the Chen-Li profile at the first bubble");

  std::vector<std::string> batch_configs;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* batch = app.add_subcommand("batch", "Run several configs in worker threads");
  batch->add_option("configs", batch_configs, "TOML configs")->required()->check(CLI::ExistingFile);
  batch->add_option("--jobs", jobs, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : meanflow::kExitError;
  }

  try {
    if (*run) return cmd_run(config);
    if (*stationary) return cmd_stationary(config);
    if (*probe) return cmd_probe(config);
    if (*analyze) return cmd_analyze(snapshot, rho, h_path, normalization, fit);
    if (*batch) return cmd_batch(batch_configs, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return meanflow::kExitError;
  }
  return meanflow::kExitError;
}
