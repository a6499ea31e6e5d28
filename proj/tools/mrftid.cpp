// Command-line driver: discretize -> gen-data -> train -> eval / identify -> tune -> simulate.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mrftid/dataset.hpp"
#include "mrftid/discretizer.hpp"
#include "mrftid/errors.hpp"
#include "mrftid/io.hpp"
#include "mrftid/mlp.hpp"
#include "mrftid/pipeline.hpp"
#include "mrftid/sim.hpp"
#include "mrftid/tuning.hpp"
#include "mrftid/version.hpp"

namespace fs = std::filesystem;
using namespace mrftid;

namespace {

struct Globals {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
};

PipelineConfig resolve(const Globals& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig::from_preset(g.preset.empty() ? "desk" : g.preset)
                                      : load_config(g.config);
  if (!g.config.empty() && !g.preset.empty() && g.preset != c.preset) {
    throw DomainError("--preset " + g.preset + " conflicts with the preset in " + g.config);
  }
  if (g.seed) c.seed = *g.seed;
  if (g.jobs) c.jobs = *g.jobs;
  c.validate();
  return c;
}

fs::path out_or(const Globals& g, const fs::path& fallback) { return g.out.empty() ? fallback : fs::path(g.out); }

ProcessParams process_from(const std::vector<double>& triple, double k_eq) {
  if (triple.size() != 3) throw DomainError("--process takes t_prop,t_body,tau");
  ProcessParams p{k_eq, triple[0], triple[1], triple[2]};
  p.validate();
  return p;
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return 3;
  if (dynamic_cast<const ResourceError*>(&e)) return 4;
  if (dynamic_cast<const NotSteadyError*>(&e) || dynamic_cast<const TooSlowError*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MRFT-based identification and PID tuning of integrating processes with delay"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Pipeline config JSON (missing keys follow its preset)");
  app.add_option("--preset", g.preset, "desk or full when no config is given");
  app.add_option("--seed", g.seed, "Base seed");
  app.add_option("--jobs", g.jobs, "Worker threads, 0 for all cores");
  app.add_option("--out", g.out, "Output file or directory");

  // discretize
  auto* discretize_cmd = app.add_subcommand("discretize", "Build the discrete process set and its controller table");
  discretize_cmd->callback([&] {
    const auto cfg = resolve(g);
    const auto dir = out_or(g, "set");
    const auto d = discretize(cfg.discretize_options());
    save_discrete_set(d, dir);
    write_json(dir / "stage.json", make_manifest("discretize", cfg, {}));
    std::cout << d.size() << " classes (" << d.surface_ids.size() << " on the surface) written to " << dir << "\n";
  });

  // find-phase
  std::size_t phase_processes = 12, grid_points = 9;
  double grid_lo = -0.9, grid_hi = 0.0;
  auto* phase_cmd = app.add_subcommand("find-phase", "Search the distinguishing relay phase");
  phase_cmd->add_option("--processes", phase_processes, "Processes drawn log-uniformly from the bounds")
      ->check(CLI::PositiveNumber);
  phase_cmd->add_option("--grid", grid_points, "Beta grid points")->check(CLI::Range(2, 1000));
  phase_cmd->add_option("--grid-lo", grid_lo, "Lowest beta");
  phase_cmd->add_option("--grid-hi", grid_hi, "Highest beta");
  phase_cmd->callback([&] {
    const auto cfg = resolve(g);
    const auto processes = sample_test_processes(cfg.bounds, phase_processes, derive_seed(cfg.seed, {40}));
    std::vector<double> grid(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) {
      grid[i] = grid_lo + (grid_hi - grid_lo) * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    }
    const auto r = find_distinguishing_phase(processes, grid, cfg.design, cfg.jobs);
    json cand = json::array();
    for (std::size_t c = 0; c < r.candidates.size(); ++c) {
      cand.push_back({{"beta", r.candidates[c]},
                      {"worst_j", std::isfinite(r.worst[c]) ? json(r.worst[c]) : json(nullptr)}});
    }
    const json report{{"beta_d", r.beta_d},
                      {"phase_deg", phase_of_beta(r.beta_d) * 180.0 / std::numbers::pi},
                      {"processes", processes},
                      {"candidates", cand}};
    if (!g.out.empty()) write_json(g.out, report);
    std::cout << "beta_d = " << r.beta_d << " (phase " << report["phase_deg"].get<double>() << " deg)\n";
  });

  // gen-data
  std::string set_dir;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate train and verify features from a discrete set");
  gen_cmd->add_option("--set", set_dir, "Discrete set directory")->required();
  gen_cmd->callback([&] {
    const auto cfg = resolve(g);
    const auto dir = out_or(g, "data");
    const auto d = load_discrete_set(set_dir);
    const auto [train, verify] = generate(d, cfg.gen_spec(), derive_seed(cfg.seed, {10}), cfg.jobs);
    const std::string extra = json{{"seed", cfg.seed}, {"beta", cfg.beta_d}, {"h", cfg.h}}.dump();
    save_dataset(train, dir, "train", extra);
    save_dataset(verify, dir, "verify", extra);
    write_json(dir / "manifest.json", make_manifest("gen-data", cfg, {set_dir}));
    std::cout << train.size() << " train and " << verify.size() << " verify samples written to " << dir << "\n";
  });

  // train
  std::string data_dir;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier");
  train_cmd->add_option("--set", set_dir, "Discrete set directory")->required();
  train_cmd->add_option("--data", data_dir, "Dataset directory holding train.bin")->required();
  train_cmd->callback([&] {
    const auto cfg = resolve(g);
    const auto dir = out_or(g, "model");
    const auto d = load_discrete_set(set_dir);
    const auto data = load_dataset(data_dir, "train");
    if (data.classes != d.size()) throw ShapeError("dataset classes differ from the discrete set size");
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {20});
    tc.gamma = build_gamma_matrix(d);
    auto net = make_network(default_dims(d.size()), tc.dropout, derive_seed(cfg.seed, {21}), tc.init_scale);
    const auto loss = train(net, data, tc, [&](std::size_t epoch, double l) {
      std::cerr << "epoch " << epoch + 1 << "/" << tc.epochs << " loss " << l << "\n";
      return true;
    });
    save_network(net, dir / "weights.bin", network_header(cfg, tc));
    write_loss_csv(loss, dir / "loss.csv");
    write_gnuplot_script(dir / "loss.gp", dir / "loss.csv", {"loss"}, "training loss");
    write_json(dir / "manifest.json", make_manifest("train", cfg, {set_dir, fs::path(data_dir) / "train.bin"}));
    std::cout << "final loss " << loss.back() << ", weights written to " << dir / "weights.bin" << "\n";
  });

  // eval
  std::string model_path, split = "verify";
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and joint-cost metrics of a trained model");
  eval_cmd->add_option("--model", model_path, "weights.bin")->required();
  eval_cmd->add_option("--set", set_dir, "Discrete set directory")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--split", split, "Dataset name inside --data")->capture_default_str();
  eval_cmd->callback([&] {
    const auto net = load_network(model_path);
    const auto d = load_discrete_set(set_dir);
    const auto m = evaluate(net, load_dataset(data_dir, split), d);
    const auto j = to_json(m);
    if (!g.out.empty()) write_json(g.out, j);
    print(j);
  });

  // identify
  std::string traj_path;
  std::optional<double> beta, relay_h;
  double steady_tol = 0.05, noise_band = 0.0, smoothing = 0.0;
  auto* identify_cmd = app.add_subcommand("identify", "Identify a recorded MRFT run and pick its controller");
  identify_cmd->add_option("--traj", traj_path, "CSV with t,pv,u columns")->required();
  identify_cmd->add_option("--model", model_path, "weights.bin")->required();
  identify_cmd->add_option("--set", set_dir, "Discrete set directory")->required();
  identify_cmd->add_option("--beta", beta, "Relay beta of the recording (default: from the model)");
  identify_cmd->add_option("--relay-h", relay_h, "Relay amplitude of the recording (default: from the model)");
  identify_cmd->add_option("--noise-band", noise_band, "Relay noise band of the recording, pv units")
      ->capture_default_str();
  identify_cmd->add_option("--smoothing", smoothing, "Relay turn smoothing of the recording, samples")
      ->capture_default_str();
  identify_cmd->add_option("--steady-tol", steady_tol, "Cycle-to-cycle tolerance")->capture_default_str();
  identify_cmd->callback([&] {
    const auto traj = read_trajectory_csv(traj_path);
    std::string header;
    const auto net = load_network(model_path, &header);
    const auto meta = json::parse(header);
    MrftConfig relay;
    relay.beta = beta.value_or(meta.value("beta_d", relay.beta));
    relay.h = relay_h.value_or(meta.value("h", relay.h));
    relay.noise_band = noise_band;
    relay.turn_smoothing = smoothing;
    const auto id = identify(traj, net, load_discrete_set(set_dir), relay, steady_tol);
    std::cerr << describe(id) << "\n";
    const auto j = to_json(id);
    if (!g.out.empty()) write_json(g.out, j);
    print(j);
  });

  // tune
  std::vector<double> triple;
  double k_eq = 1.0;
  std::optional<double> a0, omega0;
  double c1 = 0.0, c2 = kInf, c3 = 0.0;
  auto* tune_cmd = app.add_subcommand(
      "tune", "Optimal controller of a process, or a tuning rule applied to a measured oscillation");
  tune_cmd->add_option("--process", triple, "t_prop,t_body,tau")->delimiter(',');
  tune_cmd->add_option("--k-eq", k_eq, "Process gain")->capture_default_str();
  tune_cmd->add_option("--a0", a0, "Oscillation amplitude");
  tune_cmd->add_option("--omega0", omega0, "Oscillation frequency, rad/s");
  tune_cmd->add_option("--c1", c1, "Rule gain coefficient");
  tune_cmd->add_option("--c2", c2, "Rule integral coefficient (omit for PD)");
  tune_cmd->add_option("--c3", c3, "Rule derivative coefficient");
  tune_cmd->callback([&] {
    const auto cfg = resolve(g);
    json j;
    if (!triple.empty()) {
      if (a0 || omega0) throw DomainError("give either --process or --a0/--omega0");
      const auto p = process_from(triple, k_eq);
      const auto des = optimize_controller(p, cfg.design);
      j = {{"process", p},   {"rule", des.rule},     {"pid", des.pid},
           {"ise", des.cost}, {"a0", des.a0},        {"omega0", des.omega0},
           {"phase_margin_deg", phase_margin(des.pid, p) * 180.0 / std::numbers::pi}};
    } else {
      if (!a0 || !omega0) throw DomainError("tune needs --process or both --a0 and --omega0");
      HomogeneousRule rule{c1 > 0.0 ? c1 : c1_for(c2, c3), c2, c3, cfg.beta_d};
      rule.validate();
      auto pid = pid_from_oscillation(rule, *a0, *omega0, cfg.h);
      pid.derivative_filter = pid.td / cfg.design.filter_ratio;
      j = {{"rule", rule}, {"pid", pid}};
    }
    if (!g.out.empty()) write_json(g.out, j);
    print(j);
  });

  // simulate
  std::string controller = "mrft";
  double horizon = 10.0, dt = 1e-3, noise_power = 0.0, bias = 0.0, ref = 1.0;
  double kp = 0.0, ti = kInf, td = 0.0, tf = 0.0;
  auto* sim_cmd = app.add_subcommand("simulate", "Closed-loop run written as CSV plus a gnuplot script");
  sim_cmd->add_option("--process", triple, "t_prop,t_body,tau")->delimiter(',')->required();
  sim_cmd->add_option("--k-eq", k_eq, "Process gain")->capture_default_str();
  sim_cmd->add_option("--controller", controller, "mrft or pid")
      ->check(CLI::IsMember({"mrft", "pid"}))
      ->capture_default_str();
  sim_cmd->add_option("--beta", beta, "Relay beta (default: config beta_d)");
  sim_cmd->add_option("--relay-h", relay_h, "Relay amplitude (default: config h)");
  sim_cmd->add_option("--kp", kp, "PID gain");
  sim_cmd->add_option("--ti", ti, "PID integral time (omit for PD)");
  sim_cmd->add_option("--td", td, "PID derivative time");
  sim_cmd->add_option("--tf", tf, "Derivative filter time constant");
  sim_cmd->add_option("--ref", ref, "Step reference for the PID loop")->capture_default_str();
  sim_cmd->add_option("--horizon", horizon, "Seconds")->check(CLI::PositiveNumber)->capture_default_str();
  sim_cmd->add_option("--dt", dt, "Step, seconds")->check(CLI::PositiveNumber)->capture_default_str();
  sim_cmd->add_option("--noise-power", noise_power, "Variance of pv noise")->capture_default_str();
  sim_cmd->add_option("--bias", bias, "Constant input bias")->capture_default_str();
  sim_cmd->add_option("--noise-band", noise_band, "Relay noise band, pv units")->capture_default_str();
  sim_cmd->add_option("--smoothing", smoothing, "Relay turn smoothing, samples")->capture_default_str();
  sim_cmd->callback([&] {
    const auto cfg = resolve(g);
    const auto p = process_from(triple, k_eq);
    SimConfig sc;
    sc.dt = dt;
    sc.horizon = horizon;
    sc.noise_power = noise_power;
    sc.input_bias = bias;
    sc.seed = cfg.seed;
    std::unique_ptr<Controller> c;
    if (controller == "mrft") {
      MrftConfig m;
      m.beta = beta.value_or(cfg.beta_d);
      m.h = relay_h.value_or(cfg.h);
      m.noise_band = noise_band;
      m.turn_smoothing = smoothing;
      c = std::make_unique<MrftController>(m);
    } else {
      if (!(kp > 0.0)) throw DomainError("--kp must be positive for the pid controller");
      c = std::make_unique<PidController>(PidParams{kp, ti, td, tf});
      sc.ref = Reference::step(ref);
    }
    const auto traj = simulate(p, *c, sc);
    const fs::path csv = out_or(g, "sim.csv");
    write_trajectory_csv(traj, csv);
    auto script = csv;
    script.replace_extension(".gp");
    write_gnuplot_script(script, csv, {"pv", "u"}, controller + " on " + json(p).dump());
    std::cout << traj.size() << " samples written to " << csv << " (plot: gnuplot " << script << ")\n";
  });

  // pipeline
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run every stage and write report.json");
  pipeline_cmd->callback([&] {
    const auto cfg = resolve(g);
    const auto dir = out_or(g, "run");
    const auto r = run_pipeline(cfg, dir, &std::cerr);
    print(json{{"classes", r.set.size()}, {"verify", to_json(r.verify)}, {"test", to_json(r.test)}});
    std::cout << "report: " << dir / "report.json" << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version exit 0; every usage error is 2.
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
    std::cerr << "mrftid " << (sub ? sub->get_name() : std::string("")) << ": error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 0;
}
