#include "mrftid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mrftid/errors.hpp"
#include "mrftid/io.hpp"
#include "mrftid/parallel.hpp"
#include "mrftid/sim.hpp"
#include "mrftid/version.hpp"

namespace mrftid {

namespace {

constexpr double kRad2Deg = 180.0 / std::numbers::pi;

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::string params_text(const ProcessParams& p) {
  std::ostringstream s;
  s << "(t_prop " << p.t_prop << ", t_body " << p.t_body << ", tau " << p.tau << ")";
  return s.str();
}

std::string hash_path(const std::filesystem::path& p) {
  if (!std::filesystem::is_directory(p)) return file_hash(p);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string joined;
  for (const auto& f : files) joined += std::filesystem::relative(f, p).generic_string() + ":" + file_hash(f) + "\n";
  return content_hash(joined.data(), joined.size());
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace

PipelineConfig PipelineConfig::from_preset(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  if (name == "desk") {
    c.bounds = ParamBounds::desk_range();
    c.gen.train_per_class = 10;
    c.gen.verify_per_class = 3;
    c.train.epochs = 30;
    c.test_processes = 10;
  } else if (name == "full") {
    c.bounds = ParamBounds::full_range();
    c.gen.train_per_class = 30;
    c.gen.verify_per_class = 5;
    c.train.epochs = 60;
    c.test_processes = 20;
  } else {
    throw DomainError("unknown preset '" + name + "' (expected desk or full)");
  }
  return c;
}

void PipelineConfig::validate() const {
  bounds.validate();
  design.validate();
  if (!(j_star > 0.0) || !(j_tol > 0.0) || j_tol >= j_star) throw DomainError("need 0 < j_tol < j_star");
  if (!(beta_d > -1.0 && beta_d < 1.0)) throw DomainError("beta_d must lie in (-1, 1)");
  if (!(h > 0.0)) throw DomainError("relay amplitude h must be positive");
  gen_spec().validate();
  if (test_processes == 0) throw DomainError("test_processes must be positive");
}

DiscretizeOptions PipelineConfig::discretize_options() const {
  DiscretizeOptions o;
  o.bounds = bounds;
  o.j_star = j_star;
  o.j_tol = j_tol;
  o.design = design;
  o.jobs = jobs;
  o.seed = seed;
  return o;
}

GenSpec PipelineConfig::gen_spec() const {
  GenSpec g = gen;
  g.mrft.beta = beta_d;
  g.mrft.h = h;
  return g;
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = json{{"preset", c.preset},
           {"bounds", c.bounds},
           {"j_star", c.j_star},
           {"j_tol", c.j_tol},
           {"design", c.design},
           {"beta_d", c.beta_d},
           {"h", c.h},
           {"gen",
            {{"train_per_class", c.gen.train_per_class},
             {"verify_per_class", c.gen.verify_per_class},
             {"snr_db_lo", c.gen.snr_db_lo},
             {"snr_db_hi", c.gen.snr_db_hi},
             {"bias_fraction", c.gen.bias_fraction},
             {"noise_band_sigmas", c.gen.noise_band_sigmas},
             {"turn_smoothing", c.gen.turn_smoothing},
             {"horizon_periods", c.gen.horizon_periods},
             {"steady_tol", c.gen.steady_tol},
             {"retries", c.gen.retries}}},
           {"train",
            {{"learning_rate", c.train.learning_rate},
             {"batch_size", c.train.batch_size},
             {"epochs", c.train.epochs},
             {"decay_at", c.train.decay_at},
             {"decay", c.train.decay},
             {"dropout", c.train.dropout},
             {"init_scale", c.train.init_scale}}},
           {"test_processes", c.test_processes},
           {"seed", c.seed},
           {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  try {
    c = PipelineConfig::from_preset(j.value("preset", std::string("desk")));
    if (j.contains("bounds")) c.bounds = j.at("bounds").get<ParamBounds>();
    c.j_star = j.value("j_star", c.j_star);
    c.j_tol = j.value("j_tol", c.j_tol);
    if (j.contains("design")) from_json(j.at("design"), c.design);
    c.beta_d = j.value("beta_d", c.beta_d);
    c.h = j.value("h", c.h);
    if (j.contains("gen")) {
      const auto& g = j.at("gen");
      c.gen.train_per_class = g.value("train_per_class", c.gen.train_per_class);
      c.gen.verify_per_class = g.value("verify_per_class", c.gen.verify_per_class);
      c.gen.snr_db_lo = g.value("snr_db_lo", c.gen.snr_db_lo);
      c.gen.snr_db_hi = g.value("snr_db_hi", c.gen.snr_db_hi);
      c.gen.bias_fraction = g.value("bias_fraction", c.gen.bias_fraction);
      c.gen.noise_band_sigmas = g.value("noise_band_sigmas", c.gen.noise_band_sigmas);
      c.gen.turn_smoothing = g.value("turn_smoothing", c.gen.turn_smoothing);
      c.gen.horizon_periods = g.value("horizon_periods", c.gen.horizon_periods);
      c.gen.steady_tol = g.value("steady_tol", c.gen.steady_tol);
      c.gen.retries = g.value("retries", c.gen.retries);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.decay_at = t.value("decay_at", c.train.decay_at);
      c.train.decay = t.value("decay", c.train.decay);
      c.train.dropout = t.value("dropout", c.train.dropout);
      c.train.init_scale = t.value("init_scale", c.train.init_scale);
    }
    c.test_processes = j.value("test_processes", c.test_processes);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ParseError(std::string("pipeline config: ") + e.what());
  }
}

PipelineConfig load_config(const std::filesystem::path& path) {
  PipelineConfig c;
  from_json(read_json(path), c);
  c.validate();
  return c;
}

nlohmann::json make_manifest(const std::string& stage, const PipelineConfig& cfg,
                             const std::vector<std::filesystem::path>& inputs) {
  json hashes = json::object();
  for (const auto& p : inputs) {
    if (!std::filesystem::exists(p)) throw ResourceError("manifest input missing: " + p.string());
    hashes[p.filename().string()] = hash_path(p);
  }
  return json{{"tool", "mrftid"}, {"version", kVersion}, {"stage", stage},
              {"seed", cfg.seed},  {"config", cfg},      {"inputs", hashes}};
}

Identification identify(const Trajectory& traj, const Network& net, const DiscreteSet& d, const MrftConfig& relay,
                        double steady_tol) {
  relay.validate();
  if (net.outputs() != d.size()) throw ShapeError("network classes differ from the discrete set size");
  if (d.controllers.size() != d.size()) throw ShapeError("discrete set has no controller lookup table");

  const auto osc = detect_steady_cycle(traj, steady_tol);
  const auto pred = infer(net, preprocess(osc));

  Identification id;
  id.cls = pred.cls;
  id.confidence = pred.p(static_cast<Eigen::Index>(pred.cls));
  id.a0 = osc.a0;
  id.omega0 = osc.omega0;

  const ProcessParams& unit = d.processes[id.cls];
  // Zero-mean input at steady state through the integrator: the relay output
  // averages to minus the input bias.
  id.input_bias = -std::accumulate(osc.cycle_u.begin(), osc.cycle_u.end(), 0.0) / static_cast<double>(osc.cycle_u.size());
  // Replay the class at unit gain under the same relay and bias, so hysteresis
  // and duty-cycle skew distort the reference as they did the recording. The
  // noise band lives in pv units and shrinks with the gain; one refinement.
  const auto hb = hb_predict(unit, relay.h, relay.beta);
  const double horizon = 40.0 * 2.0 * std::numbers::pi / hb.omega0;
  id.k_eq = 1.0;
  for (int pass = 0; pass < 2; ++pass) {
    MrftConfig r = relay;
    r.noise_band = relay.noise_band / id.k_eq;
    const auto reference = detect_steady_cycle(mrft_response(unit, r, horizon, 0.0, id.input_bias, 1), steady_tol);
    id.k_eq = cycle_gain(osc) / cycle_gain(reference);
    id.time_scale = reference.omega0 / osc.omega0;
    if (!(id.k_eq > 0.0) || !std::isfinite(id.k_eq) || !(id.time_scale > 0.0) || !std::isfinite(id.time_scale)) {
      throw NumericError("gain or time scale estimate is not positive and finite");
    }
  }
  id.k_eq_hb = estimate_k_eq(osc, relay.h, unit);

  id.p = time_scale(unit, id.time_scale);
  id.p.k_eq = id.k_eq;
  id.rule = d.controllers[id.cls].rule;
  id.pid_lut = d.controllers[id.cls].pid;
  id.pid = id.pid_lut;
  id.pid.kp /= id.k_eq;
  id.pid.ti *= id.time_scale;
  id.pid.td *= id.time_scale;
  id.pid.derivative_filter *= id.time_scale;
  return id;
}

nlohmann::json to_json(const Identification& id) {
  return json{{"class", id.cls},
              {"confidence", id.confidence},
              {"process", id.p},
              {"a0", id.a0},
              {"omega0", id.omega0},
              {"k_eq", id.k_eq},
              {"time_scale", id.time_scale},
              {"input_bias", id.input_bias},
              {"k_eq_hb", id.k_eq_hb},
              {"rule", id.rule},
              {"pid_unit_gain", id.pid_lut},
              {"pid", id.pid}};
}

std::string describe(const Identification& id) {
  std::ostringstream s;
  s << "class " << id.cls << " (p = " << id.confidence << ") " << params_text(id.p) << ", k_eq " << id.k_eq
    << " (harmonic balance " << id.k_eq_hb << "), time scale " << id.time_scale << "; kp " << id.pid.kp << ", td " << id.pid.td;
  if (!id.pid.is_pd()) s << ", ti " << id.pid.ti;
  return s.str();
}

std::string network_header(const PipelineConfig& cfg, const TrainConfig& tc) {
  const auto& g = tc.gamma;
  return json{{"seed", cfg.seed},
              {"epochs", tc.epochs},
              {"gamma_hash", content_hash(g.data(), static_cast<std::size_t>(g.size()) * sizeof(double))},
              {"beta_d", cfg.beta_d},
              {"h", cfg.h}}
      .dump();
}

std::vector<TestOutcome> run_test_processes(const std::vector<ProcessParams>& processes, const Network& net,
                                            const DiscreteSet& d, const GenSpec& spec, std::uint64_t seed,
                                            std::size_t jobs) {
  spec.validate();
  std::vector<TestOutcome> out(processes.size());
  parallel_for(processes.size(), jobs, [&](std::size_t i) {
    TestOutcome& o = out[i];
    o.p = processes[i];
    const auto own = optimize_controller(o.p, d.design);
    o.ise_own = own.cost;
    bool identified = false;
    for (std::size_t attempt = 0; attempt <= spec.retries && !identified; ++attempt) {
      const auto traj = noisy_mrft_run(o.p, spec, derive_seed(seed, {i, attempt}), &o.meta);
      try {
        MrftConfig relay = spec.mrft;
        relay.noise_band = spec.noise_band_sigmas * std::sqrt(o.meta.noise_power);
        relay.turn_smoothing = spec.turn_smoothing;
        o.id = identify(traj, net, d, relay, spec.steady_tol);
        identified = true;
        o.error.clear();
      } catch (const NotSteadyError& e) {
        o.error = e.what();
      } catch (const TooSlowError& e) {
        o.error = e.what();
        break;
      }
    }
    if (!identified) {
      o.ise = kInf;
      o.j = kInf;
      o.phase_margin = 0.0;
      return;
    }
    o.ise = ise(o.id.pid, o.p, d.design.scen);
    o.j = deterioration(o.ise, o.ise_own);
    o.phase_margin = phase_margin(o.id.pid, o.p);
  });
  return out;
}

Metrics summarize(const std::vector<TestOutcome>& outcomes) {
  Metrics m;
  m.samples = outcomes.size();
  m.min_phase_margin = kInf;
  double sum = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (!std::isfinite(o.j)) ++m.unstable;
    sum += o.j;
    m.max_j = i == 0 ? o.j : std::max(m.max_j, o.j);
    m.min_phase_margin = std::min(m.min_phase_margin, o.phase_margin);
  }
  m.mean_j = m.samples ? sum / static_cast<double>(m.samples) : 0.0;
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  return json{{"samples", m.samples},
              {"accuracy", m.accuracy},
              {"mean_j", finite_or_null(m.mean_j)},
              {"max_j", finite_or_null(m.max_j)},
              {"unstable", m.unstable},
              {"min_phase_margin_deg", finite_or_null(m.min_phase_margin * kRad2Deg)}};
}

void write_gnuplot_script(const std::filesystem::path& script, const std::filesystem::path& csv,
                          const std::vector<std::string>& columns, const std::string& title) {
  if (script.has_parent_path()) std::filesystem::create_directories(script.parent_path());
  std::ofstream f(script);
  if (!f) throw ResourceError("cannot write " + script.string());
  f << "set datafile separator ','\n"
    << "set key autotitle columnhead\n"
    << "set title '" << title << "'\n"
    << "set grid\n"
    << "plot ";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) f << ", \\\n     ";
    f << "'" << csv.filename().string() << "' using 1:" << c + 2 << " with lines title '" << columns[c] << "'";
  }
  f << "\npause mouse close\n";
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out, std::ostream* log) {
  cfg.validate();
  PipelineResult r;
  const auto set_dir = out / "set";
  const auto data_dir = out / "data";
  const auto model_dir = out / "model";
  const auto manifests = out / "manifests";
  std::filesystem::create_directories(manifests);

  auto stage = [&](const std::string& name, auto&& body) {
    if (log) *log << "[" << name << "] start\n" << std::flush;
    Stopwatch w;
    try {
      body();
    } catch (const std::exception& e) {
      throw Error("stage " + name + ": " + e.what());
    }
    r.timing.push_back({name, w.seconds()});
    if (log) *log << "[" << name << "] done in " << w.seconds() << " s\n" << std::flush;
  };

  stage("discretize", [&] {
    r.set = discretize(cfg.discretize_options());
    save_discrete_set(r.set, set_dir);
    write_json(manifests / "discretize.json", make_manifest("discretize", cfg, {}));
    if (log) *log << "  " << r.set.size() << " classes\n";
  });

  Dataset train_set, verify_set;
  stage("gen-data", [&] {
    auto [tr, ve] = generate(r.set, cfg.gen_spec(), derive_seed(cfg.seed, {10}), cfg.jobs);
    train_set = std::move(tr);
    verify_set = std::move(ve);
    const std::string extra = json{{"seed", cfg.seed}, {"beta", cfg.beta_d}, {"h", cfg.h}}.dump();
    save_dataset(train_set, data_dir, "train", extra);
    save_dataset(verify_set, data_dir, "verify", extra);
    write_json(manifests / "gen-data.json", make_manifest("gen-data", cfg, {set_dir}));
    if (log) *log << "  " << train_set.size() << " train, " << verify_set.size() << " verify samples\n";
  });

  Network net;
  stage("train", [&] {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {20});
    tc.gamma = build_gamma_matrix(r.set);
    net = make_network(default_dims(r.set.size()), tc.dropout, derive_seed(cfg.seed, {21}), tc.init_scale);
    r.loss = train(net, train_set, tc, [&](std::size_t epoch, double loss) {
      if (log) *log << "  epoch " << epoch + 1 << "/" << tc.epochs << " loss " << loss << "\n" << std::flush;
      return true;
    });
    save_network(net, model_dir / "weights.bin", network_header(cfg, tc));
    write_loss_csv(r.loss, model_dir / "loss.csv");
    write_gnuplot_script(model_dir / "loss.gp", model_dir / "loss.csv", {"loss"}, "training loss");
    write_json(manifests / "train.json", make_manifest("train", cfg, {set_dir, data_dir / "train.bin"}));
  });

  stage("eval", [&] {
    r.verify = evaluate(net, verify_set, r.set);
    write_json(manifests / "eval.json", make_manifest("eval", cfg, {model_dir / "weights.bin", data_dir / "verify.bin"}));
    if (log) {
      *log << "  verify accuracy " << r.verify.accuracy * 100.0 << "%, mean J " << r.verify.mean_j * 100.0
           << "%, max J " << r.verify.max_j * 100.0 << "%, unstable " << r.verify.unstable << "\n";
    }
  });

  stage("test", [&] {
    const auto processes = sample_test_processes(cfg.bounds, cfg.test_processes, derive_seed(cfg.seed, {30}));
    r.outcomes = run_test_processes(processes, net, r.set, cfg.gen_spec(), derive_seed(cfg.seed, {31}), cfg.jobs);
    r.test = summarize(r.outcomes);
    std::ofstream f(out / "test_outcomes.csv");
    if (!f) throw ResourceError("cannot write " + (out / "test_outcomes.csv").string());
    f << "t_prop,t_body,tau,class,confidence,k_eq,time_scale,ise,ise_own,j,phase_margin_deg\n";
    for (const auto& o : r.outcomes) {
      f << format_double(o.p.t_prop) << ',' << format_double(o.p.t_body) << ',' << format_double(o.p.tau) << ','
        << o.id.cls << ',' << format_double(o.id.confidence) << ',' << format_double(o.id.k_eq) << ','
        << format_double(o.id.time_scale) << ','
        << format_double(o.ise) << ',' << format_double(o.ise_own) << ',' << format_double(o.j) << ','
        << format_double(o.phase_margin * kRad2Deg) << '\n';
    }
    write_json(manifests / "test.json", make_manifest("test", cfg, {model_dir / "weights.bin", set_dir}));
    if (log) {
      *log << "  off-set mean J " << r.test.mean_j * 100.0 << "%, max J " << r.test.max_j * 100.0 << "%, unstable "
           << r.test.unstable << "\n";
    }
  });

  json timing = json::object();
  for (const auto& t : r.timing) timing[t.stage] = t.seconds;
  json outcomes = json::array();
  for (const auto& o : r.outcomes) {
    json e{{"process", o.p}, {"j", finite_or_null(o.j)}, {"phase_margin_deg", o.phase_margin * kRad2Deg}};
    if (o.error.empty()) {
      e["identification"] = to_json(o.id);
    } else {
      e["error"] = o.error;
    }
    outcomes.push_back(e);
  }
  const json report{
      {"version", kVersion},
      {"config", cfg},
      {"classes", r.set.size()},
      {"verify", to_json(r.verify)},
      {"test", to_json(r.test)},
      {"final_loss", r.loss.empty() ? json(nullptr) : json(r.loss.back())},
      {"timing_s", timing},
      {"outcomes", outcomes},
      // Published full-range figures (208 classes, 6000 training samples) for comparison.
      {"reference",
       {{"classes", 208},
        {"verify_accuracy", 0.3846},
        {"verify_mean_j", 0.0030},
        {"verify_max_j", 0.0503},
        {"verify_min_phase_margin_deg", 13.73},
        {"test_mean_j", 0.0053},
        {"test_max_j", 0.0351}}}};
  write_json(out / "report.json", report);
  return r;
}

}  // namespace mrftid
