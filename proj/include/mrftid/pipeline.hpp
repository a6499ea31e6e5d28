#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "mrftid/dataset.hpp"
#include "mrftid/discretizer.hpp"
#include "mrftid/mlp.hpp"
#include "mrftid/tuning.hpp"

namespace mrftid {

// Settings shared by every stage of the identification pipeline.
struct PipelineConfig {
  std::string preset = "desk";
  ParamBounds bounds = ParamBounds::desk_range();
  double j_star = 0.10;
  double j_tol = 0.01;
  DesignOptions design;
  double beta_d = -0.73;
  double h = 1.0;
  GenSpec gen;
  TrainConfig train;
  std::size_t test_processes = 10;
  std::uint64_t seed = 1;
  std::size_t jobs = 0;  // 0: all hardware threads

  // "desk": reduced box, 10 train + 3 verify per class, 30 epochs.
  // "full": full box, 30 + 5 per class, 60 epochs.
  static PipelineConfig from_preset(const std::string& name);
  void validate() const;

  DiscretizeOptions discretize_options() const;
  GenSpec gen_spec() const;  // gen with the relay set to (beta_d, h)
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
// Missing keys keep the values of the preset named by "preset" (default desk).
void from_json(const nlohmann::json& j, PipelineConfig& c);
PipelineConfig load_config(const std::filesystem::path& path);

// Stage manifest: tool version, stage, seed, config and FNV-1a hashes of
// the given input files (directories hash every regular file inside).
nlohmann::json make_manifest(const std::string& stage, const PipelineConfig& cfg,
                             const std::vector<std::filesystem::path>& inputs);

// The class shape fixes the plant up to gain and time scale: the measured
// cycle is compared with the class's own noise-free unit-gain cycle at the
// same relay and input bias, giving k_eq from the ratio of cycle gains and the time scale
// from the ratio of periods. The class controller is rescaled accordingly.
struct Identification {
  std::size_t cls = 0;
  double confidence = 0.0;  // softmax probability of cls
  ProcessParams p;          // class parameters scaled in time, with the estimated gain
  double a0 = 0.0;
  double omega0 = 0.0;
  double k_eq = 0.0;
  double time_scale = 1.0;  // measured period over the class period
  double input_bias = 0.0;  // from the mean relay output
  // Gain from the harmonic-balance inversion on the unscaled class, for comparison.
  double k_eq_hb = 0.0;
  PidParams pid_lut;  // class controller at unit gain
  PidParams pid;      // kp / k_eq, time constants times time_scale
  HomogeneousRule rule;
};

// Last steady cycle of traj -> features -> class -> lookup table -> gain.
// relay is the relay the trajectory was recorded with, noise band and
// smoothing included. Throws
// NotSteadyError when no steady cycle is found and TooSlowError when its
// period exceeds the 2.26 s input window.
Identification identify(const Trajectory& traj, const Network& net, const DiscreteSet& d, const MrftConfig& relay,
                        double steady_tol = 0.05);

nlohmann::json to_json(const Identification& id);
std::string describe(const Identification& id);

// JSON fields stored in the weights file header: seed, epochs, gamma hash, relay beta and h.
std::string network_header(const PipelineConfig& cfg, const TrainConfig& tc);

// Off-set processes run through noisy MRFT, identification and closed-loop control.
struct TestOutcome {
  ProcessParams p;
  Identification id;
  SampleMeta meta;
  double ise = 0.0;       // identified controller on p
  double ise_own = 0.0;   // p's own optimal controller
  double j = 0.0;         // deterioration against the own optimum
  double phase_margin = 0.0;
  std::string error;  // set when identification failed; j is then +inf
};

std::vector<TestOutcome> run_test_processes(const std::vector<ProcessParams>& processes, const Network& net,
                                            const DiscreteSet& d, const GenSpec& spec, std::uint64_t seed,
                                            std::size_t jobs = 1);

Metrics summarize(const std::vector<TestOutcome>& outcomes);
nlohmann::json to_json(const Metrics& m);

struct StageTime {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineResult {
  DiscreteSet set;
  Metrics verify;
  Metrics test;
  std::vector<TestOutcome> outcomes;
  std::vector<double> loss;
  std::vector<StageTime> timing;
};

// discretize -> gen-data -> train -> eval -> identify/tune/simulate on off-set
// processes, writing every artifact below out and a report.json. Progress
// lines go to log when given. Stage failures are rethrown as Error naming the stage.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out, std::ostream* log = nullptr);

// gnuplot script plotting the named CSV columns against the first one.
void write_gnuplot_script(const std::filesystem::path& script, const std::filesystem::path& csv,
                          const std::vector<std::string>& columns, const std::string& title);

}  // namespace mrftid
