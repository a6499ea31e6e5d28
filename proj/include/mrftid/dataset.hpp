#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mrftid/discretizer.hpp"
#include "mrftid/mrft.hpp"
#include "mrftid/process_model.hpp"
#include "mrftid/trajectory.hpp"

namespace mrftid {

inline constexpr double kFeatureDt = 1e-3;
inline constexpr std::size_t kChannelLength = 2260;  // 2.26 s at 1 ms
inline constexpr std::size_t kFeatureLength = 2 * kChannelLength;

// pv channel then u channel, each a single steady cycle starting at a
// positive-going switch of u, centered and scaled to max |value| 1, zero padded.
using FeatureVector = Eigen::VectorXd;

struct SampleMeta {
  double noise_power = 0.0;
  double input_bias = 0.0;  // absolute, in input units
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

// Samples are the columns of x.
struct Dataset {
  Eigen::MatrixXd x;
  std::vector<std::size_t> labels;
  std::vector<SampleMeta> meta;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct GenSpec {
  std::size_t train_per_class = 30;
  std::size_t verify_per_class = 5;
  // Oscillation amplitude over noise sigma, drawn uniformly in dB.
  double snr_db_lo = 30.0;
  double snr_db_hi = 50.0;
  // Input bias drawn uniformly in +-bias_fraction h.
  double bias_fraction = 0.5;
  MrftConfig mrft;  // beta, h; noise_band and turn_smoothing are set per sample
  double noise_band_sigmas = 4.0;
  double turn_smoothing = 5.0;
  double horizon_periods = 30.0;  // in harmonic-balance periods
  double steady_tol = 0.05;
  std::size_t retries = 4;

  void validate() const;
};

// Single steady cycle to FeatureVector. Resamples to 1 ms when osc.dt
// differs (pv linearly, u by hold). Throws NotSteadyError when osc is not
// steady and TooSlowError when its period exceeds 2.26 s.
FeatureVector preprocess(const Oscillation& osc);

// Detects the last steady cycle of traj first.
FeatureVector preprocess(const Trajectory& traj, double steady_tol = 0.02);

// MRFT run on p with additive pv noise and input bias; ref = 0.
Trajectory mrft_response(const ProcessParams& p, const MrftConfig& mrft, double horizon, double noise_power,
                         double input_bias, std::uint64_t seed);

// One MRFT run of p over spec.horizon_periods harmonic-balance periods with
// SNR and input bias drawn from spec by seed; noise band and turn smoothing
// follow the drawn noise level.
Trajectory noisy_mrft_run(const ProcessParams& p, const GenSpec& spec, std::uint64_t seed, SampleMeta* meta = nullptr);

// Noisy biased MRFT run on one class, preprocessed. Draws SNR and bias from
// spec with the given seed; retries with derived seeds when no steady cycle
// forms. Throws GenerationError naming the class after the last retry.
std::pair<FeatureVector, SampleMeta> generate_sample(const ProcessParams& p, std::size_t label, const GenSpec& spec,
                                                     std::uint64_t seed);

// Train and verify sets over all classes of d, each sample seeded from
// (seed, class, split, index). Deterministic for any job count.
std::pair<Dataset, Dataset> generate(const DiscreteSet& d, const GenSpec& spec, std::uint64_t seed,
                                     std::size_t jobs = 1);

// n parameter triples drawn log-uniformly per coordinate inside bounds, k_eq = 1.
std::vector<ProcessParams> sample_test_processes(const ParamBounds& bounds, std::size_t n, std::uint64_t seed);

// Mixes a base seed with stream indices (splitmix64 finalizer per step).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts);

// <dir>/<name>.bin: "MRFTDSET", u32 version, u64 rows, u64 cols, f64 data
// column-major, u64 labels. <dir>/<name>.json: classes, per-sample meta and
// the caller's extra fields.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& name,
                  const std::string& extra_json = "{}");
Dataset load_dataset(const std::filesystem::path& dir, const std::string& name);

// One sample as t,pv,u columns over its padded 2.26 s window.
void export_sample_csv(const Dataset& ds, std::size_t i, const std::filesystem::path& path);

// Trajectory CSV with a t,pv,u header; dt from the first two rows.
Trajectory read_trajectory_csv(const std::filesystem::path& path);
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);

}  // namespace mrftid
