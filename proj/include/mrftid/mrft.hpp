#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "mrftid/process_model.hpp"
#include "mrftid/trajectory.hpp"

namespace mrftid {

struct MrftConfig {
  double beta = -0.73;
  double h = 1.0;
  double u0_offset = 0.0;
  // Error excursion treated as noise: half-wave signs only flip beyond it and
  // a switch is only armed once the error has turned by more than it. Zero
  // reproduces the ideal relay.
  double noise_band = 0.0;
  // A switch is only armed after dwelling at least this fraction of the
  // previous dwell at the same output level. Keeps noise near the extrema
  // from re-arming the relay right after a switch; 0 disables it.
  double min_dwell = 0.5;
  // Time constant, in samples, of the exponential smoothing applied to the
  // error before turn detection. Switching thresholds still use the raw
  // error. 0 tracks turns on the raw error.
  double turn_smoothing = 0.0;

  void validate() const;
};

// Relay memory. `half` is the sign of the current error half-wave (0 before
// the first sample); e_max / e_min are the extrema of the latest positive /
// negative half-wave. `turn` is the error extremum reached since the last
// switch and `armed` records that the error has moved back from it.
struct MrftState {
  double e_max = 0.0;
  double e_min = 0.0;
  double u_prev = 0.0;  // +h, -h, or 0 before the first step
  int half = 0;
  bool armed = true;
  double turn = 0.0;
  double e_smooth = 0.0;
  std::size_t dwell = 0;           // samples since the last switch
  std::size_t last_dwell_hi = 0;   // length of the previous +h stretch, 0 if none
  std::size_t last_dwell_lo = 0;
};

// One sample of the modified relay. Returns +-h (+ u0_offset).
//
// Thresholds are b1 = -beta e_min and b2 = beta e_max: +h is selected when
// e >= b1, -h when e <= -b2, and the output is held otherwise. For beta < 0
// both regions overlap, so a switch away from the current output is only
// taken once the error has turned since the previous switch (passed its
// peak while +h is applied, its trough while -h is applied). This keeps
// the relay from flipping straight back after a lead switch, and still
// lets it switch when a bias keeps the error on one side of zero.
double mrft_step(MrftState& state, double e, const MrftConfig& cfg);

// asin(beta): phase of the excited oscillation, radians.
double phase_of_beta(double beta);

// Describing function of the modified relay at amplitude a0.
std::complex<double> df_mrft(double a0, double h, double beta);

struct HbPrediction {
  double a0 = 0.0;
  double omega0 = 0.0;
};

// Harmonic-balance prediction of the MRFT limit cycle on p. Throws
// NoCrossingError when arg W_p never reaches -pi + asin(beta) below omega_cap.
HbPrediction hb_predict(const ProcessParams& p, double h, double beta, double omega_cap = 1e5);

// One detected steady cycle. The cycle starts at a positive-going switch of u.
struct Oscillation {
  double a0 = 0.0;      // half peak-to-peak of pv over the cycle
  double a1 = 0.0;      // amplitude of the fundamental of pv over the cycle
  double omega0 = 0.0;  // 2 pi / period
  double dt = 1e-3;
  std::size_t start = 0;  // index into the source trajectory
  std::vector<double> cycle_pv;
  std::vector<double> cycle_u;
  bool steady = false;

  double period() const;
};

struct CycleStats {
  std::size_t start = 0;
  std::size_t length = 0;
  double half_p2p = 0.0;
  double fundamental = 0.0;
};

// Positive-going switch indices of u (jumps above half the largest jump).
std::vector<std::size_t> positive_switches(const std::vector<double>& u);

std::vector<CycleStats> cycle_stats(const Trajectory& traj);

// Returns the last cycle whose period and fundamental amplitude agree with
// the preceding cycle within rel_tol. Throws NotSteadyError otherwise or when
// fewer than three full cycles are present.
Oscillation detect_steady_cycle(const Trajectory& traj, double rel_tol = 0.02);

}  // namespace mrftid
