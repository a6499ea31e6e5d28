#pragma once

#include <cstddef>
#include <numbers>
#include <vector>

#include "mrftid/mrft.hpp"
#include "mrftid/pid.hpp"
#include "mrftid/process_model.hpp"

namespace mrftid {

enum class Structure { PD, PID };

// Where the (a0, Omega0) pair used by a tuning rule comes from during design:
// the harmonic-balance prediction, or a simulated MRFT run.
enum class OscillationSource { HarmonicBalance, Simulated };

// Homogeneous tuning rule: kp = c1 4h/(pi a0), ti = c2 2pi/Omega0,
// td = c3 2pi/Omega0, applied to the oscillation excited at `beta`.
struct HomogeneousRule {
  double c1 = 1.0;
  double c2 = kInf;
  double c3 = 0.0;
  double beta = 0.0;

  bool is_pd() const { return std::isinf(c2); }
  void validate() const;
  bool operator==(const HomogeneousRule&) const = default;
};

// Unit step response of the loop, scored over Ts = horizon_factor (t_prop + t_body + tau).
// The step is dt at t_prop + t_body + tau = 1 s and scales with that sum, so
// every process gets horizon_factor / dt samples and G(alpha s) is simulated
// as an exact time-scaled copy of G.
struct IseScenario {
  double horizon_factor = 30.0;
  double dt = 1e-3;
  double divergence = 100.0;  // |pv| beyond divergence * |reference| counts as unstable
  double reference = 1.0;

  void validate() const;
  double horizon(const ProcessParams& p) const;
  double step(const ProcessParams& p) const;
};

// (1/Ts) sum e_k^2 dt. Plain rectangle sum over the given samples.
double ise_of_error(const std::vector<double>& e, double dt, double horizon);

// ISE of the PID loop on p by the trapezoidal rule over the samples; +inf when the loop diverges or its error
// envelope over the last 10% of the horizon is not below the one before it.
double ise(const PidParams& c, const ProcessParams& p, const IseScenario& scen = {});

// (j_applied - j_own) / j_own as a fraction, +inf if j_applied is. Values
// below zero are returned as they are.
double deterioration(double j_applied, double j_own);

// J_ij: deterioration of applying c_i on g_j relative to g_j's own c_j.
double joint_cost(const PidParams& c_i, const PidParams& c_j, const ProcessParams& g_j,
                  const IseScenario& scen = {});

// J_(ij) = max(J_ij, J_ji).
double symmetric_joint_cost(const PidParams& c_i, const ProcessParams& g_i, const PidParams& c_j,
                            const ProcessParams& g_j, const IseScenario& scen = {});

// Applies the rule to a recorded oscillation. Throws DomainError if the
// oscillation is not steady. The derivative filter is left at zero.
PidParams pid_from_oscillation(const HomogeneousRule& rule, const Oscillation& osc, double h);
PidParams pid_from_oscillation(const HomogeneousRule& rule, double a0, double omega0, double h);

// sin(phi_m + atan(1/(2 pi c2) - 2 pi c3)). Throws InfeasibleError when the
// argument leaves (-pi/2, pi/2).
double beta_for_phase_margin(double c2, double c3, double phi_m);

// c1 sqrt(1 + (2 pi c3 - 1/(2 pi c2))^2) - 1; zero on the gain constraint.
double check_gain_constraint(double c1, double c2, double c3);

// c1 that puts (c2, c3) on the gain constraint.
double c1_for(double c2, double c3);

// PD rule (c2 = inf) whose phase-margin constraint yields `beta`.
// Throws InfeasibleError for beta outside (sin(phi_m - pi/2), sin(phi_m)].
HomogeneousRule pd_rule_for_beta(double beta, double phi_m);

// Rule with c1 from the gain constraint and beta from the phase constraint.
HomogeneousRule rule_from(double c2, double c3, double phi_m);

// Loop phase margin of c on p in radians: min over gain crossovers of
// pi + arg(C W_p), including the derivative filter. +inf without a crossover.
double phase_margin(const PidParams& c, const ProcessParams& p);

struct DesignOptions {
  Structure structure = Structure::PD;
  double phi_m = 20.0 * std::numbers::pi / 180.0;
  double h = 1.0;
  // Derivative filter time constant is td / filter_ratio.
  double filter_ratio = 1000.0;
  OscillationSource source = OscillationSource::HarmonicBalance;
  IseScenario scen;
  std::size_t max_evals = 200;
  double tol_x = 1e-4;

  void validate() const;
};

// MRFT oscillation of p at beta from the chosen source. The simulated run
// lasts 40 predicted periods and throws NotSteadyError if it never settles.
Oscillation excite(const ProcessParams& p, double beta, double h, OscillationSource source);

// Rule applied to p's own oscillation at rule.beta, with the derivative filter set.
PidParams design_from_rule(const HomogeneousRule& rule, const ProcessParams& p, const DesignOptions& opt = {});

struct Design {
  HomogeneousRule rule;
  PidParams pid;
  double cost = 0.0;  // ISE of pid on the design process
  double a0 = 0.0;
  double omega0 = 0.0;
  std::size_t evals = 0;
};

// ISE-optimal homogeneous rule for p under the phase-margin constraints.
// PD searches c3; PID searches (c2, c3). Throws InfeasibleError when no
// candidate gives a stable loop.
Design optimize_controller(const ProcessParams& p, const DesignOptions& opt = {});

struct PhaseSearch {
  double beta_d = 0.0;
  std::vector<double> candidates;        // betas tried: the grid, then per-process optima
  std::vector<double> worst;             // max deterioration of each candidate
  std::vector<Design> optima;            // per process
  std::vector<std::vector<double>> cost;  // cost[c][j]: ISE of candidate c's rule on process j
};

// For every process find its optimal PD rule, apply every candidate rule to
// every process and return the beta with the smallest worst-case
// deterioration. Throws InfeasibleError if every candidate destabilizes some process.
PhaseSearch find_distinguishing_phase(const std::vector<ProcessParams>& processes,
                                      const std::vector<double>& beta_grid, const DesignOptions& opt = {},
                                      std::size_t jobs = 1);

// k_eq = pi a0 Omega0 |1 + j Omega0 t_prop| |1 + j Omega0 t_body| / (4h).
double estimate_k_eq(const Oscillation& osc, double h, const ProcessParams& p_identified);

// |PV_1| / |U_1|: plant gain at the cycle frequency from the first Fourier
// coefficients of pv and u over the cycle. Exact for a linear plant in
// periodic steady state; unlike the describing-function form it needs no
// symmetric square wave, so an input bias that skews the duty cycle does
// not bias it.
double cycle_gain(const Oscillation& osc);

// cycle_gain(osc) / |W(j Omega0)| at unit gain.
double estimate_k_eq_fundamental(const Oscillation& osc, const ProcessParams& p_identified);

}  // namespace mrftid
