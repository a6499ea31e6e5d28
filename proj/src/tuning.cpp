#include "mrftid/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include "mrftid/errors.hpp"
#include "mrftid/optim.hpp"
#include "mrftid/parallel.hpp"
#include "mrftid/sim.hpp"

namespace mrftid {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::complex<double> controller_response(const PidParams& c, double omega) {
  const std::complex<double> jw(0.0, omega);
  std::complex<double> g = 1.0;
  if (!c.is_pd()) g += 1.0 / (jw * c.ti);
  if (c.td > 0.0) g += jw * c.td / (jw * c.derivative_filter + 1.0);
  return c.kp * g;
}

double loop_gain_log(const PidParams& c, const ProcessParams& p, double omega) {
  return std::log(std::abs(controller_response(c, omega))) + std::log(magnitude(p, omega));
}

}  // namespace

void HomogeneousRule::validate() const {
  if (!(c1 > 0.0) || !(c2 > 0.0) || !(c3 >= 0.0) || !(std::abs(beta) < 1.0)) {
    throw DomainError("homogeneous rule requires c1 > 0, c2 > 0, c3 >= 0, |beta| < 1");
  }
}

void IseScenario::validate() const {
  if (!(horizon_factor >= 20.0)) throw DomainError("ISE horizon factor must be at least 20");
  if (!(dt > 0.0) || !(divergence > 1.0) || reference == 0.0) {
    throw DomainError("ISE scenario requires dt > 0, divergence > 1 and a nonzero reference");
  }
}

double IseScenario::horizon(const ProcessParams& p) const {
  return horizon_factor * (p.t_prop + p.t_body + p.tau);
}

double IseScenario::step(const ProcessParams& p) const { return dt * (p.t_prop + p.t_body + p.tau); }

double ise_of_error(const std::vector<double>& e, double dt, double horizon) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw DomainError("ise_of_error requires dt > 0 and horizon > 0");
  double sum = 0.0;
  for (double x : e) sum += x * x;
  return sum * dt / horizon;
}

double ise(const PidParams& c, const ProcessParams& p, const IseScenario& scen) {
  scen.validate();
  p.validate();
  PidController pid(c);
  SimConfig cfg;
  cfg.dt = scen.step(p);
  cfg.horizon = scen.horizon(p);
  cfg.ref = Reference::step(scen.reference);
  const std::size_t n = cfg.samples();
  const std::size_t prev_from = n * 8 / 10;
  const std::size_t last_from = n * 9 / 10;
  const double bound = scen.divergence * std::abs(scen.reference);

  double sum = 0.0;
  double first = 0.0;
  double last = 0.0;
  double env_prev = 0.0;
  double env_last = 0.0;
  bool diverged = false;
  simulate_stream(p, pid, cfg, [&](std::size_t k, double, double pv, double) {
    if (!(std::abs(pv) <= bound)) {
      diverged = true;
      return false;
    }
    const double e = scen.reference - pv;
    sum += e * e;
    if (k == 0) first = e * e;
    last = e * e;
    if (k >= last_from) {
      env_last = std::max(env_last, std::abs(e));
    } else if (k >= prev_from) {
      env_prev = std::max(env_prev, std::abs(e));
    }
    return true;
  });
  if (diverged) return kInf;
  // A settled loop sits at rounding level in both windows; only a visible
  // error that fails to shrink counts as sustained.
  if (env_last > 1e-6 * std::abs(scen.reference) && env_last >= env_prev) return kInf;
  // Trapezoidal weights at both ends.
  return (sum - 0.5 * (first + last)) * cfg.dt / cfg.horizon;
}

double deterioration(double j_applied, double j_own) {
  if (!std::isfinite(j_own) || !(j_own > 0.0)) {
    throw DomainError("deterioration needs a finite positive own cost");
  }
  if (!std::isfinite(j_applied)) return kInf;
  return (j_applied - j_own) / j_own;
}

double joint_cost(const PidParams& c_i, const PidParams& c_j, const ProcessParams& g_j,
                  const IseScenario& scen) {
  if (c_i == c_j) return 0.0;
  return deterioration(ise(c_i, g_j, scen), ise(c_j, g_j, scen));
}

double symmetric_joint_cost(const PidParams& c_i, const ProcessParams& g_i, const PidParams& c_j,
                            const ProcessParams& g_j, const IseScenario& scen) {
  return std::max(joint_cost(c_i, c_j, g_j, scen), joint_cost(c_j, c_i, g_i, scen));
}

PidParams pid_from_oscillation(const HomogeneousRule& rule, double a0, double omega0, double h) {
  rule.validate();
  if (!(a0 > 0.0) || !(omega0 > 0.0) || !(h > 0.0)) {
    throw DomainError("pid_from_oscillation requires a0 > 0, omega0 > 0, h > 0");
  }
  PidParams c;
  c.kp = rule.c1 * 4.0 * h / (std::numbers::pi * a0);
  c.ti = rule.is_pd() ? kInf : rule.c2 * kTwoPi / omega0;
  c.td = rule.c3 * kTwoPi / omega0;
  return c;
}

PidParams pid_from_oscillation(const HomogeneousRule& rule, const Oscillation& osc, double h) {
  if (!osc.steady) throw DomainError("pid_from_oscillation needs a steady oscillation");
  return pid_from_oscillation(rule, osc.a0, osc.omega0, h);
}

double beta_for_phase_margin(double c2, double c3, double phi_m) {
  const double inv = std::isinf(c2) ? 0.0 : 1.0 / (kTwoPi * c2);
  const double arg = phi_m + std::atan(inv - kTwoPi * c3);
  if (!(std::abs(arg) < std::numbers::pi / 2.0)) {
    throw InfeasibleError("phase constraint argument " + std::to_string(arg) + " rad leaves (-pi/2, pi/2)");
  }
  return std::sin(arg);
}

double check_gain_constraint(double c1, double c2, double c3) {
  const double inv = std::isinf(c2) ? 0.0 : 1.0 / (kTwoPi * c2);
  const double x = kTwoPi * c3 - inv;
  return c1 * std::sqrt(1.0 + x * x) - 1.0;
}

double c1_for(double c2, double c3) {
  const double inv = std::isinf(c2) ? 0.0 : 1.0 / (kTwoPi * c2);
  const double x = kTwoPi * c3 - inv;
  return 1.0 / std::sqrt(1.0 + x * x);
}

HomogeneousRule pd_rule_for_beta(double beta, double phi_m) {
  if (!(std::abs(beta) < 1.0)) throw DomainError("beta must satisfy |beta| < 1");
  const double lead = phi_m - std::asin(beta);
  if (!(lead >= 0.0) || !(lead < std::numbers::pi / 2.0)) {
    throw InfeasibleError("no PD rule reaches beta = " + std::to_string(beta) + " at this phase margin");
  }
  const double c3 = std::tan(lead) / kTwoPi;
  return {c1_for(kInf, c3), kInf, c3, beta};
}

HomogeneousRule rule_from(double c2, double c3, double phi_m) {
  return {c1_for(c2, c3), c2, c3, beta_for_phase_margin(c2, c3, phi_m)};
}

double phase_margin(const PidParams& c, const ProcessParams& p) {
  p.validate();
  constexpr int kGrid = 4000;
  const double w_lo = 1e-4;
  const double w_hi = 1e5;
  const double ratio = std::pow(w_hi / w_lo, 1.0 / kGrid);
  double pm = kInf;
  double w0 = w_lo;
  double g0 = loop_gain_log(c, p, w0);
  for (int k = 1; k <= kGrid; ++k) {
    const double w1 = w0 * ratio;
    const double g1 = loop_gain_log(c, p, w1);
    if ((g0 > 0.0) != (g1 > 0.0)) {
      double lo = w0;
      double hi = w1;
      const bool falling = g0 > 0.0;
      for (int it = 0; it < 100 && hi / lo > 1.0 + 1e-14; ++it) {
        const double mid = std::sqrt(lo * hi);
        if ((loop_gain_log(c, p, mid) > 0.0) == falling) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      const double wc = std::sqrt(lo * hi);
      const double phase = std::arg(controller_response(c, wc)) + phase_unwrapped(p, wc);
      pm = std::min(pm, std::numbers::pi + phase);
    }
    w0 = w1;
    g0 = g1;
  }
  return pm;
}

void DesignOptions::validate() const {
  if (!(phi_m >= 0.0) || !(phi_m < std::numbers::pi / 2.0)) {
    throw DomainError("phase margin must lie in [0, pi/2)");
  }
  if (!(h > 0.0) || !(filter_ratio > 0.0)) throw DomainError("design needs h > 0 and filter_ratio > 0");
  scen.validate();
}

Oscillation excite(const ProcessParams& p, double beta, double h, OscillationSource source) {
  const auto hb = hb_predict(p, h, beta);
  if (source == OscillationSource::HarmonicBalance) {
    Oscillation osc;
    osc.a0 = hb.a0;
    osc.a1 = hb.a0;
    osc.omega0 = hb.omega0;
    osc.steady = true;
    return osc;
  }
  const double period = kTwoPi / hb.omega0;
  MrftController relay({beta, h, 0.0});
  SimConfig cfg;
  cfg.dt = std::min(1e-3, period / 1000.0);
  cfg.horizon = 40.0 * period;
  return detect_steady_cycle(simulate(p, relay, cfg));
}

PidParams design_from_rule(const HomogeneousRule& rule, const ProcessParams& p, const DesignOptions& opt) {
  const auto osc = excite(p, rule.beta, opt.h, opt.source);
  PidParams c = pid_from_oscillation(rule, osc, opt.h);
  c.derivative_filter = c.td / opt.filter_ratio;
  return c;
}

Design optimize_controller(const ProcessParams& p, const DesignOptions& opt) {
  opt.validate();
  p.validate();
  const bool pd = opt.structure == Structure::PD;
  constexpr double kC3Max = 3.0;

  auto rule_at = [&](const Eigen::VectorXd& x) {
    return pd ? rule_from(kInf, x(0), opt.phi_m) : rule_from(x(0), x(1), opt.phi_m);
  };
  auto cost_at = [&](const Eigen::VectorXd& x) {
    try {
      return ise(design_from_rule(rule_at(x), p, opt), p, opt.scen);
    } catch (const Error&) {
      return kInf;
    }
  };

  OptProblem prob;
  prob.objective = cost_at;
  prob.tol_x = opt.tol_x;
  prob.max_evals = opt.max_evals;
  if (pd) {
    prob.lower = Eigen::VectorXd::Constant(1, 0.0);
    prob.upper = Eigen::VectorXd::Constant(1, kC3Max);
  } else {
    prob.lower = Eigen::Vector2d(0.1, 0.0);
    prob.upper = Eigen::Vector2d(50.0, kC3Max);
  }

  // Coarse scan for the start so the simplex begins in the right basin.
  std::vector<Eigen::VectorXd> seeds;
  if (pd) {
    for (int k = 1; k <= 12; ++k) seeds.push_back(Eigen::VectorXd::Constant(1, 0.1 * k));
  } else {
    for (double c2 : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
      for (int k = 1; k <= 6; ++k) seeds.push_back(Eigen::Vector2d(c2, 0.2 * k));
    }
  }
  std::size_t evals = 0;
  double best = kInf;
  for (const auto& s : seeds) {
    const double f = cost_at(s);
    ++evals;
    if (f < best) {
      best = f;
      prob.x0 = s;
    }
  }
  if (!std::isfinite(best)) throw InfeasibleError("no stable controller found for this process");

  const auto res = minimize(prob);
  Design d;
  d.rule = rule_at(res.x);
  const auto osc = excite(p, d.rule.beta, opt.h, opt.source);
  d.a0 = osc.a0;
  d.omega0 = osc.omega0;
  d.pid = pid_from_oscillation(d.rule, osc, opt.h);
  d.pid.derivative_filter = d.pid.td / opt.filter_ratio;
  d.cost = ise(d.pid, p, opt.scen);
  d.evals = evals + res.evals + 1;
  if (!std::isfinite(d.cost)) throw InfeasibleError("optimized controller does not stabilize the process");
  return d;
}

PhaseSearch find_distinguishing_phase(const std::vector<ProcessParams>& processes,
                                      const std::vector<double>& beta_grid, const DesignOptions& opt,
                                      std::size_t jobs) {
  if (processes.empty()) throw DomainError("distinguishing phase search needs at least one process");
  opt.validate();
  PhaseSearch out;
  out.optima.resize(processes.size());
  parallel_for(processes.size(), jobs, [&](std::size_t j) { out.optima[j] = optimize_controller(processes[j], opt); });

  std::vector<HomogeneousRule> rules;
  for (double b : beta_grid) rules.push_back(pd_rule_for_beta(b, opt.phi_m));
  for (const auto& d : out.optima) rules.push_back(d.rule);
  for (const auto& r : rules) out.candidates.push_back(r.beta);

  const std::size_t nc = rules.size();
  const std::size_t np = processes.size();
  out.cost.assign(nc, std::vector<double>(np, kInf));
  parallel_for(nc * np, jobs, [&](std::size_t k) {
    const std::size_t c = k / np;
    const std::size_t j = k % np;
    try {
      out.cost[c][j] = ise(design_from_rule(rules[c], processes[j], opt), processes[j], opt.scen);
    } catch (const Error&) {
      out.cost[c][j] = kInf;
    }
  });

  double best = kInf;
  for (std::size_t c = 0; c < nc; ++c) {
    double worst = -kInf;
    for (std::size_t j = 0; j < np; ++j) {
      worst = std::max(worst, deterioration(out.cost[c][j], out.optima[j].cost));
    }
    out.worst.push_back(worst);
    if (worst < best) {
      best = worst;
      out.beta_d = rules[c].beta;
    }
  }
  if (!std::isfinite(best)) throw InfeasibleError("every candidate rule destabilizes some process");
  return out;
}

double estimate_k_eq(const Oscillation& osc, double h, const ProcessParams& p_identified) {
  if (!osc.steady) throw DomainError("estimate_k_eq needs a steady oscillation");
  if (!(h > 0.0)) throw DomainError("relay amplitude must be positive");
  const double w = osc.omega0;
  return std::numbers::pi * osc.a0 * w * std::hypot(1.0, w * p_identified.t_prop) *
         std::hypot(1.0, w * p_identified.t_body) / (4.0 * h);
}

double cycle_gain(const Oscillation& osc) {
  if (!osc.steady) throw DomainError("cycle_gain needs a steady oscillation");
  const std::size_t n = osc.cycle_pv.size();
  if (n < 4 || osc.cycle_u.size() != n) throw DomainError("cycle needs matching pv and u samples");
  // Bin-aligned: the cycle spans exactly one period.
  const double w = 2.0 * std::numbers::pi / static_cast<double>(n);
  std::complex<double> pv1, u1;
  for (std::size_t k = 0; k < n; ++k) {
    const auto e = std::polar(1.0, -w * static_cast<double>(k));
    pv1 += osc.cycle_pv[k] * e;
    u1 += osc.cycle_u[k] * e;
  }
  if (std::abs(u1) == 0.0) throw DomainError("input has no fundamental over the cycle");
  return std::abs(pv1) / std::abs(u1);
}

double estimate_k_eq_fundamental(const Oscillation& osc, const ProcessParams& p_identified) {
  ProcessParams unit = p_identified;
  unit.k_eq = 1.0;
  const double w = 2.0 * std::numbers::pi / (static_cast<double>(osc.cycle_pv.size()) * osc.dt);
  return cycle_gain(osc) / std::abs(frequency_response(unit, w));
}

}  // namespace mrftid
