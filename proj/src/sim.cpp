#include "mrftid/sim.hpp"

#include <cmath>
#include <random>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "mrftid/errors.hpp"

namespace mrftid {

void SimConfig::validate() const {
  if (!(dt > 0.0) || !(horizon > 0.0) || !(noise_power >= 0.0)) {
    throw DomainError("simulation config requires dt > 0, horizon > 0, noise_power >= 0");
  }
}

std::size_t SimConfig::samples() const {
  const double n = std::floor(horizon / dt + 0.5);
  if (n > static_cast<double>(max_samples)) {
    throw ResourceError("simulation needs " + std::to_string(n) + " samples, cap is " +
                        std::to_string(max_samples));
  }
  return static_cast<std::size_t>(n);
}

void PidController::reset() {
  integral_ = 0.0;
  derivative_ = 0.0;
  pv_prev_ = 0.0;
  primed_ = false;
}

double PidController::step(double ref, double pv, double dt) {
  const double e = ref - pv;
  const double tf = params_.derivative_filter;
  // Derivative on -pv: same loop transfer, no kick on reference steps.
  if (params_.td > 0.0 && primed_) {
    derivative_ = (tf * derivative_ - params_.td * (pv - pv_prev_)) / (tf + dt);
  }
  pv_prev_ = pv;
  primed_ = true;
  double u = e + derivative_;
  if (!params_.is_pd()) {
    u += integral_ / params_.ti;
    integral_ += e * dt;
  }
  return params_.kp * u;
}

void TakeoffConfig::validate() const {
  if (!(k_i > 0.0) || !(zdot_max > 0.0)) {
    throw DomainError("takeoff controller requires k_i > 0 and zdot_max > 0");
  }
}

double takeoff_controller_step(TakeoffState& state, double z, double zdot, const TakeoffConfig& cfg,
                               double dt) {
  const bool below = z < cfg.z_ref;
  const bool slow = zdot < cfg.zdot_max;
  const bool integrate = cfg.conjunctive ? (below && slow) : (below || slow);
  if (integrate) state.u_i += cfg.k_i * (cfg.z_ref - z) * dt;
  return state.u_i;
}

double TakeoffController::step(double, double pv, double dt) {
  const double zdot = has_prev_ ? (pv - pv_prev_) / dt : 0.0;
  pv_prev_ = pv;
  has_prev_ = true;
  return takeoff_controller_step(state_, pv, zdot, cfg_, dt);
}

SumController::SumController(const SumController& other) {
  for (const auto& c : other.parts_) parts_.push_back(c->clone());
}

void SumController::reset() {
  for (auto& c : parts_) c->reset();
}

double SumController::step(double ref, double pv, double dt) {
  double u = 0.0;
  for (auto& c : parts_) u += c->step(ref, pv, dt);
  return u;
}

DiscretePlant DiscretePlant::from(const ProcessParams& p, double dt) {
  p.validate();
  if (!(dt > 0.0)) throw DomainError("sample time must be positive");
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(0, 0) = -1.0 / p.t_prop;
  m(1, 0) = 1.0 / p.t_body;
  m(1, 1) = -1.0 / p.t_body;
  m(2, 1) = 1.0;
  m(0, 3) = p.k_eq / p.t_prop;
  // exp([[A, B], [0, 0]] t) = [[e^{At}, Gamma(t)], [0, 1]] with Gamma(t) = int_0^t e^{As} ds B.
  auto block = [&m](double t) -> Eigen::Matrix4d { return (m * t).exp(); };

  DiscretePlant d;
  double whole = std::floor(p.tau / dt);
  double frac = p.tau - whole * dt;
  if (frac > dt * (1.0 - 1e-9)) {
    whole += 1.0;
    frac = 0.0;
  }
  if (frac < dt * 1e-9) frac = 0.0;
  d.delay_samples = static_cast<std::size_t>(whole);
  d.frac_delay = frac;

  const Eigen::Matrix4d full = block(dt);
  d.ad = full.topLeftCorner<3, 3>();
  if (frac == 0.0) {
    d.bd = full.topRightCorner<3, 1>();
    d.bd_prev.setZero();
  } else {
    // Over one sample the delayed input holds u_{k-d-1} for frac, then u_{k-d}.
    const Eigen::Matrix4d late = block(dt - frac);
    const Eigen::Matrix4d early = block(frac);
    d.bd = late.topRightCorner<3, 1>();
    d.bd_prev = late.topLeftCorner<3, 3>() * early.topRightCorner<3, 1>();
  }
  return d;
}

std::size_t simulate_stream(const ProcessParams& p, Controller& controller, const SimConfig& cfg,
                            const SampleSink& sink) {
  cfg.validate();
  const std::size_t n = cfg.samples();
  const DiscretePlant plant = DiscretePlant::from(p, cfg.dt);
  DelayLine delay(plant.delay_samples);

  std::mt19937_64 rng(cfg.seed);
  const bool noisy = cfg.noise_power > 0.0;
  std::normal_distribution<double> noise(0.0, noisy ? std::sqrt(cfg.noise_power) : 1.0);

  controller.reset();
  Eigen::Vector3d x = Eigen::Vector3d::Zero();
  double prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const double pv = x(2) + (noisy ? noise(rng) : 0.0);
    const double u = controller.step(cfg.ref.at(t), pv, cfg.dt);
    const double now = delay.push(u);
    x = plant.ad * x + plant.bd * (now + cfg.input_bias) + plant.bd_prev * (prev + cfg.input_bias);
    prev = now;
    if (!sink(k, t, pv, u)) return k + 1;
  }
  return n;
}

Trajectory simulate(const ProcessParams& p, Controller& controller, const SimConfig& cfg) {
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.reserve(cfg.samples());
  simulate_stream(p, controller, cfg, [&traj](std::size_t, double t, double pv, double u) {
    traj.push_back(t, pv, u);
    return true;
  });
  return traj;
}

}  // namespace mrftid
