#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "mrftid/mrft.hpp"
#include "mrftid/pid.hpp"
#include "mrftid/process_model.hpp"
#include "mrftid/trajectory.hpp"

namespace mrftid {

// Reference signal: `initial` before step_time, `value` from step_time on.
struct Reference {
  double initial = 0.0;
  double value = 0.0;
  double step_time = 0.0;

  static Reference constant(double v) { return {v, v, 0.0}; }
  static Reference step(double v, double at = 0.0) { return {0.0, v, at}; }
  double at(double t) const { return t < step_time ? initial : value; }
};

struct SimConfig {
  double dt = 1e-3;
  double horizon = 10.0;
  double noise_power = 0.0;  // variance of additive pv noise
  double input_bias = 0.0;   // added to the plant input after the controller
  std::uint64_t seed = 0;
  Reference ref = Reference::constant(0.0);
  std::size_t max_samples = 50'000'000;

  void validate() const;
  std::size_t samples() const;
};

// Stateful discrete-time controller driven once per sample.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() = 0;
  virtual double step(double ref, double pv, double dt) = 0;
  virtual std::unique_ptr<Controller> clone() const = 0;
};

class ZeroController final : public Controller {
 public:
  void reset() override {}
  double step(double, double, double) override { return 0.0; }
  std::unique_ptr<Controller> clone() const override { return std::make_unique<ZeroController>(); }
};

// Replays a fixed input sequence; zero after it runs out.
class OpenLoopController final : public Controller {
 public:
  explicit OpenLoopController(std::vector<double> sequence) : sequence_(std::move(sequence)) {}
  void reset() override { k_ = 0; }
  double step(double, double, double) override {
    return k_ < sequence_.size() ? sequence_[k_++] : 0.0;
  }
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<OpenLoopController>(sequence_);
  }

 private:
  std::vector<double> sequence_;
  std::size_t k_ = 0;
};

// PID with proportional and integral action on e = ref - pv and the
// derivative on -pv. Integral by forward Euler, filtered derivative by
// backward Euler, which stays monotone for any filter constant including 0.
class PidController final : public Controller {
 public:
  explicit PidController(PidParams params) : params_(params) {}
  void reset() override;
  double step(double ref, double pv, double dt) override;
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<PidController>(params_);
  }
  const PidParams& params() const { return params_; }

 private:
  PidParams params_;
  double integral_ = 0.0;
  double derivative_ = 0.0;
  double pv_prev_ = 0.0;
  bool primed_ = false;
};

class MrftController final : public Controller {
 public:
  explicit MrftController(MrftConfig cfg) : cfg_(cfg) { cfg_.validate(); }
  void reset() override { state_ = {}; }
  double step(double ref, double pv, double) override { return mrft_step(state_, ref - pv, cfg_); }
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<MrftController>(cfg_);
  }
  const MrftState& state() const { return state_; }

 private:
  MrftConfig cfg_;
  MrftState state_;
};

struct TakeoffConfig {
  double k_i = 1.0;
  double z_ref = 1.0;
  double zdot_max = 0.5;
  // false: integrate while z < z_ref OR zdot < zdot_max (as printed);
  // true: integrate only while both hold.
  bool conjunctive = false;

  void validate() const;
};

struct TakeoffState {
  double u_i = 0.0;
};

// Integral takeoff law countering a constant input bias. Integrates
// k_i (z_ref - z) while the climb condition holds, otherwise holds u_i.
double takeoff_controller_step(TakeoffState& state, double z, double zdot, const TakeoffConfig& cfg,
                               double dt);

// Takeoff integrator with zdot from a backward difference of pv. Uses its own
// z_ref and ignores the loop reference.
class TakeoffController final : public Controller {
 public:
  explicit TakeoffController(TakeoffConfig cfg) : cfg_(cfg) { cfg_.validate(); }
  void reset() override {
    state_ = {};
    has_prev_ = false;
  }
  double step(double ref, double pv, double dt) override;
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<TakeoffController>(cfg_);
  }

 private:
  TakeoffConfig cfg_;
  TakeoffState state_;
  double pv_prev_ = 0.0;
  bool has_prev_ = false;
};

class SumController final : public Controller {
 public:
  SumController() = default;
  SumController(const SumController& other);
  void add(std::unique_ptr<Controller> c) { parts_.push_back(std::move(c)); }
  void reset() override;
  double step(double ref, double pv, double dt) override;
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<SumController>(*this);
  }

 private:
  std::vector<std::unique_ptr<Controller>> parts_;
};

// Fixed-length FIFO realizing an integer-sample transport delay.
class DelayLine {
 public:
  explicit DelayLine(std::size_t samples) : buf_(samples, 0.0) {}
  // Pushes x and returns the value pushed `samples` calls ago (0 initially).
  double push(double x) {
    if (buf_.empty()) return x;
    const double out = buf_[head_];
    buf_[head_] = x;
    head_ = (head_ + 1) % buf_.size();
    return out;
  }
  std::size_t length() const { return buf_.size(); }

 private:
  std::vector<double> buf_;
  std::size_t head_ = 0;
};

// Exact zero-order-hold discretization of the lag-lag-integrator chain with
// tau = delay_samples dt + frac_delay:
//   x_{k+1} = ad x_k + bd u_{k-d} + bd_prev u_{k-d-1}
// State is (propulsion lag output, body lag output, y).
struct DiscretePlant {
  Eigen::Matrix3d ad;
  Eigen::Vector3d bd;
  Eigen::Vector3d bd_prev = Eigen::Vector3d::Zero();
  std::size_t delay_samples = 0;
  double frac_delay = 0.0;

  static DiscretePlant from(const ProcessParams& p, double dt);
};

// Closed-loop run: pv_k = y_k + noise_k, u_k = controller(ref_k, pv_k), the
// plant sees u delayed by tau plus the bias, held between samples.
// Deterministic per seed.
Trajectory simulate(const ProcessParams& p, Controller& controller, const SimConfig& cfg);

// Same loop without storing the run: `sink(k, t, pv, u)` sees every sample
// and may stop the run early by returning false. Returns samples visited.
using SampleSink = std::function<bool(std::size_t k, double t, double pv, double u)>;
std::size_t simulate_stream(const ProcessParams& p, Controller& controller, const SimConfig& cfg,
                            const SampleSink& sink);

}  // namespace mrftid
