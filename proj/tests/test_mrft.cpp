#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mrftid/errors.hpp"
#include "mrftid/mrft.hpp"
#include "mrftid/sim.hpp"

using namespace mrftid;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Trajectory run_mrft(const ProcessParams& p, double beta, double horizon, double h = 1.0) {
  MrftController c({beta, h, 0.0});
  SimConfig cfg;
  cfg.horizon = horizon;
  return simulate(p, c, cfg);
}

// Sine pv over square-wave u with the given period in samples.
Trajectory synthetic(std::size_t period, std::size_t cycles, double amp, double growth = 0.0) {
  Trajectory t;
  const double w = 2.0 * std::numbers::pi / static_cast<double>(period);
  for (std::size_t k = 0; k < period * cycles + 1; ++k) {
    const double phase = w * static_cast<double>(k);
    const double a = amp * (1.0 + growth * static_cast<double>(k) / static_cast<double>(period));
    const double u = std::fmod(static_cast<double>(k), static_cast<double>(period)) <
                             static_cast<double>(period) / 2.0
                         ? 1.0
                         : -1.0;
    t.push_back(static_cast<double>(k) * 1e-3, a * std::sin(phase), u);
  }
  return t;
}

}  // namespace

TEST_CASE("mrft_step first branch from a fresh state") {
  MrftState s;
  s.u_prev = -1.0;
  CHECK(mrft_step(s, 0.5, {-0.73, 1.0, 0.0}) == 1.0);
  MrftState fresh;
  CHECK(mrft_step(fresh, 0.5, {0.3, 2.0, 0.0}) == 2.0);
}

TEST_CASE("mrft_step negative beta switches before the zero crossing") {
  MrftConfig cfg{-0.73, 1.0, 0.0};
  cfg.min_dwell = 0.0;
  MrftState s{1.0, -1.0, 1.0, 1, true};
  // Error falling from its peak of 1: b2 = -0.73, so -h once e <= 0.73.
  CHECK(mrft_step(s, 0.9, cfg) == 1.0);
  CHECK(mrft_step(s, 0.75, cfg) == 1.0);
  CHECK(mrft_step(s, 0.73, cfg) == -1.0);
  // Still positive error, the relay must not flip back.
  CHECK(mrft_step(s, 0.5, cfg) == -1.0);
  CHECK(mrft_step(s, 0.0, cfg) == -1.0);
  CHECK(mrft_step(s, -0.6, cfg) == -1.0);
  CHECK(mrft_step(s, -1.0, cfg) == -1.0);
  // Rising from the trough: switch at e >= -beta * e_min = -0.73.
  CHECK(mrft_step(s, -0.8, cfg) == -1.0);
  CHECK(mrft_step(s, -0.73, cfg) == 1.0);
  // Falling back below the level after turning: the -h condition holds again.
  CHECK(mrft_step(s, -0.9, cfg) == -1.0);
}

TEST_CASE("mrft_step holds a fresh switch for part of the previous dwell") {
  const MrftConfig cfg{-0.73, 1.0, 0.0};
  MrftState s{1.0, -1.0, -1.0, -1, true, -1.0};
  s.last_dwell_hi = 10;
  // Trough return: +h at e >= -0.73.
  CHECK(mrft_step(s, -0.73, cfg) == 1.0);
  // The error dips again at once; the -h condition holds but the previous
  // +h stretch lasted 10 samples, so the relay waits for 5.
  for (int k = 1; k < 5; ++k) CHECK(mrft_step(s, -0.9, cfg) == 1.0);
  CHECK(mrft_step(s, -0.9, cfg) == -1.0);
  MrftConfig bad = cfg;
  bad.min_dwell = 1.0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("turn smoothing keeps a noisy relay locked") {
  const ProcessParams p{1.0, 0.3, 2.0, 0.1};
  MrftConfig clean_cfg;
  MrftController clean(clean_cfg);
  SimConfig sc;
  sc.horizon = 40.0;
  const auto ref = detect_steady_cycle(simulate(p, clean, sc));
  // 40 dB below the oscillation amplitude.
  const double sigma = ref.a1 / 100.0;
  sc.noise_power = sigma * sigma;
  sc.seed = 7;
  MrftConfig raw_cfg;
  raw_cfg.noise_band = 4.0 * sigma;
  MrftConfig smooth_cfg = raw_cfg;
  smooth_cfg.turn_smoothing = 5.0;
  MrftController smooth(smooth_cfg);
  const auto osc = detect_steady_cycle(simulate(p, smooth, sc), 0.05);
  CHECK(osc.period() == doctest::Approx(ref.period()).epsilon(0.1));
  CHECK(osc.a1 == doctest::Approx(ref.a1).epsilon(0.2));
  // Input bias on top of 30 dB noise still gives a steady cycle.
  sc.noise_power = 10.0 * sc.noise_power;
  sc.input_bias = 0.25;
  smooth_cfg.noise_band = 4.0 * std::sqrt(sc.noise_power);
  MrftController biased(smooth_cfg);
  CHECK_NOTHROW(detect_steady_cycle(simulate(p, biased, sc), 0.05));
}

TEST_CASE("mrft_step with beta = 0 is the classic relay") {
  const MrftConfig cfg{0.0, 1.0, 0.0};
  MrftState s;
  const double w = 2.0 * std::numbers::pi / 100.0;
  double prev_e = std::sin(0.5 * w);
  double prev_u = mrft_step(s, prev_e, cfg);
  for (int k = 1; k < 400; ++k) {
    const double e = std::sin((k + 0.5) * w);
    const double u = mrft_step(s, e, cfg);
    CHECK(std::abs(u) == 1.0);
    CHECK(u == (e >= 0.0 ? 1.0 : -1.0));
    prev_u = u;
    prev_e = e;
  }
  (void)prev_u;
  (void)prev_e;
}

TEST_CASE("mrft_step holds its output inside the noise band") {
  const MrftConfig cfg{0.0, 1.0, 0.0, 0.1};
  MrftState s;
  CHECK(mrft_step(s, 0.2, cfg) == 1.0);
  CHECK(mrft_step(s, -0.05, cfg) == 1.0);
  CHECK(mrft_step(s, -0.09, cfg) == 1.0);
  CHECK(mrft_step(s, -0.11, cfg) == -1.0);
  CHECK(mrft_step(s, 0.05, cfg) == -1.0);
  CHECK(mrft_step(s, 0.11, cfg) == 1.0);
}

TEST_CASE("mrft_step recovers when a bias keeps the error on one side") {
  // Error never crosses zero: the relay must still alternate at the turns.
  const MrftConfig cfg{-0.73, 1.0, 0.0};
  MrftState s;
  int switches = 0;
  double prev = mrft_step(s, 0.5, cfg);
  for (int k = 1; k < 2000; ++k) {
    const double e = 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * k / 200.0);
    const double u = mrft_step(s, e, cfg);
    if (u != prev) ++switches;
    prev = u;
  }
  CHECK(switches >= 15);
}

TEST_CASE("mrft_step output offset") {
  MrftState s;
  CHECK(mrft_step(s, 1.0, {0.2, 1.5, 0.25}) == doctest::Approx(1.75));
  CHECK(mrft_step(s, -1.0, {0.2, 1.5, 0.25}) == doctest::Approx(-1.25));
}

TEST_CASE("phase_of_beta") {
  CHECK(phase_of_beta(0.0) == 0.0);
  CHECK(phase_of_beta(-0.73) / kDeg == doctest::Approx(-46.89).epsilon(0.01 / 46.89));
  CHECK(phase_of_beta(1.0 - 1e-12) / kDeg == doctest::Approx(90.0).epsilon(1e-5));
  CHECK_THROWS_AS(phase_of_beta(1.0), DomainError);
}

TEST_CASE("df_mrft") {
  const auto n0 = df_mrft(1.0, 1.0, 0.0);
  CHECK(n0.real() == doctest::Approx(4.0 / std::numbers::pi).epsilon(1e-15));
  CHECK(n0.imag() == 0.0);
  const auto n = df_mrft(1.0, 1.0, -0.73);
  CHECK(n.real() == doctest::Approx(0.8701919317422886).epsilon(1e-12));
  CHECK(n.imag() == doctest::Approx(0.9294648676566688).epsilon(1e-12));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ub(-0.999, 0.999);
  for (int k = 0; k < 50; ++k) {
    const double b = ub(rng);
    CHECK(std::abs(df_mrft(0.3, 2.0, b)) == doctest::Approx(8.0 / (0.3 * std::numbers::pi)));
  }
}

TEST_CASE("hb_predict closed forms for integrator plus delay") {
  const ProcessParams p{1.0, 1e-12, 1e-12, 0.1};
  const auto relay = hb_predict(p, 1.0, 0.0);
  CHECK(relay.omega0 == doctest::Approx(15.707963267948966).epsilon(1e-8));
  CHECK(relay.a0 == doctest::Approx(0.08105694691387022).epsilon(1e-8));
  // Omega tau = pi/2 + asin(0.73) = 2.38924...
  const auto lead = hb_predict(p, 1.0, -0.73);
  const double wt = std::numbers::pi / 2.0 + std::asin(0.73);
  CHECK(lead.omega0 == doctest::Approx(wt / 0.1).epsilon(1e-8));
  CHECK(lead.omega0 == doctest::Approx(23.8924).epsilon(1e-4));
  CHECK(lead.a0 == doctest::Approx(0.053291).epsilon(1e-4));
  CHECK_THROWS_AS(hb_predict({1.0, 1e-12, 1e-12, 0.0}, 1.0, 0.0), NoCrossingError);
}

TEST_CASE("detect_steady_cycle on synthetic input") {
  const auto t = synthetic(500, 6, 0.05);
  const auto osc = detect_steady_cycle(t);
  CHECK(osc.steady);
  CHECK(osc.omega0 == doctest::Approx(2.0 * std::numbers::pi / 0.5).epsilon(1e-12));
  CHECK(osc.a0 == doctest::Approx(0.05).epsilon(1e-4));
  CHECK(osc.a1 == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(osc.cycle_pv.size() == 500);

  CHECK_THROWS_AS(detect_steady_cycle(synthetic(500, 6, 0.05, 0.1)), NotSteadyError);
  CHECK_THROWS_AS(detect_steady_cycle(synthetic(500, 2, 0.05)), NotSteadyError);
}

TEST_CASE("detect_steady_cycle is invariant to pv scaling") {
  auto t = run_mrft({1.0, 0.05, 0.5, 0.01}, -0.73, 8.0);
  const auto a = detect_steady_cycle(t);
  for (double& v : t.pv) v *= 3.5;
  const auto b = detect_steady_cycle(t);
  CHECK(b.omega0 == a.omega0);
  CHECK(b.a0 == doctest::Approx(3.5 * a.a0).epsilon(1e-12));
  CHECK(b.start == a.start);
}

TEST_CASE("simulated MRFT agrees with harmonic balance") {
  const ProcessParams p{1.0, 0.05, 0.5, 0.01};
  const auto hb = hb_predict(p, 1.0, -0.73);
  const auto osc = detect_steady_cycle(run_mrft(p, -0.73, 10.0));
  // The describing function ignores harmonics; with a lead switch the
  // amplitude error is around 15% on this plant.
  CHECK(std::abs(osc.omega0 / hb.omega0 - 1.0) < 0.10);
  CHECK(std::abs(osc.a0 / hb.a0 - 1.0) < 0.20);
}

TEST_CASE("relay outputs are two-level and lead/lag follows the sign of beta") {
  const ProcessParams p{1.0, 0.05, 0.5, 0.01};
  for (double beta : {-0.73, -0.3, 0.3, 0.6}) {
    CAPTURE(beta);
    const auto t = run_mrft(p, beta, beta > 0.0 ? 30.0 : 8.0);
    for (double u : t.u) CHECK(std::abs(u) == 1.0);
    int switches = 0;
    for (std::size_t k = t.size() / 2; k < t.size(); ++k) {
      if (t.u[k] == t.u[k - 1]) continue;
      const double e = -t.pv[k];
      ++switches;
      if (t.u[k] < 0.0) {
        // Switch to -h: before the falling zero crossing when leading.
        if (beta < 0.0) CHECK(e > 0.0);
        else CHECK(e < 0.0);
      } else {
        if (beta < 0.0) CHECK(e < 0.0);
        else CHECK(e > 0.0);
      }
    }
    CHECK(switches >= 6);
  }
}

TEST_CASE("MRFT keeps oscillating under moderate measurement noise") {
  const ProcessParams p{1.0, 0.05, 0.5, 0.01};
  const auto hb = hb_predict(p, 1.0, -0.73);
  const double sigma = hb.a0 / 100.0;
  MrftController c({-0.73, 1.0, 0.0, 4.0 * sigma});
  SimConfig cfg;
  cfg.horizon = 10.0;
  cfg.noise_power = sigma * sigma;
  cfg.seed = 5;
  const auto osc = detect_steady_cycle(simulate(p, c, cfg), 0.05);
  CHECK(std::abs(osc.omega0 / hb.omega0 - 1.0) < 0.15);
}
