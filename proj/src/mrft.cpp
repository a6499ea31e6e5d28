#include "mrftid/mrft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mrftid/errors.hpp"

namespace mrftid {

void MrftConfig::validate() const {
  if (!(std::abs(beta) < 1.0)) throw DomainError("MRFT beta must satisfy |beta| < 1");
  if (!(h > 0.0)) throw DomainError("MRFT relay amplitude must be positive");
  if (!(noise_band >= 0.0)) throw DomainError("MRFT noise band must be non-negative");
  if (!(turn_smoothing >= 0.0)) throw DomainError("MRFT turn_smoothing must be non-negative");
  if (!(min_dwell >= 0.0) || !(min_dwell < 1.0)) throw DomainError("MRFT min_dwell must lie in [0, 1)");
}

double mrft_step(MrftState& s, double e, const MrftConfig& cfg) {
  const double h = cfg.h;
  const double beta = cfg.beta;
  const double band = cfg.noise_band;
  const double u_now = s.u_prev > 0.0 ? h : (s.u_prev < 0.0 ? -h : 0.0);

  // Half-wave bookkeeping: extrema restart whenever the error changes side.
  int sign = s.half == 0 ? 1 : s.half;
  if (e > band) sign = 1;
  if (e < -band) sign = -1;
  if (s.half == 0 && e < 0.0) sign = -1;
  if (sign != s.half) {
    if (sign > 0) {
      s.e_max = std::max(e, 0.0);
    } else {
      s.e_min = std::min(e, 0.0);
    }
    s.half = sign;
  } else if (sign > 0) {
    s.e_max = std::max(s.e_max, e);
  } else {
    s.e_min = std::min(s.e_min, e);
  }

  const double b1 = -beta * s.e_min;
  const double b2 = beta * s.e_max;

  // Turn detection runs on a smoothed copy of the error.
  s.e_smooth = s.u_prev == 0.0 ? e : s.e_smooth + (e - s.e_smooth) / (1.0 + cfg.turn_smoothing);
  const double et = s.e_smooth;
  ++s.dwell;
  const auto dwelt = [&](std::size_t last) {
    return static_cast<double>(s.dwell) >= cfg.min_dwell * static_cast<double>(last);
  };

  double u = u_now;
  if (u_now == 0.0) {
    u = e >= b1 ? h : -h;
    s.turn = et;
    s.armed = false;
  } else if (u_now > 0.0) {
    s.turn = std::max(s.turn, et);
    if (et < s.turn - band && dwelt(s.last_dwell_hi)) s.armed = true;
    const bool low = beta >= 0.0 ? (b2 + band > 0.0 ? e <= -b2 - band : e < 0.0) : e <= -b2;
    if (low && (beta >= 0.0 || s.armed)) u = -h;
  } else {
    s.turn = std::min(s.turn, et);
    if (et > s.turn + band && dwelt(s.last_dwell_lo)) s.armed = true;
    const bool high = beta >= 0.0 ? (b1 + band > 0.0 ? e >= b1 + band : e > 0.0) : e >= b1;
    if (high && (beta >= 0.0 || s.armed)) u = h;
  }
  if (u != u_now && u_now != 0.0) {
    (u_now > 0.0 ? s.last_dwell_hi : s.last_dwell_lo) = s.dwell;
    s.turn = et;
    s.armed = false;
  }
  if (u != u_now) s.dwell = 0;
  s.u_prev = u;
  return u + cfg.u0_offset;
}

double phase_of_beta(double beta) {
  if (!(std::abs(beta) < 1.0)) throw DomainError("beta must satisfy |beta| < 1");
  return std::asin(beta);
}

std::complex<double> df_mrft(double a0, double h, double beta) {
  if (!(a0 > 0.0) || !(h > 0.0) || !(std::abs(beta) < 1.0)) {
    throw DomainError("df_mrft requires a0 > 0, h > 0, |beta| < 1");
  }
  return (4.0 * h / (std::numbers::pi * a0)) * std::complex<double>(std::sqrt(1.0 - beta * beta), -beta);
}

HbPrediction hb_predict(const ProcessParams& p, double h, double beta, double omega_cap) {
  p.validate();
  const double target = -std::numbers::pi + phase_of_beta(beta);
  // The unwrapped phase starts at -pi/2 and decreases strictly with omega.
  double lo = 1e-9;
  double hi = omega_cap;
  if (phase_unwrapped(p, hi) > target) {
    throw NoCrossingError("phase of the process never reaches " +
                          std::to_string(target * 180.0 / std::numbers::pi) + " deg below omega=" +
                          std::to_string(omega_cap));
  }
  if (phase_unwrapped(p, lo) <= target) throw NoCrossingError("phase crossing below search floor");
  while (hi / lo > 1.0 + 1e-13) {
    const double mid = std::sqrt(lo * hi);
    if (phase_unwrapped(p, mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double omega0 = std::sqrt(lo * hi);
  return {4.0 * h / std::numbers::pi * magnitude(p, omega0), omega0};
}

double Oscillation::period() const { return 2.0 * std::numbers::pi / omega0; }

std::vector<std::size_t> positive_switches(const std::vector<double>& u) {
  std::vector<std::size_t> idx;
  if (u.size() < 2) return idx;
  double largest = 0.0;
  for (std::size_t k = 1; k < u.size(); ++k) largest = std::max(largest, std::abs(u[k] - u[k - 1]));
  if (largest == 0.0) return idx;
  const double threshold = 0.5 * largest;
  for (std::size_t k = 1; k < u.size(); ++k) {
    if (u[k] - u[k - 1] > threshold) idx.push_back(k);
  }
  return idx;
}

namespace {

CycleStats measure_cycle(const std::vector<double>& pv, std::size_t start, std::size_t length) {
  const auto first = pv.begin() + static_cast<std::ptrdiff_t>(start);
  const auto [mn, mx] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(length));
  std::complex<double> acc{0.0, 0.0};
  const double w = 2.0 * std::numbers::pi / static_cast<double>(length);
  for (std::size_t k = 0; k < length; ++k) {
    acc += pv[start + k] * std::polar(1.0, -w * static_cast<double>(k));
  }
  return {start, length, 0.5 * (*mx - *mn), 2.0 * std::abs(acc) / static_cast<double>(length)};
}

}  // namespace

std::vector<CycleStats> cycle_stats(const Trajectory& traj) {
  const auto sw = positive_switches(traj.u);
  std::vector<CycleStats> out;
  for (std::size_t i = 0; i + 1 < sw.size(); ++i) {
    out.push_back(measure_cycle(traj.pv, sw[i], sw[i + 1] - sw[i]));
  }
  return out;
}

Oscillation detect_steady_cycle(const Trajectory& traj, double rel_tol) {
  const auto cycles = cycle_stats(traj);
  if (cycles.size() < 3) {
    throw NotSteadyError("trajectory holds " + std::to_string(cycles.size()) +
                         " full relay cycles, need at least 3");
  }
  for (std::size_t i = cycles.size() - 1; i >= 1; --i) {
    const auto& a = cycles[i - 1];
    const auto& b = cycles[i];
    const double dp = std::abs(static_cast<double>(b.length) - static_cast<double>(a.length));
    const double da = std::abs(b.fundamental - a.fundamental);
    if (b.fundamental > 0.0 && dp <= rel_tol * static_cast<double>(b.length) &&
        da <= rel_tol * b.fundamental) {
      Oscillation osc;
      osc.a0 = b.half_p2p;
      osc.a1 = b.fundamental;
      osc.dt = traj.dt;
      osc.omega0 = 2.0 * std::numbers::pi / (static_cast<double>(b.length) * traj.dt);
      osc.start = b.start;
      osc.cycle_pv.assign(traj.pv.begin() + static_cast<std::ptrdiff_t>(b.start),
                          traj.pv.begin() + static_cast<std::ptrdiff_t>(b.start + b.length));
      osc.cycle_u.assign(traj.u.begin() + static_cast<std::ptrdiff_t>(b.start),
                         traj.u.begin() + static_cast<std::ptrdiff_t>(b.start + b.length));
      osc.steady = true;
      if (!(osc.a0 > 0.0)) break;
      return osc;
    }
  }
  throw NotSteadyError("no two consecutive relay cycles agree within " +
                       std::to_string(100.0 * rel_tol) + "%");
}

}  // namespace mrftid
