#include "mrftid/process_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mrftid/errors.hpp"

namespace mrftid {

void ProcessParams::validate() const {
  if (!(t_prop > 0.0) || !(t_body > 0.0) || !(tau >= 0.0) || !(k_eq > 0.0) ||
      !std::isfinite(t_prop) || !std::isfinite(t_body) || !std::isfinite(tau) ||
      !std::isfinite(k_eq)) {
    throw DomainError("invalid process parameters: k_eq=" + std::to_string(k_eq) +
                      " t_prop=" + std::to_string(t_prop) + " t_body=" + std::to_string(t_body) +
                      " tau=" + std::to_string(tau));
  }
}

void ParamBounds::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(lo(i) > 0.0) || !(hi(i) >= lo(i)) || !std::isfinite(hi(i))) {
      throw DomainError("invalid parameter bounds on coordinate " + std::to_string(i));
    }
  }
}

bool ParamBounds::contains(const ProcessParams& p, double rel_slack) const {
  const Eigen::Vector3d x = p.triple();
  for (int i = 0; i < 3; ++i) {
    if (x(i) < lo(i) * (1.0 - rel_slack) || x(i) > hi(i) * (1.0 + rel_slack)) return false;
  }
  return true;
}

SphericalParams to_spherical(const ProcessParams& p) {
  const double r = p.triple().norm();
  return {r, std::atan2(p.t_body, p.t_prop), std::acos(std::clamp(p.tau / r, -1.0, 1.0))};
}

ProcessParams from_spherical(const SphericalParams& s) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  if (!(s.r > 0.0) || !(s.phi > 0.0) || s.phi > half_pi || !(s.theta > 0.0) ||
      !(s.theta < half_pi)) {
    throw DegenerateParameterError("spherical parameters collapse a time constant or delay: r=" +
                                   std::to_string(s.r) + " theta=" + std::to_string(s.theta) +
                                   " phi=" + std::to_string(s.phi));
  }
  const double planar = s.r * std::sin(s.phi);
  ProcessParams p{1.0, planar * std::cos(s.theta), planar * std::sin(s.theta),
                  s.r * std::cos(s.phi)};
  // cos(pi/2) is not exactly zero in floating point.
  if (s.phi == half_pi) p.tau = 0.0;
  return p;
}

ProcessParams time_scale(const ProcessParams& p, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("time scale factor must be positive");
  return {p.k_eq / alpha, p.t_prop * alpha, p.t_body * alpha, p.tau * alpha};
}

std::complex<double> frequency_response(const ProcessParams& p, double omega) {
  if (!(omega > 0.0)) throw DomainError("frequency must be positive");
  using namespace std::complex_literals;
  const std::complex<double> jw = 1i * omega;
  return p.k_eq * std::exp(-jw * p.tau) / (jw * (jw * p.t_prop + 1.0) * (jw * p.t_body + 1.0));
}

double phase_unwrapped(const ProcessParams& p, double omega) {
  if (!(omega > 0.0)) throw DomainError("frequency must be positive");
  return -std::numbers::pi / 2.0 - omega * p.tau - std::atan(omega * p.t_prop) -
         std::atan(omega * p.t_body);
}

double magnitude(const ProcessParams& p, double omega) {
  if (!(omega > 0.0)) throw DomainError("frequency must be positive");
  return p.k_eq / (omega * std::hypot(1.0, omega * p.t_prop) * std::hypot(1.0, omega * p.t_body));
}

}  // namespace mrftid
