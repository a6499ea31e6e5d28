#pragma once

#include <complex>

#include <Eigen/Dense>

namespace mrftid {

// Second-order-with-integrator-plus-time-delay plant
//
//   G(s) = k_eq e^{-tau s} / (s (t_prop s + 1)(t_body s + 1))
struct ProcessParams {
  double k_eq = 1.0;
  double t_prop = 0.0;
  double t_body = 0.0;
  double tau = 0.0;

  // (t_prop, t_body, tau)
  Eigen::Vector3d triple() const { return {t_prop, t_body, tau}; }
  static ProcessParams from_triple(const Eigen::Vector3d& p, double k_eq = 1.0) {
    return {k_eq, p(0), p(1), p(2)};
  }

  // Throws DomainError unless t_prop > 0, t_body > 0, tau >= 0, k_eq > 0.
  void validate() const;

  bool operator==(const ProcessParams&) const = default;
};

// Box bounding (t_prop, t_body, tau).
struct ParamBounds {
  Eigen::Vector3d lo{0.015, 0.2, 0.0005};
  Eigen::Vector3d hi{0.3, 2.0, 0.1};

  // lo <= hi componentwise and lo > 0. Equal components describe a degenerate box.
  void validate() const;
  bool contains(const ProcessParams& p, double rel_slack = 1e-9) const;

  static ParamBounds full_range() { return {}; }
  // Reduced box used for quick end-to-end runs.
  static ParamBounds desk_range() {
    return {Eigen::Vector3d{0.05, 0.4, 0.005}, Eigen::Vector3d{0.1, 0.8, 0.02}};
  }
};

struct SphericalParams {
  double r = 0.0;
  double theta = 0.0;  // atan(t_body / t_prop)
  double phi = 0.0;    // acos(tau / r)
};

SphericalParams to_spherical(const ProcessParams& p);

// k_eq of the result is 1. Throws DegenerateParameterError on phi == 0 or
// theta at 0 or pi/2.
ProcessParams from_spherical(const SphericalParams& s);

// Returns the parameters of G(alpha s): time constants and delay times alpha,
// gain divided by alpha.
ProcessParams time_scale(const ProcessParams& p, double alpha);

// W_p(j omega). Throws DomainError for omega <= 0.
std::complex<double> frequency_response(const ProcessParams& p, double omega);

// Continuous (unwrapped) phase of W_p(j omega) in radians; strictly below -pi/2.
double phase_unwrapped(const ProcessParams& p, double omega);

double magnitude(const ProcessParams& p, double omega);

}  // namespace mrftid
