#pragma once

#include <cmath>
#include <limits>

namespace mrftid {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Parallel-form PID on the error signal:
//   u = kp (e + (1/ti) ∫e + td * s/(derivative_filter s + 1) e)
// ti = +inf encodes a PD controller.
struct PidParams {
  double kp = 0.0;
  double ti = kInf;
  double td = 0.0;
  double derivative_filter = 0.0;

  bool is_pd() const { return std::isinf(ti); }
  bool operator==(const PidParams&) const = default;
};

}  // namespace mrftid
