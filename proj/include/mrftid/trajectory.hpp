#pragma once

#include <cstddef>
#include <vector>

namespace mrftid {

// Uniformly sampled closed-loop record.
struct Trajectory {
  double dt = 1e-3;
  std::vector<double> t;
  std::vector<double> pv;
  std::vector<double> u;

  std::size_t size() const { return t.size(); }
  void reserve(std::size_t n) {
    t.reserve(n);
    pv.reserve(n);
    u.reserve(n);
  }
  void push_back(double time, double pv_value, double u_value) {
    t.push_back(time);
    pv.push_back(pv_value);
    u.push_back(u_value);
  }
};

}  // namespace mrftid
