#pragma once

#include <cstddef>
#include <functional>
#include <limits>

#include <Eigen/Core>

namespace mrftid {

struct OptProblem {
  std::function<double(const Eigen::VectorXd&)> objective;
  Eigen::VectorXd x0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double tol_x = 1e-8;  // simplex diameter, max-norm around the best vertex
  double tol_f = 0.0;   // spread of vertex values; 0 disables this test
  double f_target = -std::numeric_limits<double>::infinity();  // stop once reached
  std::size_t max_evals = 2000;
  std::function<void(double)> on_iteration;  // best vertex value after each ordering, optional

  void validate() const;
};

struct OptResult {
  Eigen::VectorXd x;
  double f = 0.0;
  std::size_t evals = 0;
  std::size_t iterations = 0;
  bool converged = false;  // a tolerance or f_target was met before max_evals
};

// Nelder-Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5.
// Trial points are clipped into [lower, upper]. The initial simplex perturbs
// each coordinate of x0 by 5% (0.00025 of its range when x0 is zero there),
// stepping inward if the perturbed point would leave the box.
// Throws InvalidStartError when the objective is not finite at x0.
OptResult minimize(const OptProblem& prob);

}  // namespace mrftid
