#include "mrftid/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mrftid/errors.hpp"

namespace mrftid {

void OptProblem::validate() const {
  const auto n = x0.size();
  if (n == 0 || lower.size() != n || upper.size() != n) {
    throw DomainError("optimizer needs x0, lower and upper of one nonzero length");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(lower(i)) || !std::isfinite(upper(i)) || lower(i) > upper(i)) {
      throw DomainError("optimizer bounds must be finite and ordered");
    }
    if (x0(i) < lower(i) || x0(i) > upper(i)) throw InvalidStartError("x0 lies outside the bounds");
  }
  if (!objective) throw DomainError("optimizer objective is empty");
}

OptResult minimize(const OptProblem& prob) {
  prob.validate();
  const auto n = prob.x0.size();
  std::size_t evals = 0;
  auto clip = [&](Eigen::VectorXd x) {
    return x.cwiseMax(prob.lower).cwiseMin(prob.upper).eval();
  };
  auto f = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = prob.objective(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(n) + 1, prob.x0);
  std::vector<double> fs(xs.size());
  fs[0] = f(prob.x0);
  if (!std::isfinite(fs[0])) throw InvalidStartError("objective is not finite at the starting point");
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& x = xs[static_cast<std::size_t>(i) + 1];
    const double range = prob.upper(i) - prob.lower(i);
    double step = x(i) != 0.0 ? 0.05 * x(i) : 0.00025 * range;
    if (step == 0.0) step = 0.00025;
    if (x(i) + step > prob.upper(i) || x(i) + step < prob.lower(i)) step = -step;
    x(i) += step;
    x = clip(x);
    fs[static_cast<std::size_t>(i) + 1] = f(x);
  }

  std::vector<std::size_t> order(xs.size());
  OptResult res;
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    {
      std::vector<Eigen::VectorXd> xs2;
      std::vector<double> fs2;
      for (auto k : order) {
        xs2.push_back(xs[k]);
        fs2.push_back(fs[k]);
      }
      xs.swap(xs2);
      fs.swap(fs2);
    }
    if (prob.on_iteration) prob.on_iteration(fs[0]);
    double diameter = 0.0;
    for (std::size_t k = 1; k < xs.size(); ++k) {
      diameter = std::max(diameter, (xs[k] - xs[0]).cwiseAbs().maxCoeff());
    }
    const double spread = fs.back() - fs.front();
    if (fs[0] <= prob.f_target || diameter <= prob.tol_x ||
        (prob.tol_f > 0.0 && std::isfinite(spread) && spread <= prob.tol_f)) {
      res.converged = true;
      break;
    }
    if (evals >= prob.max_evals) break;
    ++res.iterations;

    const std::size_t worst = xs.size() - 1;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < worst; ++k) centroid += xs[k];
    centroid /= static_cast<double>(worst);

    const Eigen::VectorXd xr = clip(centroid + (centroid - xs[worst]));
    const double fr = f(xr);
    if (fr < fs[0]) {
      const Eigen::VectorXd xe = clip(centroid + 2.0 * (centroid - xs[worst]));
      const double fe = f(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
      continue;
    }
    if (fr < fs[worst - 1]) {
      xs[worst] = xr;
      fs[worst] = fr;
      continue;
    }
    bool shrink = false;
    if (fr < fs[worst]) {
      const Eigen::VectorXd xc = clip(centroid + 0.5 * (xr - centroid));
      const double fc = f(xc);
      if (fc <= fr) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        shrink = true;
      }
    } else {
      const Eigen::VectorXd xc = clip(centroid + 0.5 * (xs[worst] - centroid));
      const double fc = f(xc);
      if (fc < fs[worst]) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (std::size_t k = 1; k < xs.size(); ++k) {
        xs[k] = clip(xs[0] + 0.5 * (xs[k] - xs[0]));
        fs[k] = f(xs[k]);
      }
    }
  }
  res.x = xs[0];
  res.f = fs[0];
  res.evals = evals;
  return res;
}

}  // namespace mrftid
