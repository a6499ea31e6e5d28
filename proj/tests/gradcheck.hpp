#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mrftid/mlp.hpp"

namespace mrftid::testing {

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Eigen::MatrixXd::NullaryExpr(r, c, [&]() { return u(rng); });
}

// Fourth-order central difference of f at step h.
template <class F>
double central_difference(F&& f, double h) {
  return (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h);
}

struct GradCheck {
  double logit_worst = 0.0;  // max over cases of |fd - g|_inf / |g|_inf
  double net_worst = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;  // probes straddling a ReLU kink
};

// Analytic logit and parameter gradients of the modified-softmax loss against
// finite differences on `cases` random small networks (two hidden layers,
// dropout, non-trivial batch-norm parameters, random gamma).
inline GradCheck gradient_check(int cases, std::uint64_t seed) {
  GradCheck r;
  std::mt19937_64 rng(seed);
  for (int t = 0; t < cases; ++t) {
    const Eigen::VectorXd v = random_matrix(5, 1, rng, -3, 3);
    const Eigen::VectorXd gm = random_matrix(5, 1, rng, 1, 4);
    const std::size_t truth = static_cast<std::size_t>(t % 5);
    const auto g = loss_and_logit_grad(v, truth, gm).second;
    Eigen::VectorXd fd(5);
    for (Eigen::Index k = 0; k < 5; ++k) {
      fd(k) = central_difference(
          [&](double d) {
            Eigen::VectorXd w = v;
            w(k) += d;
            return loss_and_logit_grad(w, truth, gm).first;
          },
          1e-4);
    }
    // Relative to the gradient's scale; near-zero entries carry only round-off.
    r.logit_worst = std::max(r.logit_worst, (fd - g).cwiseAbs().maxCoeff() / g.cwiseAbs().maxCoeff());
  }

  for (int t = 0; t < cases; ++t) {
    const std::size_t in = 5 + static_cast<std::size_t>(t % 3), h1 = 6, h2 = 4, out = 3;
    auto net = make_network({in, h1, h2, out}, {0.3, 0.2}, seed + 100 + static_cast<std::uint64_t>(t));
    for (auto& bn : net.norms) {
      bn.scale = random_matrix(bn.scale.size(), 1, rng, 0.5, 1.5);
      bn.shift = random_matrix(bn.shift.size(), 1, rng, -0.5, 0.5);
    }
    const Eigen::MatrixXd x = random_matrix(static_cast<Eigen::Index>(in), 6, rng, -2, 2);
    const std::vector<std::size_t> labels = {0, 1, 2, 0, 1, 2};
    const Eigen::MatrixXd gamma = random_matrix(3, 3, rng, 1, 3);
    const std::uint64_t mask_seed = seed + 500 + static_cast<std::uint64_t>(t);
    auto loss_at = [&]() {
      std::mt19937_64 m(mask_seed);
      return batch_loss(net, x, labels, gamma, &m);
    };

    Gradients g;
    {
      std::mt19937_64 m(mask_seed);
      batch_loss(net, x, labels, gamma, &m, &g);
    }
    // Differences across a ReLU kink say nothing about the derivative; such probes are skipped.
    auto pattern = [&]() {
      ForwardCache c;
      forward(net, x, Mode::Train, nullptr, &c);
      std::vector<bool> on;
      for (const auto& z : c.pre) {
        for (Eigen::Index i = 0; i < z.size(); ++i) on.push_back(z.data()[i] > 0.0);
      }
      return on;
    };
    const double h = 1e-6;
    std::vector<double> fd, an;
    auto probe = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + 2 * h;
      const auto up = pattern();
      param = keep - 2 * h;
      const auto down = pattern();
      param = keep;
      if (up != down) {
        ++r.skipped;
        return;
      }
      fd.push_back(central_difference(
          [&](double d) {
            param = keep + d;
            return loss_at();
          },
          h));
      param = keep;
      an.push_back(analytic);
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto& w = net.layers[l].w;
      for (Eigen::Index i = 0; i < w.size(); ++i) probe(w.data()[i], g.w[l].data()[i]);
      for (Eigen::Index i = 0; i < net.layers[l].b.size(); ++i) probe(net.layers[l].b(i), g.b[l](i));
    }
    for (std::size_t l = 0; l < net.norms.size(); ++l) {
      for (Eigen::Index i = 0; i < net.norms[l].scale.size(); ++i) probe(net.norms[l].scale(i), g.scale[l](i));
      for (Eigen::Index i = 0; i < net.norms[l].shift.size(); ++i) probe(net.norms[l].shift(i), g.shift[l](i));
    }
    const Eigen::Map<Eigen::VectorXd> f(fd.data(), static_cast<Eigen::Index>(fd.size()));
    const Eigen::Map<Eigen::VectorXd> a(an.data(), static_cast<Eigen::Index>(an.size()));
    r.net_worst = std::max(r.net_worst, (f - a).cwiseAbs().maxCoeff() / a.cwiseAbs().maxCoeff());
    r.probes += fd.size();
  }
  return r;
}

}  // namespace mrftid::testing
