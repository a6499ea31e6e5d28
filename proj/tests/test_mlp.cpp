#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mrftid/errors.hpp"
#include "mrftid/mlp.hpp"
#include "gradcheck.hpp"

using namespace mrftid;
using namespace mrftid::testing;

namespace {

// Two Gaussian blobs at +-pattern in the full feature space.
Dataset toy_set(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::VectorXd pattern = random_matrix(static_cast<Eigen::Index>(kFeatureLength), 1, rng);
  Dataset ds;
  ds.classes = 2;
  ds.x.resize(static_cast<Eigen::Index>(kFeatureLength), static_cast<Eigen::Index>(2 * per_class));
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const std::size_t c = i % 2;
    ds.x.col(static_cast<Eigen::Index>(i)) =
        (c == 0 ? 0.2 : -0.2) * pattern + Eigen::VectorXd::NullaryExpr(pattern.size(), [&]() { return n(rng); });
    ds.labels.push_back(c);
    ds.meta.push_back({});
  }
  return ds;
}

}  // namespace

TEST_CASE("zero weights give zero logits") {
  auto net = make_network({6, 4, 3}, {0.0}, 1);
  for (auto& a : net.layers) {
    a.w.setZero();
    a.b.setZero();
  }
  std::mt19937_64 rng(2);
  const Eigen::VectorXd x = random_matrix(6, 1, rng);
  CHECK(forward(net, x).isZero(0.0));
}

TEST_CASE("infer mode is deterministic") {
  const auto net = make_network({8, 6, 5, 4}, {0.5, 0.5}, 3);
  std::mt19937_64 rng(4);
  const Eigen::VectorXd x = random_matrix(8, 1, rng);
  CHECK(forward(net, x) == forward(net, x));
  CHECK(infer(net, x).p == infer(net, x).p);
}

TEST_CASE("tiny network forward matches a hand calculation") {
  auto net = make_network({4, 3, 2}, {0.5}, 5);
  net.layers[0].w << 1, 0, -1, 2,  //
      0.5, 0.5, 0.5, 0.5,          //
      -1, 1, 0, 0;
  net.layers[0].b << 0.1, -0.2, 0.3;
  net.norms[0].scale << 2, 1, 0.5;
  net.norms[0].shift << 0, 1, -1;
  net.norms[0].running_mean << 1, 0.5, 0;
  net.norms[0].running_var << 4, 1, 0.25;
  net.layers[1].w << 1, 2, 3,  //
      -1, 0, 1;
  net.layers[1].b << 0.5, -0.5;
  Eigen::VectorXd x(4);
  x << 1, 2, 0.5, -0.25;
  // z = (0.1, 1.425, 1.3); relu keeps all; normalized with running stats then scaled and shifted.
  const double e = net.bn_eps;
  const double y0 = 2 * (0.1 - 1) / std::sqrt(4 + e);
  const double y1 = 1 * (1.425 - 0.5) / std::sqrt(1 + e) + 1;
  const double y2 = 0.5 * (1.3 - 0) / std::sqrt(0.25 + e) - 1;
  const auto a = forward(net, x);
  CHECK(a(0) == doctest::Approx(y0 + 2 * y1 + 3 * y2 + 0.5).epsilon(1e-14));
  CHECK(a(1) == doctest::Approx(-y0 + y2 - 0.5).epsilon(1e-14));

  // A negative pre-activation is cut by the ReLU before normalization.
  x << -3, 0, 0, 0;
  const auto b = forward(net, x);
  const double z0 = 0.0, z1 = 0.0, z2 = 3.3;  // (-2.9, -1.7, 3.3) after relu
  const double w0 = 2 * (z0 - 1) / std::sqrt(4 + e);
  const double w1 = (z1 - 0.5) / std::sqrt(1 + e) + 1;
  const double w2 = 0.5 * z2 / std::sqrt(0.25 + e) - 1;
  CHECK(b(0) == doctest::Approx(w0 + 2 * w1 + 3 * w2 + 0.5).epsilon(1e-14));
  CHECK(b(1) == doctest::Approx(-w0 + w2 - 0.5).epsilon(1e-14));

  CHECK_THROWS_AS(forward(net, Eigen::VectorXd::Zero(5)), ShapeError);
}

TEST_CASE("modified softmax") {
  Eigen::VectorXd a(2), g(2);
  a << 1, 0;
  g << 2, 1;
  const auto p = modified_softmax(a, g);
  const double e2 = std::exp(2.0);
  CHECK(p(0) == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-14));
  CHECK(p(1) == doctest::Approx(1 / (e2 + 1)).epsilon(1e-14));
  CHECK(p(0) == doctest::Approx(0.88080).epsilon(1e-5));

  CHECK((modified_softmax(Eigen::VectorXd::Constant(7, 3.0), Eigen::VectorXd::Ones(7)).array() - 1.0 / 7).abs().maxCoeff() <
        1e-15);

  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd v = random_matrix(9, 1, rng, -30, 30);
    const Eigen::VectorXd gm = random_matrix(9, 1, rng, 1, 11);
    const auto q = modified_softmax(v, gm);
    CHECK(std::abs(q.sum() - 1.0) < 1e-9);
    CHECK((q.array() >= 0.0).all());
    // Unit gamma is the plain softmax, computed here directly.
    const Eigen::VectorXd w = v.array().exp();
    CHECK((modified_softmax(v, Eigen::VectorXd::Ones(9)) - w / w.sum()).cwiseAbs().maxCoeff() < 1e-12);
    // A constant gamma keeps shift invariance.
    const Eigen::VectorXd c = Eigen::VectorXd::Constant(9, 2.5);
    CHECK((modified_softmax(v.array() + 4.0, c) - modified_softmax(v, c)).cwiseAbs().maxCoeff() < 1e-12);
  }

  CHECK_THROWS_AS(modified_softmax(Eigen::VectorXd::Constant(3, kInf), Eigen::VectorXd::Ones(3)), NumericError);
  CHECK_THROWS_AS(modified_softmax(a, Eigen::VectorXd::Ones(3)), ShapeError);
}

TEST_CASE("logit gradient: reductions and finite differences") {
  Eigen::VectorXd a(3);
  a << 800, 0, 0;
  auto [l0, g0] = loss_and_logit_grad(a, 0, Eigen::VectorXd::Ones(3));
  CHECK(l0 == 0.0);
  CHECK(g0.isZero(0.0));

  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd v = random_matrix(5, 1, rng, -3, 3);
    const std::size_t truth = static_cast<std::size_t>(t % 5);
    auto [l1, g1] = loss_and_logit_grad(v, truth, Eigen::VectorXd::Ones(5));
    Eigen::VectorXd y = Eigen::VectorXd::Zero(5);
    y(static_cast<Eigen::Index>(truth)) = 1.0;
    CHECK((g1 - (softmax(v) - y)).cwiseAbs().maxCoeff() < 1e-14);

    const Eigen::VectorXd gm = random_matrix(5, 1, rng, 1, 4);
    const double l = loss_and_logit_grad(v, truth, gm).first;
    CHECK(l == doctest::Approx(-std::log(modified_softmax(v, gm)(static_cast<Eigen::Index>(truth)))).epsilon(1e-12));
  }
}

TEST_CASE("logit and network gradients match finite differences") {
  const auto r = gradient_check(20, 8);
  CHECK(r.logit_worst < 1e-6);
  CHECK(r.net_worst < 1e-5);
  CHECK(r.skipped * 50 < r.probes);
}

TEST_CASE("train-mode batch norm standardizes every hidden unit") {
  const auto net = make_network({10, 40, 30, 3}, {0.0, 0.0}, 9);
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd x = random_matrix(10, 64, rng, -1, 1);
  ForwardCache c;
  forward(net, x, Mode::Train, nullptr, &c);
  for (const auto& xh : c.xhat) {
    const Eigen::VectorXd mu = xh.rowwise().mean();
    const Eigen::VectorXd var = (xh.colwise() - mu).array().square().rowwise().mean();
    CHECK(mu.cwiseAbs().maxCoeff() < 1e-6);
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("inverted dropout preserves the expected activation") {
  const auto net = make_network({6, 50, 4}, {0.5}, 11);
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd x = random_matrix(6, 8, rng);
  const Eigen::MatrixXd ref = forward(net, x, Mode::Train);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(ref.rows(), ref.cols());
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) mean += forward(net, x, Mode::Train, &rng);
  mean /= draws;
  CHECK((mean - ref).norm() / ref.norm() < 0.02);
}

TEST_CASE("softmax prediction picks the largest logit and ignores shifts") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd v = random_matrix(6, 1, rng, -5, 5);
    Eigen::Index k = 0;
    v.maxCoeff(&k);
    const auto p = softmax(v);
    Eigen::Index kp = 0;
    p.maxCoeff(&kp);
    CHECK(kp == k);
    CHECK((softmax(v.array() + 17.0) - p).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("separable toy set is learned and training is reproducible") {
  const auto ds = toy_set(20, 14);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.dropout = {0.2};
  auto a = make_network({kFeatureLength, 16, 2}, cfg.dropout, 15);
  auto b = a;
  const auto curve_a = train(a, ds, cfg);
  const auto curve_b = train(b, ds, cfg);
  REQUIRE(curve_a.size() == 50);
  CHECK(curve_a == curve_b);
  CHECK(curve_a.back() < curve_a.front());
  std::size_t hits = 0;
  const auto pred = infer(a, ds.x);
  for (std::size_t i = 0; i < ds.size(); ++i) hits += pred[i].cls == ds.labels[i] ? 1 : 0;
  CHECK(hits == ds.size());
  std::size_t early = 0;
  train(b, ds, cfg, [&](std::size_t e, double) {
    early = e;
    return e < 3;
  });
  CHECK(early == 3);
}

TEST_CASE("training settings are validated and divergence names the epoch") {
  const auto ds = toy_set(4, 16);
  auto net = make_network({kFeatureLength, 4, 2}, {0.0}, 17);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train(net, ds, cfg), DomainError);
  cfg = {};
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train(net, ds, cfg), DomainError);
  cfg = {};
  cfg.gamma = Eigen::MatrixXd::Ones(3, 3);
  CHECK_THROWS_AS(train(net, ds, cfg), ShapeError);
  cfg = {};
  cfg.dropout = {0.0};
  cfg.learning_rate = 1e12;
  cfg.epochs = 20;
  try {
    train(net, ds, cfg);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("evaluate on a two-member set") {
  // Two processes one joint-cost step apart, each with its own controller.
  DiscretizeOptions o;
  o.bounds = ParamBounds::desk_range();
  const ProcessParams pa = from_spherical({0.4, 1.4, 1.55});
  const Member g{pa, optimize_controller(pa, o.design)};
  const auto st = adjacent_process(g, 0.0, 1.0, 1.0, o);
  REQUIRE(st.has_value());
  DiscreteSet d;
  d.processes = {pa, st->p};
  d.controllers = {g.design, st->design};
  d.design = o.design;
  d.joint_costs = joint_cost_matrix(d.processes, d.controllers, o.design.scen);

  // Feature 0 votes for class 0 and feature 1 for class 1.
  Dataset ds;
  ds.classes = 2;
  ds.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kFeatureLength), 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    ds.x(i % 2, i) = 1.0;
    ds.labels.push_back(static_cast<std::size_t>(i % 2));
    ds.meta.push_back({});
  }
  auto net = make_network({kFeatureLength, 2}, {}, 18);
  net.layers[0].w.setZero();
  net.layers[0].w(0, 0) = 1.0;
  net.layers[0].w(1, 1) = 1.0;
  const auto perfect = evaluate(net, ds, d);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.mean_j == 0.0);
  CHECK(perfect.max_j == 0.0);
  CHECK(perfect.unstable == 0);
  CHECK(perfect.min_phase_margin == doctest::Approx(o.design.phi_m).epsilon(0.1));

  // Always the neighbour: the worst case is the symmetric joint cost of the pair.
  net.layers[0].w.setZero();
  net.layers[0].w(0, 1) = 1.0;
  net.layers[0].w(1, 0) = 1.0;
  const auto swapped = evaluate(net, ds, d);
  CHECK(swapped.accuracy == 0.0);
  CHECK(swapped.max_j == doctest::Approx(std::max(d.joint_costs(0, 1), d.joint_costs(1, 0))).epsilon(1e-12));
  CHECK(swapped.max_j >= 0.09);
  CHECK(swapped.max_j <= 0.11);
  CHECK(swapped.mean_j == doctest::Approx(0.5 * (d.joint_costs(0, 1) + d.joint_costs(1, 0))).epsilon(1e-12));

  // The processes themselves, identified correctly, cost nothing against their own optimum.
  const auto own = evaluate_processes({0, 1}, d.processes, d);
  CHECK(std::abs(own.max_j) < 1e-9);
  CHECK(own.unstable == 0);
}

TEST_CASE("network files round trip") {
  auto net = make_network({12, 7, 5, 3}, {0.5, 0.25}, 19);
  net.norms[1].running_var(2) = 3.5;
  const auto dir = std::filesystem::temp_directory_path() / "mrftid_test_mlp";
  std::filesystem::remove_all(dir);
  const auto path = dir / "net.bin";
  save_network(net, path, R"({"seed": 19, "epochs": 0})");
  std::string header;
  const auto back = load_network(path, &header);
  CHECK(back.dims == net.dims);
  CHECK(back.dropout == net.dropout);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(back.layers[l].w == net.layers[l].w);
    CHECK(back.layers[l].b == net.layers[l].b);
  }
  for (std::size_t l = 0; l < net.norms.size(); ++l) {
    CHECK(back.norms[l].running_var == net.norms[l].running_var);
    CHECK(back.norms[l].scale == net.norms[l].scale);
  }
  CHECK(header.find("\"seed\":19") != std::string::npos);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(load_network(path), ParseError);
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a network";
  }
  CHECK_THROWS_AS(load_network(path), ParseError);
  CHECK_THROWS_AS(load_network(dir / "missing.bin"), ResourceError);

  write_loss_csv({1.5, 0.25}, dir / "loss.csv");
  std::ifstream in(dir / "loss.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,loss");
  std::getline(in, line);
  CHECK(line == "1,1.5");
  std::filesystem::remove_all(dir);
}
