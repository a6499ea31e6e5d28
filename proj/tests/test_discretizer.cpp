#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mrftid/discretizer.hpp"
#include "mrftid/errors.hpp"
#include "mrftid/io.hpp"
#include "mrftid/tuning.hpp"

using namespace mrftid;

namespace {

DiscretizeOptions desk_options(std::size_t jobs = 1) {
  DiscretizeOptions o;
  o.bounds = ParamBounds::desk_range();
  o.jobs = jobs;
  return o;
}

// The desk set is built once and shared by the read-only checks.
const DiscreteSet& desk_set() {
  static const DiscreteSet d = discretize(desk_options(2));
  return d;
}

Member member_at(const ProcessParams& p, const DesignOptions& opt) { return {p, optimize_controller(p, opt)}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("joint cost to itself is zero, so E equals j_star squared") {
  const auto o = desk_options();
  const auto g = member_at({1.0, 0.07, 0.5, 0.01}, o.design);
  const double j = adjacent_joint_cost(g, 1.0, 0.0, 0.0, o.design);
  CHECK(j == 0.0);
  CHECK((o.j_star - j) * (o.j_star - j) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("adjacent step lands on j_star and survives an independent re-check") {
  const auto o = desk_options();
  const auto g = member_at(from_spherical({0.4, 1.4, 1.55}), o.design);
  const auto st = adjacent_process(g, 0.0, 1.0, 1.0, o);
  REQUIRE(st.has_value());
  CHECK((st->j - o.j_star) * (st->j - o.j_star) < 1e-4);
  // Fresh designs and the plain tuning joint cost.
  const auto ca = optimize_controller(g.p, o.design);
  const auto cb = optimize_controller(st->p, o.design);
  const double j = symmetric_joint_cost(ca.pid, g.p, cb.pid, st->p, o.design.scen);
  CHECK(j == doctest::Approx(o.j_star).epsilon(0.1));
  CHECK(to_spherical(st->p).r == doctest::Approx(0.4).epsilon(1e-12));

  auto tight = o;
  tight.j_star = 0.05;
  tight.j_tol = 0.005;
  const auto near = adjacent_process(g, 0.0, 1.0, 1.0, tight);
  REQUIRE(near.has_value());
  CHECK(near->step < st->step);
}

TEST_CASE("adjacent step reports no neighbour inside a short range") {
  const auto o = desk_options();
  const auto g = member_at(from_spherical({0.4, 1.4, 1.55}), o.design);
  CHECK_FALSE(adjacent_process(g, 0.0, 1.0, 1e-4, o).has_value());
  CHECK_THROWS_AS(adjacent_process(g, 0.0, 0.0, 1.0, o), DomainError);
}

TEST_CASE("angular extent of the desk box") {
  const auto b = ParamBounds::desk_range();
  const auto e = angular_extent(b);
  // theta = atan2(t_body, t_prop), phi = acos(tau / r).
  CHECK(e.theta_lo == doctest::Approx(std::atan2(0.4, 0.1)).epsilon(1e-12));
  CHECK(e.theta_hi == doctest::Approx(std::atan2(0.8, 0.05)).epsilon(1e-12));
  CHECK(e.phi_lo == doctest::Approx(std::acos(0.02 / std::sqrt(0.05 * 0.05 + 0.4 * 0.4 + 0.02 * 0.02))).epsilon(1e-12));
  CHECK(e.phi_hi == doctest::Approx(std::acos(0.005 / std::sqrt(0.1 * 0.1 + 0.8 * 0.8 + 0.005 * 0.005))).epsilon(1e-12));
}

TEST_CASE("degenerate bounds give a single member") {
  auto o = desk_options();
  o.bounds.lo = Eigen::Vector3d(0.07, 0.6, 0.01);
  o.bounds.hi = o.bounds.lo;
  const auto s = discretize_surface(o);
  REQUIRE(s.members.size() == 1);
  CHECK(s.pairs.empty());
  const auto d = radial_fill(s, o);
  CHECK(d.size() == 1);
  CHECK(d.joint_costs(0, 0) == 0.0);
  CHECK(d.alphas.at(0) > 1.0);
}

TEST_CASE("invalid options are rejected") {
  auto o = desk_options();
  o.j_tol = 0.2;
  CHECK_THROWS_AS(discretize_surface(o), DomainError);
  o = desk_options();
  o.bounds.hi(0) = 0.01;
  CHECK_THROWS_AS(discretize_surface(o), DomainError);
}

TEST_CASE("a smaller j_star needs more surface members") {
  auto coarse = desk_options();
  coarse.j_star = 0.2;
  coarse.j_tol = 0.02;
  const auto a = discretize_surface(coarse);
  const auto b = discretize_surface(desk_options());
  CHECK(a.members.size() < b.members.size());
}

TEST_CASE("desk set members are in bounds and every recorded pair is adjacent") {
  const auto& d = desk_set();
  const auto o = desk_options();
  REQUIRE(d.size() >= 10);
  for (const auto& p : d.processes) {
    CHECK(d.bounds.contains(p));
    CHECK(p.k_eq == 1.0);
  }
  for (Eigen::Index i = 0; i < d.joint_costs.rows(); ++i) CHECK(d.joint_costs(i, i) == 0.0);
  // Symmetric joint costs are non-negative.
  CHECK((d.joint_costs.array().max(d.joint_costs.transpose().array()) >= 0.0).all());

  REQUIRE(!d.pairs.empty());
  for (const auto& a : d.pairs) {
    const auto ca = optimize_controller(a.a, o.design);
    const auto cb = optimize_controller(a.b, o.design);
    const double j = symmetric_joint_cost(ca.pid, a.a, cb.pid, a.b, o.design.scen);
    CHECK(j >= 0.09);
    CHECK(j <= 0.11);
    if (a.radial) {
      CHECK(a.j >= 0.08);
      CHECK(a.j <= 0.12);
    }
  }
}

TEST_CASE("radial chains scale the surface member") {
  const auto& d = desk_set();
  // Surface points mostly sit outside the box; only their scaled copies enter it.
  REQUIRE(d.alphas.size() >= d.surface_ids.size());
  for (double a : d.alphas) {
    CHECK(a > 1.0);
    CHECK(a <= 20.0);
  }
  std::size_t radial = 0;
  for (const auto& a : d.pairs) {
    if (!a.radial) continue;
    ++radial;
    const double ratio = a.b.tau / a.a.tau;
    CHECK(a.b.t_prop / a.a.t_prop == doctest::Approx(ratio).epsilon(1e-12));
    CHECK(a.b.t_body / a.a.t_body == doctest::Approx(ratio).epsilon(1e-12));
    bool known = false;
    for (double al : d.alphas) known = known || std::abs(ratio / al - 1.0) < 1e-9;
    CHECK(known);
  }
  CHECK(radial > 0);
  CHECK(radial < d.size());
}

TEST_CASE("gamma matrix") {
  DiscreteSet d;
  d.joint_costs.resize(2, 3);
  d.joint_costs << 0.0, 0.0503, kInf, -0.02, 0.0, 25.0;
  const auto g = build_gamma_matrix(d, 10.0);
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 1) == doctest::Approx(1.0503).epsilon(1e-14));
  CHECK(g(0, 2) == 11.0);
  CHECK(g(1, 0) == 1.0);
  CHECK(g(1, 2) == 11.0);

  const auto gd = build_gamma_matrix(desk_set());
  CHECK((gd.diagonal().array() == 1.0).all());
  CHECK((gd.array() >= 1.0).all());
  CHECK((gd.array() <= 11.0).all());
}

TEST_CASE("controller table covers every class with valid controllers") {
  const auto& d = desk_set();
  const auto lut = build_controller_lut(d);
  REQUIRE(lut.size() == d.size());
  for (const auto& e : lut) {
    CHECK_FALSE(e.error.has_value());
    CHECK(std::abs(check_gain_constraint(e.rule.c1, e.rule.c2, e.rule.c3)) < 1e-9);
    CHECK(std::isfinite(ise(e.pid, d.processes[e.id], d.design.scen)));
  }
}

TEST_CASE("save and load round trip") {
  const auto& d = desk_set();
  const auto dir = std::filesystem::temp_directory_path() / "mrftid_test_dset";
  std::filesystem::remove_all(dir);
  save_discrete_set(d, dir);
  for (const char* f : {"processes.csv", "joint_costs.csv", "gamma.csv", "lut.json", "manifest.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto e = load_discrete_set(dir);
  REQUIRE(e.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(e.processes[i].triple() == d.processes[i].triple());
    CHECK(e.controllers[i].pid == d.controllers[i].pid);
    CHECK(e.controllers[i].rule == d.controllers[i].rule);
  }
  CHECK(e.surface_ids == d.surface_ids);
  CHECK(e.pairs.size() == d.pairs.size());
  CHECK(e.j_star == d.j_star);
  CHECK(e.phi_m == doctest::Approx(d.phi_m).epsilon(1e-15));
  CHECK(e.bounds.lo == d.bounds.lo);
  // Infinite entries survive as "inf".
  CHECK(((e.joint_costs.array() == d.joint_costs.array()) ||
         (e.joint_costs.array().isInf() && d.joint_costs.array().isInf())).all());

  // A class marked infeasible stops loading.
  const auto lut_path = dir / "lut.json";
  auto lut = read_json(lut_path);
  lut[0]["error"] = "controller does not stabilize its class";
  write_json(lut_path, lut);
  CHECK_THROWS_AS(load_discrete_set(dir), InfeasibleError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_discrete_set(dir), ResourceError);
}

TEST_CASE("construction is deterministic and independent of the job count") {
  const auto a = discretize(desk_options(1));
  const auto& b = desk_set();
  const auto da = std::filesystem::temp_directory_path() / "mrftid_test_det_a";
  const auto db = std::filesystem::temp_directory_path() / "mrftid_test_det_b";
  save_discrete_set(a, da);
  save_discrete_set(b, db);
  for (const char* f : {"processes.csv", "joint_costs.csv", "gamma.csv", "lut.json", "adjacency.csv"}) {
    CHECK(slurp(da / f) == slurp(db / f));
  }
  std::filesystem::remove_all(da);
  std::filesystem::remove_all(db);
}
