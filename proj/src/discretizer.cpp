#include "mrftid/discretizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "mrftid/errors.hpp"
#include "mrftid/io.hpp"
#include "mrftid/optim.hpp"
#include "mrftid/parallel.hpp"
#include "mrftid/version.hpp"

namespace mrftid {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

ProcessParams scaled_unit_gain(const ProcessParams& p, double alpha) {
  return ProcessParams::from_triple(alpha * p.triple(), 1.0);
}

// Design of a time-scaled copy: the optimal rule is the same, only the
// oscillation it is applied to changes.
Design design_with_rule(const HomogeneousRule& rule, const ProcessParams& p, const DesignOptions& opt) {
  Design d;
  d.rule = rule;
  const auto osc = excite(p, rule.beta, opt.h, opt.source);
  d.a0 = osc.a0;
  d.omega0 = osc.omega0;
  d.pid = pid_from_oscillation(rule, osc, opt.h);
  d.pid.derivative_filter = d.pid.td / opt.filter_ratio;
  d.cost = ise(d.pid, p, opt.scen);
  return d;
}

std::string describe(const ProcessParams& p) {
  return "(" + format_double(p.t_prop) + ", " + format_double(p.t_body) + ", " + format_double(p.tau) + ")";
}

// Root of j(x) = j_star: geometric scan from `guess` up to `hi` for the first
// x with j(x) >= j_star, then bounded Nelder-Mead on (j_star - j)^2 inside the
// bracket. Returns nullopt when j stays below j_star up to hi.
std::optional<double> solve_crossing(const std::function<double(double)>& j, double guess, double lo, double hi,
                                     const DiscretizeOptions& opt) {
  auto e = [&](double x) {
    const double d = opt.j_star - j(x);
    return std::isfinite(d) ? d * d : kInf;
  };
  double a = lo;
  double b = std::clamp(0.25 * guess, lo, hi);
  double jb = j(b);
  while (jb < opt.j_star) {
    if (b >= hi) return std::nullopt;
    a = b;
    b = std::min(2.0 * b, hi);
    jb = j(b);
  }
  if (e(b) <= opt.e_target) return b;

  OptProblem prob;
  prob.objective = [&e](const Eigen::VectorXd& x) { return e(x(0)); };
  prob.x0 = Eigen::VectorXd::Constant(1, 0.5 * (a + b));
  prob.lower = Eigen::VectorXd::Constant(1, a);
  prob.upper = Eigen::VectorXd::Constant(1, b);
  prob.f_target = opt.e_target;
  prob.tol_x = 1e-9 * b;
  prob.max_evals = 80;
  if (!std::isfinite(e(prob.x0(0)))) prob.x0(0) = a + 0.1 * (b - a);
  try {
    return minimize(prob).x(0);
  } catch (const InvalidStartError&) {
    return b;
  }
}

}  // namespace

void DiscretizeOptions::validate() const {
  bounds.validate();
  design.validate();
  if (!(j_star > 0.0) || !(j_tol > 0.0) || !(j_tol < j_star) || !(e_target > 0.0)) {
    throw DomainError("discretization needs j_star > 0 and 0 < j_tol < j_star");
  }
  if (!(j_cap > 0.0)) throw DomainError("j_cap must be positive");
}

double pair_joint_cost(const Member& a, const Member& b, const IseScenario& scen) {
  if (a.design.pid == b.design.pid) return 0.0;
  const double ab = deterioration(ise(a.design.pid, b.p, scen), b.design.cost);
  const double ba = deterioration(ise(b.design.pid, a.p, scen), a.design.cost);
  return std::max(ab, ba);
}

double adjacent_joint_cost(const Member& g, double d_theta, double d_phi, double step, const DesignOptions& opt) {
  auto s = to_spherical(g.p);
  s.theta += d_theta * step;
  s.phi += d_phi * step;
  try {
    Member cand{from_spherical(s), {}};
    cand.design = optimize_controller(cand.p, opt);
    return pair_joint_cost(g, cand, opt.scen);
  } catch (const Error&) {
    return kInf;
  }
}

std::optional<AdjacentStep> adjacent_process(const Member& g, double d_theta, double d_phi, double max_step,
                                             const DiscretizeOptions& opt, double step_guess) {
  const double norm = std::hypot(d_theta, d_phi);
  if (!(norm > 0.0)) throw DomainError("step direction must be nonzero");
  d_theta /= norm;
  d_phi /= norm;
  const auto s0 = to_spherical(g.p);
  // Keep theta < pi/2 and phi <= pi/2 along the way.
  double hi = max_step;
  if (d_theta > 0.0) hi = std::min(hi, (kHalfPi - s0.theta) / d_theta * (1.0 - 1e-9));
  if (d_phi > 0.0) hi = std::min(hi, (kHalfPi - s0.phi) / d_phi);
  if (!(hi > 0.0)) return std::nullopt;
  const double lo = std::min(1e-7, 0.5 * hi);

  auto j = [&](double step) { return adjacent_joint_cost(g, d_theta, d_phi, step, opt.design); };
  const auto step = solve_crossing(j, step_guess, lo, hi, opt);
  if (!step) return std::nullopt;

  AdjacentStep out;
  auto s = s0;
  s.theta += d_theta * *step;
  s.phi += d_phi * *step;
  out.step = *step;
  try {
    out.p = from_spherical(s);
    out.design = optimize_controller(out.p, opt.design);
    out.j = pair_joint_cost(g, {out.p, out.design}, opt.design.scen);
  } catch (const Error& err) {
    throw DiscretizationError("step from " + describe(g.p) + " failed: " + err.what());
  }
  if (!(std::abs(out.j - opt.j_star) <= opt.j_tol)) {
    throw DiscretizationError("no neighbour at joint cost " + format_double(opt.j_star) + " from " +
                              describe(g.p) + " (best " + format_double(out.j) + " at step " +
                              format_double(*step) + ")");
  }
  return out;
}

AngularExtent angular_extent(const ParamBounds& bounds) {
  bounds.validate();
  AngularExtent ext{kInf, -kInf, kInf, -kInf};
  for (int c = 0; c < 8; ++c) {
    ProcessParams p{1.0, (c & 1) ? bounds.hi(0) : bounds.lo(0), (c & 2) ? bounds.hi(1) : bounds.lo(1),
                    (c & 4) ? bounds.hi(2) : bounds.lo(2)};
    const auto s = to_spherical(p);
    ext.theta_lo = std::min(ext.theta_lo, s.theta);
    ext.theta_hi = std::max(ext.theta_hi, s.theta);
    ext.phi_lo = std::min(ext.phi_lo, s.phi);
    ext.phi_hi = std::max(ext.phi_hi, s.phi);
  }
  return ext;
}

Surface discretize_surface(const DiscretizeOptions& opt) {
  opt.validate();
  const auto ext = angular_extent(opt.bounds);
  const double eps = 1e-12;
  Surface out;
  out.r0 = opt.bounds.lo.norm();

  Member start;
  start.p = from_spherical({out.r0, ext.theta_lo, ext.phi_lo});
  start.design = optimize_controller(start.p, opt.design);

  // Row starts along +theta.
  std::vector<Member> starts{start};
  std::vector<Adjacency> theta_pairs;
  double guess = 0.01;
  for (;;) {
    const double left = ext.theta_hi - to_spherical(starts.back().p).theta;
    if (!(left > eps)) break;
    if (starts.size() >= opt.max_surface) throw ResourceError("surface exceeds max_surface members");
    const auto st = adjacent_process(starts.back(), 1.0, 0.0, left, opt, guess);
    if (!st) break;
    theta_pairs.push_back({starts.back().p, st->p, st->j, false});
    starts.push_back({st->p, st->design});
    guess = st->step;
  }

  // Each row along +phi depends only on its start.
  std::vector<std::vector<Member>> rows(starts.size());
  std::vector<std::vector<Adjacency>> row_pairs(starts.size());
  parallel_for(starts.size(), opt.jobs, [&](std::size_t r) {
    rows[r].push_back(starts[r]);
    double g = 0.01;
    for (;;) {
      const double left = ext.phi_hi - to_spherical(rows[r].back().p).phi;
      if (!(left > eps)) break;
      if (rows[r].size() >= opt.max_surface) throw ResourceError("surface row exceeds max_surface members");
      const auto st = adjacent_process(rows[r].back(), 0.0, 1.0, left, opt, g);
      if (!st) break;
      row_pairs[r].push_back({rows[r].back().p, st->p, st->j, false});
      rows[r].push_back({st->p, st->design});
      g = st->step;
    }
  });

  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (auto& m : rows[r]) out.members.push_back(std::move(m));
  }
  out.pairs = std::move(theta_pairs);
  for (auto& rp : row_pairs) {
    for (auto& a : rp) out.pairs.push_back(std::move(a));
  }
  if (out.members.size() > opt.max_surface) throw ResourceError("surface exceeds max_surface members");
  return out;
}

double find_alpha(const Member& g, const DiscretizeOptions& opt, double* j_found) {
  auto joint = [&](double alpha) {
    try {
      const auto q = scaled_unit_gain(g.p, alpha);
      return pair_joint_cost(g, {q, design_with_rule(g.design.rule, q, opt.design)}, opt.design.scen);
    } catch (const Error&) {
      return kInf;
    }
  };
  // Search log(alpha) so the bracket doubling acts on the ratio.
  const auto x = solve_crossing([&](double l) { return joint(std::exp(l)); }, 0.2, 1e-6, std::log(20.0), opt);
  if (!x) {
    throw DiscretizationError("joint cost to scaled copies of " + describe(g.p) + " stays below " +
                              format_double(opt.j_star) + " up to alpha = 20");
  }
  const double alpha = std::exp(*x);
  const double j = joint(alpha);
  if (!(std::abs(j - opt.j_star) <= opt.j_tol)) {
    throw DiscretizationError("radial factor search failed for " + describe(g.p) + " (best J " +
                              format_double(j) + " at alpha " + format_double(alpha) + ")");
  }
  if (j_found) *j_found = j;
  return alpha;
}

Eigen::MatrixXd joint_cost_matrix(const std::vector<ProcessParams>& processes, const std::vector<Design>& designs,
                                  const IseScenario& scen, std::size_t jobs) {
  if (processes.size() != designs.size()) throw ShapeError("one design per process required");
  const std::size_t n = processes.size();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  parallel_for(n * n, jobs, [&](std::size_t k) {
    const std::size_t i = k / n;
    const std::size_t j = k % n;
    if (i == j) return;
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
        designs[i].pid == designs[j].pid ? 0.0
                                         : deterioration(ise(designs[i].pid, processes[j], scen), designs[j].cost);
  });
  return m;
}

DiscreteSet radial_fill(const Surface& surface, const DiscretizeOptions& opt) {
  opt.validate();
  if (surface.members.empty()) throw DomainError("radial fill needs a nonempty surface");
  const std::size_t ns = surface.members.size();
  std::vector<double> alphas(ns);
  std::vector<std::vector<Member>> chains(ns);
  std::vector<std::vector<bool>> on_surface(ns);
  const double slack = 1e-9;

  parallel_for(ns, opt.jobs, [&](std::size_t m) {
    const auto& g = surface.members[m];
    alphas[m] = find_alpha(g, opt);
    for (std::size_t k = 0;; ++k) {
      const double scale = std::pow(alphas[m], static_cast<double>(k));
      const auto q = scaled_unit_gain(g.p, scale);
      const Eigen::Vector3d x = q.triple();
      if ((x.array() > opt.bounds.hi.array() * (1.0 + slack)).any()) break;
      if (!opt.bounds.contains(q, slack)) continue;
      chains[m].push_back({q, k == 0 ? g.design : design_with_rule(g.design.rule, q, opt.design)});
      on_surface[m].push_back(k == 0);
    }
  });

  DiscreteSet d;
  d.j_star = opt.j_star;
  d.phi_m = opt.design.phi_m;
  d.bounds = opt.bounds;
  d.design = opt.design;
  d.seed = opt.seed;
  d.alphas = alphas;
  std::vector<std::pair<std::size_t, std::size_t>> radial;
  for (std::size_t m = 0; m < ns; ++m) {
    for (std::size_t k = 0; k < chains[m].size(); ++k) {
      if (on_surface[m][k]) d.surface_ids.push_back(d.processes.size());
      if (k > 0) radial.emplace_back(d.processes.size() - 1, d.processes.size());
      d.processes.push_back(chains[m][k].p);
      d.controllers.push_back(chains[m][k].design);
    }
  }
  if (d.processes.empty()) throw DiscretizationError("no radial chain enters the bounds");

  d.joint_costs = joint_cost_matrix(d.processes, d.controllers, opt.design.scen, opt.jobs);
  d.pairs = surface.pairs;
  for (auto [a, b] : radial) {
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    d.pairs.push_back({d.processes[a], d.processes[b], std::max(d.joint_costs(ia, ib), d.joint_costs(ib, ia)), true});
  }
  return d;
}

DiscreteSet discretize(const DiscretizeOptions& opt) { return radial_fill(discretize_surface(opt), opt); }

Eigen::MatrixXd build_gamma_matrix(const DiscreteSet& d, double j_cap) {
  const Eigen::MatrixXd& j = d.joint_costs;
  Eigen::MatrixXd g(j.rows(), j.cols());
  for (Eigen::Index r = 0; r < j.rows(); ++r) {
    for (Eigen::Index c = 0; c < j.cols(); ++c) {
      const double v = j(r, c);
      g(r, c) = 1.0 + (std::isfinite(v) ? std::clamp(v, 0.0, j_cap) : j_cap);
    }
  }
  return g;
}

std::vector<LutEntry> build_controller_lut(const DiscreteSet& d) {
  std::vector<LutEntry> lut;
  for (std::size_t i = 0; i < d.size(); ++i) {
    LutEntry e;
    e.id = i;
    if (i >= d.controllers.size()) {
      e.error = "no controller";
      lut.push_back(e);
      continue;
    }
    const auto& c = d.controllers[i];
    e.rule = c.rule;
    e.pid = c.pid;
    e.cost = c.cost;
    if (!(std::abs(check_gain_constraint(c.rule.c1, c.rule.c2, c.rule.c3)) < 1e-9)) {
      e.error = "gain constraint residual too large";
    } else if (!std::isfinite(ise(c.pid, d.processes[i], d.design.scen))) {
      e.error = "controller does not stabilize its class";
    }
    lut.push_back(e);
  }
  return lut;
}

void save_discrete_set(const DiscreteSet& d, const std::filesystem::path& dir, double j_cap) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "processes.csv");
    if (!out) throw ResourceError("cannot write " + (dir / "processes.csv").string());
    out << "id,k_eq,t_prop,t_body,tau,surface\n";
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto& p = d.processes[i];
      const bool s = std::find(d.surface_ids.begin(), d.surface_ids.end(), i) != d.surface_ids.end();
      out << i << ',' << format_double(p.k_eq) << ',' << format_double(p.t_prop) << ',' << format_double(p.t_body)
          << ',' << format_double(p.tau) << ',' << (s ? 1 : 0) << '\n';
    }
  }
  write_matrix_csv(dir / "joint_costs.csv", d.joint_costs);
  write_matrix_csv(dir / "gamma.csv", build_gamma_matrix(d, j_cap));
  {
    std::ofstream out(dir / "adjacency.csv");
    if (!out) throw ResourceError("cannot write " + (dir / "adjacency.csv").string());
    out << "a_t_prop,a_t_body,a_tau,b_t_prop,b_t_body,b_tau,j,kind\n";
    for (const auto& a : d.pairs) {
      out << format_double(a.a.t_prop) << ',' << format_double(a.a.t_body) << ',' << format_double(a.a.tau) << ','
          << format_double(a.b.t_prop) << ',' << format_double(a.b.t_body) << ',' << format_double(a.b.tau) << ','
          << format_double(a.j) << ',' << (a.radial ? "radial" : "surface") << '\n';
    }
  }
  json lut = json::array();
  for (const auto& e : build_controller_lut(d)) {
    json row{{"id", e.id}, {"rule", e.rule}, {"pid", e.pid}, {"cost", e.cost}};
    const auto& c = d.controllers[e.id];
    row["a0"] = c.a0;
    row["omega0"] = c.omega0;
    if (e.error) row["error"] = *e.error;
    lut.push_back(row);
  }
  write_json(dir / "lut.json", lut);
  json manifest{{"tool", "mrftid"},
                {"version", kVersion},
                {"bounds", d.bounds},
                {"j_star", d.j_star},
                {"phi_m_deg", d.phi_m * 180.0 / std::numbers::pi},
                {"j_cap", j_cap},
                {"design", d.design},
                {"seed", d.seed},
                {"size", d.size()},
                {"alphas", d.alphas}};
  write_json(dir / "manifest.json", manifest);
}

DiscreteSet load_discrete_set(const std::filesystem::path& dir) {
  DiscreteSet d;
  const auto manifest = read_json(dir / "manifest.json");
  d.bounds = manifest.at("bounds").get<ParamBounds>();
  d.j_star = manifest.at("j_star").get<double>();
  d.phi_m = manifest.at("phi_m_deg").get<double>() * std::numbers::pi / 180.0;
  d.design = manifest.at("design").get<DesignOptions>();
  d.seed = manifest.value("seed", std::uint64_t{0});
  d.alphas = manifest.value("alphas", std::vector<double>{});

  const auto rows = read_csv(dir / "processes.csv");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 6) throw ParseError("processes.csv row " + std::to_string(r) + " needs 6 fields");
    d.processes.push_back({parse_double(row[1]), parse_double(row[2]), parse_double(row[3]), parse_double(row[4])});
    if (row[5] == "1") d.surface_ids.push_back(r - 1);
  }
  d.joint_costs = read_matrix_csv(dir / "joint_costs.csv");
  if (d.joint_costs.rows() != static_cast<Eigen::Index>(d.size()) ||
      d.joint_costs.cols() != static_cast<Eigen::Index>(d.size())) {
    throw ShapeError("joint_costs.csv does not match processes.csv");
  }
  const auto lut = read_json(dir / "lut.json");
  if (lut.size() != d.size()) throw ShapeError("lut.json does not match processes.csv");
  for (const auto& row : lut) {
    if (row.contains("error")) throw InfeasibleError("class " + row.at("id").dump() + ": " + row.at("error").get<std::string>());
    Design c;
    c.rule = row.at("rule").get<HomogeneousRule>();
    c.pid = row.at("pid").get<PidParams>();
    c.cost = row.at("cost").get<double>();
    c.a0 = row.value("a0", 0.0);
    c.omega0 = row.value("omega0", 0.0);
    d.controllers.push_back(c);
  }
  if (std::filesystem::exists(dir / "adjacency.csv")) {
    const auto adj = read_csv(dir / "adjacency.csv");
    for (std::size_t r = 1; r < adj.size(); ++r) {
      const auto& row = adj[r];
      if (row.size() != 8) throw ParseError("adjacency.csv row " + std::to_string(r) + " needs 8 fields");
      Adjacency a;
      a.a = {1.0, parse_double(row[0]), parse_double(row[1]), parse_double(row[2])};
      a.b = {1.0, parse_double(row[3]), parse_double(row[4]), parse_double(row[5])};
      a.j = parse_double(row[6]);
      a.radial = row[7] == "radial";
      d.pairs.push_back(a);
    }
  }
  return d;
}

}  // namespace mrftid
