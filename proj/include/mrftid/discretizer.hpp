#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mrftid/process_model.hpp"
#include "mrftid/tuning.hpp"

namespace mrftid {

struct DiscretizeOptions {
  ParamBounds bounds;
  double j_star = 0.10;
  // An accepted neighbour satisfies |J_(ij) - j_star| <= j_tol.
  double j_tol = 0.01;
  // Optimizer stops once (j_star - J)^2 drops below this.
  double e_target = 1e-6;
  DesignOptions design;
  // Unstable pairs enter the gamma matrix as 1 + j_cap.
  double j_cap = 10.0;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;  // recorded in the manifest; the construction is deterministic
  std::size_t max_surface = 5000;

  void validate() const;
};

// A process together with its own optimal controller.
struct Member {
  ProcessParams p;
  Design design;
};

// Neighbour pair recorded during construction with the symmetric joint cost
// measured at that time.
struct Adjacency {
  ProcessParams a;
  ProcessParams b;
  double j = 0.0;
  bool radial = false;
};

struct Surface {
  double r0 = 0.0;
  std::vector<Member> members;  // sweep order
  std::vector<Adjacency> pairs;
};

// The discretized parameter set D-bar.
struct DiscreteSet {
  std::vector<ProcessParams> processes;
  std::vector<std::size_t> surface_ids;  // members of D-bar that lie on the surface
  Eigen::MatrixXd joint_costs;           // directed J_ij, fractions, +inf when unstable
  std::vector<Design> controllers;
  std::vector<Adjacency> pairs;          // surface and radial neighbours
  std::vector<double> alphas;            // radial factor per surface member
  double j_star = 0.10;
  double phi_m = 0.0;
  ParamBounds bounds;
  DesignOptions design;
  std::uint64_t seed = 0;

  std::size_t size() const { return processes.size(); }
};

struct AdjacentStep {
  ProcessParams p;
  Design design;
  double step = 0.0;  // radians along the direction
  double j = 0.0;     // symmetric joint cost to the origin process
};

// Symmetric joint cost between two processes with their own designs.
double pair_joint_cost(const Member& a, const Member& b, const IseScenario& scen);

// J_(ij) between g and the candidate reached by `step` radians from g in the
// (d_theta, d_phi) direction, the candidate carrying its own optimal design;
// +inf when the candidate is degenerate or cannot be controlled.
double adjacent_joint_cost(const Member& g, double d_theta, double d_phi, double step, const DesignOptions& opt);

// Walks from g on its sphere along the unit (d_theta, d_phi) direction to the
// first process at joint cost j_star, no further than max_step radians.
// Minimizes E = (j_star - J)^2 inside the bracket found by a forward scan.
// Returns nullopt when J stays below j_star up to max_step; throws
// DiscretizationError if the optimizer ends with |J - j_star| > j_tol.
std::optional<AdjacentStep> adjacent_process(const Member& g, double d_theta, double d_phi, double max_step,
                                             const DiscretizeOptions& opt, double step_guess = 0.01);

// Angular box [theta_lo, theta_hi] x [phi_lo, phi_hi] spanned by the bounds.
struct AngularExtent {
  double theta_lo = 0.0;
  double theta_hi = 0.0;
  double phi_lo = 0.0;
  double phi_hi = 0.0;
};
AngularExtent angular_extent(const ParamBounds& bounds);

// Sweeps the sphere of radius |p_min| from (theta_lo, phi_lo): +theta steps
// give the row starts, +phi steps fill each row. A row or column ends when
// no process at j_star is left before the far edge of the angular extent.
Surface discretize_surface(const DiscretizeOptions& opt);

// alpha > 1 with J_(ij) between g and g scaled by alpha (gain kept at 1) equal to j_star.
double find_alpha(const Member& g, const DiscretizeOptions& opt, double* j_found = nullptr);

// Radial chains alpha^k g of each surface member, kept while inside the
// bounds and stopped once any parameter passes the upper bound. Computes the
// full joint-cost matrix and per-class controllers.
DiscreteSet radial_fill(const Surface& surface, const DiscretizeOptions& opt);

DiscreteSet discretize(const DiscretizeOptions& opt);

// Directed matrix J_ij = deterioration of controller i on process j.
Eigen::MatrixXd joint_cost_matrix(const std::vector<ProcessParams>& processes, const std::vector<Design>& designs,
                                  const IseScenario& scen, std::size_t jobs = 1);

// gamma_iT = 1 + clamp(J_iT, 0, j_cap); unstable entries become 1 + j_cap.
Eigen::MatrixXd build_gamma_matrix(const DiscreteSet& d, double j_cap = 10.0);

struct LutEntry {
  std::size_t id = 0;
  HomogeneousRule rule;
  PidParams pid;
  double cost = 0.0;
  std::optional<std::string> error;  // set when the class has no valid controller
};

// Per-class controllers, each re-checked for the gain constraint and a finite own ISE.
std::vector<LutEntry> build_controller_lut(const DiscreteSet& d);

// Directory layout: processes.csv, joint_costs.csv, gamma.csv, lut.json,
// adjacency.csv, manifest.json.
void save_discrete_set(const DiscreteSet& d, const std::filesystem::path& dir, double j_cap = 10.0);
DiscreteSet load_discrete_set(const std::filesystem::path& dir);

}  // namespace mrftid
