#include "mrftid/io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mrftid/errors.hpp"

namespace mrftid {

namespace {

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double number_or_inf(const json& j) { return j.is_null() ? kInf : j.get<double>(); }

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot write " + path.string());
  return out;
}

}  // namespace

void to_json(json& j, const ProcessParams& p) {
  j = json{{"k_eq", p.k_eq}, {"t_prop", p.t_prop}, {"t_body", p.t_body}, {"tau", p.tau}};
}

void from_json(const json& j, ProcessParams& p) {
  p.k_eq = j.value("k_eq", 1.0);
  p.t_prop = j.at("t_prop").get<double>();
  p.t_body = j.at("t_body").get<double>();
  p.tau = j.at("tau").get<double>();
}

void to_json(json& j, const PidParams& c) {
  j = json{{"kp", c.kp}, {"ti", number_or_null(c.ti)}, {"td", c.td}, {"derivative_filter", c.derivative_filter}};
}

void from_json(const json& j, PidParams& c) {
  c.kp = j.at("kp").get<double>();
  c.ti = j.contains("ti") ? number_or_inf(j.at("ti")) : kInf;
  c.td = j.value("td", 0.0);
  c.derivative_filter = j.value("derivative_filter", 0.0);
}

void to_json(json& j, const HomogeneousRule& r) {
  j = json{{"c1", r.c1}, {"c2", number_or_null(r.c2)}, {"c3", r.c3}, {"beta", r.beta}};
}

void from_json(const json& j, HomogeneousRule& r) {
  r.c1 = j.at("c1").get<double>();
  r.c2 = j.contains("c2") ? number_or_inf(j.at("c2")) : kInf;
  r.c3 = j.at("c3").get<double>();
  r.beta = j.at("beta").get<double>();
}

void to_json(json& j, const ParamBounds& b) {
  j = json{{"lo", {b.lo(0), b.lo(1), b.lo(2)}}, {"hi", {b.hi(0), b.hi(1), b.hi(2)}}};
}

void from_json(const json& j, ParamBounds& b) {
  const auto lo = j.at("lo").get<std::vector<double>>();
  const auto hi = j.at("hi").get<std::vector<double>>();
  if (lo.size() != 3 || hi.size() != 3) throw ParseError("bounds need three lo and three hi values");
  b.lo = Eigen::Vector3d(lo[0], lo[1], lo[2]);
  b.hi = Eigen::Vector3d(hi[0], hi[1], hi[2]);
}

void to_json(json& j, const IseScenario& s) {
  j = json{{"horizon_factor", s.horizon_factor},
           {"dt", s.dt},
           {"divergence", s.divergence},
           {"reference", s.reference}};
}

void from_json(const json& j, IseScenario& s) {
  s.horizon_factor = j.value("horizon_factor", s.horizon_factor);
  s.dt = j.value("dt", s.dt);
  s.divergence = j.value("divergence", s.divergence);
  s.reference = j.value("reference", s.reference);
}

void to_json(json& j, const DesignOptions& o) {
  j = json{{"structure", o.structure == Structure::PD ? "pd" : "pid"},
           {"phi_m_deg", o.phi_m * 180.0 / std::numbers::pi},
           {"h", o.h},
           {"filter_ratio", o.filter_ratio},
           {"source", o.source == OscillationSource::HarmonicBalance ? "harmonic_balance" : "simulated"},
           {"scenario", o.scen},
           {"max_evals", o.max_evals},
           {"tol_x", o.tol_x}};
}

void from_json(const json& j, DesignOptions& o) {
  if (j.contains("structure")) {
    const auto s = j.at("structure").get<std::string>();
    if (s == "pd") {
      o.structure = Structure::PD;
    } else if (s == "pid") {
      o.structure = Structure::PID;
    } else {
      throw ParseError("structure must be pd or pid, got " + s);
    }
  }
  if (j.contains("phi_m_deg")) o.phi_m = j.at("phi_m_deg").get<double>() * std::numbers::pi / 180.0;
  o.h = j.value("h", o.h);
  o.filter_ratio = j.value("filter_ratio", o.filter_ratio);
  if (j.contains("source")) {
    const auto s = j.at("source").get<std::string>();
    if (s == "harmonic_balance") {
      o.source = OscillationSource::HarmonicBalance;
    } else if (s == "simulated") {
      o.source = OscillationSource::Simulated;
    } else {
      throw ParseError("source must be harmonic_balance or simulated, got " + s);
    }
  }
  if (j.contains("scenario")) o.scen = j.at("scenario").get<IseScenario>();
  o.max_evals = j.value("max_evals", o.max_evals);
  o.tol_x = j.value("tol_x", o.tol_x);
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0.0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ParseError("trailing characters in number '" + s + "'");
  return x;
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      if (k) out << ',';
      out << format_double(m(i, k));
    }
    out << '\n';
  }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ParseError(path.string() + ": ragged row " + std::to_string(i));
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = parse_double(rows[i][k]);
    }
  }
  return m;
}

std::string content_hash(const void* data, std::size_t bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* c = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= c[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResourceError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto s = ss.str();
  return content_hash(s.data(), s.size());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

}  // namespace mrftid
