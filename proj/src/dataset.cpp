#include "mrftid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "mrftid/errors.hpp"
#include "mrftid/io.hpp"
#include "mrftid/parallel.hpp"
#include "mrftid/sim.hpp"

namespace mrftid {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'F', 'T', 'D', 'S', 'E', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double unit_interval(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

std::string describe(const ProcessParams& p) {
  return "(" + format_double(p.t_prop) + ", " + format_double(p.t_body) + ", " + format_double(p.tau) + ")";
}

// Centers a channel over the cycle and scales it to max |value| 1.
void normalize(Eigen::Ref<Eigen::VectorXd> c) {
  c.array() -= c.mean();
  const double m = c.cwiseAbs().maxCoeff();
  if (m > 0.0) c /= m;
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError(path.string() + ": truncated");
  return v;
}

}  // namespace

void Dataset::validate() const {
  if (x.rows() != static_cast<Eigen::Index>(kFeatureLength)) {
    throw ShapeError("dataset features must have length " + std::to_string(kFeatureLength));
  }
  if (x.cols() != static_cast<Eigen::Index>(labels.size()) || meta.size() != labels.size()) {
    throw ShapeError("dataset columns, labels and meta disagree in count");
  }
  for (auto l : labels) {
    if (l >= classes) throw ShapeError("label " + std::to_string(l) + " out of range");
  }
}

void GenSpec::validate() const {
  mrft.validate();
  if (train_per_class < 1 || verify_per_class < 1) throw DomainError("per-class counts must be at least 1");
  if (!(bias_fraction >= 0.0) || !(bias_fraction <= 0.5)) throw DomainError("bias fraction must lie in [0, 0.5]");
  if (!(snr_db_hi >= snr_db_lo) || !std::isfinite(snr_db_lo) || !std::isfinite(snr_db_hi)) {
    throw DomainError("snr range must be finite with lo <= hi");
  }
  if (!(noise_band_sigmas >= 0.0) || !(turn_smoothing >= 0.0)) throw DomainError("noise band and smoothing must be >= 0");
  if (!(horizon_periods >= 5.0)) throw DomainError("horizon must cover at least 5 periods");
  if (!(steady_tol > 0.0)) throw DomainError("steady tolerance must be positive");
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t z = mix64(seed + 0x9e3779b97f4a7c15ULL);
  for (auto p : parts) z = mix64(z ^ (p + 0x9e3779b97f4a7c15ULL + (z << 6) + (z >> 2)));
  return z;
}

FeatureVector preprocess(const Oscillation& osc) {
  if (!osc.steady || osc.cycle_pv.empty() || osc.cycle_pv.size() != osc.cycle_u.size()) {
    throw NotSteadyError("preprocessing needs one steady cycle");
  }
  if (!(osc.dt > 0.0)) throw DomainError("oscillation sample time must be positive");
  const double period = static_cast<double>(osc.cycle_pv.size()) * osc.dt;
  const double limit = static_cast<double>(kChannelLength) * kFeatureDt;
  if (period > limit * (1.0 + 1e-9)) {
    throw TooSlowError("cycle period " + format_double(period) + " s exceeds the " + format_double(limit) +
                       " s input window");
  }

  const std::size_t n_src = osc.cycle_pv.size();
  std::size_t n = n_src;
  Eigen::VectorXd pv;
  Eigen::VectorXd u;
  if (std::abs(osc.dt - kFeatureDt) <= 1e-12) {
    pv = Eigen::Map<const Eigen::VectorXd>(osc.cycle_pv.data(), static_cast<Eigen::Index>(n_src));
    u = Eigen::Map<const Eigen::VectorXd>(osc.cycle_u.data(), static_cast<Eigen::Index>(n_src));
  } else {
    n = std::min<std::size_t>(kChannelLength, std::max<std::size_t>(1, std::lround(period / kFeatureDt)));
    pv.resize(static_cast<Eigen::Index>(n));
    u.resize(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      const double pos = static_cast<double>(k) * kFeatureDt / osc.dt;
      const auto i = std::min(static_cast<std::size_t>(pos), n_src - 1);
      const double f = pos - static_cast<double>(i);
      const double next = i + 1 < n_src ? osc.cycle_pv[i + 1] : osc.cycle_pv[i];
      pv(static_cast<Eigen::Index>(k)) = osc.cycle_pv[i] + f * (next - osc.cycle_pv[i]);
      u(static_cast<Eigen::Index>(k)) = osc.cycle_u[i];
    }
  }
  normalize(pv);
  normalize(u);

  FeatureVector x = FeatureVector::Zero(static_cast<Eigen::Index>(kFeatureLength));
  x.head(static_cast<Eigen::Index>(n)) = pv;
  x.segment(static_cast<Eigen::Index>(kChannelLength), static_cast<Eigen::Index>(n)) = u;
  return x;
}

FeatureVector preprocess(const Trajectory& traj, double steady_tol) {
  return preprocess(detect_steady_cycle(traj, steady_tol));
}

Trajectory mrft_response(const ProcessParams& p, const MrftConfig& mrft, double horizon, double noise_power,
                         double input_bias, std::uint64_t seed) {
  MrftController relay(mrft);
  SimConfig cfg;
  cfg.dt = kFeatureDt;
  cfg.horizon = horizon;
  cfg.noise_power = noise_power;
  cfg.input_bias = input_bias;
  cfg.seed = seed;
  cfg.ref = Reference::constant(0.0);
  return simulate(p, relay, cfg);
}

Trajectory noisy_mrft_run(const ProcessParams& p, const GenSpec& spec, std::uint64_t seed, SampleMeta* meta) {
  const auto hb = hb_predict(p, spec.mrft.h, spec.mrft.beta);
  const double horizon = spec.horizon_periods * 2.0 * std::numbers::pi / hb.omega0;
  SampleMeta m;
  m.seed = seed;
  m.snr_db = spec.snr_db_lo + (spec.snr_db_hi - spec.snr_db_lo) * unit_interval(derive_seed(seed, {1}));
  m.input_bias = (2.0 * unit_interval(derive_seed(seed, {2})) - 1.0) * spec.bias_fraction * spec.mrft.h;
  const double sigma = hb.a0 / std::pow(10.0, m.snr_db / 20.0);
  m.noise_power = sigma * sigma;
  MrftConfig relay = spec.mrft;
  relay.noise_band = spec.noise_band_sigmas * sigma;
  relay.turn_smoothing = spec.turn_smoothing;
  if (meta) *meta = m;
  return mrft_response(p, relay, horizon, m.noise_power, m.input_bias, seed);
}

std::pair<FeatureVector, SampleMeta> generate_sample(const ProcessParams& p, std::size_t label, const GenSpec& spec,
                                                     std::uint64_t seed) {
  for (std::size_t attempt = 0; attempt <= spec.retries; ++attempt) {
    SampleMeta meta;
    const auto traj = noisy_mrft_run(p, spec, derive_seed(seed, {attempt}), &meta);
    try {
      return {preprocess(detect_steady_cycle(traj, spec.steady_tol)), meta};
    } catch (const NotSteadyError&) {
      continue;
    } catch (const TooSlowError& e) {
      throw GenerationError("class " + std::to_string(label) + " " + describe(p) + ": " + e.what());
    }
  }
  throw GenerationError("class " + std::to_string(label) + " " + describe(p) + " formed no steady cycle in " +
                        std::to_string(spec.retries + 1) + " attempts");
}

std::pair<Dataset, Dataset> generate(const DiscreteSet& d, const GenSpec& spec, std::uint64_t seed,
                                     std::size_t jobs) {
  spec.validate();
  if (d.size() == 0) throw DomainError("cannot generate data for an empty discrete set");
  const std::size_t nc = d.size();
  const std::size_t per[2] = {spec.train_per_class, spec.verify_per_class};
  Dataset out[2];
  for (int s = 0; s < 2; ++s) {
    out[s].classes = nc;
    out[s].x.resize(static_cast<Eigen::Index>(kFeatureLength), static_cast<Eigen::Index>(nc * per[s]));
    out[s].labels.resize(nc * per[s]);
    out[s].meta.resize(nc * per[s]);
  }
  const std::size_t total = nc * (per[0] + per[1]);
  parallel_for(total, jobs, [&](std::size_t k) {
    const int s = k < nc * per[0] ? 0 : 1;
    const std::size_t local = s == 0 ? k : k - nc * per[0];
    const std::size_t c = local / per[s];
    const std::size_t i = local % per[s];
    auto [x, meta] = generate_sample(d.processes[c], c, spec, derive_seed(seed, {c, static_cast<std::uint64_t>(s), i}));
    out[s].x.col(static_cast<Eigen::Index>(local)) = x;
    out[s].labels[local] = c;
    out[s].meta[local] = meta;
  });
  return {std::move(out[0]), std::move(out[1])};
}

std::vector<ProcessParams> sample_test_processes(const ParamBounds& bounds, std::size_t n, std::uint64_t seed) {
  bounds.validate();
  if (n < 1) throw DomainError("need at least one test process");
  std::mt19937_64 rng(seed);
  std::vector<ProcessParams> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Eigen::Vector3d x;
    for (int i = 0; i < 3; ++i) {
      x(i) = std::min(bounds.hi(i), bounds.lo(i) * std::pow(bounds.hi(i) / bounds.lo(i), unit_interval(rng())));
    }
    out.push_back(ProcessParams::from_triple(x));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& name,
                  const std::string& extra_json) {
  ds.validate();
  std::filesystem::create_directories(dir);
  const auto bin = dir / (name + ".bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + bin.string());
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(ds.x.rows()));
  write_pod(out, static_cast<std::uint64_t>(ds.x.cols()));
  out.write(reinterpret_cast<const char*>(ds.x.data()), static_cast<std::streamsize>(ds.x.size() * sizeof(double)));
  for (auto l : ds.labels) write_pod(out, static_cast<std::uint64_t>(l));
  if (!out) throw ResourceError("write failed for " + bin.string());

  json samples = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& m = ds.meta[i];
    samples.push_back({{"label", ds.labels[i]},
                       {"noise_power", m.noise_power},
                       {"input_bias", m.input_bias},
                       {"snr_db", m.snr_db},
                       {"seed", m.seed}});
  }
  json manifest{{"format", "mrftid-dataset"},
                {"version", kFormatVersion},
                {"classes", ds.classes},
                {"size", ds.size()},
                {"features", kFeatureLength},
                {"samples", samples}};
  try {
    manifest["extra"] = json::parse(extra_json);
  } catch (const json::exception& e) {
    throw ParseError(std::string("dataset extra fields: ") + e.what());
  }
  write_json(dir / (name + ".json"), manifest);
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& name) {
  const auto manifest = read_json(dir / (name + ".json"));
  const auto bin = dir / (name + ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw ResourceError("cannot read " + bin.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(bin.string() + ": not a dataset file");
  if (read_pod<std::uint32_t>(in, bin) != kFormatVersion) throw ParseError(bin.string() + ": unsupported version");
  const auto rows = read_pod<std::uint64_t>(in, bin);
  const auto cols = read_pod<std::uint64_t>(in, bin);
  if (rows != kFeatureLength) throw ShapeError(bin.string() + ": feature length " + std::to_string(rows));
  Dataset ds;
  ds.classes = manifest.at("classes").get<std::size_t>();
  ds.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(ds.x.data()), static_cast<std::streamsize>(ds.x.size() * sizeof(double)));
  if (!in) throw ParseError(bin.string() + ": truncated");
  ds.labels.resize(cols);
  for (auto& l : ds.labels) l = read_pod<std::uint64_t>(in, bin);
  const auto& samples = manifest.at("samples");
  if (samples.size() != cols) throw ShapeError("dataset manifest and binary disagree in sample count");
  for (const auto& s : samples) {
    SampleMeta m;
    m.noise_power = s.at("noise_power").get<double>();
    m.input_bias = s.at("input_bias").get<double>();
    m.snr_db = s.at("snr_db").get<double>();
    m.seed = s.at("seed").get<std::uint64_t>();
    ds.meta.push_back(m);
  }
  ds.validate();
  return ds;
}

void export_sample_csv(const Dataset& ds, std::size_t i, const std::filesystem::path& path) {
  if (i >= ds.size()) throw DomainError("sample index out of range");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << "t,pv,u\n";
  const auto col = ds.x.col(static_cast<Eigen::Index>(i));
  for (std::size_t k = 0; k < kChannelLength; ++k) {
    out << format_double(static_cast<double>(k) * kFeatureDt) << ',' << format_double(col(static_cast<Eigen::Index>(k)))
        << ',' << format_double(col(static_cast<Eigen::Index>(kChannelLength + k))) << '\n';
  }
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0].size() < 3 || rows[0][0] != "t" || rows[0][1] != "pv" || rows[0][2] != "u") {
    throw ParseError(path.string() + ": expected a t,pv,u header");
  }
  Trajectory traj;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 3) throw ParseError(path.string() + ": row " + std::to_string(r) + " has fewer than 3 fields");
    traj.push_back(parse_double(rows[r][0]), parse_double(rows[r][1]), parse_double(rows[r][2]));
  }
  if (traj.size() < 2) throw ParseError(path.string() + ": need at least two samples");
  traj.dt = traj.t[1] - traj.t[0];
  if (!(traj.dt > 0.0)) throw ParseError(path.string() + ": time must increase");
  for (std::size_t k = 1; k < traj.size(); ++k) {
    if (std::abs(traj.t[k] - traj.t[k - 1] - traj.dt) > 1e-6 * traj.dt + 1e-12) {
      throw ParseError(path.string() + ": samples are not uniformly spaced at row " + std::to_string(k + 1));
    }
  }
  return traj;
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << "t,pv,u\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out << format_double(traj.t[k]) << ',' << format_double(traj.pv[k]) << ',' << format_double(traj.u[k]) << '\n';
  }
}

}  // namespace mrftid
