#include "mrftid/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "mrftid/errors.hpp"
#include "mrftid/io.hpp"
#include "mrftid/parallel.hpp"
#include "mrftid/tuning.hpp"

namespace mrftid {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'F', 'T', 'W', 'N', 'E', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

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

template <class Derived>
void write_block(std::ofstream& out, const Eigen::DenseBase<Derived>& m) {
  out.write(reinterpret_cast<const char*>(m.derived().data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

template <class Derived>
void read_block(std::ifstream& in, Eigen::DenseBase<Derived>& m, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(m.derived().data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw ParseError(path.string() + ": truncated");
}

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

// Backprop through dropout, batch norm and ReLU of hidden layer l.
Eigen::MatrixXd hidden_backward(const Network& net, const ForwardCache& c, std::size_t l, Eigen::MatrixXd d,
                                Gradients& g) {
  if (c.mask[l].size() > 0) d.array() *= c.mask[l].array();
  const auto& xhat = c.xhat[l];
  g.scale[l] = (d.array() * xhat.array()).rowwise().sum();
  g.shift[l] = d.rowwise().sum();
  Eigen::MatrixXd dxhat = net.norms[l].scale.asDiagonal() * d;
  const Eigen::VectorXd m1 = dxhat.rowwise().mean();
  const Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Eigen::MatrixXd dr = dxhat.colwise() - m1;
  dr -= m2.asDiagonal() * xhat;
  dr = c.inv_std[l].asDiagonal() * dr;
  return (c.pre[l].array() > 0.0).select(dr.array(), 0.0).matrix();
}

}  // namespace

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : layers) n += static_cast<std::size_t>(a.w.size() + a.b.size());
  for (const auto& b : norms) n += static_cast<std::size_t>(b.scale.size() + b.shift.size());
  return n;
}

void Network::validate() const {
  if (dims.size() < 2) throw ShapeError("network needs an input and an output size");
  for (auto d : dims) {
    if (d == 0) throw ShapeError("layer sizes must be positive");
  }
  const std::size_t nh = dims.size() - 2;
  if (layers.size() != dims.size() - 1 || norms.size() != nh || dropout.size() != nh) {
    throw ShapeError("network layer lists disagree with its dimensions");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].w.rows() != idx(dims[l + 1]) || layers[l].w.cols() != idx(dims[l]) ||
        layers[l].b.size() != idx(dims[l + 1])) {
      throw ShapeError("affine layer " + std::to_string(l) + " has the wrong shape");
    }
  }
  for (std::size_t l = 0; l < nh; ++l) {
    const auto n = idx(dims[l + 1]);
    const auto& b = norms[l];
    if (b.scale.size() != n || b.shift.size() != n || b.running_mean.size() != n || b.running_var.size() != n) {
      throw ShapeError("batch norm " + std::to_string(l) + " has the wrong shape");
    }
    if (!(b.running_var.array() > 0.0).all()) throw DomainError("running variances must be positive");
    if (!(dropout[l] >= 0.0 && dropout[l] < 1.0)) throw DomainError("dropout rates must lie in [0, 1)");
  }
  if (!(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw DomainError("batch norm needs eps > 0 and momentum in (0, 1]");
  }
}

std::vector<std::size_t> default_dims(std::size_t classes) { return {kFeatureLength, 3000, 1000, classes}; }

Network make_network(const std::vector<std::size_t>& dims, const std::vector<double>& dropout, std::uint64_t seed,
                     double init_scale) {
  if (!(init_scale > 0.0)) throw DomainError("init scale must be positive");
  Network net;
  net.dims = dims;
  net.dropout = dropout;
  if (dims.size() < 2) throw ShapeError("network needs an input and an output size");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Affine a;
    const double sd = init_scale * std::sqrt(2.0 / static_cast<double>(dims[l]));
    a.w = Eigen::MatrixXd::NullaryExpr(idx(dims[l + 1]), idx(dims[l]), [&]() { return sd * normal(rng); });
    a.b = Eigen::VectorXd::Zero(idx(dims[l + 1]));
    net.layers.push_back(std::move(a));
  }
  for (std::size_t l = 0; l + 2 < dims.size(); ++l) {
    const auto n = idx(dims[l + 1]);
    net.norms.push_back({Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n),
                         Eigen::VectorXd::Ones(n)});
  }
  net.validate();
  return net;
}

Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& x, Mode mode, std::mt19937_64* rng,
                        ForwardCache* cache) {
  if (x.rows() != idx(net.inputs())) {
    throw ShapeError("input has length " + std::to_string(x.rows()) + ", network expects " +
                     std::to_string(net.inputs()));
  }
  const std::size_t nh = net.hidden();
  if (cache) *cache = ForwardCache{};
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < nh; ++l) {
    const auto& a = net.layers[l];
    const auto& bn = net.norms[l];
    Eigen::MatrixXd z = a.w * h;
    z.colwise() += a.b;
    Eigen::MatrixXd r = z.cwiseMax(0.0);
    Eigen::VectorXd mean, var;
    if (mode == Mode::Train) {
      mean = r.rowwise().mean();
      r.colwise() -= mean;
      var = r.array().square().rowwise().mean();
    } else {
      mean = bn.running_mean;
      var = bn.running_var;
      r.colwise() -= mean;
    }
    const Eigen::VectorXd inv_std = (var.array() + net.bn_eps).rsqrt();
    Eigen::MatrixXd xhat = inv_std.asDiagonal() * r;
    Eigen::MatrixXd y = bn.scale.asDiagonal() * xhat;
    y.colwise() += bn.shift;
    Eigen::MatrixXd mask;
    if (mode == Mode::Train && rng && net.dropout[l] > 0.0) {
      const double keep = 1.0 - net.dropout[l];
      std::bernoulli_distribution draw(keep);
      mask = Eigen::MatrixXd::NullaryExpr(y.rows(), y.cols(), [&]() { return draw(*rng) ? 1.0 / keep : 0.0; });
      y.array() *= mask.array();
    }
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(std::move(z));
      cache->xhat.push_back(std::move(xhat));
      cache->inv_std.push_back(inv_std);
      cache->batch_mean.push_back(std::move(mean));
      cache->batch_var.push_back(std::move(var));
      cache->mask.push_back(std::move(mask));
    }
    h = std::move(y);
  }
  Eigen::MatrixXd out = net.layers.back().w * h;
  out.colwise() += net.layers.back().b;
  if (cache) cache->inputs.push_back(std::move(h));
  return out;
}

Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x) {
  return forward(net, Eigen::MatrixXd(x), Mode::Infer).col(0);
}

Eigen::VectorXd modified_softmax(const Eigen::VectorXd& a, const Eigen::VectorXd& gamma_row) {
  if (a.size() != gamma_row.size()) throw ShapeError("logits and gamma row differ in length");
  if (a.size() == 0) throw ShapeError("empty logits");
  if (!a.allFinite()) throw NumericError("non-finite logits");
  Eigen::VectorXd z = a.cwiseProduct(gamma_row);
  z.array() -= z.maxCoeff();
  Eigen::VectorXd p = z.array().exp();
  return p / p.sum();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& a) { return modified_softmax(a, Eigen::VectorXd::Ones(a.size())); }

std::pair<double, Eigen::VectorXd> loss_and_logit_grad(const Eigen::VectorXd& a, std::size_t t,
                                                       const Eigen::VectorXd& gamma_row) {
  if (t >= static_cast<std::size_t>(a.size())) throw DomainError("true class out of range");
  Eigen::VectorXd z = a.cwiseProduct(gamma_row);
  if (!z.allFinite()) throw NumericError("non-finite logits");
  const double zmax = z.maxCoeff();
  const double lse = zmax + std::log((z.array() - zmax).exp().sum());
  const Eigen::VectorXd p = (z.array() - lse).exp();
  Eigen::VectorXd g = p;
  g(idx(t)) -= 1.0;
  g.array() *= gamma_row.array();
  return {lse - z(idx(t)), g};
}

void backward(const Network& net, const ForwardCache& cache, const Eigen::MatrixXd& d_logits, Gradients& g) {
  const std::size_t nl = net.layers.size();
  if (cache.inputs.size() != nl) throw ShapeError("forward cache does not match the network");
  g.w.resize(nl);
  g.b.resize(nl);
  g.scale.resize(net.hidden());
  g.shift.resize(net.hidden());
  Eigen::MatrixXd d = d_logits;
  for (std::size_t k = nl; k-- > 0;) {
    if (k + 1 < nl) d = hidden_backward(net, cache, k, std::move(d), g);
    g.w[k].noalias() = d * cache.inputs[k].transpose();
    g.b[k] = d.rowwise().sum();
    if (k > 0) d = net.layers[k].w.transpose() * d;
  }
}

double batch_loss(const Network& net, const Eigen::MatrixXd& x, const std::vector<std::size_t>& labels,
                  const Eigen::MatrixXd& gamma, std::mt19937_64* rng, Gradients* grads, ForwardCache* cache) {
  if (x.cols() != idx(labels.size())) throw ShapeError("batch and label counts differ");
  const auto n = idx(net.outputs());
  if (gamma.rows() != n || gamma.cols() != n) throw ShapeError("gamma matrix must be classes x classes");
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  const Eigen::MatrixXd logits = forward(net, x, Mode::Train, rng, &c);
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  Eigen::MatrixXd d(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= net.outputs()) throw DomainError("label out of range");
    auto [l, g] = loss_and_logit_grad(logits.col(idx(i)), labels[i], gamma.col(idx(labels[i])));
    loss += l * inv_b;
    d.col(idx(i)) = g * inv_b;
  }
  if (grads) backward(net, c, d, *grads);
  return loss;
}

void TrainConfig::validate(std::size_t classes) const {
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (batch_size < 2) throw DomainError("batch size must be at least 2 for batch normalization");
  if (epochs == 0) throw DomainError("epochs must be positive");
  if (!(decay_at >= 0.0 && decay_at <= 1.0) || !(decay > 0.0)) throw DomainError("bad learning-rate schedule");
  for (double p : dropout) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout rates must lie in [0, 1)");
  }
  if (!(init_scale > 0.0)) throw DomainError("init scale must be positive");
  if (gamma.size() > 0) {
    if (gamma.rows() != idx(classes) || gamma.cols() != idx(classes)) {
      throw ShapeError("gamma matrix must be classes x classes");
    }
    if (!gamma.allFinite() || (gamma.array() <= 0.0).any()) throw DomainError("gamma entries must be finite and positive");
  }
}

std::vector<double> train(Network& net, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  net.validate();
  data.validate();
  const std::size_t n_cls = net.outputs();
  cfg.validate(n_cls);
  if (data.x.rows() != idx(net.inputs())) throw ShapeError("dataset feature length differs from the network input");
  if (data.size() < 2) throw DomainError("training needs at least two samples");
  for (auto l : data.labels) {
    if (l >= n_cls) throw DomainError("label " + std::to_string(l) + " out of range");
  }
  const Eigen::MatrixXd gamma =
      cfg.gamma.size() > 0 ? cfg.gamma : Eigen::MatrixXd::Ones(idx(n_cls), idx(n_cls)).eval();

  std::mt19937_64 order_rng(derive_seed(cfg.seed, {1}));
  std::mt19937_64 drop_rng(derive_seed(cfg.seed, {2}));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto decay_epoch = static_cast<std::size_t>(std::floor(cfg.decay_at * static_cast<double>(cfg.epochs)));

  Gradients g;
  ForwardCache c;
  std::vector<double> curve;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch >= decay_epoch ? cfg.learning_rate * cfg.decay : cfg.learning_rate;
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // A trailing single sample joins the batch before it.
      if (order.size() - end == 1) end = order.size();
      const std::size_t b = end - start;
      Eigen::MatrixXd x(data.x.rows(), idx(b));
      std::vector<std::size_t> labels(b);
      for (std::size_t i = 0; i < b; ++i) {
        x.col(idx(i)) = data.x.col(idx(order[start + i]));
        labels[i] = data.labels[order[start + i]];
      }
      double loss = kInf;
      try {
        loss = batch_loss(net, x, labels, gamma, &drop_rng, &g, &c);
      } catch (const NumericError&) {
      }
      if (!std::isfinite(loss)) throw NumericError("training diverged in epoch " + std::to_string(epoch + 1));
      total += loss * static_cast<double>(b);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        net.layers[l].w.noalias() -= lr * g.w[l];
        net.layers[l].b.noalias() -= lr * g.b[l];
      }
      const double m = net.bn_momentum;
      const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
      for (std::size_t l = 0; l < net.hidden(); ++l) {
        auto& bn = net.norms[l];
        bn.scale.noalias() -= lr * g.scale[l];
        bn.shift.noalias() -= lr * g.shift[l];
        bn.running_mean = (1.0 - m) * bn.running_mean + m * c.batch_mean[l];
        bn.running_var = (1.0 - m) * bn.running_var + (m * unbias) * c.batch_var[l];
        bn.running_var = bn.running_var.cwiseMax(1e-12);
      }
      start = end;
    }
    const double mean = total / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw NumericError("training diverged in epoch " + std::to_string(epoch + 1));
    curve.push_back(mean);
    if (on_epoch && !on_epoch(epoch + 1, mean)) break;
  }
  return curve;
}

Prediction infer(const Network& net, const FeatureVector& x) {
  const Eigen::VectorXd a = forward(net, x);
  Prediction p;
  p.p = softmax(a);
  Eigen::Index k = 0;
  a.maxCoeff(&k);
  p.cls = static_cast<std::size_t>(k);
  return p;
}

std::vector<Prediction> infer(const Network& net, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd a = forward(net, x, Mode::Infer);
  std::vector<Prediction> out(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    auto& p = out[static_cast<std::size_t>(i)];
    p.p = softmax(a.col(i));
    Eigen::Index k = 0;
    a.col(i).maxCoeff(&k);
    p.cls = static_cast<std::size_t>(k);
  }
  return out;
}

Metrics evaluate(const Network& net, const Dataset& data, const DiscreteSet& d) {
  data.validate();
  if (net.outputs() != d.size()) throw ShapeError("network classes differ from the discrete set size");
  if (d.controllers.size() != d.size() || d.joint_costs.rows() != idx(d.size())) {
    throw ShapeError("discrete set lacks its controllers or joint costs");
  }
  const auto pred = infer(net, data.x);
  Metrics m;
  m.samples = data.size();
  m.min_phase_margin = kInf;
  std::map<std::pair<std::size_t, std::size_t>, double> pm;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t t = data.labels[i];
    const std::size_t c = pred[i].cls;
    hits += c == t ? 1 : 0;
    const double j = d.joint_costs(idx(c), idx(t));
    if (!std::isfinite(j)) ++m.unstable;
    sum += j;
    m.max_j = i == 0 ? j : std::max(m.max_j, j);
    auto it = pm.find({c, t});
    if (it == pm.end()) it = pm.emplace(std::make_pair(c, t), phase_margin(d.controllers[c].pid, d.processes[t])).first;
    m.min_phase_margin = std::min(m.min_phase_margin, it->second);
  }
  m.accuracy = m.samples ? static_cast<double>(hits) / static_cast<double>(m.samples) : 0.0;
  m.mean_j = m.samples ? sum / static_cast<double>(m.samples) : 0.0;
  return m;
}

Metrics evaluate_processes(const std::vector<std::size_t>& predicted, const std::vector<ProcessParams>& truths,
                           const DiscreteSet& d, std::size_t jobs) {
  if (predicted.size() != truths.size()) throw ShapeError("prediction and process counts differ");
  for (const auto& p : truths) {
    if (p.k_eq != 1.0) throw DomainError("processes are compared at unit gain");
  }
  for (auto c : predicted) {
    if (c >= d.controllers.size()) throw DomainError("predicted class out of range");
  }
  std::vector<double> j(truths.size()), margin(truths.size());
  parallel_for(truths.size(), jobs, [&](std::size_t i) {
    const auto own = optimize_controller(truths[i], d.design);
    const auto& applied = d.controllers[predicted[i]].pid;
    j[i] = joint_cost(applied, own.pid, truths[i], d.design.scen);
    margin[i] = phase_margin(applied, truths[i]);
  });
  Metrics m;
  m.samples = truths.size();
  m.min_phase_margin = kInf;
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!std::isfinite(j[i])) ++m.unstable;
    sum += j[i];
    m.max_j = i == 0 ? j[i] : std::max(m.max_j, j[i]);
    m.min_phase_margin = std::min(m.min_phase_margin, margin[i]);
  }
  m.mean_j = m.samples ? sum / static_cast<double>(m.samples) : 0.0;
  // Off-set processes have no class to hit.
  m.accuracy = 0.0;
  return m;
}

void save_network(const Network& net, const std::filesystem::path& path, const std::string& extra_json) {
  net.validate();
  json header{{"format", "mrftid-network"},
              {"version", kFormatVersion},
              {"dims", net.dims},
              {"dropout", net.dropout},
              {"bn_eps", net.bn_eps},
              {"bn_momentum", net.bn_momentum},
              {"parameters", net.parameter_count()}};
  try {
    const auto extra = json::parse(extra_json);
    for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
  } catch (const json::exception& e) {
    throw ParseError(std::string("network header fields: ") + e.what());
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : net.layers) {
    write_block(out, a.w);
    write_block(out, a.b);
  }
  for (const auto& b : net.norms) {
    write_block(out, b.scale);
    write_block(out, b.shift);
    write_block(out, b.running_mean);
    write_block(out, b.running_var);
  }
  if (!out) throw ResourceError("write failed for " + path.string());
}

Network load_network(const std::filesystem::path& path, std::string* header_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResourceError("cannot read " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(path.string() + ": not a network file");
  if (read_pod<std::uint32_t>(in, path) != kFormatVersion) throw ParseError(path.string() + ": unsupported version");
  const auto len = read_pod<std::uint64_t>(in, path);
  if (len > (1u << 24)) throw ParseError(path.string() + ": header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(path.string() + ": truncated");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Network net;
  try {
    net.dims = header.at("dims").get<std::vector<std::size_t>>();
    net.dropout = header.at("dropout").get<std::vector<double>>();
    net.bn_eps = header.at("bn_eps").get<double>();
    net.bn_momentum = header.at("bn_momentum").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (net.dims.size() < 2) throw ParseError(path.string() + ": bad dims");
  for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
    Affine a{Eigen::MatrixXd(idx(net.dims[l + 1]), idx(net.dims[l])), Eigen::VectorXd(idx(net.dims[l + 1]))};
    read_block(in, a.w, path);
    read_block(in, a.b, path);
    net.layers.push_back(std::move(a));
  }
  for (std::size_t l = 0; l + 2 < net.dims.size(); ++l) {
    const auto n = idx(net.dims[l + 1]);
    BatchNorm b{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
    read_block(in, b.scale, path);
    read_block(in, b.shift, path);
    read_block(in, b.running_mean, path);
    read_block(in, b.running_var, path);
    net.norms.push_back(std::move(b));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing data");
  net.validate();
  if (header_json) *header_json = text;
  return net;
}

void write_loss_csv(const std::vector<double>& loss, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) out << i + 1 << ',' << format_double(loss[i]) << '\n';
}

}  // namespace mrftid
