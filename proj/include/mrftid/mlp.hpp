#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mrftid/dataset.hpp"
#include "mrftid/discretizer.hpp"

namespace mrftid {

enum class Mode { Train, Infer };

struct Affine {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

struct BatchNorm {
  Eigen::VectorXd scale;
  Eigen::VectorXd shift;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
};

// Fully connected classifier. Each hidden layer is
// affine -> ReLU -> batch norm -> dropout; the last layer is affine only.
struct Network {
  std::vector<std::size_t> dims;  // input, hidden..., classes
  std::vector<Affine> layers;     // dims.size() - 1
  std::vector<BatchNorm> norms;   // one per hidden layer
  std::vector<double> dropout;    // one per hidden layer
  double bn_eps = 1e-8;
  double bn_momentum = 0.1;

  std::size_t inputs() const { return dims.front(); }
  std::size_t outputs() const { return dims.back(); }
  std::size_t hidden() const { return dims.size() - 2; }
  std::size_t parameter_count() const;
  void validate() const;
};

// He-style normal init with standard deviation init_scale * sqrt(2 / fan_in),
// zero biases, unit scale and zero shift, running stats (0, 1).
Network make_network(const std::vector<std::size_t>& dims, const std::vector<double>& dropout, std::uint64_t seed,
                     double init_scale = 1.0);

// Default shape: kFeatureLength -> 3000 -> 1000 -> classes.
std::vector<std::size_t> default_dims(std::size_t classes);

// Intermediate values of a batch forward pass, needed by backward().
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each affine layer
  std::vector<Eigen::MatrixXd> pre;     // affine outputs of hidden layers
  std::vector<Eigen::MatrixXd> xhat;    // normalized ReLU outputs
  std::vector<Eigen::VectorXd> inv_std;
  std::vector<Eigen::VectorXd> batch_mean;
  std::vector<Eigen::VectorXd> batch_var;
  std::vector<Eigen::MatrixXd> mask;  // inverted-dropout multipliers, empty when unused
};

// Logits for the columns of x. Train mode normalizes with batch statistics
// and draws dropout masks from rng (no dropout when rng is null); Infer mode
// uses running statistics and no dropout. Running statistics are not touched.
Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& x, Mode mode, std::mt19937_64* rng = nullptr,
                        ForwardCache* cache = nullptr);
Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x);

// p_i = exp(g_i a_i) / sum_j exp(g_j a_j), where g is the gamma row of the
// true class. Throws NumericError on non-finite logits.
Eigen::VectorXd modified_softmax(const Eigen::VectorXd& a, const Eigen::VectorXd& gamma_row);
Eigen::VectorXd softmax(const Eigen::VectorXd& a);

// L = -log p_t and dL/da_k = g_k (p_k - y_k).
//
// With z_k = g_k a_k, L = -z_t + log sum_j exp z_j, so dL/dz_k = p_k - y_k
// and the chain rule through z_k = g_k a_k multiplies by g_k.
std::pair<double, Eigen::VectorXd> loss_and_logit_grad(const Eigen::VectorXd& a, std::size_t t,
                                                       const Eigen::VectorXd& gamma_row);

struct Gradients {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  std::vector<Eigen::VectorXd> scale;
  std::vector<Eigen::VectorXd> shift;
};

// Parameter gradients from logit gradients (one column per sample). Reuses
// the storage already held by g.
void backward(const Network& net, const ForwardCache& cache, const Eigen::MatrixXd& d_logits, Gradients& g);

// Mean modified-softmax loss of a batch under Train mode; fills grads when
// non-null. gamma is N x N with gamma(i, t) the weight of logit i for true class t.
double batch_loss(const Network& net, const Eigen::MatrixXd& x, const std::vector<std::size_t>& labels,
                  const Eigen::MatrixXd& gamma, std::mt19937_64* rng, Gradients* grads = nullptr,
                  ForwardCache* cache = nullptr);

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 60;
  double decay_at = 2.0 / 3.0;  // fraction of epochs after which the rate is scaled
  double decay = 0.1;
  std::vector<double> dropout = {0.5, 0.5};
  double init_scale = 1.0;
  std::uint64_t seed = 1;
  Eigen::MatrixXd gamma;  // empty means all ones

  void validate(std::size_t classes) const;
};

// Called after each epoch with (epoch, mean loss); returning false stops training.
using EpochCallback = std::function<bool(std::size_t epoch, double loss)>;

// Mini-batch SGD over shuffled batches. Returns the mean loss per epoch.
// Throws NumericError naming the epoch when the loss stops being finite.
std::vector<double> train(Network& net, const Dataset& data, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

struct Prediction {
  std::size_t cls = 0;
  Eigen::VectorXd p;
};

// Infer-mode forward and standard softmax.
Prediction infer(const Network& net, const FeatureVector& x);
std::vector<Prediction> infer(const Network& net, const Eigen::MatrixXd& x);

struct Metrics {
  std::size_t samples = 0;
  double accuracy = 0.0;
  double mean_j = 0.0;  // fractions; inf if any prediction is unstable
  double max_j = 0.0;
  std::size_t unstable = 0;
  double min_phase_margin = 0.0;  // radians
};

// Predicted class controller applied to the true class, J from d.joint_costs(pred, truth).
Metrics evaluate(const Network& net, const Dataset& data, const DiscreteSet& d);

// Same metrics against processes outside the discrete set, each compared
// with its own optimal controller.
Metrics evaluate_processes(const std::vector<std::size_t>& predicted, const std::vector<ProcessParams>& truths,
                           const DiscreteSet& d, std::size_t jobs = 1);

// Binary "MRFTWNET", u32 version, u64 header length, JSON header (dims,
// dropout, bn settings, gamma hash, seed, epochs), then every parameter as
// f64 in layer order.
void save_network(const Network& net, const std::filesystem::path& path, const std::string& extra_json = "{}");
Network load_network(const std::filesystem::path& path, std::string* header_json = nullptr);

void write_loss_csv(const std::vector<double>& loss, const std::filesystem::path& path);

}  // namespace mrftid
