#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bddm/mixture.hpp"
#include "bddm/noise_posterior.hpp"

namespace bddm {

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Adaptive-moment accumulators, one pair per layer.
struct AdamState {
  std::vector<DenseLayer> first;
  std::vector<DenseLayer> second;
  long step = 0;
};

/// Per-coordinate affine normalization: u = (y - mean) / scale on the way in,
/// x = mean + scale * o on the way out.
struct InputStats {
  Vector mean;
  Vector scale;
};

/// Feedforward denoiser: rectifier hidden layers, identity output layer.
/// A conditioned net receives log(sigma) as one extra input coordinate.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(int data_dim, const std::vector<int>& hidden, bool conditioned, std::uint64_t seed);

  int data_dim() const { return data_dim_; }
  int input_dim() const { return data_dim_ + (conditioned_ ? 1 : 0); }
  bool conditioned() const { return conditioned_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<int> layer_dims() const;
  long parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  InputStats& stats() { return stats_; }
  const InputStats& stats() const { return stats_; }
  AdamState& optimizer() { return optimizer_; }
  const AdamState& optimizer() const { return optimizer_; }
  /// Free-form record of how the net was built and trained.
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  /// Denoised batch (d x B). `log_sigma` (length B) is required iff conditioned.
  Matrix forward(const Matrix& y, const Vector* log_sigma = nullptr) const;
  Vector forward(const Vector& y) const;
  Vector forward(const Vector& y, double sigma) const;

  /// Stores the mean of the data and a scale shared enough to keep every
  /// coordinate well conditioned (see implementation).
  void fit_stats(const Matrix& data);

 private:
  int data_dim_ = 0;
  bool conditioned_ = false;
  std::uint64_t seed_ = 0;
  std::vector<DenseLayer> layers_;
  InputStats stats_;
  AdamState optimizer_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// Mean squared error B^-1 sum ||x_b - f(y_b)||^2 and its parameter gradient.
double loss_and_gradient(const DenseNet& net, const Matrix& noisy, const Matrix& clean,
                         const Vector* log_sigma, std::vector<DenseLayer>& gradient);
double batch_loss(const DenseNet& net, const Matrix& noisy, const Matrix& clean,
                  const Vector* log_sigma);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

/// One update with bias-corrected moments and decoupled weight decay.
void adamw_step(DenseNet& net, const std::vector<DenseLayer>& gradient, const AdamConfig& config);

struct TrainConfig {
  int batch_size = 512;
  /// Target optimizer step count; training resumes from net.optimizer().step.
  long n_steps = 50000;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  NoisePrior prior = NoisePrior::log_uniform(0.01, 10.0);
  std::uint64_t seed = 0;
  int history_every = 100;
  int eval_batch = 1024;
  int stats_samples = 20000;

  void validate() const;
  nlohmann::json to_json() const;
};

struct HistoryPoint {
  long step = 0;
  double train_loss = 0.0;  // mean minibatch loss since the previous record
  double eval_loss = 0.0;   // loss on a fixed held-out batch
};

/// Trains on x ~ model, sigma ~ prior, y = x + sigma z (clean-sample target).
/// Blind nets never see sigma; conditioned nets receive the true sigma.
std::vector<HistoryPoint> train_blind(const GaussianMixture& model, DenseNet& net,
                                      const TrainConfig& config);

void write_history_csv(const std::vector<HistoryPoint>& history, const std::string& path);

/// Single file: one JSON header line, then a little-endian double blob.
void save_network(const DenseNet& net, const std::string& path);
DenseNet load_network(const std::string& path);

}  // namespace bddm
