#include "bddm/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "bddm/error.hpp"
#include "bddm/io.hpp"
#include "bddm/rng.hpp"

namespace bddm {

namespace {

constexpr const char* kBundleFormat = "bddm-densenet";
constexpr int kBundleVersion = 1;

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const auto& l : layers)
    out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return out;
}

Matrix normalized_input(const DenseNet& net, const Matrix& y, const Vector* log_sigma) {
  if (y.rows() != net.data_dim())
    throw ConfigError("network expects inputs of dimension " + std::to_string(net.data_dim()) +
                      ", got " + std::to_string(y.rows()));
  if (!y.allFinite()) throw DomainError("network input has non-finite coordinates");
  if (net.conditioned() != (log_sigma != nullptr))
    throw UnsupportedOperation(net.conditioned() ? "conditioned network needs a noise level"
                                                 : "blind network does not take a noise level");
  const InputStats& st = net.stats();
  Matrix u(net.input_dim(), y.cols());
  u.topRows(net.data_dim()) =
      ((y.colwise() - st.mean).array().colwise() / st.scale.array()).matrix();
  if (log_sigma) {
    if (log_sigma->size() != y.cols()) throw ConfigError("one noise level per column required");
    if (!log_sigma->allFinite()) throw DomainError("non-finite noise level");
    u.row(net.data_dim()) = log_sigma->transpose();
  }
  return u;
}

// Activations of every layer: acts[0] is the normalized input, acts.back() the raw output.
std::vector<Matrix> forward_all(const DenseNet& net, const Matrix& y, const Vector* log_sigma) {
  const auto& layers = net.layers();
  std::vector<Matrix> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(normalized_input(net, y, log_sigma));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = layers[l].weight * acts.back();
    z.colwise() += layers[l].bias;
    if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  return acts;
}

Matrix denormalize(const DenseNet& net, const Matrix& raw) {
  return (raw.array().colwise() * net.stats().scale.array()).matrix().colwise() + net.stats().mean;
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(int data_dim, const std::vector<int>& hidden, bool conditioned,
                   std::uint64_t seed)
    : data_dim_(data_dim), conditioned_(conditioned), seed_(seed) {
  if (data_dim < 1) throw ConfigError("network data dimension must be >= 1");
  std::vector<int> dims{input_dim()};
  for (int w : hidden) {
    if (w < 1) throw ConfigError("hidden widths must be >= 1");
    dims.push_back(w);
  }
  dims.push_back(data_dim);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    DenseLayer layer{Matrix(dims[l + 1], dims[l]), Vector(dims[l + 1])};
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        layer.weight(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
      layer.bias[i] = bound * (2.0 * rng.uniform() - 1.0);
    layers_.push_back(std::move(layer));
  }
  stats_.mean = Vector::Zero(data_dim);
  stats_.scale = Vector::Ones(data_dim);
}

std::vector<int> DenseNet::layer_dims() const {
  std::vector<int> dims;
  if (layers_.empty()) return dims;
  dims.push_back(static_cast<int>(layers_.front().weight.cols()));
  for (const auto& l : layers_) dims.push_back(static_cast<int>(l.weight.rows()));
  return dims;
}

long DenseNet::parameter_count() const {
  long n = 0;
  for (const auto& l : layers_) n += static_cast<long>(l.weight.size() + l.bias.size());
  return n;
}

Matrix DenseNet::forward(const Matrix& y, const Vector* log_sigma) const {
  return denormalize(*this, forward_all(*this, y, log_sigma).back());
}

Vector DenseNet::forward(const Vector& y) const {
  return forward(Matrix(y), nullptr).col(0);
}

Vector DenseNet::forward(const Vector& y, double sigma) const {
  if (!(sigma > 0.0)) throw DomainError("noise level must be positive");
  const Vector ls = Vector::Constant(1, std::log(sigma));
  return forward(Matrix(y), &ls).col(0);
}

void DenseNet::fit_stats(const Matrix& data) {
  if (data.rows() != data_dim_ || data.cols() < 2) throw ConfigError("need >= 2 data columns of width d");
  stats_.mean = data.rowwise().mean();
  const Vector var = (data.colwise() - stats_.mean).rowwise().squaredNorm() / (data.cols() - 1.0);
  // Subspace-supported data has near-zero spread in most coordinates; dividing
  // by that spread would blow the noise up, so every coordinate gets at least
  // the root-mean-square spread.
  const double rms = std::sqrt(var.mean());
  const double floor = rms > 1e-12 ? rms : 1.0;
  stats_.scale = var.cwiseSqrt().cwiseMax(floor);
}

// ---------------------------------------------------------------------------
// Loss and gradient

double batch_loss(const DenseNet& net, const Matrix& noisy, const Matrix& clean,
                  const Vector* log_sigma) {
  const Matrix out = net.forward(noisy, log_sigma);
  return (out - clean).squaredNorm() / static_cast<double>(noisy.cols());
}

double loss_and_gradient(const DenseNet& net, const Matrix& noisy, const Matrix& clean,
                         const Vector* log_sigma, std::vector<DenseLayer>& gradient) {
  if (clean.rows() != noisy.rows() || clean.cols() != noisy.cols())
    throw ConfigError("clean and noisy batches differ in shape");
  const auto& layers = net.layers();
  const std::vector<Matrix> acts = forward_all(net, noisy, log_sigma);
  const double batch = static_cast<double>(noisy.cols());
  const Matrix diff = denormalize(net, acts.back()) - clean;
  const double loss = diff.squaredNorm() / batch;

  if (gradient.size() != layers.size()) gradient = zeros_like(layers);
  Matrix delta = (2.0 / batch) * (diff.array().colwise() * net.stats().scale.array()).matrix();
  for (std::size_t l = layers.size(); l-- > 0;) {
    gradient[l].weight.noalias() = delta * acts[l].transpose();
    gradient[l].bias = delta.rowwise().sum();
    if (l == 0) break;
    Matrix back = layers[l].weight.transpose() * delta;
    delta = (acts[l].array() > 0.0).select(back, 0.0);
  }
  return loss;
}

void adamw_step(DenseNet& net, const std::vector<DenseLayer>& gradient, const AdamConfig& config) {
  auto& layers = net.layers();
  AdamState& st = net.optimizer();
  if (st.first.size() != layers.size()) {
    st.first = zeros_like(layers);
    st.second = zeros_like(layers);
    st.step = 0;
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double step = config.learning_rate / bc1;
  const double root_bc2 = std::sqrt(bc2);
  const double shrink = 1.0 - config.learning_rate * config.weight_decay;

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    p *= shrink;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v.array() + (1.0 - config.beta2) * g.array().square();
    p.array() -= step * m.array() / (v.array().sqrt() / root_bc2 + config.epsilon);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, gradient[l].weight, st.first[l].weight, st.second[l].weight);
    update(layers[l].bias, gradient[l].bias, st.first[l].bias, st.second[l].bias);
  }
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n_steps < 0) throw ConfigError("n_steps must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (history_every < 1) throw ConfigError("history_every must be >= 1");
  if (eval_batch < 1 || stats_samples < 2) throw ConfigError("eval/stats batch sizes too small");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"n_steps", n_steps},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"prior", {{"alpha", prior.alpha()}, {"sigma_min", prior.sigma_min()}, {"sigma_max", prior.sigma_max()}}},
          {"seed", seed},
          {"history_every", history_every},
          {"eval_batch", eval_batch},
          {"stats_samples", stats_samples}};
}

namespace {

struct NoisyBatch {
  Matrix clean;
  Matrix noisy;
  Vector log_sigma;
};

NoisyBatch draw_batch(const GaussianMixture& model, const NoisePrior& prior, int n,
                      std::uint64_t key) {
  Rng rng(key);
  NoisyBatch b;
  b.clean = sample(model, n, rng.next());
  b.log_sigma.resize(n);
  Vector sigma(n);
  for (int j = 0; j < n; ++j) {
    sigma[j] = prior.sample(rng);
    b.log_sigma[j] = std::log(sigma[j]);
  }
  b.noisy = b.clean + rng.normal_matrix(model.ambient_dim(), n) * sigma.asDiagonal();
  return b;
}

}  // namespace

std::vector<HistoryPoint> train_blind(const GaussianMixture& model, DenseNet& net,
                                      const TrainConfig& config) {
  config.validate();
  if (net.data_dim() != model.ambient_dim())
    throw ConfigError("network width does not match the model dimension");
  const std::uint64_t seed = config.seed;
  if (net.optimizer().step == 0 && !net.metadata().contains("stats_fitted")) {
    net.fit_stats(sample(model, config.stats_samples, derive_seed(seed, streams::kData, 0)));
    net.metadata()["stats_fitted"] = true;
  }
  const NoisyBatch eval = draw_batch(model, config.prior, config.eval_batch,
                                     derive_seed(seed, streams::kData, 1));
  const Vector* eval_sigma = net.conditioned() ? &eval.log_sigma : nullptr;

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.weight_decay = config.weight_decay;

  std::vector<HistoryPoint> history;
  std::vector<DenseLayer> gradient;
  double window = 0.0;
  int window_count = 0;
  for (long step = net.optimizer().step; step < config.n_steps; ++step) {
    const NoisyBatch b = draw_batch(model, config.prior, config.batch_size,
                                    derive_seed(seed, streams::kBatch, static_cast<std::uint64_t>(step)));
    const double loss = loss_and_gradient(net, b.noisy, b.clean,
                                          net.conditioned() ? &b.log_sigma : nullptr, gradient);
    if (!std::isfinite(loss))
      throw NumericalFailure("training diverged at step " + std::to_string(step) +
                             " (loss " + format_number(loss) + ")");
    adamw_step(net, gradient, adam);
    window += loss;
    ++window_count;
    const long done = step + 1;
    if (done % config.history_every == 0 || done == config.n_steps) {
      HistoryPoint p;
      p.step = done;
      p.train_loss = window / window_count;
      p.eval_loss = batch_loss(net, eval.noisy, eval.clean, eval_sigma);
      if (!std::isfinite(p.eval_loss))
        throw NumericalFailure("evaluation loss is non-finite at step " + std::to_string(done));
      history.push_back(p);
      window = 0.0;
      window_count = 0;
    }
  }
  net.metadata()["train"] = config.to_json();
  return history;
}

void write_history_csv(const std::vector<HistoryPoint>& history, const std::string& path) {
  CsvWriter csv(path, {"step", "train_loss", "eval_loss"});
  for (const auto& p : history) csv.row({static_cast<double>(p.step), p.train_loss, p.eval_loss});
}

// ---------------------------------------------------------------------------
// Bundle

namespace {

template <typename Layers, typename F>
void for_each_block(Layers& layers, F&& f) {
  for (auto& l : layers) {
    f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
}

}  // namespace

void save_network(const DenseNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write network bundle " + path);
  const bool has_opt = net.optimizer().first.size() == net.layers().size() && !net.layers().empty();
  nlohmann::json header{{"format", kBundleFormat},
                        {"version", kBundleVersion},
                        {"data_dim", net.data_dim()},
                        {"conditioned", net.conditioned()},
                        {"seed", net.seed()},
                        {"layer_dims", net.layer_dims()},
                        {"optimizer_step", has_opt ? net.optimizer().step : 0},
                        {"has_optimizer", has_opt},
                        {"byte_order", "little"},
                        {"blob", "stats.mean, stats.scale, then per layer weight (column-major) and "
                                 "bias; then optimizer first and second moments in the same order"},
                        {"metadata", net.metadata()}};
  out << header.dump() << '\n';
  auto put = [&](const double* p, std::size_t n) { write_le_doubles(out, p, n); };
  put(net.stats().mean.data(), static_cast<std::size_t>(net.stats().mean.size()));
  put(net.stats().scale.data(), static_cast<std::size_t>(net.stats().scale.size()));
  for_each_block(net.layers(), put);
  if (has_opt) {
    for_each_block(net.optimizer().first, put);
    for_each_block(net.optimizer().second, put);
  }
  if (!out) throw ConfigError("failed writing network bundle " + path);
}

DenseNet load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open network bundle " + path);
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad network bundle header in " + path + ": " + e.what());
  }
  if (header.value("format", "") != kBundleFormat) throw ConfigError(path + " is not a network bundle");
  const auto dims = header.at("layer_dims").get<std::vector<int>>();
  const int d = header.at("data_dim").get<int>();
  const bool conditioned = header.at("conditioned").get<bool>();
  if (dims.size() < 2 || dims.back() != d || dims.front() != d + (conditioned ? 1 : 0))
    throw ConfigError("inconsistent layer dimensions in " + path);
  std::vector<int> hidden(dims.begin() + 1, dims.end() - 1);
  DenseNet net(d, hidden, conditioned, header.at("seed").get<std::uint64_t>());
  auto get = [&](double* p, std::size_t n) { read_le_doubles(in, p, n); };
  get(net.stats().mean.data(), static_cast<std::size_t>(d));
  get(net.stats().scale.data(), static_cast<std::size_t>(d));
  for_each_block(net.layers(), get);
  if (header.at("has_optimizer").get<bool>()) {
    net.optimizer().first = zeros_like(net.layers());
    net.optimizer().second = zeros_like(net.layers());
    for_each_block(net.optimizer().first, get);
    for_each_block(net.optimizer().second, get);
    net.optimizer().step = header.at("optimizer_step").get<long>();
  }
  net.metadata() = header.value("metadata", nlohmann::json::object());
  return net;
}

}  // namespace bddm
