#include "bddm/mixture.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "bddm/error.hpp"
#include "bddm/rng.hpp"

namespace bddm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw DomainError("noise level must be positive and finite, got " + std::to_string(sigma));
}

void require_observation(const GaussianMixture& model, const Vector& y) {
  if (y.size() != model.ambient_dim())
    throw ConfigError("observation has dimension " + std::to_string(y.size()) + ", model has " +
                      std::to_string(model.ambient_dim()));
  if (!y.allFinite()) throw DomainError("observation has non-finite coordinates");
}

double residual_tolerance(double scale) { return 1e-10 * std::max(1.0, scale); }

}  // namespace

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

// ---------------------------------------------------------------------------
// SubspaceEmbedding

SubspaceEmbedding SubspaceEmbedding::identity(int d) {
  return {Matrix::Identity(d, d), Vector::Zero(d)};
}

SubspaceEmbedding SubspaceEmbedding::zero_padding(int k, int d) {
  if (k > d) throw ConfigError("zero padding needs k <= d");
  return {Matrix::Identity(d, k), Vector::Zero(d)};
}

SubspaceEmbedding SubspaceEmbedding::random(int k, int d, std::uint64_t seed) {
  if (k > d || k < 1) throw ConfigError("random embedding needs 1 <= k <= d");
  Rng rng(seed);
  Matrix g = rng.normal_matrix(d, k);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, k);
  // Fix column signs so the basis is a deterministic function of g.
  Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (int j = 0; j < k; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return {q, Vector::Zero(d)};
}

Vector SubspaceEmbedding::coordinates(const Vector& x) const {
  return basis.transpose() * (x - offset);
}

Matrix SubspaceEmbedding::coordinates(const Matrix& xs) const {
  return basis.transpose() * (xs.colwise() - offset);
}

Vector SubspaceEmbedding::project(const Vector& x) const {
  return offset + basis * coordinates(x);
}

void SubspaceEmbedding::validate() const {
  if (offset.size() != basis.rows()) throw ConfigError("embedding offset has wrong dimension");
  const Matrix gram = basis.transpose() * basis;
  const double err = (gram - Matrix::Identity(basis.cols(), basis.cols())).cwiseAbs().maxCoeff();
  if (basis.cols() > 0 && err > 1e-10)
    throw ConfigError("embedding basis is not orthonormal (error " + std::to_string(err) + ")");
}

// ---------------------------------------------------------------------------
// GaussianMixture

GaussianMixture::GaussianMixture(Vector weights, Matrix means, Matrix factor,
                                 SubspaceEmbedding support)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      factor_(std::move(factor)),
      support_(std::move(support)) {
  const int d = static_cast<int>(means_.rows());
  if (weights_.size() < 1 || weights_.size() != means_.cols())
    throw ConfigError("mixture needs one weight per mean column");
  if ((weights_.array() < 0.0).any()) throw ConfigError("mixture weights must be nonnegative");
  if (std::abs(weights_.sum() - 1.0) > 1e-12)
    throw ConfigError("mixture weights must sum to 1");
  if (factor_.rows() != d || support_.ambient_dim() != d)
    throw ConfigError("mixture factor/support dimension mismatch");
  if (!means_.allFinite() || !factor_.allFinite())
    throw ConfigError("mixture parameters must be finite");
  support_.validate();

  // Means and covariance range must sit in the support subspace.
  const Matrix& b = support_.basis;
  for (int i = 0; i < means_.cols(); ++i) {
    const Vector centered = means_.col(i) - support_.offset;
    const double resid = (centered - b * (b.transpose() * centered)).norm();
    if (resid > residual_tolerance(centered.norm()))
      throw ConfigError("mixture mean " + std::to_string(i) + " is off the support subspace");
  }
  const Matrix off = factor_ - b * (b.transpose() * factor_);
  if (factor_.size() > 0 && off.norm() > residual_tolerance(factor_.norm()))
    throw ConfigError("covariance range is off the support subspace");

  log_weights_ = weights_.array().log();
  gram_ = factor_.transpose() * factor_;
}

GaussianMixture GaussianMixture::from_covariance(Vector weights, Matrix means, const Matrix& cov) {
  const int k = static_cast<int>(means.rows());
  if (cov.rows() != k || cov.cols() != k) throw ConfigError("covariance must be k x k");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.eigenvalues().minCoeff() < -1e-10) throw ConfigError("covariance must be PSD");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Matrix factor = eig.eigenvectors() * root.asDiagonal();
  return GaussianMixture(std::move(weights), std::move(means), std::move(factor),
                         SubspaceEmbedding::identity(k));
}

GaussianMixture GaussianMixture::random_in_coordinates(int components, int k, double mean_scale,
                                                       double cov_scale, std::uint64_t seed) {
  if (components < 1 || k < 1) throw ConfigError("need at least one component and k >= 1");
  Rng rng(seed);
  Matrix means = mean_scale * rng.normal_matrix(k, components);
  // Wishart-like draw, shrunk toward the identity to keep it well conditioned.
  const Matrix g = rng.normal_matrix(k, k);
  Matrix cov = cov_scale * (0.5 * g * g.transpose() / k + 0.5 * Matrix::Identity(k, k));
  cov = 0.5 * (cov + cov.transpose());
  Vector weights = Vector::Constant(components, 1.0 / components);
  return from_covariance(std::move(weights), std::move(means), cov);
}

double GaussianMixture::second_moment() const {
  double total = gram_.trace();
  for (int i = 0; i < components(); ++i) total += weights_[i] * means_.col(i).squaredNorm();
  return total;
}

GaussianMixture embed_mixture(const GaussianMixture& low, const SubspaceEmbedding& embedding) {
  embedding.validate();
  if (low.ambient_dim() != embedding.intrinsic_dim())
    throw ConfigError("cannot embed a mixture in R^" + std::to_string(low.ambient_dim()) +
                      " with a " + std::to_string(embedding.intrinsic_dim()) + "-column basis");
  const Matrix& b = embedding.basis;
  Matrix means = (b * low.means()).colwise() + embedding.offset;
  Matrix factor = b * low.factor();
  SubspaceEmbedding support{b * low.support().basis, b * low.support().offset + embedding.offset};
  return GaussianMixture(low.weights(), std::move(means), std::move(factor), std::move(support));
}

// ---------------------------------------------------------------------------
// Noisy densities

ObservationStats observe(const GaussianMixture& model, const Vector& y) {
  require_observation(model, y);
  const Matrix residuals = (-model.means()).colwise() + y;
  ObservationStats stats;
  stats.residual_sq = residuals.colwise().squaredNorm().transpose();
  stats.projected = model.factor().transpose() * residuals;
  return stats;
}

NoiseLevelTerms evaluate_noise_level(const GaussianMixture& model, const ObservationStats& stats,
                                     double sigma) {
  require_sigma(sigma);
  const int d = model.ambient_dim();
  const int r = model.factor_rank();
  const double var = sigma * sigma;

  NoiseLevelTerms terms;
  terms.sigma = sigma;
  Matrix capacitance = model.gram();
  capacitance.diagonal().array() += var;
  terms.capacitance.compute(capacitance);
  if (terms.capacitance.info() != Eigen::Success)
    throw NumericalFailure("capacitance matrix is not positive definite");
  terms.gains = terms.capacitance.solve(stats.projected);

  // log det(S0 + s^2 I) = (d - r) log s^2 + log det(s^2 I_r + F^T F)
  const auto& lower = terms.capacitance.matrixL();
  double log_det = (d - r) * std::log(var);
  for (int j = 0; j < r; ++j) log_det += 2.0 * std::log(lower(j, j));

  const int K = model.components();
  Vector log_joint(K);
  for (int i = 0; i < K; ++i) {
    const double quad =
        (stats.residual_sq[i] - stats.projected.col(i).dot(terms.gains.col(i))) / var;
    log_joint[i] = model.log_weights()[i] - 0.5 * (d * kLog2Pi + log_det + quad);
  }
  terms.log_density = log_sum_exp(log_joint);
  terms.responsibilities = (log_joint.array() - terms.log_density).exp();
  return terms;
}

Vector posterior_mean(const GaussianMixture& model, const NoiseLevelTerms& terms) {
  return model.means() * terms.responsibilities +
         model.factor() * (terms.gains * terms.responsibilities);
}

double noisy_log_density(const GaussianMixture& model, const Vector& y, double sigma) {
  require_sigma(sigma);
  return evaluate_noise_level(model, observe(model, y), sigma).log_density;
}

Vector noisy_score(const GaussianMixture& model, const Vector& y, double sigma) {
  require_sigma(sigma);
  return noisy_score(model, y, evaluate_noise_level(model, observe(model, y), sigma));
}

Vector noisy_score(const GaussianMixture& model, const Vector& y, const NoiseLevelTerms& terms) {
  const double sigma = terms.sigma;
  // (S0 + s^2 I)^{-1} v = (v - F M^{-1} F^T v) / s^2 applied to v = sum_i w_i (y - m_i)
  const Vector weighted_residual = y - model.means() * terms.responsibilities;
  const Vector projected = model.factor().transpose() * weighted_residual;
  const Vector solved = model.factor() * terms.capacitance.solve(projected);
  return -(weighted_residual - solved) / (sigma * sigma);
}

GaussianMixture posterior_mixture(const GaussianMixture& model, const Vector& y, double sigma) {
  require_sigma(sigma);
  const NoiseLevelTerms terms = evaluate_noise_level(model, observe(model, y), sigma);
  Matrix means = model.means() + model.factor() * terms.gains;
  // Posterior covariance F (s^2 M^{-1}) F^T; with M = L L^T a factor is s F L^{-T}.
  const int r = model.factor_rank();
  Matrix inv_upper = terms.capacitance.matrixU().solve(Matrix::Identity(r, r));
  Matrix factor = sigma * model.factor() * inv_upper;
  Vector weights = terms.responsibilities / terms.responsibilities.sum();
  return GaussianMixture(std::move(weights), std::move(means), std::move(factor), model.support());
}

Matrix sample(const GaussianMixture& model, int n, std::uint64_t rng_seed) {
  return sample(model, n, rng_seed, nullptr);
}

Matrix sample(const GaussianMixture& model, int n, std::uint64_t rng_seed,
              std::vector<int>* labels) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  Rng rng(rng_seed);
  std::vector<double> w(model.weights().data(), model.weights().data() + model.components());
  std::discrete_distribution<int> pick(w.begin(), w.end());
  const int r = model.factor_rank();
  Matrix out(model.ambient_dim(), n);
  if (labels) labels->resize(n);
  for (int j = 0; j < n; ++j) {
    const int c = pick(rng.engine());
    if (labels) (*labels)[j] = c;
    const Vector z = rng.normal_vector(r);
    out.col(j) = model.means().col(c) + model.factor() * z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json rows_of(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_rows(const nlohmann::json& rows, Eigen::Index expected_cols) {
  if (!rows.is_array()) throw ConfigError("expected an array of rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), expected_cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_array() || static_cast<Eigen::Index>(rows[i].size()) != expected_cols)
      throw ConfigError("ragged matrix in model file");
    for (Eigen::Index j = 0; j < expected_cols; ++j)
      m(static_cast<Eigen::Index>(i), j) = rows[i][j].get<double>();
  }
  return m;
}

Vector vector_from(const nlohmann::json& arr) {
  if (!arr.is_array()) throw ConfigError("expected an array");
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json to_json(const GaussianMixture& model) {
  nlohmann::json j;
  j["k"] = model.intrinsic_dim();
  j["d"] = model.ambient_dim();
  j["weights"] = std::vector<double>(model.weights().data(),
                                     model.weights().data() + model.weights().size());
  j["means"] = rows_of(model.means().transpose());
  j["base_cov_factor"] = rows_of(model.factor());
  j["offset"] = std::vector<double>(model.support().offset.data(),
                                    model.support().offset.data() + model.ambient_dim());
  j["basis"] = rows_of(model.support().basis);
  return j;
}

GaussianMixture mixture_from_json(const nlohmann::json& j) {
  try {
    const int d = j.at("d").get<int>();
    const int k = j.at("k").get<int>();
    if (d < 1 || k < 1 || k > d) throw ConfigError("model needs 1 <= k <= d");
    Vector weights = vector_from(j.at("weights"));
    const auto& mean_rows = j.at("means");
    Matrix means = matrix_from_rows(mean_rows, d).transpose();
    const auto& factor_rows = j.at("base_cov_factor");
    if (static_cast<int>(factor_rows.size()) != d) throw ConfigError("factor must have d rows");
    const Eigen::Index r = factor_rows.empty() ? 0 : static_cast<Eigen::Index>(factor_rows[0].size());
    Matrix factor = matrix_from_rows(factor_rows, r);
    Vector offset = j.contains("offset") ? vector_from(j.at("offset")) : Vector::Zero(d);
    if (offset.size() != d) throw ConfigError("offset must have length d");
    Matrix basis;
    if (j.contains("basis")) {
      basis = matrix_from_rows(j.at("basis"), k);
    } else {
      // Recover an orthonormal basis from the span of the factor and centered means.
      Matrix span(d, factor.cols() + means.cols());
      span << factor, means.colwise() - offset;
      Eigen::ColPivHouseholderQR<Matrix> qr(span);
      if (qr.rank() > k) throw ConfigError("model spans more than k dimensions");
      basis = (qr.householderQ() * Matrix::Identity(d, k));
    }
    return GaussianMixture(std::move(weights), std::move(means), std::move(factor),
                           SubspaceEmbedding{std::move(basis), std::move(offset)});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model JSON: ") + e.what());
  }
}

GaussianMixture load_mixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse model file " + path + ": " + e.what());
  }
  return mixture_from_json(j);
}

void save_mixture(const GaussianMixture& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file " + path);
  out << to_json(model).dump(2) << '\n';
}

}  // namespace bddm
