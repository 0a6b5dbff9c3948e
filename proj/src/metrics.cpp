#include "bddm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bddm/assignment.hpp"
#include "bddm/error.hpp"
#include "bddm/rng.hpp"

namespace bddm {

void RunningMoments::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / n_;
  m2_ += delta * (x - mean_);
}

McEstimate RunningMoments::estimate() const {
  return {mean_, n_ > 1 ? std::sqrt(variance() / n_) : 0.0, n_};
}

// ---------------------------------------------------------------------------

Psnr psnr(const Vector& x, const Vector& x_hat) {
  if (x.size() != x_hat.size()) throw ConfigError("psnr needs vectors of equal length");
  const double err = (x - x_hat).squaredNorm();
  if (err == 0.0) return {kPsnrCap, true};
  const double db = -10.0 * std::log10(err);
  if (db >= kPsnrCap) return {kPsnrCap, true};
  return {db, false};
}

namespace {

void require_psd(const Matrix& c, const char* what) {
  if (c.rows() != c.cols()) throw DomainError(std::string(what) + " is not square");
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw DomainError(std::string(what) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale)
    throw DomainError(std::string(what) + " is not positive semidefinite");
}

}  // namespace

Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double gaussian_w2_squared(const Vector& mean1, const Matrix& cov1, const Vector& mean2,
                           const Matrix& cov2) {
  if (mean1.size() != mean2.size() || cov1.rows() != mean1.size() || cov2.rows() != mean2.size())
    throw ConfigError("gaussian_w2 dimension mismatch");
  require_psd(cov1, "first covariance");
  require_psd(cov2, "second covariance");
  const Matrix root2 = psd_sqrt(cov2);
  const Matrix cross = psd_sqrt(root2 * cov1 * root2);
  const double w2 = (mean1 - mean2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross.trace();
  return std::max(w2, 0.0);
}

double gaussian_w2(const Vector& mean1, const Matrix& cov1, const Vector& mean2,
                   const Matrix& cov2) {
  return std::sqrt(gaussian_w2_squared(mean1, cov1, mean2, cov2));
}

// ---------------------------------------------------------------------------
// Transport

void SampleSet::validate() const {
  if (points.cols() < 1) throw ConfigError("sample set is empty");
  if (!points.allFinite()) throw DomainError("sample set '" + source + "' has non-finite points");
}

double exact_w1(const Matrix& a, const Matrix& b, double cap) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("exact_w1 needs point clouds of equal shape");
  const Eigen::Index n = a.cols();
  if (n == 0) throw ConfigError("exact_w1 needs at least one point");
  if (n > kMaxTransportPoints)
    throw UnsupportedSize("exact transport limited to " + std::to_string(kMaxTransportPoints) + " points");
  if (a.rows() > kMaxTransportDim)
    throw UnsupportedSize("exact transport limited to dimension " + std::to_string(kMaxTransportDim));
  if (a.rows() == 1 && std::isinf(cap)) {
    std::vector<double> x(a.data(), a.data() + n), y(b.data(), b.data() + n);
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += std::abs(x[i] - y[i]);
    return total / static_cast<double>(n);
  }
  Matrix cost(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) cost(i, j) = std::min((a.col(i) - b.col(j)).norm(), cap);
  return solve_assignment(cost).total_cost / static_cast<double>(n);
}

namespace {

Matrix subsample(const Matrix& pts, Eigen::Index m, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pts.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, streams::kSubsample));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto span = static_cast<std::uint64_t>(pts.cols() - i);
    const auto pick = i + static_cast<Eigen::Index>(rng.next() % span);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick)]);
  }
  std::sort(idx.begin(), idx.begin() + m);
  Matrix out(pts.rows(), m);
  for (Eigen::Index i = 0; i < m; ++i) out.col(i) = pts.col(idx[static_cast<std::size_t>(i)]);
  return out;
}

double projected_transport(const SampleSet& a, const SampleSet& b,
                           const SubspaceEmbedding& embedding, double cap,
                           std::uint64_t subsample_seed) {
  a.validate();
  b.validate();
  if (a.points.rows() != embedding.ambient_dim() || b.points.rows() != embedding.ambient_dim())
    throw ConfigError("sample sets do not match the embedding dimension");
  if (embedding.intrinsic_dim() > kMaxTransportDim)
    throw UnsupportedSize("projected transport limited to k <= " + std::to_string(kMaxTransportDim));
  Matrix pa = embedding.coordinates(a.points);
  Matrix pb = embedding.coordinates(b.points);
  const Eigen::Index na = pa.cols(), nb = pb.cols();
  if (na != nb) {
    const Eigen::Index lo = std::min(na, nb), hi = std::max(na, nb);
    if (hi > 2 * lo) throw ConfigError("sample set sizes differ by more than 2x");
    if (na > nb) pa = subsample(pa, lo, subsample_seed);
    else pb = subsample(pb, lo, subsample_seed);
  }
  // Fixed argument order so that swapping the sets gives the same bits.
  const bool swap = std::lexicographical_compare(pb.data(), pb.data() + pb.size(), pa.data(),
                                                 pa.data() + pa.size());
  return swap ? exact_w1(pb, pa, cap) : exact_w1(pa, pb, cap);
}

}  // namespace

double projected_w1(const SampleSet& a, const SampleSet& b, const SubspaceEmbedding& embedding,
                    std::uint64_t subsample_seed) {
  return projected_transport(a, b, embedding, std::numeric_limits<double>::infinity(),
                             subsample_seed);
}

double projected_w1_capped(const SampleSet& a, const SampleSet& b,
                           const SubspaceEmbedding& embedding, double cap,
                           std::uint64_t subsample_seed) {
  if (!(cap > 0.0)) throw ConfigError("transport cap must be positive");
  return projected_transport(a, b, embedding, cap, subsample_seed);
}

// ---------------------------------------------------------------------------

McEstimate early_stop_gap(const GaussianMixture& model, double sigma, long n_mc,
                          std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw DomainError("sigma must be >= 0");
  if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
  const SubspaceEmbedding& support = model.support();
  const int d = model.ambient_dim();
  RunningMoments acc;
  constexpr long kChunk = 1024;
  for (long start = 0, chunk = 0; start < n_mc; start += kChunk, ++chunk) {
    const int n = static_cast<int>(std::min(kChunk, n_mc - start));
    const Matrix x = sample(model, n, derive_seed(seed, streams::kData, static_cast<std::uint64_t>(chunk)));
    Rng rng(derive_seed(seed, streams::kNoise, static_cast<std::uint64_t>(chunk)));
    const Matrix y = x + sigma * rng.normal_matrix(d, n);
    const Matrix projected = (support.basis * support.coordinates(y)).colwise() + support.offset;
    for (int j = 0; j < n; ++j) acc.add((x.col(j) - projected.col(j)).norm());
  }
  return acc.estimate();
}

}  // namespace bddm
