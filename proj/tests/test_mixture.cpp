#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bddm/error.hpp"
#include "bddm/metrics.hpp"
#include "bddm/mixture.hpp"
#include "bddm/rng.hpp"
#include "support.hpp"

using namespace bddm;
using bddm::test::gaussian;
using bddm::test::mixture_cov;

TEST_SUITE("mixture") {

TEST_CASE("identity embedding leaves the mixture unchanged") {
  const GaussianMixture m = GaussianMixture::random_in_coordinates(3, 4, 1.0, 0.5, 1);
  const GaussianMixture e = embed_mixture(m, SubspaceEmbedding::identity(4));
  CHECK((e.means() - m.means()).norm() < 1e-14);
  CHECK((e.base_cov() - m.base_cov()).norm() < 1e-14);
}

TEST_CASE("zero padding gives a block-diagonal covariance") {
  const GaussianMixture m = gaussian(Matrix::Identity(2, 2));
  const GaussianMixture e = embed_mixture(m, SubspaceEmbedding::zero_padding(2, 5));
  Matrix expected = Matrix::Zero(5, 5);
  expected(0, 0) = expected(1, 1) = 1.0;
  CHECK((e.base_cov() - expected).norm() < 1e-14);
  CHECK(e.overall_mean().norm() < 1e-14);
  CHECK(e.intrinsic_dim() == 2);
  CHECK(e.ambient_dim() == 5);
}

TEST_CASE("random embedding keeps the covariance rank") {
  const GaussianMixture e = test::two_gaussians(500);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(e.base_cov());
  const Vector ev = eig.eigenvalues();  // ascending
  CHECK(ev(497) <= 1e-8);
  CHECK(ev(498) > 0.1);
  e.support().validate();
}

TEST_CASE("embedding dimension mismatch is a configuration error") {
  const GaussianMixture m = gaussian(Matrix::Identity(2, 2));
  CHECK_THROWS_AS(embed_mixture(m, SubspaceEmbedding::zero_padding(3, 5)), ConfigError);
}

TEST_CASE("invalid mixtures are rejected") {
  const Matrix means = Matrix::Zero(2, 2);
  const Matrix f = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(GaussianMixture(Vector::Constant(2, 0.6), means, f, SubspaceEmbedding::identity(2)), ConfigError);
  Vector w(2);
  w << 1.5, -0.5;
  CHECK_THROWS_AS(GaussianMixture(w, means, f, SubspaceEmbedding::identity(2)), ConfigError);
  // mean off the support
  Matrix off = Matrix::Zero(3, 1);
  off(2, 0) = 1.0;
  CHECK_THROWS_AS(GaussianMixture(Vector::Ones(1), off, Matrix::Zero(3, 1), SubspaceEmbedding::zero_padding(2, 3)),
                  ConfigError);
  Matrix bad(2, 2);
  bad << 1, 0.5, 0.4, 1;
  CHECK_THROWS_AS(GaussianMixture::from_covariance(Vector::Ones(1), Matrix::Zero(2, 1), bad), ConfigError);
}

TEST_CASE("log density of a standard case") {
  const GaussianMixture m = gaussian(Matrix::Identity(2, 2));
  CHECK(noisy_log_density(m, Vector::Zero(2), 1.0) == doctest::Approx(-std::log(4 * M_PI)).epsilon(1e-14));
}

TEST_CASE("symmetric components give the single-component density at the origin") {
  Matrix means(2, 2);
  means << 1, -1, 0.5, -0.5;
  const GaussianMixture m = GaussianMixture::from_covariance(Vector::Constant(2, 0.5), means, 0.3 * Matrix::Identity(2, 2));
  const GaussianMixture one = GaussianMixture::from_covariance(Vector::Ones(1), means.col(0), 0.3 * Matrix::Identity(2, 2));
  CHECK(noisy_log_density(m, Vector::Zero(2), 0.7) ==
        doctest::Approx(noisy_log_density(one, Vector::Zero(2), 0.7)).epsilon(1e-13));
}

TEST_CASE("log density matches a dense-covariance oracle") {
  for (int t = 0; t < 20; ++t) {
    const GaussianMixture base = GaussianMixture::random_in_coordinates(3, 3, 2.0, 0.7, 100 + t);
    const GaussianMixture m = embed_mixture(base, SubspaceEmbedding::random(3, 12, 200 + t));
    Rng rng(300 + t);
    const double sigma = 0.1 + rng.uniform();
    const Vector y = 2.0 * rng.normal_vector(12);
    const Matrix cov = m.base_cov() + sigma * sigma * Matrix::Identity(12, 12);
    const Eigen::LLT<Matrix> llt(cov);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    Vector terms(m.components());
    Vector score = Vector::Zero(12);
    for (int i = 0; i < m.components(); ++i) {
      const Vector r = y - m.mean(i);
      terms(i) = std::log(m.weights()(i)) - 0.5 * (12 * std::log(2 * M_PI) + logdet + r.dot(llt.solve(r)));
    }
    const double lse = log_sum_exp(terms);
    for (int i = 0; i < m.components(); ++i) score -= std::exp(terms(i) - lse) * llt.solve(y - m.mean(i));
    CHECK(noisy_log_density(m, y, sigma) == doctest::Approx(lse).epsilon(1e-11));
    CHECK((noisy_score(m, y, sigma) - score).norm() <= 1e-10 * (1 + score.norm()));
  }
}

TEST_CASE("log density agrees with Monte Carlo over the data") {
  const GaussianMixture m = test::two_gaussians(500);
  const double sigma = 1.0;
  Rng rng(5);
  const Vector y = sample(m, 1, 6).col(0) + sigma * rng.normal_vector(500);
  // p_sigma(y) = E_X[N(y; X, sigma^2 I)]; work relative to the exact value to avoid underflow.
  const double exact = noisy_log_density(m, y, sigma);
  const double norm_const = -0.5 * 500 * std::log(2 * M_PI * sigma * sigma);
  RunningMoments acc;
  const long n = 1000000, chunk = 100000;
  for (long s = 0; s < n; s += chunk) {
    const Matrix xs = sample(m, static_cast<int>(chunk), derive_seed(7, streams::kData, s));
    for (Eigen::Index j = 0; j < xs.cols(); ++j)
      acc.add(std::exp(norm_const - 0.5 * (xs.col(j) - y).squaredNorm() / (sigma * sigma) - exact));
  }
  const McEstimate e = acc.estimate();
  CHECK(std::abs(e.mean - 1.0) <= 3 * e.std_error);
}

TEST_CASE("score examples") {
  const GaussianMixture m = gaussian(Matrix::Identity(2, 2));
  Vector y(2);
  y << 2, 0;
  const Vector s = noisy_score(m, y, 1.0);
  CHECK(s(0) == doctest::Approx(-1.0));
  CHECK(std::abs(s(1)) < 1e-15);
  CHECK(noisy_score(m, Vector::Zero(2), 0.3).norm() == 0.0);
}

TEST_CASE("score matches finite differences for a two-component mixture") {
  Matrix means(2, 2);
  means << 1, -1, -0.5, 0.5;
  Matrix cov(2, 2);
  cov << 0.5, 0.1, 0.1, 0.3;
  const GaussianMixture m = GaussianMixture::from_covariance(Vector::Constant(2, 0.5), means, cov);
  const Vector y = Vector::Ones(2);
  const Vector s = noisy_score(m, y, 0.5);
  Vector fd(2);
  for (int j = 0; j < 2; ++j) {
    Vector a = y, b = y;
    a(j) += 1e-5;
    b(j) -= 1e-5;
    fd(j) = (noisy_log_density(m, a, 0.5) - noisy_log_density(m, b, 0.5)) / 2e-5;
  }
  CHECK((s - fd).norm() / s.norm() <= 1e-6);
}

TEST_CASE("invalid inputs are domain errors") {
  const GaussianMixture m = gaussian(Matrix::Identity(2, 2));
  CHECK_THROWS_AS(noisy_log_density(m, Vector::Zero(2), 0.0), DomainError);
  CHECK_THROWS_AS(noisy_score(m, Vector::Zero(2), -1.0), DomainError);
  Vector y = Vector::Zero(2);
  y(0) = NAN;
  CHECK_THROWS_AS(noisy_score(m, y, 1.0), DomainError);
}

TEST_CASE("log density stays finite far from the data in high dimension") {
  const GaussianMixture m = embed_mixture(GaussianMixture::random_in_coordinates(2, 2, 1.0, 0.3, 1),
                                          SubspaceEmbedding::random(2, 1000, 2));
  Rng rng(3);
  Vector y = rng.normal_vector(1000);
  y *= 1e3 * 10.0 / y.norm();
  CHECK(std::isfinite(noisy_log_density(m, y, 10.0)));
  CHECK(std::isfinite(noisy_log_density(m, y, 0.01)));
  CHECK(noisy_score(m, y, 0.01).allFinite());
}

TEST_CASE("conjugate posterior update") {
  const GaussianMixture m = gaussian(Matrix::Identity(2, 2));
  Vector y(2);
  y << 2, 0;
  const GaussianMixture post = posterior_mixture(m, y, 1.0);
  CHECK(post.mean(0)(0) == doctest::Approx(1.0));
  CHECK(std::abs(post.mean(0)(1)) < 1e-15);
  CHECK((post.base_cov() - 0.5 * Matrix::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("posterior means approach the prior means for huge noise") {
  const GaussianMixture m = GaussianMixture::random_in_coordinates(3, 2, 2.0, 0.5, 4);
  const GaussianMixture post = posterior_mixture(m, Vector::Constant(2, 3.0), 1e6);
  CHECK((post.means() - m.means()).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("posterior mean equals y + sigma^2 score") {
  for (int t = 0; t < 50; ++t) {
    const GaussianMixture m = embed_mixture(GaussianMixture::random_in_coordinates(1 + t % 4, 3, 1.5, 0.5, t),
                                            SubspaceEmbedding::random(3, 20, 50 + t));
    Rng rng(100 + t);
    const double sigma = 0.05 + 2 * rng.uniform();
    const Vector y = sample(m, 1, rng.next()).col(0) + sigma * rng.normal_vector(20);
    const Vector lhs = posterior_mixture(m, y, sigma).overall_mean();
    CHECK((lhs - (y + sigma * sigma * noisy_score(m, y, sigma))).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("posterior covariance is the scaled Hessian plus identity") {
  const GaussianMixture m = embed_mixture(GaussianMixture::random_in_coordinates(3, 2, 1.5, 0.5, 9),
                                          SubspaceEmbedding::random(2, 4, 10));
  Rng rng(11);
  const double sigma = 0.6;
  const Vector y = sample(m, 1, 12).col(0) + sigma * rng.normal_vector(4);
  const double h = 1e-5 * (1 + y.norm());
  Matrix H(4, 4);
  for (int j = 0; j < 4; ++j) {
    Vector a = y, b = y;
    a(j) += h;
    b(j) -= h;
    H.col(j) = (noisy_score(m, a, sigma) - noisy_score(m, b, sigma)) / (2 * h);
  }
  const Matrix C = mixture_cov(posterior_mixture(m, y, sigma));
  CHECK((sigma * sigma * H - (C / (sigma * sigma) - Matrix::Identity(4, 4))).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("sampling: degenerate, covariance and support") {
  const GaussianMixture point = GaussianMixture(Vector::Ones(1), Matrix::Constant(3, 1, 0.7), Matrix::Zero(3, 1),
                                                SubspaceEmbedding::identity(3));
  const Matrix p = sample(point, 10, 1);
  CHECK((p.colwise() - Vector::Constant(3, 0.7)).norm() == 0.0);

  Matrix cov(2, 2);
  cov << 1.0, 0.4, 0.4, 0.5;
  const Matrix xs = sample(gaussian(cov), 100000, 2);
  const Vector mean = xs.rowwise().mean();
  const Matrix centered = xs.colwise() - mean;
  const Matrix emp = centered * centered.transpose() / (xs.cols() - 1.0);
  CHECK((emp - cov).norm() / cov.norm() <= 0.05);

  const GaussianMixture e = test::two_gaussians(500);
  const Matrix ys = sample(e, 200, 3);
  for (Eigen::Index j = 0; j < ys.cols(); ++j) CHECK((ys.col(j) - e.support().project(ys.col(j))).norm() <= 1e-10);
}

TEST_CASE("labels follow the weights") {
  Matrix means(1, 2);
  means << -3, 3;
  Vector w(2);
  w << 0.2, 0.8;
  const GaussianMixture m = GaussianMixture::from_covariance(w, means, Matrix::Constant(1, 1, 0.01));
  std::vector<int> labels;
  const Matrix xs = sample(m, 20000, 4, &labels);
  double ones = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    ones += labels[j];
    CHECK((xs(0, static_cast<Eigen::Index>(j)) > 0) == (labels[j] == 1));
  }
  CHECK(ones / 20000 == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("json round trip is exact") {
  const GaussianMixture m = test::two_gaussians(50);
  const auto path = std::filesystem::temp_directory_path() / "bddm_model_roundtrip.json";
  save_mixture(m, path.string());
  const GaussianMixture back = load_mixture(path.string());
  std::filesystem::remove(path);
  CHECK(back.means() == m.means());
  CHECK(back.factor() == m.factor());
  CHECK(back.weights() == m.weights());
  CHECK(back.support().basis == m.support().basis);
  CHECK(to_json(back).dump() == to_json(m).dump());
}

TEST_CASE("malformed model files are configuration errors") {
  CHECK_THROWS_AS(load_mixture("/nonexistent/model.json"), ConfigError);
  CHECK_THROWS_AS(mixture_from_json(nlohmann::json{{"k", 2}}), ConfigError);
  CHECK_THROWS_AS(mixture_from_json(nlohmann::json{{"k", 3}, {"d", 2}, {"weights", {1.0}}}), ConfigError);
}

TEST_CASE("noise-level terms reproduce the direct evaluation") {
  const GaussianMixture m = test::two_gaussians(100);
  const Vector y = test::noisy_draws(m, 0.4, 1, 8).col(0);
  const ObservationStats stats = observe(m, y);
  for (double s : {0.05, 0.4, 3.0}) {
    const NoiseLevelTerms terms = evaluate_noise_level(m, stats, s);
    CHECK(terms.log_density == doctest::Approx(noisy_log_density(m, y, s)).epsilon(1e-13));
    CHECK((noisy_score(m, y, terms) - noisy_score(m, y, s)).norm() < 1e-13);
    CHECK((posterior_mean(m, terms) - posterior_mixture(m, y, s).overall_mean()).norm() < 1e-10);
    CHECK(terms.responsibilities.sum() == doctest::Approx(1.0));
  }
}

}  // TEST_SUITE
