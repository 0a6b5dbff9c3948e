#include <doctest.h>

#include <cmath>

#include "bddm/denoisers.hpp"
#include "bddm/error.hpp"
#include "bddm/metrics.hpp"
#include "support.hpp"

using namespace bddm;

namespace {

// Rank-one, nearly zero covariance at the origin.
GaussianMixture thin_point_mass(int d) {
  return GaussianMixture(Vector::Ones(1), Matrix::Zero(d, 1), 1e-6 * Matrix::Identity(d, 1),
                         SubspaceEmbedding::zero_padding(1, d));
}

struct Draws {
  Matrix x, y;
};

Draws paired_draws(const GaussianMixture& m, double sigma, int n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, streams::kNoise));
  Draws out;
  out.x = sample(m, n, derive_seed(seed, streams::kData));
  out.y = out.x + sigma * rng.normal_matrix(m.ambient_dim(), n);
  return out;
}

}  // namespace

TEST_SUITE("denoisers") {

TEST_CASE("spec holds what its kind needs") {
  const GaussianMixture m = test::two_gaussians(2);
  const NoisePrior p(2.0, 0.01, 10.0);
  const DenoiserSpec nb = DenoiserSpec::nonblind(m);
  CHECK(nb.accepts_sigma());
  CHECK_FALSE(nb.is_blind());
  CHECK_THROWS_AS(nb.prior(), UnsupportedOperation);
  CHECK_THROWS_AS(nb.net(), UnsupportedOperation);
  const DenoiserSpec mle = DenoiserSpec::blind_mle(m, p);
  CHECK(mle.is_blind());
  CHECK_FALSE(mle.accepts_sigma());
  CHECK(mle.grid().size() == SigmaGrid::kDefaultCount);
  CHECK(mle.ambient_dim() == 2);
  CHECK(mle.default_init_mean().isZero());
  CHECK(to_string(DenoiserKind::analytic_blind_posterior) == "analytic_blind_posterior");

  CHECK_THROWS_AS(denoise_nonblind(mle, Vector::Zero(2), 1.0), UnsupportedOperation);
  CHECK_THROWS_AS(denoise_blind_mle(nb, Vector::Zero(2)), UnsupportedOperation);
  CHECK_THROWS_AS(denoise_blind_posterior(mle, Vector::Zero(2)), UnsupportedOperation);
  CHECK_THROWS_AS(denoise_blind(nb, Vector::Zero(2)), UnsupportedOperation);
  CHECK_THROWS_AS(denoise_nonblind(nb, Vector::Zero(3), 1.0), ConfigError);
}

TEST_CASE("nonblind examples") {
  const DenoiserSpec unit = DenoiserSpec::nonblind(test::gaussian(Matrix::Identity(2, 2)));
  const Vector out = denoise_nonblind(unit, Vector(Vector::Unit(2, 0) * 2.0), 1.0);
  CHECK((out - Vector::Unit(2, 0)).norm() <= 1e-14);

  const DenoiserSpec full = DenoiserSpec::nonblind(test::two_gaussians(2));
  const Vector y = Vector::Constant(2, 0.7);
  CHECK((denoise_nonblind(full, y, 1e-6) - y).norm() <= 1e-4);
}

TEST_CASE("nonblind equals the posterior mean and the Tweedie form") {
  const GaussianMixture m = embed_mixture(GaussianMixture::random_in_coordinates(3, 2, 2.0, 0.5, 21),
                                          SubspaceEmbedding::random(2, 6, 22));
  const DenoiserSpec spec = DenoiserSpec::nonblind(m);
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    const double sigma = 0.05 + 2.0 * rng.uniform();
    const Vector y = 2.0 * rng.normal_vector(6);
    const Vector out = denoise_nonblind(spec, y, sigma);
    const GaussianMixture post = posterior_mixture(m, y, sigma);
    CHECK((out - post.overall_mean()).norm() <= 1e-8);
    CHECK((out - y - sigma * sigma * noisy_score(m, y, sigma)).norm() <= 1e-12);
  }
}

TEST_CASE("blind mle on a noiseless point clamps to the lower bound") {
  const GaussianMixture m = test::two_gaussians(50);
  const NoisePrior p(3.0, 0.01, 10.0);
  const DenoiserSpec spec = DenoiserSpec::blind_mle(m, p);
  const Vector x = sample(m, 1, 24).col(0);
  const BlindOutput out = denoise_blind_mle(spec, x);
  CHECK(out.at_boundary);
  CHECK(out.sigma_hat == doctest::Approx(0.01));
  CHECK((out.denoised - x).norm() <= 1e-3 * x.norm());
}

TEST_CASE("blind mle tracks the oracle in high dimension only") {
  const NoisePrior p(3.0, 0.005, 20.0);
  auto ratios = [&](int d) {
    const GaussianMixture m = test::two_gaussians(d);
    const DenoiserSpec mle = DenoiserSpec::blind_mle(m, p);
    const DenoiserSpec nb = DenoiserSpec::nonblind(m);
    const Matrix ys = test::noisy_draws(m, 0.5, 1000, 25 + d);
    std::vector<double> r;
    for (int j = 0; j < 1000; ++j) {
      const Vector y = ys.col(j);
      const Vector oracle = denoise_nonblind(nb, y, 0.5);
      r.push_back((denoise_blind_mle(mle, y).denoised - oracle).norm() / (oracle - y).norm());
    }
    return r;
  };
  const auto high = ratios(500);
  CHECK(std::count_if(high.begin(), high.end(), [](double r) { return r <= 0.05; }) >= 900);
  const auto low = ratios(2);
  CHECK(std::count_if(low.begin(), low.end(), [](double r) { return r > 0.2; }) >= 300);
}

TEST_CASE("posterior average collapses to the nonblind output for a sharp posterior") {
  const int d = 20000;
  const GaussianMixture m = thin_point_mass(d);
  const NoisePrior p(3.0, 0.5, 2.0);
  const DenoiserSpec post = DenoiserSpec::blind_posterior(m, p, 16);
  Rng rng(26);
  Vector y = rng.normal_vector(d);
  y *= std::sqrt(d) * post.grid()[7] / y.norm();
  const Vector expected = denoise_nonblind(DenoiserSpec::nonblind(m), y, post.grid()[7]);
  CHECK((denoise_blind_posterior(post, y) - expected).norm() <= 1e-6);
}

TEST_CASE("posterior average matches the Bayes estimator by brute force") {
  // E[x | y] under sigma ~ Theta, x ~ p, y = x + sigma z: Monte Carlo over x,
  // dense trapezoid over log sigma for the likelihood of each draw.
  const int d = 3;
  const GaussianMixture m = test::two_gaussians(d);
  const NoisePrior p(2.0, 0.1, 3.0);
  const DenoiserSpec spec = DenoiserSpec::blind_posterior(m, p, 1024);
  const int n = 200000, nodes = 2000;
  const Matrix xs = sample(m, n, 27);
  std::vector<double> log_s(nodes), log_w(nodes);
  for (int i = 0; i < nodes; ++i) {
    log_s[i] = std::log(0.1) + (std::log(3.0) - std::log(0.1)) * i / (nodes - 1);
    const double s = std::exp(log_s[i]);
    // Theta(s) s d(log s), trapezoid end weights
    log_w[i] = p.log_density(s) + log_s[i] + (i == 0 || i == nodes - 1 ? std::log(0.5) : 0.0);
  }
  for (int t = 0; t < 3; ++t) {
    const Vector y = test::noisy_draws(m, 0.3 + 0.4 * t, 1, 28 + t).col(0);
    Vector g(n);
    Vector terms(nodes);
    for (int j = 0; j < n; ++j) {
      const double r2 = (xs.col(j) - y).squaredNorm();
      for (int i = 0; i < nodes; ++i)
        terms(i) = log_w[i] - d * log_s[i] - 0.5 * r2 * std::exp(-2 * log_s[i]);
      g(j) = log_sum_exp(terms);
    }
    g = (g.array() - g.maxCoeff()).exp().matrix();
    const double total = g.sum();
    const Vector estimate = xs * g / total;
    const Vector out = denoise_blind_posterior(spec, y);
    for (int c = 0; c < d; ++c) {
      const double se = std::sqrt((g.array().square() * (xs.row(c).transpose().array() - estimate(c)).square()).sum()) /
                        total;
      CHECK(std::abs(out(c) - estimate(c)) <= 3 * se);
    }
  }
}

TEST_CASE("posterior average is close to the mle denoiser in high dimension") {
  const GaussianMixture m = test::two_gaussians(500);
  const NoisePrior p(3.0, 0.005, 20.0);
  const DenoiserSpec post = DenoiserSpec::blind_posterior(m, p);
  const DenoiserSpec mle = DenoiserSpec::blind_mle(m, p);
  const Matrix ys = test::noisy_draws(m, 0.5, 200, 29);
  std::vector<double> rel;
  for (int j = 0; j < 200; ++j) {
    const Vector y = ys.col(j);
    const Vector a = denoise_blind_mle(mle, y).denoised;
    rel.push_back((denoise_blind_posterior(post, y) - a).norm() / a.norm());
  }
  CHECK(test::median(rel) <= 1e-2);
}

TEST_CASE("residual noise estimate") {
  const Vector y = Vector::LinSpaced(5, -1.0, 1.0);
  CHECK(residual_sigma_estimate(y, y, 5) == 0.0);
  const int d = 400;
  Rng rng(30);
  Vector z = rng.normal_vector(d);
  z *= std::sqrt(d) / z.norm();
  CHECK(residual_sigma_estimate(Vector::Zero(d), 0.7 * z, d) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK_THROWS_AS(residual_sigma_estimate(y, y, 0), ConfigError);

  const GaussianMixture m = test::two_gaussians(500);
  const DenoiserSpec spec = DenoiserSpec::blind_posterior(m, NoisePrior(3.0, 0.005, 20.0));
  for (double sigma : {0.1, 0.5, 2.0}) {
    const Matrix ys = test::noisy_draws(m, sigma, 1000, 31);
    int good = 0;
    for (int j = 0; j < 1000; ++j) {
      const BlindOutput out = denoise_blind(spec, Vector(ys.col(j)));
      good += std::abs(out.sigma_hat / sigma - 1) <= 0.1;
    }
    CHECK(good >= 950);
  }
}

TEST_CASE("mismatched noise level costs more than the true one") {
  const GaussianMixture m = test::two_gaussians(100);
  const DenoiserSpec spec = DenoiserSpec::nonblind(m);
  for (double sigma_star : {0.025, 0.15, 0.6}) {
    const Draws dr = paired_draws(m, sigma_star, 2000, 32);
    int best = 0;
    double best_mse = INFINITY;
    for (int j = -10; j <= 10; ++j) {
      const double s = sigma_star * std::pow(4.0, j / 10.0);
      double mse = 0;
      for (int i = 0; i < 2000; ++i) mse += (denoise_nonblind(spec, Vector(dr.y.col(i)), s) - dr.x.col(i)).squaredNorm();
      if (mse < best_mse) best_mse = mse, best = j;
    }
    INFO("sigma* = " << sigma_star);
    CHECK(best == 0);
  }
}

TEST_CASE("blind and nonblind risks") {
  const NoisePrior p(3.0, 0.005, 20.0);
  auto mse_ratio = [&](int d, double sigma, int n) {
    const GaussianMixture m = test::two_gaussians(d);
    const DenoiserSpec nb = DenoiserSpec::nonblind(m);
    const DenoiserSpec post = DenoiserSpec::blind_posterior(m, p);
    const Draws dr = paired_draws(m, sigma, n, 33 + d);
    double blind = 0, oracle = 0;
    for (int i = 0; i < n; ++i) {
      const Vector y = dr.y.col(i);
      blind += (denoise_blind_posterior(post, y) - dr.x.col(i)).squaredNorm();
      oracle += (denoise_nonblind(nb, y, sigma) - dr.x.col(i)).squaredNorm();
    }
    return blind / oracle;
  };
  SUBCASE("parity at d = 500") {
    for (double sigma : {0.1, 0.5, 1.0}) {
      INFO("sigma = " << sigma);
      CHECK(mse_ratio(500, sigma, 1000) <= 1.05);
    }
  }
  SUBCASE("degradation shrinks with d") {
    const double r2 = mse_ratio(2, 0.5, 1000), r50 = mse_ratio(50, 0.5, 1000), r500 = mse_ratio(500, 0.5, 1000);
    MESSAGE("blind / nonblind mse: d=2 " << r2 << ", d=50 " << r50 << ", d=500 " << r500);
    CHECK(r50 <= 1.1 * r2);
    CHECK(r500 <= 1.1 * r50);
  }
}

}  // TEST_SUITE
