#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "fame/gmm.hpp"
#include "helpers.hpp"

namespace fame {
namespace {

using test::error_kind_of;
using test::vec;

// Independent oracle: the noised density computed by direct summation of
// Gaussian pdfs with explicit inverses and determinants.
double oracle_density(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> cls) {
  const auto d = static_cast<Eigen::Index>(spec.dim());
  double total = 0.0;
  for (const auto& c : spec.classes()) {
    if (cls && c.id != *cls) continue;
    const double prior = cls ? 1.0 : c.prior;
    for (const auto& comp : c.components) {
      const Matrix cov = comp.cov + sigma * sigma * Matrix::Identity(d, d);
      const Vector r = x - comp.mean;
      const double q = r.dot(cov.inverse() * r);
      total += prior * comp.weight * std::exp(-0.5 * q) /
               std::sqrt(std::pow(2.0 * std::numbers::pi, static_cast<double>(d)) * cov.determinant());
    }
  }
  return total;
}

TEST(Gmm, StandardNormalValues) {
  const GmmSpec spec = test::single_gaussian_1d(0.0, 1.0);
  const Vector x = vec({1.0});
  EXPECT_NEAR(noised_log_density(spec, vec({0.0}), 1.0, 0), -0.5 * std::log(4.0 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(analytic_score(spec, vec({2.0}), 1.0, 0)[0], -1.0, 1e-12);
  EXPECT_NEAR(ideal_denoiser(spec, vec({2.0}), 1.0, 0)[0], 1.0, 1e-12);
  EXPECT_NEAR(noised_log_density(spec, x, 0.0, 0), -0.5 * std::log(2.0 * std::numbers::pi) - 0.5, 1e-12);
}

TEST(Gmm, DensityMatchesOracleOnRandomMixtures) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> sig(0.0, 3.0);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 1 + trial % 3;
    const GmmSpec spec = test::random_mixture(gen, d, 2, 3);
    for (int q = 0; q < 5; ++q) {
      const Vector x = test::random_vector(gen, d, 1.5);
      const double s = sig(gen);
      for (std::optional<int> cls : {std::optional<int>{}, std::optional<int>{0}, std::optional<int>{1}}) {
        EXPECT_NEAR(noised_log_density(spec, x, s, cls), std::log(oracle_density(spec, x, s, cls)), 1e-9);
      }
    }
  }
}

TEST(Gmm, DensityIntegratesToOne) {
  GmmSpec spec({{0, 1.0, {test::gaussian1d(-1.0, 0.3, 0.4), test::gaussian1d(2.0, 0.8, 0.6)}}});
  for (double sigma : {0.0, 0.5, 2.0}) {
    const double lo = -20.0;
    const double hi = 20.0;
    const int n = 20000;
    const double h = (hi - lo) / n;
    double sum = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      sum += w * std::exp(noised_log_density(spec, vec({lo + i * h}), sigma, 0));
    }
    EXPECT_NEAR(sum * h / 3.0, 1.0, 1e-6) << "sigma=" << sigma;
  }
}

TEST(Gmm, ScoreMatchesFiniteDifferences) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 1 + trial % 3;
    const GmmSpec spec = test::random_mixture(gen, d, 2, 2);
    const Vector x = test::random_vector(gen, d, 1.0);
    const double sigma = 0.3 + 0.1 * (trial % 2);
    for (std::optional<int> cls : {std::optional<int>{}, std::optional<int>{1}}) {
      const Vector s = analytic_score(spec, x, sigma, cls);
      for (int i = 0; i < d; ++i) {
        const double h = 1e-5;
        Vector xp = x;
        Vector xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd =
            (noised_log_density(spec, xp, sigma, cls) - noised_log_density(spec, xm, sigma, cls)) / (2.0 * h);
        EXPECT_NEAR(s[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(Gmm, TweedieIdentityHolds) {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 4;
    const GmmSpec spec = test::random_mixture(gen, d, 3, 2);
    const Vector x = test::random_vector(gen, d, 2.0);
    const double sigma = 0.05 + 0.2 * (trial % 7);
    const std::optional<int> cls = trial % 2 ? std::optional<int>{trial % 3} : std::nullopt;
    const Vector lhs = ideal_denoiser(spec, x, sigma, cls);
    const Vector rhs = x + sigma * sigma * analytic_score(spec, x, sigma, cls);
    EXPECT_LT((lhs - rhs).norm(), 1e-10);
  }
}

TEST(Gmm, ClassConditionalIgnoresOtherClasses) {
  GmmSpec a({{0, 0.5, {test::gaussian1d(-2.0, 0.5)}}, {1, 0.5, {test::gaussian1d(3.0, 0.5)}}});
  GmmSpec b({{0, 0.5, {test::gaussian1d(-2.0, 0.5)}}, {1, 0.5, {test::gaussian1d(-9.0, 0.1)}}});
  for (double x : {-3.0, 0.0, 2.5}) {
    EXPECT_DOUBLE_EQ(noised_log_density(a, vec({x}), 0.7, 0), noised_log_density(b, vec({x}), 0.7, 0));
    EXPECT_DOUBLE_EQ(analytic_score(a, vec({x}), 0.7, 0)[0], analytic_score(b, vec({x}), 0.7, 0)[0]);
  }
}

TEST(Gmm, MarginalIsPriorWeightedClassMixture) {
  std::mt19937_64 gen(4);
  const GmmSpec spec = test::random_mixture(gen, 2, 3, 2);
  for (int q = 0; q < 10; ++q) {
    const Vector x = test::random_vector(gen, 2, 1.5);
    double sum = 0.0;
    for (const auto& c : spec.classes()) sum += c.prior * std::exp(noised_log_density(spec, x, 0.4, c.id));
    EXPECT_NEAR(std::exp(noised_log_density(spec, x, 0.4, std::nullopt)), sum, 1e-12 * std::max(1.0, sum));
  }
}

TEST(Gmm, ResponsibilitiesSumToOne) {
  const GmmSpec spec = make_preset("imbalanced2d");
  const Vector r = responsibilities(spec, vec({0.5, 0.2}), 0.1, 4);
  EXPECT_EQ(r.size(), 2);
  EXPECT_NEAR(r.sum(), 1.0, 1e-12);
  EXPECT_NEAR(responsibilities(spec, vec({0.5, 0.2}), 0.1, std::nullopt).sum(), 1.0, 1e-12);
}

TEST(Gmm, ImbalancedPresetBadFraction) {
  const GmmSpec spec = make_preset("imbalanced2d");
  Rng rng(17);
  const auto draws = exact_sampler_labeled(spec, rng, 3, 100000);
  std::size_t bad = 0;
  for (const auto& d : draws) {
    EXPECT_EQ(d.class_id, 3);
    if (spec.cls(3).components[d.component].quality_tag < 2.0) ++bad;
  }
  EXPECT_NEAR(static_cast<double>(bad) / draws.size(), 0.10, 0.01);
}

TEST(Gmm, SampleMeanWithinClt) {
  GmmSpec spec({{0, 1.0, {test::gaussian1d(1.5, 4.0)}}});
  Rng rng(2);
  const auto xs = exact_sampler(spec, rng, 0, 40000);
  double mean = 0.0;
  for (const auto& x : xs) mean += x[0];
  mean /= xs.size();
  EXPECT_NEAR(mean, 1.5, 4.0 * 2.0 / std::sqrt(40000.0));
}

TEST(Gmm, MarginalSamplingFollowsPriors) {
  GmmSpec spec({{0, 0.25, {test::gaussian1d(-5.0, 0.1)}}, {1, 0.75, {test::gaussian1d(5.0, 0.1)}}});
  Rng rng(2);
  const auto draws = exact_sampler_labeled(spec, rng, std::nullopt, 20000);
  std::size_t ones = 0;
  for (const auto& d : draws) ones += d.class_id == 1;
  EXPECT_NEAR(static_cast<double>(ones) / draws.size(), 0.75, 0.015);
}

TEST(Gmm, JsonRoundTrip) {
  std::mt19937_64 gen(6);
  const GmmSpec spec = test::random_mixture(gen, 3, 2, 2);
  const GmmSpec back = parse_gmm(format_gmm(spec));
  EXPECT_EQ(back.fingerprint(), spec.fingerprint());
  const Vector x = vec({0.1, 0.2, 0.3});
  EXPECT_EQ(noised_log_density(back, x, 0.5, 1), noised_log_density(spec, x, 0.5, 1));
}

TEST(Gmm, FileRoundTripAndResolve) {
  test::TempDir dir;
  const GmmSpec spec = make_preset("balanced2d");
  save_gmm(spec, dir / "g.json");
  EXPECT_EQ(load_gmm(dir / "g.json").fingerprint(), spec.fingerprint());
  EXPECT_EQ(resolve_dataset((dir / "g.json").string()).fingerprint(), spec.fingerprint());
  EXPECT_EQ(resolve_dataset("balanced2d").fingerprint(), spec.fingerprint());
}

TEST(Gmm, ErrorsAreTyped) {
  const GmmSpec spec = make_preset("balanced2d");
  EXPECT_EQ(error_kind_of([&] { spec.cls(99); }), ErrorKind::not_found);
  EXPECT_EQ(error_kind_of([&] { noised_log_density(spec, vec({0.0, 0.0}), 1.0, 42); }), ErrorKind::not_found);
  EXPECT_EQ(error_kind_of([] { make_preset("nope"); }), ErrorKind::not_found);
  EXPECT_EQ(error_kind_of([] { resolve_dataset("/no/such/file.json"); }), ErrorKind::not_found);
  EXPECT_EQ(error_kind_of([&] { ideal_denoiser(spec, vec({0.0, 0.0}), 0.0, 0); }), ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([&] { analytic_score(spec, vec({0.0}), 1.0, 0); }), ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([] { parse_gmm("{not json"); }), ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([] { GmmSpec({{0, 1.0, {{vec({0.0}), Matrix::Constant(1, 1, -1.0), 1.0, 0.0}}}}); }),
            ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([] { GmmSpec({{0, 1.0, {test::gaussian1d(0.0, 1.0, 0.5)}}}); }),
            ErrorKind::invalid_argument);
}

TEST(Gmm, FarQueryIsStable) {
  const GmmSpec spec = make_preset("imbalanced2d");
  const Vector x = vec({40.0, -30.0});
  const double lp = noised_log_density(spec, x, 0.0, 2);
  EXPECT_TRUE(std::isfinite(lp));
  EXPECT_TRUE(analytic_score(spec, x, 0.02, 2).allFinite());
}

}  // namespace
}  // namespace fame
