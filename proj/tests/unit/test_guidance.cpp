#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fame/guidance.hpp"
#include "helpers.hpp"
#include "pool_helpers.hpp"

namespace fame {
namespace {

using test::error_kind_of;
using test::vec;

std::shared_ptr<const GmmSpec> preset(const char* name) { return std::make_shared<const GmmSpec>(make_preset(name)); }

TEST(Combiners, Examples) {
  EXPECT_EQ(cfg_combine(vec({2.0}), vec({1.0}), 1.75), vec({2.75}));
  EXPECT_EQ(cfg_combine(vec({2.0, -1.0}), vec({1.0, 5.0}), 0.0), vec({1.0, 5.0}));
  EXPECT_EQ(fame_combine(vec({2.0}), vec({1.0}), vec({4.0}), 1.5, 0.5), vec({1.5}));
}

TEST(Combiners, UnitScaleReturnsConditionalExactly) {
  const Vector d1 = vec({0.1, 0.2});
  const Vector d0 = vec({1e300, -1e300});
  EXPECT_EQ(cfg_combine(d1, d0, 1.0), d1);
  EXPECT_EQ(fame_combine(d1, d0, vec({5.0, 5.0}), 2.0, 0.0), cfg_combine(d1, d0, 2.0));
}

TEST(Combiners, LinearInOutputs) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector a1 = test::random_vector(gen, 3, 1.0), b1 = test::random_vector(gen, 3, 1.0);
    const Vector a0 = test::random_vector(gen, 3, 1.0), b0 = test::random_vector(gen, 3, 1.0);
    const Vector an = test::random_vector(gen, 3, 1.0), bn = test::random_vector(gen, 3, 1.0);
    const double w = 3.0 * std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    const double f = 0.5 * std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    const Vector lhs = fame_combine(a1 + 2.0 * b1, a0 + 2.0 * b0, an + 2.0 * bn, w, f);
    const Vector rhs = fame_combine(a1, a0, an, w, f) + 2.0 * fame_combine(b1, b0, bn, w, f);
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
    // Weights sum to one: a constant shift passes through unchanged.
    const Vector shift = Vector::Constant(3, 0.37);
    EXPECT_LT((fame_combine(a1 + shift, a0 + shift, an + shift, w, f) - fame_combine(a1, a0, an, w, f) - shift).norm(),
              1e-12);
  }
}

TEST(ScoreIdentity, CfgAndFameHoldOnRandomMixtures) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + trial % 3;
    const GmmSpec spec = test::random_mixture(gen, d, 2, 2);
    const Vector x = test::random_vector(gen, d, 1.0);
    const Vector x_neg = test::random_vector(gen, d, 1.0);
    const double sigma = 0.2 + 2.0 * u(gen);
    const double w = 4.0 * u(gen);
    const double f = 0.3 * u(gen);
    EXPECT_LT(cfg_score_identity_check(spec, x, sigma, trial % 2, w), 1e-9);
    EXPECT_LT(fame_score_identity_check(spec, x, sigma, trial % 2, w, f, x_neg, 1 - trial % 2), 1e-9);
    EXPECT_LT(fame_score_identity_check(spec, x, sigma, 0, w, 0.0, x_neg, 0), 1e-9);
    EXPECT_LT(fame_score_identity_check(spec, x, sigma, 0, 1.0, f, x_neg, 1), 1e-9);
  }
}

TEST(Gating, WindowEdges) {
  for (int k = 0; k <= 32; ++k) {
    const double t = k / 32.0;
    EXPECT_TRUE(fame_active(t, 1.0));
    EXPECT_FALSE(fame_active(t, 0.0));
    EXPECT_EQ(fame_active(t, 0.25), t >= 0.75);
  }
  EXPECT_TRUE(cfg_active(0.1, std::nullopt));
  EXPECT_TRUE(cfg_active(0.2, std::pair{0.2, 0.6}));
  EXPECT_TRUE(cfg_active(0.6, std::pair{0.2, 0.6}));
  EXPECT_FALSE(cfg_active(0.7, std::pair{0.2, 0.6}));
}

TEST(GuidanceConfig, Validation) {
  EXPECT_NO_THROW(GuidanceConfig{}.validate());
  EXPECT_EQ(error_kind_of([] { GuidanceConfig{1.0, 0.0, 1.5}.validate(); }), ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([] { GuidanceConfig{-1.0, 0.0, 0.3}.validate(); }), ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([] { GuidanceConfig{1.0, -0.1, 0.3}.validate(); }), ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([] { GuidanceConfig{1.0, 0.0, 0.3, std::pair{0.8, 0.2}}.validate(); }),
            ErrorKind::invalid_argument);
}

// Plain CFG written directly against the base source.
class ManualCfg final : public ScoreSource {
 public:
  ManualCfg(std::shared_ptr<const ScoreSource> base, double w) : base_(std::move(base)), w_(w) {}
  std::size_t dim() const override { return base_->dim(); }
  Denoised denoise(const Vector& x, double sigma, std::optional<int> c, const StepContext& ctx) const override {
    const Vector d1 = base_->denoise(x, sigma, c, ctx).output;
    const Vector d0 = base_->denoise(x, sigma, std::nullopt, ctx).output;
    return {w_ * d1 + (1.0 - w_) * d0, d1};
  }
  std::uint64_t fingerprint() const override { return 0; }

 private:
  std::shared_ptr<const ScoreSource> base_;
  double w_;
};

TEST(GuidedSource, ZeroFailureScaleIsBitIdenticalToCfg) {
  const auto base = std::make_shared<const AnalyticSource>(preset("imbalanced2d"));
  const SamplerConfig sampler{SamplerMethod::heun, make_schedule(ScheduleKind::karras, 16, 0.02, 10.0), true};
  const auto pool = test::synthetic_pool(sampler.schedule, 4, 2);
  const GuidedSource with_pool(base, pool, {2.0, 0.0, 0.3}, sampler.schedule);
  const GuidedSource without_pool(base, nullptr, {2.0, 0.0, 0.3}, sampler.schedule);
  const ManualCfg manual(base, 2.0);
  for (int c : {0, 5}) {
    for (std::size_t i = 0; i < 10; ++i) {
      const auto seed = trajectory_seed(3, c, i);
      const auto ref = sample_one(manual, sampler, seed, c);
      EXPECT_EQ(sample_one(with_pool, sampler, seed, c), ref);
      EXPECT_EQ(sample_one(without_pool, sampler, seed, c), ref);
    }
  }
}

TEST(GuidedSource, UnitScaleIsBitIdenticalToConditional) {
  const auto base = std::make_shared<const AnalyticSource>(preset("balanced2d"));
  const SamplerConfig sampler{SamplerMethod::euler, make_schedule(ScheduleKind::karras, 12, 0.02, 10.0), true};
  const GuidedSource guided(base, nullptr, {1.0, 0.0, 0.3}, sampler.schedule);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto seed = trajectory_seed(9, 2, i);
    EXPECT_EQ(sample_one(guided, sampler, seed, 2), sample_one(*base, sampler, seed, 2));
  }
}

TEST(GuidedSource, ZeroWindowMatchesCfg) {
  const auto base = std::make_shared<const AnalyticSource>(preset("imbalanced2d"));
  const SamplerConfig sampler{SamplerMethod::heun, make_schedule(ScheduleKind::karras, 16, 0.02, 10.0), true};
  const auto pool = test::synthetic_pool(sampler.schedule, 4, 2);
  const GuidedSource no_window(base, pool, {1.5, 0.1, 0.0}, sampler.schedule);
  const GuidedSource cfg(base, nullptr, {1.5, 0.0, 0.3}, sampler.schedule);
  const auto seed = trajectory_seed(1, 1, 0);
  EXPECT_EQ(sample_one(no_window, sampler, seed, 1), sample_one(cfg, sampler, seed, 1));
}

TEST(GuidedSource, FullWindowAppliesFailureTermAtEveryStep) {
  const auto base = std::make_shared<const AnalyticSource>(preset("imbalanced2d"));
  const auto schedule = make_schedule(ScheduleKind::karras, 8, 0.02, 10.0);
  const auto pool = test::synthetic_pool(schedule, 3, 2);
  const GuidedSource guided(base, pool, {1.5, 0.2, 1.0}, schedule);
  const auto record = guided.bind_trajectory(42, 0);
  ASSERT_TRUE(record.has_value());
  const Vector x = vec({0.3, 0.1});
  for (int k = 0; k < 8; ++k) {
    StepContext ctx{k, 8, 42, record};
    const Vector d1 = base->denoise(x, schedule[k], 0, ctx).output;
    const Vector d0 = base->denoise(x, schedule[k], std::nullopt, ctx).output;
    const Vector expected = fame_combine(d1, d0, pool->cached_output(*record, k), 1.5, 0.2);
    const Denoised got = guided.denoise(x, schedule[k], 0, ctx);
    EXPECT_LT((got.output - expected).norm(), 1e-12);
    EXPECT_EQ(got.conditional, d1);
  }
}

TEST(GuidedSource, CfgIntervalTurnsGuidanceOffOutside) {
  const auto base = std::make_shared<const AnalyticSource>(preset("balanced2d"));
  const auto schedule = make_schedule(ScheduleKind::karras, 10, 0.02, 10.0);
  const GuidedSource guided(base, nullptr, {3.0, 0.0, 0.0, std::pair{0.2, 0.5}}, schedule);
  const Vector x = vec({0.5, 0.5});
  for (int k = 0; k < 10; ++k) {
    StepContext ctx{k, 10, 0, std::nullopt};
    const Vector d1 = base->denoise(x, schedule[k], 1, ctx).output;
    const Vector got = guided.denoise(x, schedule[k], 1, ctx).output;
    if (k < 2 || k > 5) {
      EXPECT_EQ(got, d1) << k;
    } else {
      EXPECT_NE(got, d1) << k;
    }
  }
}

TEST(GuidedSource, PoolStepCountMustMatchSchedule) {
  const auto base = std::make_shared<const AnalyticSource>(preset("balanced2d"));
  const auto pool = test::synthetic_pool(make_schedule(ScheduleKind::karras, 16, 0.02, 10.0), 2, 2);
  const auto other = make_schedule(ScheduleKind::karras, 32, 0.02, 10.0);
  EXPECT_EQ(error_kind_of([&] { GuidedSource(base, pool, {1.5, 0.02, 0.3}, other); }), ErrorKind::incompatible_pool);
  const auto same_t = make_schedule(ScheduleKind::linear_sigma, 16, 0.02, 10.0);
  EXPECT_EQ(error_kind_of([&] { GuidedSource(base, pool, {1.5, 0.02, 0.3}, same_t); }), ErrorKind::incompatible_pool);
  EXPECT_EQ(error_kind_of([&] { GuidedSource(base, nullptr, {1.5, 0.02, 0.3}, other); }), ErrorKind::invalid_argument);
}

TEST(GuidedSource, PoolDimensionMustMatch) {
  const auto base = std::make_shared<const AnalyticSource>(preset("balanced2d"));
  const auto schedule = make_schedule(ScheduleKind::karras, 8, 0.02, 10.0);
  const auto pool = test::synthetic_pool(schedule, 2, 3);
  EXPECT_EQ(error_kind_of([&] { GuidedSource(base, pool, {1.5, 0.02, 0.3}, schedule); }),
            ErrorKind::incompatible_pool);
}

// Wraps a source and records the bound pool record seen at every evaluation.
class BindingProbe final : public ScoreSource {
 public:
  explicit BindingProbe(std::shared_ptr<const ScoreSource> inner) : inner_(std::move(inner)) {}
  std::size_t dim() const override { return inner_->dim(); }
  Denoised denoise(const Vector& x, double s, std::optional<int> c, const StepContext& ctx) const override {
    seen.push_back(ctx.pool_record);
    return inner_->denoise(x, s, c, ctx);
  }
  std::optional<std::size_t> bind_trajectory(std::uint64_t seed, std::optional<int> c) const override {
    return inner_->bind_trajectory(seed, c);
  }
  std::uint64_t fingerprint() const override { return inner_->fingerprint(); }
  mutable std::vector<std::optional<std::size_t>> seen;

 private:
  std::shared_ptr<const ScoreSource> inner_;
};

TEST(GuidedSource, BindingIsFixedForTheWholeTrajectory) {
  const auto base = std::make_shared<const AnalyticSource>(preset("imbalanced2d"));
  const SamplerConfig sampler{SamplerMethod::heun, make_schedule(ScheduleKind::karras, 16, 0.02, 10.0), true};
  const auto pool = test::synthetic_pool(sampler.schedule, 8, 2);
  const auto guided = std::make_shared<const GuidedSource>(base, pool, GuidanceConfig{1.5, 0.05, 0.5}, sampler.schedule);
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < 40; ++i) {
    BindingProbe probe(guided);
    const auto seed = trajectory_seed(0, 2, i);
    sample_one(probe, sampler, seed, 2);
    ASSERT_FALSE(probe.seen.empty());
    for (const auto& r : probe.seen) {
      ASSERT_TRUE(r.has_value());
      EXPECT_EQ(*r, pool->select(seed, 2));
    }
    used.insert(*probe.seen.front());
  }
  EXPECT_GT(used.size(), 3u);
}

TEST(GuidedSource, UnboundTrajectoryIsAnError) {
  const auto base = std::make_shared<const AnalyticSource>(preset("balanced2d"));
  const auto schedule = make_schedule(ScheduleKind::karras, 8, 0.02, 10.0);
  const GuidedSource guided(base, test::synthetic_pool(schedule, 2, 2), {1.5, 0.1, 1.0}, schedule);
  StepContext ctx{0, 8, 0, std::nullopt};
  EXPECT_EQ(error_kind_of([&] { guided.denoise(vec({0.0, 0.0}), schedule[0], 0, ctx); }),
            ErrorKind::incompatible_pool);
}

}  // namespace
}  // namespace fame
