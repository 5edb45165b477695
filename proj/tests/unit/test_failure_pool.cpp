#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fame/failure_pool.hpp"
#include "fame/guidance.hpp"
#include "helpers.hpp"
#include "pool_helpers.hpp"

namespace fame {
namespace {

using test::error_kind_of;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TEST(BottomK, Examples) {
  const std::vector<double> s{3.0, 1.0, 2.0, 0.5};
  EXPECT_EQ(bottom_k(s, 2), (std::vector<std::size_t>{3, 1}));
  EXPECT_EQ(bottom_k(s, 10), (std::vector<std::size_t>{3, 1, 2, 0}));
  EXPECT_TRUE(bottom_k(s, 0).empty());
}

TEST(BottomK, TiesKeepLowerIndex) {
  const std::vector<double> s{1.0, 0.0, 1.0, 0.0, 1.0};
  EXPECT_EQ(bottom_k(s, 3), (std::vector<std::size_t>{1, 3, 0}));
}

TEST(BottomK, NaNNeverRetained) {
  const std::vector<double> s{kNaN, 5.0, kNaN, -1.0};
  EXPECT_EQ(bottom_k(s, 4), (std::vector<std::size_t>{3, 1}));
  const std::vector<double> all_nan{kNaN, kNaN};
  EXPECT_TRUE(bottom_k(all_nan, 1).empty());
}

TEST(BottomK, RetainedNeverExceedDiscarded) {
  std::mt19937_64 gen(4);
  std::uniform_int_distribution<int> level(0, 9);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s(size(gen));
    for (double& v : s) v = level(gen) == 9 ? kNaN : 0.25 * level(gen);
    const std::size_t k = size(gen) % (s.size() + 1);
    const auto kept = bottom_k(s, k);
    std::vector<char> in(s.size(), 0);
    for (auto i : kept) in[i] = 1;
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (!in[a]) continue;
      ASSERT_FALSE(std::isnan(s[a]));
      for (std::size_t b = 0; b < s.size(); ++b) {
        if (in[b] || std::isnan(s[b])) continue;
        ASSERT_TRUE(s[a] < s[b] || (s[a] == s[b] && a < b));
      }
    }
    std::size_t finite = 0;
    for (double v : s) finite += !std::isnan(v);
    EXPECT_EQ(kept.size(), std::min(k, finite));
  }
}

TEST(FailurePool, RecordsSortedByScore) {
  const auto schedule = make_schedule(ScheduleKind::karras, 4, 0.02, 10.0);
  std::mt19937_64 gen(1);
  std::vector<TrajectoryRecord> recs;
  for (double s : {2.0, 1.0, 3.0}) recs.push_back(test::synthetic_record(gen, 4, 2, 0, s));
  const FailurePool pool(recs, PoolMode::global, schedule.fingerprint(), 0);
  EXPECT_EQ(pool.records()[0].quality_score, 1.0);
  EXPECT_EQ(pool.records()[2].quality_score, 3.0);
}

TEST(FailurePool, SingleRecordSelectionIsDeterministic) {
  const auto schedule = make_schedule(ScheduleKind::karras, 4, 0.02, 10.0);
  const auto pool = test::synthetic_pool(schedule, 1, 2);
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(pool->select(seed, 3), 0u);
  EXPECT_EQ(negative_output(*pool, 2, 7, 0), pool->records()[0].denoiser_outputs[2]);
}

TEST(FailurePool, SelectionIsUniform) {
  const auto schedule = make_schedule(ScheduleKind::karras, 4, 0.02, 10.0);
  const auto pool = test::synthetic_pool(schedule, 8, 2);
  std::vector<int> counts(8, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) ++counts[pool->select(derive_seed(99, seed), 0)];
  for (int c : counts) EXPECT_NEAR(c, 1250, 150);
  EXPECT_EQ(pool->select(12345, 0), pool->select(12345, 0));
}

TEST(FailurePool, PerClassSelectionStaysInBucket) {
  const auto schedule = make_schedule(ScheduleKind::karras, 4, 0.02, 10.0);
  const auto pool = test::synthetic_pool(schedule, 12, 2, PoolMode::per_class, {0, 1, 2});
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    for (int c : {0, 1, 2}) EXPECT_EQ(pool->records()[pool->select(seed, c)].class_id, c);
  }
  EXPECT_EQ(error_kind_of([&] { pool->select(0, 5); }), ErrorKind::not_found);
}

TEST(FailurePool, RejectsInvalidRecords) {
  std::mt19937_64 gen(1);
  auto a = test::synthetic_record(gen, 4, 2, 0, 1.0);
  auto b = test::synthetic_record(gen, 5, 2, 0, 1.0);
  EXPECT_EQ(error_kind_of([&] { FailurePool({a, b}, PoolMode::global, 0, 0); }), ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind_of([&] { FailurePool({}, PoolMode::global, 0, 0); }), ErrorKind::invalid_argument);
  a.denoiser_outputs.clear();
  EXPECT_EQ(error_kind_of([&] { FailurePool({a}, PoolMode::global, 0, 0); }), ErrorKind::invalid_argument);
}

TEST(FailurePool, ScheduleCheck) {
  const auto schedule = make_schedule(ScheduleKind::karras, 4, 0.02, 10.0);
  const auto pool = test::synthetic_pool(schedule, 2, 2);
  EXPECT_NO_THROW(pool->check_schedule(schedule));
  EXPECT_EQ(error_kind_of([&] { pool->check_schedule(make_schedule(ScheduleKind::karras, 4, 0.03, 10.0)); }),
            ErrorKind::incompatible_pool);
  EXPECT_EQ(error_kind_of([&] { pool->cached_output(0, 4); }), ErrorKind::incompatible_pool);
}

TEST(PoolFile, RoundTripIsExactAndResaveIsByteIdentical) {
  test::TempDir dir;
  const auto schedule = make_schedule(ScheduleKind::karras, 128, 0.02, 10.0);
  const auto pool = test::synthetic_pool(schedule, 8, 2, PoolMode::per_class, {0, 3});
  save_pool(*pool, dir / "a.pool");
  EXPECT_EQ(std::filesystem::file_size(dir / "a.pool"), 35u + 8u * trajectory_bytes(128, 2));
  EXPECT_EQ(pool_bytes(8, 128, 2), 35u + 8u * trajectory_bytes(128, 2));
  const FailurePool back = load_pool(dir / "a.pool");
  EXPECT_EQ(back, *pool);
  save_pool(back, dir / "b.pool");
  EXPECT_EQ(test::read_bytes(dir / "a.pool"), test::read_bytes(dir / "b.pool"));
}

TEST(PoolFile, TruncatedAndCorruptFilesRejected) {
  test::TempDir dir;
  const auto schedule = make_schedule(ScheduleKind::karras, 16, 0.02, 10.0);
  save_pool(*test::synthetic_pool(schedule, 3, 2), dir / "a.pool");
  const auto bytes = test::read_bytes(dir / "a.pool");

  test::write_bytes(dir / "cut.pool", bytes.substr(0, bytes.size() - 1));
  try {
    load_pool(dir / "cut.pool");
    FAIL() << "expected malformed_pool";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::malformed_pool);
    EXPECT_TRUE(e.index().has_value());
  }

  auto bad_magic = bytes;
  bad_magic[1] = '?';
  test::write_bytes(dir / "magic.pool", bad_magic);
  EXPECT_EQ(error_kind_of([&] { load_pool(dir / "magic.pool"); }), ErrorKind::malformed_pool);

  test::write_bytes(dir / "extra.pool", bytes + "x");
  EXPECT_EQ(error_kind_of([&] { load_pool(dir / "extra.pool"); }), ErrorKind::malformed_pool);

  auto bad_mode = bytes;
  bad_mode[6] = 7;
  test::write_bytes(dir / "mode.pool", bad_mode);
  EXPECT_EQ(error_kind_of([&] { load_pool(dir / "mode.pool"); }), ErrorKind::malformed_pool);

  EXPECT_EQ(error_kind_of([&] { load_pool(dir / "missing.pool"); }), ErrorKind::io_error);
}

class ConstantScorer final : public QualityScorer {
 public:
  explicit ConstantScorer(double v) : v_(v) {}
  std::string name() const override { return "constant"; }
  double score(const Vector&, int) const override { return v_; }

 private:
  double v_;
};

TEST(BuildPool, RetainsLowQualityTrajectories) {
  const auto spec = std::make_shared<const GmmSpec>(make_preset("imbalanced2d"));
  const auto base = std::make_shared<const AnalyticSource>(spec);
  const SamplerConfig sampler{SamplerMethod::heun, make_schedule(ScheduleKind::karras, 32, 0.02, 10.0), true};
  const ComponentTagScorer scorer(spec);
  PoolBuildConfig cfg;
  cfg.n_candidates = 200;
  cfg.n_f = 8;
  cfg.seed = 3;
  const FailurePool pool = build_pool(base, sampler, scorer, cfg, spec->class_ids(), 0);
  ASSERT_EQ(pool.size(), 8u);
  std::size_t low = 0;
  for (const auto& r : pool.records()) {
    EXPECT_EQ(r.steps(), 32);
    EXPECT_EQ(r.quality_score, static_cast<double>(static_cast<float>(scorer.score(r.final_sample, *r.class_id))));
    low += r.quality_score < 2.0;
  }
  EXPECT_GE(static_cast<double>(low) / pool.size(), 0.9);
  EXPECT_EQ(pool.source_hash(), base->fingerprint());
  EXPECT_NO_THROW(pool.check_schedule(sampler.schedule));
  EXPECT_EQ(build_pool(base, sampler, scorer, cfg, spec->class_ids(), 3), pool);
}

TEST(BuildPool, PerClassKeepsNfPerClass) {
  const auto spec = std::make_shared<const GmmSpec>(make_preset("imbalanced2d"));
  const auto base = std::make_shared<const AnalyticSource>(spec);
  const SamplerConfig sampler{SamplerMethod::euler, make_schedule(ScheduleKind::karras, 8, 0.02, 10.0), false};
  const ComponentTagScorer scorer(spec);
  PoolBuildConfig cfg;
  cfg.n_candidates = 20;
  cfg.n_f = 2;
  cfg.mode = PoolMode::per_class;
  const FailurePool pool = build_pool(base, sampler, scorer, cfg, {1, 4}, 0);
  ASSERT_EQ(pool.size(), 4u);
  EXPECT_EQ(pool.records()[0].class_id, 1);
  EXPECT_EQ(pool.records()[3].class_id, 4);
  EXPECT_TRUE(pool.records()[0].has_outputs());
}

TEST(BuildPool, AllNaNScoresFail) {
  const auto spec = std::make_shared<const GmmSpec>(make_preset("balanced2d"));
  const auto base = std::make_shared<const AnalyticSource>(spec);
  const SamplerConfig sampler{SamplerMethod::euler, make_schedule(ScheduleKind::karras, 4, 0.02, 10.0), true};
  PoolBuildConfig cfg;
  cfg.n_candidates = 4;
  cfg.n_f = 2;
  EXPECT_EQ(error_kind_of([&] { build_pool(base, sampler, ConstantScorer(kNaN), cfg, {0}, 1); }),
            ErrorKind::pool_build_failed);
}

TEST(BuildPool, ConfigValidation) {
  PoolBuildConfig cfg;
  cfg.n_candidates = 4;
  cfg.n_f = 9;
  EXPECT_EQ(error_kind_of([&] { cfg.validate(2); }), ErrorKind::invalid_argument);
  EXPECT_NO_THROW(cfg.validate(3));
  cfg.mode = PoolMode::per_class;
  EXPECT_EQ(error_kind_of([&] { cfg.validate(3); }), ErrorKind::invalid_argument);
  EXPECT_EQ(parse_pool_mode("per-class"), PoolMode::per_class);
  EXPECT_EQ(error_kind_of([] { parse_pool_mode("local"); }), ErrorKind::invalid_argument);
}

}  // namespace
}  // namespace fame
