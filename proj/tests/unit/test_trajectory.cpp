#include <sstream>

#include <gtest/gtest.h>

#include "fame/trajectory.hpp"
#include "helpers.hpp"

namespace fame {
namespace {

using test::error_kind_of;
using test::TempDir;
using test::vec;

TrajectoryRecord make_record(int steps, int d, std::uint64_t seed, std::optional<int> cls) {
  std::mt19937_64 gen(seed);
  TrajectoryRecord rec;
  rec.seed = seed;
  rec.class_id = cls;
  for (int k = 0; k <= steps; ++k) rec.states.push_back(test::random_vector(gen, d, 2.0));
  for (int k = 0; k < steps; ++k) rec.denoiser_outputs.push_back(test::random_vector(gen, d, 1.0));
  rec.final_sample = rec.states.back();
  rec.quality_score = 2.25;
  return quantize_to_f32(rec);
}

TEST(Trajectory, RoundTripIsExactForQuantizedRecords) {
  const auto rec = make_record(7, 3, 5, 2);
  std::stringstream buf;
  write_trajectory(buf, rec);
  EXPECT_EQ(buf.str().size(), trajectory_bytes(7, 3));
  EXPECT_EQ(read_trajectory(buf), rec);
}

TEST(Trajectory, UnconditionalClassSurvivesRoundTrip) {
  const auto rec = make_record(2, 1, 9, std::nullopt);
  std::stringstream buf;
  write_trajectory(buf, rec);
  EXPECT_FALSE(read_trajectory(buf).class_id.has_value());
}

TEST(Trajectory, ExactSizes) {
  EXPECT_EQ(kTrajectoryHeaderBytes, 30u);
  EXPECT_EQ(trajectory_bytes(1, 1), 30u + 3u * 4u);
  EXPECT_EQ(trajectory_bytes(128, 2), 30u + (129u * 2u + 128u * 2u) * 4u);
}

TEST(Trajectory, FileRoundTripOfSeveralRecords) {
  TempDir dir;
  std::vector<TrajectoryRecord> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(make_record(4, 2, static_cast<std::uint64_t>(i), i));
  save_trajectories(dir / "t.bin", recs);
  EXPECT_EQ(std::filesystem::file_size(dir / "t.bin"), 5 * trajectory_bytes(4, 2));
  EXPECT_EQ(load_trajectories(dir / "t.bin"), recs);
}

TEST(Trajectory, TruncatedFileReportsOffset) {
  TempDir dir;
  save_trajectories(dir / "t.bin", {make_record(4, 2, 1, 0)});
  const auto bytes = test::read_bytes(dir / "t.bin");
  test::write_bytes(dir / "cut.bin", bytes.substr(0, bytes.size() - 3));
  try {
    load_trajectories(dir / "cut.bin");
    FAIL() << "expected malformed_file";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::malformed_file);
    ASSERT_TRUE(e.index().has_value());
    EXPECT_GE(*e.index(), static_cast<std::int64_t>(kTrajectoryHeaderBytes));
    EXPECT_LE(*e.index(), static_cast<std::int64_t>(bytes.size()));
  }
}

TEST(Trajectory, BadMagicRejected) {
  TempDir dir;
  save_trajectories(dir / "t.bin", {make_record(2, 2, 1, 0)});
  auto bytes = test::read_bytes(dir / "t.bin");
  bytes[0] = 'X';
  test::write_bytes(dir / "bad.bin", bytes);
  EXPECT_EQ(error_kind_of([&] { load_trajectories(dir / "bad.bin"); }), ErrorKind::malformed_file);
}

TEST(Trajectory, UnrecordedTrajectoryCannotBeSerialized) {
  auto rec = make_record(2, 2, 1, 0);
  rec.denoiser_outputs.clear();
  std::stringstream buf;
  EXPECT_EQ(error_kind_of([&] { write_trajectory(buf, rec); }), ErrorKind::invalid_argument);
}

TEST(Trajectory, ValidateCatchesInconsistentRecords) {
  auto rec = make_record(3, 2, 1, 0);
  rec.final_sample = vec({100.0, 100.0});
  EXPECT_EQ(error_kind_of([&] { rec.validate(); }), ErrorKind::invalid_argument);
  auto rec2 = make_record(3, 2, 1, 0);
  rec2.denoiser_outputs.pop_back();
  EXPECT_EQ(error_kind_of([&] { rec2.validate(); }), ErrorKind::invalid_argument);
}

TEST(Trajectory, QuantizeIsIdempotent) {
  const auto rec = make_record(3, 2, 4, 1);
  EXPECT_EQ(quantize_to_f32(rec), rec);
}

}  // namespace
}  // namespace fame
