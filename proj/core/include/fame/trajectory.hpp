#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fame/types.hpp"

namespace fame {

// One deterministic sampling run. states has T+1 entries (states[0] is the
// initial noise, states[T] the final sample); denoiser_outputs holds the
// conditional denoiser output at each of the T steps, or is empty when the
// run was not recorded.
struct TrajectoryRecord {
  std::uint64_t seed = 0;
  std::optional<int> class_id;
  std::vector<Vector> states;
  std::vector<Vector> denoiser_outputs;
  Vector final_sample;
  double quality_score = 0.0;

  int steps() const noexcept { return states.empty() ? 0 : static_cast<int>(states.size()) - 1; }
  std::size_t dim() const noexcept { return states.empty() ? 0 : static_cast<std::size_t>(states.front().size()); }
  bool has_outputs() const noexcept { return !denoiser_outputs.empty(); }

  // Throws invalid-argument when lengths or dimensions disagree.
  void validate() const;

  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

// Rounds every stored value to the nearest f32, i.e. to exactly what the
// binary container can represent.
TrajectoryRecord quantize_to_f32(TrajectoryRecord record);

// Binary container, little-endian:
//   "FAME" | version u16 | T u32 | d u32 | class_id i32 (-1: none) | seed u64 |
//   quality_score f32 | states (T+1)*d f32 | denoiser outputs T*d f32
inline constexpr std::uint16_t kTrajectoryVersion = 1;
inline constexpr std::size_t kTrajectoryHeaderBytes = 4 + 2 + 4 + 4 + 4 + 8 + 4;

std::size_t trajectory_bytes(int steps, std::size_t dim);

void write_trajectory(std::ostream& out, const TrajectoryRecord& record);
TrajectoryRecord read_trajectory(std::istream& in);

void save_trajectories(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records);
std::vector<TrajectoryRecord> load_trajectories(const std::filesystem::path& path);

}  // namespace fame
