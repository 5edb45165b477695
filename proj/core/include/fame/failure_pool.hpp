#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fame/metrics.hpp"
#include "fame/sampler.hpp"
#include "fame/trajectory.hpp"

namespace fame {

enum class PoolMode : std::uint8_t { global = 0, per_class = 1 };

PoolMode parse_pool_mode(std::string_view name);
std::string_view to_string(PoolMode mode);

// The lowest-quality trajectories of a candidate batch, with their cached
// per-step conditional denoiser outputs.
class FailurePool {
 public:
  // Validates that every record carries outputs and shares T and d. Records
  // are stably sorted ascending by quality score (grouped by class first in
  // per-class mode).
  FailurePool(std::vector<TrajectoryRecord> records, PoolMode mode, std::uint64_t schedule_hash,
              std::uint64_t source_hash);

  const std::vector<TrajectoryRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  PoolMode mode() const noexcept { return mode_; }
  int steps() const noexcept { return records_.front().steps(); }
  std::size_t dim() const noexcept { return records_.front().dim(); }
  std::uint64_t schedule_hash() const noexcept { return schedule_hash_; }
  std::uint64_t source_hash() const noexcept { return source_hash_; }

  // Record bound to a trajectory: uniform over the pool (global) or over the
  // class bucket (per-class), driven only by the trajectory seed.
  std::size_t select(std::uint64_t trajectory_seed, std::optional<int> class_id) const;

  const Vector& cached_output(std::size_t record, int step) const;

  // Throws incompatible-pool unless the pool was built on this schedule.
  void check_schedule(const NoiseSchedule& schedule) const;

  friend bool operator==(const FailurePool&, const FailurePool&) = default;

 private:
  std::vector<TrajectoryRecord> records_;
  PoolMode mode_;
  std::uint64_t schedule_hash_;
  std::uint64_t source_hash_;
  std::map<int, std::vector<std::size_t>> buckets_;
};

// d_neg for one step of the trajectory with this seed.
Vector negative_output(const FailurePool& pool, int step, std::uint64_t trajectory_seed, std::optional<int> class_id);

// Indices of the k smallest scores, ties by index; NaN scores are never kept.
std::vector<std::size_t> bottom_k(std::span<const double> scores, std::size_t k);

struct PoolBuildConfig {
  std::size_t n_candidates = 200;  // per class
  std::size_t n_f = 8;             // total (global) or per class
  PoolMode mode = PoolMode::global;
  double candidate_w = 1.5;        // CFG scale used to draw candidates
  std::uint64_t seed = 0;

  void validate(std::size_t num_classes) const;
};

// Samples n_candidates CFG trajectories per class, scores the final samples
// and keeps the n_f worst. Candidate i is trajectory i / C of class
// class_ids[i % C], which is also the tie-breaking order.
FailurePool build_pool(std::shared_ptr<const ScoreSource> base, const SamplerConfig& sampler,
                       const QualityScorer& scorer, const PoolBuildConfig& cfg, const std::vector<int>& class_ids,
                       std::size_t workers = 0);

// Binary container, little-endian:
//   "FMPL" | version u16 | mode u8 | n_f u32 | T u32 | d u32 |
//   schedule hash u64 | source hash u64 | n_f trajectory records
inline constexpr std::uint16_t kPoolVersion = 1;
inline constexpr std::size_t kPoolHeaderBytes = 4 + 2 + 1 + 4 + 4 + 4 + 8 + 8;

std::size_t pool_bytes(std::size_t n_f, int steps, std::size_t dim);

void save_pool(const FailurePool& pool, const std::filesystem::path& path);
FailurePool load_pool(const std::filesystem::path& path);

}  // namespace fame
