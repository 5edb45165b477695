#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fame/rng.hpp"
#include "fame/types.hpp"

namespace fame {

enum class ScheduleKind { linear_sigma, karras };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

// Descending noise levels sigma_0 = sigma_max > ... > sigma_T = 0.
class NoiseSchedule {
 public:
  // Validates: T >= 1, strictly decreasing, last entry exactly 0.
  explicit NoiseSchedule(std::vector<double> sigmas);

  const std::vector<double>& sigmas() const noexcept { return sigmas_; }
  int steps() const noexcept { return static_cast<int>(sigmas_.size()) - 1; }
  double sigma_max() const noexcept { return sigmas_.front(); }
  double operator[](int k) const { return sigmas_.at(static_cast<std::size_t>(k)); }

  // Normalized denoising time of step k: 0 at sigma_max, 1 at sigma = 0.
  double t_norm(int k) const noexcept { return static_cast<double>(k) / steps(); }

  // Hash of T and the exact sigma bit patterns.
  std::uint64_t fingerprint() const noexcept;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  std::vector<double> sigmas_;
};

// linear-sigma: T+1 points evenly spaced from sigma_max to sigma_min, the last
// snapped to 0. karras: T points of the rho-ramp from sigma_max to sigma_min
// followed by a terminal 0.
NoiseSchedule make_schedule(ScheduleKind kind, int steps, double sigma_min, double sigma_max,
                            double rho = 7.0);

Vector sample_initial_noise(Rng& rng, std::size_t d, double sigma_max);

struct SampleState {
  Vector x;
  int sigma_index = 0;
  std::optional<int> class_id;
};

}  // namespace fame
