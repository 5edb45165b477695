#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "fame/gmm.hpp"
#include "fame/mlp.hpp"
#include "fame/schedule.hpp"
#include "fame/trajectory.hpp"
#include "fame/types.hpp"

namespace fame {

// Per-evaluation context handed to score sources. sigma_index is the schedule
// position of the sigma being evaluated (the Heun corrector at step k uses
// k + 1), so every gating decision is a pure function of it.
struct StepContext {
  int sigma_index = 0;
  int steps = 1;
  std::uint64_t trajectory_seed = 0;
  // Failure-pool record bound to this trajectory, if the source binds one.
  std::optional<std::size_t> pool_record;

  double t_norm() const noexcept { return static_cast<double>(sigma_index) / steps; }
};

struct Denoised {
  Vector output;       // what the sampler integrates
  Vector conditional;  // D_1(x, sigma, c), recorded for failure replay
};

// Anything that produces a denoiser output. Implementations must be safe for
// concurrent read-only use.
class ScoreSource {
 public:
  virtual ~ScoreSource() = default;

  virtual std::size_t dim() const = 0;
  virtual Denoised denoise(const Vector& x, double sigma, std::optional<int> class_id,
                           const StepContext& ctx) const = 0;

  // Called once per trajectory before the first step.
  virtual std::optional<std::size_t> bind_trajectory(std::uint64_t /*seed*/, std::optional<int> /*class_id*/) const {
    return std::nullopt;
  }

  // Identifies the underlying model or ground truth.
  virtual std::uint64_t fingerprint() const = 0;
};

class AnalyticSource final : public ScoreSource {
 public:
  explicit AnalyticSource(std::shared_ptr<const GmmSpec> spec) : spec_(std::move(spec)) {}

  std::size_t dim() const override { return spec_->dim(); }
  Denoised denoise(const Vector& x, double sigma, std::optional<int> class_id, const StepContext& ctx) const override;
  std::uint64_t fingerprint() const override { return spec_->fingerprint(); }

  const GmmSpec& spec() const noexcept { return *spec_; }

 private:
  std::shared_ptr<const GmmSpec> spec_;
};

class NeuralSource final : public ScoreSource {
 public:
  explicit NeuralSource(std::shared_ptr<const MlpDenoiser> model);

  std::size_t dim() const override { return model_->arch().dim; }
  Denoised denoise(const Vector& x, double sigma, std::optional<int> class_id, const StepContext& ctx) const override;
  std::uint64_t fingerprint() const override { return fingerprint_; }

  const MlpDenoiser& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const MlpDenoiser> model_;
  std::uint64_t fingerprint_;
};

enum class SamplerMethod { euler, heun };

SamplerMethod parse_sampler_method(std::string_view name);
std::string_view to_string(SamplerMethod method);

struct SamplerConfig {
  SamplerMethod method = SamplerMethod::heun;
  NoiseSchedule schedule;
  bool record_outputs = true;
};

// Right-hand side of dx/dsigma = -sigma * score.
Vector ode_rhs(const Vector& score, double sigma);

// Integrates from a given initial state at sigma_max down to sigma = 0.
// Euler: x += (s_{k+1} - s_k) * rhs(x, s_k). Heun adds the trapezoidal
// corrector except on the final step into sigma = 0.
TrajectoryRecord sample_from(const ScoreSource& source, const SamplerConfig& cfg, const Vector& initial,
                             std::optional<int> class_id, std::uint64_t seed);

// Draws the initial noise from `seed` and integrates.
TrajectoryRecord sample_one(const ScoreSource& source, const SamplerConfig& cfg, std::uint64_t seed,
                            std::optional<int> class_id);

// Seed of trajectory `index` of class `class_id` in a batch.
std::uint64_t trajectory_seed(std::uint64_t base_seed, std::optional<int> class_id, std::size_t index);

// Records are class-major: all of class_ids[0], then class_ids[1], ...
// Results do not depend on `workers`.
std::vector<TrajectoryRecord> sample_batch(const ScoreSource& source, const SamplerConfig& cfg,
                                           std::uint64_t base_seed, const std::vector<std::optional<int>>& class_ids,
                                           std::size_t n_per_class, std::size_t workers = 0);

}  // namespace fame
