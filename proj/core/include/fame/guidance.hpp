#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <utility>

#include "fame/failure_pool.hpp"
#include "fame/gmm.hpp"
#include "fame/sampler.hpp"
#include "fame/types.hpp"

namespace fame {

struct GuidanceConfig {
  double w = 1.5;
  double f = 0.02;
  double tau = 0.3;
  // Normalized-time window [lo, hi] where the CFG term applies; w acts as 1
  // elsewhere.
  std::optional<std::pair<double, double>> cfg_interval;

  void validate() const;
  friend bool operator==(const GuidanceConfig&, const GuidanceConfig&) = default;
};

// w * d1 + (1 - w) * d0; returns d1 unchanged when w == 1.
Vector cfg_combine(const Vector& d1, const Vector& d0, double w);

// (w + f) * d1 + (1 - w) * d0 - f * d_neg
Vector fame_combine(const Vector& d1, const Vector& d0, const Vector& d_neg, double w, double f);

// The failure term is active over the last tau of normalized time.
bool fame_active(double t_norm, double tau) noexcept;
bool cfg_active(double t_norm, const std::optional<std::pair<double, double>>& interval) noexcept;

// Max-abs difference between (cfg_combine(D1, D0, w) - x) / sigma^2 and
// w * score_1 + (1 - w) * score_0, all from the analytic mixture.
double cfg_score_identity_check(const GmmSpec& spec, const Vector& x, double sigma, int class_id, double w);

// Same for the three-term combiner. The failure score is evaluated at the
// replayed point x_neg (class neg_class): its denoiser is D1(x_neg) and its
// score (D1(x_neg) - x) / sigma^2 when expressed at the current state, so the
// score form reads (w + f) s1(x) + (1 - w) s0(x) - f (s1(x_neg) + (x_neg - x) / sigma^2).
double fame_score_identity_check(const GmmSpec& spec, const Vector& x, double sigma, int class_id, double w,
                                 double f, const Vector& x_neg, int neg_class);

// CFG / FaME combiner over a base source. The pool may be null when f == 0.
class GuidedSource final : public ScoreSource {
 public:
  GuidedSource(std::shared_ptr<const ScoreSource> base, std::shared_ptr<const FailurePool> pool, GuidanceConfig cfg,
               const NoiseSchedule& schedule);

  std::size_t dim() const override { return base_->dim(); }
  Denoised denoise(const Vector& x, double sigma, std::optional<int> class_id, const StepContext& ctx) const override;
  std::optional<std::size_t> bind_trajectory(std::uint64_t seed, std::optional<int> class_id) const override;
  std::uint64_t fingerprint() const override { return base_->fingerprint(); }

  const GuidanceConfig& config() const noexcept { return cfg_; }

 private:
  bool uses_pool() const noexcept { return pool_ && cfg_.f != 0.0 && cfg_.tau > 0.0; }

  std::shared_ptr<const ScoreSource> base_;
  std::shared_ptr<const FailurePool> pool_;
  GuidanceConfig cfg_;
};

}  // namespace fame
