#include "fame/guidance.hpp"

#include <cmath>
#include <string>

#include "fame/error.hpp"

namespace fame {

void GuidanceConfig::validate() const {
  if (!std::isfinite(w) || w < 0.0) fail(ErrorKind::invalid_argument, "w must be finite and >= 0");
  if (!std::isfinite(f) || f < 0.0) fail(ErrorKind::invalid_argument, "f must be finite and >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorKind::invalid_argument, "tau must lie in [0, 1]");
  if (cfg_interval) {
    const auto [lo, hi] = *cfg_interval;
    if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) {
      fail(ErrorKind::invalid_argument, "cfg_interval must satisfy 0 <= lo <= hi <= 1");
    }
  }
}

Vector cfg_combine(const Vector& d1, const Vector& d0, double w) {
  if (d1.size() != d0.size()) fail(ErrorKind::invalid_argument, "cfg_combine dimension mismatch");
  if (w == 1.0) return d1;
  return w * d1 + (1.0 - w) * d0;
}

Vector fame_combine(const Vector& d1, const Vector& d0, const Vector& d_neg, double w, double f) {
  if (d1.size() != d0.size() || d1.size() != d_neg.size()) {
    fail(ErrorKind::invalid_argument, "fame_combine dimension mismatch");
  }
  if (f == 0.0) return cfg_combine(d1, d0, w);
  return (w + f) * d1 + (1.0 - w) * d0 - f * d_neg;
}

bool fame_active(double t_norm, double tau) noexcept { return tau > 0.0 && t_norm >= 1.0 - tau; }

bool cfg_active(double t_norm, const std::optional<std::pair<double, double>>& interval) noexcept {
  if (!interval) return true;
  return t_norm >= interval->first && t_norm <= interval->second;
}

double cfg_score_identity_check(const GmmSpec& spec, const Vector& x, double sigma, int class_id, double w) {
  const Vector d1 = ideal_denoiser(spec, x, sigma, class_id);
  const Vector d0 = ideal_denoiser(spec, x, sigma, std::nullopt);
  const Vector lhs = (cfg_combine(d1, d0, w) - x) / (sigma * sigma);
  const Vector rhs =
      w * analytic_score(spec, x, sigma, class_id) + (1.0 - w) * analytic_score(spec, x, sigma, std::nullopt);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

double fame_score_identity_check(const GmmSpec& spec, const Vector& x, double sigma, int class_id, double w,
                                 double f, const Vector& x_neg, int neg_class) {
  const double s2 = sigma * sigma;
  const Vector d1 = ideal_denoiser(spec, x, sigma, class_id);
  const Vector d0 = ideal_denoiser(spec, x, sigma, std::nullopt);
  const Vector d_neg = ideal_denoiser(spec, x_neg, sigma, neg_class);
  const Vector lhs = (fame_combine(d1, d0, d_neg, w, f) - x) / s2;

  const Vector neg_score = analytic_score(spec, x_neg, sigma, neg_class) + (x_neg - x) / s2;
  const Vector rhs = (w + f) * analytic_score(spec, x, sigma, class_id) +
                     (1.0 - w) * analytic_score(spec, x, sigma, std::nullopt) - f * neg_score;
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

GuidedSource::GuidedSource(std::shared_ptr<const ScoreSource> base, std::shared_ptr<const FailurePool> pool,
                           GuidanceConfig cfg, const NoiseSchedule& schedule)
    : base_(std::move(base)), pool_(std::move(pool)), cfg_(cfg) {
  if (!base_) fail(ErrorKind::invalid_argument, "guided source needs a base source");
  cfg_.validate();
  if (cfg_.f > 0.0 && cfg_.tau > 0.0) {
    if (!pool_ || pool_->size() == 0) fail(ErrorKind::invalid_argument, "f > 0 requires a nonempty failure pool");
    if (pool_->steps() != schedule.steps()) {
      fail(ErrorKind::incompatible_pool, "pool has T=" + std::to_string(pool_->steps()) +
                                             " but the schedule has T=" + std::to_string(schedule.steps()));
    }
    pool_->check_schedule(schedule);
    if (pool_->dim() != base_->dim()) fail(ErrorKind::incompatible_pool, "pool dimension differs from the source");
  }
}

std::optional<std::size_t> GuidedSource::bind_trajectory(std::uint64_t seed, std::optional<int> class_id) const {
  if (!uses_pool()) return std::nullopt;
  return pool_->select(seed, class_id);
}

Denoised GuidedSource::denoise(const Vector& x, double sigma, std::optional<int> class_id,
                               const StepContext& ctx) const {
  const double t = ctx.t_norm();
  const double w = cfg_active(t, cfg_.cfg_interval) ? cfg_.w : 1.0;
  const bool fame_on = uses_pool() && fame_active(t, cfg_.tau);

  Vector d1 = base_->denoise(x, sigma, class_id, ctx).output;
  if (!fame_on) {
    if (w == 1.0) return {d1, d1};
    const Vector d0 = base_->denoise(x, sigma, std::nullopt, ctx).output;
    return {cfg_combine(d1, d0, w), std::move(d1)};
  }
  if (!ctx.pool_record) fail(ErrorKind::incompatible_pool, "trajectory has no bound pool record");
  const Vector& d_neg = pool_->cached_output(*ctx.pool_record, ctx.sigma_index);
  const Vector d0 = w == 1.0 ? Vector::Zero(x.size()) : base_->denoise(x, sigma, std::nullopt, ctx).output;
  return {fame_combine(d1, d0, d_neg, w, cfg_.f), std::move(d1)};
}

}  // namespace fame
