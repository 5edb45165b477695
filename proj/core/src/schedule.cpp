#include "fame/schedule.hpp"

#include <cmath>
#include <string>

#include "fame/error.hpp"
#include "hash.hpp"

namespace fame {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear-sigma") return ScheduleKind::linear_sigma;
  if (name == "karras" || name == "karras-like") return ScheduleKind::karras;
  fail(ErrorKind::invalid_argument, "unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear_sigma ? "linear-sigma" : "karras";
}

NoiseSchedule::NoiseSchedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
  if (sigmas_.size() < 2) {
    fail(ErrorKind::invalid_argument, "schedule needs at least one step");
  }
  if (!(sigmas_.front() > 0.0) || !std::isfinite(sigmas_.front())) {
    fail(ErrorKind::invalid_argument, "sigma_max must be positive and finite");
  }
  if (sigmas_.back() != 0.0) {
    fail(ErrorKind::invalid_argument, "schedule must end at exactly 0");
  }
  for (std::size_t k = 1; k < sigmas_.size(); ++k) {
    if (!(sigmas_[k] < sigmas_[k - 1])) {
      fail(ErrorKind::invalid_argument, "schedule must be strictly decreasing",
           static_cast<std::int64_t>(k));
    }
  }
}

std::uint64_t NoiseSchedule::fingerprint() const noexcept {
  detail::Fnv1a h;
  h.u64(static_cast<std::uint64_t>(steps()));
  for (double s : sigmas_) h.f64(s);
  return h.digest();
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double sigma_min, double sigma_max,
                            double rho) {
  if (steps < 1) {
    fail(ErrorKind::invalid_argument, "schedule needs T >= 1");
  }
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max)) {
    fail(ErrorKind::invalid_argument, "schedule needs 0 < sigma_min < sigma_max");
  }
  std::vector<double> sigmas(static_cast<std::size_t>(steps) + 1);
  switch (kind) {
    case ScheduleKind::linear_sigma: {
      for (int k = 0; k <= steps; ++k) {
        double t = static_cast<double>(k) / steps;
        sigmas[static_cast<std::size_t>(k)] = sigma_max + t * (sigma_min - sigma_max);
      }
      break;
    }
    case ScheduleKind::karras: {
      if (!(rho > 0.0)) {
        fail(ErrorKind::invalid_argument, "karras schedule needs rho > 0");
      }
      sigmas[0] = sigma_max;
      if (steps > 1) {
        double max_inv_rho = std::pow(sigma_max, 1.0 / rho);
        double min_inv_rho = std::pow(sigma_min, 1.0 / rho);
        for (int k = 1; k < steps; ++k) {
          double t = static_cast<double>(k) / (steps - 1);
          sigmas[static_cast<std::size_t>(k)] = std::pow(max_inv_rho + t * (min_inv_rho - max_inv_rho), rho);
        }
      }
      break;
    }
  }
  sigmas.back() = 0.0;
  return NoiseSchedule(std::move(sigmas));
}

Vector sample_initial_noise(Rng& rng, std::size_t d, double sigma_max) {
  if (d == 0) {
    fail(ErrorKind::invalid_argument, "initial noise dimension must be >= 1");
  }
  if (!(sigma_max >= 0.0)) {
    fail(ErrorKind::invalid_argument, "sigma_max must be non-negative");
  }
  return sigma_max * rng.normal_vector(d);
}

}  // namespace fame
