#include "fame/sampler.hpp"

#include <string>

#include "fame/error.hpp"
#include "fame/parallel.hpp"

namespace fame {

Denoised AnalyticSource::denoise(const Vector& x, double sigma, std::optional<int> class_id,
                                 const StepContext& /*ctx*/) const {
  Vector d = ideal_denoiser(*spec_, x, sigma, class_id);
  return {d, d};
}

NeuralSource::NeuralSource(std::shared_ptr<const MlpDenoiser> model)
    : model_(std::move(model)), fingerprint_(model_->fingerprint()) {}

Denoised NeuralSource::denoise(const Vector& x, double sigma, std::optional<int> class_id,
                               const StepContext& /*ctx*/) const {
  Vector d = model_->forward(x, sigma, class_id);
  return {d, d};
}

SamplerMethod parse_sampler_method(std::string_view name) {
  if (name == "euler") return SamplerMethod::euler;
  if (name == "heun") return SamplerMethod::heun;
  fail(ErrorKind::invalid_argument, "unknown sampler method '" + std::string(name) + "'");
}

std::string_view to_string(SamplerMethod method) { return method == SamplerMethod::euler ? "euler" : "heun"; }

Vector ode_rhs(const Vector& score, double sigma) { return -sigma * score; }

namespace {

// rhs expressed through the denoiser: score = (D - x) / sigma^2.
Vector slope(const Vector& x, const Vector& denoised, double sigma) {
  const Vector score = (denoised - x) / (sigma * sigma);
  return ode_rhs(score, sigma);
}

void check_finite(const Vector& v, int step) {
  if (!v.allFinite()) fail(ErrorKind::diverged, "sampler state became non-finite", step);
}

}  // namespace

TrajectoryRecord sample_from(const ScoreSource& source, const SamplerConfig& cfg, const Vector& initial,
                             std::optional<int> class_id, std::uint64_t seed) {
  const NoiseSchedule& sched = cfg.schedule;
  const int steps = sched.steps();
  if (static_cast<std::size_t>(initial.size()) != source.dim()) {
    fail(ErrorKind::invalid_argument, "initial state dimension does not match the score source");
  }

  TrajectoryRecord rec;
  rec.seed = seed;
  rec.class_id = class_id;
  rec.states.reserve(static_cast<std::size_t>(steps) + 1);
  if (cfg.record_outputs) rec.denoiser_outputs.reserve(static_cast<std::size_t>(steps));

  StepContext ctx;
  ctx.steps = steps;
  ctx.trajectory_seed = seed;
  ctx.pool_record = source.bind_trajectory(seed, class_id);

  SampleState state{initial, 0, class_id};
  check_finite(state.x, 0);
  rec.states.push_back(state.x);
  for (int k = 0; k < steps; ++k) {
    const double sigma = sched[k];
    const double next = sched[k + 1];
    ctx.sigma_index = k;
    Denoised den = source.denoise(state.x, sigma, class_id, ctx);
    if (cfg.record_outputs) rec.denoiser_outputs.push_back(den.conditional);
    const Vector d1 = slope(state.x, den.output, sigma);
    Vector x_next = state.x + (next - sigma) * d1;
    if (cfg.method == SamplerMethod::heun && next > 0.0) {
      check_finite(x_next, k);
      ctx.sigma_index = k + 1;
      const Denoised den2 = source.denoise(x_next, next, class_id, ctx);
      const Vector d2 = slope(x_next, den2.output, next);
      x_next = state.x + (next - sigma) * (0.5 * (d1 + d2));
    }
    check_finite(x_next, k);
    state.x = std::move(x_next);
    state.sigma_index = k + 1;
    rec.states.push_back(state.x);
  }
  rec.final_sample = rec.states.back();
  return rec;
}

TrajectoryRecord sample_one(const ScoreSource& source, const SamplerConfig& cfg, std::uint64_t seed,
                            std::optional<int> class_id) {
  Rng rng(seed);
  const Vector initial = sample_initial_noise(rng, source.dim(), cfg.schedule.sigma_max());
  return sample_from(source, cfg, initial, class_id, seed);
}

std::uint64_t trajectory_seed(std::uint64_t base_seed, std::optional<int> class_id, std::size_t index) {
  const std::uint64_t cls = class_id ? static_cast<std::uint64_t>(*class_id) + 1 : 0;
  return derive_seed(base_seed, cls, index);
}

std::vector<TrajectoryRecord> sample_batch(const ScoreSource& source, const SamplerConfig& cfg,
                                           std::uint64_t base_seed, const std::vector<std::optional<int>>& class_ids,
                                           std::size_t n_per_class, std::size_t workers) {
  if (n_per_class == 0) fail(ErrorKind::invalid_argument, "sample_batch needs n_per_class >= 1");
  const std::size_t total = class_ids.size() * n_per_class;
  std::vector<TrajectoryRecord> out(total);
  parallel_for(total, workers, [&](std::size_t i) {
    const auto& cls = class_ids[i / n_per_class];
    const std::size_t index = i % n_per_class;
    try {
      out[i] = sample_one(source, cfg, trajectory_seed(base_seed, cls, index), cls);
    } catch (const Error& e) {
      const std::string tag = "class " + (cls ? std::to_string(*cls) : std::string("none")) + ", index " +
                              std::to_string(index) + ": ";
      throw Error(e.kind(), tag + e.what(), e.index());
    }
  });
  return out;
}

}  // namespace fame
