#include "fame/failure_pool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "fame/error.hpp"
#include "fame/guidance.hpp"
#include "fame/parallel.hpp"
#include "fame/rng.hpp"
#include "trajectory_io.hpp"

namespace fame {

namespace {

constexpr std::uint64_t kSelectStream = 0x73656c656374ULL;
constexpr std::uint64_t kCandidateStream = 0x63616e646964ULL;

int class_key(const TrajectoryRecord& r) { return r.class_id ? *r.class_id : -1; }

}  // namespace

PoolMode parse_pool_mode(std::string_view name) {
  if (name == "global") return PoolMode::global;
  if (name == "per-class") return PoolMode::per_class;
  fail(ErrorKind::invalid_argument, "unknown pool mode '" + std::string(name) + "'");
}

std::string_view to_string(PoolMode mode) { return mode == PoolMode::global ? "global" : "per-class"; }

FailurePool::FailurePool(std::vector<TrajectoryRecord> records, PoolMode mode, std::uint64_t schedule_hash,
                         std::uint64_t source_hash)
    : records_(std::move(records)), mode_(mode), schedule_hash_(schedule_hash), source_hash_(source_hash) {
  if (records_.empty()) fail(ErrorKind::invalid_argument, "failure pool is empty");
  if (mode_ != PoolMode::global && mode_ != PoolMode::per_class) {
    fail(ErrorKind::invalid_argument, "unknown pool mode");
  }
  const int steps = records_.front().steps();
  const std::size_t dim = records_.front().dim();
  for (const auto& r : records_) {
    r.validate();
    if (!r.has_outputs()) fail(ErrorKind::invalid_argument, "pool records need cached denoiser outputs");
    if (r.steps() != steps || r.dim() != dim) {
      fail(ErrorKind::invalid_argument, "pool records must share one schedule and dimension");
    }
  }
  if (mode_ == PoolMode::global) {
    std::stable_sort(records_.begin(), records_.end(),
                     [](const auto& a, const auto& b) { return a.quality_score < b.quality_score; });
  } else {
    std::stable_sort(records_.begin(), records_.end(), [](const auto& a, const auto& b) {
      if (class_key(a) != class_key(b)) return class_key(a) < class_key(b);
      return a.quality_score < b.quality_score;
    });
    for (std::size_t i = 0; i < records_.size(); ++i) buckets_[class_key(records_[i])].push_back(i);
  }
}

std::size_t FailurePool::select(std::uint64_t trajectory_seed, std::optional<int> class_id) const {
  Rng rng(derive_seed(trajectory_seed, kSelectStream));
  if (mode_ == PoolMode::global) return rng.uniform_index(records_.size());
  const auto it = buckets_.find(class_id ? *class_id : -1);
  if (it == buckets_.end() || it->second.empty()) {
    fail(ErrorKind::not_found,
         "per-class pool has no records for class " + (class_id ? std::to_string(*class_id) : std::string("none")));
  }
  return it->second[rng.uniform_index(it->second.size())];
}

const Vector& FailurePool::cached_output(std::size_t record, int step) const {
  if (record >= records_.size()) fail(ErrorKind::invalid_argument, "pool record index out of range");
  if (step < 0 || step >= steps()) fail(ErrorKind::incompatible_pool, "step outside the pool schedule", step);
  return records_[record].denoiser_outputs[static_cast<std::size_t>(step)];
}

void FailurePool::check_schedule(const NoiseSchedule& schedule) const {
  if (schedule.steps() != steps() || schedule.fingerprint() != schedule_hash_) {
    fail(ErrorKind::incompatible_pool, "pool was built on a different noise schedule");
  }
}

Vector negative_output(const FailurePool& pool, int step, std::uint64_t trajectory_seed,
                       std::optional<int> class_id) {
  return pool.cached_output(pool.select(trajectory_seed, class_id), step);
}

std::vector<std::size_t> bottom_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isnan(scores[i])) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

void PoolBuildConfig::validate(std::size_t num_classes) const {
  if (n_candidates == 0) fail(ErrorKind::invalid_argument, "pool needs n_candidates >= 1");
  if (n_f == 0) fail(ErrorKind::invalid_argument, "pool needs n_f >= 1");
  const std::size_t available = mode == PoolMode::global ? n_candidates * num_classes : n_candidates;
  if (n_f > available) fail(ErrorKind::invalid_argument, "n_f exceeds the number of candidates");
  if (!std::isfinite(candidate_w) || candidate_w < 0.0) {
    fail(ErrorKind::invalid_argument, "candidate w must be finite and >= 0");
  }
}

FailurePool build_pool(std::shared_ptr<const ScoreSource> base, const SamplerConfig& sampler,
                       const QualityScorer& scorer, const PoolBuildConfig& cfg, const std::vector<int>& class_ids,
                       std::size_t workers) {
  if (class_ids.empty()) fail(ErrorKind::invalid_argument, "pool needs at least one class");
  cfg.validate(class_ids.size());

  GuidanceConfig guidance{cfg.candidate_w, 0.0, 0.0, std::nullopt};
  const GuidedSource source(base, nullptr, guidance, sampler.schedule);
  SamplerConfig recorded = sampler;
  recorded.record_outputs = true;

  const std::size_t n_classes = class_ids.size();
  const std::size_t total = cfg.n_candidates * n_classes;
  const std::uint64_t base_seed = derive_seed(cfg.seed, kCandidateStream);
  std::vector<TrajectoryRecord> candidates(total);
  std::vector<char> ok(total, 0);
  parallel_for(total, workers, [&](std::size_t i) {
    const int cls = class_ids[i % n_classes];
    try {
      candidates[i] = sample_one(source, recorded, trajectory_seed(base_seed, cls, i / n_classes), cls);
      ok[i] = 1;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::diverged) throw;
    }
  });

  std::vector<std::size_t> finite;
  for (std::size_t i = 0; i < total; ++i) {
    if (ok[i]) finite.push_back(i);
  }
  if (finite.empty()) fail(ErrorKind::pool_build_failed, "every pool candidate diverged");

  std::vector<Vector> finals;
  std::vector<int> labels;
  finals.reserve(finite.size());
  for (std::size_t i : finite) {
    finals.push_back(candidates[i].final_sample);
    labels.push_back(*candidates[i].class_id);
  }
  const std::vector<double> finite_scores = scorer.score_batch(finals, labels);
  std::vector<double> scores(total, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < finite.size(); ++j) {
    scores[finite[j]] = std::isfinite(finite_scores[j]) ? finite_scores[j] : std::numeric_limits<double>::quiet_NaN();
    candidates[finite[j]].quality_score = finite_scores[j];
  }

  std::vector<std::size_t> keep;
  if (cfg.mode == PoolMode::global) {
    keep = bottom_k(scores, cfg.n_f);
  } else {
    for (std::size_t c = 0; c < n_classes; ++c) {
      std::vector<double> class_scores(total, std::numeric_limits<double>::quiet_NaN());
      for (std::size_t i = c; i < total; i += n_classes) class_scores[i] = scores[i];
      const auto picked = bottom_k(class_scores, cfg.n_f);
      keep.insert(keep.end(), picked.begin(), picked.end());
    }
  }
  if (keep.empty()) fail(ErrorKind::pool_build_failed, "no candidate received a finite score");

  std::vector<TrajectoryRecord> records;
  records.reserve(keep.size());
  for (std::size_t i : keep) records.push_back(quantize_to_f32(std::move(candidates[i])));
  return FailurePool(std::move(records), cfg.mode, sampler.schedule.fingerprint(), base->fingerprint());
}

std::size_t pool_bytes(std::size_t n_f, int steps, std::size_t dim) {
  return kPoolHeaderBytes + n_f * trajectory_bytes(steps, dim);
}

void save_pool(const FailurePool& pool, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.tag("FMPL");
  w.u16(kPoolVersion);
  w.u8(static_cast<std::uint8_t>(pool.mode()));
  w.u32(static_cast<std::uint32_t>(pool.size()));
  w.u32(static_cast<std::uint32_t>(pool.steps()));
  w.u32(static_cast<std::uint32_t>(pool.dim()));
  w.u64(pool.schedule_hash());
  w.u64(pool.source_hash());
  for (const auto& r : pool.records()) detail::write_trajectory(w, r);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path.string() + " for writing");
  w.flush_to(out);
  if (!out) fail(ErrorKind::io_error, "failed writing " + path.string());
}

FailurePool load_pool(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io_error, "cannot open " + path.string());
  detail::ByteReader r(in, ErrorKind::malformed_pool);
  r.expect_tag("FMPL");
  const auto version = r.u16();
  if (version != kPoolVersion) r.error("unsupported pool version " + std::to_string(version));
  const auto mode = r.u8();
  if (mode > 1) r.error("unknown pool mode " + std::to_string(mode));
  const auto n_f = r.u32();
  const auto steps = r.u32();
  const auto dim = r.u32();
  if (n_f == 0 || n_f > (1u << 20)) r.error("implausible pool size");
  const auto schedule_hash = r.u64();
  const auto source_hash = r.u64();
  std::vector<TrajectoryRecord> records;
  records.reserve(n_f);
  for (std::uint32_t i = 0; i < n_f; ++i) {
    const auto at = r.offset();
    TrajectoryRecord rec = detail::read_trajectory(r);
    if (static_cast<std::uint32_t>(rec.steps()) != steps || rec.dim() != dim) {
      fail(ErrorKind::malformed_pool, "pool record disagrees with the header T/d", at);
    }
    records.push_back(std::move(rec));
  }
  if (in.peek() != std::char_traits<char>::eof()) r.error("trailing bytes after the last pool record");
  try {
    return FailurePool(std::move(records), static_cast<PoolMode>(mode), schedule_hash, source_hash);
  } catch (const Error& e) {
    fail(ErrorKind::malformed_pool, e.what(), r.offset());
  }
}

}  // namespace fame
