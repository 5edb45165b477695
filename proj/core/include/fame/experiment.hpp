#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fame/failure_pool.hpp"
#include "fame/gmm.hpp"
#include "fame/guidance.hpp"
#include "fame/metrics.hpp"
#include "fame/mlp.hpp"
#include "fame/sampler.hpp"
#include "fame/schedule.hpp"

namespace fame {

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::karras;
  int steps = 32;
  double sigma_min = 0.02;
  double sigma_max = 10.0;
  double rho = 7.0;

  NoiseSchedule make() const;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct SourceConfig {
  std::string kind = "analytic";  // "analytic" or "neural"
  // Neural only: loaded when it exists, otherwise written after training.
  std::string checkpoint;
  TrainConfig train;

  friend bool operator==(const SourceConfig& a, const SourceConfig& b);
};

struct PoolConfig {
  std::string path;  // load instead of building when set
  std::size_t n_candidates = 200;
  std::size_t n_f = 8;
  PoolMode mode = PoolMode::global;
  std::optional<double> candidate_w;     // defaults to guidance.w
  std::optional<std::uint64_t> seed;     // defaults to the experiment seed

  friend bool operator==(const PoolConfig&, const PoolConfig&) = default;
};

struct ScorerConfig {
  std::string id = "component-tag";
  std::string command;  // external scorer only

  friend bool operator==(const ScorerConfig&, const ScorerConfig&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string dataset = "balanced2d";
  SourceConfig source;
  ScheduleConfig schedule;
  SamplerMethod sampler = SamplerMethod::heun;
  GuidanceConfig guidance;
  PoolConfig pool;
  ScorerConfig scorer;
  TierThresholds thresholds;
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::size_t n_per_class = 200;
  std::size_t n_reference_per_class = 200;
  std::string out_dir = "out";
  std::size_t workers = 0;
  bool save_trajectories = true;

  // Range checks only; paths are checked when a run needs them.
  void validate() const;
  std::filesystem::path run_dir() const;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

// JSON text. Missing keys take defaults; unknown keys are rejected.
ExperimentConfig parse_config(std::string_view text);
std::string format_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

// Lazily resolves the dataset, model and failure pool of a config and caches
// them, so sweeps and paired runs share one model and one pool.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const noexcept { return cfg_; }
  std::shared_ptr<const GmmSpec> spec() const noexcept { return spec_; }
  SamplerConfig sampler_config() const;

  std::shared_ptr<const MlpDenoiser> model();
  std::shared_ptr<const ScoreSource> base_source();
  std::shared_ptr<const FailurePool> pool();
  void set_model(std::shared_ptr<const MlpDenoiser> model);
  void set_pool(std::shared_ptr<const FailurePool> pool);
  bool has_pool() const noexcept { return pool_ != nullptr; }
  const std::optional<TrainReport>& train_report() const noexcept { return train_report_; }

  const QualityScorer& scorer() const noexcept { return *scorer_; }

  // Samples every class with the experiment's seeds under `guidance`.
  std::vector<TrajectoryRecord> sample(const GuidanceConfig& guidance);
  std::vector<TrajectoryRecord> sample() { return sample(cfg_.guidance); }

  SamplesByClass reference() const;
  EvalReport evaluate(const std::vector<TrajectoryRecord>& records) const;
  std::vector<double> scores(const std::vector<TrajectoryRecord>& records) const;

 private:
  ExperimentConfig cfg_;
  std::shared_ptr<const GmmSpec> spec_;
  std::unique_ptr<QualityScorer> scorer_;
  std::shared_ptr<const MlpDenoiser> model_;
  std::shared_ptr<const ScoreSource> source_;
  std::shared_ptr<const FailurePool> pool_;
  std::optional<TrainReport> train_report_;
};

SamplesByClass group_by_class(const std::vector<TrajectoryRecord>& records);

struct PipelineResult {
  EvalReport report;
  std::filesystem::path run_dir;
};

// dataset -> model -> pool -> sample -> evaluate, writing
// <out>/<name>/{config.echo, pool.fmpl, trajectories/, reports/, plots/}.
// A failing stage leaves a FAILED marker naming the stage and rethrows.
PipelineResult run_pipeline(const ExperimentConfig& cfg);
PipelineResult run_pipeline(Experiment& experiment);

// Writes reports and the scatter plot for already-sampled records.
EvalReport write_reports(Experiment& experiment, const std::vector<TrajectoryRecord>& records,
                         const std::filesystem::path& run_dir, const std::string& tag = "samples");

enum class SweepAxis { w, f, tau };
SweepAxis parse_sweep_axis(std::string_view name);
std::string_view to_string(SweepAxis axis);

struct SweepSpec {
  SweepAxis axis = SweepAxis::w;
  std::vector<double> values;
};

struct SweepRow {
  double value = 0.0;
  bool ok = false;
  std::string error;
  EvalReport report;
};

// One evaluation per value, sharing model, pool and seeds. A failing value is
// recorded in its row and the sweep continues.
std::vector<SweepRow> run_sweep(Experiment& experiment, const SweepSpec& sweep);
std::string format_sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows);

struct PairedSample {
  int class_id = 0;
  std::uint64_t seed = 0;
  double score_a = 0.0;
  double score_b = 0.0;
};

struct PairedReport {
  std::vector<PairedSample> pairs;
  double mean_delta = 0.0;  // mean of score_b - score_a
  EvalReport a;
  EvalReport b;
  std::vector<TrajectoryRecord> records_a;
  std::vector<TrajectoryRecord> records_b;
};

// Runs both guidance settings from identical per-trajectory seeds. The
// configs must be equal apart from their guidance.
PairedReport compare_paired(const ExperimentConfig& a, const ExperimentConfig& b);
PairedReport compare_paired(Experiment& experiment, const GuidanceConfig& a, const GuidanceConfig& b);
std::string format_paired_csv(const PairedReport& report);

// Side-by-side scatter of both runs over the reference, colored by mode.
std::string paired_svg(const GmmSpec& spec, const SamplesByClass& reference, const PairedReport& report,
                       const std::string& label_a, const std::string& label_b);

}  // namespace fame
