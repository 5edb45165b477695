#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fame/gmm.hpp"
#include "fame/types.hpp"

namespace fame {

// Per-sample quality estimate, higher is better.
class QualityScorer {
 public:
  virtual ~QualityScorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const Vector& x, int class_id) const = 0;
  virtual std::vector<double> score_batch(std::span<const Vector> xs, std::span<const int> class_ids) const;
};

// sum_i P(component i | x, clean class mixture) * quality_tag_i
double score_component_tag(const GmmSpec& spec, const Vector& x, int class_id);

class ComponentTagScorer final : public QualityScorer {
 public:
  explicit ComponentTagScorer(std::shared_ptr<const GmmSpec> spec) : spec_(std::move(spec)) {}
  std::string name() const override { return "component-tag"; }
  double score(const Vector& x, int class_id) const override { return score_component_tag(*spec_, x, class_id); }

 private:
  std::shared_ptr<const GmmSpec> spec_;
};

// Clean class-conditional log density.
class LogDensityScorer final : public QualityScorer {
 public:
  explicit LogDensityScorer(std::shared_ptr<const GmmSpec> spec) : spec_(std::move(spec)) {}
  std::string name() const override { return "log-density"; }
  double score(const Vector& x, int class_id) const override;

 private:
  std::shared_ptr<const GmmSpec> spec_;
};

// Runs `command` through the shell with one sample per line on stdin
// ("class_id x_1 ... x_d") and expects one numeric score per line on stdout.
std::vector<double> score_external(const std::string& command, std::span<const Vector> samples,
                                   std::span<const int> class_ids);

class ExternalCommandScorer final : public QualityScorer {
 public:
  explicit ExternalCommandScorer(std::string command) : command_(std::move(command)) {}
  std::string name() const override { return "external"; }
  double score(const Vector& x, int class_id) const override;
  std::vector<double> score_batch(std::span<const Vector> xs, std::span<const int> class_ids) const override;

 private:
  std::string command_;
};

// "component-tag", "log-density" or "external" (needs `command`).
std::unique_ptr<QualityScorer> make_scorer(const std::string& id, std::shared_ptr<const GmmSpec> spec,
                                           const std::string& command = {});

// ---------------------------------------------------------------- distances

struct FrechetResult {
  double distance = 0.0;
  bool regularized = false;  // covariance was degenerate; eps * I was added
};

// Squared 2-Wasserstein distance between Gaussian fits of the two sets.
FrechetResult frechet_distance_detailed(std::span<const Vector> a, std::span<const Vector> b);
double frechet_distance(std::span<const Vector> a, std::span<const Vector> b);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// k-NN manifold estimate: precision is the fraction of generated points inside
// some real point's k-NN ball, recall the converse.
PrecisionRecall precision_recall(std::span<const Vector> generated, std::span<const Vector> real, std::size_t k);

struct HistogramKl {
  double kl = 0.0;
  std::size_t smoothed_bins = 0;  // bins whose analytic mass needed smoothing
  std::size_t outside = 0;        // samples that fell outside [lo, hi)
  std::vector<double> bin_masses;
};

// KL(empirical histogram || analytic bin masses) on the projection of the
// samples onto `direction`. Bin masses come from adaptive Simpson quadrature
// of `density` over [lo, hi].
HistogramKl histogram_kl(std::span<const Vector> samples, const std::function<double(double)>& density,
                         const Vector& direction, double lo, double hi, std::size_t bins);

// Density of the projection of a GMM (class-conditional or marginal) onto a
// unit direction.
std::function<double(double)> projected_density(const GmmSpec& spec, std::optional<int> class_id,
                                                const Vector& direction);

// ---------------------------------------------------------------- mode assignment

struct ModeAssignment {
  std::size_t component = 0;  // argmax responsibility within the class
  double quality_tag = 0.0;
  bool outlier = false;       // outside the 99.9% region of every component
};

ModeAssignment assign_mode(const GmmSpec& spec, const Vector& x, int class_id);

// Squared Mahalanobis radius enclosing `mass` of a d-dimensional Gaussian.
double chi_square_quantile(std::size_t d, double mass);

// ---------------------------------------------------------------- reports

enum class QualityTier { low, middle, high };
std::string_view to_string(QualityTier tier);

struct TierThresholds {
  double low = 2.0;
  double high = 2.5;
  QualityTier classify(double mean_score) const;
};

struct ClassQuality {
  int class_id = 0;
  std::size_t n = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double p10 = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  QualityTier tier = QualityTier::middle;
};

struct ClassQualityReport {
  std::vector<ClassQuality> classes;
  ClassQuality global;  // class_id = -1
};

// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> values, double q);

ClassQualityReport class_quality_report(const std::map<int, std::vector<double>>& scores,
                                        const TierThresholds& thresholds);

struct EvalReport {
  double frechet = 0.0;
  bool frechet_regularized = false;
  double precision = 0.0;
  double recall = 0.0;
  double mean_score = 0.0;
  double bad_mode_fraction = 0.0;
  double outlier_fraction = 0.0;
  ClassQualityReport quality;
  std::size_t n_generated = 0;
  std::size_t n_reference = 0;
  std::string config_echo;
};

struct EvalOptions {
  TierThresholds thresholds;
  std::size_t k = 3;
};

using SamplesByClass = std::map<int, std::vector<Vector>>;

// Frechet and precision/recall use the pooled sets (all classes together).
// Bad-mode and outlier fractions use exact responsibilities under `spec`.
EvalReport evaluate(const SamplesByClass& generated, const SamplesByClass& reference, const QualityScorer& scorer,
                    const GmmSpec& spec, const EvalOptions& options = {});

// CSV: class,n,mean_score,p10,p50,p90,tier with one row per class and a
// final "all" row.
std::string format_quality_csv(const ClassQualityReport& report);
std::string format_summary(const EvalReport& report);

}  // namespace fame
