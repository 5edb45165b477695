#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fame/rng.hpp"
#include "fame/types.hpp"

namespace fame {

struct GmmComponent {
  Vector mean;
  Matrix cov;
  double weight = 1.0;
  // Ground-truth quality of samples from this component; higher is better.
  double quality_tag = 0.0;
};

struct GmmClass {
  int id = 0;
  double prior = 0.0;
  std::vector<GmmComponent> components;
};

// Class-conditional Gaussian mixtures sharing one dimension. Immutable after
// construction; component covariances are eigendecomposed once so noised
// densities (cov + sigma^2 I) are cheap for any sigma.
class GmmSpec {
 public:
  // Validates: shared dimension, SPD covariances, positive weights summing to
  // 1 per class, priors summing to 1. A non-positive prior on every class
  // means "uniform".
  explicit GmmSpec(std::vector<GmmClass> classes);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return classes_.size(); }
  const std::vector<int>& class_ids() const noexcept { return ids_; }
  bool has_class(int class_id) const noexcept;
  const GmmClass& cls(int class_id) const;
  const std::vector<GmmClass>& classes() const noexcept { return classes_; }

  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

  // Flattened view of the components active for a query: the class's own
  // components, or every component weighted by prior * weight.
  struct Kernel {
    double log_weight;
    const Vector* mean;
    const Matrix* eigvecs;
    const Vector* eigvals;
    double quality_tag;
  };
  std::vector<Kernel> kernels(std::optional<int> class_id) const;

 private:
  struct Spectral {
    Matrix vecs;
    Vector vals;
  };
  std::vector<GmmClass> classes_;
  std::vector<int> ids_;
  std::vector<std::vector<Spectral>> spectra_;
  std::size_t dim_ = 0;
  std::uint64_t fingerprint_ = 0;
};

// Log of the mixture density convolved with N(0, sigma^2 I); class-conditional
// when class_id is set, prior-weighted marginal otherwise.
double noised_log_density(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id);

// Exact gradient of noised_log_density with respect to x.
Vector analytic_score(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id);

// E[x0 | x_sigma = x]; equals x + sigma^2 * analytic_score. Requires sigma > 0.
Vector ideal_denoiser(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id);

// Posterior component probabilities, in kernels(class_id) order.
Vector responsibilities(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id);

struct LabeledDraw {
  Vector x;
  int class_id;
  std::size_t component;  // index within the class
};

std::vector<LabeledDraw> exact_sampler_labeled(const GmmSpec& spec, Rng& rng, std::optional<int> class_id,
                                               std::size_t n);
std::vector<Vector> exact_sampler(const GmmSpec& spec, Rng& rng, std::optional<int> class_id, std::size_t n);

// Built-in datasets: "balanced2d" and "imbalanced2d".
std::vector<std::string> preset_names();
GmmSpec make_preset(std::string_view name);

// Structured text (JSON): {"classes": [{"id", "prior", "components": [{"mean",
// "cov", "weight", "quality_tag"}]}]}.
GmmSpec parse_gmm(std::string_view text);
std::string format_gmm(const GmmSpec& spec);
GmmSpec load_gmm(const std::filesystem::path& path);
void save_gmm(const GmmSpec& spec, const std::filesystem::path& path);

// Preset name or path to a GMM file.
GmmSpec resolve_dataset(const std::string& name_or_path);

}  // namespace fame
