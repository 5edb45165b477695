#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "fame/gmm.hpp"
#include "fame/types.hpp"

namespace fame {

struct MlpArchitecture {
  std::size_t dim = 2;
  std::size_t num_classes = 8;
  std::size_t hidden_width = 128;
  std::size_t hidden_layers = 3;
  std::size_t fourier_features = 4;  // sin/cos pairs of log-sigma
  std::size_t class_embedding = 16;
  double sigma_data = 0.5;

  std::size_t input_width() const noexcept { return dim + 2 * fourier_features + class_embedding; }
  void validate() const;
  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

// D(x, sigma, c) = c_skip(sigma) x + c_out(sigma) F(c_in(sigma) x, log-sigma
// features, embedding[c]). Embedding row 0 is the null token used for the
// unconditional denoiser; class c uses row c + 1.
class MlpDenoiser {
 public:
  // Hidden layers ~ N(0, 1/fan_in), biases, embeddings and the output layer
  // zero, so a fresh model returns c_skip * x.
  MlpDenoiser(MlpArchitecture arch, std::uint64_t seed);
  MlpDenoiser(MlpArchitecture arch, std::vector<double> params);

  const MlpArchitecture& arch() const noexcept { return arch_; }
  std::size_t num_parameters() const noexcept { return params_.size(); }
  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }

  Vector forward(const Vector& x, double sigma, std::optional<int> class_id) const;

  // Columns of xs are samples.
  Matrix forward_batch(const Matrix& xs, std::span<const double> sigmas,
                       std::span<const std::optional<int>> class_ids) const;

  std::uint64_t fingerprint() const;

  friend bool operator==(const MlpDenoiser&, const MlpDenoiser&) = default;

 private:
  MlpArchitecture arch_;
  std::vector<double> params_;
};

struct TrainingExample {
  Vector x0;
  double sigma = 1.0;
  std::optional<int> class_id;
  Vector noise;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> gradient;
};

// loss = mean over the batch of ||D(x0 + sigma * noise, sigma, c) - x0||^2.
LossAndGrad loss_and_grad(const MlpDenoiser& model, std::span<const TrainingExample> batch);

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 256;
  double learning_rate = 2e-3;
  double sigma_lo = 0.002;
  double sigma_hi = 20.0;
  double label_dropout = 0.1;
  std::uint64_t seed = 0;
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct TrainReport {
  double initial_probe_loss = 0.0;
  double final_probe_loss = 0.0;
  std::vector<double> loss_history;  // one entry per step
};

// Fixed probe batch drawn from its own stream of cfg.seed.
std::vector<TrainingExample> make_probe_batch(const GmmSpec& spec, const TrainConfig& cfg, std::size_t n = 1024);

double probe_loss(const MlpDenoiser& model, std::span<const TrainingExample> batch);

// Returned parameters are rounded to f32 so the model equals its own
// checkpoint exactly.
MlpDenoiser train(const GmmSpec& spec, const TrainConfig& cfg, const MlpArchitecture& arch,
                  TrainReport* report = nullptr);

MlpArchitecture default_architecture(const GmmSpec& spec);

inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const MlpDenoiser& model);
MlpDenoiser read_checkpoint(std::istream& in);
void save_checkpoint(const MlpDenoiser& model, const std::filesystem::path& path);
MlpDenoiser load_checkpoint(const std::filesystem::path& path);

}  // namespace fame
