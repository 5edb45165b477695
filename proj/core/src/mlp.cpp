#include "fame/mlp.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "fame/error.hpp"
#include "hash.hpp"

namespace fame {

namespace {

struct Dense {
  std::size_t w = 0;  // offset of the (out x in) column-major weight block
  std::size_t b = 0;
  Eigen::Index in = 0;
  Eigen::Index out = 0;
};

struct Layout {
  std::size_t embedding = 0;
  std::vector<Dense> layers;
  std::size_t total = 0;
};

Layout layout_of(const MlpArchitecture& a) {
  Layout l;
  std::size_t at = 0;
  l.embedding = at;
  at += a.class_embedding * (a.num_classes + 1);
  auto add = [&](std::size_t in, std::size_t out) {
    Dense d{at, at + in * out, static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)};
    at += in * out + out;
    l.layers.push_back(d);
  };
  add(a.input_width(), a.hidden_width);
  for (std::size_t i = 1; i < a.hidden_layers; ++i) add(a.hidden_width, a.hidden_width);
  add(a.hidden_width, a.dim);
  l.total = at;
  return l;
}

struct Precond {
  double skip, out, in, noise;
};

Precond precond(double sigma, double sigma_data) {
  const double s2 = sigma * sigma;
  const double d2 = sigma_data * sigma_data;
  return {d2 / (s2 + d2), sigma * sigma_data / std::sqrt(s2 + d2), 1.0 / std::sqrt(s2 + d2), std::log(sigma) / 4.0};
}

double silu(double z) { return z / (1.0 + std::exp(-z)); }

double silu_grad(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

Eigen::Index embedding_row(const MlpArchitecture& a, std::optional<int> class_id) {
  if (!class_id || *class_id == -1) return 0;
  if (*class_id < 0 || static_cast<std::size_t>(*class_id) >= a.num_classes) {
    fail(ErrorKind::invalid_argument, "class id outside the model's embedding table", *class_id);
  }
  return static_cast<Eigen::Index>(*class_id) + 1;
}

struct Pass {
  std::vector<Precond> pc;
  std::vector<Eigen::Index> rows;
  std::vector<Matrix> pre;  // pre-activations of the hidden layers
  std::vector<Matrix> act;  // act[0] = network input, act[i] = silu(pre[i-1])
  Matrix net_out;           // F
  Matrix denoised;          // D
};

void run_forward(const MlpArchitecture& a, const Layout& lay, std::span<const double> params, const Matrix& xs,
                 std::span<const double> sigmas, std::span<const std::optional<int>> class_ids, Pass& p) {
  const Eigen::Index batch = xs.cols();
  if (static_cast<std::size_t>(xs.rows()) != a.dim) {
    fail(ErrorKind::invalid_argument, "input dimension does not match the model");
  }
  if (sigmas.size() != static_cast<std::size_t>(batch) || class_ids.size() != static_cast<std::size_t>(batch)) {
    fail(ErrorKind::invalid_argument, "batch arrays disagree in length");
  }
  const auto dim = static_cast<Eigen::Index>(a.dim);
  const auto nf = static_cast<Eigen::Index>(a.fourier_features);
  const auto emb = static_cast<Eigen::Index>(a.class_embedding);
  Eigen::Map<const Matrix> table(params.data() + lay.embedding, emb, static_cast<Eigen::Index>(a.num_classes + 1));

  p.pc.resize(static_cast<std::size_t>(batch));
  p.rows.resize(static_cast<std::size_t>(batch));
  Matrix input(static_cast<Eigen::Index>(a.input_width()), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double sigma = sigmas[static_cast<std::size_t>(b)];
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      fail(ErrorKind::invalid_argument, "neural denoiser needs a positive finite sigma");
    }
    const Precond pc = precond(sigma, a.sigma_data);
    p.pc[static_cast<std::size_t>(b)] = pc;
    const Eigen::Index row = embedding_row(a, class_ids[static_cast<std::size_t>(b)]);
    p.rows[static_cast<std::size_t>(b)] = row;
    input.col(b).head(dim) = pc.in * xs.col(b);
    for (Eigen::Index f = 0; f < nf; ++f) {
      const double omega = 0.5 * std::numbers::pi * static_cast<double>(1 << f);
      input(dim + 2 * f, b) = std::sin(omega * pc.noise);
      input(dim + 2 * f + 1, b) = std::cos(omega * pc.noise);
    }
    input.col(b).tail(emb) = table.col(row);
  }

  p.act.clear();
  p.pre.clear();
  p.act.push_back(std::move(input));
  for (std::size_t l = 0; l < lay.layers.size(); ++l) {
    const Dense& d = lay.layers[l];
    Eigen::Map<const Matrix> w(params.data() + d.w, d.out, d.in);
    Eigen::Map<const Vector> bias(params.data() + d.b, d.out);
    Matrix z = w * p.act.back();
    z.colwise() += bias;
    if (l + 1 == lay.layers.size()) {
      p.net_out = std::move(z);
    } else {
      p.act.push_back(z.unaryExpr(&silu));
      p.pre.push_back(std::move(z));
    }
  }
  p.denoised.resize(dim, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Precond& pc = p.pc[static_cast<std::size_t>(b)];
    p.denoised.col(b) = pc.skip * xs.col(b) + pc.out * p.net_out.col(b);
  }
}

}  // namespace

void MlpArchitecture::validate() const {
  if (dim == 0 || num_classes == 0 || hidden_width == 0 || hidden_layers == 0 || class_embedding == 0) {
    fail(ErrorKind::invalid_argument, "MLP architecture sizes must be positive");
  }
  if (fourier_features > 16) fail(ErrorKind::invalid_argument, "at most 16 Fourier features");
  if (!(sigma_data > 0.0)) fail(ErrorKind::invalid_argument, "sigma_data must be positive");
}

MlpDenoiser::MlpDenoiser(MlpArchitecture arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  const Layout lay = layout_of(arch_);
  params_.assign(lay.total, 0.0);
  Rng rng(derive_seed(seed, 0x1217));
  for (std::size_t l = 0; l + 1 < lay.layers.size(); ++l) {
    const Dense& d = lay.layers[l];
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.in));
    for (std::size_t i = 0; i < static_cast<std::size_t>(d.in * d.out); ++i) params_[d.w + i] = scale * rng.normal();
  }
}

MlpDenoiser::MlpDenoiser(MlpArchitecture arch, std::vector<double> params) : arch_(arch), params_(std::move(params)) {
  arch_.validate();
  if (params_.size() != layout_of(arch_).total) {
    fail(ErrorKind::invalid_argument, "parameter count does not match the architecture");
  }
  for (double p : params_) {
    if (!std::isfinite(p)) fail(ErrorKind::invalid_argument, "non-finite model parameter");
  }
}

Vector MlpDenoiser::forward(const Vector& x, double sigma, std::optional<int> class_id) const {
  const double sigmas[1] = {sigma};
  const std::optional<int> classes[1] = {class_id};
  return forward_batch(x, sigmas, classes).col(0);
}

Matrix MlpDenoiser::forward_batch(const Matrix& xs, std::span<const double> sigmas,
                                  std::span<const std::optional<int>> class_ids) const {
  Pass p;
  run_forward(arch_, layout_of(arch_), params_, xs, sigmas, class_ids, p);
  return std::move(p.denoised);
}

std::uint64_t MlpDenoiser::fingerprint() const {
  std::ostringstream out;
  write_checkpoint(out, *this);
  detail::Fnv1a h;
  h.str(out.str());
  return h.digest();
}

LossAndGrad loss_and_grad(const MlpDenoiser& model, std::span<const TrainingExample> batch) {
  if (batch.empty()) fail(ErrorKind::invalid_argument, "loss_and_grad needs a non-empty batch");
  const MlpArchitecture& a = model.arch();
  const Layout lay = layout_of(a);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto dim = static_cast<Eigen::Index>(a.dim);

  Matrix xs(dim, n);
  Matrix targets(dim, n);
  std::vector<double> sigmas(batch.size());
  std::vector<std::optional<int>> classes(batch.size());
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& ex = batch[static_cast<std::size_t>(b)];
    if (ex.x0.size() != dim || ex.noise.size() != dim) {
      fail(ErrorKind::invalid_argument, "training example dimension mismatch");
    }
    xs.col(b) = ex.x0 + ex.sigma * ex.noise;
    targets.col(b) = ex.x0;
    sigmas[static_cast<std::size_t>(b)] = ex.sigma;
    classes[static_cast<std::size_t>(b)] = ex.class_id;
  }

  Pass p;
  run_forward(a, lay, model.parameters(), xs, sigmas, classes, p);
  const Matrix residual = p.denoised - targets;
  LossAndGrad out;
  out.loss = residual.squaredNorm() / static_cast<double>(n);
  if (!std::isfinite(out.loss)) {
    fail(ErrorKind::training_diverged, "non-finite loss");
  }

  out.gradient.assign(lay.total, 0.0);
  auto params = model.parameters();
  Matrix delta(dim, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    delta.col(b) = (2.0 / static_cast<double>(n)) * p.pc[static_cast<std::size_t>(b)].out * residual.col(b);
  }
  for (std::size_t li = lay.layers.size(); li-- > 0;) {
    const Dense& d = lay.layers[li];
    Eigen::Map<const Matrix> w(params.data() + d.w, d.out, d.in);
    Eigen::Map<Matrix> gw(out.gradient.data() + d.w, d.out, d.in);
    Eigen::Map<Vector> gb(out.gradient.data() + d.b, d.out);
    gw.noalias() = delta * p.act[li].transpose();
    gb = delta.rowwise().sum();
    Matrix back = w.transpose() * delta;
    if (li > 0) {
      delta = back.cwiseProduct(p.pre[li - 1].unaryExpr(&silu_grad));
    } else {
      const auto emb = static_cast<Eigen::Index>(a.class_embedding);
      Eigen::Map<Matrix> gtable(out.gradient.data() + lay.embedding, emb, static_cast<Eigen::Index>(a.num_classes + 1));
      for (Eigen::Index b = 0; b < n; ++b) {
        gtable.col(p.rows[static_cast<std::size_t>(b)]) += back.col(b).tail(emb);
      }
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (steps == 0 || batch_size == 0 || !(learning_rate > 0.0)) {
    fail(ErrorKind::invalid_argument, "training needs positive steps, batch size and learning rate");
  }
  if (!(label_dropout >= 0.0 && label_dropout <= 1.0)) {
    fail(ErrorKind::invalid_argument, "label dropout must lie in [0, 1]");
  }
  if (!(sigma_lo > 0.0) || !(sigma_hi > sigma_lo)) {
    fail(ErrorKind::invalid_argument, "training sigma range must satisfy 0 < lo < hi");
  }
}

namespace {

std::vector<TrainingExample> draw_batch(const GmmSpec& spec, const TrainConfig& cfg, Rng& rng, std::size_t n,
                                        bool dropout) {
  auto draws = exact_sampler_labeled(spec, rng, std::nullopt, n);
  const double log_lo = std::log(cfg.sigma_lo);
  const double log_hi = std::log(cfg.sigma_hi);
  std::vector<TrainingExample> batch;
  batch.reserve(n);
  for (auto& d : draws) {
    TrainingExample ex;
    ex.x0 = std::move(d.x);
    ex.sigma = std::exp(log_lo + rng.uniform() * (log_hi - log_lo));
    ex.class_id = d.class_id;
    if (dropout && rng.uniform() < cfg.label_dropout) ex.class_id.reset();
    ex.noise = rng.normal_vector(spec.dim());
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace

std::vector<TrainingExample> make_probe_batch(const GmmSpec& spec, const TrainConfig& cfg, std::size_t n) {
  Rng rng(derive_seed(cfg.seed, 0x9208));
  return draw_batch(spec, cfg, rng, n, false);
}

double probe_loss(const MlpDenoiser& model, std::span<const TrainingExample> batch) {
  return loss_and_grad(model, batch).loss;
}

MlpArchitecture default_architecture(const GmmSpec& spec) {
  MlpArchitecture a;
  a.dim = spec.dim();
  a.num_classes = static_cast<std::size_t>(spec.class_ids().back()) + 1;
  return a;
}

MlpDenoiser train(const GmmSpec& spec, const TrainConfig& cfg, const MlpArchitecture& arch, TrainReport* report) {
  cfg.validate();
  if (arch.dim != spec.dim()) fail(ErrorKind::invalid_argument, "architecture dimension does not match the dataset");
  if (static_cast<std::size_t>(spec.class_ids().back()) >= arch.num_classes) {
    fail(ErrorKind::invalid_argument, "dataset class ids exceed the model's embedding table");
  }
  MlpDenoiser model(arch, cfg.seed);
  const auto probe = make_probe_batch(spec, cfg);
  if (report) {
    report->initial_probe_loss = probe_loss(model, probe);
    report->loss_history.clear();
    report->loss_history.reserve(cfg.steps);
  }

  Rng rng(derive_seed(cfg.seed, 0x7a11));
  auto params = model.parameters();
  std::vector<double> m(params.size(), 0.0);
  std::vector<double> v(params.size(), 0.0);
  double beta1_t = 1.0;
  double beta2_t = 1.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = draw_batch(spec, cfg, rng, cfg.batch_size, true);
    LossAndGrad lg;
    try {
      lg = loss_and_grad(model, batch);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::training_diverged) {
        fail(ErrorKind::training_diverged, "loss became non-finite", static_cast<std::int64_t>(step));
      }
      throw;
    }
    if (report) report->loss_history.push_back(lg.loss);
    beta1_t *= cfg.beta1;
    beta2_t *= cfg.beta2;
    const double lr = cfg.learning_rate * std::sqrt(1.0 - beta2_t) / (1.0 - beta1_t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = lg.gradient[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      params[i] -= lr * m[i] / (std::sqrt(v[i]) + cfg.epsilon);
    }
  }
  for (double& p : params) {
    p = static_cast<double>(static_cast<float>(p));
    if (!std::isfinite(p)) fail(ErrorKind::training_diverged, "parameters became non-finite", static_cast<std::int64_t>(cfg.steps));
  }
  if (report) report->final_probe_loss = probe_loss(model, probe);
  return model;
}

// ---------------------------------------------------------------- checkpoint

void write_checkpoint(std::ostream& out, const MlpDenoiser& model) {
  const auto& a = model.arch();
  detail::ByteWriter w;
  w.tag("FMLP");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(a.dim));
  w.u32(static_cast<std::uint32_t>(a.num_classes));
  w.u32(static_cast<std::uint32_t>(a.hidden_width));
  w.u32(static_cast<std::uint32_t>(a.hidden_layers));
  w.u32(static_cast<std::uint32_t>(a.fourier_features));
  w.u32(static_cast<std::uint32_t>(a.class_embedding));
  w.f32(static_cast<float>(a.sigma_data));
  w.u64(model.num_parameters());
  for (double p : model.parameters()) w.f32(static_cast<float>(p));
  w.flush_to(out);
  if (!out) fail(ErrorKind::io_error, "failed writing checkpoint");
}

MlpDenoiser read_checkpoint(std::istream& in) {
  detail::ByteReader r(in, ErrorKind::malformed_file);
  r.expect_tag("FMLP");
  const auto version = r.u16();
  if (version != kCheckpointVersion) r.error("unsupported checkpoint version " + std::to_string(version));
  MlpArchitecture a;
  a.dim = r.u32();
  a.num_classes = r.u32();
  a.hidden_width = r.u32();
  a.hidden_layers = r.u32();
  a.fourier_features = r.u32();
  a.class_embedding = r.u32();
  a.sigma_data = r.f32();
  const auto count = r.u64();
  if (a.dim == 0 || a.dim > 4096 || a.hidden_width > 65536 || a.hidden_layers > 64 || a.num_classes > 1u << 20 ||
      a.class_embedding > 4096 || a.fourier_features > 16) {
    r.error("implausible architecture header");
  }
  if (count != layout_of(a).total) r.error("parameter count does not match the architecture");
  std::vector<double> params(count);
  for (auto& p : params) p = r.f32();
  return MlpDenoiser(a, std::move(params));
}

void save_checkpoint(const MlpDenoiser& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
}

MlpDenoiser load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io_error, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace fame
