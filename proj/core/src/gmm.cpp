#include "fame/gmm.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "fame/error.hpp"
#include "hash.hpp"

namespace fame {

using nlohmann::json;

GmmSpec::GmmSpec(std::vector<GmmClass> classes) : classes_(std::move(classes)) {
  if (classes_.empty()) {
    fail(ErrorKind::invalid_argument, "GMM needs at least one class");
  }
  std::sort(classes_.begin(), classes_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < classes_.size(); ++i) {
    if (classes_[i].id == classes_[i - 1].id) {
      fail(ErrorKind::invalid_argument, "duplicate class id " + std::to_string(classes_[i].id));
    }
  }
  if (classes_.front().id < 0) {
    fail(ErrorKind::invalid_argument, "class ids must be non-negative");
  }

  const bool uniform = std::all_of(classes_.begin(), classes_.end(), [](const auto& c) { return c.prior <= 0.0; });
  double prior_sum = 0.0;
  for (auto& c : classes_) {
    if (uniform) c.prior = 1.0 / static_cast<double>(classes_.size());
    if (!(c.prior > 0.0)) fail(ErrorKind::invalid_argument, "class priors must be positive", c.id);
    prior_sum += c.prior;
  }
  if (std::abs(prior_sum - 1.0) > 1e-6) {
    fail(ErrorKind::invalid_argument, "class priors must sum to 1");
  }

  dim_ = static_cast<std::size_t>(classes_.front().components.empty() ? 0 : classes_.front().components.front().mean.size());
  if (dim_ == 0) fail(ErrorKind::invalid_argument, "GMM components need a non-empty mean");

  detail::Fnv1a h;
  h.u64(dim_);
  for (auto& c : classes_) {
    c.prior /= prior_sum;
    if (c.components.empty()) fail(ErrorKind::invalid_argument, "class has no components", c.id);
    double wsum = 0.0;
    std::vector<Spectral> spectra;
    for (auto& comp : c.components) {
      if (static_cast<std::size_t>(comp.mean.size()) != dim_ || static_cast<std::size_t>(comp.cov.rows()) != dim_ ||
          static_cast<std::size_t>(comp.cov.cols()) != dim_) {
        fail(ErrorKind::invalid_argument, "component dimension mismatch", c.id);
      }
      if (!comp.mean.allFinite() || !comp.cov.allFinite()) {
        fail(ErrorKind::invalid_argument, "component has non-finite parameters", c.id);
      }
      const double scale = std::max(1.0, comp.cov.cwiseAbs().maxCoeff());
      if ((comp.cov - comp.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        fail(ErrorKind::invalid_argument, "covariance must be symmetric", c.id);
      }
      if (!(comp.weight > 0.0)) fail(ErrorKind::invalid_argument, "component weights must be positive", c.id);
      wsum += comp.weight;
      Eigen::SelfAdjointEigenSolver<Matrix> es(comp.cov);
      if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) {
        fail(ErrorKind::invalid_argument, "covariance must be positive definite", c.id);
      }
      spectra.push_back({es.eigenvectors(), es.eigenvalues()});
    }
    if (std::abs(wsum - 1.0) > 1e-6) {
      fail(ErrorKind::invalid_argument, "component weights must sum to 1", c.id);
    }
    h.u64(static_cast<std::uint64_t>(c.id));
    h.f64(c.prior);
    for (auto& comp : c.components) {
      comp.weight /= wsum;
      h.f64(comp.weight);
      h.f64(comp.quality_tag);
      for (Eigen::Index i = 0; i < comp.mean.size(); ++i) h.f64(comp.mean[i]);
      for (Eigen::Index i = 0; i < comp.cov.size(); ++i) h.f64(comp.cov.data()[i]);
    }
    ids_.push_back(c.id);
    spectra_.push_back(std::move(spectra));
  }
  fingerprint_ = h.digest();
}

bool GmmSpec::has_class(int class_id) const noexcept {
  return std::binary_search(ids_.begin(), ids_.end(), class_id);
}

const GmmClass& GmmSpec::cls(int class_id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), class_id);
  if (it == ids_.end() || *it != class_id) {
    fail(ErrorKind::not_found, "unknown class id " + std::to_string(class_id));
  }
  return classes_[static_cast<std::size_t>(it - ids_.begin())];
}

std::vector<GmmSpec::Kernel> GmmSpec::kernels(std::optional<int> class_id) const {
  std::vector<Kernel> out;
  auto append = [&](std::size_t ci, double log_prior) {
    const auto& c = classes_[ci];
    for (std::size_t k = 0; k < c.components.size(); ++k) {
      const auto& comp = c.components[k];
      out.push_back({log_prior + std::log(comp.weight), &comp.mean, &spectra_[ci][k].vecs, &spectra_[ci][k].vals,
                     comp.quality_tag});
    }
  };
  if (class_id) {
    cls(*class_id);  // throws not-found
    auto ci = static_cast<std::size_t>(std::lower_bound(ids_.begin(), ids_.end(), *class_id) - ids_.begin());
    append(ci, 0.0);
  } else {
    for (std::size_t ci = 0; ci < classes_.size(); ++ci) append(ci, std::log(classes_[ci].prior));
  }
  return out;
}

namespace {

struct KernelEval {
  double log_p;   // log weight + log N(x | mean, cov + sigma^2 I)
  Vector z;       // eigvecs^T (x - mean)
  Vector inv;     // 1 / (eigvals + sigma^2)
};

std::vector<KernelEval> evaluate_kernels(const std::vector<GmmSpec::Kernel>& ks, const Vector& x, double sigma) {
  const double s2 = sigma * sigma;
  const auto d = static_cast<double>(x.size());
  std::vector<KernelEval> out;
  out.reserve(ks.size());
  for (const auto& k : ks) {
    KernelEval e;
    e.z = k.eigvecs->transpose() * (x - *k.mean);
    e.inv = (k.eigvals->array() + s2).inverse().matrix();
    const double maha = (e.z.array().square() * e.inv.array()).sum();
    const double logdet = -e.inv.array().log().sum();
    e.log_p = k.log_weight - 0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet + maha);
    out.push_back(std::move(e));
  }
  return out;
}

void check_query(const GmmSpec& spec, const Vector& x, double sigma) {
  if (static_cast<std::size_t>(x.size()) != spec.dim()) {
    fail(ErrorKind::invalid_argument, "query dimension does not match the GMM");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    fail(ErrorKind::invalid_argument, "sigma must be finite and non-negative");
  }
}

double log_sum_exp(const std::vector<KernelEval>& evals) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& e : evals) m = std::max(m, e.log_p);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (const auto& e : evals) s += std::exp(e.log_p - m);
  return m + std::log(s);
}

Vector posterior_weights(const std::vector<KernelEval>& evals) {
  const double lse = log_sum_exp(evals);
  if (!std::isfinite(lse)) {
    fail(ErrorKind::degenerate_point, "mixture density is numerically zero at the query point");
  }
  Vector r(static_cast<Eigen::Index>(evals.size()));
  for (std::size_t i = 0; i < evals.size(); ++i) r[static_cast<Eigen::Index>(i)] = std::exp(evals[i].log_p - lse);
  return r;
}

}  // namespace

double noised_log_density(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id) {
  check_query(spec, x, sigma);
  return log_sum_exp(evaluate_kernels(spec.kernels(class_id), x, sigma));
}

Vector analytic_score(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id) {
  check_query(spec, x, sigma);
  const auto ks = spec.kernels(class_id);
  const auto evals = evaluate_kernels(ks, x, sigma);
  const Vector r = posterior_weights(evals);
  Vector score = Vector::Zero(x.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    score -= r[static_cast<Eigen::Index>(i)] * (*ks[i].eigvecs * evals[i].z.cwiseProduct(evals[i].inv));
  }
  return score;
}

Vector ideal_denoiser(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id) {
  check_query(spec, x, sigma);
  if (!(sigma > 0.0)) {
    fail(ErrorKind::invalid_argument, "denoiser is undefined at sigma = 0");
  }
  const auto ks = spec.kernels(class_id);
  const auto evals = evaluate_kernels(ks, x, sigma);
  const Vector r = posterior_weights(evals);
  Vector out = Vector::Zero(x.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    // Per-component posterior mean: mean + cov (cov + sigma^2 I)^-1 (x - mean).
    const Vector shrink = ks[i].eigvals->cwiseProduct(evals[i].inv).cwiseProduct(evals[i].z);
    out += r[static_cast<Eigen::Index>(i)] * (*ks[i].mean + *ks[i].eigvecs * shrink);
  }
  return out;
}

Vector responsibilities(const GmmSpec& spec, const Vector& x, double sigma, std::optional<int> class_id) {
  check_query(spec, x, sigma);
  return posterior_weights(evaluate_kernels(spec.kernels(class_id), x, sigma));
}

std::vector<LabeledDraw> exact_sampler_labeled(const GmmSpec& spec, Rng& rng, std::optional<int> class_id,
                                               std::size_t n) {
  if (n == 0) fail(ErrorKind::invalid_argument, "exact_sampler needs n >= 1");
  if (class_id) spec.cls(*class_id);
  std::vector<LabeledDraw> out;
  out.reserve(n);
  auto pick = [&](const auto& items, auto weight_of) {
    double u = rng.uniform();
    for (std::size_t i = 0; i + 1 < items.size(); ++i) {
      u -= weight_of(items[i]);
      if (u < 0.0) return i;
    }
    return items.size() - 1;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const GmmClass& c = class_id ? spec.cls(*class_id)
                                 : spec.classes()[pick(spec.classes(), [](const GmmClass& g) { return g.prior; })];
    const std::size_t k = pick(c.components, [](const GmmComponent& g) { return g.weight; });
    const auto& comp = c.components[k];
    Eigen::LLT<Matrix> llt(comp.cov);
    Vector x = comp.mean + llt.matrixL() * rng.normal_vector(spec.dim());
    out.push_back({std::move(x), c.id, k});
  }
  return out;
}

std::vector<Vector> exact_sampler(const GmmSpec& spec, Rng& rng, std::optional<int> class_id, std::size_t n) {
  auto labeled = exact_sampler_labeled(spec, rng, class_id, n);
  std::vector<Vector> out;
  out.reserve(labeled.size());
  for (auto& l : labeled) out.push_back(std::move(l.x));
  return out;
}

// ---------------------------------------------------------------- presets

namespace {

GmmComponent isotropic(double x, double y, double std_dev, double weight, double tag) {
  Vector mean(2);
  mean << x, y;
  return {mean, Matrix::Identity(2, 2) * (std_dev * std_dev), weight, tag};
}

constexpr int kPresetClasses = 8;

// Eight single-mode classes on a ring.
GmmSpec balanced2d() {
  std::vector<GmmClass> classes;
  for (int c = 0; c < kPresetClasses; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / kPresetClasses;
    classes.push_back({c, 0.0, {isotropic(2.0 * std::cos(angle), 2.0 * std::sin(angle), 0.25, 1.0, 2.8)}});
  }
  return GmmSpec(std::move(classes));
}

// Eight classes along x. Each has a dominant high-quality mode and a sparse
// low-quality mode displaced along a shared y direction.
GmmSpec imbalanced2d() {
  constexpr double spacing = 1.0;
  constexpr double offset = 0.5;
  constexpr double std_dev = 0.07;
  std::vector<GmmClass> classes;
  for (int c = 0; c < kPresetClasses; ++c) {
    const double x = spacing * (c - 0.5 * (kPresetClasses - 1));
    classes.push_back({c, 0.0, {isotropic(x, 0.0, std_dev, 0.9, 2.8), isotropic(x, offset, std_dev, 0.1, 1.4)}});
  }
  return GmmSpec(std::move(classes));
}

}  // namespace

std::vector<std::string> preset_names() { return {"balanced2d", "imbalanced2d"}; }

GmmSpec make_preset(std::string_view name) {
  if (name == "balanced2d") return balanced2d();
  if (name == "imbalanced2d") return imbalanced2d();
  fail(ErrorKind::not_found, "unknown dataset preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- text format

namespace {

Vector vector_from(const json& j) {
  if (!j.is_array() || j.empty()) fail(ErrorKind::invalid_argument, "expected a non-empty numeric array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Matrix matrix_from(const json& j) {
  if (!j.is_array() || j.empty()) fail(ErrorKind::invalid_argument, "expected a matrix (array of rows)");
  const auto rows = j.size();
  const auto cols = j[0].size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) fail(ErrorKind::invalid_argument, "ragged covariance matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

GmmSpec parse_gmm(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("GMM file is not valid JSON: ") + e.what());
  }
  try {
    std::vector<GmmClass> classes;
    for (const auto& jc : doc.at("classes")) {
      GmmClass c;
      c.id = jc.at("id").get<int>();
      c.prior = jc.value("prior", 0.0);
      for (const auto& jm : jc.at("components")) {
        GmmComponent comp;
        comp.mean = vector_from(jm.at("mean"));
        comp.cov = matrix_from(jm.at("cov"));
        comp.weight = jm.value("weight", 1.0);
        comp.quality_tag = jm.value("quality_tag", 0.0);
        c.components.push_back(std::move(comp));
      }
      classes.push_back(std::move(c));
    }
    return GmmSpec(std::move(classes));
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("malformed GMM description: ") + e.what());
  }
}

std::string format_gmm(const GmmSpec& spec) {
  json doc;
  doc["classes"] = json::array();
  for (const auto& c : spec.classes()) {
    json jc;
    jc["id"] = c.id;
    jc["prior"] = c.prior;
    jc["components"] = json::array();
    for (const auto& comp : c.components) {
      json jm;
      jm["mean"] = std::vector<double>(comp.mean.data(), comp.mean.data() + comp.mean.size());
      json cov = json::array();
      for (Eigen::Index r = 0; r < comp.cov.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index k = 0; k < comp.cov.cols(); ++k) row.push_back(comp.cov(r, k));
        cov.push_back(row);
      }
      jm["cov"] = cov;
      jm["weight"] = comp.weight;
      jm["quality_tag"] = comp.quality_tag;
      jc["components"].push_back(jm);
    }
    doc["classes"].push_back(jc);
  }
  return doc.dump(2) + "\n";
}

GmmSpec load_gmm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io_error, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_gmm(ss.str());
}

void save_gmm(const GmmSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path.string() + " for writing");
  out << format_gmm(spec);
}

GmmSpec resolve_dataset(const std::string& name_or_path) {
  for (const auto& name : preset_names()) {
    if (name == name_or_path) return make_preset(name);
  }
  if (std::filesystem::exists(name_or_path)) return load_gmm(name_or_path);
  fail(ErrorKind::not_found, "dataset '" + name_or_path + "' is neither a preset nor a readable file");
}

}  // namespace fame
