#include "fame/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>

#include "fame/error.hpp"
#include "fame/parallel.hpp"

namespace fame {

std::vector<double> QualityScorer::score_batch(std::span<const Vector> xs, std::span<const int> class_ids) const {
  if (xs.size() != class_ids.size()) fail(ErrorKind::invalid_argument, "samples and class ids differ in length");
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = score(xs[i], class_ids[i]);
  return out;
}

double score_component_tag(const GmmSpec& spec, const Vector& x, int class_id) {
  const auto ks = spec.kernels(class_id);
  const Vector r = responsibilities(spec, x, 0.0, class_id);
  double s = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) s += r[static_cast<Eigen::Index>(i)] * ks[i].quality_tag;
  return s;
}

double LogDensityScorer::score(const Vector& x, int class_id) const {
  return noised_log_density(*spec_, x, 0.0, class_id);
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::mutex& external_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<double> score_external(const std::string& command, std::span<const Vector> samples,
                                   std::span<const int> class_ids) {
  if (samples.size() != class_ids.size()) fail(ErrorKind::invalid_argument, "samples and class ids differ in length");
  std::lock_guard lock(external_mutex());

  namespace fs = std::filesystem;
  static std::mt19937_64 names(static_cast<std::uint64_t>(::getpid()));
  const fs::path dir = fs::temp_directory_path();
  const std::string stem = "fame-scorer-" + std::to_string(::getpid()) + "-" + std::to_string(names());
  const fs::path input = dir / (stem + ".in");
  const fs::path errors = dir / (stem + ".err");
  struct Cleanup {
    fs::path a, b;
    ~Cleanup() {
      std::error_code ec;
      fs::remove(a, ec);
      fs::remove(b, ec);
    }
  } cleanup{input, errors};

  {
    std::ofstream out(input);
    if (!out) fail(ErrorKind::scorer_failed, "cannot create scorer input file " + input.string());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      out << class_ids[i];
      for (Eigen::Index j = 0; j < samples[i].size(); ++j) out << ' ' << format_double(samples[i][j]);
      out << '\n';
    }
  }

  const std::string full = "(" + command + ") < " + shell_quote(input.string()) + " 2> " + shell_quote(errors.string());
  FILE* pipe = ::popen(full.c_str(), "r");
  if (!pipe) fail(ErrorKind::scorer_failed, "cannot start scorer command: " + command);
  std::string output;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
  const int status = ::pclose(pipe);
  const std::string diag = read_file(errors);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const int code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
    fail(ErrorKind::scorer_failed, "scorer command exited with status " + std::to_string(code) +
                                       (diag.empty() ? std::string() : ": " + diag));
  }

  std::vector<double> scores;
  scores.reserve(samples.size());
  std::istringstream lines(output);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double v = 0.0;
    std::string rest;
    if (!(ls >> v) || (ls >> rest)) {
      fail(ErrorKind::scorer_failed, "scorer printed a non-numeric line: '" + line + "'",
           static_cast<std::int64_t>(lineno));
    }
    scores.push_back(v);
  }
  if (scores.size() != samples.size()) {
    fail(ErrorKind::scorer_failed, "scorer returned " + std::to_string(scores.size()) + " scores for " +
                                       std::to_string(samples.size()) + " samples" +
                                       (diag.empty() ? std::string() : ": " + diag));
  }
  return scores;
}

double ExternalCommandScorer::score(const Vector& x, int class_id) const {
  const int c[1] = {class_id};
  return score_external(command_, std::span<const Vector>(&x, 1), c).front();
}

std::vector<double> ExternalCommandScorer::score_batch(std::span<const Vector> xs,
                                                       std::span<const int> class_ids) const {
  return score_external(command_, xs, class_ids);
}

std::unique_ptr<QualityScorer> make_scorer(const std::string& id, std::shared_ptr<const GmmSpec> spec,
                                           const std::string& command) {
  if (id == "component-tag") return std::make_unique<ComponentTagScorer>(std::move(spec));
  if (id == "log-density") return std::make_unique<LogDensityScorer>(std::move(spec));
  if (id == "external") {
    if (command.empty()) fail(ErrorKind::invalid_argument, "external scorer needs a command");
    return std::make_unique<ExternalCommandScorer>(command);
  }
  fail(ErrorKind::invalid_argument, "unknown scorer '" + id + "'");
}

// ---------------------------------------------------------------- distances

namespace {

struct Moments {
  Vector mean;
  Matrix cov;
};

Moments fit(std::span<const Vector> xs) {
  const auto d = xs.front().size();
  Moments m{Vector::Zero(d), Matrix::Zero(d, d)};
  for (const auto& x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (const auto& x : xs) {
    const Vector c = x - m.mean;
    m.cov.noalias() += c * c.transpose();
  }
  m.cov /= static_cast<double>(xs.size() - 1);
  return m;
}

constexpr double kClampTolerance = 1e-10;
constexpr double kRegularization = 1e-6;

// Symmetric PSD square root; eigenvalues in [-tol, 0) are clamped to 0.
Matrix psd_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  Vector vals = es.eigenvalues();
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] < -kClampTolerance) {
      fail(ErrorKind::invalid_argument, "matrix is not positive semi-definite");
    }
    vals[i] = std::sqrt(std::max(vals[i], 0.0));
  }
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

bool degenerate(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  return es.eigenvalues().minCoeff() <= 1e-12 * std::max(top, 1.0);
}

void check_sets(std::span<const Vector> a, std::span<const Vector> b, std::size_t min_size, const char* what) {
  if (a.size() < min_size || b.size() < min_size) {
    fail(ErrorKind::invalid_argument, std::string(what) + " needs at least " + std::to_string(min_size) +
                                          " samples per set");
  }
  const auto d = a.front().size();
  for (const auto& x : a) {
    if (x.size() != d) fail(ErrorKind::invalid_argument, std::string(what) + ": dimension mismatch");
  }
  for (const auto& x : b) {
    if (x.size() != d) fail(ErrorKind::invalid_argument, std::string(what) + ": dimension mismatch");
  }
}

}  // namespace

FrechetResult frechet_distance_detailed(std::span<const Vector> a, std::span<const Vector> b) {
  if (a.empty() || b.empty()) fail(ErrorKind::invalid_argument, "frechet distance needs nonempty sets");
  const auto d = static_cast<std::size_t>(a.front().size());
  check_sets(a, b, d + 1, "frechet distance");
  Moments ma = fit(a);
  Moments mb = fit(b);
  FrechetResult result;
  if (degenerate(ma.cov) || degenerate(mb.cov)) {
    const Matrix eps = kRegularization * Matrix::Identity(ma.cov.rows(), ma.cov.cols());
    ma.cov += eps;
    mb.cov += eps;
    result.regularized = true;
  }
  const Matrix ra = psd_sqrt(ma.cov);
  const Matrix cross = psd_sqrt(ra * mb.cov * ra);
  const double value =
      (ma.mean - mb.mean).squaredNorm() + ma.cov.trace() + mb.cov.trace() - 2.0 * cross.trace();
  result.distance = std::max(value, 0.0);
  return result;
}

double frechet_distance(std::span<const Vector> a, std::span<const Vector> b) {
  return frechet_distance_detailed(a, b).distance;
}

namespace {

// Squared distance to the k-th nearest other point of the same set.
std::vector<double> knn_radii(std::span<const Vector> xs, std::size_t k) {
  std::vector<double> radii(xs.size());
  parallel_for(xs.size(), 0, [&](std::size_t i) {
    std::vector<double> d2;
    d2.reserve(xs.size() - 1);
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (j != i) d2.push_back((xs[i] - xs[j]).squaredNorm());
    }
    std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(k - 1), d2.end());
    radii[i] = d2[k - 1];
  });
  return radii;
}

double coverage(std::span<const Vector> queries, std::span<const Vector> centers, const std::vector<double>& radii) {
  std::vector<char> inside(queries.size(), 0);
  parallel_for(queries.size(), 0, [&](std::size_t i) {
    for (std::size_t j = 0; j < centers.size(); ++j) {
      if ((queries[i] - centers[j]).squaredNorm() <= radii[j]) {
        inside[i] = 1;
        return;
      }
    }
  });
  const auto hits = std::count(inside.begin(), inside.end(), 1);
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

}  // namespace

PrecisionRecall precision_recall(std::span<const Vector> generated, std::span<const Vector> real, std::size_t k) {
  if (k == 0) fail(ErrorKind::invalid_argument, "precision/recall needs k >= 1");
  if (k >= generated.size() || k >= real.size()) {
    fail(ErrorKind::invalid_argument, "k must be smaller than both set sizes");
  }
  check_sets(generated, real, k + 1, "precision/recall");
  PrecisionRecall pr;
  pr.precision = coverage(generated, real, knn_radii(real, k));
  pr.recall = coverage(real, generated, knn_radii(generated, k));
  return pr;
}

namespace {

double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = simpson(a, m, fa, flm, fm);
  const double right = simpson(m, b, fm, frm, fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  // Split once so a narrow peak cannot hide between the first three nodes.
  constexpr int kPanels = 8;
  const double h = (b - a) / kPanels;
  double total = 0.0;
  for (int i = 0; i < kPanels; ++i) {
    const double lo = a + i * h;
    const double hi = lo + h;
    const double flo = f(lo);
    const double fmid = f(0.5 * (lo + hi));
    const double fhi = f(hi);
    total += adaptive_simpson(f, lo, hi, flo, fmid, fhi, simpson(lo, hi, flo, fmid, fhi), tol / kPanels, 40);
  }
  return total;
}

constexpr double kSmoothing = 1e-12;

}  // namespace

HistogramKl histogram_kl(std::span<const Vector> samples, const std::function<double(double)>& density,
                         const Vector& direction, double lo, double hi, std::size_t bins) {
  if (bins < 2) fail(ErrorKind::invalid_argument, "histogram needs at least two bins");
  if (!(lo < hi)) fail(ErrorKind::invalid_argument, "histogram range must satisfy lo < hi");
  if (samples.empty()) fail(ErrorKind::invalid_argument, "histogram needs samples");
  const double width = (hi - lo) / static_cast<double>(bins);

  HistogramKl out;
  std::vector<double> counts(bins, 0.0);
  std::size_t inside = 0;
  for (const auto& x : samples) {
    if (x.size() != direction.size()) fail(ErrorKind::invalid_argument, "projection dimension mismatch");
    const double p = x.dot(direction);
    if (!(p >= lo && p < hi)) {
      ++out.outside;
      continue;
    }
    auto b = static_cast<std::size_t>((p - lo) / width);
    counts[std::min(b, bins - 1)] += 1.0;
    ++inside;
  }
  if (inside == 0) fail(ErrorKind::invalid_argument, "no samples fall inside the histogram range");

  out.bin_masses.resize(bins);
  double mass = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double a = lo + static_cast<double>(b) * width;
    out.bin_masses[b] = std::max(integrate(density, a, a + width, 1e-12), 0.0);
    mass += out.bin_masses[b];
  }
  if (!(mass > 0.0)) fail(ErrorKind::invalid_argument, "analytic density has no mass in the histogram range");

  double kl = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    double q = out.bin_masses[b] / mass;
    if (q < kSmoothing) {
      q = kSmoothing;
      ++out.smoothed_bins;
    }
    const double p = counts[b] / static_cast<double>(inside);
    if (p > 0.0) kl += p * std::log(p / q);
  }
  out.kl = std::max(kl, 0.0);
  return out;
}

std::function<double(double)> projected_density(const GmmSpec& spec, std::optional<int> class_id,
                                                const Vector& direction) {
  if (static_cast<std::size_t>(direction.size()) != spec.dim()) {
    fail(ErrorKind::invalid_argument, "projection dimension mismatch");
  }
  struct Term {
    double weight, mean, sd;
  };
  std::vector<Term> terms;
  for (const auto& k : spec.kernels(class_id)) {
    const Vector u = k.eigvecs->transpose() * direction;
    const double var = (u.array().square() * k.eigvals->array()).sum();
    terms.push_back({std::exp(k.log_weight), direction.dot(*k.mean), std::sqrt(var)});
  }
  return [terms](double t) {
    double s = 0.0;
    for (const auto& term : terms) {
      const double z = (t - term.mean) / term.sd;
      s += term.weight * std::exp(-0.5 * z * z) / (term.sd * std::sqrt(2.0 * std::numbers::pi));
    }
    return s;
  };
}

// ---------------------------------------------------------------- mode assignment

double chi_square_quantile(std::size_t d, double mass) {
  if (d == 0 || !(mass > 0.0 && mass < 1.0)) fail(ErrorKind::invalid_argument, "invalid chi-square quantile query");
  return boost::math::quantile(boost::math::chi_squared(static_cast<double>(d)), mass);
}

ModeAssignment assign_mode(const GmmSpec& spec, const Vector& x, int class_id) {
  const auto ks = spec.kernels(class_id);
  const Vector r = responsibilities(spec, x, 0.0, class_id);
  ModeAssignment m;
  Eigen::Index best = 0;
  r.maxCoeff(&best);
  m.component = static_cast<std::size_t>(best);
  m.quality_tag = ks[m.component].quality_tag;
  const double radius = chi_square_quantile(spec.dim(), 0.999);
  m.outlier = true;
  for (const auto& k : ks) {
    const Vector z = k.eigvecs->transpose() * (x - *k.mean);
    const double maha = (z.array().square() / k.eigvals->array()).sum();
    if (maha <= radius) {
      m.outlier = false;
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------- reports

std::string_view to_string(QualityTier tier) {
  switch (tier) {
    case QualityTier::low:
      return "low";
    case QualityTier::middle:
      return "middle";
    case QualityTier::high:
      return "high";
  }
  return "middle";
}

QualityTier TierThresholds::classify(double mean_score) const {
  if (mean_score < low) return QualityTier::low;
  if (mean_score > high) return QualityTier::high;
  return QualityTier::middle;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorKind::invalid_argument, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

ClassQuality summarize(int class_id, const std::vector<double>& scores, const TierThresholds& t) {
  ClassQuality q;
  q.class_id = class_id;
  q.n = scores.size();
  double sum = 0.0;
  for (double s : scores) sum += s;
  q.mean = sum / static_cast<double>(scores.size());
  q.min = *std::min_element(scores.begin(), scores.end());
  q.max = *std::max_element(scores.begin(), scores.end());
  q.p10 = quantile(scores, 0.1);
  q.p50 = quantile(scores, 0.5);
  q.p90 = quantile(scores, 0.9);
  q.tier = t.classify(q.mean);
  return q;
}

}  // namespace

ClassQualityReport class_quality_report(const std::map<int, std::vector<double>>& scores,
                                        const TierThresholds& thresholds) {
  if (!(thresholds.low <= thresholds.high)) fail(ErrorKind::invalid_argument, "tier thresholds must be ordered");
  if (scores.empty()) fail(ErrorKind::invalid_argument, "quality report needs at least one class");
  ClassQualityReport report;
  std::vector<double> all;
  for (const auto& [cls, s] : scores) {
    if (s.empty()) fail(ErrorKind::invalid_argument, "class " + std::to_string(cls) + " has no scores");
    report.classes.push_back(summarize(cls, s, thresholds));
    all.insert(all.end(), s.begin(), s.end());
  }
  report.global = summarize(-1, all, thresholds);
  return report;
}

EvalReport evaluate(const SamplesByClass& generated, const SamplesByClass& reference, const QualityScorer& scorer,
                    const GmmSpec& spec, const EvalOptions& options) {
  if (generated.size() != reference.size()) {
    fail(ErrorKind::invalid_argument, "generated and reference sets cover different classes");
  }
  for (auto g = generated.begin(), r = reference.begin(); g != generated.end(); ++g, ++r) {
    if (g->first != r->first) fail(ErrorKind::invalid_argument, "generated and reference sets cover different classes");
    if (g->second.empty() || r->second.empty()) {
      fail(ErrorKind::invalid_argument, "class " + std::to_string(g->first) + " has no samples");
    }
  }

  std::vector<Vector> gen_all;
  std::vector<Vector> ref_all;
  std::vector<int> labels;
  for (const auto& [cls, xs] : generated) {
    gen_all.insert(gen_all.end(), xs.begin(), xs.end());
    labels.insert(labels.end(), xs.size(), cls);
  }
  for (const auto& [cls, xs] : reference) ref_all.insert(ref_all.end(), xs.begin(), xs.end());

  EvalReport report;
  report.n_generated = gen_all.size();
  report.n_reference = ref_all.size();
  const FrechetResult fd = frechet_distance_detailed(gen_all, ref_all);
  report.frechet = fd.distance;
  report.frechet_regularized = fd.regularized;
  const PrecisionRecall pr = precision_recall(gen_all, ref_all, options.k);
  report.precision = pr.precision;
  report.recall = pr.recall;

  const std::vector<double> scores = scorer.score_batch(gen_all, labels);
  std::map<int, std::vector<double>> by_class;
  double total = 0.0;
  std::size_t bad = 0;
  std::size_t outliers = 0;
  for (std::size_t i = 0; i < gen_all.size(); ++i) {
    by_class[labels[i]].push_back(scores[i]);
    total += scores[i];
    const ModeAssignment m = assign_mode(spec, gen_all[i], labels[i]);
    double best_tag = -std::numeric_limits<double>::infinity();
    for (const auto& c : spec.cls(labels[i]).components) best_tag = std::max(best_tag, c.quality_tag);
    if (m.quality_tag < best_tag) ++bad;
    if (m.outlier) ++outliers;
  }
  const auto n = static_cast<double>(gen_all.size());
  report.mean_score = total / n;
  report.bad_mode_fraction = static_cast<double>(bad) / n;
  report.outlier_fraction = static_cast<double>(outliers) / n;
  report.quality = class_quality_report(by_class, options.thresholds);
  return report;
}

namespace {

std::string fixed(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void csv_row(std::ostringstream& out, const std::string& label, const ClassQuality& q) {
  out << label << ',' << q.n << ',' << fixed(q.mean) << ',' << fixed(q.p10) << ',' << fixed(q.p50) << ','
      << fixed(q.p90) << ',' << to_string(q.tier) << '\n';
}

}  // namespace

std::string format_quality_csv(const ClassQualityReport& report) {
  std::ostringstream out;
  out << "class,n,mean_score,p10,p50,p90,tier\n";
  for (const auto& q : report.classes) csv_row(out, std::to_string(q.class_id), q);
  csv_row(out, "all", report.global);
  return out.str();
}

std::string format_summary(const EvalReport& report) {
  std::ostringstream out;
  out << "samples: " << report.n_generated << " generated, " << report.n_reference << " reference\n";
  out << "frechet: " << fixed(report.frechet) << (report.frechet_regularized ? " (regularized)" : "") << '\n';
  out << "precision: " << fixed(report.precision) << '\n';
  out << "recall: " << fixed(report.recall) << '\n';
  out << "mean score: " << fixed(report.mean_score) << '\n';
  out << "bad-mode fraction: " << fixed(report.bad_mode_fraction) << '\n';
  out << "outlier fraction: " << fixed(report.outlier_fraction) << '\n';
  for (const auto& q : report.quality.classes) {
    out << "class " << q.class_id << ": mean " << fixed(q.mean) << " [" << fixed(q.min) << ", " << fixed(q.max)
        << "] tier " << to_string(q.tier) << '\n';
  }
  if (!report.config_echo.empty()) out << "config:\n" << report.config_echo;
  return out.str();
}

}  // namespace fame
