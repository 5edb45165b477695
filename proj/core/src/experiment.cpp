#include "fame/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fame/error.hpp"
#include "fame/rng.hpp"
#include "fame/svg.hpp"

namespace fame {

using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;
constexpr std::uint64_t kReferenceStream = 0x726566ULL;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorKind::io_error, "failed writing " + path.string());
}

// Reads keys from a JSON object, rejecting any key that is never asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorKind::invalid_argument, where_ + " must be an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(ErrorKind::invalid_argument, "unknown key '" + key + "' in " + where_);
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert({key, true});
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::invalid_argument, "key '" + std::string(key) + "' in " + where_ + " has the wrong type");
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert({key, true});
    if (!j_.contains(key) || j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  const json* child(const char* key) {
    seen_.insert({key, true});
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

 private:
  const json& j_;
  std::string where_;
  std::map<std::string, bool> seen_;
};

bool same_train(const TrainConfig& a, const TrainConfig& b) {
  return a.steps == b.steps && a.batch_size == b.batch_size && a.learning_rate == b.learning_rate &&
         a.sigma_lo == b.sigma_lo && a.sigma_hi == b.sigma_hi && a.label_dropout == b.label_dropout &&
         a.seed == b.seed && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.epsilon == b.epsilon;
}

}  // namespace

NoiseSchedule ScheduleConfig::make() const { return make_schedule(kind, steps, sigma_min, sigma_max, rho); }

bool operator==(const SourceConfig& a, const SourceConfig& b) {
  return a.kind == b.kind && a.checkpoint == b.checkpoint && same_train(a.train, b.train);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.name == b.name && a.dataset == b.dataset && a.source == b.source && a.schedule == b.schedule &&
         a.sampler == b.sampler && a.guidance == b.guidance && a.pool == b.pool && a.scorer == b.scorer &&
         a.thresholds.low == b.thresholds.low && a.thresholds.high == b.thresholds.high && a.k == b.k &&
         a.seed == b.seed && a.n_per_class == b.n_per_class && a.n_reference_per_class == b.n_reference_per_class &&
         a.out_dir == b.out_dir && a.workers == b.workers && a.save_trajectories == b.save_trajectories;
}

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::invalid_argument, msg); };
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
    bad("name must be a nonempty single path component");
  }
  if (dataset.empty()) bad("dataset must be set");
  if (source.kind != "analytic" && source.kind != "neural") bad("source.kind must be 'analytic' or 'neural'");
  if (source.kind == "neural") source.train.validate();
  make_schedule(schedule.kind, schedule.steps, schedule.sigma_min, schedule.sigma_max, schedule.rho);
  guidance.validate();
  if (pool.path.empty()) {
    if (pool.n_candidates == 0) bad("pool.n_candidates must be >= 1");
    if (pool.n_f == 0) bad("pool.n_f must be >= 1");
  }
  if (pool.candidate_w && !(std::isfinite(*pool.candidate_w) && *pool.candidate_w >= 0.0)) {
    bad("pool.candidate_w must be finite and >= 0");
  }
  if (scorer.id != "component-tag" && scorer.id != "log-density" && scorer.id != "external") {
    bad("unknown scorer '" + scorer.id + "'");
  }
  if (scorer.id == "external" && scorer.command.empty()) bad("external scorer needs scorer.command");
  if (!(thresholds.low <= thresholds.high)) bad("thresholds must satisfy low <= high");
  if (k == 0) bad("k must be >= 1");
  if (n_per_class <= k) bad("n_per_class must exceed k");
  if (n_reference_per_class <= k) bad("n_reference_per_class must exceed k");
  if (out_dir.empty()) bad("out_dir must be set");
}

std::filesystem::path ExperimentConfig::run_dir() const { return std::filesystem::path(out_dir) / name; }

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::invalid_argument, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  {
    ObjectReader root(j, "config");
    root.get("name", cfg.name);
    root.get("dataset", cfg.dataset);
    if (const json* s = root.child("source")) {
      ObjectReader r(*s, "source");
      r.get("kind", cfg.source.kind);
      r.get("checkpoint", cfg.source.checkpoint);
      if (const json* t = r.child("train")) {
        ObjectReader tr(*t, "source.train");
        auto& tc = cfg.source.train;
        tr.get("steps", tc.steps);
        tr.get("batch_size", tc.batch_size);
        tr.get("learning_rate", tc.learning_rate);
        tr.get("sigma_lo", tc.sigma_lo);
        tr.get("sigma_hi", tc.sigma_hi);
        tr.get("label_dropout", tc.label_dropout);
        tr.get("seed", tc.seed);
      }
    }
    if (const json* s = root.child("schedule")) {
      ObjectReader r(*s, "schedule");
      std::string kind(to_string(cfg.schedule.kind));
      r.get("kind", kind);
      cfg.schedule.kind = parse_schedule_kind(kind);
      r.get("steps", cfg.schedule.steps);
      r.get("sigma_min", cfg.schedule.sigma_min);
      r.get("sigma_max", cfg.schedule.sigma_max);
      r.get("rho", cfg.schedule.rho);
    }
    std::string sampler(to_string(cfg.sampler));
    root.get("sampler", sampler);
    cfg.sampler = parse_sampler_method(sampler);
    if (const json* g = root.child("guidance")) {
      ObjectReader r(*g, "guidance");
      r.get("w", cfg.guidance.w);
      r.get("f", cfg.guidance.f);
      r.get("tau", cfg.guidance.tau);
      std::optional<std::vector<double>> interval;
      r.get_optional("cfg_interval", interval);
      if (interval) {
        if (interval->size() != 2) fail(ErrorKind::invalid_argument, "guidance.cfg_interval must be [lo, hi]");
        cfg.guidance.cfg_interval = std::pair{(*interval)[0], (*interval)[1]};
      }
    }
    if (const json* p = root.child("pool")) {
      ObjectReader r(*p, "pool");
      r.get("path", cfg.pool.path);
      r.get("n_candidates", cfg.pool.n_candidates);
      r.get("n_f", cfg.pool.n_f);
      std::string mode(to_string(cfg.pool.mode));
      r.get("mode", mode);
      cfg.pool.mode = parse_pool_mode(mode);
      r.get_optional("candidate_w", cfg.pool.candidate_w);
      r.get_optional("seed", cfg.pool.seed);
    }
    if (const json* s = root.child("scorer")) {
      ObjectReader r(*s, "scorer");
      r.get("id", cfg.scorer.id);
      r.get("command", cfg.scorer.command);
    }
    if (const json* t = root.child("thresholds")) {
      ObjectReader r(*t, "thresholds");
      r.get("low", cfg.thresholds.low);
      r.get("high", cfg.thresholds.high);
    }
    root.get("k", cfg.k);
    root.get("seed", cfg.seed);
    root.get("n_per_class", cfg.n_per_class);
    root.get("n_reference_per_class", cfg.n_reference_per_class);
    root.get("out_dir", cfg.out_dir);
    root.get("workers", cfg.workers);
    root.get("save_trajectories", cfg.save_trajectories);
  }
  cfg.validate();
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["dataset"] = cfg.dataset;
  const auto& tc = cfg.source.train;
  j["source"] = {{"kind", cfg.source.kind},
                 {"checkpoint", cfg.source.checkpoint},
                 {"train",
                  {{"steps", tc.steps},
                   {"batch_size", tc.batch_size},
                   {"learning_rate", tc.learning_rate},
                   {"sigma_lo", tc.sigma_lo},
                   {"sigma_hi", tc.sigma_hi},
                   {"label_dropout", tc.label_dropout},
                   {"seed", tc.seed}}}};
  j["schedule"] = {{"kind", std::string(to_string(cfg.schedule.kind))},
                   {"steps", cfg.schedule.steps},
                   {"sigma_min", cfg.schedule.sigma_min},
                   {"sigma_max", cfg.schedule.sigma_max},
                   {"rho", cfg.schedule.rho}};
  j["sampler"] = std::string(to_string(cfg.sampler));
  json g = {{"w", cfg.guidance.w}, {"f", cfg.guidance.f}, {"tau", cfg.guidance.tau}};
  if (cfg.guidance.cfg_interval) {
    g["cfg_interval"] = {cfg.guidance.cfg_interval->first, cfg.guidance.cfg_interval->second};
  } else {
    g["cfg_interval"] = nullptr;
  }
  j["guidance"] = g;
  json p = {{"path", cfg.pool.path},
            {"n_candidates", cfg.pool.n_candidates},
            {"n_f", cfg.pool.n_f},
            {"mode", std::string(to_string(cfg.pool.mode))}};
  p["candidate_w"] = cfg.pool.candidate_w ? json(*cfg.pool.candidate_w) : json(nullptr);
  p["seed"] = cfg.pool.seed ? json(*cfg.pool.seed) : json(nullptr);
  j["pool"] = p;
  j["scorer"] = {{"id", cfg.scorer.id}, {"command", cfg.scorer.command}};
  j["thresholds"] = {{"low", cfg.thresholds.low}, {"high", cfg.thresholds.high}};
  j["k"] = cfg.k;
  j["seed"] = cfg.seed;
  j["n_per_class"] = cfg.n_per_class;
  j["n_reference_per_class"] = cfg.n_reference_per_class;
  j["out_dir"] = cfg.out_dir;
  j["workers"] = cfg.workers;
  j["save_trajectories"] = cfg.save_trajectories;
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  write_text(path, format_config(cfg));
}

// ---------------------------------------------------------------- Experiment

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  spec_ = std::make_shared<const GmmSpec>(resolve_dataset(cfg_.dataset));
  scorer_ = make_scorer(cfg_.scorer.id, spec_, cfg_.scorer.command);
}

SamplerConfig Experiment::sampler_config() const { return {cfg_.sampler, cfg_.schedule.make(), true}; }

std::shared_ptr<const MlpDenoiser> Experiment::model() {
  if (cfg_.source.kind != "neural") fail(ErrorKind::invalid_argument, "the analytic source has no model");
  if (model_) return model_;
  const std::filesystem::path ckpt = cfg_.source.checkpoint;
  if (!ckpt.empty() && std::filesystem::exists(ckpt)) {
    auto m = std::make_shared<const MlpDenoiser>(load_checkpoint(ckpt));
    if (m->arch().dim != spec_->dim()) {
      fail(ErrorKind::invalid_argument, "checkpoint dimension does not match the dataset");
    }
    model_ = std::move(m);
    return model_;
  }
  TrainReport report;
  model_ = std::make_shared<const MlpDenoiser>(train(*spec_, cfg_.source.train, default_architecture(*spec_), &report));
  train_report_ = std::move(report);
  if (!ckpt.empty()) {
    if (ckpt.has_parent_path()) std::filesystem::create_directories(ckpt.parent_path());
    save_checkpoint(*model_, ckpt);
  }
  return model_;
}

void Experiment::set_model(std::shared_ptr<const MlpDenoiser> model) {
  model_ = std::move(model);
  source_.reset();
  pool_.reset();
}

std::shared_ptr<const ScoreSource> Experiment::base_source() {
  if (source_) return source_;
  if (cfg_.source.kind == "analytic") {
    source_ = std::make_shared<const AnalyticSource>(spec_);
  } else {
    source_ = std::make_shared<const NeuralSource>(model());
  }
  return source_;
}

std::shared_ptr<const FailurePool> Experiment::pool() {
  if (pool_) return pool_;
  const auto base = base_source();
  const SamplerConfig sampler = sampler_config();
  if (!cfg_.pool.path.empty()) {
    auto p = std::make_shared<const FailurePool>(load_pool(cfg_.pool.path));
    p->check_schedule(sampler.schedule);
    if (p->source_hash() != base->fingerprint()) {
      fail(ErrorKind::incompatible_pool, "pool was built from a different score source");
    }
    pool_ = std::move(p);
    return pool_;
  }
  PoolBuildConfig build;
  build.n_candidates = cfg_.pool.n_candidates;
  build.n_f = cfg_.pool.n_f;
  build.mode = cfg_.pool.mode;
  build.candidate_w = cfg_.pool.candidate_w.value_or(cfg_.guidance.w);
  build.seed = cfg_.pool.seed.value_or(cfg_.seed);
  pool_ = std::make_shared<const FailurePool>(
      build_pool(base, sampler, *scorer_, build, spec_->class_ids(), cfg_.workers));
  return pool_;
}

void Experiment::set_pool(std::shared_ptr<const FailurePool> pool) { pool_ = std::move(pool); }

std::vector<TrajectoryRecord> Experiment::sample(const GuidanceConfig& guidance) {
  guidance.validate();
  const SamplerConfig sampler = sampler_config();
  const bool needs_pool = guidance.f > 0.0 && guidance.tau > 0.0;
  const auto source = std::make_shared<const GuidedSource>(base_source(), needs_pool ? pool() : nullptr, guidance,
                                                           sampler.schedule);
  std::vector<std::optional<int>> classes;
  for (int c : spec_->class_ids()) classes.emplace_back(c);
  auto records = sample_batch(*source, sampler, derive_seed(cfg_.seed, kSampleStream), classes, cfg_.n_per_class,
                              cfg_.workers);
  const auto s = scores(records);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].quality_score = s[i];
  return records;
}

std::vector<double> Experiment::scores(const std::vector<TrajectoryRecord>& records) const {
  std::vector<Vector> xs;
  std::vector<int> labels;
  xs.reserve(records.size());
  for (const auto& r : records) {
    if (!r.class_id) fail(ErrorKind::invalid_argument, "scoring needs class-conditional samples");
    xs.push_back(r.final_sample);
    labels.push_back(*r.class_id);
  }
  return scorer_->score_batch(xs, labels);
}

SamplesByClass Experiment::reference() const {
  SamplesByClass out;
  for (int c : spec_->class_ids()) {
    Rng rng(derive_seed(cfg_.seed, kReferenceStream, static_cast<std::uint64_t>(c)));
    out[c] = exact_sampler(*spec_, rng, c, cfg_.n_reference_per_class);
  }
  return out;
}

SamplesByClass group_by_class(const std::vector<TrajectoryRecord>& records) {
  SamplesByClass out;
  for (const auto& r : records) {
    if (!r.class_id) fail(ErrorKind::invalid_argument, "evaluation needs class-conditional samples");
    out[*r.class_id].push_back(r.final_sample);
  }
  return out;
}

EvalReport Experiment::evaluate(const std::vector<TrajectoryRecord>& records) const {
  EvalOptions options;
  options.thresholds = cfg_.thresholds;
  options.k = cfg_.k;
  EvalReport report = fame::evaluate(group_by_class(records), reference(), *scorer_, *spec_, options);
  report.config_echo = format_config(cfg_);
  return report;
}

// ---------------------------------------------------------------- pipeline

namespace {

std::string fixed(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string metrics_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "frechet,precision,recall,mean_score,bad_mode_fraction,outlier_fraction,n_generated,n_reference\n";
  out << fixed(r.frechet) << ',' << fixed(r.precision) << ',' << fixed(r.recall) << ',' << fixed(r.mean_score) << ','
      << fixed(r.bad_mode_fraction) << ',' << fixed(r.outlier_fraction) << ',' << r.n_generated << ','
      << r.n_reference << '\n';
  return out.str();
}

std::vector<ScatterLayer> mode_layers(const GmmSpec& spec, const std::vector<TrajectoryRecord>& records,
                                      const SamplesByClass& reference) {
  ScatterLayer ref{"reference", "#9e9e9e", {}, 1.2, 0.35};
  ScatterLayer good{"high-quality mode", "#1f77b4", {}};
  ScatterLayer low{"low-quality mode", "#ff7f0e", {}};
  ScatterLayer outlier{"outlier", "#d62728", {}, 2.0, 0.9};
  for (const auto& [c, xs] : reference) ref.points.insert(ref.points.end(), xs.begin(), xs.end());
  for (const auto& r : records) {
    const int c = *r.class_id;
    const ModeAssignment m = assign_mode(spec, r.final_sample, c);
    double best = m.quality_tag;
    for (const auto& comp : spec.cls(c).components) best = std::max(best, comp.quality_tag);
    if (m.outlier) {
      outlier.points.push_back(r.final_sample);
    } else if (m.quality_tag < best) {
      low.points.push_back(r.final_sample);
    } else {
      good.points.push_back(r.final_sample);
    }
  }
  return {ref, good, low, outlier};
}

class Stage {
 public:
  explicit Stage(std::filesystem::path run_dir) : run_dir_(std::move(run_dir)) {}

  template <class F>
  auto run(const char* name, F&& f) {
    try {
      return f();
    } catch (const Error& e) {
      mark(name, e.what());
      throw Error(e.kind(), std::string("stage ") + name + ": " + e.what(), e.index());
    } catch (const std::exception& e) {
      mark(name, e.what());
      throw Error(ErrorKind::io_error, std::string("stage ") + name + ": " + e.what());
    }
  }

 private:
  void mark(const char* name, const std::string& what) {
    std::error_code ec;
    std::filesystem::create_directories(run_dir_, ec);
    std::ofstream out(run_dir_ / "FAILED");
    out << "stage: " << name << "\ncause: " << what << "\n";
  }
  std::filesystem::path run_dir_;
};

}  // namespace

EvalReport write_reports(Experiment& experiment, const std::vector<TrajectoryRecord>& records,
                         const std::filesystem::path& run_dir, const std::string& tag) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir / "reports");
  fs::create_directories(run_dir / "plots");
  EvalReport report = experiment.evaluate(records);
  write_text(run_dir / "reports" / (tag + "_quality.csv"), format_quality_csv(report.quality));
  write_text(run_dir / "reports" / (tag + "_metrics.csv"), metrics_csv(report));
  write_text(run_dir / "reports" / (tag + "_summary.txt"), format_summary(report));
  const auto layers = mode_layers(*experiment.spec(), records, experiment.reference());
  write_text(run_dir / "plots" / (tag + ".svg"), scatter_svg(experiment.config().name + ": " + tag, layers));
  return report;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  Stage stage(cfg.run_dir());
  auto experiment = stage.run("dataset", [&] { return std::make_unique<Experiment>(cfg); });
  return run_pipeline(*experiment);
}

PipelineResult run_pipeline(Experiment& experiment) {
  namespace fs = std::filesystem;
  const ExperimentConfig& cfg = experiment.config();
  const fs::path dir = cfg.run_dir();
  Stage stage(dir);
  stage.run("setup", [&] {
    fs::create_directories(dir);
    fs::remove(dir / "FAILED");
    write_text(dir / "config.echo", format_config(cfg));
    return 0;
  });
  if (cfg.source.kind == "neural") {
    stage.run("train", [&] {
      auto model = experiment.model();
      if (cfg.source.checkpoint.empty()) save_checkpoint(*model, dir / "model.fmlp");
      return 0;
    });
  }
  if (cfg.guidance.f > 0.0 && cfg.guidance.tau > 0.0) {
    stage.run("build-pool", [&] {
      auto pool = experiment.pool();
      save_pool(*pool, dir / "pool.fmpl");
      return 0;
    });
  }
  auto records = stage.run("sample", [&] { return experiment.sample(); });
  if (cfg.save_trajectories) {
    stage.run("write-trajectories", [&] {
      fs::create_directories(dir / "trajectories");
      save_trajectories(dir / "trajectories" / "samples.fame", records);
      return 0;
    });
  }
  EvalReport report = stage.run("evaluate", [&] { return write_reports(experiment, records, dir); });
  return {std::move(report), dir};
}

// ---------------------------------------------------------------- sweeps

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "w") return SweepAxis::w;
  if (name == "f") return SweepAxis::f;
  if (name == "tau") return SweepAxis::tau;
  fail(ErrorKind::invalid_argument, "sweep axis must be w, f or tau");
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::w:
      return "w";
    case SweepAxis::f:
      return "f";
    case SweepAxis::tau:
      return "tau";
  }
  return "w";
}

std::vector<SweepRow> run_sweep(Experiment& experiment, const SweepSpec& sweep) {
  if (sweep.values.empty()) fail(ErrorKind::invalid_argument, "sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (double v : sweep.values) {
    SweepRow row;
    row.value = v;
    GuidanceConfig g = experiment.config().guidance;
    switch (sweep.axis) {
      case SweepAxis::w:
        g.w = v;
        break;
      case SweepAxis::f:
        g.f = v;
        break;
      case SweepAxis::tau:
        g.tau = v;
        break;
    }
    try {
      row.report = experiment.evaluate(experiment.sample(g));
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << to_string(axis) << ",frechet,precision,recall,mean_score,bad_mode_fraction,outlier_fraction,status\n";
  for (const auto& r : rows) {
    out << fixed(r.value) << ',';
    if (r.ok) {
      const auto& e = r.report;
      out << fixed(e.frechet) << ',' << fixed(e.precision) << ',' << fixed(e.recall) << ',' << fixed(e.mean_score)
          << ',' << fixed(e.bad_mode_fraction) << ',' << fixed(e.outlier_fraction) << ",ok\n";
    } else {
      std::string msg = r.error;
      for (char& c : msg) {
        if (c == ',' || c == '\n') c = ';';
      }
      out << ",,,,,,failed: " << msg << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------- paired runs

PairedReport compare_paired(Experiment& experiment, const GuidanceConfig& a, const GuidanceConfig& b) {
  const auto ra = experiment.sample(a);
  const auto rb = experiment.sample(b);
  PairedReport report;
  report.pairs.reserve(ra.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    if (ra[i].seed != rb[i].seed || ra[i].class_id != rb[i].class_id) {
      fail(ErrorKind::invalid_argument, "paired runs disagree on trajectory seeds");
    }
    report.pairs.push_back({*ra[i].class_id, ra[i].seed, ra[i].quality_score, rb[i].quality_score});
    sum += rb[i].quality_score - ra[i].quality_score;
  }
  report.mean_delta = ra.empty() ? 0.0 : sum / static_cast<double>(ra.size());
  report.a = experiment.evaluate(ra);
  report.b = experiment.evaluate(rb);
  report.records_a = ra;
  report.records_b = rb;
  return report;
}

PairedReport compare_paired(const ExperimentConfig& a, const ExperimentConfig& b) {
  ExperimentConfig b_as_a = b;
  b_as_a.guidance = a.guidance;
  if (!(a == b_as_a)) {
    fail(ErrorKind::invalid_argument, "paired configs must differ only in guidance (seeds, counts and model must match)");
  }
  ExperimentConfig merged = a;
  // The pool, if any, is shared; build candidates at the w of whichever side uses FaME.
  if (!merged.pool.candidate_w) {
    merged.pool.candidate_w = (b.guidance.f > 0.0 && a.guidance.f == 0.0) ? b.guidance.w : a.guidance.w;
  }
  Experiment experiment(merged);
  return compare_paired(experiment, a.guidance, b.guidance);
}

std::string format_paired_csv(const PairedReport& report) {
  std::ostringstream out;
  out << "class,seed,score_a,score_b,delta\n";
  for (const auto& p : report.pairs) {
    out << p.class_id << ',' << p.seed << ',' << fixed(p.score_a) << ',' << fixed(p.score_b) << ','
        << fixed(p.score_b - p.score_a) << '\n';
  }
  return out.str();
}

std::string paired_svg(const GmmSpec& spec, const SamplesByClass& reference, const PairedReport& report,
                       const std::string& label_a, const std::string& label_b) {
  return scatter_panels_svg({label_a, label_b}, {mode_layers(spec, report.records_a, reference),
                                                 mode_layers(spec, report.records_b, reference)});
}

}  // namespace fame
