#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fame/error.hpp"
#include "fame/experiment.hpp"
#include "fame/svg.hpp"

namespace fs = std::filesystem;
using namespace fame;

namespace {

// Failures while reading or validating the configuration exit with 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<double> w;
  std::optional<double> f;
  std::optional<double> tau;
  std::optional<std::string> pool;
  std::optional<std::size_t> n_per_class;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "Experiment config file (JSON)");
  sub->add_option("--seed", o.seed, "Experiment seed");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--workers", o.workers, "Worker threads (0 = all cores)");
  sub->add_option("--w", o.w, "CFG scale");
  sub->add_option("--f", o.f, "FaME scale");
  sub->add_option("--tau", o.tau, "FaME activation fraction");
  sub->add_option("--pool", o.pool, "Failure pool file");
  sub->add_option("--n-per-class", o.n_per_class, "Samples per class");
}

ExperimentConfig resolve(const Overrides& o) {
  try {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.out_dir = *o.out;
    if (o.workers) cfg.workers = *o.workers;
    if (o.w) cfg.guidance.w = *o.w;
    if (o.f) cfg.guidance.f = *o.f;
    if (o.tau) cfg.guidance.tau = *o.tau;
    if (o.pool) cfg.pool.path = *o.pool;
    if (o.n_per_class) cfg.n_per_class = *o.n_per_class;
    if (cfg.source.kind == "neural" && cfg.source.checkpoint.empty()) {
      cfg.source.checkpoint = (cfg.run_dir() / "model.fmlp").string();
    }
    cfg.validate();
    return cfg;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path.string() + " for writing");
  out << text;
}

int cmd_dataset(const Overrides& o) {
  const ExperimentConfig cfg = resolve(o);
  Experiment ex(cfg);
  const fs::path dir = cfg.run_dir();
  save_gmm(*ex.spec(), (fs::create_directories(dir), dir / "dataset.json"));
  std::vector<ScatterLayer> layers;
  const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  std::size_t i = 0;
  for (const auto& [c, xs] : ex.reference()) {
    layers.push_back({"class " + std::to_string(c), palette[i++ % 8], xs});
  }
  if (ex.spec()->dim() >= 2) write_file(dir / "plots" / "dataset.svg", scatter_svg(cfg.dataset, layers));
  std::cout << "dataset " << cfg.dataset << ": " << ex.spec()->num_classes() << " classes, d=" << ex.spec()->dim()
            << "\nwrote " << (dir / "dataset.json").string() << '\n';
  return 0;
}

int cmd_train(const Overrides& o) {
  const ExperimentConfig cfg = resolve(o);
  if (cfg.source.kind != "neural") throw ConfigError("train needs source.kind = \"neural\"");
  if (fs::exists(cfg.source.checkpoint)) fs::remove(cfg.source.checkpoint);
  Experiment ex(cfg);
  ex.model();
  const auto& r = *ex.train_report();
  std::cout << "probe loss " << r.initial_probe_loss << " -> " << r.final_probe_loss << "\nwrote "
            << cfg.source.checkpoint << '\n';
  return 0;
}

int cmd_build_pool(const Overrides& o) {
  ExperimentConfig cfg = resolve(o);
  const fs::path target = cfg.pool.path.empty() ? cfg.run_dir() / "pool.fmpl" : fs::path(cfg.pool.path);
  cfg.pool.path.clear();
  Experiment ex(cfg);
  const auto pool = ex.pool();
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  save_pool(*pool, target);
  std::cout << "pool: " << pool->size() << " records, mode " << to_string(pool->mode()) << ", T=" << pool->steps()
            << "\n";
  for (const auto& rec : pool->records()) {
    std::cout << "  class " << rec.class_id.value_or(-1) << " seed " << rec.seed << " score " << rec.quality_score
              << '\n';
  }
  std::cout << "wrote " << target.string() << '\n';
  return 0;
}

int cmd_sample(const Overrides& o) {
  const ExperimentConfig cfg = resolve(o);
  Experiment ex(cfg);
  const auto records = ex.sample();
  const fs::path dir = cfg.run_dir();
  fs::create_directories(dir / "trajectories");
  write_file(dir / "config.echo", format_config(cfg));
  save_trajectories(dir / "trajectories" / "samples.fame", records);
  if (ex.has_pool() && cfg.pool.path.empty()) save_pool(*ex.pool(), dir / "pool.fmpl");
  std::cout << "sampled " << records.size() << " trajectories\nwrote "
            << (dir / "trajectories" / "samples.fame").string() << '\n';
  return 0;
}

int cmd_evaluate(const Overrides& o, const std::string& trajectories) {
  const ExperimentConfig cfg = resolve(o);
  Experiment ex(cfg);
  const fs::path dir = cfg.run_dir();
  const fs::path input = trajectories.empty() ? dir / "trajectories" / "samples.fame" : fs::path(trajectories);
  auto records = load_trajectories(input);
  const auto scores = ex.scores(records);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].quality_score = scores[i];
  EvalReport report = write_reports(ex, records, dir);
  report.config_echo.clear();
  std::cout << format_summary(report);
  return 0;
}

int cmd_run(const Overrides& o) {
  const ExperimentConfig cfg = resolve(o);
  PipelineResult result = run_pipeline(cfg);
  result.report.config_echo.clear();
  std::cout << format_summary(result.report) << "wrote " << result.run_dir.string() << '\n';
  return 0;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + item + "' is not a number");
    }
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  return values;
}

int cmd_sweep(const Overrides& o, const std::string& axis_name, const std::string& values) {
  const ExperimentConfig cfg = resolve(o);
  SweepSpec sweep;
  try {
    sweep.axis = parse_sweep_axis(axis_name);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  sweep.values = parse_values(values);
  Experiment ex(cfg);
  const auto rows = run_sweep(ex, sweep);
  const std::string csv = format_sweep_csv(sweep.axis, rows);
  write_file(cfg.run_dir() / "reports" / ("sweep_" + axis_name + ".csv"), csv);
  std::cout << csv;
  for (const auto& r : rows) {
    if (!r.ok) return 2;
  }
  return 0;
}

int cmd_compare(const Overrides& o, const std::string& config_b) {
  const ExperimentConfig a_cfg = resolve(o);
  ExperimentConfig b_cfg;
  ExperimentConfig base = a_cfg;
  if (config_b.empty()) {
    // Default pairing: the configured guidance against plain CFG at the same w.
    b_cfg = a_cfg;
    base.guidance.f = 0.0;
  } else {
    Overrides ob = o;
    ob.config = config_b;
    b_cfg = resolve(ob);
  }
  PairedReport report;
  try {
    report = compare_paired(base, b_cfg);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::invalid_argument) throw ConfigError(e.what());
    throw;
  }
  const fs::path dir = a_cfg.run_dir();
  write_file(dir / "reports" / "paired.csv", format_paired_csv(report));
  write_file(dir / "reports" / "paired_a_quality.csv", format_quality_csv(report.a.quality));
  write_file(dir / "reports" / "paired_b_quality.csv", format_quality_csv(report.b.quality));
  const Experiment ex(base);
  write_file(dir / "plots" / "paired.svg",
             paired_svg(*ex.spec(), ex.reference(), report, "a: w=" + std::to_string(base.guidance.w) +
                        " f=" + std::to_string(base.guidance.f), "b: w=" + std::to_string(b_cfg.guidance.w) +
                        " f=" + std::to_string(b_cfg.guidance.f)));
  std::cout << "pairs: " << report.pairs.size() << "\nmean score delta (b - a): " << report.mean_delta << "\n";
  std::cout << "a: mean score " << report.a.mean_score << ", bad-mode " << report.a.bad_mode_fraction
            << ", frechet " << report.a.frechet << "\n";
  std::cout << "b: mean score " << report.b.mean_score << ", bad-mode " << report.b.bad_mode_fraction
            << ", frechet " << report.b.frechet << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided diffusion sampling lab: CFG and failure-mode escape on toy mixtures"};
  app.require_subcommand(1);

  Overrides o;
  std::string trajectories;
  std::string axis = "w";
  std::string values;
  std::string config_b;

  auto* dataset = app.add_subcommand("dataset", "Write the dataset spec and a scatter plot of it");
  auto* train = app.add_subcommand("train", "Train the neural denoiser");
  auto* pool = app.add_subcommand("build-pool", "Build and save the failure pool");
  auto* sample = app.add_subcommand("sample", "Sample trajectories with the configured guidance");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate sampled trajectories");
  auto* run = app.add_subcommand("run", "Run the whole pipeline");
  auto* sweep = app.add_subcommand("sweep", "Sweep one guidance parameter");
  auto* compare = app.add_subcommand("compare", "Paired comparison of two guidance settings");
  for (auto* sub : {dataset, train, pool, sample, evaluate, run, sweep, compare}) add_common(sub, o);
  evaluate->add_option("--trajectories", trajectories, "Trajectory file (default: the run's samples)");
  sweep->add_option("--axis", axis, "w, f or tau")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  compare->add_option("--config-b", config_b, "Second config (default: same config with f = 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*dataset) return cmd_dataset(o);
    if (*train) return cmd_train(o);
    if (*pool) return cmd_build_pool(o);
    if (*sample) return cmd_sample(o);
    if (*evaluate) return cmd_evaluate(o, trajectories);
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o, axis, values);
    if (*compare) return cmd_compare(o, config_b);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
