#include "pbnn/runner.hpp"

#include "pbnn/algorithms.hpp"
#include "pbnn/metrics.hpp"
#include "pbnn/models.hpp"
#include "pbnn/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace pbnn::runner {

namespace fs = std::filesystem;
using config::ConfigError;
using config::RunConfig;
using nlohmann::ordered_json;

namespace {

std::string timestamp_utc() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Everything one seed needs: the model, the (possibly split) data, and what
// to report about the predictions.
struct Problem {
  std::unique_ptr<models::FkModel> model;
  const models::PbnnModel* net = nullptr; // null for the crescent model
  models::Dataset train;
  bool has_splits = false;
  models::Dataset valid, test;
  Eigen::MatrixXd rmse_reference; // empty -> no RMSE metric
  bool classification = false;
  nn::Likelihood lik = nn::Likelihood::GaussianUnitVar;
};

Problem build_problem(const RunConfig& cfg, std::uint64_t seed, const models::Splits* csv) {
  Problem p;
  if (cfg.experiment == RunConfig::Experiment::Crescent) {
    p.model = std::make_unique<models::CrescentModel>();
    p.train = models::make_crescent_data(cfg.n_train, 1.0, Eigen::Vector2d::Zero(), seed);
    return p;
  }

  models::Splits s;
  switch (cfg.experiment) {
    case RunConfig::Experiment::Regression:
      s = models::make_regression_data(cfg.n_train, seed);
      break;
    case RunConfig::Experiment::Moons:
      s = models::make_moons_data(cfg.n_train, cfg.noise_std, seed);
      break;
    case RunConfig::Experiment::Csv:
      s = *csv;
      break;
    default:
      throw std::logic_error("unhandled experiment");
  }
  p.train = std::move(s.train);
  p.valid = std::move(s.valid);
  p.test = std::move(s.test);
  p.has_splits = true;
  p.lik = nn::likelihood_from_name(cfg.likelihood);
  p.classification = p.lik != nn::Likelihood::GaussianUnitVar;

  if (cfg.experiment == RunConfig::Experiment::Regression) {
    // report RMSE against the noiseless curve, not the noisy draws
    p.rmse_reference = p.test.x.unaryExpr([](double v) { return models::regression_truth(v); });
  } else if (!p.classification) {
    p.rmse_reference = p.test.y;
  }

  auto net = std::make_unique<models::PbnnModel>(cfg.network, p.lik);
  p.net = net.get();
  p.model = std::move(net);
  return p;
}

metrics::PredictiveEnsemble predictive(const models::PbnnModel& net, const Eigen::VectorXd& psi,
                                       const particles::Ensemble& e, const Eigen::MatrixXd& X,
                                       long eval_j, std::uint64_t seed, int n_threads) {
  const particles::Ensemble* use = &e;
  particles::Ensemble resized;
  if (e.n() != eval_j) {
    auto eng = rng::engine(seed, {rng::kEvalResample});
    resized = particles::resample_to(e, eval_j, particles::Scheme::Stratified, eng);
    use = &resized;
  }
  metrics::PredictiveEnsemble pe;
  pe.preds = net.predict_all(psi, use->positions, X, n_threads);
  pe.log_weights = use->log_weights;
  return pe;
}

ordered_json run_seed(const RunConfig& cfg, std::uint64_t seed, const models::Splits* csv,
                      const fs::path& seed_dir) {
  fs::create_directories(seed_dir);
  Problem p = build_problem(cfg, seed, csv);
  const std::string hash = config_hash_hex(cfg);

  algorithms::TrainOptions opts;
  opts.algorithm = cfg.algorithm;
  opts.n_particles = cfg.particles;
  opts.batch_size = cfg.batch_size;
  opts.epochs = cfg.epochs;
  opts.batch_mode = cfg.batch_mode;
  opts.kernel = cfg.kernel;
  opts.resample = cfg.resample;
  opts.optimizer = cfg.optimizer;
  opts.hmc = cfg.hmc;
  opts.hmc_samples = cfg.hmc_samples;
  opts.hmc_burn = cfg.hmc_burn;
  opts.seed = seed;
  opts.n_threads = cfg.threads;

  if (p.net) {
    nn::Params init = nn::init_params(p.net->net(), seed);
    opts.psi_init = init.psi;
    opts.phi_init = init.phi;
  } else {
    opts.psi_init = Eigen::VectorXd::Constant(1, cfg.psi_init);
    opts.phi_init = Eigen::VectorXd::Zero(2);
  }

  if (p.has_splits) {
    opts.validation = [&](const Eigen::VectorXd& psi, const particles::Ensemble& e) {
      metrics::PredictiveEnsemble pe;
      pe.preds = p.net->predict_all(psi, e.positions, p.valid.x, cfg.threads);
      pe.log_weights = e.log_weights;
      return metrics::nlpd(pe, p.valid.y, p.lik);
    };
  }

  std::ofstream trace(seed_dir / "trace.jsonl");
  if (!trace) throw std::runtime_error("cannot write " + (seed_dir / "trace.jsonl").string());
  opts.on_iteration = [&](const algorithms::IterRecord& r) {
    ordered_json j{{"iter", r.iteration}, {"epoch", r.epoch},       {"objective", r.objective},
                   {"ess", r.ess},        {"psi_norm", r.psi_norm}};
    if (std::isfinite(r.val_nlpd)) j["val_nlpd"] = r.val_nlpd;
    j["config_hash"] = hash;
    trace << j.dump() << "\n";
  };

  algorithms::TrainResult res = algorithms::train(*p.model, p.train, opts);
  trace.close();

  const Eigen::VectorXd& psi = res.has_best ? res.best_psi : res.psi;
  const particles::Ensemble& ens = res.has_best ? res.best_ensemble : res.ensemble;
  particles::save_snapshot((seed_dir / "ensemble.csv").string(), ens);

  ordered_json m;
  m["experiment"] = config::experiment_name(cfg.experiment);
  m["algorithm"] = algorithms::algorithm_name(cfg.algorithm);
  m["seed"] = seed;
  m["config_hash"] = hash;
  m["timestamp"] = timestamp_utc();
  m["iterations"] = res.iterations;
  m["collapse_events"] = res.collapse_events;
  if (!p.net) {
    m["psi_hat"] = psi[0];
    m["psi_abs_err"] = std::abs(psi[0] - 1.0);
  } else {
    metrics::PredictiveEnsemble pe =
        predictive(*p.net, psi, ens, p.test.x, cfg.eval_particles, seed, cfg.threads);
    m["nlpd"] = metrics::nlpd(pe, p.test.y, p.lik);
    if (p.classification) {
      m["accuracy"] = metrics::accuracy(pe, p.test.y, p.lik);
      m["ece"] = metrics::ece(pe, p.test.y, p.lik).ece;
    } else if (p.rmse_reference.size() > 0) {
      m["rmse"] = metrics::rmse(pe, p.rmse_reference);
    }
  }

  std::ofstream mf(seed_dir / "metrics.json");
  if (!mf) throw std::runtime_error("cannot write " + (seed_dir / "metrics.json").string());
  mf << m.dump(2) << "\n";
  return m;
}

std::vector<ordered_json> collect_metrics(const std::string& output_dir) {
  if (!fs::exists(output_dir))
    throw ConfigError("no such directory: '" + output_dir + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(output_dir))
    if (entry.is_regular_file() && entry.path().filename() == "metrics.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<ordered_json> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    ordered_json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("unreadable metrics file " + f.string() + ": " + e.what());
    }
    out.push_back(std::move(j));
  }
  if (out.empty())
    throw ConfigError("no runs found under '" + output_dir + "' (no metrics.json files)");
  return out;
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"nlpd", "rmse", "accuracy", "ece", "psi_hat"};
  return cols;
}

std::string mean_std_cell(const std::vector<double>& v) {
  if (v.empty()) return "";
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  char buf[64];
  if (v.size() == 1) {
    std::snprintf(buf, sizeof(buf), "%.2f (—)", mean);
    return buf;
  }
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", mean, sd);
  return buf;
}

std::string summary_from(const std::vector<ordered_json>& records) {
  // key (algorithm, experiment) keeps the rows alphabetical by algorithm
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<double>>> groups;
  std::map<std::pair<std::string, std::string>, long> counts;
  for (const auto& r : records) {
    auto key = std::make_pair(r.value("algorithm", std::string("?")),
                              r.value("experiment", std::string("?")));
    ++counts[key];
    for (const auto& c : metric_columns())
      if (r.contains(c) && r[c].is_number()) groups[key][c].push_back(r[c].get<double>());
  }
  std::ostringstream o;
  o << "experiment,algorithm,n_seeds";
  for (const auto& c : metric_columns()) o << "," << c;
  o << "\n";
  for (const auto& [key, cols] : groups) {
    o << key.second << "," << key.first << "," << counts[key];
    for (const auto& c : metric_columns()) {
      auto it = cols.find(c);
      o << "," << (it == cols.end() ? std::string() : mean_std_cell(it->second));
    }
    o << "\n";
  }
  return o.str();
}

std::string seeds_from(std::vector<ordered_json> records) {
  std::sort(records.begin(), records.end(), [](const ordered_json& a, const ordered_json& b) {
    auto k = [](const ordered_json& r) {
      return std::make_tuple(r.value("algorithm", std::string()), r.value("experiment", std::string()),
                             r.value("seed", std::uint64_t{0}));
    };
    return k(a) < k(b);
  });
  std::ostringstream o;
  o << "experiment,algorithm,seed";
  for (const auto& c : metric_columns()) o << "," << c;
  o << ",psi_abs_err,collapse_events\n";
  for (const auto& r : records) {
    o << r.value("experiment", std::string("?")) << "," << r.value("algorithm", std::string("?"))
      << "," << r.value("seed", std::uint64_t{0});
    auto num = [&](const std::string& c) -> std::string {
      if (!r.contains(c) || !r[c].is_number()) return "";
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6g", r[c].get<double>());
      return buf;
    };
    for (const auto& c : metric_columns()) o << "," << num(c);
    o << "," << num("psi_abs_err") << "," << r.value("collapse_events", 0L) << "\n";
  }
  return o.str();
}

} // namespace

int run(const RunConfig& cfg, bool parallel_seeds, std::ostream* log) {
  fs::create_directories(cfg.output_dir);
  {
    std::ofstream f(fs::path(cfg.output_dir) / "config.resolved");
    if (!f) throw ConfigError("cannot write under output_dir '" + cfg.output_dir + "'");
    f << "# config_hash = " << config_hash_hex(cfg) << "\n" << config::canonical_text(cfg);
  }

  std::optional<models::Splits> csv;
  if (cfg.experiment == RunConfig::Experiment::Csv) {
    try {
      csv = models::load_csv(cfg.csv_path, cfg.csv_targets, cfg.csv_classification);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("experiment.csv_path: ") + e.what());
    }
  }

  const auto& seeds = cfg.seeds;
  std::vector<std::string> errors(seeds.size());
  std::vector<std::string> notes(seeds.size());

  auto one = [&](std::size_t i) {
    fs::path seed_dir = fs::path(cfg.output_dir) / ("seed_" + std::to_string(seeds[i]));
    auto t0 = std::chrono::steady_clock::now();
    try {
      ordered_json m = run_seed(cfg, seeds[i], csv ? &*csv : nullptr, seed_dir);
      double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream line;
      line << "seed " << seeds[i] << ":";
      for (const auto& c : metric_columns())
        if (m.contains(c)) line << " " << c << "=" << m[c].dump();
      char buf[32];
      std::snprintf(buf, sizeof(buf), " (%.1f s)", dt);
      line << buf;
      notes[i] = line.str();
    } catch (const std::exception& e) {
      errors[i] = e.what();
      std::ofstream f(seed_dir / "FAILED");
      f << e.what() << "\n";
    }
  };

  if (parallel_seeds && seeds.size() > 1) {
    std::vector<std::thread> pool;
    pool.reserve(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) pool.emplace_back(one, i);
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      one(i);
      if (log && !notes[i].empty()) *log << notes[i] << "\n";
    }
  }

  int rc = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (parallel_seeds && log && !notes[i].empty()) *log << notes[i] << "\n";
    if (!errors[i].empty()) {
      rc = 3;
      if (log) *log << "seed " << seeds[i] << " FAILED: " << errors[i] << "\n";
    }
  }

  // tables cover whatever did finish (and whatever else already lives there)
  try {
    const std::string summary = summary_csv(cfg.output_dir);
    const std::string per_seed = seeds_csv(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "summary.csv") << summary;
    std::ofstream(fs::path(cfg.output_dir) / "seeds.csv") << per_seed;
  } catch (const ConfigError&) {
    // every seed failed; nothing to tabulate
  }
  return rc;
}

std::string summary_csv(const std::string& output_dir) {
  return summary_from(collect_metrics(output_dir));
}

std::string seeds_csv(const std::string& output_dir) {
  return seeds_from(collect_metrics(output_dir));
}

int summarize(const std::string& output_dir, std::ostream& out) {
  try {
    out << summary_csv(output_dir);
  } catch (const ConfigError& e) {
    out << e.what() << "\n";
    return 2;
  }
  return 0;
}

namespace {

void write_splits_csv(const std::string& path, const models::Splits& s) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << "split";
  for (long j = 0; j < s.train.x.cols(); ++j) f << ",x" << j;
  for (long j = 0; j < s.train.y.cols(); ++j) f << ",y" << j;
  f << "\n";
  const models::Dataset* parts[3] = {&s.train, &s.valid, &s.test};
  for (int part = 0; part < 3; ++part) {
    const models::Dataset& d = *parts[part];
    for (long i = 0; i < d.size(); ++i) {
      f << part;
      for (long j = 0; j < d.x.cols(); ++j) f << "," << fmt(d.x(i, j));
      for (long j = 0; j < d.y.cols(); ++j) f << "," << fmt(d.y(i, j));
      f << "\n";
    }
  }
}

} // namespace

void gen_data(const std::string& experiment, std::uint64_t seed, const std::string& out_csv,
              long n, double noise_std) {
  std::string u = experiment;
  std::transform(u.begin(), u.end(), u.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (n < 1) throw ConfigError("gen-data: n must be >= 1");
  if (u == "CRESCENT") {
    models::write_csv(out_csv, models::make_crescent_data(n, 1.0, Eigen::Vector2d::Zero(), seed));
  } else if (u == "REGRESSION") {
    write_splits_csv(out_csv, models::make_regression_data(n, seed));
  } else if (u == "MOONS") {
    if (noise_std < 0) throw ConfigError("gen-data: noise_std must be >= 0");
    write_splits_csv(out_csv, models::make_moons_data(n, noise_std, seed));
  } else {
    throw ConfigError("gen-data: unknown experiment '" + experiment +
                      "' (expected CRESCENT, REGRESSION, or MOONS)");
  }
}

} // namespace pbnn::runner
