#include "pbnn/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace pbnn::config {
namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw ConfigError(field + ": " + msg);
}

long parse_long(const std::string& field, const std::string& v) {
  try {
    std::size_t pos = 0;
    long out = std::stol(v, &pos);
    if (pos != v.size()) fail(field, "not an integer: '" + v + "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(field, "not an integer: '" + v + "'");
  }
}

double parse_double(const std::string& field, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) fail(field, "not a number: '" + v + "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(field, "not a number: '" + v + "'");
  }
}

bool parse_bool(const std::string& field, const std::string& v) {
  std::string u = upper(v);
  if (u == "TRUE" || u == "1" || u == "YES") return true;
  if (u == "FALSE" || u == "0" || u == "NO") return false;
  fail(field, "not a boolean: '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> k = {
      {"experiment", {"kind", "n_train", "noise_std", "csv_path", "csv_targets", "csv_classification"}},
      {"network", {"layers", "stochastic_layer", "gelu", "likelihood"}},
      {"algorithm", {"kind", "particles", "batch_size", "epochs", "batch_mode", "psi_init"}},
      {"optimizer", {"kind", "schedule", "lr", "decay_rate", "decay_period"}},
      {"kernel", {"kind", "variance", "n_steps", "terminal_time"}},
      {"posterior_hmc", {"n_leapfrog", "step_size", "n_samples", "n_burn"}},
      {"resampling", {"policy", "threshold", "scheme"}},
      {"run", {"seeds", "output_dir", "threads", "eval_particles"}},
  };
  return k;
}

void check_key(const std::string& section, const std::string& key) {
  auto it = known_keys().find(section);
  if (it == known_keys().end()) fail(section, "unknown section");
  if (!it->second.count(key)) fail(section + "." + key, "unknown key");
}

// Fetches + consumes a key so leftovers can be reported.
struct Section {
  std::string name;
  std::map<std::string, std::string> kv;

  bool has(const std::string& key) const { return kv.count(key) > 0; }
  std::string take(const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::string v = it->second;
    kv.erase(it);
    return v;
  }
  std::string require(const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) fail(name + "." + key, "required key missing");
    std::string v = it->second;
    kv.erase(it);
    return v;
  }
};

Section grab(const SectionMap& sections, const std::string& name) {
  Section s;
  s.name = name;
  auto it = sections.find(name);
  if (it != sections.end()) s.kv = it->second;
  return s;
}

} // namespace

std::string experiment_name(RunConfig::Experiment e) {
  switch (e) {
    case RunConfig::Experiment::Crescent: return "CRESCENT";
    case RunConfig::Experiment::Regression: return "REGRESSION";
    case RunConfig::Experiment::Moons: return "MOONS";
    case RunConfig::Experiment::Csv: return "CSV";
  }
  throw std::logic_error("bad experiment enum");
}

RunConfig::Experiment experiment_from_name(const std::string& name) {
  std::string u = upper(name);
  if (u == "CRESCENT") return RunConfig::Experiment::Crescent;
  if (u == "REGRESSION") return RunConfig::Experiment::Regression;
  if (u == "MOONS") return RunConfig::Experiment::Moons;
  if (u == "CSV") return RunConfig::Experiment::Csv;
  fail("experiment.kind", "unknown experiment '" + name + "'");
}

SectionMap parse_sections(const std::string& text) {
  SectionMap out;
  std::istringstream in(text);
  std::string line, section;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      out[section]; // register even if empty
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any [section]");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out[section][key] = val;
  }
  return out;
}

void apply_overrides(SectionMap& sections, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    auto dot = ov.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("override '" + ov + "': expected section.key=value");
    std::string section = trim(ov.substr(0, dot));
    std::string key = trim(ov.substr(dot + 1, eq - dot - 1));
    std::string val = trim(ov.substr(eq + 1));
    check_key(section, key);
    sections[section][key] = val;
  }
}

RunConfig config_from_sections(const SectionMap& sections) {
  for (const auto& [sec, kv] : sections)
    for (const auto& [key, val] : kv) check_key(sec, key);

  RunConfig cfg;

  Section exp = grab(sections, "experiment");
  cfg.experiment = experiment_from_name(exp.require("kind"));
  cfg.n_train = parse_long("experiment.n_train", exp.take("n_train", "100"));
  if (cfg.n_train < 1) fail("experiment.n_train", "must be >= 1");
  if (exp.has("noise_std")) {
    if (cfg.experiment != RunConfig::Experiment::Moons)
      fail("experiment.noise_std", "only valid for MOONS");
    cfg.noise_std = parse_double("experiment.noise_std", exp.take("noise_std", ""));
    if (cfg.noise_std < 0) fail("experiment.noise_std", "must be >= 0");
  }
  if (cfg.experiment == RunConfig::Experiment::Csv) {
    cfg.csv_path = exp.require("csv_path");
    std::istringstream ts(exp.require("csv_targets"));
    std::string tok;
    while (ts >> tok) {
      if (!tok.empty() && tok.back() == ',') tok.pop_back();
      if (tok.empty()) continue;
      cfg.csv_targets.push_back(static_cast<int>(parse_long("experiment.csv_targets", tok)));
    }
    if (cfg.csv_targets.empty()) fail("experiment.csv_targets", "needs at least one column index");
    cfg.csv_classification =
        parse_bool("experiment.csv_classification", exp.take("csv_classification", "false"));
  } else if (exp.has("csv_path") || exp.has("csv_targets") || exp.has("csv_classification")) {
    fail("experiment.csv_path", "csv_* keys only valid for kind = CSV");
  }

  bool wants_network = cfg.experiment != RunConfig::Experiment::Crescent;
  Section net = grab(sections, "network");
  if (wants_network) {
    cfg.has_network = true;
    cfg.network.layers = nn::NetworkSpec::parse_layers(net.require("layers"));
    cfg.network.stochastic_layer =
        static_cast<int>(parse_long("network.stochastic_layer", net.require("stochastic_layer")));
    std::string gelu = upper(net.take("gelu", "TANH"));
    if (gelu != "TANH" && gelu != "ERF") fail("network.gelu", "expected TANH or ERF");
    cfg.network.exact_gelu = gelu == "ERF";
    try {
      cfg.network.validate();
    } catch (const std::exception& e) {
      fail("network", e.what());
    }
    std::string lik = upper(net.take("likelihood", ""));
    if (lik.empty()) {
      switch (cfg.experiment) {
        case RunConfig::Experiment::Regression: lik = "GAUSSIAN_UNIT_VAR"; break;
        case RunConfig::Experiment::Moons: lik = "BERNOULLI_FROM_PROB"; break;
        case RunConfig::Experiment::Csv:
          lik = !cfg.csv_classification       ? "GAUSSIAN_UNIT_VAR"
                : cfg.network.out_dim() > 1 ? "CATEGORICAL_FROM_PROBS"
                                              : "BERNOULLI_FROM_PROB";
          break;
        default: break;
      }
    }
    try {
      cfg.likelihood = nn::likelihood_name(nn::likelihood_from_name(lik));
    } catch (const std::exception& e) {
      fail("network.likelihood", e.what());
    }
  } else if (sections.count("network")) {
    fail("network", "CRESCENT has a fixed model; drop the [network] section");
  }

  Section alg = grab(sections, "algorithm");
  try {
    cfg.algorithm = algorithms::algorithm_from_name(upper(alg.require("kind")));
  } catch (const std::exception& e) {
    fail("algorithm.kind", e.what());
  }
  cfg.particles = parse_long("algorithm.particles", alg.take("particles", "1000"));
  if (cfg.particles < 1) fail("algorithm.particles", "must be >= 1");
  cfg.batch_size = parse_long("algorithm.batch_size", alg.take("batch_size", "10"));
  if (cfg.batch_size < 1) fail("algorithm.batch_size", "must be >= 1");
  cfg.epochs = parse_long("algorithm.epochs", alg.take("epochs", "200"));
  if (cfg.epochs < 1) fail("algorithm.epochs", "must be >= 1");
  {
    std::string bm = upper(alg.take("batch_mode", "EPOCH_SHUFFLE"));
    if (bm == "EPOCH_SHUFFLE")
      cfg.batch_mode = algorithms::TrainOptions::BatchMode::EpochShuffle;
    else if (bm == "IID_UNIFORM")
      cfg.batch_mode = algorithms::TrainOptions::BatchMode::IidUniform;
    else
      fail("algorithm.batch_mode", "expected EPOCH_SHUFFLE or IID_UNIFORM");
  }
  if (alg.has("psi_init")) {
    if (cfg.has_network)
      fail("algorithm.psi_init", "network weights come from the initializer; only CRESCENT takes psi_init");
    cfg.psi_init = parse_double("algorithm.psi_init", alg.take("psi_init", ""));
  }

  Section opt = grab(sections, "optimizer");
  {
    std::string kind = upper(opt.take("kind", "ADAM"));
    if (kind == "ADAM")
      cfg.optimizer.kind = optim::Optimizer::Kind::Adam;
    else if (kind == "SGD")
      cfg.optimizer.kind = optim::Optimizer::Kind::Sgd;
    else
      fail("optimizer.kind", "expected ADAM or SGD");
    std::string sched = upper(opt.take("schedule", "CONSTANT"));
    if (sched == "CONSTANT")
      cfg.optimizer.schedule.kind = optim::Schedule::Kind::Constant;
    else if (sched == "EXP_DECAY")
      cfg.optimizer.schedule.kind = optim::Schedule::Kind::ExpDecay;
    else
      fail("optimizer.schedule", "expected CONSTANT or EXP_DECAY");
    cfg.optimizer.schedule.lr = parse_double("optimizer.lr", opt.take("lr", "0.01"));
    if (cfg.optimizer.schedule.lr <= 0) fail("optimizer.lr", "must be > 0");
    cfg.optimizer.schedule.rate = parse_double("optimizer.decay_rate", opt.take("decay_rate", "0.96"));
    if (cfg.optimizer.schedule.rate <= 0) fail("optimizer.decay_rate", "must be > 0");
    cfg.optimizer.schedule.period =
        parse_double("optimizer.decay_period", opt.take("decay_period", "10"));
    if (cfg.optimizer.schedule.period <= 0) fail("optimizer.decay_period", "must be > 0");
  }

  Section ker = grab(sections, "kernel");
  {
    std::string kind = upper(ker.take("kind", "RANDOM_WALK"));
    if (kind == "RANDOM_WALK") {
      kernels::RandomWalk k;
      k.variance = parse_double("kernel.variance", ker.take("variance", "0.001"));
      if (k.variance < 0) fail("kernel.variance", "must be >= 0");
      cfg.kernel = k;
    } else if (kind == "MRTH") {
      kernels::Mrth k;
      k.n_steps = static_cast<int>(parse_long("kernel.n_steps", ker.take("n_steps", "10")));
      if (k.n_steps < 1) fail("kernel.n_steps", "must be >= 1");
      k.variance = parse_double("kernel.variance", ker.take("variance", "0.001"));
      if (k.variance <= 0) fail("kernel.variance", "must be > 0");
      cfg.kernel = k;
    } else if (kind == "OU") {
      kernels::Ou k;
      k.time = parse_double("kernel.terminal_time", ker.take("terminal_time", "0.1"));
      if (k.time < 0) fail("kernel.terminal_time", "must be >= 0");
      cfg.kernel = k;
    } else {
      fail("kernel.kind", "expected RANDOM_WALK, MRTH, or OU");
    }
    if (cfg.algorithm == algorithms::Algorithm::Ohsmc &&
        std::holds_alternative<kernels::Mrth>(cfg.kernel))
      fail("kernel.kind", "OHSMC moves have no fixed MRTH target; use RANDOM_WALK or OU");
  }

  Section hmc = grab(sections, "posterior_hmc");
  cfg.hmc.n_leapfrog =
      static_cast<int>(parse_long("posterior_hmc.n_leapfrog", hmc.take("n_leapfrog", "100")));
  if (cfg.hmc.n_leapfrog < 1) fail("posterior_hmc.n_leapfrog", "must be >= 1");
  cfg.hmc.step_size = parse_double("posterior_hmc.step_size", hmc.take("step_size", "0.01"));
  if (cfg.hmc.step_size <= 0) fail("posterior_hmc.step_size", "must be > 0");
  cfg.hmc_samples = parse_long("posterior_hmc.n_samples", hmc.take("n_samples", "1000"));
  if (cfg.hmc_samples < 1) fail("posterior_hmc.n_samples", "must be >= 1");
  cfg.hmc_burn = parse_long("posterior_hmc.n_burn", hmc.take("n_burn", "2000"));
  if (cfg.hmc_burn < 0) fail("posterior_hmc.n_burn", "must be >= 0");

  Section res = grab(sections, "resampling");
  {
    std::string policy = upper(res.take("policy", "ALWAYS"));
    if (policy == "ALWAYS")
      cfg.resample.when = particles::ResamplePolicy::When::Always;
    else if (policy == "ESS_BELOW")
      cfg.resample.when = particles::ResamplePolicy::When::EssBelow;
    else
      fail("resampling.policy", "expected ALWAYS or ESS_BELOW");
    cfg.resample.threshold = parse_double("resampling.threshold", res.take("threshold", "0.5"));
    if (cfg.resample.when == particles::ResamplePolicy::When::EssBelow &&
        (cfg.resample.threshold <= 0 || cfg.resample.threshold > 1))
      fail("resampling.threshold", "must be in (0, 1]");
    try {
      cfg.resample.scheme = particles::scheme_from_name(upper(res.take("scheme", "STRATIFIED")));
    } catch (const std::exception& e) {
      fail("resampling.scheme", e.what());
    }
  }

  Section run = grab(sections, "run");
  if (run.has("seeds")) {
    cfg.seeds.clear();
    std::istringstream ss(run.take("seeds", ""));
    std::string tok;
    while (ss >> tok) {
      if (!tok.empty() && tok.back() == ',') tok.pop_back();
      if (tok.empty()) continue;
      try {
        cfg.seeds.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        fail("run.seeds", "not a seed: '" + tok + "'");
      }
    }
    if (cfg.seeds.empty()) fail("run.seeds", "needs at least one seed");
  }
  cfg.output_dir = run.take("output_dir", cfg.output_dir);
  cfg.threads = static_cast<int>(parse_long("run.threads", run.take("threads", "1")));
  if (cfg.threads < 1) fail("run.threads", "must be >= 1");
  cfg.eval_particles = parse_long("run.eval_particles", run.take("eval_particles", "1000"));
  if (cfg.eval_particles < 1) fail("run.eval_particles", "must be >= 1");

  return cfg;
}

RunConfig parse_config(const std::string& text) {
  return config_from_sections(parse_sections(text));
}

RunConfig load_config_file(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  SectionMap sections = parse_sections(buf.str());
  apply_overrides(sections, overrides);
  return config_from_sections(sections);
}

namespace {

std::string canonical_impl(const RunConfig& cfg, bool include_run) {
  std::ostringstream o;
  o << "[experiment]\n";
  o << "kind = " << experiment_name(cfg.experiment) << "\n";
  if (cfg.experiment != RunConfig::Experiment::Csv)
    o << "n_train = " << cfg.n_train << "\n";
  if (cfg.experiment == RunConfig::Experiment::Moons)
    o << "noise_std = " << fmt(cfg.noise_std) << "\n";
  if (cfg.experiment == RunConfig::Experiment::Csv) {
    o << "csv_path = " << cfg.csv_path << "\n";
    o << "csv_targets =";
    for (int t : cfg.csv_targets) o << " " << t;
    o << "\n";
    o << "csv_classification = " << (cfg.csv_classification ? "true" : "false") << "\n";
  }

  if (cfg.has_network) {
    o << "\n[network]\n";
    o << "layers = " << cfg.network.layers_text() << "\n";
    o << "stochastic_layer = " << cfg.network.stochastic_layer << "\n";
    o << "gelu = " << (cfg.network.exact_gelu ? "ERF" : "TANH") << "\n";
    o << "likelihood = " << cfg.likelihood << "\n";
  }

  o << "\n[algorithm]\n";
  o << "kind = " << algorithms::algorithm_name(cfg.algorithm) << "\n";
  o << "particles = " << cfg.particles << "\n";
  o << "batch_size = " << cfg.batch_size << "\n";
  o << "epochs = " << cfg.epochs << "\n";
  o << "batch_mode = "
    << (cfg.batch_mode == algorithms::TrainOptions::BatchMode::EpochShuffle ? "EPOCH_SHUFFLE"
                                                                            : "IID_UNIFORM")
    << "\n";
  if (!cfg.has_network) o << "psi_init = " << fmt(cfg.psi_init) << "\n";

  o << "\n[optimizer]\n";
  o << "kind = " << (cfg.optimizer.kind == optim::Optimizer::Kind::Adam ? "ADAM" : "SGD") << "\n";
  bool decay = cfg.optimizer.schedule.kind == optim::Schedule::Kind::ExpDecay;
  o << "schedule = " << (decay ? "EXP_DECAY" : "CONSTANT") << "\n";
  o << "lr = " << fmt(cfg.optimizer.schedule.lr) << "\n";
  if (decay) {
    o << "decay_rate = " << fmt(cfg.optimizer.schedule.rate) << "\n";
    o << "decay_period = " << fmt(cfg.optimizer.schedule.period) << "\n";
  }

  o << "\n[kernel]\n";
  if (const auto* rw = std::get_if<kernels::RandomWalk>(&cfg.kernel)) {
    o << "kind = RANDOM_WALK\n";
    o << "variance = " << fmt(rw->variance) << "\n";
  } else if (const auto* m = std::get_if<kernels::Mrth>(&cfg.kernel)) {
    o << "kind = MRTH\n";
    o << "n_steps = " << m->n_steps << "\n";
    o << "variance = " << fmt(m->variance) << "\n";
  } else {
    o << "kind = OU\n";
    o << "terminal_time = " << fmt(std::get<kernels::Ou>(cfg.kernel).time) << "\n";
  }

  o << "\n[posterior_hmc]\n";
  o << "n_leapfrog = " << cfg.hmc.n_leapfrog << "\n";
  o << "step_size = " << fmt(cfg.hmc.step_size) << "\n";
  o << "n_samples = " << cfg.hmc_samples << "\n";
  o << "n_burn = " << cfg.hmc_burn << "\n";

  o << "\n[resampling]\n";
  bool essb = cfg.resample.when == particles::ResamplePolicy::When::EssBelow;
  o << "policy = " << (essb ? "ESS_BELOW" : "ALWAYS") << "\n";
  if (essb) o << "threshold = " << fmt(cfg.resample.threshold) << "\n";
  o << "scheme = " << particles::scheme_name(cfg.resample.scheme) << "\n";

  if (include_run) {
    o << "\n[run]\n";
    o << "seeds =";
    for (auto s : cfg.seeds) o << " " << s;
    o << "\n";
    o << "output_dir = " << cfg.output_dir << "\n";
    o << "threads = " << cfg.threads << "\n";
    o << "eval_particles = " << cfg.eval_particles << "\n";
  }
  return o.str();
}

} // namespace

std::string canonical_text(const RunConfig& cfg) { return canonical_impl(cfg, true); }

std::string config_hash_hex(const RunConfig& cfg) {
  std::string text = canonical_impl(cfg, false);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace pbnn::config
