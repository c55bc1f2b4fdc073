#pragma once

#include "pbnn/algorithms.hpp"
#include "pbnn/kernels.hpp"
#include "pbnn/nn.hpp"
#include "pbnn/optim.hpp"
#include "pbnn/particles.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbnn::config {

// Validation/parse failure; message carries the offending field path
// ("section.key: why").
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  enum class Experiment { Crescent, Regression, Moons, Csv };
  Experiment experiment = Experiment::Crescent;
  long n_train = 100;      // crescent: dataset size; regression/moons: per split
  double noise_std = 0.3;  // moons
  std::string csv_path;
  std::vector<int> csv_targets;
  bool csv_classification = false;

  bool has_network = false;
  nn::NetworkSpec network;
  std::string likelihood; // empty = derive from the experiment

  algorithms::Algorithm algorithm = algorithms::Algorithm::Ohsmc;
  long particles = 1000;
  long batch_size = 10;
  long epochs = 200;
  algorithms::TrainOptions::BatchMode batch_mode =
      algorithms::TrainOptions::BatchMode::EpochShuffle;
  double psi_init = 0.1; // crescent only; networks use their initializer

  optim::Optimizer optimizer;
  kernels::Kernel kernel = kernels::RandomWalk{0.001};

  kernels::Hmc hmc;
  long hmc_samples = 1000;
  long hmc_burn = 2000;

  particles::ResamplePolicy resample;

  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  int threads = 1;
  long eval_particles = 1000;
};

std::string experiment_name(RunConfig::Experiment e);
RunConfig::Experiment experiment_from_name(const std::string& name);

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

SectionMap parse_sections(const std::string& text);
// overrides are "section.key=value" strings (CLI --set)
void apply_overrides(SectionMap& sections, const std::vector<std::string>& overrides);
RunConfig config_from_sections(const SectionMap& sections);

RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path,
                           const std::vector<std::string>& overrides = {});

// Resolved, deterministic serialization (round-trips through parse_config).
std::string canonical_text(const RunConfig& cfg);
// FNV-1a over the canonical text minus the [run] section, as 16 hex chars.
// Two runs with the same hash trained on the same problem with the same
// settings; seeds/output/threads do not participate.
std::string config_hash_hex(const RunConfig& cfg);

} // namespace pbnn::config
