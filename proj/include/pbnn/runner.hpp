#pragma once

#include "pbnn/config.hpp"

#include <iosfwd>
#include <string>

namespace pbnn::runner {

// Trains every seed in cfg (sequentially, or one thread per seed), writing
// under cfg.output_dir:
//   config.resolved            resolved config + hash
//   seed_<s>/trace.jsonl       one record per optimizer iteration
//   seed_<s>/metrics.json      final metrics for that seed
//   seed_<s>/ensemble.csv      particle snapshot used for evaluation
//   seeds.csv, summary.csv     per-seed table and mean (std) aggregate
// Returns 0, or 3 when a seed's training failed (the seed is reported on
// `log` and in seed_<s>/FAILED). Config problems throw config::ConfigError.
int run(const config::RunConfig& cfg, bool parallel_seeds = false, std::ostream* log = nullptr);

// Aggregate table over every metrics.json below output_dir; throws
// config::ConfigError when there are none.
std::string summary_csv(const std::string& output_dir);
std::string seeds_csv(const std::string& output_dir);

// Prints summary_csv to `out`; returns 0, or 2 on a missing/empty directory.
int summarize(const std::string& output_dir, std::ostream& out);

// Writes one dataset as CSV. For REGRESSION/MOONS (three splits) a leading
// `split` column marks train=0 / valid=1 / test=2.
void gen_data(const std::string& experiment, std::uint64_t seed, const std::string& out_csv,
              long n = 100, double noise_std = 0.3);

} // namespace pbnn::runner
