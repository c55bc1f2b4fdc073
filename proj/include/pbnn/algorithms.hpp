#pragma once

#include "pbnn/kernels.hpp"
#include "pbnn/models.hpp"
#include "pbnn/optim.hpp"
#include "pbnn/particles.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace pbnn::algorithms {

enum class Algorithm { Smc, Sgsmc, Ohsmc, Map, MapHmc, SgsmcHmc };
Algorithm algorithm_from_name(const std::string& name);
std::string algorithm_name(Algorithm a);

// Fisher-identity gradient: sum_j w_j grad_fn(phi_j) over the ensemble.
// Zero-weight particles are skipped; a non-finite per-particle gradient
// raises with the particle index.
Eigen::VectorXd fisher_gradient(
    const particles::Ensemble& e,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_fn, int n_threads = 1);

struct SmcPassResult {
  particles::Ensemble ensemble;
  double log_lik = 0.0; // accumulated evidence estimate for this pass
  Eigen::VectorXd grad; // Fisher gradient at the final ensemble
};

// One full sweep over the dataset: for each observation, maybe-resample, move
// every particle (MRTH targets the posterior of the preceding observations),
// then reweight with that observation's likelihood. Fresh prior ensemble.
SmcPassResult smc_pass(const models::FkModel& model, const Eigen::VectorXd& psi,
                       const models::Dataset& data, long n_particles,
                       const kernels::Kernel& kernel, const particles::ResamplePolicy& policy,
                       std::uint64_t seed, int n_threads = 1);

struct TrainState {
  Eigen::VectorXd psi;
  particles::Ensemble ensemble;
  optim::OptState opt;
  long iteration = 0;
  long collapse_events = 0;
};

struct StepInfo {
  double objective = 0.0; // pass log-lik (SGSMC) / batch evidence increment (OHSMC)
  double grad_norm = 0.0;
};

// Cold-start step: full SMC pass over the batch rows, gradient scaled by
// N_full/M, one optimizer step. The pass ensemble replaces state.ensemble.
StepInfo sgsmc_step(const models::FkModel& model, const models::Dataset& data,
                    const std::vector<long>& batch_idx, TrainState& state, long n_particles,
                    const kernels::Kernel& kernel, const particles::ResamplePolicy& policy,
                    const optim::Optimizer& opt, std::uint64_t seed, int n_threads = 1);

// Warm-start step on the persistent ensemble: maybe-resample, relaxed kernel
// move, reweight with the whole-batch potential (unscaled), Fisher gradient
// scaled by N_full/M with the post-reweight weights, optimizer step. A weight
// collapse reinitializes the ensemble from the prior (counted) and retries.
StepInfo ohsmc_step(const models::FkModel& model, const models::Dataset& data,
                    const std::vector<long>& batch_idx, TrainState& state,
                    const kernels::Kernel& kernel, const particles::ResamplePolicy& policy,
                    const optim::Optimizer& opt, std::uint64_t seed, int n_threads = 1);

// HMC draws from p(phi | data; psi) (prior x potential); runs as the
// pipeline tail of the MAP-HMC / SGSMC-HMC baselines.
kernels::HmcResult posterior_hmc(const models::FkModel& model, const models::Dataset& data,
                                 const Eigen::VectorXd& psi, const kernels::Hmc& hmc,
                                 long n_samples, long n_burn, std::uint64_t seed,
                                 const Eigen::VectorXd* init = nullptr);

struct IterRecord {
  long iteration = 0;
  long epoch = 0;
  double objective = 0.0;
  double ess = 0.0;
  double psi_norm = 0.0;
  double val_nlpd = std::numeric_limits<double>::quiet_NaN();
};

struct TrainOptions {
  Algorithm algorithm = Algorithm::Ohsmc;
  long n_particles = 1000;
  long batch_size = 10;
  long epochs = 200;
  enum class BatchMode { EpochShuffle, IidUniform };
  BatchMode batch_mode = BatchMode::EpochShuffle;
  kernels::Kernel kernel = kernels::RandomWalk{0.01};
  particles::ResamplePolicy resample;
  optim::Optimizer optimizer;
  Eigen::VectorXd psi_init;
  Eigen::VectorXd phi_init; // MAP family start point
  kernels::Hmc hmc;         // MAP_HMC / SGSMC_HMC tail
  long hmc_samples = 1000;
  long hmc_burn = 2000;
  std::uint64_t seed = 0;
  int n_threads = 1;
  // Validation NLPD for early stopping, evaluated once per epoch; the best
  // (psi, ensemble) snapshot is kept when this is set.
  std::function<double(const Eigen::VectorXd&, const particles::Ensemble&)> validation;
  std::function<void(const IterRecord&)> on_iteration;
};

struct TrainResult {
  Eigen::VectorXd psi;
  particles::Ensemble ensemble;
  long iterations = 0;
  long collapse_events = 0;
  bool has_best = false; // true when validation ran at least once
  double best_val = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd best_psi;
  particles::Ensemble best_ensemble;
};

// Unified driver for all six algorithm variants. SMC runs one full-data pass
// per iteration ("epochs" counts iterations); minibatch algorithms run
// ceil(N/M) iterations per epoch.
TrainResult train(const models::FkModel& model, const models::Dataset& data,
                  const TrainOptions& opts);

// Named convenience wrappers.
TrainResult smc_train(const models::FkModel& model, const models::Dataset& data,
                      TrainOptions opts);
std::pair<Eigen::VectorXd, Eigen::VectorXd> map_train(const models::FkModel& model,
                                                      const models::Dataset& data,
                                                      TrainOptions opts);

} // namespace pbnn::algorithms
