#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <variant>

namespace pbnn::kernels {

// Unnormalized log-density (and optionally its gradient) a kernel can target.
struct LogTarget {
  std::function<double(const Eigen::VectorXd&)> logp;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad; // may be empty
};

// Blind Gaussian jitter; no stationarity guarantees.
struct RandomWalk {
  double variance = 1e-3;
};

// Metropolis random walk: n_steps accept/reject sweeps against a target.
struct Mrth {
  int n_steps = 10;
  double variance = 1e-3;
};

// Unit-rate Ornstein-Uhlenbeck bridge toward the prior; leaves
// N(prior_mean, diag(prior_var)) invariant for any terminal time.
struct Ou {
  double time = 0.1;
};

using Kernel = std::variant<RandomWalk, Mrth, Ou>;

std::string kernel_text(const Kernel& k);

Eigen::VectorXd rw_move(const RandomWalk& k, const Eigen::VectorXd& phi, std::mt19937_64& eng);

Eigen::VectorXd ou_move(const Ou& k, const Eigen::VectorXd& phi,
                        const Eigen::VectorXd& prior_mean, const Eigen::VectorXd& prior_var,
                        std::mt19937_64& eng);

// Returns the final state; *n_accept (optional) accumulates accepted proposals.
Eigen::VectorXd mrth_move(const Mrth& k, const Eigen::VectorXd& phi, const LogTarget& target,
                          std::mt19937_64& eng, long* n_accept = nullptr);

struct Hmc {
  int n_leapfrog = 100;
  double step_size = 0.01;
};

struct HmcResult {
  Eigen::MatrixXd samples; // n_samples x d, post burn-in
  long n_accept = 0;
  long n_divergent = 0;
  long n_total = 0;
  double acceptance_rate() const {
    return n_total > 0 ? static_cast<double>(n_accept) / n_total : 0.0;
  }
};

// Identity mass matrix, fixed leapfrog length, MH correction. Iterations with
// |dH| > 1000 (or a non-finite Hamiltonian) count as divergent and are
// rejected. Requires target.grad.
HmcResult hmc_sample(const Hmc& k, const LogTarget& target, const Eigen::VectorXd& init,
                     long n_samples, long n_burn, std::uint64_t seed);

} // namespace pbnn::kernels
