#pragma once

#include "pbnn/kernels.hpp"
#include "pbnn/nn.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace pbnn::models {

struct GaussianPrior {
  Eigen::VectorXd mean, var; // diagonal covariance

  long dim() const { return mean.size(); }
  void validate() const;
  double logpdf(const Eigen::VectorXd& x) const;
  Eigen::VectorXd grad_logpdf(const Eigen::VectorXd& x) const;
};

GaussianPrior standard_prior(long dim);
Eigen::MatrixXd sample_prior(const GaussianPrior& prior, long n, std::uint64_t seed);

struct Dataset {
  Eigen::MatrixXd x, y;
  long size() const { return y.rows(); }
};

struct Splits {
  Dataset train, valid, test;
};

Dataset take_rows(const Dataset& d, const std::vector<long>& idx);
Dataset slice_rows(const Dataset& d, long begin, long end);

// A model in Feynman-Kac form: prior over the sampled parameters phi,
// per-batch log-potentials log p(y_batch | phi; psi), and the gradients the
// optimizer and the MCMC kernels need.
class FkModel {
 public:
  virtual ~FkModel() = default;

  virtual long dim_psi() const = 0;
  virtual long dim_phi() const = 0;
  virtual const GaussianPrior& prior() const = 0;

  // log p(y_batch | phi; psi), summed over rows; 0 for an empty batch.
  virtual double log_potential(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                               const Dataset& batch) const = 0;
  virtual Eigen::VectorXd grad_psi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                   const Dataset& batch) const = 0;
  virtual Eigen::VectorXd grad_phi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                   const Dataset& batch) const = 0;

  // Bulk entry points used by the particle loops. Defaults iterate over the
  // rows of `positions`; subclasses override to share work across particles.
  // Reductions are blocked so results do not depend on the thread count.
  virtual Eigen::VectorXd log_potential_all(const Eigen::VectorXd& psi,
                                            const Eigen::MatrixXd& positions,
                                            const Dataset& batch, int n_threads) const;
  virtual Eigen::VectorXd weighted_grad_psi(const Eigen::VectorXd& psi,
                                            const Eigen::MatrixXd& positions,
                                            const Eigen::VectorXd& lin_weights,
                                            const Dataset& batch, int n_threads) const;

  // Posterior over phi given the whole dataset at fixed psi (for HMC).
  virtual kernels::LogTarget phi_posterior(const Eigen::VectorXd& psi, const Dataset& data) const;
};

// log N(y; phi_1/psi + (phi_0^2 + psi^2)/2, 1); throws for psi == 0.
double crescent_loglik(double psi, const Eigen::Vector2d& phi, double y);

// Two-parameter toy with a crescent-shaped posterior:
//   y | phi ~ N(phi_1/psi + (phi_0^2 + psi^2)/2, 1),  phi ~ N(0, diag(2, 1)).
// x is unused (zero columns).
class CrescentModel final : public FkModel {
 public:
  CrescentModel();
  long dim_psi() const override { return 1; }
  long dim_phi() const override { return 2; }
  const GaussianPrior& prior() const override { return prior_; }
  double log_potential(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                       const Dataset& batch) const override;
  Eigen::VectorXd grad_psi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                           const Dataset& batch) const override;
  Eigen::VectorXd grad_phi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                           const Dataset& batch) const override;

  static double mean_fn(double psi, double phi0, double phi1);

 private:
  GaussianPrior prior_;
};

// Partially Bayesian network: the stochastic layer's parameters are phi with
// a standard normal prior, the remaining layers are psi.
class PbnnModel final : public FkModel {
 public:
  PbnnModel(nn::NetworkSpec spec, nn::Likelihood lik);

  const nn::NetworkSpec& net() const { return spec_; }
  nn::Likelihood likelihood() const { return lik_; }

  long dim_psi() const override { return spec_.dim_psi(); }
  long dim_phi() const override { return spec_.dim_phi(); }
  const GaussianPrior& prior() const override { return prior_; }

  double log_potential(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                       const Dataset& batch) const override;
  Eigen::VectorXd grad_psi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                           const Dataset& batch) const override;
  Eigen::VectorXd grad_phi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                           const Dataset& batch) const override;

  // The layers before the stochastic one only depend on psi, so their forward
  // pass is shared across the whole ensemble, and their weighted gradient is
  // one backward pass on the weight-summed sensitivity.
  Eigen::VectorXd log_potential_all(const Eigen::VectorXd& psi, const Eigen::MatrixXd& positions,
                                    const Dataset& batch, int n_threads) const override;
  Eigen::VectorXd weighted_grad_psi(const Eigen::VectorXd& psi, const Eigen::MatrixXd& positions,
                                    const Eigen::VectorXd& lin_weights, const Dataset& batch,
                                    int n_threads) const override;
  kernels::LogTarget phi_posterior(const Eigen::VectorXd& psi, const Dataset& data) const override;

  // Network outputs for each ensemble member; one (rows(X) x out_dim) matrix
  // per particle.
  std::vector<Eigen::MatrixXd> predict_all(const Eigen::VectorXd& psi,
                                           const Eigen::MatrixXd& positions,
                                           const Eigen::MatrixXd& X, int n_threads) const;

 private:
  nn::NetworkSpec spec_;
  nn::Likelihood lik_;
  GaussianPrior prior_;
  int s_; // stochastic layer index
};

// ---- data ------------------------------------------------------------------

Dataset make_crescent_data(long n, double psi_true, const Eigen::Vector2d& phi_true,
                           std::uint64_t seed);

// Noiseless regression target used by the synthetic 1-d experiment.
double regression_truth(double x);

// x ~ U(-6, 6), y = x sin(x tanh x) + N(0, 1); n points per split.
Splits make_regression_data(long n_per_split, std::uint64_t seed);

// Two interleaved half-moons with N(0, noise^2) jitter on both coordinates;
// n points per split, classes balanced.
Splits make_moons_data(long n_per_split, double noise, std::uint64_t seed);

// Numeric CSV -> 60/30/10 train/valid/test split in file order. Features are
// standardized with train-split statistics; regression targets too (so a
// unit-variance likelihood is on the right scale), class labels never.
Splits load_csv(const std::string& path, const std::vector<int>& target_cols,
                bool classification);

void write_csv(const std::string& path, const Dataset& d);
// base.train.csv / base.valid.csv / base.test.csv plus base.manifest.json.
void save_splits(const std::string& base, const Splits& s);

} // namespace pbnn::models
