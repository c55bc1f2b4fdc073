#pragma once

#include <Eigen/Dense>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbnn::particles {

// Thrown when a reweight leaves no particle with positive weight.
struct WeightCollapse : std::runtime_error {
  explicit WeightCollapse(long step_idx = -1);
  long step; // training/observation step, -1 when unknown
};

// Weighted particle cloud in log domain. log_weights stay normalized
// (logsumexp == 0); log_evidence accumulates the log-likelihood estimate.
struct Ensemble {
  Eigen::MatrixXd positions;   // J x d
  Eigen::VectorXd log_weights; // J
  double log_evidence = 0.0;

  long n() const { return positions.rows(); }
  long dim() const { return positions.cols(); }
};

// Equal-weight ensemble around the given positions.
Ensemble make_uniform(Eigen::MatrixXd positions);

// Effective sample size 1 / sum(w^2), computed from normalized log-weights.
double ess(const Eigen::VectorXd& log_weights);

// Normalized linear weights.
Eigen::VectorXd weights(const Eigen::VectorXd& log_weights);

// Multiplies weights by exp(log_potentials), renormalizes, and adds the
// normalizer to log_evidence. Entries must be finite or -inf; throws
// WeightCollapse if everything lands on -inf. Returns the evidence increment.
double reweight(Ensemble& e, const Eigen::VectorXd& log_potentials);

enum class Scheme { Multinomial, Stratified, Systematic };
Scheme scheme_from_name(const std::string& name);
std::string scheme_name(Scheme s);

std::vector<long> resample_indices(const Eigen::VectorXd& lin_weights, long n_out,
                                   Scheme scheme, std::mt19937_64& eng);

// In-place resample back to uniform weights (log_evidence untouched).
void resample(Ensemble& e, Scheme scheme, std::mt19937_64& eng);

// Resample a copy with n_out members (used to fix the ensemble size for eval).
Ensemble resample_to(const Ensemble& e, long n_out, Scheme scheme, std::mt19937_64& eng);

struct ResamplePolicy {
  enum class When { Always, EssBelow };
  When when = When::Always;
  double threshold = 0.5; // fraction of J, for EssBelow
  Scheme scheme = Scheme::Stratified;
};

// Applies the policy; returns whether a resample happened.
bool maybe_resample(Ensemble& e, const ResamplePolicy& policy, std::mt19937_64& eng);

// CSV snapshot: "# log_evidence=<v>" header line, then one
// "log_weight,x0,x1,..." row per particle, full double precision.
void save_snapshot(const std::string& path, const Ensemble& e);
Ensemble load_snapshot(const std::string& path);

} // namespace pbnn::particles
