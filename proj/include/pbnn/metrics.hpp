#pragma once

#include "pbnn/nn.hpp"

#include <Eigen/Dense>
#include <vector>

namespace pbnn::metrics {

// Posterior-predictive ensemble: one prediction matrix (N_test x d_y) per
// particle plus that particle's normalized weight.
struct PredictiveEnsemble {
  std::vector<Eigen::MatrixXd> preds;
  Eigen::VectorXd log_weights;

  long n_particles() const { return static_cast<long>(preds.size()); }
  void validate() const;
};

// -(1/N) sum_n logsumexp_j [log w_j + log p(y_n | pred_{j,n})].
double nlpd(const PredictiveEnsemble& pe, const Eigen::MatrixXd& y, nn::Likelihood lik);

// RMSE of the weighted predictive mean against reference values (for the
// synthetic task: noiseless f(x)).
double rmse(const PredictiveEnsemble& pe, const Eigen::MatrixXd& reference);

// Weighted mixture class probabilities; a single Bernoulli column expands to
// the two-column (P(class 0), P(class 1)) form.
Eigen::MatrixXd mixture_probs(const PredictiveEnsemble& pe, nn::Likelihood lik);

// Fraction of points whose mixture argmax matches the label (ties break to
// the lowest class index).
double accuracy(const PredictiveEnsemble& pe, const Eigen::MatrixXd& labels, nn::Likelihood lik);

struct EceResult {
  double ece = 0.0;
  Eigen::VectorXd bin_confidence, bin_accuracy, bin_count;
};

// Expected calibration error with equal-width confidence bins over the
// mixture predictive (confidence = max class probability).
EceResult ece(const PredictiveEnsemble& pe, const Eigen::MatrixXd& labels, nn::Likelihood lik,
              int n_bins = 10);

} // namespace pbnn::metrics
