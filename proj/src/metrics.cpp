#include "pbnn/metrics.hpp"

#include "pbnn/util.hpp"

#include <cmath>
#include <stdexcept>

namespace pbnn::metrics {

void PredictiveEnsemble::validate() const {
  if (preds.empty()) throw std::invalid_argument("empty predictive ensemble");
  if (log_weights.size() != n_particles())
    throw std::invalid_argument("prediction/weight count mismatch");
  for (const auto& p : preds)
    if (p.rows() != preds.front().rows() || p.cols() != preds.front().cols())
      throw std::invalid_argument("ragged prediction matrices");
  if (std::abs(logsumexp(log_weights)) > 1e-8)
    throw std::invalid_argument("predictive weights not normalized");
}

double nlpd(const PredictiveEnsemble& pe, const Eigen::MatrixXd& y, nn::Likelihood lik) {
  pe.validate();
  const long N = y.rows();
  if (pe.preds.front().rows() != N) throw std::invalid_argument("nlpd: prediction/label rows");
  const long J = pe.n_particles();
  // lp(j, n) = log p(y_n | pred_{j,n})
  Eigen::MatrixXd lp(J, N);
  for (long j = 0; j < J; ++j)
    lp.row(j) = nn::log_likelihood_rows(lik, pe.preds[j], y).transpose();
  double total = 0.0;
  Eigen::VectorXd col(J);
  for (long n = 0; n < N; ++n) {
    col = lp.col(n) + pe.log_weights;
    total += logsumexp(col);
  }
  return -total / static_cast<double>(N);
}

double rmse(const PredictiveEnsemble& pe, const Eigen::MatrixXd& reference) {
  pe.validate();
  if (pe.preds.front().rows() != reference.rows() ||
      pe.preds.front().cols() != reference.cols())
    throw std::invalid_argument("rmse: shape mismatch");
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(reference.rows(), reference.cols());
  for (long j = 0; j < pe.n_particles(); ++j)
    mean += std::exp(pe.log_weights[j]) * pe.preds[j];
  return std::sqrt((mean - reference).array().square().mean());
}

Eigen::MatrixXd mixture_probs(const PredictiveEnsemble& pe, nn::Likelihood lik) {
  pe.validate();
  const long N = pe.preds.front().rows();
  Eigen::MatrixXd mix;
  if (lik == nn::Likelihood::BernoulliFromProb) {
    if (pe.preds.front().cols() != 1)
      throw std::invalid_argument("bernoulli predictions must be one column");
    Eigen::VectorXd p1 = Eigen::VectorXd::Zero(N);
    for (long j = 0; j < pe.n_particles(); ++j)
      p1 += std::exp(pe.log_weights[j]) * pe.preds[j].col(0);
    mix.resize(N, 2);
    mix.col(0) = 1.0 - p1.array();
    mix.col(1) = p1;
  } else if (lik == nn::Likelihood::CategoricalFromProbs) {
    mix = Eigen::MatrixXd::Zero(N, pe.preds.front().cols());
    for (long j = 0; j < pe.n_particles(); ++j)
      mix += std::exp(pe.log_weights[j]) * pe.preds[j];
  } else {
    throw std::invalid_argument("classification metrics need a classification likelihood");
  }
  return mix;
}

namespace {

// argmax with ties broken toward the lowest index
long argmax_row(const Eigen::MatrixXd& m, long row) {
  long best = 0;
  for (long c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best;
}

} // namespace

double accuracy(const PredictiveEnsemble& pe, const Eigen::MatrixXd& labels, nn::Likelihood lik) {
  const Eigen::MatrixXd mix = mixture_probs(pe, lik);
  if (labels.rows() != mix.rows() || labels.cols() != 1)
    throw std::invalid_argument("accuracy: labels must be one class-index column");
  long hits = 0;
  for (long n = 0; n < mix.rows(); ++n)
    if (argmax_row(mix, n) == static_cast<long>(labels(n, 0))) ++hits;
  return static_cast<double>(hits) / static_cast<double>(mix.rows());
}

EceResult ece(const PredictiveEnsemble& pe, const Eigen::MatrixXd& labels, nn::Likelihood lik,
              int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  const Eigen::MatrixXd mix = mixture_probs(pe, lik);
  if (labels.rows() != mix.rows() || labels.cols() != 1)
    throw std::invalid_argument("ece: labels must be one class-index column");
  const long N = mix.rows();
  EceResult r;
  r.bin_confidence = Eigen::VectorXd::Zero(n_bins);
  r.bin_accuracy = Eigen::VectorXd::Zero(n_bins);
  r.bin_count = Eigen::VectorXd::Zero(n_bins);
  for (long n = 0; n < N; ++n) {
    const long pred = argmax_row(mix, n);
    const double conf = mix(n, pred);
    int b = static_cast<int>(std::floor(conf * n_bins));
    b = std::min(std::max(b, 0), n_bins - 1); // conf == 1 lands in the top bin
    r.bin_count[b] += 1;
    r.bin_confidence[b] += conf;
    r.bin_accuracy[b] += (pred == static_cast<long>(labels(n, 0))) ? 1.0 : 0.0;
  }
  for (int b = 0; b < n_bins; ++b) {
    if (r.bin_count[b] == 0) continue;
    r.bin_confidence[b] /= r.bin_count[b];
    r.bin_accuracy[b] /= r.bin_count[b];
    r.ece += (r.bin_count[b] / static_cast<double>(N)) *
             std::abs(r.bin_accuracy[b] - r.bin_confidence[b]);
  }
  return r;
}

} // namespace pbnn::metrics
