#pragma once

// Shared oracles for the test suites: finite differences, a conjugate
// linear-Gaussian model with closed-form evidence/posterior, and simple
// distributional statistics.

#include "pbnn/models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testsup {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences, h = 1e-5 unless stated.
inline Eigen::VectorXd fd_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                               const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (long i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    double up = f(xp);
    xp[i] = x[i] - h;
    double dn = f(xp);
    xp[i] = x[i];
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

inline double max_grad_rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  double worst = 0;
  for (long i = 0; i < got.size(); ++i) worst = std::max(worst, rel_err(got[i], want[i]));
  return worst;
}

// y_n = psi + phi + eps_n with phi ~ N(0,1), eps ~ N(0,1): everything about
// it is available in closed form, which makes it the reference point for the
// evidence, posterior, and score estimates.
//   y | psi  ~ N(psi*1, I + 11^T)
//   phi | y  ~ N(sum(y - psi)/(N+1), 1/(N+1))
struct Conjugate {
  static double log_evidence(const Eigen::VectorXd& y, double psi) {
    const double n = static_cast<double>(y.size());
    Eigen::ArrayXd r = y.array() - psi;
    double s = r.sum();
    return -0.5 * n * std::log(2 * M_PI) - 0.5 * std::log(n + 1) -
           0.5 * (r.square().sum() - s * s / (n + 1));
  }
  static double score_psi(const Eigen::VectorXd& y, double psi) {
    return (y.array() - psi).sum() / (static_cast<double>(y.size()) + 1);
  }
  static double posterior_mean(const Eigen::VectorXd& y, double psi) {
    return (y.array() - psi).sum() / (static_cast<double>(y.size()) + 1);
  }
  static double posterior_var(const Eigen::VectorXd& y) {
    return 1.0 / (static_cast<double>(y.size()) + 1);
  }
};

class ConjugateModel final : public pbnn::models::FkModel {
 public:
  ConjugateModel() : prior_(pbnn::models::standard_prior(1)) {}
  long dim_psi() const override { return 1; }
  long dim_phi() const override { return 1; }
  const pbnn::models::GaussianPrior& prior() const override { return prior_; }

  double log_potential(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                       const pbnn::models::Dataset& batch) const override {
    Eigen::ArrayXd r = batch.y.col(0).array() - psi[0] - phi[0];
    return -0.5 * static_cast<double>(batch.size()) * std::log(2 * M_PI) -
           0.5 * r.square().sum();
  }
  Eigen::VectorXd grad_psi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                           const pbnn::models::Dataset& batch) const override {
    Eigen::VectorXd g(1);
    g[0] = (batch.y.col(0).array() - psi[0] - phi[0]).sum();
    return g;
  }
  Eigen::VectorXd grad_phi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                           const pbnn::models::Dataset& batch) const override {
    return grad_psi(psi, phi, batch);
  }

 private:
  pbnn::models::GaussianPrior prior_;
};

inline pbnn::models::Dataset conjugate_data(const Eigen::VectorXd& y) {
  pbnn::models::Dataset d;
  d.x.resize(y.size(), 0);
  d.y = y;
  return d;
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// One-sample Kolmogorov-Smirnov statistic against a given CDF.
inline double ks_statistic(std::vector<double> samples,
                           const std::function<double(double)>& cdf = std_normal_cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double worst = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double c = cdf(samples[i]);
    worst = std::max(worst, std::abs(c - static_cast<double>(i) / n));
    worst = std::max(worst, std::abs(static_cast<double>(i + 1) / n - c));
  }
  return worst;
}

inline double mean_of(const Eigen::VectorXd& v) { return v.mean(); }
inline double var_of(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

} // namespace testsup
