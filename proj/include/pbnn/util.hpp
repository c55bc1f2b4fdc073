#pragma once

#include <Eigen/Dense>
#include <limits>

namespace pbnn {

// log(sum(exp(v))), stable, tolerant of -inf entries. All -inf gives -inf.
inline double logsumexp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m; // all -inf (or a stray +inf/nan propagates)
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

} // namespace pbnn
