#include "pbnn/particles.hpp"

#include "pbnn/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pbnn::particles {

WeightCollapse::WeightCollapse(long step_idx)
    : std::runtime_error(step_idx >= 0
                             ? "all particle weights collapsed to zero at step " + std::to_string(step_idx)
                             : "all particle weights collapsed to zero"),
      step(step_idx) {}

Ensemble make_uniform(Eigen::MatrixXd positions) {
  Ensemble e;
  const long J = positions.rows();
  if (J == 0) throw std::invalid_argument("empty ensemble");
  e.positions = std::move(positions);
  e.log_weights = Eigen::VectorXd::Constant(J, -std::log(static_cast<double>(J)));
  return e;
}

double ess(const Eigen::VectorXd& log_weights) {
  return std::exp(-logsumexp(2.0 * log_weights));
}

Eigen::VectorXd weights(const Eigen::VectorXd& log_weights) {
  // element-wise std::exp: Eigen's packet exp can turn -inf into a denormal
  // instead of an exact 0, which breaks dead-particle checks downstream
  return log_weights.unaryExpr([](double v) { return std::exp(v); });
}

double reweight(Ensemble& e, const Eigen::VectorXd& log_potentials) {
  if (log_potentials.size() != e.n())
    throw std::invalid_argument("log_potentials size does not match ensemble");
  for (Eigen::Index j = 0; j < log_potentials.size(); ++j) {
    const double g = log_potentials[j];
    if (std::isnan(g) || g == std::numeric_limits<double>::infinity())
      throw std::invalid_argument("log potential must be finite or -inf (particle " +
                                  std::to_string(j) + ")");
  }
  Eigen::VectorXd lw = e.log_weights + log_potentials;
  const double increment = logsumexp(lw);
  if (!std::isfinite(increment)) throw WeightCollapse();
  e.log_weights = lw.array() - increment;
  e.log_evidence += increment;
  return increment;
}

Scheme scheme_from_name(const std::string& name) {
  if (name == "MULTINOMIAL") return Scheme::Multinomial;
  if (name == "STRATIFIED") return Scheme::Stratified;
  if (name == "SYSTEMATIC") return Scheme::Systematic;
  throw std::invalid_argument("unknown resampling scheme: " + name);
}

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Multinomial: return "MULTINOMIAL";
    case Scheme::Stratified: return "STRATIFIED";
    case Scheme::Systematic: return "SYSTEMATIC";
  }
  throw std::logic_error("bad scheme enum");
}

std::vector<long> resample_indices(const Eigen::VectorXd& lin_weights, long n_out,
                                   Scheme scheme, std::mt19937_64& eng) {
  const long J = lin_weights.size();
  if (J == 0 || n_out <= 0) throw std::invalid_argument("resample needs particles");
  Eigen::VectorXd cum(J);
  double total = 0.0;
  for (long j = 0; j < J; ++j) {
    const double w = lin_weights[j];
    if (!(w >= 0.0)) throw std::invalid_argument("negative or NaN weight in resample");
    total += w;
    cum[j] = total;
  }
  if (total <= 0.0) throw std::invalid_argument("all-zero weights in resample");

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<long> idx(n_out);
  auto pick = [&](double u) {
    // first j with cum[j] > u (u in [0, total))
    const double* begin = cum.data();
    const double* it = std::upper_bound(begin, begin + J, u);
    long j = it - begin;
    return std::min(j, J - 1);
  };

  switch (scheme) {
    case Scheme::Multinomial:
      for (long i = 0; i < n_out; ++i) idx[i] = pick(unif(eng) * total);
      break;
    case Scheme::Stratified:
      for (long i = 0; i < n_out; ++i)
        idx[i] = pick((i + unif(eng)) / n_out * total);
      break;
    case Scheme::Systematic: {
      const double u0 = unif(eng);
      for (long i = 0; i < n_out; ++i) idx[i] = pick((i + u0) / n_out * total);
      break;
    }
  }
  return idx;
}

void resample(Ensemble& e, Scheme scheme, std::mt19937_64& eng) {
  const auto idx = resample_indices(weights(e.log_weights), e.n(), scheme, eng);
  Eigen::MatrixXd next(e.n(), e.dim());
  for (long i = 0; i < e.n(); ++i) next.row(i) = e.positions.row(idx[i]);
  e.positions = std::move(next);
  e.log_weights.setConstant(-std::log(static_cast<double>(e.n())));
}

Ensemble resample_to(const Ensemble& e, long n_out, Scheme scheme, std::mt19937_64& eng) {
  const auto idx = resample_indices(weights(e.log_weights), n_out, scheme, eng);
  Eigen::MatrixXd pos(n_out, e.dim());
  for (long i = 0; i < n_out; ++i) pos.row(i) = e.positions.row(idx[i]);
  Ensemble out = make_uniform(std::move(pos));
  out.log_evidence = e.log_evidence;
  return out;
}

bool maybe_resample(Ensemble& e, const ResamplePolicy& policy, std::mt19937_64& eng) {
  bool fire = true;
  if (policy.when == ResamplePolicy::When::EssBelow)
    fire = ess(e.log_weights) < policy.threshold * static_cast<double>(e.n());
  if (fire) resample(e, policy.scheme, eng);
  return fire;
}

void save_snapshot(const std::string& path, const Ensemble& e) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    f << buf;
  };
  f << "# log_evidence=";
  put(e.log_evidence);
  f << '\n';
  for (long j = 0; j < e.n(); ++j) {
    put(e.log_weights[j]);
    for (long k = 0; k < e.dim(); ++k) {
      f << ',';
      put(e.positions(j, k));
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

Ensemble load_snapshot(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("# log_evidence=", 0) != 0)
    throw std::runtime_error(path + ": missing log_evidence header");
  Ensemble e;
  e.log_evidence = std::stod(line.substr(std::string("# log_evidence=").size()));
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(path + ": ragged snapshot rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().size() < 2)
    throw std::runtime_error(path + ": empty snapshot");
  const long J = static_cast<long>(rows.size());
  const long d = static_cast<long>(rows.front().size()) - 1;
  e.positions.resize(J, d);
  e.log_weights.resize(J);
  for (long j = 0; j < J; ++j) {
    e.log_weights[j] = rows[j][0];
    for (long k = 0; k < d; ++k) e.positions(j, k) = rows[j][k + 1];
  }
  // guard against drift introduced by the text round-trip
  e.log_weights.array() -= logsumexp(e.log_weights);
  return e;
}

} // namespace pbnn::particles
