#include "pbnn/kernels.hpp"

#include "pbnn/rng.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pbnn::kernels {

namespace {

Eigen::VectorXd standard_normal(long d, std::mt19937_64& eng) {
  std::normal_distribution<double> dist;
  Eigen::VectorXd z(d);
  for (long i = 0; i < d; ++i) z[i] = dist(eng);
  return z;
}

double checked_logp(const LogTarget& target, const Eigen::VectorXd& x) {
  const double v = target.logp(x);
  if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
    throw std::runtime_error("kernel target returned a non-usable log-density");
  return v;
}

} // namespace

std::string kernel_text(const Kernel& k) {
  std::ostringstream os;
  if (const auto* rw = std::get_if<RandomWalk>(&k))
    os << "RANDOM_WALK variance=" << rw->variance;
  else if (const auto* m = std::get_if<Mrth>(&k))
    os << "MRTH n_steps=" << m->n_steps << " variance=" << m->variance;
  else if (const auto* ou = std::get_if<Ou>(&k))
    os << "OU time=" << ou->time;
  return os.str();
}

Eigen::VectorXd rw_move(const RandomWalk& k, const Eigen::VectorXd& phi, std::mt19937_64& eng) {
  if (k.variance < 0) throw std::invalid_argument("random walk variance must be >= 0");
  return phi + std::sqrt(k.variance) * standard_normal(phi.size(), eng);
}

Eigen::VectorXd ou_move(const Ou& k, const Eigen::VectorXd& phi,
                        const Eigen::VectorXd& prior_mean, const Eigen::VectorXd& prior_var,
                        std::mt19937_64& eng) {
  if (k.time < 0) throw std::invalid_argument("OU time must be >= 0");
  if (prior_mean.size() != phi.size() || prior_var.size() != phi.size())
    throw std::invalid_argument("OU prior moments do not match state dimension");
  const double decay = std::exp(-k.time);
  const double spread = std::sqrt(1.0 - decay * decay);
  Eigen::VectorXd z = standard_normal(phi.size(), eng);
  return prior_mean + decay * (phi - prior_mean) +
         spread * (prior_var.array().sqrt() * z.array()).matrix();
}

Eigen::VectorXd mrth_move(const Mrth& k, const Eigen::VectorXd& phi, const LogTarget& target,
                          std::mt19937_64& eng, long* n_accept) {
  if (k.n_steps < 1) throw std::invalid_argument("MRTH needs at least one step");
  if (k.variance <= 0) throw std::invalid_argument("MRTH proposal variance must be > 0");
  if (!target.logp) throw std::invalid_argument("MRTH needs a target log-density");
  const double sd = std::sqrt(k.variance);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd cur = phi;
  double lp = checked_logp(target, cur);
  for (int s = 0; s < k.n_steps; ++s) {
    Eigen::VectorXd prop = cur + sd * standard_normal(cur.size(), eng);
    const double lp_prop = checked_logp(target, prop);
    if (std::log(unif(eng)) < lp_prop - lp) {
      cur = std::move(prop);
      lp = lp_prop;
      if (n_accept) ++*n_accept;
    }
  }
  return cur;
}

HmcResult hmc_sample(const Hmc& k, const LogTarget& target, const Eigen::VectorXd& init,
                     long n_samples, long n_burn, std::uint64_t seed) {
  if (!target.logp || !target.grad)
    throw std::invalid_argument("HMC needs both log-density and gradient");
  if (k.n_leapfrog < 1 || k.step_size <= 0)
    throw std::invalid_argument("bad HMC settings");
  if (n_samples < 1 || n_burn < 0) throw std::invalid_argument("bad HMC sample counts");

  auto eng = rng::engine(seed, {rng::kHmc});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const long d = init.size();

  HmcResult res;
  res.samples.resize(n_samples, d);

  Eigen::VectorXd q = init;
  double lp = checked_logp(target, q);
  Eigen::VectorXd g = target.grad(q);

  for (long it = 0; it < n_burn + n_samples; ++it) {
    Eigen::VectorXd p = standard_normal(d, eng);
    const double h0 = -lp + 0.5 * p.squaredNorm();

    Eigen::VectorXd q_new = q, g_new = g;
    p += 0.5 * k.step_size * g_new;
    for (int l = 0; l < k.n_leapfrog; ++l) {
      q_new += k.step_size * p;
      g_new = target.grad(q_new);
      if (!g_new.allFinite()) break;
      if (l + 1 < k.n_leapfrog) p += k.step_size * g_new;
    }
    bool ok = g_new.allFinite();
    double h1 = std::numeric_limits<double>::infinity();
    double lp_new = -std::numeric_limits<double>::infinity();
    if (ok) {
      p += 0.5 * k.step_size * g_new;
      lp_new = target.logp(q_new);
      h1 = -lp_new + 0.5 * p.squaredNorm();
    }

    ++res.n_total;
    if (!ok || !std::isfinite(h1) || std::abs(h1 - h0) > 1000.0) {
      ++res.n_divergent; // reject, stay put
    } else if (std::log(unif(eng)) < h0 - h1) {
      q = std::move(q_new);
      g = std::move(g_new);
      lp = lp_new;
      ++res.n_accept;
    }
    if (it >= n_burn) res.samples.row(it - n_burn) = q;
  }
  return res;
}

} // namespace pbnn::kernels
