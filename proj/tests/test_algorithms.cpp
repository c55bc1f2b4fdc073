#include "doctest.h"

#include "pbnn/algorithms.hpp"
#include "pbnn/rng.hpp"
#include "pbnn/util.hpp"
#include "support/support.hpp"

#include <cmath>
#include <numeric>
#include <vector>

using namespace pbnn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

particles::ResamplePolicy never_resample() {
  particles::ResamplePolicy p;
  p.when = particles::ResamplePolicy::When::EssBelow;
  p.threshold = 1e-12;
  return p;
}

// Per-row log-potential is a fixed constant; gradients vanish.
class ConstModel final : public models::FkModel {
 public:
  explicit ConstModel(double c) : c_(c), prior_(models::standard_prior(2)) {}
  long dim_psi() const override { return 1; }
  long dim_phi() const override { return 2; }
  const models::GaussianPrior& prior() const override { return prior_; }
  double log_potential(const VectorXd&, const VectorXd&,
                       const models::Dataset& b) const override {
    return c_ * static_cast<double>(b.size());
  }
  VectorXd grad_psi(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return VectorXd::Zero(1);
  }
  VectorXd grad_phi(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return VectorXd::Zero(2);
  }

 private:
  double c_;
  models::GaussianPrior prior_;
};

// log g(phi) = phi * sum(batch y): weights after a step are a hand-computable
// exponential tilt of the previous ones.
class TiltModel final : public models::FkModel {
 public:
  TiltModel() : prior_(models::standard_prior(1)) {}
  long dim_psi() const override { return 1; }
  long dim_phi() const override { return 1; }
  const models::GaussianPrior& prior() const override { return prior_; }
  double log_potential(const VectorXd&, const VectorXd& phi,
                       const models::Dataset& b) const override {
    return b.size() > 0 ? phi[0] * b.y.col(0).sum() : 0.0;
  }
  VectorXd grad_psi(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return VectorXd::Zero(1);
  }
  VectorXd grad_phi(const VectorXd&, const VectorXd&, const models::Dataset& b) const override {
    return VectorXd::Constant(1, b.size() > 0 ? b.y.col(0).sum() : 0.0);
  }

 private:
  models::GaussianPrior prior_;
};

// First bulk-potential call wipes out every particle; later calls are benign.
class FlakyModel final : public models::FkModel {
 public:
  explicit FlakyModel(long dead_calls = 1)
      : dead_calls_(dead_calls), prior_(models::standard_prior(1)) {}
  long dim_psi() const override { return 1; }
  long dim_phi() const override { return 1; }
  const models::GaussianPrior& prior() const override { return prior_; }
  double log_potential(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return 0.0;
  }
  VectorXd grad_psi(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return VectorXd::Zero(1);
  }
  VectorXd grad_phi(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return VectorXd::Zero(1);
  }
  VectorXd log_potential_all(const VectorXd&, const MatrixXd& positions,
                             const models::Dataset&, int) const override {
    if (calls_++ < dead_calls_) return VectorXd::Constant(positions.rows(), kNegInf);
    return VectorXd::Zero(positions.rows());
  }

  mutable long calls_ = 0;
  long dead_calls_;

 private:
  models::GaussianPrior prior_;
};

// Zero potential, but remembers which y values each bulk call saw.
class RecordingModel final : public models::FkModel {
 public:
  RecordingModel() : prior_(models::standard_prior(1)) {}
  long dim_psi() const override { return 1; }
  long dim_phi() const override { return 1; }
  const models::GaussianPrior& prior() const override { return prior_; }
  double log_potential(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return 0.0;
  }
  VectorXd grad_psi(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return VectorXd::Zero(1);
  }
  VectorXd grad_phi(const VectorXd&, const VectorXd&, const models::Dataset&) const override {
    return VectorXd::Zero(1);
  }
  VectorXd log_potential_all(const VectorXd&, const MatrixXd& positions,
                             const models::Dataset& batch, int) const override {
    std::vector<double> ys(batch.size());
    for (long i = 0; i < batch.size(); ++i) ys[static_cast<std::size_t>(i)] = batch.y(i, 0);
    seen.push_back(std::move(ys));
    return VectorXd::Zero(positions.rows());
  }

  mutable std::vector<std::vector<double>> seen;

 private:
  models::GaussianPrior prior_;
};

// Separable quadratic with a known optimum: psi* = a, phi* = b/2 once the
// standard-normal prior pulls on phi.
class QuadModel final : public models::FkModel {
 public:
  QuadModel(VectorXd a, double b, long n)
      : a_(std::move(a)), b_(b), n_(n), prior_(models::standard_prior(1)) {}
  long dim_psi() const override { return a_.size(); }
  long dim_phi() const override { return 1; }
  const models::GaussianPrior& prior() const override { return prior_; }
  double log_potential(const VectorXd& psi, const VectorXd& phi,
                       const models::Dataset& batch) const override {
    const double frac = static_cast<double>(batch.size()) / static_cast<double>(n_);
    return frac * (-0.5 * (psi - a_).squaredNorm() - 0.5 * (phi[0] - b_) * (phi[0] - b_));
  }
  VectorXd grad_psi(const VectorXd& psi, const VectorXd&,
                    const models::Dataset& batch) const override {
    const double frac = static_cast<double>(batch.size()) / static_cast<double>(n_);
    return frac * (a_ - psi);
  }
  VectorXd grad_phi(const VectorXd&, const VectorXd& phi,
                    const models::Dataset& batch) const override {
    const double frac = static_cast<double>(batch.size()) / static_cast<double>(n_);
    return VectorXd::Constant(1, frac * (b_ - phi[0]));
  }

 private:
  VectorXd a_;
  double b_;
  long n_;
  models::GaussianPrior prior_;
};

models::Dataset dataset_of(std::initializer_list<double> ys) {
  models::Dataset d;
  d.x.resize(static_cast<long>(ys.size()), 0);
  d.y.resize(static_cast<long>(ys.size()), 1);
  long i = 0;
  for (double v : ys) d.y(i++, 0) = v;
  return d;
}

VectorXd conjugate_ys() {
  VectorXd y(10);
  y << 0.8, -0.1, 1.2, 0.4, 0.0, -0.6, 1.5, 0.7, 0.2, -0.3;
  return y;
}

} // namespace

TEST_SUITE("algorithms") {

TEST_CASE("fisher gradient: one particle, identical particles, hand weights") {
  auto grad_fn = [](const VectorXd& phi) { return VectorXd(2 * phi); };

  particles::Ensemble one = particles::make_uniform(MatrixXd::Constant(1, 2, 1.5));
  VectorXd g1 = algorithms::fisher_gradient(one, grad_fn);
  CHECK(g1.isApprox(VectorXd::Constant(2, 3.0), 1e-15));

  particles::Ensemble same = particles::make_uniform(MatrixXd::Constant(7, 2, 1.5));
  CHECK(algorithms::fisher_gradient(same, grad_fn).isApprox(g1, 1e-12));

  particles::Ensemble two = particles::make_uniform((MatrixXd(2, 1) << 1.0, 5.0).finished());
  VectorXd w(2);
  w << 0.25, 0.75;
  two.log_weights = w.array().log();
  CHECK(algorithms::fisher_gradient(two, grad_fn)[0] ==
        doctest::Approx(0.25 * 2.0 + 0.75 * 10.0).epsilon(1e-12));
}

TEST_CASE("fisher gradient recovers the conjugate score from posterior samples") {
  const VectorXd y = conjugate_ys();
  const double psi = 0.3;
  const double m = testsup::Conjugate::posterior_mean(y, psi);
  const double v = testsup::Conjugate::posterior_var(y);
  const double score = testsup::Conjugate::score_psi(y, psi);
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(y);
  auto grad_fn = [&](const VectorXd& phi) {
    return model.grad_psi(VectorXd::Constant(1, psi), phi, data);
  };

  // the score is linear in phi, so any ensemble with the right mean is exact
  particles::Ensemble sym =
      particles::make_uniform((MatrixXd(2, 1) << m - 0.7, m + 0.7).finished());
  CHECK(algorithms::fisher_gradient(sym, grad_fn)[0] == doctest::Approx(score).epsilon(1e-9));

  // Monte Carlo version from true posterior draws
  auto eng = rng::engine(6);
  std::normal_distribution<double> g;
  const long J = 20000;
  MatrixXd draws(J, 1);
  for (long j = 0; j < J; ++j) draws(j, 0) = m + std::sqrt(v) * g(eng);
  particles::Ensemble mc = particles::make_uniform(draws);
  const double est = algorithms::fisher_gradient(mc, grad_fn)[0];
  const double tol = 4 * static_cast<double>(y.size()) * std::sqrt(v / J);
  CHECK(std::abs(est - score) < tol);

  VectorXd est4 = algorithms::fisher_gradient(mc, grad_fn, 4);
  CHECK(est4[0] == est); // blocked reduction: thread count cannot matter
}

TEST_CASE("fisher gradient failure modes") {
  particles::Ensemble e = particles::make_uniform(MatrixXd::Zero(3, 1));
  auto bad = [](const VectorXd&) { return VectorXd::Constant(1, std::nan("")); };
  CHECK_THROWS_AS(algorithms::fisher_gradient(e, bad), std::runtime_error);

  e.log_weights = VectorXd::Constant(3, kNegInf);
  auto fine = [](const VectorXd& phi) { return phi; };
  CHECK_THROWS_AS(algorithms::fisher_gradient(e, fine), std::runtime_error);
}

TEST_CASE("smc pass: constant potentials give uniform weights and an exact evidence") {
  ConstModel model(-1.3);
  auto data = dataset_of({1.0, 2.0, 3.0, 4.0, 5.0});
  auto res = algorithms::smc_pass(model, VectorXd::Zero(1), data, 64,
                                  kernels::RandomWalk{0.5}, particles::ResamplePolicy{}, 3);
  CHECK(res.log_lik == doctest::Approx(-1.3 * 5).epsilon(1e-12));
  CHECK(particles::ess(res.ensemble.log_weights) == doctest::Approx(64.0).epsilon(1e-9));
  CHECK(res.grad.isZero());
  CHECK(res.ensemble.n() == 64);
}

TEST_CASE("smc pass on an empty dataset is just the prior") {
  testsup::ConjugateModel model;
  models::Dataset empty;
  empty.x.resize(0, 0);
  empty.y.resize(0, 1);
  auto res = algorithms::smc_pass(model, VectorXd::Zero(1), empty, 32,
                                  kernels::RandomWalk{0.1}, particles::ResamplePolicy{}, 5);
  CHECK(res.log_lik == 0.0);
  CHECK((res.ensemble.positions - models::sample_prior(model.prior(), 32, 5)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("smc pass is deterministic in the seed") {
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(conjugate_ys());
  auto a = algorithms::smc_pass(model, VectorXd::Constant(1, 0.3), data, 100,
                                kernels::Ou{0.2}, particles::ResamplePolicy{}, 8);
  auto b = algorithms::smc_pass(model, VectorXd::Constant(1, 0.3), data, 100,
                                kernels::Ou{0.2}, particles::ResamplePolicy{}, 8);
  auto c = algorithms::smc_pass(model, VectorXd::Constant(1, 0.3), data, 100,
                                kernels::Ou{0.2}, particles::ResamplePolicy{}, 9);
  CHECK((a.ensemble.positions - b.ensemble.positions).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.log_lik == b.log_lik);
  CHECK(a.log_lik != c.log_lik);
}

TEST_CASE("smc pass with a frozen kernel reduces to importance sampling") {
  // OU at time 0 never moves anything, and the policy below never resamples,
  // so the final weights must be the plain prior importance weights and the
  // evidence must not care about the order of the observations.
  testsup::ConjugateModel model;
  const VectorXd y = conjugate_ys();
  const double psi = 0.3;
  auto data = testsup::conjugate_data(y);

  auto res = algorithms::smc_pass(model, VectorXd::Constant(1, psi), data, 500,
                                  kernels::Ou{0.0}, never_resample(), 12);

  MatrixXd init = models::sample_prior(model.prior(), 500, 12);
  CHECK((res.ensemble.positions - init).cwiseAbs().maxCoeff() == 0.0);

  VectorXd manual(500);
  for (long j = 0; j < 500; ++j)
    manual[j] = model.log_potential(VectorXd::Constant(1, psi), init.row(j).transpose(), data);
  const VectorXd shifted = manual.array() - std::log(500.0);
  const double lse = logsumexp(shifted);
  CHECK(res.log_lik == doctest::Approx(lse).epsilon(1e-10));

  std::vector<long> rev(static_cast<std::size_t>(y.size()));
  std::iota(rev.begin(), rev.end(), 0L);
  std::reverse(rev.begin(), rev.end());
  auto res_rev = algorithms::smc_pass(model, VectorXd::Constant(1, psi),
                                      models::take_rows(data, rev), 500, kernels::Ou{0.0},
                                      never_resample(), 12);
  CHECK(res_rev.log_lik == doctest::Approx(res.log_lik).epsilon(1e-10));
}

TEST_CASE("smc pass evidence matches the conjugate closed form") {
  testsup::ConjugateModel model;
  const VectorXd y = conjugate_ys();
  const double psi = 0.3;
  auto data = testsup::conjugate_data(y);
  const double truth = testsup::Conjugate::log_evidence(y, psi);

  SUBCASE("importance sampling flavor") {
    double acc = 0;
    for (std::uint64_t s = 0; s < 3; ++s)
      acc += algorithms::smc_pass(model, VectorXd::Constant(1, psi), data, 4000,
                                  kernels::Ou{0.0}, never_resample(), 100 + s)
                 .log_lik;
    CHECK(acc / 3 == doctest::Approx(truth).epsilon(0.05));
  }
  SUBCASE("move-and-resample flavor") {
    double acc = 0;
    for (std::uint64_t s = 0; s < 3; ++s)
      acc += algorithms::smc_pass(model, VectorXd::Constant(1, psi), data, 2000,
                                  kernels::Mrth{5, 0.5}, particles::ResamplePolicy{}, 200 + s)
                 .log_lik;
    CHECK(acc / 3 == doctest::Approx(truth).epsilon(0.08));
  }
}

TEST_CASE("one full-batch sgsmc step equals smc pass plus one optimizer step") {
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(conjugate_ys());
  const long N = data.size();
  std::vector<long> all(static_cast<std::size_t>(N));
  std::iota(all.begin(), all.end(), 0L);

  optim::Optimizer opt; // Adam defaults
  algorithms::TrainState st;
  st.psi = VectorXd::Constant(1, 0.4);
  auto info = algorithms::sgsmc_step(model, data, all, st, 200, kernels::Ou{0.1},
                                     particles::ResamplePolicy{}, opt, 31);

  auto pass = algorithms::smc_pass(model, VectorXd::Constant(1, 0.4), data, 200,
                                   kernels::Ou{0.1}, particles::ResamplePolicy{}, 31);
  auto [psi, opt_state] = optim::step(opt, optim::OptState{}, VectorXd::Constant(1, 0.4),
                                      pass.grad, 0);
  CHECK(st.psi[0] == psi[0]);
  CHECK((st.ensemble.positions - pass.ensemble.positions).cwiseAbs().maxCoeff() == 0.0);
  CHECK(info.objective == pass.log_lik);
  CHECK(st.iteration == 1);
}

TEST_CASE("minibatch scores averaged under the full posterior recover the full score") {
  // With the dataset split into singletons, the N/M-scaled batch scores
  // averaged against the full-data posterior reproduce the full-data score
  // exactly for the conjugate model (the score is linear in phi).
  testsup::ConjugateModel model;
  const VectorXd y = conjugate_ys();
  const double psi = 0.2;
  const long N = y.size();
  auto data = testsup::conjugate_data(y);
  const double m = testsup::Conjugate::posterior_mean(y, psi);

  particles::Ensemble post = particles::make_uniform(MatrixXd::Constant(1, 1, m));
  double avg = 0;
  for (long n = 0; n < N; ++n) {
    models::Dataset one = models::slice_rows(data, n, n + 1);
    auto grad_fn = [&](const VectorXd& phi) {
      return model.grad_psi(VectorXd::Constant(1, psi), phi, one);
    };
    avg += static_cast<double>(N) * algorithms::fisher_gradient(post, grad_fn)[0];
  }
  avg /= static_cast<double>(N);
  CHECK(avg == doctest::Approx(testsup::Conjugate::score_psi(y, psi)).epsilon(1e-12));
}

TEST_CASE("cold-start minibatch posteriors bias the averaged score by a known amount") {
  // If each singleton batch instead uses its own one-observation posterior
  // (what a cold restart per batch produces), the average lands on
  // sum(r)/2 rather than sum(r)/(N+1): same direction, wrong magnitude.
  const VectorXd y = conjugate_ys();
  const double psi = 0.2;
  const long N = y.size();
  double avg = 0;
  for (long n = 0; n < N; ++n) {
    const double r = y[n] - psi;
    const double local_mean = r / 2.0; // posterior mean given only y_n
    avg += static_cast<double>(N) * (r - local_mean);
  }
  avg /= static_cast<double>(N);
  const double full = testsup::Conjugate::score_psi(y, psi);
  const double sum_r = (y.array() - psi).sum();
  CHECK(avg == doctest::Approx(sum_r / 2.0).epsilon(1e-12));
  CHECK(std::abs(avg - full) ==
        doctest::Approx(std::abs(sum_r) * (0.5 - 1.0 / (N + 1))).epsilon(1e-9));
}

TEST_CASE("warm-start step: hand-checkable weight recursion over two steps") {
  TiltModel model;
  auto data = dataset_of({2.0, -1.0, 0.0});

  algorithms::TrainState st;
  st.psi = VectorXd::Zero(1);
  st.ensemble = particles::make_uniform((MatrixXd(2, 1) << 0.3, -0.2).finished());
  const MatrixXd pos0 = st.ensemble.positions;

  optim::Optimizer opt;
  opt.schedule.lr = 0.0; // freeze psi: this test is about the weights
  auto policy = never_resample();
  kernels::RandomWalk still{0.0};

  algorithms::ohsmc_step(model, data, {0}, st, still, policy, opt, 1);
  algorithms::ohsmc_step(model, data, {0, 1}, st, still, policy, opt, 2);

  // step 1 tilts by 2*phi, step 2 by (2-1)*phi: total tilt 3*phi
  VectorXd lw(2);
  lw << -std::log(2.0) + 3 * 0.3, -std::log(2.0) + 3 * -0.2;
  const double z = logsumexp(lw);
  CHECK(st.ensemble.log_weights[0] == doctest::Approx(lw[0] - z).epsilon(1e-12));
  CHECK(st.ensemble.log_weights[1] == doctest::Approx(lw[1] - z).epsilon(1e-12));
  CHECK((st.ensemble.positions - pos0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.ensemble.log_evidence == doctest::Approx(z).epsilon(1e-12));
  CHECK(st.psi[0] == 0.0);
  CHECK(st.iteration == 2);
}

TEST_CASE("warm-start step keeps uniform weights under constant potentials") {
  ConstModel model(0.7);
  auto data = dataset_of({1.0, 2.0, 3.0, 4.0});
  algorithms::TrainState st;
  st.psi = VectorXd::Zero(1);
  st.ensemble = particles::make_uniform(models::sample_prior(model.prior(), 50, 1));

  optim::Optimizer opt;
  auto info = algorithms::ohsmc_step(model, data, {1, 2}, st, kernels::RandomWalk{0.01},
                                     particles::ResamplePolicy{}, opt, 4);
  CHECK(particles::ess(st.ensemble.log_weights) == doctest::Approx(50.0).epsilon(1e-9));
  CHECK(info.objective == doctest::Approx(0.7 * 2).epsilon(1e-12)); // batch of 2 rows
  CHECK(st.psi[0] == 0.0); // zero gradient, Adam stays put
}

TEST_CASE("warm-start step rejects an MRTH kernel and an empty state") {
  TiltModel model;
  auto data = dataset_of({1.0});
  optim::Optimizer opt;
  algorithms::TrainState st;
  st.psi = VectorXd::Zero(1);
  st.ensemble = particles::make_uniform(MatrixXd::Zero(4, 1));
  CHECK_THROWS_AS(algorithms::ohsmc_step(model, data, {0}, st, kernels::Mrth{5, 0.1},
                                         particles::ResamplePolicy{}, opt, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(algorithms::ohsmc_step(model, data, {}, st, kernels::RandomWalk{0.1},
                                         particles::ResamplePolicy{}, opt, 0),
                  std::invalid_argument);
}

TEST_CASE("a collapsed warm-start ensemble restarts from the prior once") {
  FlakyModel model(1);
  auto data = dataset_of({1.0, 2.0});
  algorithms::TrainState st;
  st.psi = VectorXd::Zero(1);
  st.ensemble = particles::make_uniform(MatrixXd::Constant(30, 1, 9.9));
  st.ensemble.log_evidence = 2.5;

  optim::Optimizer opt;
  algorithms::ohsmc_step(model, data, {0}, st, kernels::RandomWalk{0.0},
                         particles::ResamplePolicy{}, opt, 7);
  CHECK(st.collapse_events == 1);
  CHECK(model.calls_ == 2);
  // restarted positions come from the prior, not the old cloud
  CHECK((st.ensemble.positions.array() == 9.9).count() == 0);
  CHECK(particles::ess(st.ensemble.log_weights) == doctest::Approx(30.0).epsilon(1e-9));
  // the accumulated evidence survives the restart (increment was 0)
  CHECK(st.ensemble.log_evidence == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("a second collapse in the same step aborts with the iteration index") {
  FlakyModel model(2);
  auto data = dataset_of({1.0});
  algorithms::TrainState st;
  st.psi = VectorXd::Zero(1);
  st.ensemble = particles::make_uniform(MatrixXd::Zero(10, 1));
  st.iteration = 17;
  optim::Optimizer opt;
  try {
    algorithms::ohsmc_step(model, data, {0}, st, kernels::RandomWalk{0.0},
                           particles::ResamplePolicy{}, opt, 3);
    FAIL("expected a weight collapse");
  } catch (const particles::WeightCollapse& e) {
    CHECK(e.step == 17);
  }
}

TEST_CASE("posterior sampling: zero potential returns the prior") {
  ConstModel model(0.0);
  auto data = dataset_of({1.0, 2.0, 3.0});
  auto res = algorithms::posterior_hmc(model, data, VectorXd::Zero(1), kernels::Hmc{20, 0.1},
                                       1500, 300, 2);
  REQUIRE(res.samples.rows() == 1500);
  REQUIRE(res.samples.cols() == 2);
  for (int d = 0; d < 2; ++d) {
    VectorXd col = res.samples.col(d);
    CHECK(std::abs(testsup::mean_of(col)) < 0.1);
    CHECK(testsup::var_of(col) == doctest::Approx(1.0).epsilon(0.15));
  }
}

TEST_CASE("posterior sampling matches the conjugate posterior") {
  testsup::ConjugateModel model;
  const VectorXd y = conjugate_ys().head(8);
  const double psi = 0.25;
  auto data = testsup::conjugate_data(y);
  auto res = algorithms::posterior_hmc(model, data, VectorXd::Constant(1, psi),
                                       kernels::Hmc{30, 0.1}, 2000, 300, 5);
  const double m = testsup::Conjugate::posterior_mean(y, psi);
  const double v = testsup::Conjugate::posterior_var(y);
  CHECK(testsup::mean_of(res.samples.col(0)) == doctest::Approx(m).epsilon(0.06));
  CHECK(testsup::var_of(res.samples.col(0)) == doctest::Approx(v).epsilon(0.15));
}

TEST_CASE("posterior sampling on the crescent pins the predictive mean near y-bar") {
  models::CrescentModel model;
  auto data = models::make_crescent_data(100, 1.0, Eigen::Vector2d(0, 0), 9);
  const double ybar = data.y.col(0).mean();
  auto res = algorithms::posterior_hmc(model, data, VectorXd::Constant(1, 1.0),
                                       kernels::Hmc{100, 0.01}, 600, 300, 4);
  double acc = 0;
  for (long i = 0; i < res.samples.rows(); ++i)
    acc += models::CrescentModel::mean_fn(1.0, res.samples(i, 0), res.samples(i, 1));
  acc /= static_cast<double>(res.samples.rows());
  CHECK(acc == doctest::Approx(ybar).epsilon(0.2));
  CHECK(res.acceptance_rate() > 0.5);
}

TEST_CASE("full-data training composes iterated passes and optimizer steps") {
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(conjugate_ys());

  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Smc;
  opts.n_particles = 80;
  opts.epochs = 3;
  opts.kernel = kernels::Ou{0.1};
  opts.psi_init = VectorXd::Constant(1, 0.1);
  opts.seed = 44;
  auto res = algorithms::train(model, data, opts);
  CHECK(res.iterations == 3);

  VectorXd psi = opts.psi_init;
  optim::OptState ostate;
  particles::Ensemble last;
  for (long it = 0; it < 3; ++it) {
    const std::uint64_t s = rng::derive(44, {rng::kIter, static_cast<std::uint64_t>(it)});
    auto pass = algorithms::smc_pass(model, psi, data, 80, opts.kernel, opts.resample, s);
    auto [p, o] = optim::step(opts.optimizer, ostate, psi, pass.grad, it);
    psi = p;
    ostate = o;
    last = std::move(pass.ensemble);
  }
  CHECK(res.psi[0] == psi[0]);
  CHECK((res.ensemble.positions - last.positions).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("each shuffled epoch visits every observation exactly once") {
  RecordingModel model;
  auto data = dataset_of({10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21});

  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Ohsmc;
  opts.n_particles = 8;
  opts.batch_size = 5;
  opts.epochs = 2;
  opts.kernel = kernels::RandomWalk{0.01};
  opts.psi_init = VectorXd::Zero(1);
  opts.seed = 3;
  auto res = algorithms::train(model, data, opts);
  CHECK(res.iterations == 6); // ceil(12/5) = 3 per epoch

  REQUIRE(model.seen.size() == 6);
  for (int epoch = 0; epoch < 2; ++epoch) {
    std::vector<double> all;
    for (int b = 0; b < 3; ++b) {
      const auto& ys = model.seen[static_cast<std::size_t>(3 * epoch + b)];
      all.insert(all.end(), ys.begin(), ys.end());
    }
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == 12);
    for (int i = 0; i < 12; ++i) CHECK(all[static_cast<std::size_t>(i)] == 10.0 + i);
  }
}

TEST_CASE("iid batch mode draws the right count and is seed-deterministic") {
  RecordingModel a, b;
  auto data = dataset_of({0, 1, 2, 3, 4, 5, 6, 7});
  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Ohsmc;
  opts.batch_mode = algorithms::TrainOptions::BatchMode::IidUniform;
  opts.n_particles = 8;
  opts.batch_size = 3;
  opts.epochs = 2;
  opts.kernel = kernels::RandomWalk{0.01};
  opts.psi_init = VectorXd::Zero(1);
  opts.seed = 5;
  algorithms::train(a, data, opts);
  algorithms::train(b, data, opts);
  REQUIRE(a.seen.size() == 6); // ceil(8/3) = 3 iterations per epoch
  for (const auto& ys : a.seen) CHECK(ys.size() == 3);
  CHECK(a.seen == b.seen);
}

TEST_CASE("training results do not depend on the thread count") {
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(conjugate_ys());

  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Ohsmc;
  opts.n_particles = 64;
  opts.batch_size = 3;
  opts.epochs = 2;
  opts.kernel = kernels::RandomWalk{0.05};
  opts.psi_init = VectorXd::Constant(1, 0.2);
  opts.seed = 21;

  std::vector<double> norms1, norms4;
  opts.n_threads = 1;
  opts.on_iteration = [&](const algorithms::IterRecord& r) { norms1.push_back(r.psi_norm); };
  auto r1 = algorithms::train(model, data, opts);
  opts.n_threads = 4;
  opts.on_iteration = [&](const algorithms::IterRecord& r) { norms4.push_back(r.psi_norm); };
  auto r4 = algorithms::train(model, data, opts);

  CHECK(r1.psi[0] == r4.psi[0]);
  CHECK((r1.ensemble.positions - r4.ensemble.positions).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(norms1.size() == norms4.size());
  for (std::size_t i = 0; i < norms1.size(); ++i) CHECK(norms1[i] == norms4[i]);
}

TEST_CASE("validation keeps the best epoch snapshot") {
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(conjugate_ys());

  std::vector<double> vals;
  std::vector<VectorXd> psis;
  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Ohsmc;
  opts.n_particles = 32;
  opts.batch_size = 5;
  opts.epochs = 6;
  opts.kernel = kernels::RandomWalk{0.05};
  opts.psi_init = VectorXd::Constant(1, 0.3);
  opts.seed = 9;
  opts.optimizer.schedule.lr = 0.2; // move far enough for the score to vary
  opts.validation = [&](const VectorXd& psi, const particles::Ensemble&) {
    vals.push_back(std::sin(25.0 * psi[0]));
    psis.push_back(psi);
    return vals.back();
  };
  auto res = algorithms::train(model, data, opts);

  REQUIRE(res.has_best);
  REQUIRE(vals.size() == 6); // once per epoch
  const auto best = std::min_element(vals.begin(), vals.end());
  CHECK(res.best_val == *best);
  CHECK(res.best_psi[0] == psis[static_cast<std::size_t>(best - vals.begin())][0]);
  CHECK(std::count_if(vals.begin(), vals.end(),
                      [&](double v) { return v < res.best_val; }) == 0);
}

TEST_CASE("quadratic MAP training lands on the penalized optimum") {
  VectorXd a(2);
  a << 1.5, -0.7;
  QuadModel model(a, 2.0, 4);
  auto data = dataset_of({0, 0, 0, 0});

  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Map;
  opts.batch_size = 4;
  opts.epochs = 2000;
  opts.psi_init = VectorXd::Zero(2);
  opts.phi_init = VectorXd::Zero(1);
  opts.optimizer.schedule.lr = 0.05;
  auto [psi, phi] = algorithms::map_train(model, data, opts);
  CHECK((psi - a).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(phi[0] == doctest::Approx(1.0).epsilon(1e-4)); // argmax of -(x-2)^2/2 - x^2/2

  opts.epochs = 3;
  opts.optimizer.schedule.lr = 0.0;
  auto [psi0, phi0] = algorithms::map_train(model, data, opts);
  CHECK(psi0.isZero());
  CHECK(phi0.isZero());
}

TEST_CASE("the hybrid tail swaps the ensemble for posterior draws, psi untouched") {
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(conjugate_ys());

  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Sgsmc;
  opts.n_particles = 50;
  opts.batch_size = 5;
  opts.epochs = 2;
  opts.kernel = kernels::Ou{0.1};
  opts.psi_init = VectorXd::Constant(1, 0.1);
  opts.seed = 13;
  auto plain = algorithms::train(model, data, opts);

  opts.algorithm = algorithms::Algorithm::SgsmcHmc;
  opts.hmc = kernels::Hmc{30, 0.1};
  opts.hmc_samples = 300;
  opts.hmc_burn = 100;
  auto hybrid = algorithms::train(model, data, opts);

  CHECK(hybrid.psi[0] == plain.psi[0]);
  CHECK(hybrid.ensemble.n() == 300);
  CHECK(particles::ess(hybrid.ensemble.log_weights) == doctest::Approx(300.0).epsilon(1e-9));
  const double m = testsup::Conjugate::posterior_mean(conjugate_ys(), hybrid.psi[0]);
  CHECK(testsup::mean_of(hybrid.ensemble.positions.col(0)) == doctest::Approx(m).epsilon(0.1));
}

TEST_CASE("training rejects unusable setups") {
  testsup::ConjugateModel model;
  auto data = testsup::conjugate_data(conjugate_ys());
  algorithms::TrainOptions opts;
  opts.algorithm = algorithms::Algorithm::Ohsmc;
  opts.psi_init = VectorXd::Zero(1);

  models::Dataset empty;
  empty.x.resize(0, 0);
  empty.y.resize(0, 1);
  CHECK_THROWS_AS(algorithms::train(model, empty, opts), std::invalid_argument);

  opts.epochs = 0;
  CHECK_THROWS_AS(algorithms::train(model, data, opts), std::invalid_argument);
  opts.epochs = 1;

  opts.batch_size = 11; // N = 10
  CHECK_THROWS_AS(algorithms::train(model, data, opts), std::invalid_argument);
  opts.batch_size = 5;

  opts.psi_init = VectorXd::Zero(2);
  CHECK_THROWS_AS(algorithms::train(model, data, opts), std::invalid_argument);
  opts.psi_init = VectorXd::Zero(1);

  opts.algorithm = algorithms::Algorithm::Map;
  opts.phi_init = VectorXd(); // MAP needs a start point for phi
  CHECK_THROWS_AS(algorithms::train(model, data, opts), std::invalid_argument);

  CHECK_THROWS_AS(algorithms::algorithm_from_name("NOPE"), std::invalid_argument);
  CHECK(algorithms::algorithm_from_name("OHSMC") == algorithms::Algorithm::Ohsmc);
  CHECK(algorithms::algorithm_name(algorithms::Algorithm::SgsmcHmc) == "SGSMC_HMC");
}

} // TEST_SUITE
