#include "pbnn/algorithms.hpp"

#include "pbnn/parallel.hpp"
#include "pbnn/rng.hpp"
#include "pbnn/util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pbnn::algorithms {

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "SMC") return Algorithm::Smc;
  if (name == "SGSMC") return Algorithm::Sgsmc;
  if (name == "OHSMC") return Algorithm::Ohsmc;
  if (name == "MAP") return Algorithm::Map;
  if (name == "MAP_HMC") return Algorithm::MapHmc;
  if (name == "SGSMC_HMC") return Algorithm::SgsmcHmc;
  throw std::invalid_argument("unknown algorithm: " + name);
}

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Smc: return "SMC";
    case Algorithm::Sgsmc: return "SGSMC";
    case Algorithm::Ohsmc: return "OHSMC";
    case Algorithm::Map: return "MAP";
    case Algorithm::MapHmc: return "MAP_HMC";
    case Algorithm::SgsmcHmc: return "SGSMC_HMC";
  }
  throw std::logic_error("bad algorithm enum");
}

Eigen::VectorXd fisher_gradient(
    const particles::Ensemble& e,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_fn, int n_threads) {
  const std::size_t J = static_cast<std::size_t>(e.n());
  const Eigen::VectorXd w = particles::weights(e.log_weights);
  std::vector<Eigen::VectorXd> partial(n_blocks(J));
  parallel_blocks(J, n_threads, [&](std::size_t b, std::size_t begin, std::size_t end) {
    Eigen::VectorXd acc;
    for (std::size_t j = begin; j < end; ++j) {
      const long jj = static_cast<long>(j);
      if (w[jj] == 0.0) continue;
      Eigen::VectorXd g = grad_fn(e.positions.row(jj).transpose());
      if (!g.allFinite())
        throw std::runtime_error("non-finite gradient for particle " + std::to_string(jj));
      if (acc.size() == 0) acc = Eigen::VectorXd::Zero(g.size());
      acc += w[jj] * g;
    }
    partial[b] = std::move(acc);
  });
  Eigen::VectorXd out;
  for (const auto& p : partial) {
    if (p.size() == 0) continue;
    if (out.size() == 0) out = Eigen::VectorXd::Zero(p.size());
    out += p;
  }
  if (out.size() == 0)
    throw std::runtime_error("fisher_gradient: every particle has zero weight");
  return out;
}

namespace {

// Move every particle one kernel step. MRTH needs a target; the relaxed
// kernels ignore it. step_tag keeps the RNG streams of different observation
// steps apart. One engine per fixed 64-particle block, consumed in particle
// order: seeding a mt19937_64 costs ~2.5us, so per-particle engines would
// dominate the whole pass, and per-block streams are just as deterministic
// (blocks never depend on the thread count).
void apply_kernel(const kernels::Kernel& kernel, const models::FkModel& model,
                  Eigen::MatrixXd& pos, const kernels::LogTarget* target, std::uint64_t seed,
                  std::uint64_t step_tag, int n_threads) {
  const auto& prior = model.prior();
  parallel_blocks(static_cast<std::size_t>(pos.rows()), n_threads,
                  [&](std::size_t block, std::size_t begin, std::size_t end) {
    auto eng = rng::engine(seed, {rng::kMove, step_tag, static_cast<std::uint64_t>(block)});
    for (std::size_t j = begin; j < end; ++j) {
      const long jj = static_cast<long>(j);
      Eigen::VectorXd cur = pos.row(jj).transpose();
      if (const auto* rw = std::get_if<kernels::RandomWalk>(&kernel)) {
        pos.row(jj) = kernels::rw_move(*rw, cur, eng).transpose();
      } else if (const auto* ou = std::get_if<kernels::Ou>(&kernel)) {
        pos.row(jj) = kernels::ou_move(*ou, cur, prior.mean, prior.var, eng).transpose();
      } else if (const auto* m = std::get_if<kernels::Mrth>(&kernel)) {
        if (!target) throw std::logic_error("MRTH move without a target");
        pos.row(jj) = kernels::mrth_move(*m, cur, *target, eng).transpose();
      }
    }
  });
}

} // namespace

SmcPassResult smc_pass(const models::FkModel& model, const Eigen::VectorXd& psi,
                       const models::Dataset& data, long n_particles,
                       const kernels::Kernel& kernel, const particles::ResamplePolicy& policy,
                       std::uint64_t seed, int n_threads) {
  if (n_particles < 1) throw std::invalid_argument("smc_pass: need particles");
  SmcPassResult res;
  res.ensemble =
      particles::make_uniform(models::sample_prior(model.prior(), n_particles, seed));
  const long N = data.size();
  for (long n = 1; n <= N; ++n) {
    auto reng = rng::engine(seed, {rng::kResample, static_cast<std::uint64_t>(n)});
    particles::maybe_resample(res.ensemble, policy, reng);

    // kernel moves target the posterior after the first n-1 observations
    models::Dataset prefix;
    kernels::LogTarget target;
    const kernels::LogTarget* target_ptr = nullptr;
    if (std::holds_alternative<kernels::Mrth>(kernel)) {
      prefix = models::slice_rows(data, 0, n - 1);
      target.logp = [&model, &psi, &prefix](const Eigen::VectorXd& phi) {
        return model.prior().logpdf(phi) + model.log_potential(psi, phi, prefix);
      };
      target_ptr = &target;
    }
    apply_kernel(kernel, model, res.ensemble.positions, target_ptr, seed,
                 static_cast<std::uint64_t>(n), n_threads);

    const models::Dataset obs = models::slice_rows(data, n - 1, n);
    const Eigen::VectorXd pots =
        model.log_potential_all(psi, res.ensemble.positions, obs, n_threads);
    try {
      particles::reweight(res.ensemble, pots);
    } catch (const particles::WeightCollapse&) {
      throw particles::WeightCollapse(n);
    }
  }
  res.log_lik = res.ensemble.log_evidence;
  res.grad = model.weighted_grad_psi(psi, res.ensemble.positions,
                                     particles::weights(res.ensemble.log_weights), data,
                                     n_threads);
  return res;
}

StepInfo sgsmc_step(const models::FkModel& model, const models::Dataset& data,
                    const std::vector<long>& batch_idx, TrainState& state, long n_particles,
                    const kernels::Kernel& kernel, const particles::ResamplePolicy& policy,
                    const optim::Optimizer& opt, std::uint64_t seed, int n_threads) {
  if (batch_idx.empty()) throw std::invalid_argument("sgsmc_step: empty batch");
  const models::Dataset sub = models::take_rows(data, batch_idx);
  SmcPassResult pass = smc_pass(model, state.psi, sub, n_particles, kernel, policy, seed,
                                n_threads);
  const double scale =
      static_cast<double>(data.size()) / static_cast<double>(batch_idx.size());
  const Eigen::VectorXd grad = scale * pass.grad;
  auto [psi, opt_state] = optim::step(opt, state.opt, state.psi, grad, state.iteration);
  state.psi = std::move(psi);
  state.opt = std::move(opt_state);
  state.ensemble = std::move(pass.ensemble);
  state.iteration += 1;
  return {pass.log_lik, grad.norm()};
}

StepInfo ohsmc_step(const models::FkModel& model, const models::Dataset& data,
                    const std::vector<long>& batch_idx, TrainState& state,
                    const kernels::Kernel& kernel, const particles::ResamplePolicy& policy,
                    const optim::Optimizer& opt, std::uint64_t seed, int n_threads) {
  if (batch_idx.empty()) throw std::invalid_argument("ohsmc_step: empty batch");
  if (state.ensemble.n() == 0) throw std::invalid_argument("ohsmc_step: no persistent ensemble");
  if (std::holds_alternative<kernels::Mrth>(kernel))
    throw std::invalid_argument(
        "the open-horizon sampler has no fixed target for an MRTH kernel; use RANDOM_WALK or OU");

  const models::Dataset batch = models::take_rows(data, batch_idx);

  auto reng = rng::engine(seed, {rng::kResample});
  particles::maybe_resample(state.ensemble, policy, reng);
  apply_kernel(kernel, model, state.ensemble.positions, nullptr, seed, 0, n_threads);

  Eigen::VectorXd pots =
      model.log_potential_all(state.psi, state.ensemble.positions, batch, n_threads);
  double increment;
  try {
    increment = particles::reweight(state.ensemble, pots);
  } catch (const particles::WeightCollapse&) {
    // The open-horizon chain is long-lived: restart it from the prior rather
    // than aborting the whole run.
    state.collapse_events += 1;
    const double kept_evidence = state.ensemble.log_evidence;
    state.ensemble = particles::make_uniform(models::sample_prior(
        model.prior(), state.ensemble.n(), rng::derive(seed, {rng::kCollapseRecovery})));
    state.ensemble.log_evidence = kept_evidence;
    pots = model.log_potential_all(state.psi, state.ensemble.positions, batch, n_threads);
    try {
      increment = particles::reweight(state.ensemble, pots);
    } catch (const particles::WeightCollapse&) {
      throw particles::WeightCollapse(state.iteration);
    }
  }

  const double scale =
      static_cast<double>(data.size()) / static_cast<double>(batch_idx.size());
  const Eigen::VectorXd grad =
      scale * model.weighted_grad_psi(state.psi, state.ensemble.positions,
                                      particles::weights(state.ensemble.log_weights), batch,
                                      n_threads);
  auto [psi, opt_state] = optim::step(opt, state.opt, state.psi, grad, state.iteration);
  state.psi = std::move(psi);
  state.opt = std::move(opt_state);
  state.iteration += 1;
  return {increment, grad.norm()};
}

kernels::HmcResult posterior_hmc(const models::FkModel& model, const models::Dataset& data,
                                 const Eigen::VectorXd& psi, const kernels::Hmc& hmc,
                                 long n_samples, long n_burn, std::uint64_t seed,
                                 const Eigen::VectorXd* init) {
  const kernels::LogTarget target = model.phi_posterior(psi, data);
  const Eigen::VectorXd start = init ? *init : model.prior().mean;
  return kernels::hmc_sample(hmc, target, start, n_samples, n_burn, seed);
}

namespace {

std::vector<std::vector<long>> epoch_batches(TrainOptions::BatchMode mode, long N, long M,
                                             long epoch, long iters_per_epoch,
                                             std::uint64_t seed) {
  std::vector<std::vector<long>> batches;
  if (mode == TrainOptions::BatchMode::EpochShuffle) {
    std::vector<long> perm(N);
    std::iota(perm.begin(), perm.end(), 0L);
    auto eng = rng::engine(seed, {rng::kBatchDraw, static_cast<std::uint64_t>(epoch)});
    std::shuffle(perm.begin(), perm.end(), eng);
    for (long off = 0; off < N; off += M) {
      const long end = std::min(off + M, N);
      batches.emplace_back(perm.begin() + off, perm.begin() + end);
    }
  } else {
    for (long it = 0; it < iters_per_epoch; ++it) {
      auto eng = rng::engine(
          seed, {rng::kBatchDraw, static_cast<std::uint64_t>(epoch * iters_per_epoch + it)});
      std::uniform_int_distribution<long> pick(0, N - 1);
      std::vector<long> b(M);
      for (long i = 0; i < M; ++i) b[i] = pick(eng);
      batches.push_back(std::move(b));
    }
  }
  return batches;
}

// One MAP ascent step on the joint vector [psi; phi]: batch log-likelihood
// scaled N/M plus the unscaled log-prior of phi.
StepInfo map_step(const models::FkModel& model, const models::Dataset& data,
                  const std::vector<long>& batch_idx, TrainState& state,
                  const optim::Optimizer& opt) {
  const models::Dataset batch = models::take_rows(data, batch_idx);
  const double scale =
      static_cast<double>(data.size()) / static_cast<double>(batch_idx.size());
  Eigen::VectorXd phi = state.ensemble.positions.row(0).transpose();
  const double obj = scale * model.log_potential(state.psi, phi, batch) +
                     model.prior().logpdf(phi);
  if (!std::isfinite(obj))
    throw std::runtime_error("MAP objective diverged at iteration " +
                             std::to_string(state.iteration));
  Eigen::VectorXd joint(state.psi.size() + phi.size());
  joint << state.psi, phi;
  Eigen::VectorXd grad(joint.size());
  grad.head(state.psi.size()) = scale * model.grad_psi(state.psi, phi, batch);
  grad.tail(phi.size()) =
      scale * model.grad_phi(state.psi, phi, batch) + model.prior().grad_logpdf(phi);
  const double gnorm = grad.norm();
  auto [next, opt_state] = optim::step(opt, state.opt, joint, grad, state.iteration);
  state.psi = next.head(state.psi.size());
  state.ensemble.positions.row(0) = next.tail(phi.size()).transpose();
  state.opt = std::move(opt_state);
  state.iteration += 1;
  return {obj, gnorm};
}

} // namespace

TrainResult train(const models::FkModel& model, const models::Dataset& data,
                  const TrainOptions& opts) {
  const long N = data.size();
  if (N < 1) throw std::invalid_argument("train: empty dataset");
  if (opts.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  const bool map_family =
      opts.algorithm == Algorithm::Map || opts.algorithm == Algorithm::MapHmc;
  const bool minibatch = opts.algorithm != Algorithm::Smc;
  const long M = minibatch ? opts.batch_size : N;
  if (M < 1 || M > N) throw std::invalid_argument("train: batch size out of [1, N]");
  if (opts.psi_init.size() != model.dim_psi())
    throw std::invalid_argument("train: psi_init has wrong length");

  TrainState st;
  st.psi = opts.psi_init;
  if (opts.algorithm == Algorithm::Ohsmc) {
    st.ensemble = particles::make_uniform(
        models::sample_prior(model.prior(), opts.n_particles, opts.seed));
  } else if (map_family) {
    if (opts.phi_init.size() != model.dim_phi())
      throw std::invalid_argument("train: MAP needs a phi_init of length dim_phi");
    st.ensemble = particles::make_uniform(opts.phi_init.transpose());
  }

  TrainResult res;
  const long iters_per_epoch = minibatch ? (N + M - 1) / M : 1;

  for (long epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto batches =
        minibatch ? epoch_batches(opts.batch_mode, N, M, epoch, iters_per_epoch, opts.seed)
                  : std::vector<std::vector<long>>{{}};
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const std::uint64_t step_seed =
          rng::derive(opts.seed, {rng::kIter, static_cast<std::uint64_t>(st.iteration)});
      StepInfo info;
      switch (opts.algorithm) {
        case Algorithm::Smc: {
          SmcPassResult pass = smc_pass(model, st.psi, data, opts.n_particles, opts.kernel,
                                        opts.resample, step_seed, opts.n_threads);
          auto [psi, opt_state] =
              optim::step(opts.optimizer, st.opt, st.psi, pass.grad, st.iteration);
          st.psi = std::move(psi);
          st.opt = std::move(opt_state);
          st.ensemble = std::move(pass.ensemble);
          st.iteration += 1;
          info = {pass.log_lik, pass.grad.norm()};
          break;
        }
        case Algorithm::Sgsmc:
        case Algorithm::SgsmcHmc:
          info = sgsmc_step(model, data, batches[bi], st, opts.n_particles, opts.kernel,
                            opts.resample, opts.optimizer, step_seed, opts.n_threads);
          break;
        case Algorithm::Ohsmc:
          info = ohsmc_step(model, data, batches[bi], st, opts.kernel, opts.resample,
                            opts.optimizer, step_seed, opts.n_threads);
          break;
        case Algorithm::Map:
        case Algorithm::MapHmc:
          info = map_step(model, data, batches[bi], st, opts.optimizer);
          break;
      }

      double val = std::numeric_limits<double>::quiet_NaN();
      if (opts.validation && bi + 1 == batches.size()) {
        val = opts.validation(st.psi, st.ensemble);
        if (!res.has_best || val < res.best_val) {
          res.has_best = true;
          res.best_val = val;
          res.best_psi = st.psi;
          res.best_ensemble = st.ensemble;
        }
      }
      if (opts.on_iteration) {
        IterRecord rec;
        rec.iteration = st.iteration - 1;
        rec.epoch = epoch;
        rec.objective = info.objective;
        rec.ess = st.ensemble.n() > 0 ? particles::ess(st.ensemble.log_weights) : 0.0;
        rec.psi_norm = st.psi.norm();
        rec.val_nlpd = val;
        opts.on_iteration(rec);
      }
    }
  }

  res.psi = st.psi;
  res.ensemble = std::move(st.ensemble);
  res.iterations = st.iteration;
  res.collapse_events = st.collapse_events;

  // Hybrid tails: refresh the posterior by HMC at the selected psi.
  if (opts.algorithm == Algorithm::MapHmc || opts.algorithm == Algorithm::SgsmcHmc) {
    const Eigen::VectorXd& psi_star = res.has_best ? res.best_psi : res.psi;
    Eigen::VectorXd start = model.prior().mean;
    if (opts.algorithm == Algorithm::MapHmc) {
      const particles::Ensemble& e = res.has_best ? res.best_ensemble : res.ensemble;
      start = e.positions.row(0).transpose();
    }
    kernels::HmcResult draws = posterior_hmc(model, data, psi_star, opts.hmc,
                                             opts.hmc_samples, opts.hmc_burn, opts.seed,
                                             &start);
    particles::Ensemble post = particles::make_uniform(std::move(draws.samples));
    res.ensemble = post;
    if (res.has_best) {
      res.best_ensemble = std::move(post);
    }
  }
  return res;
}

TrainResult smc_train(const models::FkModel& model, const models::Dataset& data,
                      TrainOptions opts) {
  opts.algorithm = Algorithm::Smc;
  return train(model, data, opts);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> map_train(const models::FkModel& model,
                                                      const models::Dataset& data,
                                                      TrainOptions opts) {
  opts.algorithm = Algorithm::Map;
  TrainResult r = train(model, data, opts);
  return {r.psi, r.ensemble.positions.row(0).transpose()};
}

} // namespace pbnn::algorithms
