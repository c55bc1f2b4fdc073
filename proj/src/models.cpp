#include "pbnn/models.hpp"

#include "pbnn/parallel.hpp"
#include "pbnn/rng.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pbnn::models {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

void GaussianPrior::validate() const {
  if (mean.size() != var.size()) throw std::invalid_argument("prior mean/var length mismatch");
  if (mean.size() == 0) throw std::invalid_argument("empty prior");
  if ((var.array() <= 0.0).any()) throw std::invalid_argument("prior variances must be positive");
}

double GaussianPrior::logpdf(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("prior logpdf: length mismatch");
  const Eigen::ArrayXd d = (x - mean).array();
  return -0.5 * (d.square() / var.array()).sum() - 0.5 * var.array().log().sum() -
         0.5 * kLog2Pi * dim();
}

Eigen::VectorXd GaussianPrior::grad_logpdf(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("prior grad: length mismatch");
  return (-(x - mean).array() / var.array()).matrix();
}

GaussianPrior standard_prior(long dim) {
  GaussianPrior p;
  p.mean = Eigen::VectorXd::Zero(dim);
  p.var = Eigen::VectorXd::Ones(dim);
  return p;
}

Eigen::MatrixXd sample_prior(const GaussianPrior& prior, long n, std::uint64_t seed) {
  prior.validate();
  if (n < 1) throw std::invalid_argument("sample_prior: n must be >= 1");
  auto eng = rng::engine(seed, {rng::kPriorInit});
  std::normal_distribution<double> dist;
  Eigen::MatrixXd out(n, prior.dim());
  for (long j = 0; j < n; ++j)
    for (long k = 0; k < prior.dim(); ++k)
      out(j, k) = prior.mean[k] + std::sqrt(prior.var[k]) * dist(eng);
  return out;
}

Dataset take_rows(const Dataset& d, const std::vector<long>& idx) {
  Dataset out;
  out.x.resize(static_cast<long>(idx.size()), d.x.cols());
  out.y.resize(static_cast<long>(idx.size()), d.y.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= d.size())
      throw std::out_of_range("take_rows: index " + std::to_string(idx[i]));
    out.x.row(static_cast<long>(i)) = d.x.row(idx[i]);
    out.y.row(static_cast<long>(i)) = d.y.row(idx[i]);
  }
  return out;
}

Dataset slice_rows(const Dataset& d, long begin, long end) {
  if (begin < 0 || end > d.size() || begin > end)
    throw std::out_of_range("slice_rows: bad range");
  Dataset out;
  out.x = d.x.middleRows(begin, end - begin);
  out.y = d.y.middleRows(begin, end - begin);
  return out;
}

// ---- FkModel defaults ------------------------------------------------------

Eigen::VectorXd FkModel::log_potential_all(const Eigen::VectorXd& psi,
                                           const Eigen::MatrixXd& positions,
                                           const Dataset& batch, int n_threads) const {
  const long J = positions.rows();
  Eigen::VectorXd out(J);
  parallel_for(static_cast<std::size_t>(J), n_threads, [&](std::size_t j) {
    out[static_cast<long>(j)] =
        log_potential(psi, positions.row(static_cast<long>(j)).transpose(), batch);
  });
  return out;
}

Eigen::VectorXd FkModel::weighted_grad_psi(const Eigen::VectorXd& psi,
                                           const Eigen::MatrixXd& positions,
                                           const Eigen::VectorXd& lin_weights,
                                           const Dataset& batch, int n_threads) const {
  if (lin_weights.size() != positions.rows())
    throw std::invalid_argument("weighted_grad_psi: weight/position mismatch");
  const std::size_t J = static_cast<std::size_t>(positions.rows());
  std::vector<Eigen::VectorXd> partial(n_blocks(J));
  parallel_blocks(J, n_threads, [&](std::size_t b, std::size_t begin, std::size_t end) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_psi());
    for (std::size_t j = begin; j < end; ++j) {
      const double w = lin_weights[static_cast<long>(j)];
      if (w == 0.0) continue; // dead particles may sit in invalid regions
      acc += w * grad_psi(psi, positions.row(static_cast<long>(j)).transpose(), batch);
    }
    partial[b] = std::move(acc);
  });
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_psi());
  for (const auto& p : partial) out += p;
  return out;
}

kernels::LogTarget FkModel::phi_posterior(const Eigen::VectorXd& psi, const Dataset& data) const {
  kernels::LogTarget t;
  t.logp = [this, psi, data](const Eigen::VectorXd& phi) {
    return prior().logpdf(phi) + log_potential(psi, phi, data);
  };
  t.grad = [this, psi, data](const Eigen::VectorXd& phi) {
    return (prior().grad_logpdf(phi) + grad_phi(psi, phi, data)).eval();
  };
  return t;
}

// ---- crescent --------------------------------------------------------------

double crescent_loglik(double psi, const Eigen::Vector2d& phi, double y) {
  if (psi == 0.0) throw std::invalid_argument("crescent model is singular at psi = 0");
  const double mu = CrescentModel::mean_fn(psi, phi[0], phi[1]);
  const double r = y - mu;
  return -0.5 * r * r - 0.5 * kLog2Pi;
}

CrescentModel::CrescentModel() {
  prior_.mean = Eigen::VectorXd::Zero(2);
  prior_.var = (Eigen::VectorXd(2) << 2.0, 1.0).finished();
}

double CrescentModel::mean_fn(double psi, double phi0, double phi1) {
  return phi1 / psi + 0.5 * (phi0 * phi0 + psi * psi);
}

double CrescentModel::log_potential(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                    const Dataset& batch) const {
  if (psi.size() != 1 || phi.size() != 2) throw std::invalid_argument("crescent: bad shapes");
  if (batch.size() == 0) return 0.0;
  if (psi[0] == 0.0) throw std::invalid_argument("crescent model is singular at psi = 0");
  const double mu = mean_fn(psi[0], phi[0], phi[1]);
  const Eigen::ArrayXd r = batch.y.col(0).array() - mu;
  return -0.5 * r.square().sum() - 0.5 * kLog2Pi * batch.size();
}

Eigen::VectorXd CrescentModel::grad_psi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                        const Dataset& batch) const {
  if (psi.size() != 1 || phi.size() != 2) throw std::invalid_argument("crescent: bad shapes");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(1);
  if (batch.size() == 0) return g;
  if (psi[0] == 0.0) throw std::invalid_argument("crescent model is singular at psi = 0");
  const double p = psi[0];
  const double mu = mean_fn(p, phi[0], phi[1]);
  const double dmu_dpsi = p - phi[1] / (p * p);
  g[0] = ((batch.y.col(0).array() - mu) * dmu_dpsi).sum();
  return g;
}

Eigen::VectorXd CrescentModel::grad_phi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                        const Dataset& batch) const {
  if (psi.size() != 1 || phi.size() != 2) throw std::invalid_argument("crescent: bad shapes");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(2);
  if (batch.size() == 0) return g;
  if (psi[0] == 0.0) throw std::invalid_argument("crescent model is singular at psi = 0");
  const double p = psi[0];
  const double mu = mean_fn(p, phi[0], phi[1]);
  const double rsum = (batch.y.col(0).array() - mu).sum();
  g[0] = rsum * phi[0];
  g[1] = rsum / p;
  return g;
}

// ---- pBNN ------------------------------------------------------------------

PbnnModel::PbnnModel(nn::NetworkSpec spec, nn::Likelihood lik)
    : spec_(std::move(spec)), lik_(lik) {
  spec_.validate();
  prior_ = standard_prior(spec_.dim_phi());
  s_ = spec_.stochastic_layer;
}

double PbnnModel::log_potential(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                const Dataset& batch) const {
  if (batch.size() == 0) return 0.0;
  nn::Params p{psi, phi};
  return nn::log_likelihood(lik_, nn::forward(spec_, p, batch.x), batch.y);
}

Eigen::VectorXd PbnnModel::grad_psi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                    const Dataset& batch) const {
  if (batch.size() == 0) return Eigen::VectorXd::Zero(dim_psi());
  return nn::grad_psi_loglik(spec_, {psi, phi}, batch.x, batch.y, lik_);
}

Eigen::VectorXd PbnnModel::grad_phi(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                                    const Dataset& batch) const {
  if (batch.size() == 0) return Eigen::VectorXd::Zero(dim_phi());
  return nn::grad_phi_loglik(spec_, {psi, phi}, batch.x, batch.y, lik_);
}

Eigen::VectorXd PbnnModel::log_potential_all(const Eigen::VectorXd& psi,
                                             const Eigen::MatrixXd& positions,
                                             const Dataset& batch, int n_threads) const {
  const long J = positions.rows();
  Eigen::VectorXd out(J);
  if (batch.size() == 0) {
    out.setZero();
    return out;
  }
  const int L = spec_.n_layers();
  // layers before the stochastic one depend on psi only: evaluate them once
  nn::Params base{psi, Eigen::VectorXd()};
  const Eigen::MatrixXd A = s_ > 0 ? nn::run_layers(spec_, base, batch.x, 0, s_) : batch.x;
  parallel_blocks(static_cast<std::size_t>(J), n_threads,
                  [&](std::size_t, std::size_t begin, std::size_t end) {
                    nn::Params p{psi, Eigen::VectorXd()};
                    for (std::size_t j = begin; j < end; ++j) {
                      p.phi = positions.row(static_cast<long>(j)).transpose();
                      out[static_cast<long>(j)] = nn::log_likelihood(
                          lik_, nn::run_layers(spec_, p, A, s_, L), batch.y);
                    }
                  });
  return out;
}

Eigen::VectorXd PbnnModel::weighted_grad_psi(const Eigen::VectorXd& psi,
                                             const Eigen::MatrixXd& positions,
                                             const Eigen::VectorXd& lin_weights,
                                             const Dataset& batch, int n_threads) const {
  if (lin_weights.size() != positions.rows())
    throw std::invalid_argument("weighted_grad_psi: weight/position mismatch");
  if (batch.size() == 0) return Eigen::VectorXd::Zero(dim_psi());
  const std::size_t J = static_cast<std::size_t>(positions.rows());
  const int L = spec_.n_layers();

  nn::Params base{psi, Eigen::VectorXd()};
  nn::Cache pre;
  const Eigen::MatrixXd A =
      s_ > 0 ? nn::run_layers(spec_, base, batch.x, 0, s_, &pre) : batch.x;

  // Per particle, backprop only through the layers from the stochastic one up;
  // the shared prefix gets a single backward pass on the weighted sum of the
  // per-particle input sensitivities (gradients are linear in them).
  struct Partial {
    Eigen::VectorXd g;
    Eigen::MatrixXd sens;
  };
  std::vector<Partial> partial(n_blocks(J));
  parallel_blocks(J, n_threads, [&](std::size_t b, std::size_t begin, std::size_t end) {
    Partial acc{Eigen::VectorXd::Zero(dim_psi()),
                Eigen::MatrixXd::Zero(A.rows(), A.cols())};
    nn::Params p{psi, Eigen::VectorXd()};
    nn::Cache cj;
    Eigen::VectorXd gj;
    for (std::size_t j = begin; j < end; ++j) {
      const double w = lin_weights[static_cast<long>(j)];
      if (w == 0.0) continue;
      p.phi = positions.row(static_cast<long>(j)).transpose();
      Eigen::MatrixXd pred = nn::run_layers(spec_, p, A, s_, L, &cj);
      Eigen::MatrixXd g0 = nn::likelihood_grad(lik_, pred, batch.y);
      Eigen::MatrixXd sens =
          nn::backward_layers(spec_, p, cj, std::move(g0), s_, L, {&gj, nullptr});
      acc.g += w * gj;
      acc.sens += w * sens;
    }
    partial[b] = std::move(acc);
  });

  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_psi());
  Eigen::MatrixXd sens = Eigen::MatrixXd::Zero(A.rows(), A.cols());
  for (auto& p : partial) {
    out += p.g;
    sens += p.sens;
  }
  if (s_ > 0) {
    Eigen::VectorXd gpre;
    nn::backward_layers(spec_, base, pre, std::move(sens), 0, s_, {&gpre, nullptr});
    out += gpre;
  }
  return out;
}

kernels::LogTarget PbnnModel::phi_posterior(const Eigen::VectorXd& psi, const Dataset& data) const {
  // Shared context so the psi-only prefix is evaluated once, not per call.
  struct Ctx {
    const PbnnModel* model;
    nn::Params params;
    Eigen::MatrixXd A, y;
  };
  auto ctx = std::make_shared<Ctx>();
  ctx->model = this;
  ctx->params.psi = psi;
  ctx->A = s_ > 0 ? nn::run_layers(spec_, {psi, Eigen::VectorXd()}, data.x, 0, s_) : data.x;
  ctx->y = data.y;

  kernels::LogTarget t;
  t.logp = [ctx](const Eigen::VectorXd& phi) {
    const PbnnModel* m = ctx->model;
    ctx->params.phi = phi;
    const double ll = nn::log_likelihood(
        m->lik_, nn::run_layers(m->spec_, ctx->params, ctx->A, m->s_, m->spec_.n_layers()),
        ctx->y);
    return m->prior_.logpdf(phi) + ll;
  };
  t.grad = [ctx](const Eigen::VectorXd& phi) {
    const PbnnModel* m = ctx->model;
    ctx->params.phi = phi;
    nn::Cache c;
    Eigen::MatrixXd pred =
        nn::run_layers(m->spec_, ctx->params, ctx->A, m->s_, m->spec_.n_layers(), &c);
    Eigen::MatrixXd g0 = nn::likelihood_grad(m->lik_, pred, ctx->y);
    Eigen::VectorXd gphi;
    nn::backward_layers(m->spec_, ctx->params, c, std::move(g0), m->s_, m->spec_.n_layers(),
                        {nullptr, &gphi});
    return (m->prior_.grad_logpdf(phi) + gphi).eval();
  };
  return t;
}

std::vector<Eigen::MatrixXd> PbnnModel::predict_all(const Eigen::VectorXd& psi,
                                                    const Eigen::MatrixXd& positions,
                                                    const Eigen::MatrixXd& X,
                                                    int n_threads) const {
  const long J = positions.rows();
  const int L = spec_.n_layers();
  nn::Params base{psi, Eigen::VectorXd()};
  const Eigen::MatrixXd A = s_ > 0 ? nn::run_layers(spec_, base, X, 0, s_) : X;
  std::vector<Eigen::MatrixXd> preds(static_cast<std::size_t>(J));
  parallel_blocks(static_cast<std::size_t>(J), n_threads,
                  [&](std::size_t, std::size_t begin, std::size_t end) {
                    nn::Params p{psi, Eigen::VectorXd()};
                    for (std::size_t j = begin; j < end; ++j) {
                      p.phi = positions.row(static_cast<long>(j)).transpose();
                      preds[j] = nn::run_layers(spec_, p, A, s_, L);
                    }
                  });
  return preds;
}

// ---- data ------------------------------------------------------------------

Dataset make_crescent_data(long n, double psi_true, const Eigen::Vector2d& phi_true,
                           std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("need at least one observation");
  if (psi_true == 0.0) throw std::invalid_argument("crescent model is singular at psi = 0");
  auto eng = rng::engine(seed, {rng::kDataGen});
  std::normal_distribution<double> dist;
  const double mu = CrescentModel::mean_fn(psi_true, phi_true[0], phi_true[1]);
  Dataset d;
  d.x.resize(n, 0);
  d.y.resize(n, 1);
  for (long i = 0; i < n; ++i) d.y(i, 0) = mu + dist(eng);
  return d;
}

double regression_truth(double x) { return x * std::sin(x * std::tanh(x)); }

Splits make_regression_data(long n_per_split, std::uint64_t seed) {
  if (n_per_split < 1) throw std::invalid_argument("need at least one point per split");
  auto eng = rng::engine(seed, {rng::kDataGen});
  std::uniform_real_distribution<double> ux(-6.0, 6.0);
  std::normal_distribution<double> noise;
  auto gen = [&](long n) {
    Dataset d;
    d.x.resize(n, 1);
    d.y.resize(n, 1);
    for (long i = 0; i < n; ++i) {
      const double x = ux(eng);
      d.x(i, 0) = x;
      d.y(i, 0) = regression_truth(x) + noise(eng);
    }
    return d;
  };
  Splits s;
  s.train = gen(n_per_split);
  s.valid = gen(n_per_split);
  s.test = gen(n_per_split);
  return s;
}

Splits make_moons_data(long n_per_split, double noise, std::uint64_t seed) {
  if (n_per_split < 1) throw std::invalid_argument("need at least one point per split");
  if (noise < 0) throw std::invalid_argument("noise std must be >= 0");
  auto eng = rng::engine(seed, {rng::kDataGen});
  std::uniform_real_distribution<double> ut(0.0, M_PI);
  std::normal_distribution<double> jitter(0.0, noise > 0 ? noise : 1.0);
  auto gen = [&](long n) {
    Dataset d;
    d.x.resize(n, 2);
    d.y.resize(n, 1);
    const long n0 = (n + 1) / 2;
    for (long i = 0; i < n; ++i) {
      const double t = ut(eng);
      double px, py;
      if (i < n0) {
        px = std::cos(t);
        py = std::sin(t);
        d.y(i, 0) = 0.0;
      } else {
        px = 1.0 - std::cos(t);
        py = 0.5 - std::sin(t);
        d.y(i, 0) = 1.0;
      }
      const double jx = jitter(eng), jy = jitter(eng);
      d.x(i, 0) = px + (noise > 0 ? jx : 0.0);
      d.x(i, 1) = py + (noise > 0 ? jy : 0.0);
    }
    return d;
  };
  Splits s;
  s.train = gen(n_per_split);
  s.valid = gen(n_per_split);
  s.test = gen(n_per_split);
  return s;
}

namespace {

std::vector<std::vector<double>> read_numeric_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  long line_no = 0;
  bool first = true;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue; // header row
      }
      throw std::runtime_error(path + ": non-numeric cell at row " + std::to_string(line_no));
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(path + ": ragged row at line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");
  return rows;
}

} // namespace

Splits load_csv(const std::string& path, const std::vector<int>& target_cols,
                bool classification) {
  const auto rows = read_numeric_csv(path);
  const long N = static_cast<long>(rows.size());
  const long C = static_cast<long>(rows.front().size());
  if (target_cols.empty()) throw std::invalid_argument("load_csv: no target columns given");
  std::vector<bool> is_target(C, false);
  for (int c : target_cols) {
    if (c < 0 || c >= C)
      throw std::invalid_argument("load_csv: target column " + std::to_string(c) + " out of range");
    is_target[c] = true;
  }
  const long dy = static_cast<long>(target_cols.size());
  const long dx = C - dy;
  if (dx < 1) throw std::invalid_argument("load_csv: no feature columns left");

  Dataset all;
  all.x.resize(N, dx);
  all.y.resize(N, dy);
  for (long i = 0; i < N; ++i) {
    long xi = 0;
    for (long c = 0; c < C; ++c)
      if (!is_target[c]) all.x(i, xi++) = rows[i][c];
    for (long t = 0; t < dy; ++t) all.y(i, t) = rows[i][target_cols[t]];
  }

  const long n_train = (N * 6) / 10;
  const long n_valid = (N * 3) / 10;
  const long n_test = N - n_train - n_valid;
  if (n_train < 1 || n_valid < 1 || n_test < 1)
    throw std::invalid_argument("load_csv: too few rows for a 60/30/10 split");

  Splits s;
  s.train = slice_rows(all, 0, n_train);
  s.valid = slice_rows(all, n_train, n_train + n_valid);
  s.test = slice_rows(all, n_train + n_valid, N);

  // standardize with train statistics; constant columns map to zero
  auto standardize = [&](auto get, long cols) {
    for (long c = 0; c < cols; ++c) {
      const double mean = get(s.train).col(c).mean();
      const double var =
          (get(s.train).col(c).array() - mean).square().sum() / s.train.size();
      const double sd = std::sqrt(var);
      const double scale = sd > 1e-12 ? sd : 1.0;
      for (Dataset* d : {&s.train, &s.valid, &s.test})
        get(*d).col(c) = (get(*d).col(c).array() - mean) / scale;
    }
  };
  standardize([](Dataset& d) -> Eigen::MatrixXd& { return d.x; }, dx);
  if (!classification)
    standardize([](Dataset& d) -> Eigen::MatrixXd& { return d.y; }, dy);
  return s;
}

void write_csv(const std::string& path, const Dataset& d) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  char buf[32];
  for (long c = 0; c < d.x.cols(); ++c) f << "x" << c << ',';
  for (long c = 0; c < d.y.cols(); ++c) f << "y" << c << (c + 1 < d.y.cols() ? "," : "");
  f << '\n';
  for (long i = 0; i < d.size(); ++i) {
    for (long c = 0; c < d.x.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g,", d.x(i, c));
      f << buf;
    }
    for (long c = 0; c < d.y.cols(); ++c) {
      std::snprintf(buf, sizeof buf, c + 1 < d.y.cols() ? "%.17g," : "%.17g", d.y(i, c));
      f << buf;
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void save_splits(const std::string& base, const Splits& s) {
  write_csv(base + ".train.csv", s.train);
  write_csv(base + ".valid.csv", s.valid);
  write_csv(base + ".test.csv", s.test);
  std::ofstream f(base + ".manifest.json");
  if (!f) throw std::runtime_error("cannot write " + base + ".manifest.json");
  f << "{\n"
    << "  \"train\": {\"file\": \"" << base << ".train.csv\", \"rows\": " << s.train.size() << "},\n"
    << "  \"valid\": {\"file\": \"" << base << ".valid.csv\", \"rows\": " << s.valid.size() << "},\n"
    << "  \"test\": {\"file\": \"" << base << ".test.csv\", \"rows\": " << s.test.size() << "}\n"
    << "}\n";
}

} // namespace pbnn::models
