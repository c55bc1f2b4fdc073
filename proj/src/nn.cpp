#include "pbnn/nn.hpp"

#include "pbnn/rng.hpp"

#include <cmath>
#include <sstream>

namespace pbnn::nn {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kGeluS = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluC = 0.044715;
constexpr double kLog2Pi = 1.8378770664093453;

double clamp_prob(double p) {
  return std::min(1.0 - kProbFloor, std::max(kProbFloor, p));
}

} // namespace

Activation activation_from_name(const std::string& name) {
  if (name == "GELU") return Activation::Gelu;
  if (name == "RELU") return Activation::Relu;
  if (name == "SIGMOID") return Activation::Sigmoid;
  if (name == "SOFTMAX") return Activation::Softmax;
  if (name == "NONE") return Activation::None;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Gelu: return "GELU";
    case Activation::Relu: return "RELU";
    case Activation::Sigmoid: return "SIGMOID";
    case Activation::Softmax: return "SOFTMAX";
    case Activation::None: return "NONE";
  }
  throw std::logic_error("bad activation enum");
}

Likelihood likelihood_from_name(const std::string& name) {
  if (name == "GAUSSIAN_UNIT_VAR") return Likelihood::GaussianUnitVar;
  if (name == "BERNOULLI_FROM_PROB") return Likelihood::BernoulliFromProb;
  if (name == "CATEGORICAL_FROM_PROBS") return Likelihood::CategoricalFromProbs;
  throw std::invalid_argument("unknown likelihood: " + name);
}

std::string likelihood_name(Likelihood l) {
  switch (l) {
    case Likelihood::GaussianUnitVar: return "GAUSSIAN_UNIT_VAR";
    case Likelihood::BernoulliFromProb: return "BERNOULLI_FROM_PROB";
    case Likelihood::CategoricalFromProbs: return "CATEGORICAL_FROM_PROBS";
  }
  throw std::logic_error("bad likelihood enum");
}

long NetworkSpec::dim_psi() const {
  long d = 0;
  for (int k = 0; k < n_layers(); ++k)
    if (k != stochastic_layer) d += layer_params(k);
  return d;
}

long NetworkSpec::group_offset(int k) const {
  long off = 0;
  for (int j = 0; j < k; ++j) {
    const bool same_group = (j == stochastic_layer) == (k == stochastic_layer);
    if (same_group) off += layer_params(j);
  }
  return off;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw std::invalid_argument("network needs at least one layer");
  for (int k = 0; k < n_layers(); ++k) {
    if (layers[k].in <= 0 || layers[k].out <= 0)
      throw std::invalid_argument("layer " + std::to_string(k) + " has non-positive size");
    if (k > 0 && layers[k].in != layers[k - 1].out)
      throw std::invalid_argument("layer " + std::to_string(k) + " input dim does not match previous output");
    if (layers[k].act == Activation::Softmax && k != n_layers() - 1)
      throw std::invalid_argument("SOFTMAX is only allowed on the output layer");
  }
  if (stochastic_layer < 0 || stochastic_layer >= n_layers())
    throw std::invalid_argument("stochastic_layer out of range");
}

std::string NetworkSpec::layers_text() const {
  std::ostringstream os;
  for (int k = 0; k < n_layers(); ++k) {
    if (k) os << " | ";
    os << layers[k].in << ' ' << layers[k].out << ' ' << activation_name(layers[k].act);
  }
  return os.str();
}

std::vector<LayerSpec> NetworkSpec::parse_layers(const std::string& text) {
  std::vector<LayerSpec> out;
  std::string chunk;
  std::istringstream all(text);
  while (std::getline(all, chunk, '|')) {
    std::istringstream is(chunk);
    LayerSpec l;
    std::string act;
    if (!(is >> l.in >> l.out >> act))
      throw std::invalid_argument("bad layer spec: '" + chunk + "' (want 'IN OUT ACTIVATION')");
    std::string extra;
    if (is >> extra) throw std::invalid_argument("trailing junk in layer spec: '" + chunk + "'");
    l.act = activation_from_name(act);
    out.push_back(l);
  }
  if (out.empty()) throw std::invalid_argument("empty layer spec");
  return out;
}

Params init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Params p;
  p.psi.setZero(spec.dim_psi());
  p.phi.setZero(spec.dim_phi());
  for (int k = 0; k < spec.n_layers(); ++k) {
    auto eng = rng::engine(seed, {rng::kParamInit, static_cast<std::uint64_t>(k)});
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(spec.layers[k].in)));
    Eigen::VectorXd& group = (k == spec.stochastic_layer) ? p.phi : p.psi;
    const long off = spec.group_offset(k);
    const long n_w = static_cast<long>(spec.layers[k].out) * spec.layers[k].in;
    for (long i = 0; i < n_w; ++i) group[off + i] = dist(eng);
    // biases stay zero
  }
  return p;
}

Eigen::Map<const Eigen::MatrixXd> weight(const NetworkSpec& spec, const Eigen::VectorXd& group, int k) {
  return {group.data() + spec.group_offset(k), spec.layers[k].out, spec.layers[k].in};
}

Eigen::Map<const Eigen::VectorXd> bias(const NetworkSpec& spec, const Eigen::VectorXd& group, int k) {
  const long off = spec.group_offset(k) + static_cast<long>(spec.layers[k].out) * spec.layers[k].in;
  return {group.data() + off, spec.layers[k].out};
}

namespace {

void apply_activation(Activation act, bool exact_gelu, const Eigen::MatrixXd& z,
                      Eigen::MatrixXd& a, Eigen::MatrixXd& t) {
  switch (act) {
    case Activation::None:
      a = z;
      break;
    case Activation::Relu:
      a = z.cwiseMax(0.0);
      break;
    case Activation::Sigmoid:
      a = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      break;
    case Activation::Gelu:
      if (exact_gelu) {
        t = z.unaryExpr([](double v) { return 0.5 * (1.0 + std::erf(v / M_SQRT2)); }); // normal CDF
        a = z.cwiseProduct(t);
      } else {
        t = ((kGeluS * (z.array() + kGeluC * z.array().cube())).tanh()).matrix();
        a = (0.5 * z.array() * (1.0 + t.array())).matrix();
      }
      break;
    case Activation::Softmax: {
      Eigen::ArrayXXd e = (z.array().colwise() - z.rowwise().maxCoeff().array()).exp();
      a = (e.colwise() / e.rowwise().sum()).matrix();
      break;
    }
  }
}

// dL/dz given dL/da, using the cached forward values.
Eigen::MatrixXd activation_backward(Activation act, bool exact_gelu, const Eigen::MatrixXd& g,
                                    const Eigen::MatrixXd& z, const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& t) {
  switch (act) {
    case Activation::None:
      return g;
    case Activation::Relu:
      return (g.array() * (z.array() > 0.0).cast<double>()).matrix();
    case Activation::Sigmoid:
      return (g.array() * a.array() * (1.0 - a.array())).matrix();
    case Activation::Gelu:
      if (exact_gelu) {
        // d/dx x*CDF(x) = CDF(x) + x*pdf(x)
        Eigen::ArrayXXd pdf = (-0.5 * z.array().square()).exp() / std::sqrt(2.0 * M_PI);
        return (g.array() * (t.array() + z.array() * pdf)).matrix();
      } else {
        Eigen::ArrayXXd sech2 = 1.0 - t.array().square();
        Eigen::ArrayXXd du = kGeluS * (1.0 + 3.0 * kGeluC * z.array().square());
        return (g.array() * (0.5 * (1.0 + t.array()) + 0.5 * z.array() * sech2 * du)).matrix();
      }
    case Activation::Softmax: {
      Eigen::VectorXd dot = (g.array() * a.array()).rowwise().sum().matrix();
      return (a.array() * (g.array().colwise() - dot.array())).matrix();
    }
  }
  throw std::logic_error("bad activation enum");
}

} // namespace

Eigen::MatrixXd run_layers(const NetworkSpec& spec, const Params& params,
                           const Eigen::MatrixXd& X, int first, int last, Cache* cache) {
  if (first < 0 || last > spec.n_layers() || first > last)
    throw std::invalid_argument("run_layers: bad layer range");
  if (first < last && X.cols() != spec.layers[first].in)
    throw std::invalid_argument("run_layers: input has " + std::to_string(X.cols()) +
                                " columns, layer expects " + std::to_string(spec.layers[first].in));
  if (cache) {
    cache->first = first;
    cache->x0 = X;
    cache->z.assign(spec.n_layers(), {});
    cache->a.assign(spec.n_layers(), {});
    cache->t.assign(spec.n_layers(), {});
  }
  Eigen::MatrixXd cur = X;
  for (int k = first; k < last; ++k) {
    const Eigen::VectorXd& group = (k == spec.stochastic_layer) ? params.phi : params.psi;
    auto W = weight(spec, group, k);
    auto b = bias(spec, group, k);
    Eigen::MatrixXd z = cur * W.transpose();
    z.rowwise() += b.transpose();
    Eigen::MatrixXd a, t;
    apply_activation(spec.layers[k].act, spec.exact_gelu, z, a, t);
    if (cache) {
      cache->z[k] = std::move(z);
      cache->t[k] = std::move(t);
      cache->a[k] = a;
    }
    cur = std::move(a);
  }
  return cur;
}

NonFiniteGradient::NonFiniteGradient(int layer_idx)
    : std::runtime_error("non-finite gradient in layer " + std::to_string(layer_idx)),
      layer(layer_idx) {}

Eigen::MatrixXd backward_layers(const NetworkSpec& spec, const Params& params,
                                const Cache& cache, Eigen::MatrixXd g,
                                int first, int last, GradSink sink) {
  if (sink.psi) sink.psi->setZero(spec.dim_psi());
  if (sink.phi) sink.phi->setZero(spec.dim_phi());
  for (int k = last - 1; k >= first; --k) {
    const bool stoch = (k == spec.stochastic_layer);
    const Eigen::VectorXd& group = stoch ? params.phi : params.psi;
    Eigen::MatrixXd dz = activation_backward(spec.layers[k].act, spec.exact_gelu, g,
                                             cache.z[k], cache.a[k], cache.t[k]);
    Eigen::VectorXd* dst = stoch ? sink.phi : sink.psi;
    if (dst) {
      const int out = spec.layers[k].out, in = spec.layers[k].in;
      const long off = spec.group_offset(k);
      Eigen::Map<Eigen::MatrixXd> dW(dst->data() + off, out, in);
      Eigen::Map<Eigen::VectorXd> db(dst->data() + off + static_cast<long>(out) * in, out);
      dW = dz.transpose() * cache.input(k);
      db = dz.colwise().sum();
      if (!dW.allFinite() || !db.allFinite()) throw NonFiniteGradient(k);
    }
    g = dz * weight(spec, group, k);
  }
  return g;
}

Eigen::VectorXd log_likelihood_rows(Likelihood lik, const Eigen::MatrixXd& pred,
                                    const Eigen::MatrixXd& y) {
  if (pred.rows() != y.rows()) throw std::invalid_argument("pred/y row mismatch");
  const Eigen::Index n = pred.rows();
  Eigen::VectorXd out(n);
  switch (lik) {
    case Likelihood::GaussianUnitVar:
      if (pred.cols() != y.cols()) throw std::invalid_argument("pred/y column mismatch");
      out = (-0.5 * (pred - y).rowwise().squaredNorm().array() - 0.5 * kLog2Pi * pred.cols()).matrix();
      break;
    case Likelihood::BernoulliFromProb: {
      if (pred.cols() != 1 || y.cols() != 1)
        throw std::invalid_argument("bernoulli likelihood wants single-column pred and y");
      for (Eigen::Index i = 0; i < n; ++i) {
        const double p = clamp_prob(pred(i, 0));
        out[i] = y(i, 0) > 0.5 ? std::log(p) : std::log1p(-p);
      }
      break;
    }
    case Likelihood::CategoricalFromProbs: {
      if (y.cols() != 1) throw std::invalid_argument("categorical likelihood wants class-index y");
      for (Eigen::Index i = 0; i < n; ++i) {
        const long c = static_cast<long>(y(i, 0));
        if (c < 0 || c >= pred.cols())
          throw std::invalid_argument("class index out of range at row " + std::to_string(i));
        out[i] = std::log(clamp_prob(pred(i, c)));
      }
      break;
    }
  }
  return out;
}

double log_likelihood(Likelihood lik, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& y) {
  return log_likelihood_rows(lik, pred, y).sum();
}

Eigen::MatrixXd likelihood_grad(Likelihood lik, const Eigen::MatrixXd& pred,
                                const Eigen::MatrixXd& y) {
  if (pred.rows() != y.rows()) throw std::invalid_argument("pred/y row mismatch");
  switch (lik) {
    case Likelihood::GaussianUnitVar:
      return y - pred;
    case Likelihood::BernoulliFromProb: {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(pred.rows(), 1);
      for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const double p = pred(i, 0);
        if (p <= kProbFloor || p >= 1.0 - kProbFloor) continue; // clamped flat region
        g(i, 0) = y(i, 0) > 0.5 ? 1.0 / p : -1.0 / (1.0 - p);
      }
      return g;
    }
    case Likelihood::CategoricalFromProbs: {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
      for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const long c = static_cast<long>(y(i, 0));
        const double p = pred(i, c);
        if (p <= kProbFloor || p >= 1.0 - kProbFloor) continue;
        g(i, c) = 1.0 / p;
      }
      return g;
    }
  }
  throw std::logic_error("bad likelihood enum");
}

void grad_loglik(const NetworkSpec& spec, const Params& params,
                 const Eigen::MatrixXd& X, const Eigen::MatrixXd& y, Likelihood lik,
                 Eigen::VectorXd* gpsi, Eigen::VectorXd* gphi) {
  Cache cache;
  Eigen::MatrixXd pred = run_layers(spec, params, X, 0, spec.n_layers(), &cache);
  Eigen::MatrixXd g = likelihood_grad(lik, pred, y);
  backward_layers(spec, params, cache, std::move(g), 0, spec.n_layers(), {gpsi, gphi});
}

Eigen::VectorXd grad_psi_loglik(const NetworkSpec& spec, const Params& params,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& y,
                                Likelihood lik) {
  Eigen::VectorXd g;
  grad_loglik(spec, params, X, y, lik, &g, nullptr);
  return g;
}

Eigen::VectorXd grad_phi_loglik(const NetworkSpec& spec, const Params& params,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& y,
                                Likelihood lik) {
  Eigen::VectorXd g;
  grad_loglik(spec, params, X, y, lik, nullptr, &g);
  return g;
}

} // namespace pbnn::nn
