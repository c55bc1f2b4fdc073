#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbnn::nn {

enum class Activation { Gelu, Relu, Sigmoid, Softmax, None };
enum class Likelihood { GaussianUnitVar, BernoulliFromProb, CategoricalFromProbs };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);
Likelihood likelihood_from_name(const std::string& name);
std::string likelihood_name(Likelihood l);

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::None;
};

// Dense MLP with exactly one stochastic layer; that layer's parameters are
// phi (sampled), everything else is psi (optimized).
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  int stochastic_layer = 0;
  bool exact_gelu = false; // erf-based GELU instead of the tanh approximation

  int n_layers() const { return static_cast<int>(layers.size()); }
  long layer_params(int k) const {
    return static_cast<long>(layers[k].out) * (layers[k].in + 1);
  }
  long dim_psi() const;
  long dim_phi() const { return layer_params(stochastic_layer); }
  // offset of layer k's parameters inside its group vector (psi or phi)
  long group_offset(int k) const;
  int in_dim() const { return layers.front().in; }
  int out_dim() const { return layers.back().out; }

  void validate() const; // throws std::invalid_argument

  // "1 20 GELU | 20 10 GELU | 10 1 NONE"
  std::string layers_text() const;
  static std::vector<LayerSpec> parse_layers(const std::string& text);
};

// Flat parameter storage. Per layer: W (out x in, column-major) then bias.
struct Params {
  Eigen::VectorXd psi, phi;
};

Params init_params(const NetworkSpec& spec, std::uint64_t seed);

Eigen::Map<const Eigen::MatrixXd> weight(const NetworkSpec& spec, const Eigen::VectorXd& group, int k);
Eigen::Map<const Eigen::VectorXd> bias(const NetworkSpec& spec, const Eigen::VectorXd& group, int k);

// Intermediate values kept by run_layers for the backward pass.
// z = pre-activation, a = activation output, t = activation-specific scratch
// (GELU: inner tanh / normal CDF; SOFTMAX: unused, probs live in a).
struct Cache {
  int first = 0;
  Eigen::MatrixXd x0; // input fed to layer `first`
  std::vector<Eigen::MatrixXd> z, a, t;
  const Eigen::MatrixXd& input(int k) const { return k == first ? x0 : a[k - 1]; }
};

// Forward through layers [first, last); X is batch x layers[first].in.
Eigen::MatrixXd run_layers(const NetworkSpec& spec, const Params& params,
                           const Eigen::MatrixXd& X, int first, int last,
                           Cache* cache = nullptr);

inline Eigen::MatrixXd forward(const NetworkSpec& spec, const Params& params,
                               const Eigen::MatrixXd& X) {
  return run_layers(spec, params, X, 0, spec.n_layers());
}

struct NonFiniteGradient : std::runtime_error {
  explicit NonFiniteGradient(int layer_idx);
  int layer;
};

// Which parameter-gradient vectors backward_layers should fill (either may be
// null). Vectors are resized and overwritten.
struct GradSink {
  Eigen::VectorXd* psi = nullptr;
  Eigen::VectorXd* phi = nullptr;
};

// Backprop through layers [first, last). g is dL/d(output of layer last-1);
// returns dL/d(input of layer first). Throws NonFiniteGradient if a layer
// produces a non-finite parameter gradient.
Eigen::MatrixXd backward_layers(const NetworkSpec& spec, const Params& params,
                                const Cache& cache, Eigen::MatrixXd g,
                                int first, int last, GradSink sink);

// Summed log-likelihood of y under predictions `pred` (one row per example).
// BERNOULLI: pred is one column of probabilities, y in {0,1}.
// CATEGORICAL: pred rows are probability vectors, y holds class indices.
// Probabilities are clamped to [1e-12, 1 - 1e-12] before the log.
double log_likelihood(Likelihood lik, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& y);
Eigen::VectorXd log_likelihood_rows(Likelihood lik, const Eigen::MatrixXd& pred,
                                    const Eigen::MatrixXd& y);
Eigen::MatrixXd likelihood_grad(Likelihood lik, const Eigen::MatrixXd& pred,
                                const Eigen::MatrixXd& y);

// d log p(y | x; psi, phi) / d psi (resp. phi), summed over the batch.
Eigen::VectorXd grad_psi_loglik(const NetworkSpec& spec, const Params& params,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& y,
                                Likelihood lik);
Eigen::VectorXd grad_phi_loglik(const NetworkSpec& spec, const Params& params,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& y,
                                Likelihood lik);
// Both in one forward/backward pass.
void grad_loglik(const NetworkSpec& spec, const Params& params,
                 const Eigen::MatrixXd& X, const Eigen::MatrixXd& y, Likelihood lik,
                 Eigen::VectorXd* gpsi, Eigen::VectorXd* gphi);

} // namespace pbnn::nn
