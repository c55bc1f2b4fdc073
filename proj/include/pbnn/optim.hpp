#pragma once

#include <Eigen/Dense>
#include <string>

namespace pbnn::optim {

struct Schedule {
  enum class Kind { Constant, ExpDecay };
  Kind kind = Kind::Constant;
  double lr = 0.01;    // base rate (lr0 for ExpDecay)
  double rate = 0.96;  // ExpDecay only
  double period = 10;  // ExpDecay only

  // CONSTANT -> lr; EXP_DECAY -> lr * rate^(i/period), real exponent.
  double value(long iteration) const;
};

struct Optimizer {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Adam;
  Schedule schedule;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct OptState {
  Eigen::VectorXd m, v; // Adam moments; empty for SGD
  long t = 0;           // Adam step counter
};

// One ascent step: params + r(i) * direction(grad). Pure: inputs untouched,
// updated copies returned. Throws on a non-finite gradient.
std::pair<Eigen::VectorXd, OptState> step(const Optimizer& opt, const OptState& state,
                                          const Eigen::VectorXd& params,
                                          const Eigen::VectorXd& grad, long iteration);

} // namespace pbnn::optim
