#include "pbnn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pbnn::optim {

double Schedule::value(long iteration) const {
  if (iteration < 0) throw std::invalid_argument("negative iteration");
  switch (kind) {
    case Kind::Constant: return lr;
    case Kind::ExpDecay: return lr * std::pow(rate, static_cast<double>(iteration) / period);
  }
  throw std::logic_error("bad schedule enum");
}

std::pair<Eigen::VectorXd, OptState> step(const Optimizer& opt, const OptState& state,
                                          const Eigen::VectorXd& params,
                                          const Eigen::VectorXd& grad, long iteration) {
  if (grad.size() != params.size()) throw std::invalid_argument("grad/param length mismatch");
  if (!grad.allFinite()) throw std::runtime_error("non-finite gradient passed to optimizer");
  const double lr = opt.schedule.value(iteration);
  OptState next = state;
  Eigen::VectorXd out;
  switch (opt.kind) {
    case Optimizer::Kind::Sgd:
      out = params + lr * grad;
      break;
    case Optimizer::Kind::Adam: {
      if (next.m.size() != params.size()) {
        next.m = Eigen::VectorXd::Zero(params.size());
        next.v = Eigen::VectorXd::Zero(params.size());
        next.t = 0;
      }
      next.t += 1;
      next.m = opt.beta1 * next.m + (1.0 - opt.beta1) * grad;
      next.v = opt.beta2 * next.v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(next.t));
      const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(next.t));
      out = params.array() +
            lr * (next.m.array() / c1) / ((next.v.array() / c2).sqrt() + opt.eps);
      break;
    }
  }
  return {std::move(out), std::move(next)};
}

} // namespace pbnn::optim
