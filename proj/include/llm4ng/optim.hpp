#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "llm4ng/errors.hpp"

namespace llm4ng {

template <class Scalar>
struct TensorView {
  Scalar* data;
  Eigen::Index size;
};

// Flattens a parameter pack (anything with a for_each over Eigen tensors)
// into raw views. Params and their gradients must be traversed in the same
// order.
template <class Scalar, class Params>
std::vector<TensorView<Scalar>> tensor_views(Params& params) {
  std::vector<TensorView<Scalar>> views;
  params.for_each([&](auto& t) { views.push_back({t.data(), t.size()}); });
  return views;
}

// Adam with the usual bias correction. Weight decay is folded into the
// gradient (L2-coupled).
template <class Scalar>
class Adam {
 public:
  Adam(double learning_rate, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
        eps_(epsilon) {}

  void step(const std::vector<TensorView<Scalar>>& params,
            const std::vector<TensorView<Scalar>>& grads) {
    if (params.size() != grads.size()) {
      throw DimensionMismatch("optimizer parameter/gradient mismatch");
    }
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params[i].size), Scalar(0));
        v_[i].assign(static_cast<std::size_t>(params[i].size), Scalar(0));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Scalar* p = params[i].data;
      const Scalar* g = grads[i].data;
      auto& m = m_[i];
      auto& v = v_[i];
      for (Eigen::Index j = 0; j < params[i].size; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double grad = static_cast<double>(g[j]) + wd_ * static_cast<double>(p[j]);
        m[ju] = static_cast<Scalar>(beta1_ * m[ju] + (1.0 - beta1_) * grad);
        v[ju] = static_cast<Scalar>(beta2_ * v[ju] + (1.0 - beta2_) * grad * grad);
        const double m_hat = static_cast<double>(m[ju]) / bc1;
        const double v_hat = static_cast<double>(v[ju]) / bc2;
        p[j] = static_cast<Scalar>(static_cast<double>(p[j]) -
                                   lr_ * m_hat / (std::sqrt(v_hat) + eps_));
      }
    }
  }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<Scalar>> m_, v_;
};

}  // namespace llm4ng
