#include "cadm/optimizer.hpp"

#include <cmath>

#include "cadm/errors.hpp"

namespace cadm {

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

void AdamOptimizer::step(const std::vector<TensorView>& params,
                         const std::vector<ConstTensorView>& grads) {
  if (params.size() != grads.size()) {
    throw ContractError("optimizer: param/grad view count mismatch");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params[i].size), 0.0);
      v_[i].assign(static_cast<std::size_t>(params[i].size), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size ||
        params[i].size != static_cast<Index>(m_[i].size())) {
      throw ContractError("optimizer: tensor size changed between steps");
    }
    Scalar* p = params[i].data;
    const Scalar* g = grads[i].data;
    for (Index j = 0; j < params[i].size; ++j) {
      m_[i][static_cast<std::size_t>(j)] =
          beta1_ * m_[i][static_cast<std::size_t>(j)] + (1.0 - beta1_) * g[j];
      v_[i][static_cast<std::size_t>(j)] =
          beta2_ * v_[i][static_cast<std::size_t>(j)] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m_[i][static_cast<std::size_t>(j)] / bc1;
      const double vhat = v_[i][static_cast<std::size_t>(j)] / bc2;
      p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace cadm
