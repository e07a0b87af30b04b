#include "jekyll/nn/optim.hpp"

#include <cmath>

namespace jekyll::nn {

Adam::Adam(std::vector<Var> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros_like(p.value()));
    v_.push_back(Tensor::zeros_like(p.value()));
  }
}

void Adam::step() {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double step_size = options_.learning_rate / corr1;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k];
    if (!p.requires_grad() || !p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<Real>(b1 * m[i] + (1 - b1) * gi);
      v[i] = static_cast<Real>(b2 * v[i] + (1 - b2) * gi * gi);
      w[i] -= static_cast<Real>(step_size * m[i] / (std::sqrt(v[i] / corr2) + options_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace jekyll::nn
