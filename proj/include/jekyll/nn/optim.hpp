#pragma once

#include <vector>

#include "jekyll/nn/var.hpp"

namespace jekyll::nn {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options);

  // Parameters without an accumulated gradient, or currently frozen, are skipped.
  void step();
  void zero_grad();

  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  double learning_rate() const { return options_.learning_rate; }
  long steps() const { return steps_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  long steps_ = 0;
};

}  // namespace jekyll::nn
