#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "jekyll/nn/var.hpp"

namespace jekyll::nn {

struct Conv2dGeometry {
  int stride = 1;
  int pad_top = 0;
  int pad_left = 0;
  int pad_bottom = 0;
  int pad_right = 0;
  int dilation = 1;

  static Conv2dGeometry symmetric(int stride, int pad, int dilation = 1) {
    return {stride, pad, pad, pad, pad, dilation};
  }
  // TensorFlow-style "same" padding for stride 1 (extra row/column goes bottom/right).
  static Conv2dGeometry same(int kernel, int dilation = 1) {
    const int total = dilation * (kernel - 1);
    return {1, total / 2, total / 2, total - total / 2, total - total / 2, dilation};
  }
};

int conv_output_size(int input, int kernel, int stride, int pad_before, int pad_after,
                     int dilation = 1);

// Convolutions. Weights are [out, in, kh, kw]; transposed weights are [in, out, kh, kw].
Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dGeometry& geom);
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding,
                     int output_padding);
Var reflect_pad(const Var& x, int pad);

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = Real(1e-5));
// Batch statistics in training mode (running buffers updated in place), running
// statistics otherwise.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, Real momentum = Real(0.1),
               Real eps = Real(1e-5));

Var relu(const Var& x);
Var leaky_relu(const Var& x, Real slope);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, Real s);
Var add_scalar(const Var& x, Real s);
Var weighted_sum(const std::vector<Var>& terms, const std::vector<Real>& weights);

// x: [N, in], weight: [out, in], bias: [out].
Var linear(const Var& x, const Var& weight, const Var& bias);

Var max_pool2d(const Var& x, int kernel, int stride, int padding = 0);
Var avg_pool2d(const Var& x, int kernel, int stride);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
Var dropout(const Var& x, Real rate, std::mt19937_64& rng, bool training);

Var concat_channels(const std::vector<Var>& parts);
Var reshape(const Var& x, std::vector<int> shape);
Var flatten(const Var& x);  // [N, ...] -> [N, prod]
Var repeat_channels(const Var& x, int times);
// Rows [begin, end) of the leading dimension.
Var slice_batch(const Var& x, int begin, int end);
Var stack_batch(const std::vector<Var>& parts);

Var softmax(const Var& logits);                  // row-wise over [N, C]
Var select_column(const Var& matrix, int column);  // [N, C] -> [N]

// Reductions to a scalar (shape {1}).
Var mean(const Var& x);
Var sum(const Var& x);
Var l1_mean(const Var& a, const Var& b);           // mean |a - b|
Var squared_error_to(const Var& x, Real target);   // mean (x - target)^2
// mean(-log clamp(p, eps, 1 - eps)); gradient is zero where clamped.
Var mean_neg_log(const Var& p, Real eps);
// Mean softmax cross-entropy of [N, C] logits.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);
// Mean binary cross-entropy on [N] or [N,1] logits, numerically stable form.
Var bce_with_logits(const Var& logits, const std::vector<Real>& targets);

}  // namespace jekyll::nn
