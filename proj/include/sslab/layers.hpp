// SPDX-License-Identifier: Apache-2.0
//
// Differentiable building blocks with hand-written backward passes. Every
// layer records the inputs of its most recent forward call; backward()
// consumes that record and accumulates into Param::grad.
#pragma once

#include <optional>
#include <string>

#include "sslab/common.hpp"
#include "sslab/rng.hpp"

namespace sslab {

/// Uniform fan-in initialization, bound 1/sqrt(fan_in).
void init_fan_in_uniform(Param& p, Index fan_in, Rng& rng);

/// y = x W + b with W stored as (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out, bool bias, Rng& rng);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);
  /// Forward without recording (inference paths).
  Matrix apply(const Matrix& x) const;

  ParamRefs params();
  Index in_dim() const { return weight_.value.rows(); }
  Index out_dim() const { return weight_.value.cols(); }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  Param weight_;
  Param bias_;
  bool has_bias_ = false;
  std::optional<Matrix> input_;
};

/// Unpadded strided 1-D convolution over time-major input (T x in_channels).
/// Weight layout: (kernel * in_channels) x out_channels, im2col order.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, Index in_channels, Index out_channels, Index kernel, Index stride, Rng& rng);

  static Index output_length(Index input_length, Index kernel, Index stride);
  Index output_length(Index input_length) const { return output_length(input_length, kernel_, stride_); }

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);

  ParamRefs params() { return {&weight_, &bias_}; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  Index kernel() const { return kernel_; }
  Index stride() const { return stride_; }
  Index in_channels() const { return in_channels_; }
  Index out_channels() const { return weight_.value.cols(); }

 private:
  Matrix im2col(const Matrix& x) const;

  Index in_channels_ = 0;
  Index kernel_ = 1;
  Index stride_ = 1;
  Param weight_;
  Param bias_;
  std::optional<Matrix> columns_;
  Index input_rows_ = 0;
};

/// Row-wise layer normalization with affine parameters.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim, double eps = 1e-5);

  /// Normalization without the affine transform.
  static Matrix normalize(const Matrix& x, double eps = 1e-5);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);
  ParamRefs params() { return {&gamma_, &beta_}; }

 private:
  double eps_ = 1e-5;
  Param gamma_;
  Param beta_;
  std::optional<Matrix> normed_;
  std::optional<Vector> inv_std_;
};

/// Exact (erf) GELU.
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

double sigmoid(double x);

/// Gated linear unit over channels: first half times sigmoid(second half).
class Glu {
 public:
  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);

 private:
  std::optional<Matrix> input_;
};

}  // namespace sslab
