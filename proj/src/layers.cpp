// SPDX-License-Identifier: Apache-2.0

#include "sslab/layers.hpp"

#include <cmath>
#include <numbers>

namespace sslab {

namespace {
const char* kNoForward = "no recorded forward pass";
}

void init_fan_in_uniform(Param& p, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.uniform(-bound, bound);
}

// --- Linear ---------------------------------------------------------------

Linear::Linear(const std::string& name, Index in, Index out, bool bias, Rng& rng)
    : weight_(name + ".weight", in, out), bias_(name + ".bias", 1, out), has_bias_(bias) {
  init_fan_in_uniform(weight_, in, rng);
  if (has_bias_) init_fan_in_uniform(bias_, in, rng);
}

Matrix Linear::apply(const Matrix& x) const {
  Matrix y = x * weight_.value;
  if (has_bias_) y.rowwise() += bias_.value.row(0);
  return y;
}

Matrix Linear::forward(const Matrix& x) {
  input_ = x;
  return apply(x);
}

Matrix Linear::backward(const Matrix& dy) {
  if (!input_) throw Error(kNoForward);
  weight_.grad.noalias() += input_->transpose() * dy;
  if (has_bias_) bias_.grad.row(0) += dy.colwise().sum();
  return dy * weight_.value.transpose();
}

ParamRefs Linear::params() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

// --- Conv1d ---------------------------------------------------------------

Conv1d::Conv1d(const std::string& name, Index in_channels, Index out_channels, Index kernel, Index stride, Rng& rng)
    : in_channels_(in_channels),
      kernel_(kernel),
      stride_(stride),
      weight_(name + ".weight", kernel * in_channels, out_channels),
      bias_(name + ".bias", 1, out_channels) {
  init_fan_in_uniform(weight_, kernel * in_channels, rng);
  init_fan_in_uniform(bias_, kernel * in_channels, rng);
}

Index Conv1d::output_length(Index input_length, Index kernel, Index stride) {
  if (input_length < kernel) return 0;
  return (input_length - kernel) / stride + 1;
}

Matrix Conv1d::im2col(const Matrix& x) const {
  const Index t_out = output_length(x.rows());
  const Index width = kernel_ * in_channels_;
  Matrix cols(t_out, width);
  // Rows t*stride .. t*stride+kernel-1 of a row-major matrix are contiguous.
  for (Index t = 0; t < t_out; ++t)
    cols.row(t) = Eigen::Map<const RowVector>(x.data() + t * stride_ * in_channels_, width);
  return cols;
}

Matrix Conv1d::forward(const Matrix& x) {
  if (x.cols() != in_channels_) throw Error("conv input channel mismatch");
  if (output_length(x.rows()) == 0) throw Error("input too short for receptive field");
  input_rows_ = x.rows();
  columns_ = im2col(x);
  Matrix y = *columns_ * weight_.value;
  y.rowwise() += bias_.value.row(0);
  return y;
}

Matrix Conv1d::backward(const Matrix& dy) {
  if (!columns_) throw Error(kNoForward);
  weight_.grad.noalias() += columns_->transpose() * dy;
  bias_.grad.row(0) += dy.colwise().sum();
  const Matrix dcols = dy * weight_.value.transpose();
  Matrix dx = Matrix::Zero(input_rows_, in_channels_);
  const Index width = kernel_ * in_channels_;
  for (Index t = 0; t < dcols.rows(); ++t) {
    Eigen::Map<RowVector> dst(dx.data() + t * stride_ * in_channels_, width);
    dst += dcols.row(t);
  }
  return dx;
}

// --- LayerNorm ------------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, Index dim, double eps)
    : eps_(eps), gamma_(name + ".gamma", 1, dim), beta_(name + ".beta", 1, dim) {
  gamma_.value.setOnes();
}

Matrix LayerNorm::normalize(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  for (Index t = 0; t < x.rows(); ++t) {
    const double mean = x.row(t).mean();
    const double var = (x.row(t).array() - mean).square().mean();
    out.row(t) = (x.row(t).array() - mean) / std::sqrt(var + eps);
  }
  return out;
}

Matrix LayerNorm::forward(const Matrix& x) {
  Matrix normed(x.rows(), x.cols());
  Vector inv_std(x.rows());
  for (Index t = 0; t < x.rows(); ++t) {
    const double mean = x.row(t).mean();
    const double var = (x.row(t).array() - mean).square().mean();
    inv_std(t) = 1.0 / std::sqrt(var + eps_);
    normed.row(t) = (x.row(t).array() - mean) * inv_std(t);
  }
  Matrix y = normed.array().rowwise() * gamma_.value.row(0).array();
  y.rowwise() += beta_.value.row(0);
  normed_ = std::move(normed);
  inv_std_ = std::move(inv_std);
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy) {
  if (!normed_) throw Error(kNoForward);
  const Matrix& xhat = *normed_;
  gamma_.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  beta_.grad.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma_.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Index t = 0; t < dy.rows(); ++t) {
    const double m1 = dxhat.row(t).mean();
    const double m2 = dxhat.row(t).dot(xhat.row(t)) / static_cast<double>(dy.cols());
    dx.row(t) = (*inv_std_)(t) * (dxhat.row(t).array() - m1 - xhat.row(t).array() * m2);
  }
  return dx;
}

// --- activations ----------------------------------------------------------

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Matrix d = x.unaryExpr([inv_sqrt_2pi](double v) {
    return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  });
  return d.cwiseProduct(dy);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix Glu::forward(const Matrix& x) {
  if (x.cols() % 2 != 0) throw Error("GLU needs an even channel count");
  const Index half = x.cols() / 2;
  input_ = x;
  return x.leftCols(half).cwiseProduct(x.rightCols(half).unaryExpr(&sigmoid));
}

Matrix Glu::backward(const Matrix& dy) {
  if (!input_) throw Error(kNoForward);
  const Index half = dy.cols();
  const Matrix a = input_->leftCols(half);
  const Matrix s = input_->rightCols(half).unaryExpr(&sigmoid);
  Matrix dx(dy.rows(), 2 * half);
  dx.leftCols(half) = dy.cwiseProduct(s);
  dx.rightCols(half) = dy.cwiseProduct(a).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
  return dx;
}

}  // namespace sslab
