// SPDX-License-Identifier: Apache-2.0

#include "sslab/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace sslab {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("encoder needs at least one layer");
  if (model_dim < 1 || num_heads < 1 || ffn_dim < 1 || input_dim < 1) throw ConfigError("encoder dims must be positive");
  if (model_dim % num_heads != 0) throw ConfigError("encoder.dim must be divisible by encoder.heads");
  for (int l : ils_layers)
    if (l < 1 || l > num_layers)
      throw ConfigError("ils_layers entry " + std::to_string(l) + " outside encoder depth " + std::to_string(num_layers));
}

Matrix sinusoidal_positions(Index length, Index dim) {
  Matrix pe(length, dim);
  for (Index t = 0; t < length; ++t) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(t, i) = (i % 2 == 0) ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
    }
  }
  return pe;
}

// --- attention ------------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(const std::string& name, int dim, int heads, Rng& rng)
    : heads_(heads),
      head_dim_(dim / heads),
      q_(name + ".q", dim, dim, true, rng),
      k_(name + ".k", dim, dim, true, rng),
      v_(name + ".v", dim, dim, true, rng),
      o_(name + ".out", dim, dim, true, rng) {}

Matrix MultiHeadAttention::forward(const Matrix& x, OpCounts& ops) {
  const Index t_len = x.rows();
  const Index dim = x.cols();
  qm_ = q_.forward(x);
  km_ = k_.forward(x);
  vm_ = v_.forward(x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));

  probs_.assign(static_cast<std::size_t>(heads_), Matrix());
  Matrix context(t_len, dim);
  for (int h = 0; h < heads_; ++h) {
    const Index off = h * head_dim_;
    Matrix scores = (qm_.middleCols(off, head_dim_) * km_.middleCols(off, head_dim_).transpose()) * scale;
    for (Index r = 0; r < t_len; ++r) {
      const double mx = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - mx).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    context.middleCols(off, head_dim_) = scores * vm_.middleCols(off, head_dim_);
    probs_[static_cast<std::size_t>(h)] = std::move(scores);
  }
  ops.attention_flops += static_cast<std::uint64_t>(4 * t_len * t_len * dim);
  ops.linear_flops += static_cast<std::uint64_t>(8 * t_len * dim * dim);
  return o_.forward(context);
}

Matrix MultiHeadAttention::backward(const Matrix& dy) {
  if (probs_.empty()) throw Error("no recorded forward pass");
  const Matrix dcontext = o_.backward(dy);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  Matrix dq(qm_.rows(), qm_.cols()), dk(km_.rows(), km_.cols()), dv(vm_.rows(), vm_.cols());
  for (int h = 0; h < heads_; ++h) {
    const Index off = h * head_dim_;
    const Matrix& p = probs_[static_cast<std::size_t>(h)];
    const Matrix dctx = dcontext.middleCols(off, head_dim_);
    const Matrix dp = dctx * vm_.middleCols(off, head_dim_).transpose();
    dv.middleCols(off, head_dim_) = p.transpose() * dctx;
    Matrix ds = p.cwiseProduct(dp);
    const Vector row_dot = ds.rowwise().sum();
    ds -= (p.array().colwise() * row_dot.array()).matrix();
    dq.middleCols(off, head_dim_) = (ds * km_.middleCols(off, head_dim_)) * scale;
    dk.middleCols(off, head_dim_) = (ds.transpose() * qm_.middleCols(off, head_dim_)) * scale;
  }
  return q_.backward(dq) + k_.backward(dk) + v_.backward(dv);
}

ParamRefs MultiHeadAttention::params() {
  ParamRefs out;
  for (Linear* l : {&q_, &k_, &v_, &o_}) append(out, l->params());
  return out;
}

// --- layer ----------------------------------------------------------------

EncoderLayer::EncoderLayer(const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : ln1_(name + ".ln1", cfg.model_dim),
      ln2_(name + ".ln2", cfg.model_dim),
      attn_(name + ".attn", cfg.model_dim, cfg.num_heads, rng),
      ff1_(name + ".ff1", cfg.model_dim, cfg.ffn_dim, true, rng),
      ff2_(name + ".ff2", cfg.ffn_dim, cfg.model_dim, true, rng) {}

Matrix EncoderLayer::forward(const Matrix& x, OpCounts& ops) {
  const Matrix x1 = x + attn_.forward(ln1_.forward(x), ops);
  ff_pre_ = ff1_.forward(ln2_.forward(x1));
  ops.linear_flops += static_cast<std::uint64_t>(4 * x.rows() * ff1_.in_dim() * ff1_.out_dim());
  return x1 + ff2_.forward(gelu(ff_pre_));
}

Matrix EncoderLayer::backward(const Matrix& dy) {
  const Matrix dh2 = ff1_.backward(gelu_backward(ff_pre_, ff2_.backward(dy)));
  const Matrix dx1 = dy + ln2_.backward(dh2);
  return dx1 + ln1_.backward(attn_.backward(dx1));
}

ParamRefs EncoderLayer::params() {
  ParamRefs out;
  append(out, ln1_.params());
  append(out, attn_.params());
  append(out, ln2_.params());
  append(out, ff1_.params());
  append(out, ff2_.params());
  return out;
}

// --- encoder --------------------------------------------------------------

TransformerEncoder::TransformerEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  has_projection_ = cfg_.input_dim != cfg_.model_dim;
  if (has_projection_) input_proj_ = Linear("encoder.input_proj", cfg_.input_dim, cfg_.model_dim, true, rng);
  for (int l = 1; l <= cfg_.num_layers; ++l) layers_.emplace_back("encoder.layer" + std::to_string(l), cfg_, rng);
}

EncoderOutput TransformerEncoder::encode(const Matrix& x, const std::vector<int>& extra_taps) {
  if (x.cols() != cfg_.input_dim) throw Error("encoder input dimension mismatch");
  if (!x.allFinite()) throw Error("non-finite features");
  ops_ = {};
  Matrix h = has_projection_ ? input_proj_.forward(x) : x;
  if (has_projection_) ops_.linear_flops += static_cast<std::uint64_t>(2 * x.rows() * x.cols() * cfg_.model_dim);
  if (cfg_.positional_encoding) h += sinusoidal_positions(h.rows(), h.cols());

  EncoderOutput out;
  out.top_layer = cfg_.num_layers;
  auto tapped = [&](int l) {
    return l == cfg_.num_layers || std::find(cfg_.ils_layers.begin(), cfg_.ils_layers.end(), l) != cfg_.ils_layers.end() ||
           std::find(extra_taps.begin(), extra_taps.end(), l) != extra_taps.end();
  };
  for (int l = 1; l <= cfg_.num_layers; ++l) {
    h = layers_[static_cast<std::size_t>(l - 1)].forward(h, ops_);
    if (tapped(l)) out.layers[l] = h;
  }
  recorded_ = true;
  return out;
}

EncoderOutput TransformerEncoder::encode(const FeatureSequence& f, const std::vector<int>& extra_taps) {
  return encode(f.frames, extra_taps);
}

Matrix TransformerEncoder::backward(const std::map<int, Matrix>& upstream) {
  if (!recorded_) throw Error("no recorded forward pass");
  std::optional<Matrix> g;
  for (int l = cfg_.num_layers; l >= 1; --l) {
    if (auto it = upstream.find(l); it != upstream.end()) {
      if (g)
        *g += it->second;
      else
        g = it->second;
    }
    if (g) g = layers_[static_cast<std::size_t>(l - 1)].backward(*g);
  }
  if (!g) {
    Index rows = upstream.empty() ? 0 : upstream.begin()->second.rows();
    return Matrix::Zero(rows, cfg_.input_dim);
  }
  return has_projection_ ? input_proj_.backward(*g) : *g;
}

ParamRefs TransformerEncoder::params() {
  ParamRefs out;
  if (has_projection_) append(out, input_proj_.params());
  for (auto& l : layers_) append(out, l.params());
  return out;
}

}  // namespace sslab
