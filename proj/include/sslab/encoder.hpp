// SPDX-License-Identifier: Apache-2.0
//
// Pre-LN Transformer encoder with hand-written backward and per-layer taps
// for intermediate layer supervision.
#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sslab/layers.hpp"
#include "sslab/signal.hpp"

namespace sslab {

struct EncoderConfig {
  int num_layers = 4;
  int model_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  /// Front-end output width; an input projection is added when it differs.
  int input_dim = 64;
  /// 1-based layer indices whose outputs feed auxiliary losses.
  std::vector<int> ils_layers;
  bool positional_encoding = true;

  void validate() const;
};

/// Hidden states keyed by 1-based layer index. The top layer is always present.
struct EncoderOutput {
  std::map<int, Matrix> layers;
  int top_layer = 0;

  const Matrix& top() const { return layers.at(top_layer); }
  const Matrix& at(int layer) const { return layers.at(layer); }
};

/// Multiply-add counts of the most recent forward pass.
struct OpCounts {
  std::uint64_t attention_flops = 0;  // QK^T and PV products
  std::uint64_t linear_flops = 0;     // projections and feed-forward
};

Matrix sinusoidal_positions(Index length, Index dim);

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int dim, int heads, Rng& rng);

  Matrix forward(const Matrix& x, OpCounts& ops);
  Matrix backward(const Matrix& dy);
  ParamRefs params();

  /// Softmax weights of the last forward, one T x T matrix per head.
  const std::vector<Matrix>& attention() const { return probs_; }

 private:
  int heads_ = 1;
  int head_dim_ = 1;
  Linear q_, k_, v_, o_;
  Matrix qm_, km_, vm_;
  std::vector<Matrix> probs_;
};

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const std::string& name, const EncoderConfig& cfg, Rng& rng);

  Matrix forward(const Matrix& x, OpCounts& ops);
  Matrix backward(const Matrix& dy);
  ParamRefs params();
  const MultiHeadAttention& attention() const { return attn_; }

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  Linear ff1_, ff2_;
  Matrix ff_pre_;
};

class TransformerEncoder {
 public:
  TransformerEncoder(const EncoderConfig& cfg, Rng& rng);

  /// Returns the top layer, every configured ILS layer and any extra taps.
  EncoderOutput encode(const Matrix& x, const std::vector<int>& extra_taps = {});
  EncoderOutput encode(const FeatureSequence& f, const std::vector<int>& extra_taps = {});

  /// `upstream` maps tapped layers to dLoss/dHidden. Layers without an entry
  /// receive no external gradient. Returns dLoss/dInput.
  Matrix backward(const std::map<int, Matrix>& upstream);

  ParamRefs params();
  const EncoderConfig& config() const { return cfg_; }
  const OpCounts& op_counts() const { return ops_; }
  const EncoderLayer& layer(int index) const { return layers_.at(static_cast<std::size_t>(index - 1)); }

 private:
  EncoderConfig cfg_;
  bool has_projection_ = false;
  Linear input_proj_;
  std::vector<EncoderLayer> layers_;
  OpCounts ops_;
  bool recorded_ = false;
};

}  // namespace sslab
