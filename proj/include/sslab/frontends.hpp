// SPDX-License-Identifier: Apache-2.0
//
// Interchangeable front-ends: a strided convolutional encoder over raw 16 kHz
// audio (20 ms output rate), and a conv+GLU downsampler over 10 ms Fbank
// frames (20/40/80 ms output rate).
#pragma once

#include <memory>
#include <vector>

#include "sslab/layers.hpp"
#include "sslab/signal.hpp"

namespace sslab {

struct ConvLayerSpec {
  int channels = 512;
  int kernel = 1;
  int stride = 1;
};

struct WaveformEncoderConfig {
  std::vector<ConvLayerSpec> layers;

  /// Kernels 10,3,3,3,3,2,2 and strides 5,2,2,2,2,2,2: 320 samples = 20 ms.
  static WaveformEncoderConfig standard(int channels = 512);

  int output_dim() const { return layers.empty() ? 1 : layers.back().channels; }
  int total_stride() const;
  void validate() const;
};

struct DownsamplerConfig {
  int target_frameshift_ms = 40;
  int input_dim = 80;
  int channels = 64;
  int kernel = 2;

  /// One stride-2 conv+GLU stage per factor of two above 10 ms.
  int num_layers() const;
  void validate() const;
};

/// Common surface used by the training loops. Inputs are time-major: a
/// waveform is passed as an (N x 1) matrix.
class Frontend {
 public:
  virtual ~Frontend() = default;

  virtual Matrix forward(const Matrix& input) = 0;
  /// Accumulates parameter gradients; returns d(input).
  virtual Matrix backward(const Matrix& d_output) = 0;
  virtual ParamRefs params() = 0;
  virtual Index output_length(Index input_length) const = 0;
  virtual Index output_dim() const = 0;
  virtual int frameshift_ms() const = 0;
  virtual int input_frameshift_ms() const = 0;
};

class WaveformEncoder final : public Frontend {
 public:
  WaveformEncoder(const WaveformEncoderConfig& cfg, Rng& rng);

  /// Conv -> GELU for every layer; output at 20 ms.
  FeatureSequence encode(const Waveform& w);

  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& d_output) override;
  ParamRefs params() override;
  Index output_length(Index num_samples) const override;
  Index output_dim() const override { return cfg_.output_dim(); }
  int frameshift_ms() const override { return cfg_.total_stride() * 1000 / kSampleRate; }
  int input_frameshift_ms() const override { return 0; }

  std::vector<Conv1d>& convs() { return convs_; }

 private:
  WaveformEncoderConfig cfg_;
  std::vector<Conv1d> convs_;
  std::vector<Matrix> pre_activations_;
};

class Downsampler final : public Frontend {
 public:
  Downsampler(const DownsamplerConfig& cfg, Rng& rng);

  /// Requires base-rate (10 ms) Fbank input.
  FeatureSequence downsample(const FeatureSequence& f);

  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& d_output) override;
  ParamRefs params() override;
  Index output_length(Index num_frames) const override;
  Index output_dim() const override { return cfg_.channels; }
  int frameshift_ms() const override { return cfg_.target_frameshift_ms; }
  int input_frameshift_ms() const override { return 10; }

  int factor() const { return cfg_.target_frameshift_ms / 10; }
  std::vector<Conv1d>& convs() { return convs_; }

 private:
  DownsamplerConfig cfg_;
  std::vector<Conv1d> convs_;
  std::vector<Glu> glus_;
};

/// Trim rule between an encoder-rate feature stream and its label stream:
/// both are cut to the shorter length; a gap of more than two frames or an
/// empty result is an error.
Index aligned_length(Index feature_frames, Index label_frames);

}  // namespace sslab
