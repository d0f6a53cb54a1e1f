// SPDX-License-Identifier: Apache-2.0

#include "sslab/frontends.hpp"

#include <cstdlib>

namespace sslab {

WaveformEncoderConfig WaveformEncoderConfig::standard(int channels) {
  WaveformEncoderConfig cfg;
  const int kernels[] = {10, 3, 3, 3, 3, 2, 2};
  const int strides[] = {5, 2, 2, 2, 2, 2, 2};
  for (int i = 0; i < 7; ++i) cfg.layers.push_back({channels, kernels[i], strides[i]});
  return cfg;
}

int WaveformEncoderConfig::total_stride() const {
  int s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

void WaveformEncoderConfig::validate() const {
  if (layers.empty()) throw ConfigError("waveform encoder needs at least one layer");
  for (const auto& l : layers)
    if (l.channels < 1 || l.kernel < 1 || l.stride < 1) throw ConfigError("waveform encoder layer specs must be positive");
}

int DownsamplerConfig::num_layers() const {
  int n = 0;
  for (int f = target_frameshift_ms / 10; f > 1; f /= 2) ++n;
  return n;
}

void DownsamplerConfig::validate() const {
  if (target_frameshift_ms != 20 && target_frameshift_ms != 40 && target_frameshift_ms != 80)
    throw ConfigError("downsampler target frameshift must be 20, 40 or 80 ms");
  if (input_dim < 1 || channels < 1 || kernel < 2) throw ConfigError("downsampler dims must be positive, kernel >= 2");
}

// --- waveform encoder -----------------------------------------------------

WaveformEncoder::WaveformEncoder(const WaveformEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  Index in = 1;
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    const auto& l = cfg_.layers[i];
    convs_.emplace_back("frontend.conv" + std::to_string(i), in, l.channels, l.kernel, l.stride, rng);
    in = l.channels;
  }
}

Index WaveformEncoder::output_length(Index num_samples) const {
  Index t = num_samples;
  for (const auto& c : convs_) t = c.output_length(t);
  return t;
}

Matrix WaveformEncoder::forward(const Matrix& input) {
  if (output_length(input.rows()) < 1) throw Error("input too short for receptive field");
  pre_activations_.clear();
  Matrix h = input;
  for (auto& conv : convs_) {
    pre_activations_.push_back(conv.forward(h));
    h = gelu(pre_activations_.back());
  }
  return h;
}

Matrix WaveformEncoder::backward(const Matrix& d_output) {
  if (pre_activations_.size() != convs_.size()) throw Error("no recorded forward pass");
  Matrix g = d_output;
  for (std::size_t i = convs_.size(); i-- > 0;) {
    g = gelu_backward(pre_activations_[i], g);
    g = convs_[i].backward(g);
  }
  return g;
}

ParamRefs WaveformEncoder::params() {
  ParamRefs out;
  for (auto& c : convs_) append(out, c.params());
  return out;
}

FeatureSequence WaveformEncoder::encode(const Waveform& w) {
  if (w.sample_rate != kSampleRate) throw Error("waveform encoder expects 16 kHz audio");
  const Matrix input = Eigen::Map<const Matrix>(w.samples.data(), static_cast<Index>(w.samples.size()), 1);
  return {forward(input), frameshift_ms(), FeatureKind::latent};
}

// --- downsampler ----------------------------------------------------------

Downsampler::Downsampler(const DownsamplerConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  Index in = cfg_.input_dim;
  for (int i = 0; i < cfg_.num_layers(); ++i) {
    convs_.emplace_back("frontend.down" + std::to_string(i), in, 2 * cfg_.channels, cfg_.kernel, 2, rng);
    glus_.emplace_back();
    in = cfg_.channels;
  }
}

Index Downsampler::output_length(Index num_frames) const {
  Index t = num_frames;
  for (const auto& c : convs_) t = c.output_length(t);
  return t;
}

Matrix Downsampler::forward(const Matrix& input) {
  if (output_length(input.rows()) < 1) throw Error("input too short for receptive field");
  Matrix h = input;
  for (std::size_t i = 0; i < convs_.size(); ++i) h = glus_[i].forward(convs_[i].forward(h));
  return h;
}

Matrix Downsampler::backward(const Matrix& d_output) {
  Matrix g = d_output;
  for (std::size_t i = convs_.size(); i-- > 0;) g = convs_[i].backward(glus_[i].backward(g));
  return g;
}

ParamRefs Downsampler::params() {
  ParamRefs out;
  for (auto& c : convs_) append(out, c.params());
  return out;
}

FeatureSequence Downsampler::downsample(const FeatureSequence& f) {
  if (f.frameshift_ms != 10) throw Error("downsampler expects base-rate Fbank");
  return {forward(f.frames), cfg_.target_frameshift_ms, FeatureKind::latent};
}

Index aligned_length(Index feature_frames, Index label_frames) {
  if (std::abs(feature_frames - label_frames) > 2)
    throw Error("feature/label length mismatch: " + std::to_string(feature_frames) + " vs " +
                std::to_string(label_frames) + " frames");
  const Index n = std::min(feature_frames, label_frames);
  if (n < 1) throw Error("empty feature or label sequence");
  return n;
}

}  // namespace sslab
