// SPDX-License-Identifier: Apache-2.0
//
// Deterministic DSP front-end: framing, STFT, log-mel filterbank, 39-dim
// MFCC and per-utterance mean/variance normalization.
#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sslab/common.hpp"

namespace sslab {

constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class FeatureKind : std::uint32_t { fbank = 0, mfcc = 1, latent = 2 };

const char* to_string(FeatureKind kind);

/// Time-major feature matrix (T x D) annotated with its frame rate.
struct FeatureSequence {
  Matrix frames;
  int frameshift_ms = 10;
  FeatureKind kind = FeatureKind::fbank;

  Index num_frames() const { return frames.rows(); }
  Index dim() const { return frames.cols(); }
};

using ComplexMatrix =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FrameOptions {
  int window_ms = 25;
  int hop_ms = 10;
  int fft_size = 512;
};

struct FbankOptions {
  FrameOptions frame;
  int num_mel_bins = 80;
  double low_freq_hz = 20.0;
  double high_freq_hz = 8000.0;
  double energy_floor = 1e-10;
};

struct MfccOptions {
  FrameOptions frame;
  int num_mel_bins = 40;
  int num_ceps = 13;
  int delta_window = 2;
  double energy_floor = 1e-10;
};

/// 1 + floor((len - window) / hop); throws "input too short" when len < window.
std::size_t frame_count(std::size_t num_samples, std::size_t window_samples, std::size_t hop_samples);

/// In-place iterative radix-2 FFT. Size must be a power of two.
void fft(std::vector<std::complex<double>>& data);

/// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t length);

/// Short-time Fourier transform, T x (fft_size/2 + 1). Frames are Hann
/// windowed and zero-padded to fft_size.
ComplexMatrix stft(const Waveform& w, int window_ms, int hop_ms, int fft_size = 512);

/// Triangular HTK-mel filters, num_bins x (fft_size/2 + 1).
Matrix mel_filterbank(int num_bins, int fft_size, int sample_rate, double low_hz, double high_hz);

/// Log mel energies at 10 ms; D = num_mel_bins.
FeatureSequence fbank(const Waveform& w, const FbankOptions& opts = {});

/// Orthonormal type-II DCT of each row, keeping the first num_ceps outputs.
Matrix dct_ii(const Matrix& rows, int num_ceps);

/// Regression deltas over +-window frames with edge frames replicated.
Matrix deltas(const Matrix& x, int window);

/// 13 cepstra + 13 deltas + 13 delta-deltas.
FeatureSequence mfcc39(const Waveform& w, const MfccOptions& opts = {});

/// Per-utterance mean/variance normalization. Variances are clamped at 1e-8.
FeatureSequence cmvn(const FeatureSequence& f);

// --- file formats --------------------------------------------------------

/// Reads a mono 16-bit PCM WAV at 16 kHz.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Binary container: "SSLF", u32 version, u32 T, u32 D, u32 frameshift_ms,
/// u32 kind, then T*D little-endian float32 values in row-major order.
void write_features(const std::filesystem::path& path, const FeatureSequence& f);
FeatureSequence read_features(const std::filesystem::path& path);

}  // namespace sslab
