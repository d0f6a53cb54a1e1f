// SPDX-License-Identifier: Apache-2.0

#include "sslab/signal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"

namespace sslab {

namespace {

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

std::size_t ms_to_samples(int ms, int sample_rate) {
  return static_cast<std::size_t>(ms) * static_cast<std::size_t>(sample_rate) / 1000;
}

void require_16k(const Waveform& w) {
  if (w.sample_rate != kSampleRate)
    throw Error("unsupported sample rate " + std::to_string(w.sample_rate) + " (expected 16000)");
}

Matrix power_spectrum(const Waveform& w, const FrameOptions& frame) {
  ComplexMatrix spec = stft(w, frame.window_ms, frame.hop_ms, frame.fft_size);
  return spec.cwiseAbs2();
}

Matrix log_mel(const Matrix& power, const Matrix& banks, double floor) {
  Matrix energies = power * banks.transpose();
  return energies.unaryExpr([floor](double e) { return std::log(std::max(e, floor)); });
}

}  // namespace

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::fbank: return "fbank";
    case FeatureKind::mfcc: return "mfcc";
    case FeatureKind::latent: return "latent";
  }
  return "unknown";
}

std::size_t frame_count(std::size_t num_samples, std::size_t window_samples, std::size_t hop_samples) {
  if (hop_samples == 0 || window_samples == 0) throw Error("window and hop must be positive");
  if (num_samples < window_samples) throw Error("input too short");
  return 1 + (num_samples - window_samples) / hop_samples;
}

void fft(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  if (n == 0 || (n & (n - 1)) != 0) throw Error("fft size must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> tw = std::polar(1.0, angle * static_cast<double>(k));
        const std::complex<double> a = data[start + k];
        const std::complex<double> b = data[start + k + len / 2] * tw;
        data[start + k] = a + b;
        data[start + k + len / 2] = a - b;
      }
    }
  }
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length));
  return w;
}

ComplexMatrix stft(const Waveform& w, int window_ms, int hop_ms, int fft_size) {
  if (window_ms < hop_ms) throw Error("window must be at least as long as the hop");
  const std::size_t window = ms_to_samples(window_ms, w.sample_rate);
  const std::size_t hop = ms_to_samples(hop_ms, w.sample_rate);
  if (window > static_cast<std::size_t>(fft_size)) throw Error("fft size smaller than analysis window");

  const std::size_t frames = frame_count(w.samples.size(), window, hop);
  const std::size_t bins = static_cast<std::size_t>(fft_size) / 2 + 1;
  const std::vector<double> taper = hann_window(window);

  ComplexMatrix out(static_cast<Index>(frames), static_cast<Index>(bins));
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(fft_size));
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const double* src = w.samples.data() + t * hop;
    for (std::size_t i = 0; i < window; ++i) buf[i] = src[i] * taper[i];
    fft(buf);
    for (std::size_t k = 0; k < bins; ++k) out(static_cast<Index>(t), static_cast<Index>(k)) = buf[k];
  }
  return out;
}

Matrix mel_filterbank(int num_bins, int fft_size, int sample_rate, double low_hz, double high_hz) {
  const int num_fft_bins = fft_size / 2 + 1;
  const double mel_low = hz_to_mel(low_hz);
  const double mel_high = hz_to_mel(high_hz);
  const double step = (mel_high - mel_low) / (num_bins + 1);

  Matrix banks = Matrix::Zero(num_bins, num_fft_bins);
  for (int b = 0; b < num_bins; ++b) {
    const double left = mel_low + b * step;
    const double center = left + step;
    const double right = center + step;
    for (int k = 0; k < num_fft_bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / fft_size);
      if (mel > left && mel < right)
        banks(b, k) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
    }
  }
  return banks;
}

FeatureSequence fbank(const Waveform& w, const FbankOptions& opts) {
  require_16k(w);
  const Matrix banks =
      mel_filterbank(opts.num_mel_bins, opts.frame.fft_size, w.sample_rate, opts.low_freq_hz, opts.high_freq_hz);
  return {log_mel(power_spectrum(w, opts.frame), banks, opts.energy_floor), opts.frame.hop_ms, FeatureKind::fbank};
}

Matrix dct_ii(const Matrix& rows, int num_ceps) {
  const Index n = rows.cols();
  if (num_ceps > n) throw Error("more cepstra requested than input bins");
  Matrix basis(n, num_ceps);
  for (Index i = 0; i < n; ++i) {
    for (int k = 0; k < num_ceps; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      basis(i, k) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
  }
  return rows * basis;
}

Matrix deltas(const Matrix& x, int window) {
  const Index t_len = x.rows();
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;

  Matrix out = Matrix::Zero(t_len, x.cols());
  for (Index t = 0; t < t_len; ++t) {
    for (int n = 1; n <= window; ++n) {
      const Index ahead = std::min<Index>(t + n, t_len - 1);
      const Index behind = std::max<Index>(t - n, 0);
      out.row(t) += n * (x.row(ahead) - x.row(behind));
    }
  }
  return out / denom;
}

FeatureSequence mfcc39(const Waveform& w, const MfccOptions& opts) {
  require_16k(w);
  const Matrix banks =
      mel_filterbank(opts.num_mel_bins, opts.frame.fft_size, w.sample_rate, 20.0, w.sample_rate / 2.0);
  const Matrix ceps = dct_ii(log_mel(power_spectrum(w, opts.frame), banks, opts.energy_floor), opts.num_ceps);
  const Matrix d1 = deltas(ceps, opts.delta_window);
  const Matrix d2 = deltas(d1, opts.delta_window);

  Matrix out(ceps.rows(), 3 * opts.num_ceps);
  out << ceps, d1, d2;
  return {std::move(out), opts.frame.hop_ms, FeatureKind::mfcc};
}

FeatureSequence cmvn(const FeatureSequence& f) {
  const Index t_len = f.num_frames();
  if (t_len < 2) throw Error("too few frames to normalize");
  const RowVector mean = f.frames.colwise().mean();
  Matrix centered = f.frames.rowwise() - mean;
  RowVector var = centered.colwise().squaredNorm() / static_cast<double>(t_len);
  RowVector inv_std = var.unaryExpr([](double v) { return 1.0 / std::sqrt(std::max(v, 1e-8)); });
  FeatureSequence out = f;
  out.frames = centered.array().rowwise() * inv_std.array();
  return out;
}

// --- WAV ------------------------------------------------------------------

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());

  std::array<char, 4> tag{};
  in.read(tag.data(), 4);
  if (!in || std::string(tag.data(), 4) != "RIFF") throw Error(path.string() + ": not a RIFF file");
  io::get<std::uint32_t>(in);
  in.read(tag.data(), 4);
  if (!in || std::string(tag.data(), 4) != "WAVE") throw Error(path.string() + ": not a WAVE file");

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  while (in.read(tag.data(), 4)) {
    const auto size = io::get<std::uint32_t>(in);
    const std::string id(tag.data(), 4);
    if (id == "fmt ") {
      format = io::get<std::uint16_t>(in);
      channels = io::get<std::uint16_t>(in);
      rate = io::get<std::uint32_t>(in);
      io::get<std::uint32_t>(in);
      io::get<std::uint16_t>(in);
      bits = io::get<std::uint16_t>(in);
      in.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(path.string() + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw Error(path.string() + ": expected 16-bit PCM");
      if (channels != 1) throw Error(path.string() + ": expected mono audio, got " + std::to_string(channels) + " channels");
      if (rate != kSampleRate)
        throw Error(path.string() + ": unsupported sample rate " + std::to_string(rate) + " (expected 16000)");
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(size / 2);
      std::vector<std::int16_t> pcm(size / 2);
      in.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(pcm.size() * 2));
      if (!in) throw Error(path.string() + ": truncated data chunk");
      std::transform(pcm.begin(), pcm.end(), w.samples.begin(), [](std::int16_t s) { return s / 32768.0; });
      return w;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw Error(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  io::put<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  io::put<std::uint32_t>(out, 16);
  io::put<std::uint16_t>(out, 1);
  io::put<std::uint16_t>(out, 1);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  io::put<std::uint16_t>(out, 2);
  io::put<std::uint16_t>(out, 16);
  out.write("data", 4);
  io::put<std::uint32_t>(out, data_bytes);
  for (double s : w.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    io::put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(clipped * 32768.0)));
  }
}

// --- feature container ----------------------------------------------------

namespace {
constexpr char kFeatureMagic[4] = {'S', 'S', 'L', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

void write_features(const std::filesystem::path& path, const FeatureSequence& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  io::put<std::uint32_t>(out, kFeatureVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.num_frames()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.dim()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.frameshift_ms));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.kind));
  for (Index t = 0; t < f.num_frames(); ++t)
    for (Index d = 0; d < f.dim(); ++d) io::put<float>(out, static_cast<float>(f.frames(t, d)));
  if (!out) throw Error("write failed: " + path.string());
}

FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kFeatureMagic)) throw Error(path.string() + ": bad feature file magic");
  if (io::get<std::uint32_t>(in) != kFeatureVersion) throw Error(path.string() + ": unsupported feature file version");
  const auto t_len = io::get<std::uint32_t>(in);
  const auto dim = io::get<std::uint32_t>(in);
  FeatureSequence f;
  f.frameshift_ms = static_cast<int>(io::get<std::uint32_t>(in));
  const auto kind = io::get<std::uint32_t>(in);
  if (kind > 2) throw Error(path.string() + ": unknown feature kind");
  f.kind = static_cast<FeatureKind>(kind);
  f.frames.resize(t_len, dim);
  std::vector<float> row(dim);
  for (std::uint32_t t = 0; t < t_len; ++t) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(dim * sizeof(float)));
    if (!in) throw Error(path.string() + ": truncated feature data");
    for (std::uint32_t d = 0; d < dim; ++d) f.frames(t, d) = row[d];
  }
  return f;
}

}  // namespace sslab
