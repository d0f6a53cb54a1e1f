// SPDX-License-Identifier: Apache-2.0

#include "sslab/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "sslab/labeler.hpp"
#include "sslab/rng.hpp"

namespace sslab {

namespace {

constexpr std::array<double, kToneClasses> kToneHz{220.0, 340.0, 520.0, 780.0, 1150.0, 1700.0};
constexpr std::array<std::array<int, 3>, 5> kPatterns{{{1, 2, 3}, {4, 5, 1}, {2, 6, 4}, {3, 1, 6}, {5, 3, 2}}};
constexpr double kNoiseFloor = 0.003;
constexpr std::size_t kWindow = 400;  // 25 ms
constexpr std::size_t kHop = 160;     // 10 ms

std::size_t samples_for(double seconds) { return static_cast<std::size_t>(std::lround(seconds * kSampleRate)); }

struct Builder {
  Rng& rng;
  std::vector<double> samples;
  std::vector<int> classes;  // per sample

  void silence(double seconds) {
    const std::size_t n = samples_for(seconds);
    for (std::size_t i = 0; i < n; ++i) {
      samples.push_back(kNoiseFloor * rng.normal());
      classes.push_back(0);
    }
  }

  void tone(int cls, double seconds) {
    const std::size_t n = samples_for(seconds);
    const double f0 = kToneHz[static_cast<std::size_t>(cls - 1)] * rng.uniform(0.97, 1.03);
    const double amp = rng.uniform(0.3, 0.6);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const std::size_t ramp = std::min<std::size_t>(samples_for(0.01), n / 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / kSampleRate;
      const double w = 2.0 * std::numbers::pi * f0 * t + phase;
      double env = 1.0;
      if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(ramp));
      if (n - 1 - i < ramp)
        env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n - 1 - i) / static_cast<double>(ramp));
      const double v = std::sin(w) + 0.5 * std::sin(2.0 * w) + 0.25 * std::sin(3.0 * w);
      samples.push_back(amp * env * v / 1.75 + kNoiseFloor * rng.normal());
      classes.push_back(cls);
    }
  }

  std::vector<int> frame_classes() const {
    std::vector<int> out;
    for (std::size_t start = 0; start + kWindow <= samples.size(); start += kHop)
      out.push_back(classes[start + kWindow / 2]);
    return out;
  }
};

}  // namespace

const std::array<int, 3>& word_pattern(std::size_t word) { return kPatterns.at(word); }

std::vector<SynthUtterance> synthesize_corpus(int num_utts, std::uint64_t seed, const SynthOptions& opts) {
  if (num_utts < 1) throw Error("synthetic corpus needs at least one utterance");
  if (opts.mode == SynthMode::tones && (opts.tone_classes < 1 || opts.tone_classes > kToneClasses))
    throw Error("tone_classes must lie in [1, 6]");
  std::vector<SynthUtterance> corpus;
  for (int u = 0; u < num_utts; ++u) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(u)));
    Builder b{rng, {}, {}};
    SynthUtterance out;
    char id[32];
    std::snprintf(id, sizeof id, "synth%05d", u);
    out.id = id;

    const bool words = opts.mode == SynthMode::words;
    // Tone corpora carry only their tone classes, so no silent edges.
    if (words) b.silence(rng.uniform(opts.edge_min_s, opts.edge_max_s));
    if (words) {
      const int words = rng.uniform_int(opts.min_words, opts.max_words);
      for (int w = 0; w < words; ++w) {
        const std::size_t word = rng.index(kSynthWords.size());
        if (w > 0) {
          out.transcript += ' ';
          b.silence(rng.uniform(opts.gap_min_s, opts.gap_max_s));
        }
        out.transcript += kSynthWords[word];
        for (int cls : kPatterns[word]) b.tone(cls, rng.uniform(opts.phone_min_s, opts.phone_max_s));
      }
    } else {
      const int segments = rng.uniform_int(opts.min_segments, opts.max_segments);
      int prev = 0;
      for (int s = 0; s < segments; ++s) {
        int cls = rng.uniform_int(1, opts.tone_classes);
        if (opts.tone_classes > 1)
          while (cls == prev) cls = rng.uniform_int(1, opts.tone_classes);
        b.tone(cls, rng.uniform(opts.segment_min_s, opts.segment_max_s));
        prev = cls;
      }
    }
    if (words) b.silence(rng.uniform(opts.edge_min_s, opts.edge_max_s));

    out.frame_classes = b.frame_classes();
    out.waveform.samples = std::move(b.samples);
    corpus.push_back(std::move(out));
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<SynthUtterance>& corpus) {
  std::filesystem::create_directories(dir / "wav");
  std::ofstream manifest(dir / "manifest.tsv");
  std::ofstream transcripts(dir / "transcripts.tsv");
  if (!manifest || !transcripts) throw Error("cannot write corpus files under " + dir.string());
  LabelSet segments;
  for (const SynthUtterance& u : corpus) {
    const std::string rel = "wav/" + u.id + ".wav";
    write_wav(dir / rel, u.waveform);
    char dur[32];
    std::snprintf(dur, sizeof dur, "%.4f", u.waveform.duration_s());
    manifest << u.id << '\t' << rel << '\t' << dur << '\n';
    if (!u.transcript.empty()) transcripts << u.id << '\t' << u.transcript << '\n';
    LabelSequence l;
    l.ids = u.frame_classes;
    l.frameshift_ms = 10;
    l.num_classes = kToneClasses + 1;
    segments.emplace(u.id, std::move(l));
  }
  write_label_file(dir / "segments.lab", segments);
  for (auto& [id, l] : segments) l.num_classes = kPhonemeClasses;
  write_label_file(dir / "phonemes.lab", segments);
}

}  // namespace sslab
