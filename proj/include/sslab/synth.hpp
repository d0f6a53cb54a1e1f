// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic "speech": harmonic tone segments stand in for
// phones, fixed tone patterns stand in for words. Every 10 ms frame carries
// its ground-truth tone class (0 = silence).
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslab/signal.hpp"

namespace sslab {

inline constexpr int kToneClasses = 6;
inline const std::array<std::string, 5> kSynthWords{"alpha", "bravo", "charlie", "delta", "echo"};

/// Tone classes (1-based) making up each vocabulary word.
const std::array<int, 3>& word_pattern(std::size_t word);

enum class SynthMode { words, tones };

struct SynthOptions {
  SynthMode mode = SynthMode::words;
  int min_words = 2;
  int max_words = 4;
  double phone_min_s = 0.10;
  double phone_max_s = 0.14;
  double gap_min_s = 0.03;
  double gap_max_s = 0.06;
  double edge_min_s = 0.05;
  double edge_max_s = 0.10;
  /// tones mode: number of classes and segment geometry.
  int tone_classes = 3;
  int min_segments = 4;
  int max_segments = 8;
  double segment_min_s = 0.15;
  double segment_max_s = 0.30;
};

struct SynthUtterance {
  std::string id;
  Waveform waveform;
  std::string transcript;          // empty in tones mode
  std::vector<int> frame_classes;  // one per 10 ms analysis frame
};

std::vector<SynthUtterance> synthesize_corpus(int num_utts, std::uint64_t seed, const SynthOptions& opts = {});

/// Writes wav/<id>.wav, manifest.tsv, transcripts.tsv, segments.lab (10 ms
/// ground-truth classes) and phonemes.lab (the same ids on the 40-symbol
/// phoneme inventory) under `dir`. Manifest paths are relative to
/// `dir`.
void write_corpus(const std::filesystem::path& dir, const std::vector<SynthUtterance>& corpus);

}  // namespace sslab
