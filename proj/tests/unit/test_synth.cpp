// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "../support/fixtures.hpp"
#include "sslab/config.hpp"
#include "sslab/labeler.hpp"
#include "sslab/synth.hpp"

using namespace sslab;
using namespace sslab::test;

TEST_CASE("corpora are reproducible and seed-dependent") {
  const auto a = synthesize_corpus(5, 7), b = synthesize_corpus(5, 7), c = synthesize_corpus(5, 8);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].waveform.samples == b[i].waveform.samples);
    CHECK(a[i].transcript == b[i].transcript);
  }
  bool differs = false;
  for (std::size_t i = 0; i < 5; ++i) differs |= a[i].waveform.samples != c[i].waveform.samples;
  CHECK(differs);
}

TEST_CASE("words mode: transcripts use the five-word vocabulary, frame classes cover the audio") {
  const std::set<std::string> vocab(kSynthWords.begin(), kSynthWords.end());
  for (const auto& u : synthesize_corpus(20, 1)) {
    const auto words = split_words(u.transcript);
    CHECK(words.size() >= 2);
    CHECK(words.size() <= 4);
    for (const auto& w : words) CHECK(vocab.count(w) == 1);
    CHECK(u.waveform.sample_rate == kSampleRate);
    CHECK(u.frame_classes.size() == frame_count(u.waveform.samples.size(), 400, 160));
    CHECK(u.frame_classes.front() == 0);
    CHECK(u.frame_classes.back() == 0);
    for (int c : u.frame_classes) {
      CHECK(c >= 0);
      CHECK(c <= kToneClasses);
    }
  }
}

TEST_CASE("tones mode has exactly the configured classes and no transcript") {
  SynthOptions opts;
  opts.mode = SynthMode::tones;
  for (const auto& u : synthesize_corpus(10, 2, opts)) {
    CHECK(u.transcript.empty());
    std::set<int> classes(u.frame_classes.begin(), u.frame_classes.end());
    // Classes are 1-based and tone corpora carry no silence.
    CHECK(*classes.begin() >= 1);
    CHECK(*classes.rbegin() <= opts.tone_classes);
  }
}

TEST_CASE("write_corpus produces a readable manifest, transcripts and label files") {
  TempDir dir("synth");
  const auto corpus = synthesize_corpus(4, 3);
  write_corpus(dir.path(), corpus);
  const auto m = read_manifest(dir / "manifest.tsv");
  REQUIRE(m.size() == 4);
  const Waveform w = read_wav(m[0].audio);
  CHECK(w.samples.size() == corpus[0].waveform.samples.size());
  CHECK(m[0].duration_s == doctest::Approx(static_cast<double>(w.samples.size()) / kSampleRate).epsilon(1e-3));
  CHECK(read_transcripts(dir / "transcripts.tsv").at(corpus[2].id) == corpus[2].transcript);
  const LabelSet seg = read_label_file(dir / "segments.lab");
  CHECK(seg.at(corpus[1].id).ids == corpus[1].frame_classes);
  const LabelSet ph = load_phoneme_labels(dir / "phonemes.lab");
  CHECK(ph.at(corpus[1].id).num_classes == 40);
  CHECK(ph.at(corpus[1].id).size() == corpus[1].frame_classes.size());
}
