// SPDX-License-Identifier: Apache-2.0
//
// CTC loss (log-space forward-backward), the frames-vs-targets length guard,
// greedy / prefix-beam decoding and word error rate.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "sslab/common.hpp"

namespace sslab {

struct LengthCheck {
  bool ok = true;
  std::size_t required = 0;   // U + number of adjacent repeats
  std::size_t available = 0;  // T
};

/// A target of U tokens with r adjacent repeats needs T >= U + r frames.
LengthCheck ctc_length_guard(std::size_t num_frames, std::span<const int> target);

struct CtcResult {
  double loss = 0.0;  // -log p(target | logits)
  Matrix grad;        // d loss / d logits, same shape as logits
};

/// `logits` is T x (V+1) with the blank at column `blank`. Throws when the
/// length guard is violated.
CtcResult ctc_loss(const Matrix& logits, std::span<const int> target, int blank = 0);

/// log p(target | logits); -inf when the target cannot be aligned.
double ctc_log_prob(const Matrix& logits, std::span<const int> target, int blank = 0);

/// Row-wise log-softmax.
Matrix log_softmax(const Matrix& logits);

/// Removes repeats, then blanks.
std::vector<int> ctc_collapse(std::span<const int> path, int blank = 0);

/// Frame arg-max followed by collapse.
std::vector<int> greedy_decode(const Matrix& logits, int blank = 0);

/// beam == 1 is the greedy best path; beam > 1 runs a prefix beam search
/// without a language model, keeping the `beam` most probable prefixes.
std::vector<int> viterbi_decode(const Matrix& logits, int beam, int blank = 0);

/// Levenshtein distance between two token sequences.
std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

/// Word-level edit distance divided by the reference length.
double wer(std::span<const std::string> hypothesis, std::span<const std::string> reference);

}  // namespace sslab
