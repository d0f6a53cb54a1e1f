// SPDX-License-Identifier: Apache-2.0
//
// Span masking. Post-masking replaces latent frames with a learnable
// embedding after the front-end; pre-masking fills base-rate spectrogram
// frames before the downsampler, and project_mask lifts the plan to the
// encoder rate.
#pragma once

#include <cstdint>
#include <vector>

#include "sslab/common.hpp"
#include "sslab/rng.hpp"
#include "sslab/signal.hpp"

namespace sslab {

struct MaskSpan {
  std::size_t start = 0;
  std::size_t length = 0;
};

struct MaskPlan {
  std::vector<std::uint8_t> masked;
  std::vector<MaskSpan> spans;
  double span_start_prob = 0.0;
  int span_len = 0;

  std::size_t size() const { return masked.size(); }
  std::size_t count() const;
  bool any() const { return count() > 0; }
  bool is_masked(std::size_t t) const { return masked[t] != 0; }
  double coverage() const { return masked.empty() ? 0.0 : static_cast<double>(count()) / masked.size(); }

  /// Plan restricted to the first n frames.
  MaskPlan truncated(std::size_t n) const;
};

/// Every index starts a span with probability span_start_prob; spans of
/// span_len frames may overlap and are clipped at the sequence end.
MaskPlan sample_mask_plan(std::size_t num_frames, double span_start_prob, int span_len, Rng& rng);

/// Plan from an explicit set of masked indices (tests, label projection).
MaskPlan mask_from_indices(std::size_t num_frames, const std::vector<std::size_t>& indices);

class MaskEmbedding {
 public:
  MaskEmbedding() = default;
  MaskEmbedding(Index dim, Rng& rng);

  Param& param() { return vec_; }
  const Param& param() const { return vec_; }
  Index dim() const { return vec_.value.cols(); }

 private:
  Param vec_;
};

/// Masked rows become the embedding; unmasked rows are copied bit-exactly.
FeatureSequence apply_post_mask(const FeatureSequence& f, const MaskPlan& plan, const MaskEmbedding& m);

/// Backward of apply_post_mask: adds the masked rows of `upstream` into the
/// embedding gradient and returns the gradient for the unmasked input rows.
Matrix post_mask_backward(const Matrix& upstream, const MaskPlan& plan, MaskEmbedding& m);

/// Masked base-rate frames are replaced by `fill` (0 = the CMVN mean).
FeatureSequence apply_pre_mask(const FeatureSequence& f, const MaskPlan& plan, double fill = 0.0);

/// Target frame i is masked iff any of source frames [i*factor, (i+1)*factor)
/// is masked. Output length is ceil(T / factor).
MaskPlan project_mask(const MaskPlan& plan, int factor);

}  // namespace sslab
