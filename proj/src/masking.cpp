// SPDX-License-Identifier: Apache-2.0

#include "sslab/masking.hpp"

#include <algorithm>
#include <numeric>

namespace sslab {

namespace {

std::vector<MaskSpan> runs_of(const std::vector<std::uint8_t>& masked) {
  std::vector<MaskSpan> spans;
  for (std::size_t t = 0; t < masked.size();) {
    if (!masked[t]) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end < masked.size() && masked[end]) ++end;
    spans.push_back({t, end - t});
    t = end;
  }
  return spans;
}

}  // namespace

std::size_t MaskPlan::count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

MaskPlan MaskPlan::truncated(std::size_t n) const {
  MaskPlan out = *this;
  out.masked.resize(std::min(n, masked.size()));
  out.spans.clear();
  for (const auto& s : spans) {
    if (s.start >= out.masked.size()) continue;
    out.spans.push_back({s.start, std::min(s.length, out.masked.size() - s.start)});
  }
  return out;
}

MaskPlan sample_mask_plan(std::size_t num_frames, double span_start_prob, int span_len, Rng& rng) {
  if (span_start_prob < 0.0 || span_start_prob > 1.0) throw Error("span start probability must be in [0, 1]");
  if (span_len < 1) throw Error("span length must be at least 1");
  MaskPlan plan;
  plan.span_start_prob = span_start_prob;
  plan.span_len = span_len;
  plan.masked.assign(num_frames, 0);
  const auto len = static_cast<std::size_t>(span_len);
  for (std::size_t t = 0; t < num_frames; ++t) {
    if (!rng.bernoulli(span_start_prob)) continue;
    const std::size_t clipped = std::min(len, num_frames - t);
    plan.spans.push_back({t, clipped});
    std::fill_n(plan.masked.begin() + static_cast<std::ptrdiff_t>(t), clipped, std::uint8_t{1});
  }
  return plan;
}

MaskPlan mask_from_indices(std::size_t num_frames, const std::vector<std::size_t>& indices) {
  MaskPlan plan;
  plan.masked.assign(num_frames, 0);
  for (std::size_t i : indices) {
    if (i >= num_frames) throw Error("mask index out of range");
    plan.masked[i] = 1;
  }
  plan.spans = runs_of(plan.masked);
  plan.span_len = 1;
  return plan;
}

MaskEmbedding::MaskEmbedding(Index dim, Rng& rng) : vec_("mask_embedding", 1, dim) {
  for (Index i = 0; i < dim; ++i) vec_.value(0, i) = rng.uniform();
}

FeatureSequence apply_post_mask(const FeatureSequence& f, const MaskPlan& plan, const MaskEmbedding& m) {
  if (plan.size() != static_cast<std::size_t>(f.num_frames())) throw Error("mask plan length mismatch");
  if (m.dim() != f.dim()) throw Error("mask embedding dimension mismatch");
  FeatureSequence out = f;
  for (std::size_t t = 0; t < plan.size(); ++t)
    if (plan.is_masked(t)) out.frames.row(static_cast<Index>(t)) = m.param().value.row(0);
  return out;
}

Matrix post_mask_backward(const Matrix& upstream, const MaskPlan& plan, MaskEmbedding& m) {
  if (plan.size() != static_cast<std::size_t>(upstream.rows())) throw Error("mask plan length mismatch");
  if (m.dim() != upstream.cols()) throw Error("mask embedding dimension mismatch");
  Matrix d_input = upstream;
  for (std::size_t t = 0; t < plan.size(); ++t) {
    if (!plan.is_masked(t)) continue;
    const auto row = static_cast<Index>(t);
    m.param().grad.row(0) += upstream.row(row);
    d_input.row(row).setZero();
  }
  return d_input;
}

FeatureSequence apply_pre_mask(const FeatureSequence& f, const MaskPlan& plan, double fill) {
  if (plan.size() != static_cast<std::size_t>(f.num_frames())) throw Error("mask plan length mismatch");
  FeatureSequence out = f;
  for (std::size_t t = 0; t < plan.size(); ++t)
    if (plan.is_masked(t)) out.frames.row(static_cast<Index>(t)).setConstant(fill);
  return out;
}

MaskPlan project_mask(const MaskPlan& plan, int factor) {
  if (factor < 1) throw Error("projection factor must be positive");
  const auto f = static_cast<std::size_t>(factor);
  MaskPlan out;
  out.span_start_prob = plan.span_start_prob;
  out.span_len = plan.span_len;
  out.masked.assign((plan.size() + f - 1) / f, 0);
  for (std::size_t t = 0; t < plan.size(); ++t)
    if (plan.is_masked(t)) out.masked[t / f] = 1;
  out.spans = runs_of(out.masked);
  return out;
}

}  // namespace sslab
