// SPDX-License-Identifier: Apache-2.0
//
// Masked-prediction objectives. Both heads score only masked frames.
//
//   codebook head:  P(c | t) = softmax_c( cos(A o_t, e_c) / tau )
//   linear head:    P(c | t) = softmax_c( (A o_t)_c / tau )
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sslab/encoder.hpp"
#include "sslab/labeler.hpp"
#include "sslab/masking.hpp"

namespace sslab {

enum class LossKind { hubert, ce };

LossKind parse_loss_kind(const std::string& s);
const char* to_string(LossKind kind);

struct LossReport {
  double loss = 0.0;      // mean over masked frames (top + taps when aggregated)
  double loss_sum = 0.0;  // sum over masked frames
  std::size_t masked_frames = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;
  std::map<int, double> tap_losses;  // per-layer mean loss when ILS is active
};

/// A prediction head over one hidden-state sequence. forward() records what
/// backward() needs; backward(weight) accumulates gradients of
/// weight * loss_sum and returns the gradient for the hidden states.
class PredictionHead {
 public:
  virtual ~PredictionHead() = default;

  virtual LossReport forward(const Matrix& hidden, const MaskPlan& plan, const LabelSequence& labels) = 0;
  virtual Matrix backward(double weight) = 0;
  /// Class scores for every frame (T x C), for accuracy and inspection.
  virtual Matrix scores(const Matrix& hidden) const = 0;
  virtual ParamRefs params() = 0;
  virtual int num_classes() const = 0;
};

/// Cosine-similarity codebook head. Targets are materialized per masked
/// frame as [e_label; e_0 .. e_{C-1}] and every pair's norms are evaluated,
/// mirroring how the reference trainer scores positives against negatives.
class HubertHead final : public PredictionHead {
 public:
  HubertHead(const std::string& name, int model_dim, int num_classes, int embed_dim, double tau, Rng& rng);

  LossReport forward(const Matrix& hidden, const MaskPlan& plan, const LabelSequence& labels) override;
  Matrix backward(double weight) override;
  Matrix scores(const Matrix& hidden) const override;
  ParamRefs params() override { return {&proj_, &embeddings_}; }
  int num_classes() const override { return static_cast<int>(embeddings_.value.rows()); }

  Param& projection() { return proj_; }
  Param& embeddings() { return embeddings_; }
  double tau() const { return tau_; }

 private:
  Param proj_;        // model_dim x K
  Param embeddings_;  // C x K
  double tau_;

  struct FrameRecord {
    Index t;
    int label;
    RowVector projected;
    Matrix targets;  // (C+1) x K
    RowVector prob;  // C+1, softmax over [positive, negatives without label]
  };
  std::vector<FrameRecord> frames_;
  Matrix hidden_;
};

/// Linear projection to class logits scaled by 1/tau, softmax cross-entropy.
class CeHead final : public PredictionHead {
 public:
  CeHead(const std::string& name, int model_dim, int num_classes, double tau, Rng& rng);

  LossReport forward(const Matrix& hidden, const MaskPlan& plan, const LabelSequence& labels) override;
  Matrix backward(double weight) override;
  Matrix scores(const Matrix& hidden) const override;
  ParamRefs params() override { return {&proj_}; }
  int num_classes() const override { return static_cast<int>(proj_.value.cols()); }

  Param& projection() { return proj_; }
  double tau() const { return tau_; }

 private:
  Param proj_;  // model_dim x C
  double tau_;

  std::vector<Index> rows_;
  std::vector<int> labels_;
  Matrix masked_hidden_;
  Matrix probs_;
  Index hidden_rows_ = 0;
};

std::unique_ptr<PredictionHead> make_head(LossKind kind, const std::string& name, int model_dim, int num_classes,
                                          int embed_dim, double tau, Rng& rng);

/// Cosine similarity with each norm clamped at 1e-8.
double cosine_similarity(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b);

/// Fraction of masked frames whose arg-max score equals the label; empty
/// when nothing is masked.
std::optional<double> masked_accuracy(const Matrix& scores, const MaskPlan& plan, const LabelSequence& labels);

/// Top-layer head plus one separate head per ILS tap.
struct IlsHeads {
  std::unique_ptr<PredictionHead> top;
  std::map<int, std::unique_ptr<PredictionHead>> taps;

  ParamRefs params();
};

/// Unweighted sum of the top loss and every tap loss. `loss` and `loss_sum`
/// are totals; masked_frames and accuracy refer to the top layer.
LossReport ils_loss(const EncoderOutput& outputs, const MaskPlan& plan, const LabelSequence& labels, IlsHeads& heads);

/// Gradients of weight * (summed ILS loss) for each tapped layer.
std::map<int, Matrix> ils_backward(const EncoderOutput& outputs, IlsHeads& heads, double weight);

}  // namespace sslab
