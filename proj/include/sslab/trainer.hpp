// SPDX-License-Identifier: Apache-2.0
//
// Pre-training and CTC fine-tuning loops. Utterances are processed one at a
// time inside an update; gradients of the summed loss are scaled by the
// update's normalizer, so k micro-batches accumulate to exactly the gradient
// of their concatenation.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslab/checkpoint.hpp"
#include "sslab/ctc.hpp"
#include "sslab/encoder.hpp"
#include "sslab/frontends.hpp"
#include "sslab/labeler.hpp"
#include "sslab/layers.hpp"
#include "sslab/losses.hpp"
#include "sslab/masking.hpp"
#include "sslab/optim.hpp"
#include "sslab/profiler.hpp"
#include "sslab/tokenizer.hpp"

namespace sslab {

enum class FrontendKind { waveform, fbank };
enum class MaskPlacement { pre, post };
enum class GuardPolicy { skip, fail };

FrontendKind parse_frontend_kind(const std::string& s);
MaskPlacement parse_mask_placement(const std::string& s);
GuardPolicy parse_guard_policy(const std::string& s);
const char* to_string(FrontendKind k);
const char* to_string(MaskPlacement p);
const char* to_string(GuardPolicy g);

struct ModelConfig {
  FrontendKind frontend = FrontendKind::fbank;
  int frameshift_ms = 40;
  int fbank_dim = 80;
  int waveform_channels = 24;
  /// 0 means "same as encoder.model_dim".
  int downsampler_channels = 0;
  EncoderConfig encoder;
  LossKind loss = LossKind::ce;
  int num_classes = 100;
  int embed_dim = 256;
  double tau = 0.1;

  void validate() const;
};

struct MaskConfig {
  MaskPlacement placement = MaskPlacement::pre;
  double prob = 0.08;
  int span = 10;
};

/// An utterance ready for training: CMVN'd 10 ms Fbank, the waveform when a
/// waveform front-end needs it, frame labels and/or a transcript.
struct Utterance {
  std::string id;
  Waveform waveform;
  FeatureSequence fbank;
  std::optional<LabelSequence> labels;
  std::string transcript;
  double duration_s = 0.0;
};

Utterance make_utterance(std::string id, Waveform w, const FbankOptions& opts = {});

/// Seconds-budget bucketing: utterances sorted by duration fill batches of at
/// most max_seconds of audio (a longer utterance gets its own batch).
std::vector<std::vector<std::size_t>> bucket_by_duration(std::span<const double> durations, double max_seconds);

/// Front-end, mask embedding and encoder, shared by both loops.
class Backbone {
 public:
  Backbone(const ModelConfig& cfg, Rng& rng);

  Frontend& frontend() { return *frontend_; }
  TransformerEncoder& encoder() { return *encoder_; }
  MaskEmbedding& mask_embedding() { return mask_; }
  const ModelConfig& config() const { return cfg_; }

  Matrix input_of(const Utterance& u) const;
  /// Encoder-rate length before trimming to labels.
  Index frontend_length(const Utterance& u) const;
  /// Fbank frames per encoder frame (1 for the waveform front-end).
  int rate_factor() const;
  ParamRefs params();

 private:
  ModelConfig cfg_;
  std::unique_ptr<Frontend> frontend_;
  MaskEmbedding mask_;
  std::unique_ptr<TransformerEncoder> encoder_;
};

struct StepMetrics {
  long step = 0;
  double loss = 0.0;
  std::optional<double> accuracy;
  double lr = 0.0;
  std::size_t masked_frames = 0;
  std::size_t utterances = 0;
  std::size_t skipped = 0;  // utterances excluded from this update
  bool updated = false;
  std::optional<double> dev_wer;
  StageSeconds times{};
  double backward_seconds = 0.0;
};

/// One NDJSON record {step, loss, acc, lr, component_times}. Timings are
/// omitted when `with_times` is false so deterministic logs compare equal.
std::string metrics_json(const StepMetrics& m, bool with_times);

struct PretrainConfig {
  ModelConfig model;
  MaskConfig mask;
  long steps = 2000;
  LrSchedule schedule = LrSchedule::pretrain(2000, 200, 1e-3);
  double batch_seconds = 4.0;
  int update_freq = 1;
  std::uint64_t seed = 1;
  bool deterministic = false;
  bool profile = true;
  int profile_window = 200;

  void validate() const;
};

class Pretrainer {
 public:
  /// Resamples labels to the model frameshift and checks every utterance's
  /// feature/label alignment before any step runs.
  Pretrainer(PretrainConfig cfg, std::vector<Utterance> data);

  /// One optimizer update over the next update_freq micro-batches.
  StepMetrics step();
  /// One update over explicit micro-batches (indices into the data set).
  StepMetrics update(const std::vector<std::vector<std::size_t>>& micro_batches);
  /// Runs until `steps` updates have been made in total; each record goes to
  /// `metrics` as NDJSON when given.
  std::vector<StepMetrics> run(long steps, std::ostream* metrics = nullptr);

  /// Masked-prediction accuracy of the top layer, masks drawn from `seed`.
  double evaluate(std::span<const std::size_t> indices, std::uint64_t seed);
  double evaluate(std::uint64_t seed);

  Checkpoint checkpoint(const std::string& config_text, std::uint64_t config_hash) const;
  void restore(const Checkpoint& ckpt);

  Backbone& backbone() { return *backbone_; }
  IlsHeads& heads() { return heads_; }
  ParamRefs params();
  Profiler& profiler() { return profiler_; }
  Adam& optimizer() { return adam_; }
  long step_count() const { return step_; }
  const PretrainConfig& config() const { return cfg_; }
  const std::vector<Utterance>& data() const { return data_; }
  const std::vector<std::vector<std::size_t>>& batches() const { return batches_; }

 private:
  struct Prepared {
    std::size_t index;
    MaskPlan plan;        // encoder rate, trimmed
    MaskPlan base_plan;   // fbank rate (pre-masking only)
    Index frontend_frames;
  };
  Prepared prepare(std::size_t index, Rng& rng);
  LossReport forward_backward(const Prepared& p, double weight);
  std::vector<std::vector<std::size_t>> micro_batches_for(long step) const;

  PretrainConfig cfg_;
  std::vector<Utterance> data_;
  std::vector<LabelSequence> labels_;  // at the encoder rate
  std::unique_ptr<Backbone> backbone_;
  IlsHeads heads_;
  Adam adam_;
  Profiler profiler_;
  std::vector<std::vector<std::size_t>> batches_;
  long step_ = 0;
};

struct FinetuneConfig {
  ModelConfig model;
  MaskConfig mask{MaskPlacement::pre, 0.05, 4};
  long steps = 1000;
  long freeze_steps = 0;
  LrSchedule schedule = LrSchedule::finetune(100, 400, 500, 1e-3, 0.05);
  double batch_seconds = 8.0;
  int update_freq = 1;
  GuardPolicy guard = GuardPolicy::skip;
  std::uint64_t seed = 1;
  bool deterministic = false;
  bool profile = false;
  int eval_interval = 100;
  int beam = 1;

  void validate() const;
};

class Finetuner {
 public:
  /// `pretrained` (optional) supplies backbone parameters by name. Guard
  /// violations in `train` are dropped (skip) or raise (fail) here.
  Finetuner(FinetuneConfig cfg, Tokenizer tokenizer, std::vector<Utterance> train, std::vector<Utterance> dev = {},
            const Checkpoint* pretrained = nullptr);

  StepMetrics step();
  StepMetrics update(const std::vector<std::vector<std::size_t>>& micro_batches);
  std::vector<StepMetrics> run(long steps, std::ostream* metrics = nullptr);

  std::vector<int> decode_ids(const Utterance& u, int beam);
  std::string transcribe(const Utterance& u, int beam);
  double evaluate_wer(std::span<const Utterance> utts, int beam);

  Checkpoint checkpoint(const std::string& config_text, std::uint64_t config_hash) const;
  /// Checkpoint of the parameters with the lowest dev WER seen so far.
  std::optional<Checkpoint> best_checkpoint(const std::string& config_text, std::uint64_t config_hash) const;
  void restore(const Checkpoint& ckpt);

  Backbone& backbone() { return *backbone_; }
  Linear& head() { return head_; }
  ParamRefs params();
  ParamRefs backbone_params() { return backbone_->params(); }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  long step_count() const { return step_; }
  std::size_t guard_violations() const { return violations_.size(); }
  const std::vector<std::string>& violating_ids() const { return violations_; }
  std::optional<double> best_dev_wer() const { return best_wer_; }
  Profiler& profiler() { return profiler_; }

 private:
  double forward_backward(std::size_t index, double weight, bool frozen, Rng& rng);
  Matrix logits(const Utterance& u);

  FinetuneConfig cfg_;
  Tokenizer tokenizer_;
  std::vector<Utterance> train_;
  std::vector<Utterance> dev_;
  std::vector<std::vector<int>> targets_;
  std::vector<std::string> violations_;
  std::unique_ptr<Backbone> backbone_;
  Linear head_;
  Adam adam_;
  Profiler profiler_;
  std::vector<std::vector<std::size_t>> batches_;
  long step_ = 0;
  std::optional<double> best_wer_;
  std::vector<std::pair<std::string, Matrix>> best_params_;
};

/// Inference-only CTC model rebuilt from a fine-tuning checkpoint.
class Recognizer {
 public:
  Recognizer(const ModelConfig& model, const Checkpoint& ckpt);

  std::vector<int> decode_ids(const Utterance& u, int beam);
  std::string transcribe(const Utterance& u, int beam);
  const Tokenizer& tokenizer() const { return tokenizer_; }

 private:
  Tokenizer tokenizer_;
  std::unique_ptr<Backbone> backbone_;
  Linear head_;
};

/// CTC length check of one utterance under a model configuration.
LengthCheck utterance_guard(const ModelConfig& model, const Utterance& u, const Tokenizer& tok);

}  // namespace sslab
