// SPDX-License-Identifier: Apache-2.0

#include "sslab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sslab/ctc.hpp"

namespace sslab {

namespace {

constexpr std::uint64_t kBatchOrderStream = 0xB47C0DE;

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  return perm;
}

std::vector<std::vector<std::size_t>> schedule_micro_batches(const std::vector<std::vector<std::size_t>>& batches,
                                                             std::uint64_t seed, long step, int update_freq) {
  std::vector<std::vector<std::size_t>> out;
  const auto nb = static_cast<long>(batches.size());
  for (int j = 0; j < update_freq; ++j) {
    const long m = step * update_freq + j;
    const auto perm = permutation(batches.size(), derive_seed(seed, kBatchOrderStream, static_cast<std::uint64_t>(m / nb)));
    out.push_back(batches[perm[static_cast<std::size_t>(m % nb)]]);
  }
  return out;
}

LabelSequence head_of(const LabelSequence& l, std::size_t n) {
  LabelSequence out = l;
  out.ids.resize(n);
  return out;
}

Matrix pad_rows(const Matrix& top, Index rows) {
  if (top.rows() == rows) return top;
  Matrix out = Matrix::Zero(rows, top.cols());
  out.topRows(top.rows()) = top;
  return out;
}

FeatureSequence latent(Matrix frames, int frameshift_ms) {
  FeatureSequence f;
  f.frames = std::move(frames);
  f.frameshift_ms = frameshift_ms;
  f.kind = FeatureKind::latent;
  return f;
}

Index encoder_frames(const ModelConfig& cfg, const Utterance& u) {
  if (cfg.frontend == FrontendKind::waveform) {
    auto n = static_cast<Index>(u.waveform.samples.size());
    for (const auto& l : WaveformEncoderConfig::standard(cfg.waveform_channels).layers)
      n = Conv1d::output_length(n, l.kernel, l.stride);
    return n;
  }
  DownsamplerConfig dc;
  dc.target_frameshift_ms = cfg.frameshift_ms;
  Index n = u.fbank.num_frames();
  for (int i = 0; i < dc.num_layers(); ++i) n = Conv1d::output_length(n, dc.kernel, 2);
  return n;
}

}  // namespace

// --- enums ----------------------------------------------------------------

FrontendKind parse_frontend_kind(const std::string& s) {
  if (s == "waveform") return FrontendKind::waveform;
  if (s == "fbank") return FrontendKind::fbank;
  throw ConfigError("model.frontend must be 'waveform' or 'fbank', got '" + s + "'");
}

MaskPlacement parse_mask_placement(const std::string& s) {
  if (s == "pre") return MaskPlacement::pre;
  if (s == "post") return MaskPlacement::post;
  throw ConfigError("mask.placement must be 'pre' or 'post', got '" + s + "'");
}

GuardPolicy parse_guard_policy(const std::string& s) {
  if (s == "skip") return GuardPolicy::skip;
  if (s == "fail") return GuardPolicy::fail;
  throw ConfigError("finetune.guard_policy must be 'skip' or 'fail', got '" + s + "'");
}

const char* to_string(FrontendKind k) { return k == FrontendKind::waveform ? "waveform" : "fbank"; }
const char* to_string(MaskPlacement p) { return p == MaskPlacement::pre ? "pre" : "post"; }
const char* to_string(GuardPolicy g) { return g == GuardPolicy::skip ? "skip" : "fail"; }

// --- configuration ----------------------------------------------------------

void ModelConfig::validate() const {
  if (frontend == FrontendKind::waveform && frameshift_ms != 20)
    throw ConfigError("model.frameshift_ms must be 20 with model.frontend = waveform");
  if (frontend == FrontendKind::fbank && frameshift_ms != 20 && frameshift_ms != 40 && frameshift_ms != 80)
    throw ConfigError("model.frameshift_ms must be 20, 40 or 80 with model.frontend = fbank");
  if (fbank_dim < 1 || waveform_channels < 1 || downsampler_channels < 0)
    throw ConfigError("model.fbank_dim / model.waveform_channels / model.downsampler_channels must be positive");
  if (num_classes < 2) throw ConfigError("loss.num_classes must be at least 2");
  if (loss == LossKind::hubert && embed_dim < 1) throw ConfigError("loss.embed_dim must be positive");
  if (!(tau > 0.0)) throw ConfigError("loss.tau must be positive");
  EncoderConfig enc = encoder;
  enc.input_dim = std::max(1, enc.input_dim);
  enc.validate();
}

void PretrainConfig::validate() const {
  model.validate();
  if (!(mask.prob > 0.0))
    throw ConfigError("mask.prob = 0 leaves every pre-training step with an empty mask");
  if (mask.prob > 1.0) throw ConfigError("mask.prob must be at most 1");
  if (mask.span < 1) throw ConfigError("mask.span must be at least 1");
  if (mask.placement == MaskPlacement::pre && model.frontend != FrontendKind::fbank)
    throw ConfigError("mask.placement = pre needs model.frontend = fbank");
  if (steps < 0) throw ConfigError("pretrain.steps must be non-negative");
  if (!(batch_seconds > 0.0)) throw ConfigError("pretrain.batch_seconds must be positive");
  if (update_freq < 1) throw ConfigError("pretrain.update_freq must be at least 1");
  if (profile_window < 1) throw ConfigError("profile.window must be at least 1");
  schedule.validate();
}

void FinetuneConfig::validate() const {
  model.validate();
  if (mask.prob < 0.0 || mask.prob > 1.0) throw ConfigError("finetune.mask_prob must lie in [0, 1]");
  if (mask.span < 1) throw ConfigError("finetune.mask_span must be at least 1");
  if (mask.placement == MaskPlacement::pre && model.frontend != FrontendKind::fbank)
    throw ConfigError("mask.placement = pre needs model.frontend = fbank");
  if (steps < 0 || freeze_steps < 0) throw ConfigError("finetune.steps / finetune.freeze_steps must be non-negative");
  if (!(batch_seconds > 0.0)) throw ConfigError("finetune.batch_seconds must be positive");
  if (update_freq < 1) throw ConfigError("finetune.update_freq must be at least 1");
  if (eval_interval < 0) throw ConfigError("finetune.eval_interval must be non-negative");
  if (beam < 1) throw ConfigError("decode.beam must be at least 1");
  schedule.validate();
}

// --- data -------------------------------------------------------------------

Utterance make_utterance(std::string id, Waveform w, const FbankOptions& opts) {
  Utterance u;
  u.id = std::move(id);
  u.duration_s = w.duration_s();
  u.fbank = cmvn(fbank(w, opts));
  u.waveform = std::move(w);
  return u;
}

std::vector<std::vector<std::size_t>> bucket_by_duration(std::span<const double> durations, double max_seconds) {
  if (!(max_seconds > 0.0)) throw ConfigError("batch seconds must be positive");
  std::vector<std::size_t> order(durations.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return durations[a] < durations[b]; });
  std::vector<std::vector<std::size_t>> batches;
  double filled = 0.0;
  for (std::size_t i : order) {
    if (batches.empty() || filled + durations[i] > max_seconds) {
      batches.emplace_back();
      filled = 0.0;
    }
    batches.back().push_back(i);
    filled += durations[i];
  }
  return batches;
}

std::string metrics_json(const StepMetrics& m, bool with_times) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["acc"] = m.accuracy ? nlohmann::ordered_json(*m.accuracy) : nlohmann::ordered_json(nullptr);
  j["lr"] = m.lr;
  j["masked_frames"] = m.masked_frames;
  j["updated"] = m.updated;
  if (m.skipped > 0) j["skipped"] = m.skipped;
  if (m.dev_wer) j["dev_wer"] = *m.dev_wer;
  if (with_times) {
    auto& t = j["component_times"];
    for (std::size_t i = 0; i < kNumStages; ++i) t[to_string(kStages[i])] = m.times[i];
    t["backward"] = m.backward_seconds;
  }
  return j.dump();
}

// --- backbone ---------------------------------------------------------------

Backbone::Backbone(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.frontend == FrontendKind::waveform) {
    frontend_ = std::make_unique<WaveformEncoder>(WaveformEncoderConfig::standard(cfg_.waveform_channels), rng);
  } else {
    DownsamplerConfig dc;
    dc.target_frameshift_ms = cfg_.frameshift_ms;
    dc.input_dim = cfg_.fbank_dim;
    dc.channels = cfg_.downsampler_channels > 0 ? cfg_.downsampler_channels : cfg_.encoder.model_dim;
    frontend_ = std::make_unique<Downsampler>(dc, rng);
  }
  mask_ = MaskEmbedding(frontend_->output_dim(), rng);
  cfg_.encoder.input_dim = static_cast<int>(frontend_->output_dim());
  encoder_ = std::make_unique<TransformerEncoder>(cfg_.encoder, rng);
}

Matrix Backbone::input_of(const Utterance& u) const {
  if (cfg_.frontend == FrontendKind::waveform) {
    if (u.waveform.samples.empty()) throw Error("utterance " + u.id + " has no waveform");
    return Eigen::Map<const Matrix>(u.waveform.samples.data(), static_cast<Index>(u.waveform.samples.size()), 1);
  }
  if (u.fbank.frameshift_ms != 10) throw Error("downsampler expects base-rate Fbank");
  if (u.fbank.dim() != cfg_.fbank_dim)
    throw Error("utterance " + u.id + " has " + std::to_string(u.fbank.dim()) + "-dim Fbank, model expects " +
                std::to_string(cfg_.fbank_dim));
  return u.fbank.frames;
}

Index Backbone::frontend_length(const Utterance& u) const { return encoder_frames(cfg_, u); }

int Backbone::rate_factor() const { return cfg_.frontend == FrontendKind::waveform ? 1 : cfg_.frameshift_ms / 10; }

ParamRefs Backbone::params() {
  ParamRefs out = frontend_->params();
  out.push_back(&mask_.param());
  append(out, encoder_->params());
  return out;
}

// --- pre-training -----------------------------------------------------------

Pretrainer::Pretrainer(PretrainConfig cfg, std::vector<Utterance> data)
    : cfg_(std::move(cfg)), data_(std::move(data)), profiler_(cfg_.profile_window, cfg_.profile) {
  cfg_.validate();
  if (data_.empty()) throw Error("pre-training needs at least one utterance");

  Rng init(cfg_.seed);
  backbone_ = std::make_unique<Backbone>(cfg_.model, init);
  const ModelConfig& m = backbone_->config();
  heads_.top = make_head(m.loss, "head.top", m.encoder.model_dim, m.num_classes, m.embed_dim, m.tau, init);
  for (int layer : m.encoder.ils_layers)
    heads_.taps[layer] = make_head(m.loss, "head.layer" + std::to_string(layer), m.encoder.model_dim, m.num_classes,
                                   m.embed_dim, m.tau, init);

  std::vector<double> durations;
  for (const Utterance& u : data_) {
    if (!u.labels) throw Error("utterance " + u.id + " has no frame labels");
    const LabelSequence& l = *u.labels;
    if (l.num_classes > m.num_classes)
      throw ConfigError("labels of " + u.id + " have " + std::to_string(l.num_classes) +
                        " classes but loss.num_classes = " + std::to_string(m.num_classes));
    if (l.frameshift_ms <= 0 || m.frameshift_ms % l.frameshift_ms != 0)
      throw ConfigError("label frameshift " + std::to_string(l.frameshift_ms) + " ms cannot be resampled to " +
                        std::to_string(m.frameshift_ms) + " ms");
    LabelSequence resampled = resample_labels(l, m.frameshift_ms / l.frameshift_ms);
    try {
      aligned_length(backbone_->frontend_length(u), static_cast<Index>(resampled.size()));
    } catch (const Error& e) {
      throw Error("utterance " + u.id + ": " + e.what());
    }
    labels_.push_back(std::move(resampled));
    durations.push_back(u.duration_s);
  }
  batches_ = bucket_by_duration(durations, cfg_.batch_seconds);
}

ParamRefs Pretrainer::params() {
  ParamRefs out = backbone_->params();
  append(out, heads_.params());
  return out;
}

std::vector<std::vector<std::size_t>> Pretrainer::micro_batches_for(long step) const {
  return schedule_micro_batches(batches_, cfg_.seed, step, cfg_.update_freq);
}

Pretrainer::Prepared Pretrainer::prepare(std::size_t index, Rng& rng) {
  const Utterance& u = data_[index];
  Prepared p;
  p.index = index;
  p.frontend_frames = backbone_->frontend_length(u);
  const auto t = static_cast<std::size_t>(aligned_length(p.frontend_frames, static_cast<Index>(labels_[index].size())));
  if (cfg_.mask.placement == MaskPlacement::post) {
    p.plan = sample_mask_plan(static_cast<std::size_t>(p.frontend_frames), cfg_.mask.prob, cfg_.mask.span, rng)
                 .truncated(t);
  } else {
    p.base_plan = sample_mask_plan(static_cast<std::size_t>(u.fbank.num_frames()), cfg_.mask.prob, cfg_.mask.span, rng);
    p.plan = project_mask(p.base_plan, backbone_->rate_factor()).truncated(t);
  }
  return p;
}

LossReport Pretrainer::forward_backward(const Prepared& p, double weight) {
  const Utterance& u = data_[p.index];
  Frontend& fe = backbone_->frontend();
  TransformerEncoder& enc = backbone_->encoder();
  const auto t = static_cast<Index>(p.plan.size());
  const LabelSequence labels = head_of(labels_[p.index], p.plan.size());
  const bool post = cfg_.mask.placement == MaskPlacement::post;

  Matrix x;
  if (post) {
    const Matrix input = backbone_->input_of(u);
    Matrix feats = profiler_.scoped(Stage::feature_extraction, [&] { return fe.forward(input); });
    x = apply_post_mask(latent(feats.topRows(t), fe.frameshift_ms()), p.plan, backbone_->mask_embedding()).frames;
  } else {
    const Matrix masked = apply_pre_mask(u.fbank, p.base_plan, 0.0).frames;
    Matrix feats = profiler_.scoped(Stage::feature_extraction, [&] { return fe.forward(masked); });
    x = feats.topRows(t);
  }
  const EncoderOutput out = profiler_.scoped(Stage::transformer_encoding, [&] { return enc.encode(x); });
  LossReport report = profiler_.scoped(Stage::loss_calculation, [&] { return ils_loss(out, p.plan, labels, heads_); });

  profiler_.backward([&] {
    Matrix dx = enc.backward(ils_backward(out, heads_, weight));
    if (post) dx = post_mask_backward(dx, p.plan, backbone_->mask_embedding());
    fe.backward(pad_rows(dx, p.frontend_frames));
  });
  return report;
}

StepMetrics Pretrainer::update(const std::vector<std::vector<std::size_t>>& micro_batches) {
  profiler_.begin_step();
  const long next = step_ + 1;
  const ParamRefs ps = params();
  zero_grads(ps);

  std::vector<Prepared> prepared;
  std::size_t total_masked = 0;
  for (const auto& batch : micro_batches) {
    for (std::size_t index : batch) {
      Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(next), index));
      prepared.push_back(prepare(index, rng));
      total_masked += prepared.back().plan.count();
    }
  }

  StepMetrics m;
  m.step = next;
  m.lr = lr_at(next, cfg_.schedule);
  m.utterances = prepared.size();
  m.masked_frames = total_masked;
  if (total_masked > 0) {
    const double weight = 1.0 / static_cast<double>(total_masked);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const Prepared& p : prepared) {
      if (!p.plan.any()) {
        ++m.skipped;
        continue;
      }
      const LossReport r = forward_backward(p, weight);
      loss_sum += r.loss_sum;
      correct += r.correct;
    }
    m.loss = loss_sum / static_cast<double>(total_masked);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(total_masked);
    adam_.step(ps, m.lr);
    m.updated = true;
  } else {
    m.skipped = prepared.size();
  }
  step_ = next;
  profiler_.end_step();
  if (profiler_.enabled()) {
    m.times = profiler_.last_step();
    m.backward_seconds = profiler_.last_backward();
  }
  return m;
}

StepMetrics Pretrainer::step() { return update(micro_batches_for(step_)); }

std::vector<StepMetrics> Pretrainer::run(long steps, std::ostream* metrics) {
  std::vector<StepMetrics> out;
  while (step_ < steps) {
    out.push_back(step());
    if (metrics) *metrics << metrics_json(out.back(), !cfg_.deterministic && cfg_.profile) << '\n';
  }
  return out;
}

double Pretrainer::evaluate(std::span<const std::size_t> indices, std::uint64_t seed) {
  std::size_t hits = 0, total = 0;
  for (std::size_t index : indices) {
    Rng rng(derive_seed(seed, 0, index));
    const Prepared p = prepare(index, rng);
    if (!p.plan.any()) continue;
    const Utterance& u = data_[index];
    const auto t = static_cast<Index>(p.plan.size());
    Matrix x;
    if (cfg_.mask.placement == MaskPlacement::post) {
      Matrix feats = backbone_->frontend().forward(backbone_->input_of(u));
      x = apply_post_mask(latent(feats.topRows(t), backbone_->frontend().frameshift_ms()), p.plan,
                          backbone_->mask_embedding())
              .frames;
    } else {
      x = backbone_->frontend().forward(apply_pre_mask(u.fbank, p.base_plan, 0.0).frames).topRows(t);
    }
    const Matrix scores = heads_.top->scores(backbone_->encoder().encode(x).top());
    const auto acc = masked_accuracy(scores, p.plan, head_of(labels_[index], p.plan.size()));
    const std::size_t n = p.plan.count();
    hits += static_cast<std::size_t>(std::llround(*acc * static_cast<double>(n)));
    total += n;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double Pretrainer::evaluate(std::uint64_t seed) {
  std::vector<std::size_t> all(data_.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(all, seed);
}

Checkpoint Pretrainer::checkpoint(const std::string& config_text, std::uint64_t config_hash) const {
  Checkpoint c;
  c.kind = "pretrain";
  c.step = step_;
  c.config_hash = config_hash;
  c.config_text = config_text;
  c.capture(const_cast<Pretrainer*>(this)->params());
  std::ostringstream os;
  adam_.save(os);
  c.optimizer = os.str();
  c.rng = std::to_string(cfg_.seed);
  return c;
}

void Pretrainer::restore(const Checkpoint& ckpt) {
  ckpt.restore(params());
  if (!ckpt.optimizer.empty()) {
    std::istringstream is(ckpt.optimizer);
    adam_.load(is);
  }
  step_ = ckpt.step;
}

// --- fine-tuning ------------------------------------------------------------

LengthCheck utterance_guard(const ModelConfig& model, const Utterance& u, const Tokenizer& tok) {
  const std::vector<int> target = tok.encode(u.transcript);
  return ctc_length_guard(static_cast<std::size_t>(encoder_frames(model, u)), target);
}

Finetuner::Finetuner(FinetuneConfig cfg, Tokenizer tokenizer, std::vector<Utterance> train, std::vector<Utterance> dev,
                     const Checkpoint* pretrained)
    : cfg_(std::move(cfg)), tokenizer_(std::move(tokenizer)), dev_(std::move(dev)), profiler_(200, cfg_.profile) {
  cfg_.validate();
  Rng init(cfg_.seed);
  backbone_ = std::make_unique<Backbone>(cfg_.model, init);
  head_ = Linear("ctc_head", cfg_.model.encoder.model_dim, tokenizer_.vocab_size() + 1, true, init);
  if (pretrained) pretrained->restore(backbone_->params());

  for (Utterance& u : train) {
    if (split_words(u.transcript).empty()) throw Error("utterance " + u.id + " has an empty transcript");
    std::vector<int> target = tokenizer_.encode(u.transcript);
    const LengthCheck g = ctc_length_guard(static_cast<std::size_t>(backbone_->frontend_length(u)), target);
    if (!g.ok) {
      if (cfg_.guard == GuardPolicy::fail)
        throw Error("CTC length guard violated for " + u.id + ": " + std::to_string(g.available) +
                    " frames, target needs " + std::to_string(g.required));
      violations_.push_back(u.id);
      continue;
    }
    targets_.push_back(std::move(target));
    train_.push_back(std::move(u));
  }
  if (!violations_.empty())
    std::cerr << "warning: skipping " << violations_.size() << " utterance(s) that violate the CTC length guard\n";
  if (train_.empty()) throw Error("no trainable utterances left after the CTC length guard");

  std::vector<double> durations;
  for (const Utterance& u : train_) durations.push_back(u.duration_s);
  batches_ = bucket_by_duration(durations, cfg_.batch_seconds);
}

ParamRefs Finetuner::params() {
  ParamRefs out = backbone_->params();
  append(out, head_.params());
  return out;
}

double Finetuner::forward_backward(std::size_t index, double weight, bool frozen, Rng& rng) {
  const Utterance& u = train_[index];
  Frontend& fe = backbone_->frontend();
  TransformerEncoder& enc = backbone_->encoder();
  const Index frames = backbone_->frontend_length(u);
  const bool post = cfg_.mask.placement == MaskPlacement::post;
  const bool masking = cfg_.mask.prob > 0.0;

  MaskPlan plan;
  Matrix x;
  if (post || !masking) {
    const Matrix input = backbone_->input_of(u);
    x = profiler_.scoped(Stage::feature_extraction, [&] { return fe.forward(input); });
    if (masking) {
      plan = sample_mask_plan(static_cast<std::size_t>(frames), cfg_.mask.prob, cfg_.mask.span, rng);
      x = apply_post_mask(latent(std::move(x), fe.frameshift_ms()), plan, backbone_->mask_embedding()).frames;
    }
  } else {
    const MaskPlan base =
        sample_mask_plan(static_cast<std::size_t>(u.fbank.num_frames()), cfg_.mask.prob, cfg_.mask.span, rng);
    const Matrix masked = apply_pre_mask(u.fbank, base, 0.0).frames;
    x = profiler_.scoped(Stage::feature_extraction, [&] { return fe.forward(masked); });
  }
  const EncoderOutput out = profiler_.scoped(Stage::transformer_encoding, [&] { return enc.encode(x); });
  const CtcResult res = profiler_.scoped(Stage::loss_calculation, [&] {
    return ctc_loss(head_.forward(out.top()), targets_[index], Tokenizer::kBlank);
  });

  profiler_.backward([&] {
    Matrix d_top = head_.backward(res.grad * weight);
    if (frozen) return;
    Matrix dx = enc.backward({{out.top_layer, std::move(d_top)}});
    if (post && masking) dx = post_mask_backward(dx, plan, backbone_->mask_embedding());
    fe.backward(dx);
  });
  return res.loss;
}

StepMetrics Finetuner::update(const std::vector<std::vector<std::size_t>>& micro_batches) {
  profiler_.begin_step();
  const long next = step_ + 1;
  const bool frozen = step_ < cfg_.freeze_steps;
  ParamRefs ps = params();
  zero_grads(ps);

  std::size_t n = 0;
  for (const auto& b : micro_batches) n += b.size();
  StepMetrics m;
  m.step = next;
  m.lr = lr_at(next, cfg_.schedule);
  m.utterances = n;
  if (n > 0) {
    const double weight = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (const auto& b : micro_batches) {
      for (std::size_t index : b) {
        Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(next), index));
        loss += forward_backward(index, weight, frozen, rng);
      }
    }
    m.loss = loss * weight;
    adam_.step(frozen ? head_.params() : ps, m.lr);
    m.updated = true;
  }
  step_ = next;
  profiler_.end_step();
  if (profiler_.enabled()) {
    m.times = profiler_.last_step();
    m.backward_seconds = profiler_.last_backward();
  }

  if (cfg_.eval_interval > 0 && !dev_.empty() && step_ % cfg_.eval_interval == 0) {
    m.dev_wer = evaluate_wer(dev_, cfg_.beam);
    if (!best_wer_ || *m.dev_wer < *best_wer_) {
      best_wer_ = m.dev_wer;
      best_params_.clear();
      for (const Param* p : params()) best_params_.emplace_back(p->name, p->value);
    }
  }
  return m;
}

StepMetrics Finetuner::step() { return update(schedule_micro_batches(batches_, cfg_.seed, step_, cfg_.update_freq)); }

std::vector<StepMetrics> Finetuner::run(long steps, std::ostream* metrics) {
  std::vector<StepMetrics> out;
  while (step_ < steps) {
    out.push_back(step());
    if (metrics) *metrics << metrics_json(out.back(), !cfg_.deterministic && cfg_.profile) << '\n';
  }
  return out;
}

Matrix Finetuner::logits(const Utterance& u) {
  const Matrix feats = backbone_->frontend().forward(backbone_->input_of(u));
  return head_.apply(backbone_->encoder().encode(feats).top());
}

std::vector<int> Finetuner::decode_ids(const Utterance& u, int beam) {
  return viterbi_decode(logits(u), beam, Tokenizer::kBlank);
}

std::string Finetuner::transcribe(const Utterance& u, int beam) { return tokenizer_.decode(decode_ids(u, beam)); }

double Finetuner::evaluate_wer(std::span<const Utterance> utts, int beam) {
  std::size_t errors = 0, words = 0;
  for (const Utterance& u : utts) {
    const auto ref = split_words(u.transcript);
    if (ref.empty()) throw Error("empty reference");
    const auto hyp = split_words(transcribe(u, beam));
    errors += edit_distance(hyp, ref);
    words += ref.size();
  }
  if (words == 0) throw Error("empty reference");
  return static_cast<double>(errors) / static_cast<double>(words);
}

Checkpoint Finetuner::checkpoint(const std::string& config_text, std::uint64_t config_hash) const {
  Checkpoint c;
  c.kind = "finetune";
  c.step = step_;
  c.config_hash = config_hash;
  c.config_text = config_text;
  c.capture(const_cast<Finetuner*>(this)->params());
  std::ostringstream os;
  adam_.save(os);
  c.optimizer = os.str();
  c.rng = std::to_string(cfg_.seed);
  c.tokenizer = tokenizer_.to_text();
  return c;
}

std::optional<Checkpoint> Finetuner::best_checkpoint(const std::string& config_text, std::uint64_t config_hash) const {
  if (best_params_.empty()) return std::nullopt;
  Checkpoint c = checkpoint(config_text, config_hash);
  c.params = best_params_;
  return c;
}

void Finetuner::restore(const Checkpoint& ckpt) {
  ckpt.restore(params());
  if (!ckpt.optimizer.empty()) {
    std::istringstream is(ckpt.optimizer);
    adam_.load(is);
  }
  step_ = ckpt.step;
}

Recognizer::Recognizer(const ModelConfig& model, const Checkpoint& ckpt) {
  if (ckpt.tokenizer.empty()) throw Error("checkpoint has no tokenizer; decode needs a fine-tuning checkpoint");
  tokenizer_ = Tokenizer::from_text(ckpt.tokenizer, "checkpoint tokenizer");
  Rng init(0);
  backbone_ = std::make_unique<Backbone>(model, init);
  head_ = Linear("ctc_head", model.encoder.model_dim, tokenizer_.vocab_size() + 1, true, init);
  ParamRefs refs = backbone_->params();
  append(refs, head_.params());
  ckpt.restore(refs);
}

std::vector<int> Recognizer::decode_ids(const Utterance& u, int beam) {
  const Matrix feats = backbone_->frontend().forward(backbone_->input_of(u));
  return viterbi_decode(head_.apply(backbone_->encoder().encode(feats).top()), beam, Tokenizer::kBlank);
}

std::string Recognizer::transcribe(const Utterance& u, int beam) { return tokenizer_.decode(decode_ids(u, beam)); }

}  // namespace sslab
