// SPDX-License-Identifier: Apache-2.0

#include "sslab/losses.hpp"

#include <cmath>
#include <limits>

namespace sslab {

namespace {

constexpr double kNormFloor = 1e-8;

void check_aligned(const Matrix& hidden, const MaskPlan& plan, const LabelSequence& labels) {
  if (plan.size() != static_cast<std::size_t>(hidden.rows()) || labels.size() != plan.size())
    throw Error("hidden states, mask plan and labels must share one length");
  if (!plan.any()) throw Error("empty mask");
}

int argmax_lowest(const Eigen::Ref<const RowVector>& row) {
  int best = 0;
  for (Index c = 1; c < row.size(); ++c)
    if (row(c) > row(best)) best = static_cast<int>(c);
  return best;
}

void check_label(int label, int num_classes) {
  if (label < 0 || label >= num_classes) throw Error("label id out of range for prediction head");
}

}  // namespace

LossKind parse_loss_kind(const std::string& s) {
  if (s == "hubert") return LossKind::hubert;
  if (s == "ce") return LossKind::ce;
  throw ConfigError("loss.kind must be 'hubert' or 'ce', got '" + s + "'");
}

const char* to_string(LossKind kind) { return kind == LossKind::hubert ? "hubert" : "ce"; }

double cosine_similarity(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
  return a.dot(b) / (std::max(a.norm(), kNormFloor) * std::max(b.norm(), kNormFloor));
}

std::optional<double> masked_accuracy(const Matrix& scores, const MaskPlan& plan, const LabelSequence& labels) {
  if (plan.size() != static_cast<std::size_t>(scores.rows()) || labels.size() != plan.size())
    throw Error("scores, mask plan and labels must share one length");
  std::size_t hits = 0, total = 0;
  for (std::size_t t = 0; t < plan.size(); ++t) {
    if (!plan.is_masked(t)) continue;
    ++total;
    if (argmax_lowest(scores.row(static_cast<Index>(t))) == labels.ids[t]) ++hits;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(total);
}

// --- codebook (cosine) head -----------------------------------------------

HubertHead::HubertHead(const std::string& name, int model_dim, int num_classes, int embed_dim, double tau, Rng& rng)
    : proj_(name + ".proj", model_dim, embed_dim), embeddings_(name + ".label_embeddings", num_classes, embed_dim), tau_(tau) {
  if (tau <= 0.0) throw ConfigError("temperature must be positive");
  init_fan_in_uniform(proj_, model_dim, rng);
  for (Index i = 0; i < embeddings_.value.size(); ++i) embeddings_.value.data()[i] = rng.normal();
}

LossReport HubertHead::forward(const Matrix& hidden, const MaskPlan& plan, const LabelSequence& labels) {
  check_aligned(hidden, plan, labels);
  const Matrix& emb = embeddings_.value;
  const Index num_classes = emb.rows();
  hidden_ = hidden;
  frames_.clear();

  LossReport report;
  for (std::size_t t = 0; t < plan.size(); ++t) {
    if (!plan.is_masked(t)) continue;
    const auto row = static_cast<Index>(t);
    const int label = labels.ids[t];
    check_label(label, static_cast<int>(num_classes));

    FrameRecord rec;
    rec.t = row;
    rec.label = label;
    rec.projected = hidden.row(row) * proj_.value;

    // Positive first, then every codeword as a candidate negative.
    rec.targets.resize(num_classes + 1, emb.cols());
    rec.targets.row(0) = emb.row(label);
    rec.targets.bottomRows(num_classes) = emb;

    const Vector dots = rec.targets * rec.projected.transpose();
    const Vector target_norms = rec.targets.rowwise().norm().cwiseMax(kNormFloor);
    const double p_norm = std::max(rec.projected.norm(), kNormFloor);
    RowVector logits = (dots.array() / (target_norms.array() * p_norm) / tau_).matrix().transpose();

    const RowVector class_scores = logits.tail(num_classes);
    if (argmax_lowest(class_scores) == label) ++report.correct;

    logits(label + 1) = -std::numeric_limits<double>::infinity();
    const double mx = logits.maxCoeff();
    RowVector e = (logits.array() - mx).exp().matrix();
    const double z = e.sum();
    rec.prob = e / z;
    report.loss_sum += -(logits(0) - mx - std::log(z));
    ++report.masked_frames;
    rec.targets.resize(0, 0);  // rebuilt from the embedding table in backward
    frames_.push_back(std::move(rec));
  }
  if (report.masked_frames > 0) {
    report.loss = report.loss_sum / static_cast<double>(report.masked_frames);
    report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.masked_frames);
  }
  return report;
}

Matrix HubertHead::backward(double weight) {
  const Matrix& emb = embeddings_.value;
  const Index num_classes = emb.rows();
  Matrix d_hidden = Matrix::Zero(hidden_.rows(), hidden_.cols());
  const Vector emb_norms_raw = emb.rowwise().norm();
  const Vector emb_norms = emb_norms_raw.cwiseMax(kNormFloor);

  for (const auto& rec : frames_) {
    const RowVector& p = rec.projected;
    const double p_raw = p.norm();
    const double np = std::max(p_raw, kNormFloor);

    // Candidate j = 0 is e_label, j = c + 1 is e_c.
    RowVector g = rec.prob;
    g(0) -= 1.0;
    g *= weight / tau_;

    const Vector dots = emb * p.transpose();
    Vector cos = dots.array() / (emb_norms.array() * np);
    // Fold the positive into its codeword row.
    Vector coeff = g.tail(num_classes).transpose();
    coeff(rec.label) += g(0);

    // d cos / d p and d cos / d e_c with clamped norms held constant.
    RowVector dp = (coeff.array() / emb_norms.array()).matrix().transpose() * emb / np;
    if (p_raw >= kNormFloor) dp -= (coeff.dot(cos)) * p / (np * np);

    for (Index c = 0; c < num_classes; ++c) {
      if (coeff(c) == 0.0) continue;
      RowVector de = p / (np * emb_norms(c));
      if (emb_norms_raw(c) >= kNormFloor) de -= cos(c) * emb.row(c) / (emb_norms(c) * emb_norms(c));
      embeddings_.grad.row(c) += coeff(c) * de;
    }
    proj_.grad.noalias() += hidden_.row(rec.t).transpose() * dp;
    d_hidden.row(rec.t) = dp * proj_.value.transpose();
  }
  return d_hidden;
}

Matrix HubertHead::scores(const Matrix& hidden) const {
  const Matrix projected = hidden * proj_.value;
  const Vector p_norms = projected.rowwise().norm().cwiseMax(kNormFloor);
  const Vector e_norms = embeddings_.value.rowwise().norm().cwiseMax(kNormFloor);
  Matrix cos = projected * embeddings_.value.transpose();
  cos.array().colwise() /= p_norms.array();
  cos.array().rowwise() /= e_norms.transpose().array();
  return cos / tau_;
}

// --- linear (cross-entropy) head ------------------------------------------

CeHead::CeHead(const std::string& name, int model_dim, int num_classes, double tau, Rng& rng)
    : proj_(name + ".proj", model_dim, num_classes), tau_(tau) {
  if (tau <= 0.0) throw ConfigError("temperature must be positive");
  init_fan_in_uniform(proj_, model_dim, rng);
}

LossReport CeHead::forward(const Matrix& hidden, const MaskPlan& plan, const LabelSequence& labels) {
  check_aligned(hidden, plan, labels);
  const int num_classes = this->num_classes();
  rows_.clear();
  labels_.clear();
  for (std::size_t t = 0; t < plan.size(); ++t) {
    if (!plan.is_masked(t)) continue;
    check_label(labels.ids[t], num_classes);
    rows_.push_back(static_cast<Index>(t));
    labels_.push_back(labels.ids[t]);
  }
  masked_hidden_.resize(static_cast<Index>(rows_.size()), hidden.cols());
  for (std::size_t i = 0; i < rows_.size(); ++i) masked_hidden_.row(static_cast<Index>(i)) = hidden.row(rows_[i]);

  LossReport report;
  report.masked_frames = rows_.size();
  probs_ = (masked_hidden_ * proj_.value) / tau_;
  for (Index i = 0; i < probs_.rows(); ++i) {
    auto row = probs_.row(i);
    const int label = labels_[static_cast<std::size_t>(i)];
    if (argmax_lowest(row) == label) ++report.correct;
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    const double z = row.sum();
    report.loss_sum += -std::log(row(label) / z);
    row /= z;
  }
  if (report.masked_frames > 0) {
    report.loss = report.loss_sum / static_cast<double>(report.masked_frames);
    report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.masked_frames);
  }
  hidden_rows_ = hidden.rows();
  return report;
}

Matrix CeHead::backward(double weight) {
  Matrix dz = probs_;
  for (std::size_t i = 0; i < labels_.size(); ++i) dz(static_cast<Index>(i), labels_[i]) -= 1.0;
  dz *= weight / tau_;
  proj_.grad.noalias() += masked_hidden_.transpose() * dz;
  const Matrix dh = dz * proj_.value.transpose();
  Matrix d_hidden = Matrix::Zero(hidden_rows_, proj_.value.rows());
  for (std::size_t i = 0; i < rows_.size(); ++i) d_hidden.row(rows_[i]) = dh.row(static_cast<Index>(i));
  return d_hidden;
}

Matrix CeHead::scores(const Matrix& hidden) const { return (hidden * proj_.value) / tau_; }

std::unique_ptr<PredictionHead> make_head(LossKind kind, const std::string& name, int model_dim, int num_classes,
                                          int embed_dim, double tau, Rng& rng) {
  if (kind == LossKind::hubert) return std::make_unique<HubertHead>(name, model_dim, num_classes, embed_dim, tau, rng);
  return std::make_unique<CeHead>(name, model_dim, num_classes, tau, rng);
}

// --- intermediate layer supervision ---------------------------------------

ParamRefs IlsHeads::params() {
  ParamRefs out;
  if (top) append(out, top->params());
  for (auto& [layer, head] : taps) append(out, head->params());
  return out;
}

LossReport ils_loss(const EncoderOutput& outputs, const MaskPlan& plan, const LabelSequence& labels, IlsHeads& heads) {
  if (!heads.top) throw ConfigError("missing top-layer prediction head");
  for (const auto& [layer, hidden] : outputs.layers)
    if (layer != outputs.top_layer && !heads.taps.contains(layer))
      throw ConfigError("missing prediction head for ILS tap at layer " + std::to_string(layer));

  LossReport total = heads.top->forward(outputs.top(), plan, labels);
  for (auto& [layer, head] : heads.taps) {
    if (!outputs.layers.contains(layer))
      throw ConfigError("ILS head configured for layer " + std::to_string(layer) + " which was not tapped");
    const LossReport tap = head->forward(outputs.at(layer), plan, labels);
    total.loss += tap.loss;
    total.loss_sum += tap.loss_sum;
    total.tap_losses[layer] = tap.loss;
  }
  return total;
}

std::map<int, Matrix> ils_backward(const EncoderOutput& outputs, IlsHeads& heads, double weight) {
  std::map<int, Matrix> grads;
  grads[outputs.top_layer] = heads.top->backward(weight);
  for (auto& [layer, head] : heads.taps) {
    Matrix g = head->backward(weight);
    if (auto it = grads.find(layer); it != grads.end())
      it->second += g;
    else
      grads.emplace(layer, std::move(g));
  }
  return grads;
}

}  // namespace sslab
