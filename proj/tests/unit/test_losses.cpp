// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "../support/gradcheck.hpp"
#include "sslab/losses.hpp"

using namespace sslab;
using namespace sslab::test;

namespace {

LabelSequence random_labels(std::size_t t_len, int classes, Rng& rng) {
  LabelSequence l;
  l.num_classes = classes;
  for (std::size_t t = 0; t < t_len; ++t) l.ids.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(classes))));
  return l;
}

MaskPlan all_masked(std::size_t t_len) {
  std::vector<std::size_t> idx(t_len);
  for (std::size_t i = 0; i < t_len; ++i) idx[i] = i;
  return mask_from_indices(t_len, idx);
}

double loss_sum(PredictionHead& h, const Matrix& hidden, const MaskPlan& p, const LabelSequence& l) {
  return h.forward(hidden, p, l).loss_sum;
}

template <typename F>
double seconds_of(F&& f, int reps) {
  double best = 1e9;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

TEST_CASE("codebook loss closed form when the projection hits its label exactly") {
  const int c = 100;
  Rng rng(1);
  HubertHead head("h", c, c, c, 0.1, rng);
  head.projection().value = 3.0 * Matrix::Identity(c, c);
  head.embeddings().value = Matrix::Identity(c, c);
  const std::size_t t_len = 6;
  const LabelSequence labels = random_labels(t_len, c, rng);
  Matrix hidden = Matrix::Zero(static_cast<Index>(t_len), c);
  for (std::size_t t = 0; t < t_len; ++t) hidden(static_cast<Index>(t), labels.ids[t]) = 1.0;
  const double expected = -std::log(std::exp(10.0) / (std::exp(10.0) + (c - 1)));
  const LossReport r = head.forward(hidden, all_masked(t_len), labels);
  CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
  CHECK(r.masked_frames == t_len);
  CHECK(*r.accuracy == 1.0);
}

TEST_CASE("uniform similarities and zero logits give ln(C)") {
  for (int c : {100, 500}) {
    Rng rng(2);
    const Matrix hidden = random_matrix(5, 8, rng);
    const LabelSequence labels = random_labels(5, c, rng);
    CeHead ce("ce", 8, c, 0.1, rng);
    ce.projection().value.setZero();
    CHECK(std::abs(ce.forward(hidden, all_masked(5), labels).loss - std::log(c)) < 1e-9);

    HubertHead hb("hb", 8, c, 4, 0.1, rng);
    hb.embeddings().value.rowwise() = random_matrix(1, 4, rng).row(0);
    CHECK(std::abs(hb.forward(hidden, all_masked(5), labels).loss - std::log(c)) < 1e-9);
  }
}

TEST_CASE("saturated CE logits give nearly zero loss") {
  Rng rng(3);
  const int c = 50;
  CeHead ce("ce", c, c, 0.1, rng);
  ce.projection().value = 2.0 * Matrix::Identity(c, c);  // z_label = 20 after 1/tau
  const LabelSequence labels = random_labels(4, c, rng);
  Matrix hidden = Matrix::Zero(4, c);
  for (Index t = 0; t < 4; ++t) hidden(t, labels.ids[static_cast<std::size_t>(t)]) = 1.0;
  const double loss = ce.forward(hidden, all_masked(4), labels).loss;
  CHECK(loss == doctest::Approx(std::log1p((c - 1) * std::exp(-20.0))).epsilon(1e-9));
  CHECK(loss < (c - 1) * std::exp(-20.0) * 1.0001);
}

TEST_CASE("codebook loss is scale-invariant, CE is not") {
  Rng rng(4);
  const Matrix hidden = random_matrix(12, 16, rng);
  const LabelSequence labels = random_labels(12, 30, rng);
  const MaskPlan plan = all_masked(12);
  HubertHead hb("hb", 16, 30, 8, 0.1, rng);
  CeHead ce("ce", 16, 30, 0.1, rng);
  const double h1 = hb.forward(hidden, plan, labels).loss;
  const double c1 = ce.forward(hidden, plan, labels).loss;
  for (double s : {0.37, 2.0, 11.0}) {
    CHECK(std::abs(hb.forward(s * hidden, plan, labels).loss - h1) <= 1e-12 * std::abs(h1));
    if (s != 1.0) CHECK(std::abs(ce.forward(s * hidden, plan, labels).loss - c1) > 1e-3);
  }
}

TEST_CASE("losses ignore unmasked frames bit-exactly") {
  Rng rng(5);
  Matrix hidden = random_matrix(10, 8, rng);
  const LabelSequence labels = random_labels(10, 12, rng);
  const MaskPlan plan = mask_from_indices(10, {2, 3, 4, 8});
  HubertHead hb("hb", 8, 12, 4, 0.1, rng);
  CeHead ce("ce", 8, 12, 0.1, rng);
  const double h = hb.forward(hidden, plan, labels).loss, c = ce.forward(hidden, plan, labels).loss;
  hidden.row(0).setConstant(123.0);
  hidden.row(9) *= -4;
  CHECK(hb.forward(hidden, plan, labels).loss == h);
  CHECK(ce.forward(hidden, plan, labels).loss == c);
}

TEST_CASE("empty mask is an error") {
  Rng rng(6);
  CeHead ce("ce", 4, 5, 0.1, rng);
  CHECK_THROWS_WITH(ce.forward(random_matrix(3, 4, rng), mask_from_indices(3, {}), random_labels(3, 5, rng)),
                    "empty mask");
}

TEST_CASE("CE gradient equals softmax minus one-hot over tau") {
  Rng rng(7);
  const int c = 6;
  CeHead ce("ce", 5, c, 0.5, rng);
  const Matrix hidden = random_matrix(4, 5, rng);
  const LabelSequence labels = random_labels(4, c, rng);
  const MaskPlan plan = mask_from_indices(4, {0, 2, 3});
  ce.forward(hidden, plan, labels);
  zero_grads(ce.params());
  const Matrix dh = ce.backward(1.0);

  Matrix dz = Matrix::Zero(4, c);
  for (Index t : {0, 2, 3}) {
    RowVector z = hidden.row(t) * ce.projection().value / 0.5;
    RowVector p = (z.array() - z.maxCoeff()).exp();
    p /= p.sum();
    p(labels.ids[static_cast<std::size_t>(t)]) -= 1.0;
    dz.row(t) = p / 0.5;
  }
  CHECK((dh - dz * ce.projection().value.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ce.projection().grad - hidden.transpose() * dz).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("loss gradients match central finite differences on 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    Matrix hidden = random_matrix(7, 6, rng);
    const LabelSequence labels = random_labels(7, 9, rng);
    const MaskPlan plan = mask_from_indices(7, {0, 1, 4, 5, 6});
    const double weight = 1.0 / 5;
    std::unique_ptr<PredictionHead> heads[] = {std::make_unique<CeHead>("ce", 6, 9, 0.1, rng),
                                               std::make_unique<HubertHead>("hb", 6, 9, 4, 0.1, rng)};
    for (auto& h : heads) {
      h->forward(hidden, plan, labels);
      zero_grads(h->params());
      const Matrix dh = h->backward(weight);
      auto loss = [&] { return weight * loss_sum(*h, hidden, plan, labels); };
      CHECK(check_params(h->params(), loss).max_rel_error < 1e-4);
      CHECK(check_input(hidden, dh, loss).max_rel_error < 1e-4);
    }
    // The CE gradient is simple enough for a tighter check with a smaller step.
    heads[0]->forward(hidden, plan, labels);
    zero_grads(heads[0]->params());
    const Matrix dh = heads[0]->backward(weight);
    auto ce_loss = [&] { return weight * loss_sum(*heads[0], hidden, plan, labels); };
    CHECK(check_input(hidden, dh, ce_loss, 1e-5).max_rel_error < 1e-6);
  }
}

TEST_CASE("ILS aggregation") {
  Rng rng(8);
  const Matrix h = random_matrix(6, 8, rng);
  const LabelSequence labels = random_labels(6, 10, rng);
  const MaskPlan plan = mask_from_indices(6, {1, 2, 3});

  IlsHeads only_top;
  only_top.top = std::make_unique<CeHead>("top", 8, 10, 0.1, rng);
  EncoderOutput one;
  one.top_layer = 2;
  one.layers[2] = h;
  const double single = only_top.top->forward(h, plan, labels).loss;
  CHECK(ils_loss(one, plan, labels, only_top).loss == single);

  IlsHeads twin;
  twin.top = std::make_unique<CeHead>("top", 8, 10, 0.1, rng);
  twin.taps[1] = std::make_unique<CeHead>("tap", 8, 10, 0.1, rng);
  static_cast<CeHead&>(*twin.top).projection().value = static_cast<CeHead&>(*only_top.top).projection().value;
  static_cast<CeHead&>(*twin.taps[1]).projection().value = static_cast<CeHead&>(*only_top.top).projection().value;
  EncoderOutput two = one;
  two.layers[1] = h;
  const LossReport r = ils_loss(two, plan, labels, twin);
  CHECK(r.loss == doctest::Approx(2 * single).epsilon(1e-15));
  CHECK(r.tap_losses.at(1) == doctest::Approx(single).epsilon(1e-15));

  CHECK_THROWS_AS(ils_loss(two, plan, labels, only_top), ConfigError);
}

TEST_CASE("a layer-4 tap alone drives gradients into layer 1") {
  Rng rng(9);
  EncoderConfig c;
  c.num_layers = 6;
  c.model_dim = 16;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.input_dim = 16;
  c.ils_layers = {4};
  TransformerEncoder enc(c, rng);
  IlsHeads heads;
  heads.top = std::make_unique<CeHead>("top", 16, 10, 0.1, rng);
  heads.taps[4] = std::make_unique<CeHead>("tap4", 16, 10, 0.1, rng);
  const EncoderOutput out = enc.encode(random_matrix(8, 16, rng));
  const LabelSequence labels = random_labels(8, 10, rng);
  ils_loss(out, mask_from_indices(8, {0, 3, 5}), labels, heads);
  auto grads = ils_backward(out, heads, 1.0);
  grads.erase(6);  // detach the top loss
  zero_grads(enc.params());
  enc.backward(grads);
  double layer1 = 0, layer5 = 0;
  for (Param* p : enc.params()) {
    if (p->name.rfind("encoder.layer1.", 0) == 0) layer1 += p->grad.norm();
    if (p->name.rfind("encoder.layer5.", 0) == 0) layer5 += p->grad.norm();
  }
  CHECK(layer1 > 0);
  CHECK(layer5 == 0);
}

TEST_CASE("masked accuracy") {
  Rng rng(10);
  const LabelSequence labels = random_labels(20, 5, rng);
  const MaskPlan plan = mask_from_indices(20, {0, 5, 9, 13});
  Matrix perfect = Matrix::Zero(20, 5);
  for (Index t = 0; t < 20; ++t) perfect(t, labels.ids[static_cast<std::size_t>(t)]) = 1.0;
  CHECK(*masked_accuracy(perfect, plan, labels) == 1.0);
  CHECK_FALSE(masked_accuracy(perfect, mask_from_indices(20, {}), labels).has_value());

  const Matrix scores = random_matrix(20, 5, rng);
  CHECK(*masked_accuracy(scores, plan, labels) == *masked_accuracy(7.5 * scores, plan, labels));

  const std::size_t n = 50000;
  const LabelSequence many = random_labels(n, 500, rng);
  const double acc = *masked_accuracy(random_matrix(static_cast<Index>(n), 500, rng), all_masked(n), many);
  CHECK(std::abs(acc - 1.0 / 500) < 0.0015);
}

TEST_CASE("large temperature drives both losses monotonically toward ln(C)") {
  Rng rng(11);
  const Matrix hidden = random_matrix(9, 8, rng);
  const LabelSequence labels = random_labels(9, 7, rng);
  const MaskPlan plan = all_masked(9);
  for (LossKind kind : {LossKind::ce, LossKind::hubert}) {
    double prev = 1e300;
    for (double tau : {2.0, 5.0, 20.0, 100.0, 1000.0}) {
      Rng init(12);
      auto head = make_head(kind, "h", 8, 7, 4, tau, init);
      const double gap = std::abs(head->forward(hidden, plan, labels).loss - std::log(7.0));
      CHECK(gap < prev);
      prev = gap;
    }
    CHECK(prev < 1e-2);
  }
}

TEST_CASE("CE head is cheaper than the codebook head at C=500, K=256") {
  Rng rng(13);
  const Matrix hidden = random_matrix(100, 64, rng);
  const LabelSequence labels = random_labels(100, 500, rng);
  Rng mrng(14);
  const MaskPlan plan = sample_mask_plan(100, 0.08, 10, mrng);
  CeHead ce("ce", 64, 500, 0.1, rng);
  HubertHead hb("hb", 64, 500, 256, 0.1, rng);
  const double t_ce = seconds_of([&] { ce.forward(hidden, plan, labels); ce.backward(1.0); }, 5);
  const double t_hb = seconds_of([&] { hb.forward(hidden, plan, labels); hb.backward(1.0); }, 5);
  MESSAGE("ce " << t_ce << " s, codebook " << t_hb << " s");
  CHECK(t_ce < t_hb);
}

TEST_CASE("cosine similarity clamps zero norms") {
  const RowVector z = RowVector::Zero(3);
  const RowVector a = RowVector::Ones(3);
  CHECK(cosine_similarity(z, a) == 0.0);
  CHECK(cosine_similarity(a, 2 * a) == doctest::Approx(1.0));
}
