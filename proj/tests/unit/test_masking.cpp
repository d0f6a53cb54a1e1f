// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "sslab/masking.hpp"

using namespace sslab;
using namespace sslab::test;

namespace {

// Expected coverage with clipping: frame t is covered unless none of the
// min(t + 1, L) positions that could start a span over it fired.
double expected_coverage(std::size_t t_len, double p, int span) {
  double acc = 0;
  for (std::size_t t = 0; t < t_len; ++t)
    acc += 1 - std::pow(1 - p, static_cast<double>(std::min<std::size_t>(t + 1, static_cast<std::size_t>(span))));
  return acc / static_cast<double>(t_len);
}

std::vector<std::size_t> masked_indices(const MaskPlan& p) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < p.size(); ++t)
    if (p.is_masked(t)) out.push_back(t);
  return out;
}

FeatureSequence latent_seq(Index t, Index d, Rng& rng) { return {random_matrix(t, d, rng), 20, FeatureKind::latent}; }

}  // namespace

TEST_CASE("span start probability 0 masks nothing, 1 masks everything") {
  Rng rng(1);
  CHECK_FALSE(sample_mask_plan(500, 0.0, 10, rng).any());
  const MaskPlan all = sample_mask_plan(500, 1.0, 10, rng);
  CHECK(all.count() == 500);
  CHECK(all.spans.size() == 500);
}

TEST_CASE("degenerate T = 0 gives an empty plan; bad arguments throw") {
  Rng rng(1);
  CHECK(sample_mask_plan(0, 0.5, 10, rng).size() == 0);
  CHECK_THROWS(sample_mask_plan(10, 1.5, 10, rng));
  CHECK_THROWS(sample_mask_plan(10, 0.5, 0, rng));
}

TEST_CASE("masked is exactly the union of clipped spans") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const MaskPlan p = sample_mask_plan(137, 0.08, 10, rng);
    std::vector<std::uint8_t> cover(137, 0);
    for (const MaskSpan& s : p.spans) {
      CHECK(s.start < 137);
      CHECK(s.start + s.length <= 137);
      CHECK(s.length == std::min<std::size_t>(10, 137 - s.start));
      for (std::size_t t = s.start; t < s.start + s.length; ++t) cover[t] = 1;
    }
    CHECK(cover == p.masked);
    CHECK(p.span_start_prob == 0.08);
    CHECK(p.span_len == 10);
  }
}

TEST_CASE("coverage matches the analytic expectation including edge clipping") {
  Rng rng(42);
  for (std::size_t t_len : {100000u, 400u}) {
    double total = 0;
    const int reps = t_len == 400 ? 500 : 1;
    for (int r = 0; r < reps; ++r) total += sample_mask_plan(t_len, 0.08, 10, rng).coverage();
    CHECK(std::abs(total / reps - expected_coverage(t_len, 0.08, 10)) < 0.005);
  }
  CHECK(expected_coverage(100000, 0.08, 10) == doctest::Approx(1 - std::pow(0.92, 10)).epsilon(1e-3));
}

TEST_CASE("sampling is reproducible for a fixed seed") {
  Rng a(9), b(9);
  const MaskPlan p = sample_mask_plan(1000, 0.08, 10, a);
  const MaskPlan q = sample_mask_plan(1000, 0.08, 10, b);
  CHECK(p.masked == q.masked);
  CHECK(p.spans.size() == q.spans.size());
}

TEST_CASE("post-masking") {
  Rng rng(2);
  MaskEmbedding m(6, rng);
  const FeatureSequence f = latent_seq(12, 6, rng);

  SUBCASE("empty plan is the identity") {
    CHECK(apply_post_mask(f, mask_from_indices(12, {}), m).frames == f.frames);
  }
  SUBCASE("all-masked plan replaces every row") {
    std::vector<std::size_t> all(12);
    for (std::size_t i = 0; i < 12; ++i) all[i] = i;
    const Matrix out = apply_post_mask(f, mask_from_indices(12, all), m).frames;
    for (Index t = 0; t < 12; ++t) CHECK(out.row(t) == m.param().value.row(0));
  }
  SUBCASE("unmasked rows are bit-identical") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Rng r(seed);
      const MaskPlan p = sample_mask_plan(12, 0.2, 3, r);
      const Matrix out = apply_post_mask(f, p, m).frames;
      for (Index t = 0; t < 12; ++t)
        if (!p.is_masked(static_cast<std::size_t>(t))) CHECK(out.row(t) == f.frames.row(t));
    }
  }
  SUBCASE("dimension mismatch") {
    MaskEmbedding small(3, rng);
    CHECK_THROWS_WITH(apply_post_mask(f, mask_from_indices(12, {1}), small), "mask embedding dimension mismatch");
  }
}

TEST_CASE("mask embedding gradient is the sum of masked upstream rows, checked by finite differences") {
  Rng rng(3);
  MaskEmbedding m(5, rng);
  const FeatureSequence f = latent_seq(10, 5, rng);
  const MaskPlan p = mask_from_indices(10, {1, 2, 7});
  const Matrix r = random_matrix(10, 5, rng);
  m.param().zero_grad();
  const Matrix dx = post_mask_backward(r, p, m);
  RowVector expected = r.row(1) + r.row(2) + r.row(7);
  CHECK((m.param().grad.row(0) - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(dx.row(1).isZero());
  CHECK(dx.row(0) == r.row(0));
  auto loss = [&] { return project(apply_post_mask(f, p, m).frames, r); };
  CHECK(check_params({&m.param()}, loss).max_rel_error < 1e-6);
}

TEST_CASE("pre-masking fills masked base-rate frames") {
  Rng rng(4);
  const FeatureSequence f{random_matrix(8, 3, rng), 10, FeatureKind::fbank};
  CHECK(apply_pre_mask(f, mask_from_indices(8, {}), 0.0).frames == f.frames);
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7};
  CHECK(apply_pre_mask(f, mask_from_indices(8, all), 0.0).frames.isZero());
  const Matrix out = apply_pre_mask(f, mask_from_indices(8, {2, 5}), -1.0).frames;
  CHECK((out.row(2).array() == -1.0).all());
  CHECK(out.row(3) == f.frames.row(3));
  CHECK_THROWS(apply_pre_mask(f, mask_from_indices(7, {}), 0.0));
}

TEST_CASE("project_mask: a target frame is masked iff any source frame is") {
  // All four combinations of a two-frame window.
  for (int bits = 0; bits < 4; ++bits) {
    std::vector<std::size_t> idx;
    if (bits & 1) idx.push_back(0);
    if (bits & 2) idx.push_back(1);
    const MaskPlan target = project_mask(mask_from_indices(2, idx), 2);
    REQUIRE(target.size() == 1);
    CHECK(target.is_masked(0) == (bits != 0));
  }
  CHECK(masked_indices(project_mask(mask_from_indices(10, {3}), 2)) == std::vector<std::size_t>{1});
  CHECK_FALSE(project_mask(mask_from_indices(10, {}), 4).any());
  CHECK(project_mask(mask_from_indices(9, {0, 1, 2, 3, 4, 5, 6, 7, 8}), 4).count() == 3);
  CHECK(project_mask(mask_from_indices(9, {}), 4).size() == 3);
}

TEST_CASE("project_mask is monotone") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    MaskPlan base = sample_mask_plan(64, 0.05, 3, rng);
    auto idx = masked_indices(base);
    idx.push_back(rng.index(64));
    const MaskPlan more = mask_from_indices(64, idx);
    for (int factor : {2, 4, 8}) {
      const MaskPlan a = project_mask(base, factor), b = project_mask(more, factor);
      for (std::size_t t = 0; t < a.size(); ++t)
        if (a.is_masked(t)) CHECK(b.is_masked(t));
    }
  }
}

TEST_CASE("truncated keeps the first n frames") {
  const MaskPlan p = mask_from_indices(10, {1, 8, 9});
  const MaskPlan t = p.truncated(9);
  CHECK(t.size() == 9);
  CHECK(masked_indices(t) == std::vector<std::size_t>{1, 8});
}
