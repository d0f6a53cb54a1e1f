// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "../support/fixtures.hpp"
#include "../support/gradcheck.hpp"
#include "sslab/labeler.hpp"
#include "sslab/pipeline.hpp"
#include "sslab/synth.hpp"

using namespace sslab;
using namespace sslab::test;

namespace {

FeatureSequence seq(Matrix m) { return {std::move(m), 10, FeatureKind::mfcc}; }

int brute_force_nearest(const Matrix& c, const RowVector& x) {
  int best = 0;
  double best_d = (c.row(0) - x).squaredNorm();
  for (Index k = 1; k < c.rows(); ++k) {
    const double d = (c.row(k) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("C equal to the number of distinct points gives zero distortion") {
  Rng rng(1);
  const Matrix pts = random_matrix(6, 3, rng);
  Matrix data(18, 3);
  for (Index i = 0; i < 18; ++i) data.row(i) = pts.row(i % 6);
  std::vector<FeatureSequence> f{seq(data)};
  const KmeansResult r = kmeans_fit(f, 6, 20, rng);
  CHECK(r.distortion.back() < 1e-20);
}

TEST_CASE("two well-separated blobs are recovered") {
  Rng rng(2);
  const RowVector m0 = (RowVector(2) << -3.0, 1.0).finished();
  const RowVector m1 = (RowVector(2) << 4.0, -2.0).finished();
  Matrix data(400, 2);
  for (Index i = 0; i < 400; ++i) data.row(i) = (i % 2 ? m1 : m0) + 0.01 * random_matrix(1, 2, rng);
  std::vector<FeatureSequence> f{seq(data)};
  const KmeansResult r = kmeans_fit(f, 2, 50, rng);
  const Matrix& c = r.codebook.centroids;
  const bool order = (c.row(0) - m0).norm() < (c.row(1) - m0).norm();
  CHECK((c.row(order ? 0 : 1) - m0).norm() < 0.1);
  CHECK((c.row(order ? 1 : 0) - m1).norm() < 0.1);
  CHECK(r.converged);
}

TEST_CASE("distortion is non-increasing and the final assignment is a fixed point") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    std::vector<FeatureSequence> f{seq(random_matrix(300, 4, rng)), seq(random_matrix(200, 4, rng))};
    const KmeansResult r = kmeans_fit(f, 8, 30, rng);
    for (std::size_t i = 1; i < r.distortion.size(); ++i) CHECK(r.distortion[i] <= r.distortion[i - 1] + 1e-12);

    // Re-assigning and re-averaging must leave every centroid in place.
    const Codebook& cb = r.codebook;
    if (r.converged) {
      Matrix sums = Matrix::Zero(cb.size(), cb.dim());
      std::vector<int> counts(static_cast<std::size_t>(cb.size()), 0);
      for (const auto& s : f) {
        const LabelSequence l = kmeans_assign(s, cb);
        for (std::size_t t = 0; t < l.size(); ++t) {
          sums.row(l.ids[t]) += s.frames.row(static_cast<Index>(t));
          ++counts[static_cast<std::size_t>(l.ids[t])];
        }
      }
      for (Index k = 0; k < cb.size(); ++k)
        if (counts[static_cast<std::size_t>(k)] > 0)
          CHECK((sums.row(k) / counts[static_cast<std::size_t>(k)] - cb.centroids.row(k)).cwiseAbs().maxCoeff() < 1e-9);
    }
    for (Index a = 0; a < cb.size(); ++a)
      for (Index b = a + 1; b < cb.size(); ++b) CHECK((cb.centroids.row(a) - cb.centroids.row(b)).norm() > 1e-9);
  }
}

TEST_CASE("too few frames for C clusters") {
  Rng rng(3);
  std::vector<FeatureSequence> f{seq(random_matrix(5, 2, rng))};
  CHECK_THROWS_WITH(kmeans_fit(f, 6, 10, rng), "not enough data for 6 clusters");
}

TEST_CASE("kmeans_assign: exact hits, tie-break and a brute-force oracle") {
  Rng rng(4);
  Codebook cb;
  cb.centroids = random_matrix(10, 3, rng);
  CHECK(kmeans_assign(seq(cb.centroids.row(7)), cb).ids[0] == 7);

  Codebook tie;
  tie.centroids = Matrix::Zero(6, 1);
  tie.centroids(2, 0) = -1.0;
  tie.centroids(5, 0) = 1.0;
  tie.centroids(0, 0) = 10.0;
  tie.centroids(1, 0) = 11.0;
  tie.centroids(3, 0) = 12.0;
  tie.centroids(4, 0) = 13.0;
  CHECK(kmeans_assign(seq(Matrix::Zero(1, 1)), tie).ids[0] == 2);

  const Matrix frames = random_matrix(1000, 3, rng);
  const LabelSequence l = kmeans_assign(seq(frames), cb);
  CHECK(l.num_classes == 10);
  for (Index t = 0; t < 1000; ++t)
    CHECK(l.ids[static_cast<std::size_t>(t)] == brute_force_nearest(cb.centroids, frames.row(t)));

  CHECK_THROWS(kmeans_assign(seq(random_matrix(2, 4, rng)), cb));
}

TEST_CASE("resample_labels") {
  LabelSequence l{{1, 1, 2, 2}, 20, 3};
  const LabelSequence r = resample_labels(l, 2);
  CHECK(r.ids == std::vector<int>{1, 2});
  CHECK(r.frameshift_ms == 40);
  CHECK(resample_labels(LabelSequence{{4, 4, 4, 4, 4}, 20, 5}, 2).ids == std::vector<int>{4, 4, 4});

  Rng rng(5);
  for (std::size_t t_len : {7u, 8u, 99u, 100u}) {
    LabelSequence x;
    x.frameshift_ms = 20;
    x.num_classes = 9;
    for (std::size_t i = 0; i < t_len; ++i) x.ids.push_back(static_cast<int>(rng.index(9)));
    CHECK(resample_labels(x, 2).size() == (t_len + 1) / 2);
    CHECK(resample_labels(resample_labels(x, 2), 2).ids == resample_labels(x, 4).ids);
  }
}

TEST_CASE("label files and phoneme ingestion") {
  TempDir dir("labeler");
  {
    std::ofstream os(dir / "ok.lab");
    os << "frameshift_ms=20 num_classes=40\nu1";
    for (int i = 0; i < 40; ++i) os << ' ' << i;
    os << "\nu2 3 3 3\n";
  }
  const LabelSet ok = load_phoneme_labels(dir / "ok.lab");
  CHECK(ok.at("u1").size() == 40);
  CHECK(ok.at("u1").num_classes == 40);
  CHECK(ok.at("u2").frameshift_ms == 20);

  std::ofstream(dir / "bad.lab") << "frameshift_ms=20 num_classes=40\nu1 0 40\n";
  CHECK_THROWS_WITH(load_phoneme_labels(dir / "bad.lab"), "phoneme id out of range: 40");

  std::ofstream(dir / "nohdr.lab") << "u1 1 2\n";
  CHECK_THROWS(read_label_file(dir / "nohdr.lab"));

  std::ofstream(dir / "empty.lab") << "frameshift_ms=10 num_classes=40\nu1\n";
  const LabelSet empty = load_phoneme_labels(dir / "empty.lab");
  CHECK(empty.at("u1").size() == 0);

  write_label_file(dir / "rt.lab", ok);
  const LabelSet back = read_label_file(dir / "rt.lab");
  CHECK(back.at("u1").ids == ok.at("u1").ids);
}

TEST_CASE("codebook round-trip") {
  TempDir dir("codebook");
  Rng rng(6);
  Codebook cb;
  cb.centroids = random_matrix(5, 4, rng);
  write_codebook(dir / "cb.bin", cb);
  const Codebook back = read_codebook(dir / "cb.bin");
  CHECK((back.centroids - cb.centroids.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cluster purity") {
  const std::vector<int> pred{0, 0, 1, 1, 2, 2};
  CHECK(cluster_purity(pred, std::vector<int>{5, 5, 6, 6, 7, 7}) == 1.0);
  CHECK(cluster_purity(pred, std::vector<int>{5, 6, 6, 6, 7, 7}) == doctest::Approx(5.0 / 6));
  CHECK_THROWS(cluster_purity(pred, std::vector<int>{1}));
}

TEST_CASE("MFCC k-means on the 3-class tone corpus reaches purity above 0.9") {
  SynthOptions opts;
  opts.mode = SynthMode::tones;
  const auto corpus = synthesize_corpus(20, 7, opts);
  std::vector<Utterance> utts;
  for (const auto& s : corpus) utts.push_back(make_utterance(s.id, s.waveform));
  const KmeansLabels k = mfcc_kmeans_labels(utts, 3, 50, 1);
  std::vector<int> pred, ref;
  for (const auto& s : corpus) {
    const LabelSequence& l = k.labels.at(s.id);
    REQUIRE(l.size() == s.frame_classes.size());
    pred.insert(pred.end(), l.ids.begin(), l.ids.end());
    ref.insert(ref.end(), s.frame_classes.begin(), s.frame_classes.end());
  }
  const double purity = cluster_purity(pred, ref);
  MESSAGE("purity = " << purity);
  CHECK(purity > 0.9);
}
