// SPDX-License-Identifier: Apache-2.0
//
// Frame-level pseudo-labels: k-means over MFCC or encoder latents, and
// ingestion of externally produced phoneme label files.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslab/rng.hpp"
#include "sslab/signal.hpp"

namespace sslab {

constexpr int kPhonemeClasses = 40;

struct Codebook {
  Matrix centroids;  // C x D

  Index size() const { return centroids.rows(); }
  Index dim() const { return centroids.cols(); }
};

struct LabelSequence {
  std::vector<int> ids;
  int frameshift_ms = 20;
  int num_classes = 0;

  std::size_t size() const { return ids.size(); }
};

struct KmeansResult {
  Codebook codebook;
  /// Total squared distance after each assignment pass.
  std::vector<double> distortion;
  int iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are reseeded to
/// the point farthest from its assigned centroid.
KmeansResult kmeans_fit(std::span<const FeatureSequence> features, int num_clusters, int max_iters, Rng& rng);

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
LabelSequence kmeans_assign(const FeatureSequence& f, const Codebook& cb);

/// Stride decimation: keeps the first label of each window of `factor`.
LabelSequence resample_labels(const LabelSequence& l, int factor);

/// Majority-class purity of predicted clusters against reference classes.
double cluster_purity(std::span<const int> predicted, std::span<const int> reference);

// --- label files ----------------------------------------------------------
//
// Text format. First line: "frameshift_ms=<n>" optionally followed by
// " num_classes=<n>". Then one utterance per line: "utt_id id id id ...".

using LabelSet = std::map<std::string, LabelSequence>;

LabelSet read_label_file(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);
void write_label_file(const std::filesystem::path& path, const LabelSet& labels);

/// Reads a phoneme label file; every id must lie in [0, 40).
LabelSet load_phoneme_labels(const std::filesystem::path& path);

/// Binary: u32 C, u32 D, then C*D float32 centroids (little-endian).
void write_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook read_codebook(const std::filesystem::path& path);

}  // namespace sslab
