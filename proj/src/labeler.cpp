// SPDX-License-Identifier: Apache-2.0

#include "sslab/labeler.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"

namespace sslab {

namespace {

Matrix stack_frames(std::span<const FeatureSequence> features) {
  Index rows = 0;
  const Index dim = features.empty() ? 0 : features.front().dim();
  for (const auto& f : features) {
    if (f.dim() != dim) throw Error("feature dimension differs between utterances");
    rows += f.num_frames();
  }
  Matrix all(rows, dim);
  Index r = 0;
  for (const auto& f : features) {
    all.middleRows(r, f.num_frames()) = f.frames;
    r += f.num_frames();
  }
  return all;
}

// Nearest centroid with strict comparison, so the lowest index wins ties.
std::pair<int, double> nearest(const Matrix& centroids, const Eigen::Ref<const RowVector>& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

Matrix kmeans_plus_plus(const Matrix& x, int num_clusters, Rng& rng) {
  const Index n = x.rows();
  Matrix centroids(num_clusters, x.cols());
  centroids.row(0) = x.row(static_cast<Index>(rng.index(static_cast<std::size_t>(n))));
  Vector d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = (x.row(i) - centroids.row(0)).squaredNorm();

  for (int c = 1; c < num_clusters; ++c) {
    const double total = d2.sum();
    if (total <= 0.0) throw Error("not enough distinct points for " + std::to_string(num_clusters) + " clusters");
    const double target = rng.uniform() * total;
    double acc = 0.0;
    Index pick = n - 1;
    for (Index i = 0; i < n; ++i) {
      acc += d2(i);
      if (acc > target && d2(i) > 0.0) {
        pick = i;
        break;
      }
    }
    while (d2(pick) <= 0.0) --pick;
    centroids.row(c) = x.row(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (x.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

int parse_header_value(const std::string& header, const std::string& key) {
  std::istringstream is(header);
  std::string tok;
  while (is >> tok) {
    if (tok.rfind(key + "=", 0) == 0) return std::stoi(tok.substr(key.size() + 1));
  }
  return -1;
}

}  // namespace

KmeansResult kmeans_fit(std::span<const FeatureSequence> features, int num_clusters, int max_iters, Rng& rng) {
  if (num_clusters < 1) throw Error("cluster count must be positive");
  const Matrix x = stack_frames(features);
  const Index n = x.rows();
  if (n < num_clusters) throw Error("not enough data for " + std::to_string(num_clusters) + " clusters");

  KmeansResult result;
  Matrix centroids = kmeans_plus_plus(x, num_clusters, rng);
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<int> previous;
  Vector dist(n);

  for (int iter = 0; iter < max_iters; ++iter) {
    double distortion = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto [c, d] = nearest(centroids, x.row(i));
      assign[static_cast<std::size_t>(i)] = c;
      dist(i) = d;
      distortion += d;
    }
    result.distortion.push_back(distortion);
    result.iterations = iter + 1;
    if (assign == previous) {
      result.converged = true;
      break;
    }
    previous = assign;

    Matrix sums = Matrix::Zero(num_clusters, x.cols());
    std::vector<Index> counts(static_cast<std::size_t>(num_clusters), 0);
    for (Index i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += x.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < num_clusters; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      Index far = 0;
      dist.maxCoeff(&far);
      centroids.row(c) = x.row(far);
      dist(far) = 0.0;
      previous.clear();  // the repaired codebook must be re-assigned before convergence
    }
  }

  result.codebook.centroids = std::move(centroids);
  return result;
}

LabelSequence kmeans_assign(const FeatureSequence& f, const Codebook& cb) {
  if (f.dim() != cb.dim()) throw Error("feature dimension does not match codebook");
  LabelSequence out;
  out.frameshift_ms = f.frameshift_ms;
  out.num_classes = static_cast<int>(cb.size());
  out.ids.resize(static_cast<std::size_t>(f.num_frames()));
  for (Index t = 0; t < f.num_frames(); ++t) out.ids[static_cast<std::size_t>(t)] = nearest(cb.centroids, f.frames.row(t)).first;
  return out;
}

LabelSequence resample_labels(const LabelSequence& l, int factor) {
  if (factor < 1) throw Error("resampling factor must be positive");
  LabelSequence out;
  out.frameshift_ms = l.frameshift_ms * factor;
  out.num_classes = l.num_classes;
  for (std::size_t t = 0; t < l.ids.size(); t += static_cast<std::size_t>(factor)) out.ids.push_back(l.ids[t]);
  return out;
}

double cluster_purity(std::span<const int> predicted, std::span<const int> reference) {
  if (predicted.size() != reference.size() || predicted.empty()) throw Error("purity needs equal, non-empty inputs");
  std::map<int, std::map<int, std::size_t>> table;
  for (std::size_t i = 0; i < predicted.size(); ++i) ++table[predicted[i]][reference[i]];
  std::size_t hits = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [cls, n] : counts) best = std::max(best, n);
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// --- label files ----------------------------------------------------------

LabelSet read_label_file(const std::filesystem::path& path, std::optional<int> num_classes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw Error(path.string() + ": missing header line");
  const int frameshift = parse_header_value(header, "frameshift_ms");
  if (frameshift <= 0) throw Error(path.string() + ": header must declare frameshift_ms");
  int classes = parse_header_value(header, "num_classes");
  if (num_classes) {
    if (classes > 0 && classes != *num_classes)
      throw Error(path.string() + ": declares " + std::to_string(classes) + " classes, expected " +
                  std::to_string(*num_classes));
    classes = *num_classes;
  }

  LabelSet out;
  std::string line;
  int max_id = -1;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::string utt;
    if (!(is >> utt)) continue;
    LabelSequence seq;
    seq.frameshift_ms = frameshift;
    int id = 0;
    while (is >> id) {
      if (id < 0 || (classes > 0 && id >= classes)) {
        if (classes == kPhonemeClasses && num_classes) throw Error("phoneme id out of range: " + std::to_string(id));
        throw Error(path.string() + ": label id out of range: " + std::to_string(id));
      }
      max_id = std::max(max_id, id);
      seq.ids.push_back(id);
    }
    if (!is.eof()) throw Error(path.string() + ": malformed label line for " + utt);
    if (!out.emplace(utt, std::move(seq)).second) throw Error(path.string() + ": duplicate utterance " + utt);
  }
  const int resolved = classes > 0 ? classes : max_id + 1;
  for (auto& [utt, seq] : out) seq.num_classes = resolved;
  return out;
}

void write_label_file(const std::filesystem::path& path, const LabelSet& labels) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const int frameshift = labels.empty() ? 20 : labels.begin()->second.frameshift_ms;
  const int classes = labels.empty() ? 0 : labels.begin()->second.num_classes;
  out << "frameshift_ms=" << frameshift << " num_classes=" << classes << '\n';
  for (const auto& [utt, seq] : labels) {
    out << utt;
    for (int id : seq.ids) out << ' ' << id;
    out << '\n';
  }
}

LabelSet load_phoneme_labels(const std::filesystem::path& path) { return read_label_file(path, kPhonemeClasses); }

void write_codebook(const std::filesystem::path& path, const Codebook& cb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.size()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.dim()));
  for (Index c = 0; c < cb.size(); ++c)
    for (Index d = 0; d < cb.dim(); ++d) io::put<float>(out, static_cast<float>(cb.centroids(c, d)));
}

Codebook read_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const auto c = io::get<std::uint32_t>(in);
  const auto d = io::get<std::uint32_t>(in);
  Codebook cb{Matrix(c, d)};
  for (std::uint32_t i = 0; i < c; ++i)
    for (std::uint32_t j = 0; j < d; ++j) cb.centroids(i, j) = io::get<float>(in);
  return cb;
}

}  // namespace sslab
