// SPDX-License-Identifier: Apache-2.0
//
// Glue between files on disk and the training loops: utterance loading,
// MFCC k-means labeling, tokenizer training and side-by-side timing runs.
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslab/config.hpp"
#include "sslab/labeler.hpp"
#include "sslab/profiler.hpp"
#include "sslab/tokenizer.hpp"
#include "sslab/trainer.hpp"

namespace sslab {

/// Reads audio, computes CMVN'd Fbank and attaches labels / transcripts when
/// given. Missing labels or transcripts for an id are an error.
std::vector<Utterance> load_utterances(const std::vector<ManifestEntry>& manifest, const LabelSet* labels = nullptr,
                                       const std::map<std::string, std::string>* transcripts = nullptr,
                                       const FbankOptions& opts = {});

struct KmeansLabels {
  KmeansResult fit;
  LabelSet labels;  // 10 ms
};

/// k-means over 39-dim MFCC frames of every utterance, then per-frame
/// assignment.
KmeansLabels mfcc_kmeans_labels(const std::vector<Utterance>& utts, int num_clusters, int max_iters, std::uint64_t seed);

/// k-means over encoder hidden states of a pre-trained model (`layer` 0 is
/// the top layer). Labels come out at the model frameshift.
KmeansLabels latent_kmeans_labels(const std::vector<Utterance>& utts, const ModelConfig& model, const Checkpoint& ckpt,
                                  int layer, int num_clusters, int max_iters, std::uint64_t seed);

/// Frame labels for pre-training as the run config describes them: a label
/// file when labels.path is set, otherwise k-means computed on the spot.
LabelSet labels_for(const RunConfig& cfg, const std::vector<Utterance>& utts);

/// Attaches labels by utterance id.
void attach_labels(std::vector<Utterance>& utts, const LabelSet& labels);

Tokenizer train_tokenizer(TokenizerKind kind, const std::vector<std::string>& corpus, int vocab_size);

struct Comparison {
  std::string name_a, name_b;
  TimingReport a, b;  // b carries a as its baseline
  double speedup = 0.0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Pre-trains both configurations for `steps` updates on the same data and
/// seed. The first `warmup` updates of each run are excluded from timing.
Comparison compare_pretraining(const std::string& name_a, const PretrainConfig& a, const std::string& name_b,
                               const PretrainConfig& b, const std::vector<Utterance>& data, long steps,
                               long warmup = 5);
/// As above with separate data sets, for configurations whose label
/// inventories differ. Both sets must list the same utterances.
Comparison compare_pretraining(const std::string& name_a, const PretrainConfig& a, const std::vector<Utterance>& data_a,
                               const std::string& name_b, const PretrainConfig& b, const std::vector<Utterance>& data_b,
                               long steps, long warmup = 5);

}  // namespace sslab
