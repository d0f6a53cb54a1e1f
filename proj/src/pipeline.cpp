// SPDX-License-Identifier: Apache-2.0

#include "sslab/pipeline.hpp"

#include <cstdio>
#include <sstream>

namespace sslab {

std::vector<Utterance> load_utterances(const std::vector<ManifestEntry>& manifest, const LabelSet* labels,
                                       const std::map<std::string, std::string>* transcripts,
                                       const FbankOptions& opts) {
  std::vector<Utterance> out;
  out.reserve(manifest.size());
  for (const ManifestEntry& e : manifest) {
    Utterance u = make_utterance(e.id, read_wav(e.audio), opts);
    if (labels) {
      auto it = labels->find(e.id);
      if (it == labels->end()) throw Error("no labels for utterance " + e.id);
      u.labels = it->second;
    }
    if (transcripts) {
      auto it = transcripts->find(e.id);
      if (it == transcripts->end()) throw Error("no transcript for utterance " + e.id);
      u.transcript = it->second;
    }
    out.push_back(std::move(u));
  }
  return out;
}

KmeansLabels mfcc_kmeans_labels(const std::vector<Utterance>& utts, int num_clusters, int max_iters, std::uint64_t seed) {
  std::vector<FeatureSequence> feats;
  feats.reserve(utts.size());
  for (const Utterance& u : utts) feats.push_back(mfcc39(u.waveform));
  Rng rng(seed);
  KmeansLabels out;
  out.fit = kmeans_fit(feats, num_clusters, max_iters, rng);
  for (std::size_t i = 0; i < utts.size(); ++i) out.labels.emplace(utts[i].id, kmeans_assign(feats[i], out.fit.codebook));
  return out;
}

KmeansLabels latent_kmeans_labels(const std::vector<Utterance>& utts, const ModelConfig& model, const Checkpoint& ckpt,
                                  int layer, int num_clusters, int max_iters, std::uint64_t seed) {
  Rng init(seed);
  Backbone backbone(model, init);
  ckpt.restore(backbone.params());
  const int tap = layer == 0 ? model.encoder.num_layers : layer;
  std::vector<FeatureSequence> feats;
  feats.reserve(utts.size());
  for (const Utterance& u : utts) {
    const Matrix x = backbone.frontend().forward(backbone.input_of(u));
    const EncoderOutput out = backbone.encoder().encode(x, {tap});
    feats.push_back(FeatureSequence{out.at(tap), backbone.frontend().frameshift_ms(), FeatureKind::latent});
  }
  Rng rng(seed);
  KmeansLabels out;
  out.fit = kmeans_fit(feats, num_clusters, max_iters, rng);
  for (std::size_t i = 0; i < utts.size(); ++i) out.labels.emplace(utts[i].id, kmeans_assign(feats[i], out.fit.codebook));
  return out;
}

LabelSet labels_for(const RunConfig& cfg, const std::vector<Utterance>& utts) {
  if (!cfg.num_classes) throw ConfigError("loss.num_classes is required");
  if (cfg.label_source == LabelSource::phoneme) {
    if (cfg.labels_path.empty()) throw ConfigError("labels.source = phoneme needs labels.path");
    return load_phoneme_labels(cfg.labels_path);
  }
  if (!cfg.labels_path.empty()) return read_label_file(cfg.labels_path, *cfg.num_classes);
  if (cfg.kmeans_features == KmeansFeatures::latent) {
    if (cfg.kmeans_checkpoint.empty()) throw ConfigError("kmeans.features = latent needs kmeans.checkpoint");
    return latent_kmeans_labels(utts, cfg.pretrain().model, load_checkpoint(cfg.kmeans_checkpoint), cfg.kmeans_layer,
                                *cfg.num_classes, cfg.kmeans_iters, cfg.seed)
        .labels;
  }
  return mfcc_kmeans_labels(utts, *cfg.num_classes, cfg.kmeans_iters, cfg.seed).labels;
}

void attach_labels(std::vector<Utterance>& utts, const LabelSet& labels) {
  for (Utterance& u : utts) {
    auto it = labels.find(u.id);
    if (it == labels.end()) throw Error("no labels for utterance " + u.id);
    u.labels = it->second;
  }
}

Tokenizer train_tokenizer(TokenizerKind kind, const std::vector<std::string>& corpus, int vocab_size) {
  return kind == TokenizerKind::character ? Tokenizer::train_char(corpus) : Tokenizer::train_subword(corpus, vocab_size);
}

nlohmann::json Comparison::to_json() const {
  nlohmann::json j;
  j["a"] = {{"name", name_a}, {"report", a.to_json()}};
  j["b"] = {{"name", name_b}, {"report", b.to_json()}};
  j["speedup"] = speedup;
  return j;
}

std::string Comparison::to_table() const {
  std::ostringstream os;
  os << a.to_table(name_a) << '\n' << b.to_table(name_b + " (vs " + name_a + ")") << '\n';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2fx", speedup);
  os << "end-to-end speedup " << name_b << " vs " << name_a << ": " << buf << '\n';
  return os.str();
}

Comparison compare_pretraining(const std::string& name_a, const PretrainConfig& a, const std::string& name_b,
                               const PretrainConfig& b, const std::vector<Utterance>& data, long steps, long warmup) {
  return compare_pretraining(name_a, a, data, name_b, b, data, steps, warmup);
}

Comparison compare_pretraining(const std::string& name_a, const PretrainConfig& a, const std::vector<Utterance>& data_a,
                               const std::string& name_b, const PretrainConfig& b, const std::vector<Utterance>& data_b,
                               long steps, long warmup) {
  if (steps < 1) throw ConfigError("compare needs at least one step");
  if (data_a.size() != data_b.size()) throw Error("compare needs the same utterances for both configurations");
  for (std::size_t i = 0; i < data_a.size(); ++i)
    if (data_a[i].id != data_b[i].id) throw Error("compare needs the same utterances for both configurations");
  PretrainConfig ca = a, cb = b;
  ca.profile = cb.profile = true;
  Pretrainer ta(std::move(ca), data_a), tb(std::move(cb), data_b);
  ta.run(warmup);
  tb.run(warmup);
  ta.profiler().reset();
  tb.profiler().reset();
  // Alternating updates expose both runs to the same machine load.
  for (long i = 0; i < steps; ++i) {
    ta.step();
    tb.step();
  }
  Comparison c;
  c.name_a = name_a;
  c.name_b = name_b;
  c.a = ta.profiler().report();
  c.b = tb.profiler().report();
  c.b.attach_baseline(c.a);
  c.speedup = speedup_ratio(c.a.steps_per_second, c.b.steps_per_second);
  return c;
}

}  // namespace sslab
