// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat "dotted.key = value" text file ('#' starts a
// comment), validated as a whole before any work starts.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sslab/tokenizer.hpp"
#include "sslab/trainer.hpp"

namespace sslab {

enum class LabelSource { kmeans, phoneme };
enum class KmeansFeatures { mfcc, latent };

struct RunConfig {
  std::string name = "run";
  ModelConfig model;
  std::optional<int> num_classes;  // loss.num_classes; required
  MaskConfig mask;
  bool mask_placement_set = false;

  LabelSource label_source = LabelSource::kmeans;
  std::filesystem::path labels_path;
  KmeansFeatures kmeans_features = KmeansFeatures::mfcc;
  int kmeans_iters = 50;
  int kmeans_layer = 0;  // latent features: encoder layer, 0 = top
  std::filesystem::path kmeans_checkpoint;

  long pretrain_steps = 2000;
  double pretrain_peak_lr = 1e-3;
  long pretrain_warmup = 200;
  double pretrain_batch_seconds = 4.0;
  int pretrain_update_freq = 1;
  long checkpoint_interval = 0;

  long finetune_steps = 1000;
  long freeze_steps = 0;
  double finetune_peak_lr = 1e-3;
  long finetune_warmup = 100;
  long finetune_hold = 400;
  long finetune_decay = 500;
  double finetune_final_fraction = 0.05;
  double finetune_mask_prob = 0.05;
  int finetune_mask_span = 4;
  double finetune_batch_seconds = 8.0;
  int finetune_update_freq = 1;
  std::optional<GuardPolicy> guard_policy;
  int eval_interval = 100;

  TokenizerKind tokenizer = TokenizerKind::character;
  int vocab_size = 1000;
  int beam = 1;

  std::filesystem::path train_manifest;
  std::filesystem::path train_transcripts;
  std::filesystem::path dev_manifest;
  std::filesystem::path dev_transcripts;

  std::uint64_t seed = 1;
  bool deterministic = false;
  bool profile = true;
  int profile_window = 200;

  /// Checks every cross-field rule; messages name the offending keys.
  void validate() const;

  PretrainConfig pretrain() const;
  FinetuneConfig finetune() const;

  /// Canonical text with every key, in a fixed order.
  std::string to_text() const;
  std::uint64_t hash() const;
};

/// Parses config text. Relative paths are resolved against `base_dir`.
RunConfig parse_config(const std::string& text, const std::string& source = "config",
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Applies one "key=value" override.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value,
                   const std::filesystem::path& base_dir = {});

// --- manifests ----------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::filesystem::path audio;
  double duration_s = 0.0;
};

/// "utt_id<TAB>path<TAB>duration_s" per line; relative paths resolve against
/// the manifest's directory. Ids must be unique and files must exist.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// "utt_id<TAB>text" per line.
std::map<std::string, std::string> read_transcripts(const std::filesystem::path& path);

}  // namespace sslab
