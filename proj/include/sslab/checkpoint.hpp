// SPDX-License-Identifier: Apache-2.0
//
// Single-file binary checkpoint: magic "SSLCKPT\0", u32 version, u32 section
// count, a section table of {name, u64 offset, u64 size}, then the section
// payloads. Sections: meta, config, params, optimizer, rng and optional
// tokenizer.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sslab/common.hpp"

namespace sslab {

struct Checkpoint {
  std::string kind;  // "pretrain" or "finetune"
  long step = 0;
  std::uint64_t config_hash = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Matrix>> params;
  std::string optimizer;  // serialized Adam state
  std::string rng;        // serialized generator state
  std::string tokenizer;  // tokenizer text, fine-tuning only

  void capture(const ParamRefs& refs);
  /// Copies stored values into `refs` by name. Every ref must be present
  /// unless allow_missing; shapes must match.
  void restore(const ParamRefs& refs, bool allow_missing = false) const;
  const Matrix* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sslab
