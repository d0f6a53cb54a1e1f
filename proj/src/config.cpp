// SPDX-License-Identifier: Apache-2.0

#include "sslab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace sslab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) { return static_cast<int>(to_long(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int(key, item));
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  if (v.empty()) return {};
  std::filesystem::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
  using P = std::filesystem::path;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&](std::string key, auto set, auto get) { t.emplace_back(std::move(key), Field{set, get}); };

    add("name", [](RunConfig& c, const std::string& v, const P&) { c.name = v; },
        [](const RunConfig& c) { return c.name; });
    add("model.frontend", [](RunConfig& c, const std::string& v, const P&) { c.model.frontend = parse_frontend_kind(v); },
        [](const RunConfig& c) { return std::string(to_string(c.model.frontend)); });
    add("model.frameshift_ms",
        [](RunConfig& c, const std::string& v, const P&) { c.model.frameshift_ms = to_int("model.frameshift_ms", v); },
        [](const RunConfig& c) { return std::to_string(c.model.frameshift_ms); });
    add("model.fbank_dim", [](RunConfig& c, const std::string& v, const P&) { c.model.fbank_dim = to_int("model.fbank_dim", v); },
        [](const RunConfig& c) { return std::to_string(c.model.fbank_dim); });
    add("model.waveform_channels",
        [](RunConfig& c, const std::string& v, const P&) { c.model.waveform_channels = to_int("model.waveform_channels", v); },
        [](const RunConfig& c) { return std::to_string(c.model.waveform_channels); });
    add("model.downsampler_channels",
        [](RunConfig& c, const std::string& v, const P&) {
          c.model.downsampler_channels = to_int("model.downsampler_channels", v);
        },
        [](const RunConfig& c) { return std::to_string(c.model.downsampler_channels); });

    add("encoder.layers", [](RunConfig& c, const std::string& v, const P&) { c.model.encoder.num_layers = to_int("encoder.layers", v); },
        [](const RunConfig& c) { return std::to_string(c.model.encoder.num_layers); });
    add("encoder.dim", [](RunConfig& c, const std::string& v, const P&) { c.model.encoder.model_dim = to_int("encoder.dim", v); },
        [](const RunConfig& c) { return std::to_string(c.model.encoder.model_dim); });
    add("encoder.heads", [](RunConfig& c, const std::string& v, const P&) { c.model.encoder.num_heads = to_int("encoder.heads", v); },
        [](const RunConfig& c) { return std::to_string(c.model.encoder.num_heads); });
    add("encoder.ffn_dim", [](RunConfig& c, const std::string& v, const P&) { c.model.encoder.ffn_dim = to_int("encoder.ffn_dim", v); },
        [](const RunConfig& c) { return std::to_string(c.model.encoder.ffn_dim); });
    add("encoder.ils_layers",
        [](RunConfig& c, const std::string& v, const P&) { c.model.encoder.ils_layers = to_int_list("encoder.ils_layers", v); },
        [](const RunConfig& c) {
          std::string s;
          for (int l : c.model.encoder.ils_layers) s += (s.empty() ? "" : ",") + std::to_string(l);
          return s;
        });
    add("encoder.positional",
        [](RunConfig& c, const std::string& v, const P&) {
          c.model.encoder.positional_encoding = to_bool("encoder.positional", v);
        },
        [](const RunConfig& c) { return std::string(c.model.encoder.positional_encoding ? "true" : "false"); });

    add("loss.kind", [](RunConfig& c, const std::string& v, const P&) { c.model.loss = parse_loss_kind(v); },
        [](const RunConfig& c) { return std::string(to_string(c.model.loss)); });
    add("loss.num_classes", [](RunConfig& c, const std::string& v, const P&) { c.num_classes = to_int("loss.num_classes", v); },
        [](const RunConfig& c) { return c.num_classes ? std::to_string(*c.num_classes) : std::string(); });
    add("loss.tau", [](RunConfig& c, const std::string& v, const P&) { c.model.tau = to_double("loss.tau", v); },
        [](const RunConfig& c) { return fmt(c.model.tau); });
    add("loss.embed_dim", [](RunConfig& c, const std::string& v, const P&) { c.model.embed_dim = to_int("loss.embed_dim", v); },
        [](const RunConfig& c) { return std::to_string(c.model.embed_dim); });

    add("mask.placement",
        [](RunConfig& c, const std::string& v, const P&) {
          c.mask.placement = parse_mask_placement(v);
          c.mask_placement_set = true;
        },
        [](const RunConfig& c) { return c.mask_placement_set ? std::string(to_string(c.mask.placement)) : std::string(); });
    add("mask.prob", [](RunConfig& c, const std::string& v, const P&) { c.mask.prob = to_double("mask.prob", v); },
        [](const RunConfig& c) { return fmt(c.mask.prob); });
    add("mask.span", [](RunConfig& c, const std::string& v, const P&) { c.mask.span = to_int("mask.span", v); },
        [](const RunConfig& c) { return std::to_string(c.mask.span); });

    add("labels.source",
        [](RunConfig& c, const std::string& v, const P&) {
          if (v == "kmeans")
            c.label_source = LabelSource::kmeans;
          else if (v == "phoneme")
            c.label_source = LabelSource::phoneme;
          else
            throw ConfigError("labels.source must be 'kmeans' or 'phoneme', got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(c.label_source == LabelSource::kmeans ? "kmeans" : "phoneme"); });
    add("labels.path", [](RunConfig& c, const std::string& v, const P& b) { c.labels_path = resolve(b, v); },
        [](const RunConfig& c) { return c.labels_path.string(); });
    add("kmeans.features",
        [](RunConfig& c, const std::string& v, const P&) {
          if (v == "mfcc")
            c.kmeans_features = KmeansFeatures::mfcc;
          else if (v == "latent")
            c.kmeans_features = KmeansFeatures::latent;
          else
            throw ConfigError("kmeans.features must be 'mfcc' or 'latent', got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(c.kmeans_features == KmeansFeatures::mfcc ? "mfcc" : "latent"); });
    add("kmeans.iters", [](RunConfig& c, const std::string& v, const P&) { c.kmeans_iters = to_int("kmeans.iters", v); },
        [](const RunConfig& c) { return std::to_string(c.kmeans_iters); });
    add("kmeans.layer", [](RunConfig& c, const std::string& v, const P&) { c.kmeans_layer = to_int("kmeans.layer", v); },
        [](const RunConfig& c) { return std::to_string(c.kmeans_layer); });
    add("kmeans.checkpoint", [](RunConfig& c, const std::string& v, const P& b) { c.kmeans_checkpoint = resolve(b, v); },
        [](const RunConfig& c) { return c.kmeans_checkpoint.string(); });

    add("pretrain.steps", [](RunConfig& c, const std::string& v, const P&) { c.pretrain_steps = to_long("pretrain.steps", v); },
        [](const RunConfig& c) { return std::to_string(c.pretrain_steps); });
    add("pretrain.peak_lr", [](RunConfig& c, const std::string& v, const P&) { c.pretrain_peak_lr = to_double("pretrain.peak_lr", v); },
        [](const RunConfig& c) { return fmt(c.pretrain_peak_lr); });
    add("pretrain.warmup_steps",
        [](RunConfig& c, const std::string& v, const P&) { c.pretrain_warmup = to_long("pretrain.warmup_steps", v); },
        [](const RunConfig& c) { return std::to_string(c.pretrain_warmup); });
    add("pretrain.batch_seconds",
        [](RunConfig& c, const std::string& v, const P&) {
          c.pretrain_batch_seconds = to_double("pretrain.batch_seconds", v);
        },
        [](const RunConfig& c) { return fmt(c.pretrain_batch_seconds); });
    add("pretrain.update_freq",
        [](RunConfig& c, const std::string& v, const P&) { c.pretrain_update_freq = to_int("pretrain.update_freq", v); },
        [](const RunConfig& c) { return std::to_string(c.pretrain_update_freq); });
    add("pretrain.checkpoint_interval",
        [](RunConfig& c, const std::string& v, const P&) {
          c.checkpoint_interval = to_long("pretrain.checkpoint_interval", v);
        },
        [](const RunConfig& c) { return std::to_string(c.checkpoint_interval); });

    add("finetune.steps", [](RunConfig& c, const std::string& v, const P&) { c.finetune_steps = to_long("finetune.steps", v); },
        [](const RunConfig& c) { return std::to_string(c.finetune_steps); });
    add("finetune.freeze_steps",
        [](RunConfig& c, const std::string& v, const P&) { c.freeze_steps = to_long("finetune.freeze_steps", v); },
        [](const RunConfig& c) { return std::to_string(c.freeze_steps); });
    add("finetune.peak_lr",
        [](RunConfig& c, const std::string& v, const P&) { c.finetune_peak_lr = to_double("finetune.peak_lr", v); },
        [](const RunConfig& c) { return fmt(c.finetune_peak_lr); });
    add("finetune.warmup_steps",
        [](RunConfig& c, const std::string& v, const P&) { c.finetune_warmup = to_long("finetune.warmup_steps", v); },
        [](const RunConfig& c) { return std::to_string(c.finetune_warmup); });
    add("finetune.hold_steps",
        [](RunConfig& c, const std::string& v, const P&) { c.finetune_hold = to_long("finetune.hold_steps", v); },
        [](const RunConfig& c) { return std::to_string(c.finetune_hold); });
    add("finetune.decay_steps",
        [](RunConfig& c, const std::string& v, const P&) { c.finetune_decay = to_long("finetune.decay_steps", v); },
        [](const RunConfig& c) { return std::to_string(c.finetune_decay); });
    add("finetune.final_fraction",
        [](RunConfig& c, const std::string& v, const P&) {
          c.finetune_final_fraction = to_double("finetune.final_fraction", v);
        },
        [](const RunConfig& c) { return fmt(c.finetune_final_fraction); });
    add("finetune.mask_prob",
        [](RunConfig& c, const std::string& v, const P&) { c.finetune_mask_prob = to_double("finetune.mask_prob", v); },
        [](const RunConfig& c) { return fmt(c.finetune_mask_prob); });
    add("finetune.mask_span",
        [](RunConfig& c, const std::string& v, const P&) { c.finetune_mask_span = to_int("finetune.mask_span", v); },
        [](const RunConfig& c) { return std::to_string(c.finetune_mask_span); });
    add("finetune.batch_seconds",
        [](RunConfig& c, const std::string& v, const P&) {
          c.finetune_batch_seconds = to_double("finetune.batch_seconds", v);
        },
        [](const RunConfig& c) { return fmt(c.finetune_batch_seconds); });
    add("finetune.update_freq",
        [](RunConfig& c, const std::string& v, const P&) { c.finetune_update_freq = to_int("finetune.update_freq", v); },
        [](const RunConfig& c) { return std::to_string(c.finetune_update_freq); });
    add("finetune.guard_policy",
        [](RunConfig& c, const std::string& v, const P&) { c.guard_policy = parse_guard_policy(v); },
        [](const RunConfig& c) { return c.guard_policy ? std::string(to_string(*c.guard_policy)) : std::string(); });
    add("finetune.eval_interval",
        [](RunConfig& c, const std::string& v, const P&) { c.eval_interval = to_int("finetune.eval_interval", v); },
        [](const RunConfig& c) { return std::to_string(c.eval_interval); });

    add("tokenizer.kind", [](RunConfig& c, const std::string& v, const P&) { c.tokenizer = parse_tokenizer_kind(v); },
        [](const RunConfig& c) { return std::string(to_string(c.tokenizer)); });
    add("tokenizer.vocab_size",
        [](RunConfig& c, const std::string& v, const P&) { c.vocab_size = to_int("tokenizer.vocab_size", v); },
        [](const RunConfig& c) { return std::to_string(c.vocab_size); });
    add("decode.beam", [](RunConfig& c, const std::string& v, const P&) { c.beam = to_int("decode.beam", v); },
        [](const RunConfig& c) { return std::to_string(c.beam); });

    add("data.train_manifest", [](RunConfig& c, const std::string& v, const P& b) { c.train_manifest = resolve(b, v); },
        [](const RunConfig& c) { return c.train_manifest.string(); });
    add("data.train_transcripts",
        [](RunConfig& c, const std::string& v, const P& b) { c.train_transcripts = resolve(b, v); },
        [](const RunConfig& c) { return c.train_transcripts.string(); });
    add("data.dev_manifest", [](RunConfig& c, const std::string& v, const P& b) { c.dev_manifest = resolve(b, v); },
        [](const RunConfig& c) { return c.dev_manifest.string(); });
    add("data.dev_transcripts", [](RunConfig& c, const std::string& v, const P& b) { c.dev_transcripts = resolve(b, v); },
        [](const RunConfig& c) { return c.dev_transcripts.string(); });

    add("run.seed",
        [](RunConfig& c, const std::string& v, const P&) { c.seed = static_cast<std::uint64_t>(to_long("run.seed", v)); },
        [](const RunConfig& c) { return std::to_string(c.seed); });
    add("run.deterministic", [](RunConfig& c, const std::string& v, const P&) { c.deterministic = to_bool("run.deterministic", v); },
        [](const RunConfig& c) { return std::string(c.deterministic ? "true" : "false"); });
    add("profile.enabled", [](RunConfig& c, const std::string& v, const P&) { c.profile = to_bool("profile.enabled", v); },
        [](const RunConfig& c) { return std::string(c.profile ? "true" : "false"); });
    add("profile.window", [](RunConfig& c, const std::string& v, const P&) { c.profile_window = to_int("profile.window", v); },
        [](const RunConfig& c) { return std::to_string(c.profile_window); });
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value,
                   const std::filesystem::path& base_dir) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(cfg, value, base_dir);
}

RunConfig parse_config(const std::string& text, const std::string& source, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      apply_setting(cfg, key, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string(), path.parent_path());
}

void RunConfig::validate() const {
  if (!num_classes)
    throw ConfigError(std::string("loss.num_classes is required with loss.kind = ") + to_string(model.loss));
  if (label_source == LabelSource::phoneme && *num_classes != kPhonemeClasses)
    throw ConfigError("labels.source = phoneme needs loss.num_classes = " + std::to_string(kPhonemeClasses));
  if (model.frontend == FrontendKind::fbank && model.frameshift_ms != 20 && model.frameshift_ms != 40 &&
      model.frameshift_ms != 80)
    throw ConfigError("model.frameshift_ms must be 20, 40 or 80 with model.frontend = fbank");
  for (int l : model.encoder.ils_layers)
    if (l < 1 || l > model.encoder.num_layers)
      throw ConfigError("encoder.ils_layers entry " + std::to_string(l) + " lies outside encoder.layers = " +
                        std::to_string(model.encoder.num_layers));
  if (model.frontend == FrontendKind::fbank && model.frameshift_ms == 80 && tokenizer == TokenizerKind::character &&
      !guard_policy)
    throw ConfigError(
        "model.frameshift_ms = 80 with tokenizer.kind = char needs finetune.guard_policy set to skip or fail");
  if (tokenizer == TokenizerKind::subword && vocab_size < 2) throw ConfigError("tokenizer.vocab_size must be at least 2");
  if (kmeans_iters < 1) throw ConfigError("kmeans.iters must be positive");
  if (kmeans_layer < 0 || kmeans_layer > model.encoder.num_layers)
    throw ConfigError("kmeans.layer must lie in [0, encoder.layers]");
  if (checkpoint_interval < 0) throw ConfigError("pretrain.checkpoint_interval must be non-negative");
  pretrain().validate();
  finetune().validate();
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig p;
  p.model = model;
  if (num_classes) p.model.num_classes = *num_classes;
  p.mask = mask;
  if (!mask_placement_set)
    p.mask.placement = model.frontend == FrontendKind::fbank ? MaskPlacement::pre : MaskPlacement::post;
  p.steps = pretrain_steps;
  p.schedule = LrSchedule::pretrain(pretrain_steps, pretrain_warmup, pretrain_peak_lr);
  p.batch_seconds = pretrain_batch_seconds;
  p.update_freq = pretrain_update_freq;
  p.seed = seed;
  p.deterministic = deterministic;
  p.profile = profile;
  p.profile_window = profile_window;
  return p;
}

FinetuneConfig RunConfig::finetune() const {
  FinetuneConfig f;
  f.model = model;
  if (num_classes) f.model.num_classes = *num_classes;
  f.mask.placement = pretrain().mask.placement;
  f.mask.prob = finetune_mask_prob;
  f.mask.span = finetune_mask_span;
  f.steps = finetune_steps;
  f.freeze_steps = freeze_steps;
  f.schedule = LrSchedule::finetune(finetune_warmup, finetune_hold, finetune_decay, finetune_peak_lr,
                                    finetune_final_fraction);
  f.batch_seconds = finetune_batch_seconds;
  f.update_freq = finetune_update_freq;
  f.guard = guard_policy.value_or(GuardPolicy::skip);
  f.seed = seed;
  f.deterministic = deterministic;
  f.profile = profile && !deterministic;
  f.eval_interval = eval_interval;
  f.beam = beam;
  return f;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : fields()) {
    const std::string v = f.get(*this);
    if (v.empty()) continue;
    out += key + " = " + v + "\n";
  }
  return out;
}

std::uint64_t RunConfig::hash() const {
  const std::string t = to_text();
  return fnv1a(t.data(), t.size());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream fields_in(line);
    ManifestEntry e;
    std::string audio, dur;
    if (!std::getline(fields_in, e.id, '\t') || !std::getline(fields_in, audio, '\t') || !std::getline(fields_in, dur))
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'utt_id<TAB>path<TAB>duration_s'");
    e.audio = resolve(path.parent_path(), trim(audio));
    e.duration_s = to_double(path.string() + ":" + std::to_string(lineno), trim(dur));
    if (!ids.insert(e.id).second) throw ConfigError(path.string() + ": duplicate utterance id '" + e.id + "'");
    if (!std::filesystem::exists(e.audio))
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": audio file not found: " + e.audio.string());
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ConfigError("manifest " + path.string() + " is empty");
  return out;
}

std::map<std::string, std::string> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open transcripts " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError(path.string() + ": expected 'utt_id<TAB>text'");
    const std::string id = line.substr(0, tab);
    if (!out.emplace(id, trim(line.substr(tab + 1))).second)
      throw ConfigError(path.string() + ": duplicate utterance id '" + id + "'");
  }
  return out;
}

}  // namespace sslab
