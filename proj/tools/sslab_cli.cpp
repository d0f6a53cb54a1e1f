// SPDX-License-Identifier: Apache-2.0
//
// sslab command line: synth, extract, kmeans, pretrain, finetune, decode,
// score and compare. Exit codes: 0 success, 1 invalid input, 2 runtime error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "sslab/checkpoint.hpp"
#include "sslab/config.hpp"
#include "sslab/pipeline.hpp"
#include "sslab/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace sslab;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
  std::optional<long> steps;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

RunConfig load_run_config(const Globals& g, const std::string& path) {
  if (path.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_config(path);
  const fs::path base = fs::current_path();
  for (const std::string& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1), base);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.deterministic) cfg.deterministic = true;
  return cfg;
}

fs::path run_dir(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

void write_metadata(const fs::path& dir, const std::string& command, const RunConfig* cfg,
                    ordered_json extra = ordered_json::object()) {
  ordered_json j;
  j["tool"] = "sslab";
  j["version"] = kVersion;
  j["command"] = command;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["compiler"] = __VERSION__;
  if (cfg) {
    j["config_name"] = cfg->name;
    j["config_hash"] = hex64(cfg->hash());
    j["seed"] = cfg->seed;
    j["deterministic"] = cfg->deterministic;
  }
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_text(dir / "metadata.json", j.dump(2) + "\n");
  if (cfg) write_text(dir / "config.conf", cfg->to_text());
}

std::vector<Utterance> train_utterances(const RunConfig& cfg, bool transcripts) {
  if (cfg.train_manifest.empty()) throw ConfigError("data.train_manifest is required");
  const auto manifest = read_manifest(cfg.train_manifest);
  if (!transcripts) return load_utterances(manifest);
  if (cfg.train_transcripts.empty()) throw ConfigError("data.train_transcripts is required");
  const auto text = read_transcripts(cfg.train_transcripts);
  return load_utterances(manifest, nullptr, &text);
}

void write_profile(const fs::path& dir, const std::string& name, Profiler& profiler) {
  const TimingReport report = profiler.report();
  write_text(dir / "profile.json", report.to_json().dump(2) + "\n");
  write_text(dir / "profile.txt", report.to_table(name));
  write_text(dir / "profile.csv", report.to_csv());
  write_proportions_svg(dir / "profile.svg", {{name, report}});
  std::cout << report.to_table(name);
}

// --- subcommands ---------------------------------------------------------------

int cmd_synth(const Globals& g, int n, const std::string& mode) {
  if (n < 1) throw ConfigError("--n must be at least 1");
  SynthOptions opts;
  if (mode == "words")
    opts.mode = SynthMode::words;
  else if (mode == "tones")
    opts.mode = SynthMode::tones;
  else
    throw ConfigError("--mode must be 'words' or 'tones'");
  const std::uint64_t seed = g.seed.value_or(1);
  const fs::path dir = run_dir(g);
  write_corpus(dir, synthesize_corpus(n, seed, opts));
  write_metadata(dir, "synth", nullptr, {{"utterances", n}, {"seed", seed}, {"mode", mode}});
  std::cout << "wrote " << n << " utterances to " << dir.string() << '\n';
  return 0;
}

int cmd_extract(const Globals& g, const std::string& manifest_path, const std::string& kind) {
  if (kind != "fbank" && kind != "mfcc") throw ConfigError("--kind must be 'fbank' or 'mfcc'");
  // Validation of every entry happens here, before anything is extracted.
  const auto manifest = read_manifest(manifest_path);
  const fs::path dir = run_dir(g);
  write_metadata(dir, "extract", nullptr, {{"manifest", manifest_path}, {"kind", kind}});
  std::size_t written = 0, skipped = 0, failed = 0;
  for (const ManifestEntry& e : manifest) {
    const fs::path out = dir / (e.id + "." + kind);
    if (fs::exists(out) && fs::last_write_time(out) >= fs::last_write_time(e.audio)) {
      ++skipped;
      continue;
    }
    try {
      const Waveform w = read_wav(e.audio);
      const FeatureSequence f = kind == "fbank" ? fbank(w) : mfcc39(w);
      write_features(out, f);
      std::cout << e.id << " T=" << f.num_frames() << '\n';
      ++written;
    } catch (const Error& ex) {
      std::cerr << "error: " << e.id << ": " << ex.what() << '\n';
      ++failed;
    }
  }
  std::cout << "extracted " << written << ", up to date " << skipped << ", failed " << failed << '\n';
  return failed == 0 ? 0 : 2;
}

int cmd_kmeans(const Globals& g) {
  RunConfig cfg = load_run_config(g, g.config);
  cfg.validate();
  if (cfg.label_source != LabelSource::kmeans) throw ConfigError("kmeans needs labels.source = kmeans");
  const fs::path dir = run_dir(g);
  write_metadata(dir, "kmeans", &cfg);
  const auto utts = train_utterances(cfg, false);
  KmeansLabels k;
  if (cfg.kmeans_features == KmeansFeatures::latent) {
    if (cfg.kmeans_checkpoint.empty()) throw ConfigError("kmeans.features = latent needs kmeans.checkpoint");
    k = latent_kmeans_labels(utts, cfg.pretrain().model, load_checkpoint(cfg.kmeans_checkpoint), cfg.kmeans_layer,
                             *cfg.num_classes, cfg.kmeans_iters, cfg.seed);
  } else {
    k = mfcc_kmeans_labels(utts, *cfg.num_classes, cfg.kmeans_iters, cfg.seed);
  }
  write_label_file(dir / "labels.lab", k.labels);
  write_codebook(dir / "codebook.bin", k.fit.codebook);
  ordered_json j;
  j["clusters"] = k.fit.codebook.size();
  j["iterations"] = k.fit.iterations;
  j["converged"] = k.fit.converged;
  j["distortion"] = k.fit.distortion;
  write_text(dir / "kmeans.json", j.dump(2) + "\n");
  std::cout << "k-means: " << k.fit.codebook.size() << " clusters, " << k.fit.iterations << " iterations, final distortion "
            << (k.fit.distortion.empty() ? 0.0 : k.fit.distortion.back()) << '\n';
  return 0;
}

int cmd_pretrain(const Globals& g, const std::string& resume) {
  RunConfig cfg = load_run_config(g, g.config);
  if (g.steps) cfg.pretrain_steps = *g.steps;
  cfg.validate();
  const fs::path dir = run_dir(g);
  write_metadata(dir, "pretrain", &cfg);
  auto utts = train_utterances(cfg, false);
  attach_labels(utts, labels_for(cfg, utts));

  const PretrainConfig pc = cfg.pretrain();
  Pretrainer trainer(pc, std::move(utts));
  const std::string text = cfg.to_text();
  const std::uint64_t hash = cfg.hash();
  if (!resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume);
    if (ckpt.config_hash != hash) throw ConfigError("resume checkpoint was written under a different config");
    trainer.restore(ckpt);
  }

  std::ofstream metrics(dir / "metrics.ndjson", resume.empty() ? std::ios::trunc : std::ios::app);
  const long interval = cfg.checkpoint_interval > 0 ? cfg.checkpoint_interval : pc.steps;
  while (trainer.step_count() < pc.steps) {
    const long target = std::min(pc.steps, (trainer.step_count() / interval + 1) * interval);
    trainer.run(target, &metrics);
    metrics.flush();
    save_checkpoint(dir / ("step_" + std::to_string(trainer.step_count()) + ".ckpt"), trainer.checkpoint(text, hash));
  }
  save_checkpoint(dir / "final.ckpt", trainer.checkpoint(text, hash));
  const double acc = trainer.evaluate(cfg.seed + 1);
  write_text(dir / "summary.json", ordered_json{{"steps", trainer.step_count()}, {"masked_accuracy", acc}}.dump(2) + "\n");
  std::cout << "pretrain: " << trainer.step_count() << " steps, masked accuracy " << acc << '\n';
  if (pc.profile && !pc.deterministic && trainer.profiler().steps() > 0) write_profile(dir, cfg.name, trainer.profiler());
  return 0;
}

int cmd_finetune(const Globals& g, const std::string& init) {
  RunConfig cfg = load_run_config(g, g.config);
  if (g.steps) cfg.finetune_steps = *g.steps;
  cfg.validate();
  const fs::path dir = run_dir(g);
  write_metadata(dir, "finetune", &cfg, {{"init", init}});
  auto train = train_utterances(cfg, true);
  std::vector<Utterance> dev;
  if (!cfg.dev_manifest.empty()) {
    if (cfg.dev_transcripts.empty()) throw ConfigError("data.dev_manifest needs data.dev_transcripts");
    const auto text = read_transcripts(cfg.dev_transcripts);
    dev = load_utterances(read_manifest(cfg.dev_manifest), nullptr, &text);
  }
  std::vector<std::string> corpus;
  for (const Utterance& u : train) corpus.push_back(u.transcript);
  const Tokenizer tok = train_tokenizer(cfg.tokenizer, corpus, cfg.vocab_size);
  tok.save(dir / "tokenizer.txt");

  std::optional<Checkpoint> pretrained;
  if (!init.empty()) pretrained = load_checkpoint(init);
  Finetuner ft(cfg.finetune(), tok, std::move(train), std::move(dev), pretrained ? &*pretrained : nullptr);
  const std::string text = cfg.to_text();
  const std::uint64_t hash = cfg.hash();

  std::ofstream metrics(dir / "metrics.ndjson");
  ft.run(cfg.finetune_steps, &metrics);
  save_checkpoint(dir / "final.ckpt", ft.checkpoint(text, hash));
  if (auto best = ft.best_checkpoint(text, hash)) save_checkpoint(dir / "best.ckpt", *best);

  ordered_json summary;
  summary["steps"] = ft.step_count();
  summary["guard_violations"] = ft.guard_violations();
  summary["violating_ids"] = ft.violating_ids();
  if (ft.best_dev_wer()) summary["best_dev_wer"] = *ft.best_dev_wer();
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "finetune: " << ft.step_count() << " steps, " << ft.guard_violations() << " guard violation(s)";
  if (ft.best_dev_wer()) std::cout << ", best dev WER " << *ft.best_dev_wer();
  std::cout << '\n';
  return 0;
}

int cmd_decode(const Globals& g, const std::string& ckpt_path, std::string manifest, int beam) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = parse_config(ckpt.config_text, ckpt_path);
  if (!g.config.empty()) cfg = load_run_config(g, g.config);
  if (manifest.empty()) manifest = cfg.dev_manifest.string();
  if (manifest.empty()) throw ConfigError("decode needs --manifest or data.dev_manifest");
  if (beam < 1) beam = cfg.beam;
  const auto utts = load_utterances(read_manifest(manifest));
  Recognizer rec(cfg.finetune().model, ckpt);
  const fs::path dir = run_dir(g);
  write_metadata(dir, "decode", &cfg, {{"checkpoint", ckpt_path}, {"manifest", manifest}, {"beam", beam}});
  std::ofstream hyp(dir / "hyp.tsv");
  for (const Utterance& u : utts) hyp << u.id << '\t' << rec.transcribe(u, beam) << '\n';
  std::cout << "decoded " << utts.size() << " utterances to " << (dir / "hyp.tsv").string() << '\n';
  return 0;
}

int cmd_score(const Globals& g, const std::string& hyp_path, const std::string& ref_path) {
  const auto hyp = read_transcripts(hyp_path);
  const auto ref = read_transcripts(ref_path);
  std::size_t errors = 0, words = 0;
  for (const auto& [id, text] : ref) {
    auto it = hyp.find(id);
    if (it == hyp.end()) throw Error("no hypothesis for utterance " + id);
    const auto r = split_words(text);
    errors += edit_distance(split_words(it->second), r);
    words += r.size();
  }
  if (words == 0) throw Error("empty reference");
  const double w = static_cast<double>(errors) / static_cast<double>(words);
  std::printf("WER %.4f (%zu errors / %zu words)\n", w, errors, words);
  if (!g.out.empty()) {
    const fs::path dir = run_dir(g);
    write_metadata(dir, "score", nullptr);
    write_text(dir / "score.json",
               ordered_json{{"wer", w}, {"errors", errors}, {"words", words}, {"utterances", ref.size()}}.dump(2) + "\n");
  }
  return 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cmd_compare(const Globals& g, const std::string& against, long warmup) {
  RunConfig a = load_run_config(g, g.config);
  RunConfig b = load_run_config(g, against);
  a.validate();
  b.validate();
  if (a.train_manifest.empty() || b.train_manifest.empty()) throw ConfigError("data.train_manifest is required");
  if (slurp(a.train_manifest) != slurp(b.train_manifest))
    throw ConfigError("compare needs both configs on the same data; data.train_manifest differs");
  const long steps = g.steps.value_or(200);
  const fs::path dir = run_dir(g);
  write_metadata(dir, "compare", &a, {{"against", b.name}, {"against_hash", hex64(b.hash())}, {"steps", steps}});

  auto data_a = train_utterances(a, false);
  auto data_b = data_a;
  attach_labels(data_a, labels_for(a, data_a));
  attach_labels(data_b, labels_for(b, data_b));
  PretrainConfig pa = a.pretrain(), pb = b.pretrain();
  pa.profile_window = pb.profile_window = static_cast<int>(steps);
  const Comparison c = compare_pretraining(a.name, pa, data_a, b.name, pb, data_b, steps, warmup);
  write_text(dir / "comparison.json", c.to_json().dump(2) + "\n");
  write_text(dir / "comparison.txt", c.to_table());
  write_proportions_svg(dir / "comparison.svg", {{c.name_a, c.a}, {c.name_b, c.b}});
  std::cout << c.to_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sslab: desk-scale self-supervised speech pre-training"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);
  Globals g;
  app.add_option("--config", g.config, "Run config file");
  app.add_option("--set", g.sets, "Config override key=value (repeatable)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_flag("--deterministic", g.deterministic, "Deterministic mode: no timing in logs");
  app.add_option("--out", g.out, "Output run directory");
  app.add_option("--steps", g.steps, "Number of updates");

  int synth_n = 20;
  std::string synth_mode = "words";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--n", synth_n, "Number of utterances");
  synth->add_option("--mode", synth_mode, "words or tones");

  std::string manifest, kind = "fbank";
  auto* extract = app.add_subcommand("extract", "Extract features offline");
  extract->add_option("--manifest", manifest, "Manifest file")->required();
  extract->add_option("--kind", kind, "fbank or mfcc");

  auto* kmeans = app.add_subcommand("kmeans", "Fit k-means and write frame labels");

  std::string resume;
  auto* pretrain = app.add_subcommand("pretrain", "Masked-prediction pre-training");
  pretrain->add_option("--resume", resume, "Checkpoint to resume from");

  std::string init;
  auto* finetune = app.add_subcommand("finetune", "CTC fine-tuning");
  finetune->add_option("--init", init, "Pre-trained checkpoint");

  std::string ckpt;
  int beam = 0;
  auto* decode = app.add_subcommand("decode", "Transcribe a manifest");
  decode->add_option("--checkpoint", ckpt, "Fine-tuned checkpoint")->required();
  decode->add_option("--manifest", manifest, "Manifest (default: data.dev_manifest)");
  decode->add_option("--beam", beam, "Beam width (default: decode.beam)");

  std::string hyp, ref;
  auto* score = app.add_subcommand("score", "Word error rate of hypotheses");
  score->add_option("--hyp", hyp, "Hypotheses, id<TAB>text")->required();
  score->add_option("--ref", ref, "References, id<TAB>text")->required();

  std::string against;
  long warmup = 5;
  auto* compare = app.add_subcommand("compare", "Per-stage timing of two configs");
  compare->add_option("--against", against, "Second config")->required();
  compare->add_option("--warmup", warmup, "Untimed warm-up updates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(g, synth_n, synth_mode);
    if (*extract) return cmd_extract(g, manifest, kind);
    if (*kmeans) return cmd_kmeans(g);
    if (*pretrain) return cmd_pretrain(g, resume);
    if (*finetune) return cmd_finetune(g, init);
    if (*decode) return cmd_decode(g, ckpt, manifest, beam);
    if (*score) return cmd_score(g, hyp, ref);
    if (*compare) return cmd_compare(g, against, warmup);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
