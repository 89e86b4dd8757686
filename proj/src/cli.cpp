#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "dutavc/evaluation.hpp"
#include "dutavc/log.hpp"
#include "dutavc/pipeline.hpp"
#include "dutavc/random.hpp"

namespace dutavc {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> set;
  std::string log_level = "info";
};

void add_common(CLI::App* cmd, CommonArgs& a, bool config_required) {
  auto* c = cmd->add_option("--config", a.config, "key = value configuration file");
  if (config_required) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "root seed (overrides the config)");
  cmd->add_option("--out", a.out, "output path");
  cmd->add_option("--set", a.set, "config override key=value (repeatable)");
  cmd->add_option("--log-level", a.log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
}

PipelineConfig resolve_config(const CommonArgs& a) {
  PipelineConfig cfg = load_pipeline_config(a.config);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  log_event(LogLevel::kInfo, "config", config_json(cfg));
  return cfg;
}

std::vector<ManifestEntry> require_manifest(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string(key) + " is not set");
  return read_manifest(path);
}

void log_training(const char* stage, const TrainLog& log, const std::string& path) {
  nlohmann::ordered_json f{{"steps", log.step_loss.size()}, {"checkpoint", path}};
  if (!log.step_loss.empty()) {
    f["first_loss"] = log.step_loss.front();
    f["last_loss"] = log.step_loss.back();
  }
  log_event(LogLevel::kInfo, stage, f);
}

int cmd_prepare_stats(const CommonArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  const auto typical = require_manifest(cfg.train_manifest, "paths.train_manifest");
  const auto atypical = cfg.target_manifest.empty() ? std::vector<ManifestEntry>{} : read_manifest(cfg.target_manifest);
  const StatsArtifacts s = prepare_stats(typical, atypical, cfg.mel);
  const std::string dir = a.out.empty() ? cfg.resolved_stats_dir() : a.out;
  save_stats(dir, s);
  log_event(LogLevel::kInfo, "prepare-stats.done",
            {{"dir", dir}, {"phonemes", s.sims.inventory.size()}, {"speakers", s.durations.speakers.size()}});
  return 0;
}

int cmd_train_encoder(const CommonArgs& a) {
  PipelineConfig cfg = resolve_config(a);
  const StatsArtifacts s = load_stats(cfg.resolved_stats_dir());
  const auto corpus = load_corpus(require_manifest(cfg.train_manifest, "paths.train_manifest"), cfg.mel, &s.sims.inventory);
  const std::string path = a.out.empty() ? cfg.resolved_encoder_path() : a.out;
  fs::create_directories(fs::absolute(path).parent_path());
  cfg.encoder_train.checkpoint_path = path;
  TrainLog log;
  run_train_encoder(cfg, corpus, s.sims, &log);
  log_training("train-encoder.done", log, path);
  return 0;
}

int cmd_train_decoder(const CommonArgs& a) {
  PipelineConfig cfg = resolve_config(a);
  const StatsArtifacts s = load_stats(cfg.resolved_stats_dir());
  const auto corpus = load_corpus(require_manifest(cfg.train_manifest, "paths.train_manifest"), cfg.mel, &s.sims.inventory);
  const auto provider = make_embedding_provider(cfg);
  const std::string path = a.out.empty() ? cfg.resolved_decoder_base_path() : a.out;
  fs::create_directories(fs::absolute(path).parent_path());
  cfg.decoder_train.checkpoint_path = path;
  TrainLog log;
  run_train_decoder(cfg, corpus, s.sims, *provider, &log);
  log_training("train-decoder.done", log, path);
  return 0;
}

int cmd_finetune(const CommonArgs& a, const std::string& target) {
  PipelineConfig cfg = resolve_config(a);
  const StatsArtifacts s = load_stats(cfg.resolved_stats_dir());
  std::vector<ManifestEntry> entries;
  for (const auto& e : require_manifest(cfg.target_manifest, "paths.target_manifest"))
    if (e.speaker_id == target) entries.push_back(e);
  if (entries.empty()) throw InvalidArgument("finetune: no utterances of speaker '" + target + "' in the target manifest");
  const auto corpus = load_corpus(entries, cfg.mel, &s.sims.inventory);
  const EncoderModel encoder = load_encoder(cfg.resolved_encoder_path());
  const DecoderModel base = load_decoder(cfg.resolved_decoder_base_path());
  const auto provider = make_embedding_provider(cfg);
  const std::string path = a.out.empty() ? cfg.decoder_path(target) : a.out;
  fs::create_directories(fs::absolute(path).parent_path());
  cfg.finetune_train.checkpoint_path = path;
  TrainLog log;
  run_finetune(cfg, base, corpus, target, encoder, s.sims, *provider, &log);
  log_training("finetune.done", log, path);
  return 0;
}

int cmd_convert(const CommonArgs& a, const std::string& source, const std::string& target) {
  const PipelineConfig cfg = resolve_config(a);
  if (a.out.empty()) throw ConfigError("convert requires --out");
  const PipelineHandle h = PipelineHandle::load(cfg);
  ConversionTrace trace;
  const Waveform out = convert_utterance(h, read_wav(source), target, derive_seed(cfg.seed, "convert", target),
                                         {cfg.sampler_steps, cfg.sampler_inject_noise}, &trace);
  write_wav(a.out, out);
  log_event(LogLevel::kInfo, "convert.done",
            {{"out", a.out}, {"target", target}, {"ratio", trace.duration.ratio}, {"frames", trace.converted.num_frames()}});
  return 0;
}

int cmd_augment(const CommonArgs& a, const std::string& manifest, std::vector<std::string> targets) {
  const PipelineConfig cfg = resolve_config(a);
  if (a.out.empty()) throw ConfigError("augment requires --out");
  const PipelineHandle h = PipelineHandle::load(cfg);
  if (targets.empty()) targets = h.targets();
  const ConversionOptions opts{cfg.sampler_steps, cfg.sampler_inject_noise};
  const Converter convert = [&](const Waveform& w, const std::string& target, std::uint64_t seed) {
    return convert_utterance(h, w, target, seed, opts);
  };
  const auto summary = generate_augmentation_set(read_manifest(manifest), targets, convert, a.out, cfg.seed);
  return summary.failures.empty() ? 0 : 1;
}

int cmd_evaluate(const CommonArgs& a, const std::string& control, const std::string& test) {
  if (!a.config.empty()) resolve_config(a);
  if (a.out.empty()) throw ConfigError("evaluate requires --out (report path prefix)");
  auto load = [](const std::string& path, std::map<std::string, std::string>* groups) {
    std::vector<EvalUtterance> out;
    for (const auto& e : read_manifest(path)) {
      out.push_back({e.id, e.speaker_id, e.word, read_wav(e.audio_path)});
      if (groups && e.group) (*groups)[e.speaker_id] = *e.group;
    }
    return out;
  };
  std::map<std::string, std::string> groups;
  const auto controls = load(control, nullptr);
  const auto tests = load(test, &groups);
  const MetricReport r = p_metric_report(controls, tests, groups);
  write_report(a.out + ".tsv", a.out + ".json", r);
  log_event(LogLevel::kInfo, "evaluate.done",
            {{"tsv", a.out + ".tsv"}, {"json", a.out + ".json"}, {"skipped", r.skipped.size()}});
  return 0;
}

LogLevel parse_level(const std::string& s) {
  if (s == "debug") return LogLevel::kDebug;
  if (s == "warn") return LogLevel::kWarn;
  if (s == "error") return LogLevel::kError;
  return LogLevel::kInfo;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Typical-to-atypical voice conversion with duration modification and diffusion decoding", "dutavc"};
  app.require_subcommand(1, 1);
  CommonArgs common;
  std::string source, target, manifest, control, test;
  std::vector<std::string> targets;

  auto* prep = app.add_subcommand("prepare-stats", "build the SIMS dictionary and duration statistics");
  add_common(prep, common, true);
  auto* tenc = app.add_subcommand("train-encoder", "train the content encoder on typical speech");
  add_common(tenc, common, true);
  auto* tdec = app.add_subcommand("train-decoder", "train the diffusion decoder on typical speech");
  add_common(tdec, common, true);
  auto* fine = app.add_subcommand("finetune", "fine-tune the decoder on one atypical speaker");
  add_common(fine, common, true);
  fine->add_option("--target", target, "target speaker id")->required();
  auto* conv = app.add_subcommand("convert", "convert one utterance toward a target speaker");
  add_common(conv, common, true);
  conv->add_option("--source", source, "source WAV")->required()->check(CLI::ExistingFile);
  conv->add_option("--target", target, "target speaker id")->required();
  auto* aug = app.add_subcommand("augment", "convert every manifest utterance toward every target");
  add_common(aug, common, true);
  aug->add_option("--manifest", manifest, "control manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  aug->add_option("--targets", targets, "target speakers (default: all fine-tuned)")->delimiter(',');
  auto* eval = app.add_subcommand("evaluate", "P-STOI / P-ESTOI report against control renditions");
  add_common(eval, common, false);
  eval->add_option("--control", control, "control manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--test", test, "test manifest (group keys give intelligibility groups)")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  set_log_level(parse_level(common.log_level));
  try {
    if (prep->parsed()) return cmd_prepare_stats(common);
    if (tenc->parsed()) return cmd_train_encoder(common);
    if (tdec->parsed()) return cmd_train_decoder(common);
    if (fine->parsed()) return cmd_finetune(common, target);
    if (conv->parsed()) return cmd_convert(common, source, target);
    if (aug->parsed()) return cmd_augment(common, manifest, targets);
    if (eval->parsed()) return cmd_evaluate(common, control, test);
  } catch (const ConfigError& e) {
    log_event(LogLevel::kError, "usage", {{"message", e.what()}});
    return 2;
  } catch (const std::exception& e) {
    log_event(LogLevel::kError, "failed", {{"message", e.what()}});
    return 1;
  }
  return 2;
}

}  // namespace dutavc
