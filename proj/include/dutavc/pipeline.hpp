#pragma once

// Configuration, stage drivers (statistics, encoder, decoder, fine-tuning),
// the assembled conversion handle and the batch command line.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dutavc/alignment.hpp"
#include "dutavc/audio.hpp"
#include "dutavc/diffusion.hpp"
#include "dutavc/duration.hpp"
#include "dutavc/encoder.hpp"
#include "dutavc/error.hpp"
#include "dutavc/manifest.hpp"
#include "dutavc/speaker.hpp"
#include "dutavc/training.hpp"

namespace dutavc {

/// Raised by convert_utterance; carries the name of the failing stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Invalid configuration text, unknown keys or out-of-range values.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct PipelineConfig {
  std::string preset = "desk";

  // Paths; empty artifact paths resolve under work_dir.
  std::string train_manifest;   // typical speech with alignments
  std::string target_manifest;  // atypical speech, alignments optional
  std::string work_dir = "work";
  std::string stats_dir;
  std::string encoder_path;
  std::string decoder_base_path;
  std::string decoder_dir;

  MelConfig mel;
  EncoderConfig encoder;
  TrainConfig encoder_train;
  EncoderLossWeights encoder_weights;
  DecoderConfig decoder;
  TrainConfig decoder_train;
  TrainConfig finetune_train;
  std::string finetune_prior = "predicted";  // or "ground_truth"
  StretchSpec stretch;
  int sampler_steps = 100;
  bool sampler_inject_noise = true;
  std::string embedding_provider = "builtin";  // or "file"
  std::string embedding_file;
  int embedding_dim = 256;
  int griffin_lim_iters = 60;
  double griffin_lim_momentum = 0.99;
  std::uint64_t seed = 0;

  std::string resolved_stats_dir() const;
  std::string resolved_encoder_path() const;
  std::string resolved_decoder_base_path() const;
  std::string resolved_decoder_dir() const;
  std::string decoder_path(const std::string& speaker) const;

  /// Propagates n_mels and the embedding width into the model configs and checks ranges.
  void validate();
};

/// "desk": small models and step budgets for a single CPU. "paper": published
/// architecture and optimiser settings (epochs, batch sizes, learning rates).
PipelineConfig pipeline_preset(const std::string& name);

/// Sets one key; throws ConfigError on unknown keys or unparsable values.
void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value, in documentation order.
std::vector<std::pair<std::string, std::string>> config_entries(const PipelineConfig& cfg);
nlohmann::ordered_json config_json(const PipelineConfig& cfg);

/// Parses "key = value" lines ('#' comments). A `preset` line is applied first;
/// duplicates are rejected. Relative paths resolve against `base_dir`.
PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir = ".",
                                     const std::string& source_name = "<config>");
PipelineConfig load_pipeline_config(const std::string& path);

// --- corpus and statistics -----------------------------------------------------

struct CorpusItem {
  ManifestEntry entry;
  Waveform audio;  // at the mel sample rate
  MelSpectrogram mel;
  std::optional<PhonemeAlignment> alignment;
  std::vector<PhonemeId> labels;  // frame labels when aligned
};

/// Reads, normalises and analyses every entry. Alignments are parsed when an
/// inventory is given and the entry has one.
std::vector<CorpusItem> load_corpus(const std::vector<ManifestEntry>& entries, const MelConfig& mel,
                                    const PhonemeInventory* inventory);

struct StatsArtifacts {
  SimsDictionary sims;      // typical speech only
  DurationStats durations;  // every aligned speaker
};

/// Inventory from the union of alignment labels, SIMS from the typical corpus,
/// duration statistics from every aligned utterance of both corpora.
StatsArtifacts prepare_stats(const std::vector<ManifestEntry>& typical, const std::vector<ManifestEntry>& atypical,
                             const MelConfig& mel);
void save_stats(const std::string& dir, const StatsArtifacts& s);
StatsArtifacts load_stats(const std::string& dir);

// --- training stages ---------------------------------------------------------------

EncoderModel run_train_encoder(const PipelineConfig& cfg, const std::vector<CorpusItem>& typical,
                               const SimsDictionary& sims, TrainLog* log = nullptr);

/// Conditioning used during decoder training: the full-utterance embedding of each item.
ConditionFn make_condition_fn(const SpeakerEmbeddingProvider& provider, const std::vector<CorpusItem>& items);

DecoderModel run_train_decoder(const PipelineConfig& cfg, const std::vector<CorpusItem>& typical,
                               const SimsDictionary& sims, const SpeakerEmbeddingProvider& provider,
                               TrainLog* log = nullptr);

/// Fine-tunes a copy of `base` on the target speaker's utterances. Priors come
/// from the frozen encoder ("predicted") or from alignments ("ground_truth").
/// Training and the stored target embedding both use the mean over the utterances.
DecoderModel run_finetune(const PipelineConfig& cfg, const DecoderModel& base, const std::vector<CorpusItem>& target,
                          const std::string& speaker, const EncoderModel& encoder, const SimsDictionary& sims,
                          const SpeakerEmbeddingProvider& provider, TrainLog* log = nullptr);

std::unique_ptr<SpeakerEmbeddingProvider> make_embedding_provider(const PipelineConfig& cfg);

// --- conversion --------------------------------------------------------------------

/// The assembled system. Components are checked for mutual compatibility
/// (inventory hashes, mel bins, embedding width) when added.
class PipelineHandle {
 public:
  PipelineHandle(EncoderModel encoder, SimsDictionary sims, DurationStats durations,
                 std::shared_ptr<const SpeakerEmbeddingProvider> provider, std::shared_ptr<const Vocoder> vocoder,
                 MelConfig mel = {}, StretchSpec stretch = {});

  /// Loads the encoder, statistics and every per-speaker decoder under the decoder directory.
  static PipelineHandle load(const PipelineConfig& cfg);

  void add_decoder(DecoderModel decoder);
  bool has_target(const std::string& speaker) const { return decoders_.count(speaker) > 0; }
  std::vector<std::string> targets() const;

  const EncoderModel& encoder() const { return encoder_; }
  const SimsDictionary& sims() const { return sims_; }
  const DurationStats& durations() const { return durations_; }
  const DecoderModel& decoder(const std::string& speaker) const;
  const SpeakerEmbeddingProvider& provider() const { return *provider_; }
  const Vocoder& vocoder() const { return *vocoder_; }
  const MelConfig& mel_config() const { return mel_; }
  const StretchSpec& stretch() const { return stretch_; }

 private:
  EncoderModel encoder_;
  SimsDictionary sims_;
  DurationStats durations_;
  std::shared_ptr<const SpeakerEmbeddingProvider> provider_;
  std::shared_ptr<const Vocoder> vocoder_;
  MelConfig mel_;
  StretchSpec stretch_;
  std::map<std::string, DecoderModel> decoders_;
};

struct ConversionOptions {
  int n_steps = 100;
  bool inject_noise = true;
};

struct ConversionTrace {
  DurationModification duration;
  MelSpectrogram prior;      // SIMS prediction of the stretched source
  MelSpectrogram converted;  // sampler output
};

/// mel -> encode -> duration query -> target mean duration -> tempo stretch ->
/// mel -> encode -> SIMS prior -> reverse diffusion with the target condition -> vocoder.
Waveform convert_utterance(const PipelineHandle& h, const Waveform& source, const std::string& target,
                           std::uint64_t seed, const ConversionOptions& opts = {}, ConversionTrace* trace = nullptr);

// --- command line ----------------------------------------------------------------------

/// Subcommands: prepare-stats, train-encoder, train-decoder, finetune, convert,
/// augment, evaluate. Returns 0 on success, 1 on failure, 2 on usage errors.
int cli_main(int argc, const char* const* argv);

}  // namespace dutavc
