#include "dutavc/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "dutavc/log.hpp"
#include "dutavc/random.hpp"

namespace dutavc {

namespace fs = std::filesystem;

// --- configuration -------------------------------------------------------------------

namespace {

std::string under(const std::string& explicit_path, const std::string& work_dir, const std::string& name) {
  return explicit_path.empty() ? (fs::path(work_dir) / name).string() : explicit_path;
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) { return static_cast<int>(parse_long(key, v)); }

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used, 0);
    if (used == v.size() && v.front() != '-') return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size() && std::isfinite(x)) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    out.push_back(parse_int(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* key;
  bool is_path;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define DUTAVC_STR_FIELD(KEY, MEMBER, PATH)                                                               \
  Field{KEY, PATH, [](PipelineConfig& c, const std::string&, const std::string& v) { c.MEMBER = v; }, \
        [](const PipelineConfig& c) { return c.MEMBER; }}
#define DUTAVC_INT_FIELD(KEY, MEMBER)                                                                          \
  Field{KEY, false, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_int(k, v); }, \
        [](const PipelineConfig& c) { return std::to_string(c.MEMBER); }}
#define DUTAVC_LONG_FIELD(KEY, MEMBER)                                                                           \
  Field{KEY, false, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_long(k, v); }, \
        [](const PipelineConfig& c) { return std::to_string(c.MEMBER); }}
#define DUTAVC_DBL_FIELD(KEY, MEMBER)                                                                              \
  Field{KEY, false, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_double(k, v); }, \
        [](const PipelineConfig& c) { return fmt(c.MEMBER); }}
#define DUTAVC_BOOL_FIELD(KEY, MEMBER)                                                                           \
  Field{KEY, false, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_bool(k, v); }, \
        [](const PipelineConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }}
#define DUTAVC_TRAIN_FIELDS(PREFIX, MEMBER)                                          \
  DUTAVC_DBL_FIELD(PREFIX ".lr", MEMBER.learning_rate), DUTAVC_INT_FIELD(PREFIX ".batch_size", MEMBER.batch_size), \
      DUTAVC_INT_FIELD(PREFIX ".epochs", MEMBER.epochs), DUTAVC_LONG_FIELD(PREFIX ".max_steps", MEMBER.max_steps), \
      DUTAVC_DBL_FIELD(PREFIX ".clip_grad_norm", MEMBER.clip_grad_norm)

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"preset", false, [](PipelineConfig&, const std::string&, const std::string&) {},
            [](const PipelineConfig& c) { return c.preset; }},
      DUTAVC_STR_FIELD("paths.train_manifest", train_manifest, true),
      DUTAVC_STR_FIELD("paths.target_manifest", target_manifest, true),
      DUTAVC_STR_FIELD("paths.work_dir", work_dir, true),
      DUTAVC_STR_FIELD("paths.stats_dir", stats_dir, true),
      DUTAVC_STR_FIELD("paths.encoder", encoder_path, true),
      DUTAVC_STR_FIELD("paths.decoder_base", decoder_base_path, true),
      DUTAVC_STR_FIELD("paths.decoder_dir", decoder_dir, true),
      DUTAVC_INT_FIELD("mel.sample_rate_hz", mel.sample_rate_hz),
      DUTAVC_INT_FIELD("mel.n_fft", mel.n_fft),
      DUTAVC_INT_FIELD("mel.win_length", mel.win_length),
      DUTAVC_INT_FIELD("mel.hop_length", mel.hop_length),
      DUTAVC_INT_FIELD("mel.n_mels", mel.n_mels),
      DUTAVC_DBL_FIELD("mel.fmin_hz", mel.fmin_hz),
      DUTAVC_DBL_FIELD("mel.fmax_hz", mel.fmax_hz),
      DUTAVC_DBL_FIELD("schedule.beta0", decoder.schedule.beta0),
      DUTAVC_DBL_FIELD("schedule.beta1", decoder.schedule.beta1),
      DUTAVC_INT_FIELD("encoder.d_model", encoder.d_model),
      DUTAVC_INT_FIELD("encoder.n_heads", encoder.n_heads),
      DUTAVC_INT_FIELD("encoder.d_ff", encoder.d_ff),
      DUTAVC_INT_FIELD("encoder.n_blocks", encoder.n_blocks),
      DUTAVC_INT_FIELD("encoder.prenet_kernel", encoder.prenet_kernel),
      DUTAVC_INT_FIELD("encoder.ffn_kernel", encoder.ffn_kernel),
      DUTAVC_INT_FIELD("encoder.predictor_channels", encoder.predictor_channels),
      DUTAVC_INT_FIELD("encoder.predictor_kernel", encoder.predictor_kernel),
      DUTAVC_TRAIN_FIELDS("encoder", encoder_train),
      DUTAVC_DBL_FIELD("encoder.lambda_phoneme", encoder_weights.phoneme),
      DUTAVC_DBL_FIELD("encoder.lambda_duration", encoder_weights.duration),
      DUTAVC_INT_FIELD("decoder.base_channels", decoder.base_channels),
      Field{"decoder.channel_mults", false,
            [](PipelineConfig& c, const std::string& k, const std::string& v) { c.decoder.channel_mults = parse_int_list(k, v); },
            [](const PipelineConfig& c) { return join(c.decoder.channel_mults); }},
      DUTAVC_INT_FIELD("decoder.groups", decoder.groups),
      DUTAVC_INT_FIELD("decoder.cond_channels", decoder.cond_channels),
      DUTAVC_INT_FIELD("decoder.cond_hidden", decoder.cond_hidden),
      DUTAVC_INT_FIELD("decoder.time_pe_dim", decoder.time_pe_dim),
      DUTAVC_INT_FIELD("decoder.crop_frames", decoder.crop_frames),
      DUTAVC_DBL_FIELD("decoder.sigma_data", decoder.sigma_data),
      DUTAVC_TRAIN_FIELDS("decoder", decoder_train),
      DUTAVC_TRAIN_FIELDS("finetune", finetune_train),
      DUTAVC_STR_FIELD("finetune.prior", finetune_prior, false),
      DUTAVC_DBL_FIELD("duration.window_s", stretch.window_s),
      DUTAVC_DBL_FIELD("duration.tolerance_s", stretch.tolerance_s),
      DUTAVC_INT_FIELD("sampler.n_steps", sampler_steps),
      DUTAVC_BOOL_FIELD("sampler.inject_noise", sampler_inject_noise),
      DUTAVC_STR_FIELD("embedding.provider", embedding_provider, false),
      DUTAVC_STR_FIELD("embedding.file", embedding_file, true),
      DUTAVC_INT_FIELD("embedding.dim", embedding_dim),
      DUTAVC_INT_FIELD("vocoder.griffin_lim_iters", griffin_lim_iters),
      DUTAVC_DBL_FIELD("vocoder.momentum", griffin_lim_momentum),
      Field{"seed", false, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
            [](const PipelineConfig& c) { return std::to_string(c.seed); }},
  };
  return f;
}

#undef DUTAVC_STR_FIELD
#undef DUTAVC_INT_FIELD
#undef DUTAVC_LONG_FIELD
#undef DUTAVC_DBL_FIELD
#undef DUTAVC_BOOL_FIELD
#undef DUTAVC_TRAIN_FIELDS

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

}  // namespace

std::string PipelineConfig::resolved_stats_dir() const { return under(stats_dir, work_dir, "stats"); }
std::string PipelineConfig::resolved_encoder_path() const { return under(encoder_path, work_dir, "encoder.ckpt"); }
std::string PipelineConfig::resolved_decoder_base_path() const {
  return under(decoder_base_path, work_dir, "decoder_base.ckpt");
}
std::string PipelineConfig::resolved_decoder_dir() const { return under(decoder_dir, work_dir, "decoders"); }
std::string PipelineConfig::decoder_path(const std::string& speaker) const {
  return (fs::path(resolved_decoder_dir()) / (speaker + ".ckpt")).string();
}

void PipelineConfig::validate() {
  try {
    mel.validate();
    encoder.n_mels = mel.n_mels;
    decoder.n_mels = mel.n_mels;
    decoder.embed_dim = embedding_dim;
    encoder.validate();
    decoder.validate();
    stretch.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  for (const TrainConfig* t : {&encoder_train, &decoder_train, &finetune_train})
    if (t->batch_size < 1 || t->learning_rate < 0.0 || (t->epochs < 1 && t->max_steps < 1))
      throw ConfigError("invalid configuration: training needs batch_size >= 1, lr >= 0 and a step budget");
  if (finetune_prior != "predicted" && finetune_prior != "ground_truth")
    throw ConfigError("finetune.prior must be 'predicted' or 'ground_truth'");
  if (embedding_provider != "builtin" && embedding_provider != "file")
    throw ConfigError("embedding.provider must be 'builtin' or 'file'");
  if (embedding_provider == "file" && embedding_file.empty())
    throw ConfigError("embedding.provider = file requires embedding.file");
  if (embedding_dim < 1) throw ConfigError("embedding.dim must be positive");
  if (sampler_steps < 1) throw ConfigError("sampler.n_steps must be >= 1");
  if (griffin_lim_iters < 1) throw ConfigError("vocoder.griffin_lim_iters must be >= 1");
}

PipelineConfig pipeline_preset(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  if (name == "paper") {
    c.encoder_train = {5e-4, 128, 200, 0, 1.0, 0, {}};
    c.decoder_train = {1e-4, 32, 100, 0, 1.0, 0, {}};
    c.finetune_train = {5e-5, 32, 30, 0, 1.0, 0, {}};
    c.sampler_steps = 100;
  } else if (name == "desk") {
    c.encoder.d_model = 64;
    c.encoder.n_heads = 2;
    c.encoder.d_ff = 128;
    c.encoder.n_blocks = 2;
    c.encoder.predictor_channels = 64;
    c.encoder_train = {1e-3, 4, 1, 1500, 1.0, 0, {}};
    c.decoder.base_channels = 8;
    c.decoder.channel_mults = {1, 2, 2};
    c.decoder.groups = 4;
    c.decoder.cond_channels = 16;
    c.decoder.cond_hidden = 64;
    c.decoder.time_pe_dim = 16;
    c.decoder.crop_frames = 64;
    c.decoder.sigma_data = 1.0;
    c.decoder_train = {2e-3, 2, 1, 1500, 1.0, 0, {}};
    c.finetune_train = {1e-3, 2, 1, 600, 1.0, 0, {}};
    c.sampler_steps = 50;
    c.griffin_lim_iters = 32;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
  }
  return c;
}

void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") throw ConfigError("preset can only be chosen once, before other keys");
  find_field(key).set(cfg, key, value);
}

std::vector<std::pair<std::string, std::string>> config_entries(const PipelineConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

nlohmann::ordered_json config_json(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : config_entries(cfg)) j[k] = v;
  return j;
}

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir,
                                     const std::string& source_name) {
  std::vector<std::tuple<std::string, std::string, int>> settings;
  std::set<std::string> seen;
  std::string preset = "desk";
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source_name + ":" + std::to_string(line_no);
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      find_field(key);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (key == "preset") preset = value;
    else settings.emplace_back(key, value, line_no);
  }
  PipelineConfig cfg = pipeline_preset(preset);
  for (const auto& [key, value, no] : settings) {
    const Field& f = find_field(key);
    std::string v = value;
    if (f.is_path && !v.empty() && fs::path(v).is_relative()) v = (fs::path(base_dir) / v).lexically_normal().string();
    try {
      f.set(cfg, key, v);
    } catch (const ConfigError& e) {
      throw ConfigError(source_name + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  if (!seen.count("paths.work_dir")) cfg.work_dir = (fs::path(base_dir) / cfg.work_dir).lexically_normal().string();
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string dir = fs::path(path).parent_path().string();
  return parse_pipeline_config(ss.str(), dir.empty() ? "." : dir, path);
}

// --- corpus and statistics ----------------------------------------------------------

std::vector<CorpusItem> load_corpus(const std::vector<ManifestEntry>& entries, const MelConfig& mel,
                                    const PhonemeInventory* inventory) {
  std::vector<CorpusItem> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    CorpusItem item;
    item.entry = e;
    try {
      Waveform w = normalize_ingested(read_wav(e.audio_path));
      item.audio = w.sample_rate_hz == mel.sample_rate_hz ? std::move(w) : resample(w, mel.sample_rate_hz);
      item.mel = mel_spectrogram(item.audio, mel);
      if (inventory && e.alignment_path) {
        item.alignment = parse_alignment(*e.alignment_path, *inventory);
        item.labels = frame_labels(*item.alignment, item.mel.num_frames(), mel.hop_s());
      }
    } catch (const Error& ex) {
      throw Error("utterance '" + e.id + "': " + ex.what());
    }
    out.push_back(std::move(item));
  }
  return out;
}

StatsArtifacts prepare_stats(const std::vector<ManifestEntry>& typical, const std::vector<ManifestEntry>& atypical,
                             const MelConfig& mel) {
  std::vector<std::string> label_files;
  for (const auto* list : {&typical, &atypical})
    for (const auto& e : *list)
      if (e.alignment_path) label_files.push_back(*e.alignment_path);
  for (const auto& e : typical)
    if (!e.alignment_path) throw InvalidArgument("prepare-stats: typical utterance '" + e.id + "' has no alignment");
  const PhonemeInventory inventory(collect_alignment_labels(label_files));

  const auto corpus = load_corpus(typical, mel, &inventory);
  std::vector<LabeledMel> labeled;
  for (const auto& c : corpus) labeled.push_back({&c.mel, &c.labels});
  StatsArtifacts s;
  s.sims = build_sims_dictionary(labeled, inventory);

  std::vector<PhonemeAlignment> alignments;
  std::vector<std::string> speakers;
  for (const auto* list : {&typical, &atypical})
    for (const auto& e : *list)
      if (e.alignment_path) {
        alignments.push_back(parse_alignment(*e.alignment_path, inventory));
        speakers.push_back(e.speaker_id);
      }
  std::vector<SpeakerAlignment> spk;
  for (std::size_t i = 0; i < alignments.size(); ++i) spk.push_back({speakers[i], &alignments[i]});
  s.durations = build_duration_stats(spk, inventory);
  return s;
}

void save_stats(const std::string& dir, const StatsArtifacts& s) {
  fs::create_directories(dir);
  write_sims_dictionary((fs::path(dir) / "sims.bin").string(), s.sims);
  write_duration_stats((fs::path(dir) / "durations.bin").string(), s.durations);
}

StatsArtifacts load_stats(const std::string& dir) {
  StatsArtifacts s{read_sims_dictionary((fs::path(dir) / "sims.bin").string()),
                   read_duration_stats((fs::path(dir) / "durations.bin").string())};
  if (!(s.sims.inventory == s.durations.inventory))
    throw FormatError(dir + ": SIMS dictionary and duration statistics use different inventories");
  return s;
}

// --- training stages -------------------------------------------------------------------

namespace {

TrainConfig seeded(TrainConfig t, std::uint64_t root, std::string_view stage, std::string_view item = {}) {
  t.seed = derive_seed(root, stage, item);
  return t;
}

}  // namespace

EncoderModel run_train_encoder(const PipelineConfig& cfg, const std::vector<CorpusItem>& typical,
                               const SimsDictionary& sims, TrainLog* log) {
  std::vector<EncoderExample> examples;
  for (const auto& c : typical) {
    if (!c.alignment) throw InvalidArgument("train-encoder: utterance '" + c.entry.id + "' has no alignment");
    examples.push_back(make_encoder_example(c.mel, *c.alignment, sims));
  }
  EncoderModel model(cfg.encoder, sims.inventory, derive_seed(cfg.seed, "encoder-init", ""));
  train_encoder(model, examples, seeded(cfg.encoder_train, cfg.seed, "train-encoder"), cfg.encoder_weights, log);
  return model;
}

ConditionFn make_condition_fn(const SpeakerEmbeddingProvider& provider, const std::vector<CorpusItem>& items) {
  std::vector<Eigen::VectorXd> table;
  for (const auto& c : items) table.push_back(provider.embed(c.audio, c.entry.id).v);
  return [table = std::move(table)](std::size_t i, const MelSpectrogram&) { return table.at(i); };
}

DecoderModel run_train_decoder(const PipelineConfig& cfg, const std::vector<CorpusItem>& typical,
                               const SimsDictionary& sims, const SpeakerEmbeddingProvider& provider, TrainLog* log) {
  std::vector<DecoderExample> examples;
  for (const auto& c : typical) {
    if (!c.alignment) throw InvalidArgument("train-decoder: utterance '" + c.entry.id + "' has no alignment");
    examples.push_back({c.mel, ground_truth_sims(c.mel, c.labels, sims)});
  }
  DUTAVC_CHECK(provider.dim() == cfg.decoder.embed_dim, "train-decoder: embedding width differs from decoder config");
  DecoderModel model{ScoreNetwork(cfg.decoder, derive_seed(cfg.seed, "decoder-init", "")), "", std::nullopt};
  train_decoder(model, examples, make_condition_fn(provider, typical), seeded(cfg.decoder_train, cfg.seed, "train-decoder"),
                log);
  return model;
}

DecoderModel run_finetune(const PipelineConfig& cfg, const DecoderModel& base, const std::vector<CorpusItem>& target,
                          const std::string& speaker, const EncoderModel& encoder, const SimsDictionary& sims,
                          const SpeakerEmbeddingProvider& provider, TrainLog* log) {
  if (target.empty()) throw InvalidArgument("finetune: no utterances for speaker '" + speaker + "'");
  std::vector<DecoderExample> examples;
  std::vector<Eigen::VectorXd> embeddings;
  for (const auto& c : target) {
    MelSpectrogram prior = c.mel;
    if (cfg.finetune_prior == "ground_truth") {
      if (!c.alignment) throw InvalidArgument("finetune: utterance '" + c.entry.id + "' has no alignment");
      prior = ground_truth_sims(c.mel, c.labels, sims);
    } else {
      prior.frames = encode(encoder, c.mel).sims_pred;
    }
    examples.push_back({c.mel, std::move(prior)});
    embeddings.push_back(provider.embed(c.audio, c.entry.id).v);
  }
  const Eigen::VectorXd target_embedding = mean_embedding(embeddings);
  DecoderModel model{base.net.clone(), base.speaker_tag, base.target_embedding};
  finetune_decoder(model, examples, [&](std::size_t, const MelSpectrogram&) { return target_embedding; },
                   seeded(cfg.finetune_train, cfg.seed, "finetune", speaker), speaker, target_embedding, log);
  return model;
}

std::unique_ptr<SpeakerEmbeddingProvider> make_embedding_provider(const PipelineConfig& cfg) {
  if (cfg.embedding_provider == "file") {
    auto p = std::make_unique<FileEmbeddingProvider>(cfg.embedding_file);
    if (p->dim() != cfg.embedding_dim)
      throw ConfigError("embedding file has " + std::to_string(p->dim()) + " dimensions, embedding.dim is " +
                        std::to_string(cfg.embedding_dim));
    return p;
  }
  return std::make_unique<BuiltinEmbeddingProvider>(cfg.embedding_dim, BuiltinEmbeddingProvider::kDefaultSeed,
                                                    cfg.mel.n_mels);
}

// --- conversion ---------------------------------------------------------------------------

PipelineHandle::PipelineHandle(EncoderModel encoder, SimsDictionary sims, DurationStats durations,
                               std::shared_ptr<const SpeakerEmbeddingProvider> provider,
                               std::shared_ptr<const Vocoder> vocoder, MelConfig mel, StretchSpec stretch)
    : encoder_(std::move(encoder)),
      sims_(std::move(sims)),
      durations_(std::move(durations)),
      provider_(std::move(provider)),
      vocoder_(std::move(vocoder)),
      mel_(mel),
      stretch_(stretch) {
  DUTAVC_CHECK(provider_ && vocoder_, "pipeline: embedding provider and vocoder are required");
  mel_.validate();
  stretch_.validate();
  const std::uint64_t h = encoder_.inventory().hash();
  if (sims_.inventory.hash() != h || durations_.inventory.hash() != h)
    throw InvalidArgument("pipeline: encoder, SIMS dictionary and duration statistics use different phoneme inventories");
  if (encoder_.config().n_mels != mel_.n_mels || sims_.num_mels() != mel_.n_mels)
    throw InvalidArgument("pipeline: mel-bin count differs between components");
}

void PipelineHandle::add_decoder(DecoderModel decoder) {
  const auto& c = decoder.net.config();
  if (decoder.speaker_tag.empty()) throw InvalidArgument("pipeline: decoder has no speaker tag");
  if (c.n_mels != mel_.n_mels)
    throw InvalidArgument("pipeline: decoder for '" + decoder.speaker_tag + "' expects " + std::to_string(c.n_mels) +
                          " mel bins");
  if (c.embed_dim != provider_->dim())
    throw InvalidArgument("pipeline: decoder for '" + decoder.speaker_tag + "' expects " +
                          std::to_string(c.embed_dim) + "-dim embeddings, provider gives " +
                          std::to_string(provider_->dim()));
  if (!decoder.target_embedding || decoder.target_embedding->size() != c.embed_dim)
    throw InvalidArgument("pipeline: decoder for '" + decoder.speaker_tag + "' has no target embedding");
  const std::string tag = decoder.speaker_tag;
  decoders_.insert_or_assign(tag, std::move(decoder));
}

std::vector<std::string> PipelineHandle::targets() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : decoders_) out.push_back(k);
  return out;
}

const DecoderModel& PipelineHandle::decoder(const std::string& speaker) const {
  const auto it = decoders_.find(speaker);
  if (it == decoders_.end()) throw InvalidArgument("no fine-tuned decoder for target speaker '" + speaker + "'");
  return it->second;
}

PipelineHandle PipelineHandle::load(const PipelineConfig& cfg) {
  StatsArtifacts stats = load_stats(cfg.resolved_stats_dir());
  std::shared_ptr<const SpeakerEmbeddingProvider> provider = make_embedding_provider(cfg);
  auto vocoder = std::make_shared<GriffinLimVocoder>(
      GriffinLimOptions{cfg.griffin_lim_iters, cfg.griffin_lim_momentum, derive_seed(cfg.seed, "vocoder", "")}, cfg.mel);
  PipelineHandle h(load_encoder(cfg.resolved_encoder_path()), std::move(stats.sims), std::move(stats.durations),
                   std::move(provider), std::move(vocoder), cfg.mel, cfg.stretch);
  const fs::path dir = cfg.resolved_decoder_dir();
  if (fs::is_directory(dir)) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir))
      if (f.path().extension() == ".ckpt") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) h.add_decoder(load_decoder(f.string()));
  }
  return h;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

Waveform convert_utterance(const PipelineHandle& h, const Waveform& source, const std::string& target,
                           std::uint64_t seed, const ConversionOptions& opts, ConversionTrace* trace) {
  const DecoderModel& dec = stage("select-decoder", [&]() -> const DecoderModel& { return h.decoder(target); });
  const MelConfig& mc = h.mel_config();
  const Waveform src = stage("ingest", [&] {
    Waveform w = normalize_ingested(source);
    return w.sample_rate_hz == mc.sample_rate_hz ? w : resample(w, mc.sample_rate_hz);
  });
  const EncoderOutput first = stage("encode-source", [&] { return encode(h.encoder(), mel_spectrogram(src, mc)); });
  StretchSpec spec = h.stretch();
  DurationModification dm = stage("duration-modification", [&] {
    return duration_modified_source(src, first, h.durations(), target, spec);
  });
  MelSpectrogram prior = stage("encode-stretched", [&] {
    MelSpectrogram m = mel_spectrogram(dm.audio, mc);
    m.frames = encode(h.encoder(), m).sims_pred;
    return m;
  });
  MelSpectrogram converted = stage("reverse-diffusion", [&] {
    SamplerOptions so;
    so.n_steps = opts.n_steps;
    so.inject_noise = opts.inject_noise;
    so.seed = seed;
    return decode(dec.net, prior, *dec.target_embedding, so);
  });
  Waveform out = stage("vocoder", [&] { return h.vocoder().invert(converted); });
  if (trace) *trace = {std::move(dm), std::move(prior), std::move(converted)};
  return out;
}

}  // namespace dutavc
