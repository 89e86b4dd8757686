#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dutavc/log.hpp"
#include "dutavc/pipeline.hpp"
#include "dutavc/toy_corpus.hpp"

namespace dutavc {
namespace {

namespace fs = std::filesystem;

class Quiet : public ::testing::Environment {
 public:
  void SetUp() override { set_log_stream(nullptr); }
};
const auto* const kQuiet = ::testing::AddGlobalTestEnvironment(new Quiet);

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dutavc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

const char* kTinyConfig = R"(# small models so the whole chain trains in seconds
preset = desk
paths.train_manifest = typical.jsonl
paths.target_manifest = atypical.jsonl
paths.work_dir = work
encoder.d_model = 16
encoder.n_heads = 2
encoder.d_ff = 32
encoder.n_blocks = 1
encoder.predictor_channels = 16
encoder.max_steps = 300
encoder.lr = 0.003
decoder.base_channels = 4
decoder.channel_mults = 1,2
decoder.groups = 2
decoder.cond_channels = 4
decoder.cond_hidden = 8
decoder.time_pe_dim = 8
decoder.crop_frames = 16
decoder.max_steps = 4
finetune.max_steps = 3
finetune.prior = ground_truth
sampler.n_steps = 4
vocoder.griffin_lim_iters = 4
embedding.dim = 32
seed = 11
)";

// --- configuration ----------------------------------------------------------------

TEST(PipelineConfig, PresetsDiffer) {
  const PipelineConfig desk = pipeline_preset("desk"), paper = pipeline_preset("paper");
  EXPECT_EQ(paper.encoder.d_model, 192);
  EXPECT_EQ(paper.decoder.base_channels, 64);
  EXPECT_EQ(paper.sampler_steps, 100);
  EXPECT_DOUBLE_EQ(paper.finetune_train.learning_rate, 5e-5);
  EXPECT_EQ(paper.finetune_train.batch_size, 32);
  EXPECT_EQ(paper.finetune_train.epochs, 30);
  EXPECT_LT(desk.encoder.d_model, paper.encoder.d_model);
  EXPECT_THROW(pipeline_preset("laptop"), ConfigError);
}

TEST(PipelineConfig, PresetAppliesFirstWhereverItAppears) {
  const PipelineConfig c = parse_pipeline_config("encoder.d_model = 32\npreset = paper\n");
  EXPECT_EQ(c.preset, "paper");
  EXPECT_EQ(c.encoder.d_model, 32);
  EXPECT_EQ(c.sampler_steps, 100);
}

TEST(PipelineConfig, RejectsUnknownDuplicateAndMalformedLines) {
  EXPECT_THROW(parse_pipeline_config("encoder.width = 3\n"), ConfigError);
  EXPECT_THROW(parse_pipeline_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_pipeline_config("seed 1\n"), ConfigError);
  EXPECT_THROW(parse_pipeline_config("seed = abc\n"), ConfigError);
  EXPECT_THROW(parse_pipeline_config("sampler.n_steps = 0\n"), ConfigError);
  EXPECT_THROW(parse_pipeline_config("finetune.prior = oracle\n"), ConfigError);
  EXPECT_THROW(parse_pipeline_config("embedding.provider = file\n"), ConfigError);
  try {
    parse_pipeline_config("# comment\n\nbogus = 1\n", ".", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:3"), std::string::npos) << e.what();
  }
}

TEST(PipelineConfig, RelativePathsResolveAgainstConfigDirectory) {
  const PipelineConfig c = parse_pipeline_config("paths.train_manifest = data/t.jsonl\npaths.encoder = /abs/e.ckpt\n",
                                                 "/base/dir");
  EXPECT_EQ(fs::path(c.train_manifest), fs::path("/base/dir/data/t.jsonl"));
  EXPECT_EQ(c.resolved_encoder_path(), "/abs/e.ckpt");
  EXPECT_EQ(fs::path(c.resolved_stats_dir()), fs::path("/base/dir/work/stats"));
  EXPECT_EQ(fs::path(c.decoder_path("DYS")), fs::path("/base/dir/work/decoders/DYS.ckpt"));
}

TEST(PipelineConfig, SettingsAndEntriesRoundTrip) {
  PipelineConfig c = parse_pipeline_config(kTinyConfig, "/tmp/x");
  apply_setting(c, "decoder.channel_mults", "1,2,2");
  apply_setting(c, "sampler.inject_noise", "false");
  EXPECT_THROW(apply_setting(c, "preset", "paper"), ConfigError);
  EXPECT_THROW(apply_setting(c, "nope", "1"), ConfigError);
  std::string text;
  for (const auto& [k, v] : config_entries(c)) text += k + " = " + v + "\n";
  const PipelineConfig back = parse_pipeline_config(text, "/elsewhere");
  EXPECT_EQ(config_entries(back), config_entries(c));
  EXPECT_EQ((std::vector<int>{1, 2, 2}), back.decoder.channel_mults);
  EXPECT_FALSE(back.sampler_inject_noise);
  EXPECT_EQ(config_json(c).size(), config_entries(c).size());
}

TEST(PipelineConfig, ValidatePropagatesSharedSizes) {
  PipelineConfig c = parse_pipeline_config("mel.n_mels = 40\nembedding.dim = 12\ndecoder.channel_mults = 1,2\n");
  EXPECT_EQ(c.encoder.n_mels, 40);
  EXPECT_EQ(c.decoder.n_mels, 40);
  EXPECT_EQ(c.decoder.embed_dim, 12);
}

// --- command line without artifacts --------------------------------------------------

TEST(Cli, UsageErrorsReturnTwo) {
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"transmogrify"}), 2);
  EXPECT_EQ(run_cli({"convert", "--config", "/nonexistent.cfg", "--source", "a.wav", "--target", "X"}), 2);
  const auto dir = fs::temp_directory_path() / "dutavc_cli_usage";
  fs::create_directories(dir);
  write_file((dir / "a.cfg").string(), "bogus = 1\n");
  EXPECT_EQ(run_cli({"prepare-stats", "--config", (dir / "a.cfg").string()}), 2);
  write_file((dir / "b.cfg").string(), "seed = 1\n");
  EXPECT_EQ(run_cli({"prepare-stats", "--config", (dir / "b.cfg").string(), "--set", "noequals"}), 2);
  EXPECT_EQ(run_cli({"prepare-stats", "--config", (dir / "b.cfg").string()}), 2);  // no train manifest
  fs::remove_all(dir);
}

// --- trained miniature pipeline ----------------------------------------------------------

class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::temp_directory_path() / "dutavc_pipeline_test");
    fs::remove_all(*dir_);
    fs::create_directories(*dir_);
    write_toy_dataset(dir_->string(), 4, 5);
    write_file(config(), kTinyConfig);
    status_ = {run_cli({"prepare-stats", "--config", config()}), run_cli({"train-encoder", "--config", config()}),
               run_cli({"train-decoder", "--config", config()}),
               run_cli({"finetune", "--config", config(), "--target", "DYS"})};
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static std::string config() { return (*dir_ / "tiny.cfg").string(); }
  static std::string path(const std::string& rel) { return (*dir_ / rel).string(); }
  static PipelineConfig cfg() { return load_pipeline_config(config()); }
  void SetUp() override {
    for (int s : status_) ASSERT_EQ(s, 0);
  }

  static fs::path* dir_;
  static std::vector<int> status_;
};

fs::path* TinyPipeline::dir_ = nullptr;
std::vector<int> TinyPipeline::status_;

TEST_F(TinyPipeline, StatsAreLoadableByLaterStages) {
  const StatsArtifacts s = load_stats(cfg().resolved_stats_dir());
  ASSERT_GE(s.sims.inventory.size(), 4);
  for (PhonemeId p = 0; p < s.sims.inventory.size(); ++p) EXPECT_TRUE(s.sims.has(p)) << s.sims.inventory.symbol(p);
  EXPECT_TRUE(s.sims.inventory.find("AA").has_value());
  EXPECT_EQ(s.sims.num_mels(), 80);
  EXPECT_TRUE(s.durations.has_speaker("CTL"));
  EXPECT_TRUE(s.durations.has_speaker("DYS"));
  const PipelineHandle h = PipelineHandle::load(cfg());
  EXPECT_EQ(h.targets(), std::vector<std::string>{"DYS"});
  EXPECT_EQ(h.decoder("DYS").speaker_tag, "DYS");
  EXPECT_EQ(h.decoder("DYS").target_embedding->size(), 32);
}

TEST_F(TinyPipeline, ConvertCommandWritesAudio) {
  const std::string out = path("o.wav");
  ASSERT_EQ(run_cli({"convert", "--config", config(), "--source", path("wav/CTL_0.wav"), "--target", "DYS", "--out", out}),
            0);
  const Waveform w = read_wav(out);
  EXPECT_GT(w.size(), 0u);
  for (double v : w.samples) ASSERT_TRUE(std::isfinite(v));
  EXPECT_EQ(run_cli({"convert", "--config", config(), "--source", path("wav/CTL_0.wav"), "--target", "NOBODY", "--out",
                     path("x.wav")}),
            1);
}

TEST_F(TinyPipeline, ConversionIsSeededAndComposesStages) {
  const PipelineConfig c = cfg();
  const PipelineHandle h = PipelineHandle::load(c);
  const Waveform src = read_wav(path("wav/CTL_1.wav"));
  ConversionTrace tr;
  const ConversionOptions opts{c.sampler_steps, true};
  const Waveform a = convert_utterance(h, src, "DYS", 42, opts, &tr);
  EXPECT_EQ(a.samples, convert_utterance(h, src, "DYS", 42, opts).samples);
  EXPECT_NE(a.samples, convert_utterance(h, src, "DYS", 43, opts).samples);

  // Each stage output feeds the next one unchanged.
  StretchSpec spec = h.stretch();
  spec.ratio = tr.duration.ratio;
  EXPECT_EQ(tr.duration.audio.samples, tempo_stretch(src, spec).samples);
  EXPECT_DOUBLE_EQ(tr.duration.ratio, tr.duration.t_t / tr.duration.t_s);
  EXPECT_EQ(tr.prior.frames, encode(h.encoder(), mel_spectrogram(tr.duration.audio, c.mel)).sims_pred);
  EXPECT_EQ(tr.converted.num_frames(), tr.prior.num_frames());

  const double expect = tr.duration.ratio * static_cast<double>(src.size());
  EXPECT_NEAR(static_cast<double>(a.size()) / expect, 1.0, 0.05);
}

TEST_F(TinyPipeline, FailuresNameTheStage) {
  const PipelineHandle h = PipelineHandle::load(cfg());
  const Waveform src = read_wav(path("wav/CTL_0.wav"));
  try {
    convert_utterance(h, src, "NOBODY", 1);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "select-decoder");
  }
  Waveform empty;
  empty.sample_rate_hz = src.sample_rate_hz;
  try {
    convert_utterance(h, empty, "DYS", 1);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_TRUE(e.stage() == "ingest" || e.stage() == "encode-source") << e.stage();
  }
}

TEST_F(TinyPipeline, HandleRejectsIncompatibleDecoders) {
  PipelineHandle h = PipelineHandle::load(cfg());
  const DecoderModel& good = h.decoder("DYS");

  DecoderModel untagged{good.net.clone(), "", good.target_embedding};
  EXPECT_THROW(h.add_decoder(std::move(untagged)), InvalidArgument);
  DecoderModel no_embedding{good.net.clone(), "X", std::nullopt};
  EXPECT_THROW(h.add_decoder(std::move(no_embedding)), InvalidArgument);

  DecoderConfig wide = good.net.config();
  wide.embed_dim = 64;
  EXPECT_THROW(h.add_decoder({ScoreNetwork(wide, 1), "Y", Eigen::VectorXd::Ones(64)}), InvalidArgument);

  DecoderModel copy{good.net.clone(), "Z", good.target_embedding};
  h.add_decoder(std::move(copy));
  EXPECT_EQ(h.targets(), (std::vector<std::string>{"DYS", "Z"}));
}

TEST_F(TinyPipeline, AugmentIsByteIdenticalPerSeed) {
  const auto run = [&](const std::string& out, const std::string& seed) {
    return run_cli({"augment", "--config", config(), "--manifest", path("typical.jsonl"), "--out", path(out), "--seed",
                    seed});
  };
  ASSERT_EQ(run("aug1", "9"), 0);
  ASSERT_EQ(run("aug2", "9"), 0);
  ASSERT_EQ(run("aug3", "10"), 0);
  const auto m1 = read_file(path("aug1/manifest.jsonl"));
  EXPECT_EQ(m1, read_file(path("aug2/manifest.jsonl")));
  const auto entries = read_manifest(path("aug1/manifest.jsonl"));
  ASSERT_EQ(entries.size(), 4u);
  for (const auto& e : entries) {
    const std::string rel = fs::relative(e.audio_path, path("aug1")).string();
    EXPECT_EQ(read_file(path("aug1/" + rel)), read_file(path("aug2/" + rel)));
    EXPECT_EQ(e.speaker_id, "DYS");
  }
  EXPECT_NE(read_file(entries[0].audio_path),
            read_file(path("aug3/" + fs::relative(entries[0].audio_path, path("aug1")).string())));
}

TEST_F(TinyPipeline, EvaluateWritesReports) {
  auto entries = read_manifest(path("typical.jsonl"));
  for (auto& e : entries) e.group = "H";
  write_manifest(path("test.jsonl"), entries);
  ASSERT_EQ(run_cli({"evaluate", "--control", path("typical.jsonl"), "--test", path("test.jsonl"), "--out",
                     path("report")}),
            0);
  const std::string tsv = read_file(path("report.tsv"));
  EXPECT_EQ(tsv.rfind("level\tname\tgroup\tspeakers\tutterances\tp_stoi\tp_estoi\n", 0), 0u);
  EXPECT_NE(tsv.find("group\tH"), std::string::npos);
  const auto j = nlohmann::json::parse(read_file(path("report.json")));
  EXPECT_TRUE(j.is_object());
}

}  // namespace
}  // namespace dutavc
