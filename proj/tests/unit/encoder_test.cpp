#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "dutavc/encoder.hpp"
#include "dutavc/error.hpp"
#include "dutavc/nn/checkpoint.hpp"
#include "gradcheck.hpp"

namespace dutavc {
namespace {

EncoderConfig tiny_config(int n_mels = 80) {
  EncoderConfig c;
  c.n_mels = n_mels;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_blocks = 1;
  c.predictor_channels = 16;
  return c;
}

PhonemeInventory toy_inventory() { return PhonemeInventory({"sil", "AA", "B", "IY"}); }

// Utterances built directly in the mel domain: every phoneme has a fixed
// spectral template, frames add small noise.
struct MelCorpus {
  std::vector<MelSpectrogram> mels;
  std::vector<PhonemeAlignment> alignments;
};

MelCorpus toy_mel_corpus(int n_utts, int n_mels, std::uint64_t seed) {
  Rng rng(seed);
  const int P = 4;
  Eigen::MatrixXd templates = standard_normal(P, n_mels, rng) * 2.0;
  MelCorpus c;
  const double hop = 256.0 / kSampleRate;
  for (int u = 0; u < n_utts; ++u) {
    std::vector<PhonemeInterval> iv;
    double t = 0.05;
    for (int k = 0; k < 4; ++k) {
      const PhonemeId p = 1 + static_cast<PhonemeId>(uniform(rng, 0.0, 3.0)) % 3;
      const double d = uniform(rng, 0.06, 0.15);
      iv.push_back({p, t, t + d});
      t += d;
    }
    const PhonemeAlignment a = make_alignment(iv);
    const int F = static_cast<int>(std::ceil((t + 0.05) / hop));
    const auto labels = frame_labels(a, F, hop);
    MelSpectrogram m;
    m.frames = standard_normal(F, n_mels, rng) * 0.1;
    for (int i = 0; i < F; ++i) m.frames.row(i) += templates.row(labels[i]);
    c.mels.push_back(m);
    c.alignments.push_back(a);
  }
  return c;
}

std::vector<EncoderExample> toy_examples(int n_utts, int n_mels, std::uint64_t seed) {
  const MelCorpus c = toy_mel_corpus(n_utts, n_mels, seed);
  std::vector<LabeledMel> labeled;
  std::vector<std::vector<PhonemeId>> labels;
  for (std::size_t i = 0; i < c.mels.size(); ++i)
    labels.push_back(frame_labels(c.alignments[i], c.mels[i].num_frames(), c.mels[i].hop_s));
  for (std::size_t i = 0; i < c.mels.size(); ++i) labeled.push_back({&c.mels[i], &labels[i]});
  const SimsDictionary dict = build_sims_dictionary(labeled, toy_inventory());
  std::vector<EncoderExample> out;
  for (std::size_t i = 0; i < c.mels.size(); ++i)
    out.push_back(make_encoder_example(c.mels[i], c.alignments[i], dict));
  return out;
}

TEST(Encoder, OutputShapes) {
  EncoderModel model(tiny_config(), toy_inventory(), 1);
  MelSpectrogram m;
  Rng rng(2);
  m.frames = standard_normal(83, 80, rng);
  const EncoderOutput out = encode(model, m);
  EXPECT_EQ(out.sims_pred.rows(), 83);
  EXPECT_EQ(out.sims_pred.cols(), 80);
  EXPECT_EQ(out.phoneme_logits.rows(), 83);
  EXPECT_EQ(out.phoneme_logits.cols(), 4);
  EXPECT_EQ(out.log_dur_pred.size(), 83);
  EXPECT_TRUE(out.sims_pred.allFinite());
}

TEST(Encoder, DefaultArchitectureBuilds) {
  EncoderModel model(EncoderConfig{}, toy_inventory(), 0);
  EXPECT_GT(model.num_parameters(), 1'000'000u);
  MelSpectrogram m;
  m.frames = Eigen::MatrixXd::Constant(5, 80, -3.0);
  EXPECT_EQ(encode(model, m).num_frames(), 5);
}

TEST(Encoder, DeterministicAndBatchEquivariant) {
  EncoderModel model(tiny_config(), toy_inventory(), 3);
  Rng rng(4);
  MelSpectrogram a, b;
  a.frames = standard_normal(20, 80, rng);
  b.frames = standard_normal(31, 80, rng);
  EXPECT_EQ(encode(model, a).sims_pred, encode(model, a).sims_pred);
  const auto ab = encode_batch(model, {a, b});
  const auto ba = encode_batch(model, {b, a});
  EXPECT_EQ(ab[0].sims_pred, ba[1].sims_pred);
  EXPECT_EQ(ab[1].phoneme_logits, ba[0].phoneme_logits);
}

TEST(Encoder, RejectsMelBinMismatch) {
  EncoderModel model(tiny_config(), toy_inventory(), 3);
  MelSpectrogram m;
  m.frames = Eigen::MatrixXd::Zero(10, 40);
  EXPECT_THROW(encode(model, m), InvalidArgument);
}

EncoderTargets random_targets(int F, int n_mels, int P, Rng& rng) {
  EncoderTargets t;
  t.gt_sims = standard_normal(F, n_mels, rng);
  for (int i = 0; i < F; ++i) {
    t.labels.push_back(static_cast<PhonemeId>(uniform(rng, 0.0, P - 1e-9)));
    t.gt_log_dur.push_back(uniform(rng, -3.0, -1.0));
  }
  return t;
}

TEST(EncoderLoss, ConstantOffsetGivesUnitSimsLoss) {
  Rng rng(5);
  const EncoderTargets t = random_targets(12, 80, 4, rng);
  EncoderOutput out;
  out.sims_pred = t.gt_sims.array() + 1.0;
  out.phoneme_logits = standard_normal(12, 4, rng);
  out.log_dur_pred = Eigen::VectorXd::Map(t.gt_log_dur.data(), 12);
  const EncoderLosses l = encoder_loss(out, t);
  EXPECT_NEAR(l.sims, 1.0, 1e-12);
  EXPECT_NEAR(l.duration, 0.0, 1e-12);
}

TEST(EncoderLoss, PerfectPredictionReachesFloor) {
  Rng rng(6);
  const EncoderTargets t = random_targets(10, 80, 4, rng);
  EncoderOutput out;
  out.sims_pred = t.gt_sims;
  out.phoneme_logits = Eigen::MatrixXd::Constant(10, 4, -50.0);
  for (int i = 0; i < 10; ++i) out.phoneme_logits(i, t.labels[i]) = 50.0;
  out.log_dur_pred = Eigen::VectorXd::Map(t.gt_log_dur.data(), 10);
  const EncoderLosses l = encoder_loss(out, t);
  EXPECT_EQ(l.sims, 0.0);
  EXPECT_EQ(l.duration, 0.0);
  EXPECT_GE(l.phoneme, 0.0);
  EXPECT_LT(l.phoneme, 1e-40);
}

TEST(EncoderLoss, MatchesHandComputation) {
  Rng rng(7);
  const int F = 5, M = 3, P = 3;
  const EncoderTargets t = random_targets(F, M, P, rng);
  EncoderOutput out;
  out.sims_pred = standard_normal(F, M, rng);
  out.phoneme_logits = standard_normal(F, P, rng);
  out.log_dur_pred = standard_normal(F, 1, rng).col(0);
  const EncoderLossWeights w{0.3, 2.0};

  double sims = 0.0, ce = 0.0, dur = 0.0;
  int voiced = 0;
  for (int i = 0; i < F; ++i) {
    for (int j = 0; j < M; ++j) sims += std::pow(out.sims_pred(i, j) - t.gt_sims(i, j), 2);
    double z = 0.0;
    for (int p = 0; p < P; ++p) z += std::exp(out.phoneme_logits(i, p));
    ce += std::log(z) - out.phoneme_logits(i, t.labels[i]);
    if (t.labels[i] != 0) {
      dur += std::pow(out.log_dur_pred(i) - t.gt_log_dur[i], 2);
      ++voiced;
    }
  }
  sims /= F * M;
  ce /= F;
  dur = voiced ? dur / voiced : 0.0;
  const EncoderLosses l = encoder_loss(out, t, w);
  EXPECT_NEAR(l.sims, sims, 1e-6);
  EXPECT_NEAR(l.phoneme, ce, 1e-6);
  EXPECT_NEAR(l.duration, dur, 1e-6);
  EXPECT_NEAR(l.total, sims + 0.3 * ce + 2.0 * dur, 1e-6);
}

TEST(EncoderLoss, NonFiniteOutputThrows) {
  Rng rng(8);
  const EncoderTargets t = random_targets(4, 80, 4, rng);
  EncoderOutput out;
  out.sims_pred = t.gt_sims;
  out.sims_pred(1, 2) = std::nan("");
  out.phoneme_logits = Eigen::MatrixXd::Zero(4, 4);
  out.log_dur_pred = Eigen::VectorXd::Zero(4);
  EXPECT_THROW(encoder_loss(out, t), Error);
}

TEST(EncoderLoss, ShapeMismatchThrows) {
  Rng rng(9);
  const EncoderTargets t = random_targets(4, 80, 4, rng);
  EncoderOutput out;
  out.sims_pred = Eigen::MatrixXd::Zero(5, 80);
  out.phoneme_logits = Eigen::MatrixXd::Zero(5, 4);
  out.log_dur_pred = Eigen::VectorXd::Zero(5);
  EXPECT_THROW(encoder_loss(out, t), InvalidArgument);
}

TEST(EncoderGradient, MiniatureMatchesFiniteDifferences) {
  EncoderConfig c;
  c.n_mels = 6;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 8;
  c.n_blocks = 1;
  c.predictor_channels = 8;
  EncoderModel model(c, toy_inventory(), 11);
  Rng rng(12);
  const nn::Tensor mel = nn::Tensor::from_matrix(standard_normal(7, 6, rng));
  const EncoderTargets t = random_targets(7, 6, 4, rng);
  auto loss = [&] { return encoder_loss_vars(model.forward(nn::Var(mel)), t).total; };
  const auto r = testing::grad_check(loss, model.params().vars(), 64, 1e-3, 13);
  EXPECT_EQ(r.probed, 64);
  EXPECT_LT(r.norm_rel_error, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-2);
}

TEST(EncoderTraining, ZeroLearningRateLeavesModelUnchanged) {
  const auto corpus = toy_examples(3, 20, 1);
  EncoderModel model(tiny_config(20), toy_inventory(), 2);
  const auto before = model.params().snapshot();
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.batch_size = 2;
  cfg.max_steps = 3;
  TrainLog log;
  train_encoder(model, corpus, cfg, {}, &log);
  const auto after = model.params().snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].data, after[i].data);
  ASSERT_EQ(log.step_loss.size(), 3u);
}

TEST(EncoderTraining, SeededRunsAreBitReproducible) {
  const auto corpus = toy_examples(4, 20, 3);
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 2;
  cfg.max_steps = 6;
  cfg.seed = 9;
  TrainLog a, b;
  EncoderModel m1(tiny_config(20), toy_inventory(), 4), m2(tiny_config(20), toy_inventory(), 4);
  train_encoder(m1, corpus, cfg, {}, &a);
  train_encoder(m2, corpus, cfg, {}, &b);
  EXPECT_EQ(a.step_loss, b.step_loss);
}

TEST(EncoderTraining, LossDecreasesAndPhonemesAreLearned) {
  const auto corpus = toy_examples(10, 20, 5);
  EncoderModel model(tiny_config(20), toy_inventory(), 6);
  auto total = [&] {
    double s = 0.0;
    for (const auto& ex : corpus) s += encoder_loss(encode(model, ex.mel), ex.targets).total;
    return s;
  };
  const double before = total();
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 2;
  cfg.max_steps = 200;
  train_encoder(model, corpus, cfg);
  EXPECT_LT(total(), before);

  long hits = 0, frames = 0;
  for (const auto& ex : corpus) {
    const EncoderOutput out = encode(model, ex.mel);
    for (int i = 0; i < out.num_frames(); ++i) {
      Eigen::Index arg;
      out.phoneme_logits.row(i).maxCoeff(&arg);
      hits += arg == ex.targets.labels[i];
      ++frames;
    }
  }
  EXPECT_GE(static_cast<double>(hits) / frames, 0.95);
}

TEST(EncoderTraining, NonFiniteLossRestoresAndSaves) {
  auto corpus = toy_examples(2, 20, 7);
  corpus[1].mel.frames(0, 0) = std::numeric_limits<double>::infinity();
  EncoderModel model(tiny_config(20), toy_inventory(), 8);
  const auto path = (std::filesystem::temp_directory_path() / "dutavc_enc_diverge.ckpt").string();
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_steps = 4;
  cfg.checkpoint_path = path;
  EXPECT_THROW(train_encoder(model, corpus, cfg), DivergenceError);
  EXPECT_TRUE(model.params().vars()[0].value().vec().allFinite());
  EXPECT_TRUE(std::filesystem::exists(path));
  std::filesystem::remove(path);
}

EncoderOutput synthetic_output(const std::vector<int>& labels, const std::vector<double>& dur_s, int P) {
  const int F = static_cast<int>(labels.size());
  EncoderOutput out;
  out.sims_pred = Eigen::MatrixXd::Zero(F, 1);
  out.phoneme_logits = Eigen::MatrixXd::Zero(F, P);
  out.log_dur_pred.resize(F);
  for (int i = 0; i < F; ++i) {
    out.phoneme_logits(i, labels[i]) = 5.0;
    out.log_dur_pred(i) = std::log(dur_s[i]);
  }
  return out;
}

TEST(DurationQuery, SingleSegment) {
  const auto q = source_duration_query(
      synthetic_output(std::vector<int>(50, 1), std::vector<double>(50, 0.58), 4));
  EXPECT_NEAR(q.t_s, 0.58, 1e-12);
  EXPECT_EQ(q.phoneme_set, std::vector<PhonemeId>{1});
  EXPECT_EQ(q.num_segments, 1);
}

TEST(DurationQuery, TwoSegmentsAverage) {
  std::vector<int> labels = {0, 1, 1, 1, 2, 2, 0};
  std::vector<double> dur = {9.0, 0.1, 0.1, 0.1, 0.3, 0.3, 9.0};
  const auto q = source_duration_query(synthetic_output(labels, dur, 4));
  EXPECT_NEAR(q.t_s, 0.2, 1e-12);
  EXPECT_EQ(q.phoneme_set.size(), 2u);
}

TEST(DurationQuery, AllSilenceThrows) {
  EXPECT_THROW(source_duration_query(
                   synthetic_output(std::vector<int>(5, 0), std::vector<double>(5, 0.1), 3)),
               InvalidArgument);
}

TEST(DurationQuery, MatchesSegmentationOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int F = 5 + static_cast<int>(uniform(rng, 0.0, 60.0));
    EncoderOutput out;
    out.sims_pred = Eigen::MatrixXd::Zero(F, 1);
    out.phoneme_logits = standard_normal(F, 4, rng) * 3.0;
    out.log_dur_pred = standard_normal(F, 1, rng).col(0);
    out.phoneme_logits.col(1).array() += 2.0;  // keep some speech present

    // Oracle: explicit list of (label, frames) segments.
    std::vector<std::pair<int, std::vector<int>>> segs;
    for (int i = 0; i < F; ++i) {
      int best = 0;
      for (int p = 1; p < 4; ++p)
        if (out.phoneme_logits(i, p) > out.phoneme_logits(i, best)) best = p;
      if (segs.empty() || segs.back().first != best) segs.push_back({best, {}});
      segs.back().second.push_back(i);
    }
    double sum = 0.0;
    int n = 0;
    std::map<int, bool> set;
    for (const auto& [label, frames] : segs) {
      if (label == 0) continue;
      double lsum = 0.0;
      for (int i : frames) lsum += out.log_dur_pred(i);
      sum += std::exp(lsum / frames.size());
      ++n;
      set[label] = true;
    }
    if (n == 0) continue;
    const auto q = source_duration_query(out);
    EXPECT_NEAR(q.t_s, sum / n, 1e-12);
    EXPECT_EQ(q.num_segments, n);
    EXPECT_EQ(q.phoneme_set.size(), set.size());

    EncoderOutput scaled = out;
    scaled.phoneme_logits *= 7.5;
    EXPECT_NEAR(source_duration_query(scaled).t_s, q.t_s, 1e-12);
    scaled.log_dur_pred.array() += std::log(2.0);
    EXPECT_NEAR(source_duration_query(scaled).t_s, 2.0 * q.t_s, 1e-9);
  }
}

TEST(EncoderCheckpoint, RoundTripPreservesOutputs) {
  EncoderModel model(tiny_config(), toy_inventory(), 31);
  const auto path = (std::filesystem::temp_directory_path() / "dutavc_enc_rt.ckpt").string();
  save_encoder(path, model);
  const EncoderModel loaded = load_encoder(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.config(), model.config());
  EXPECT_EQ(loaded.inventory(), model.inventory());
  MelSpectrogram m;
  Rng rng(32);
  m.frames = standard_normal(9, 80, rng);
  EXPECT_EQ(encode(loaded, m).sims_pred, encode(model, m).sims_pred);
}

TEST(EncoderCheckpoint, RejectsWrongKindAndGarbage) {
  const auto path = (std::filesystem::temp_directory_path() / "dutavc_enc_bad.ckpt").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  EXPECT_THROW(load_encoder(path), FormatError);
  nn::ParamStore empty;
  nn::write_checkpoint(path, "decoder", nlohmann::json::object(), empty);
  EXPECT_THROW(load_encoder(path), FormatError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace dutavc
