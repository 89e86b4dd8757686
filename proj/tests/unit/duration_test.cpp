#include <gtest/gtest.h>

#include <cmath>

#include "dutavc/duration.hpp"
#include "dutavc/error.hpp"
#include "test_util.hpp"

namespace dutavc {
namespace {

using testing::dominant_frequency;
using testing::rms;
using testing::sine;

DurationStats two_phoneme_stats() {
  const PhonemeInventory inv({"sil", "AA", "B", "IY"});
  DurationStats s;
  s.inventory = inv;
  SpeakerDurations sd;
  sd.phonemes.resize(inv.size());
  sd.phonemes[1] = {0.2, 3};
  sd.phonemes[2] = {0.4, 1};
  sd.global_mean_s = 0.25;
  s.speakers["tgt"] = sd;
  return s;
}

TEST(TargetMeanDuration, AveragesTargetMeans) {
  EXPECT_NEAR(target_mean_duration({1, 2}, two_phoneme_stats(), "tgt"), 0.3, 1e-12);
}

TEST(TargetMeanDuration, MissingPhonemeFallsBackToGlobalMean) {
  EXPECT_NEAR(target_mean_duration({3}, two_phoneme_stats(), "tgt"), 0.25, 1e-12);
  EXPECT_NEAR(target_mean_duration({1, 3}, two_phoneme_stats(), "tgt"), 0.225, 1e-12);
}

TEST(TargetMeanDuration, Errors) {
  EXPECT_THROW(target_mean_duration({1}, two_phoneme_stats(), "nobody"), InvalidArgument);
  EXPECT_THROW(target_mean_duration({}, two_phoneme_stats(), "tgt"), InvalidArgument);
  DurationStats s = two_phoneme_stats();
  s.speakers["tgt"].global_mean_s.reset();
  EXPECT_THROW(target_mean_duration({3}, s, "tgt"), InvalidArgument);
}

TEST(TargetMeanDuration, MatchesLookupOracleOnRandomTables) {
  Rng rng(3);
  const PhonemeInventory inv({"sil", "a", "b", "c", "d", "e", "f"});
  for (int trial = 0; trial < 100; ++trial) {
    DurationStats s;
    s.inventory = inv;
    SpeakerDurations sd;
    sd.phonemes.resize(inv.size());
    for (int p = 1; p < inv.size(); ++p)
      if (uniform(rng, 0.0, 1.0) < 0.7) sd.phonemes[p] = {uniform(rng, 0.03, 0.4), 1 + static_cast<std::uint64_t>(uniform(rng, 0.0, 5.0))};
    sd.global_mean_s = uniform(rng, 0.05, 0.3);
    s.speakers["x"] = sd;

    std::vector<PhonemeId> set;
    for (int p = 1; p < inv.size(); ++p)
      if (uniform(rng, 0.0, 1.0) < 0.5) set.push_back(p);
    if (set.empty()) set.push_back(1);
    double sum = 0.0;
    for (PhonemeId p : set) sum += sd.phonemes[p].count ? sd.phonemes[p].mean_s : *sd.global_mean_s;
    EXPECT_NEAR(target_mean_duration(set, s, "x"), sum / set.size(), 1e-12);
  }
}

TEST(TempoStretch, UnitRatioIsBitExactIdentity) {
  const Waveform w = testing::white_noise(22050, 1);
  StretchSpec spec;
  spec.ratio = 1.0;
  EXPECT_EQ(tempo_stretch(w, spec).samples, w.samples);
}

TEST(TempoStretch, LengthContract) {
  const Waveform w = testing::white_noise(22050, 2);
  for (double r : {0.25, 0.5, 0.8, 1.0, 1.25, 1.5, 2.0, 4.0}) {
    StretchSpec spec;
    spec.ratio = r;
    const double got = static_cast<double>(tempo_stretch(w, spec).size());
    EXPECT_NEAR(got, r * 22050, 0.02 * r * 22050) << r;
  }
  StretchSpec spec;
  spec.ratio = 1.5;
  EXPECT_EQ(tempo_stretch(w, spec).size(), 33075u);
}

TEST(TempoStretch, LengthContractOverRandomInputs) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    StretchSpec spec;
    spec.ratio = uniform(rng, 0.25, 4.0);
    const std::size_t n = min_stretch_input(spec, kSampleRate) + static_cast<std::size_t>(uniform(rng, 0.0, 20000.0));
    const Waveform w = testing::white_noise(n, trial);
    EXPECT_EQ(tempo_stretch(w, spec).size(), static_cast<std::size_t>(std::lround(spec.ratio * n)));
  }
}

TEST(TempoStretch, PreservesPitch) {
  const Waveform w = sine(220.5, 1.0);
  for (double r : {0.5, 0.8, 1.25, 2.0}) {
    StretchSpec spec;
    spec.ratio = r;
    const Waveform out = tempo_stretch(w, spec);
    const double f = dominant_frequency(out, 150.0, 300.0);
    EXPECT_LT(std::abs(1200.0 * std::log2(f / 220.5)), 20.0) << "r=" << r << " f=" << f;
  }
  StretchSpec spec;
  spec.ratio = 0.8;
  EXPECT_NEAR(static_cast<double>(tempo_stretch(w, spec).size()), 17640.0, 0.02 * 17640);
}

TEST(TempoStretch, PreservesEnergyOfStationarySignals) {
  for (const Waveform& w : {sine(220.5, 1.0), sine(1000.0, 1.0), testing::white_noise(22050, 5)}) {
    for (double r : {0.5, 0.8, 1.25, 2.0}) {
      StretchSpec spec;
      spec.ratio = r;
      const double db = 20.0 * std::log10(rms(tempo_stretch(w, spec).samples) / rms(w.samples));
      EXPECT_LT(std::abs(db), 3.0) << r;
    }
  }
}

TEST(TempoStretch, StretchThenInverseApproximatesInput) {
  const Waveform w = sine(220.5, 1.0);
  for (double r : {0.5, 0.8, 1.25, 2.0}) {
    StretchSpec a, b;
    a.ratio = r;
    b.ratio = 1.0 / r;
    const Waveform back = tempo_stretch(tempo_stretch(w, a), b);
    EXPECT_NEAR(static_cast<double>(back.size()), static_cast<double>(w.size()), 0.05 * w.size());
    // Best normalized correlation over lags up to one pitch period.
    const std::size_t n = std::min(back.size(), w.size()) - 200;
    double best = -1.0;
    for (int lag = -100; lag <= 100; ++lag) {
      double c = 0.0, e1 = 0.0, e2 = 0.0;
      for (std::size_t i = 100; i < n; ++i) {
        c += w.samples[i] * back.samples[i + lag];
        e1 += w.samples[i] * w.samples[i];
        e2 += back.samples[i + lag] * back.samples[i + lag];
      }
      best = std::max(best, c / std::sqrt(e1 * e2));
    }
    EXPECT_GT(best, 0.9) << r;
  }
}

TEST(TempoStretch, RejectsBadInput) {
  StretchSpec spec;
  spec.ratio = 4.01;
  EXPECT_THROW(tempo_stretch(sine(220.0, 1.0), spec), InvalidArgument);
  spec.ratio = 0.2;
  EXPECT_THROW(tempo_stretch(sine(220.0, 1.0), spec), InvalidArgument);
  spec.ratio = 1.2;
  EXPECT_THROW(tempo_stretch(sine(220.0, 0.05), spec), InvalidArgument);
  spec.method = "phase-vocoder";
  EXPECT_THROW(tempo_stretch(sine(220.0, 1.0), spec), InvalidArgument);
}

EncoderOutput fixed_output(const std::vector<int>& labels, const std::vector<double>& dur_s) {
  const int F = static_cast<int>(labels.size());
  EncoderOutput out;
  out.sims_pred = Eigen::MatrixXd::Zero(F, 1);
  out.phoneme_logits = Eigen::MatrixXd::Zero(F, 4);
  out.log_dur_pred.resize(F);
  for (int i = 0; i < F; ++i) {
    out.phoneme_logits(i, labels[i]) = 1.0;
    out.log_dur_pred(i) = std::log(dur_s[i]);
  }
  return out;
}

TEST(DurationModifiedSource, EqualDurationsKeepInput) {
  const Waveform w = sine(300.0, 1.0);
  const auto r = duration_modified_source(w, fixed_output({1, 1, 2, 2}, {0.2, 0.2, 0.4, 0.4}),
                                          two_phoneme_stats(), "tgt");
  EXPECT_DOUBLE_EQ(r.ratio, 1.0);
  EXPECT_EQ(r.audio.samples, w.samples);
}

TEST(DurationModifiedSource, ComposesQueryAndTargetLookup) {
  const Waveform w = sine(300.0, 1.0);
  // Source segments 0.1 s and 0.2 s -> t_s = 0.15; target {AA, B} -> t_t = 0.3.
  const auto r = duration_modified_source(
      w, fixed_output({0, 1, 1, 0, 2, 2, 2}, {1, 0.1, 0.1, 1, 0.2, 0.2, 0.2}), two_phoneme_stats(), "tgt");
  EXPECT_NEAR(r.t_s, 0.15, 1e-9);
  EXPECT_NEAR(r.t_t, 0.3, 1e-9);
  EXPECT_NEAR(r.ratio, 2.0, 1e-6);
  EXPECT_NEAR(static_cast<double>(r.audio.size()), 2.0 * w.size(), 0.02 * 2.0 * w.size());
}

}  // namespace
}  // namespace dutavc
