#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dutavc/duration.hpp"
#include "dutavc/error.hpp"
#include "dutavc/evaluation.hpp"
#include "dutavc/log.hpp"
#include "dutavc/toy_corpus.hpp"
#include "test_util.hpp"

namespace dutavc {
namespace {

namespace fs = std::filesystem;

class Quiet : public ::testing::Environment {
 public:
  void SetUp() override { set_log_stream(nullptr); }
};
const auto* const kQuiet = ::testing::AddGlobalTestEnvironment(new Quiet);

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dutavc_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Waveform speech(std::uint64_t seed, const std::string& speaker = "CTL", int word = 7) {
  const auto speakers = default_toy_speakers();
  const auto& spk = speaker == "CTL" ? speakers[0] : speakers[1];
  const auto& [w, phones] = toy_words()[word];
  return synthesize_toy_utterance(spk, w, phones, seed, "x").audio;
}

Waveform add_noise(const Waveform& x, double snr_db, unsigned seed) {
  const double p = testing::rms(x.samples);
  Waveform n = testing::white_noise(x.size(), seed, 1.0);
  const double scale = p / testing::rms(n.samples) * std::pow(10.0, -snr_db / 20.0);
  Waveform y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.samples[i] += scale * n.samples[i];
  return y;
}

Waveform scaled(Waveform w, double g) {
  for (double& s : w.samples) s *= g;
  return w;
}

TEST(Stoi, IdentityIsOne) {
  const Waveform x = speech(1);
  EXPECT_NEAR(stoi(x, x), 1.0, 1e-3);
  EXPECT_NEAR(estoi(x, x), 1.0, 1e-3);
}

TEST(Stoi, NoiseLadderIsStrictlyDecreasing) {
  const Waveform x = speech(2);
  double prev_s = 1.01, prev_e = 1.01;
  for (double snr : {20.0, 10.0, 0.0, -10.0}) {
    const Waveform y = add_noise(x, snr, 3);
    const double s = stoi(x, y), e = estoi(x, y);
    EXPECT_LT(s, prev_s) << snr;
    EXPECT_LT(e, prev_e) << snr;
    EXPECT_LE(e, s + 0.05) << snr;
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    prev_s = s, prev_e = e;
  }
}

TEST(Stoi, AmplitudeScaleInvariance) {
  const Waveform x = speech(4);
  const Waveform y = add_noise(x, 5.0, 9);
  const double s = stoi(x, y), e = estoi(x, y);
  EXPECT_NEAR(stoi(x, scaled(x, 0.3)), 1.0, 1e-3);
  EXPECT_NEAR(estoi(x, scaled(x, 0.3)), 1.0, 1e-3);
  EXPECT_NEAR(stoi(x, scaled(y, 2.0)), s, 1e-3);
  EXPECT_NEAR(estoi(scaled(x, 0.25), y), e, 1e-3);
}

TEST(Stoi, BoundedOnUnrelatedSignals) {
  for (unsigned seed = 0; seed < 4; ++seed) {
    const Waveform a = testing::white_noise(22050, seed), b = testing::white_noise(22050, seed + 100);
    for (double v : {stoi(a, b), estoi(a, b)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Stoi, Errors) {
  const Waveform x = speech(1);
  Waveform shorter = x;
  shorter.samples.pop_back();
  EXPECT_THROW(stoi(x, shorter), InvalidArgument);
  EXPECT_THROW(estoi(x, shorter), InvalidArgument);
  const Waveform brief = testing::sine(440.0, 0.3);
  EXPECT_THROW(stoi(brief, brief), InvalidArgument);
  EXPECT_THROW(estoi(brief, brief), InvalidArgument);
}

// Exhaustive search over all monotone unit-step paths.
double brute_force_dtw(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int i, int j) {
  const double d = (a.row(i) - b.row(j)).norm();
  if (i == 0 && j == 0) return d;
  double best = std::numeric_limits<double>::infinity();
  if (i > 0 && j > 0) best = std::min(best, brute_force_dtw(a, b, i - 1, j - 1));
  if (i > 0) best = std::min(best, brute_force_dtw(a, b, i - 1, j));
  if (j > 0) best = std::min(best, brute_force_dtw(a, b, i, j - 1));
  return d + best;
}

TEST(Dtw, PathIsOptimalAgainstExhaustiveSearch) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd a(2 + trial % 4, 3), b(3 + trial % 3, 3);
    for (auto& v : a.reshaped()) v = g(rng);
    for (auto& v : b.reshaped()) v = g(rng);
    const auto path = dtw_path(a, b);
    double cost = 0.0;
    for (std::size_t k = 0; k < path.size(); ++k) {
      cost += (a.row(path[k].first) - b.row(path[k].second)).norm();
      if (k > 0) {
        const int di = path[k].first - path[k - 1].first, dj = path[k].second - path[k - 1].second;
        EXPECT_TRUE((di == 1 || di == 0) && (dj == 1 || dj == 0) && di + dj > 0);
      }
    }
    EXPECT_EQ(path.front(), std::make_pair(0, 0));
    EXPECT_EQ(path.back(), std::make_pair(int(a.rows()) - 1, int(b.rows()) - 1));
    EXPECT_NEAR(cost, brute_force_dtw(a, b, int(a.rows()) - 1, int(b.rows()) - 1), 1e-9);
  }
}

TEST(Dtw, DuplicatedFramesGiveSlopeTwo) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(20, 4), b(40, 4);
  for (auto& v : a.reshaped()) v = g(rng);
  for (int i = 0; i < 40; ++i) b.row(i) = a.row(i / 2);
  for (const auto& [i, j] : dtw_path(a, b)) EXPECT_EQ(i, j / 2);
}

TEST(PAlign, IdenticalInputsGiveDiagonalPath) {
  const Waveform x = speech(5);
  const auto p = p_align(x, x);
  for (std::size_t k = 0; k < p.path.size(); ++k) EXPECT_EQ(p.path[k], std::make_pair(int(k), int(k)));
  ASSERT_EQ(p.test.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(p.test.samples[i], x.samples[i], 1e-12);
}

TEST(PAlign, StretchedCopyHasSlopeTwo) {
  const Waveform x = speech(6);
  StretchSpec spec;
  spec.ratio = 2.0;
  const Waveform y = tempo_stretch(x, spec);
  const auto p = p_align(x, y);
  EXPECT_EQ(p.ref.size(), p.test.size());
  // Least-squares slope of test frame against reference frame.
  double mi = 0, mj = 0;
  for (const auto& [i, j] : p.path) mi += i, mj += j;
  mi /= p.path.size(), mj /= p.path.size();
  double num = 0, den = 0;
  for (const auto& [i, j] : p.path) num += (i - mi) * (j - mj), den += (i - mi) * (i - mi);
  EXPECT_NEAR(num / den, 2.0, 0.15);
  EXPECT_GT(stoi(p.ref, p.test), 0.6);
}

TEST(PAlign, RandomPairsHaveEqualLengths) {
  for (unsigned s = 0; s < 3; ++s) {
    const auto p = p_align(testing::white_noise(9000 + 3000 * s, s), speech(s, "DYS"));
    EXPECT_EQ(p.ref.size(), p.test.size());
    EXPECT_EQ(p.ref.size(), 9000u + 3000 * s);
  }
}

TEST(PAlign, Errors) {
  Waveform silence;
  silence.samples.assign(22050, 0.0);
  EXPECT_THROW(p_align(silence, speech(1)), InvalidArgument);
  EXPECT_THROW(p_align(speech(1), silence), InvalidArgument);
  EXPECT_THROW(p_align(testing::sine(200, 0.01), speech(1)), InvalidArgument);
}

std::vector<EvalUtterance> utterances(const std::string& speaker, const std::string& voice, int n, std::uint64_t seed,
                                      double snr_db = 0.0, bool noisy = false) {
  std::vector<EvalUtterance> out;
  for (int k = 0; k < n; ++k) {
    const auto& [w, phones] = toy_words()[k];
    Waveform a = speech(seed + k, voice, k);
    if (noisy) a = add_noise(a, snr_db, static_cast<unsigned>(seed + k));
    out.push_back({speaker + "_" + std::to_string(k), speaker, w, a});
  }
  return out;
}

TEST(MetricReport, IdenticalCorporaScoreOne) {
  const auto controls = utterances("C1", "CTL", 3, 10);
  auto tests = controls;
  for (auto& t : tests) t.speaker_id = "T1";
  const auto r = p_metric_report(controls, tests, {{"T1", "H"}});
  ASSERT_EQ(r.per_speaker.size(), 1u);
  EXPECT_NEAR(r.per_speaker.at("T1").p_stoi, 1.0, 1e-3);
  EXPECT_NEAR(r.per_speaker.at("T1").p_estoi, 1.0, 1e-3);
  EXPECT_EQ(r.per_group.at("H").utterances, 3);
  EXPECT_NEAR(r.per_group.at("H").p_stoi, 1.0, 1e-3);
  EXPECT_TRUE(r.skipped.empty());
}

TEST(MetricReport, CorruptedGroupScoresLower) {
  const auto controls = utterances("C1", "CTL", 3, 20);
  std::vector<EvalUtterance> tests;
  for (auto& u : utterances("A", "CTL", 3, 40)) tests.push_back(u);
  for (auto& u : utterances("B", "CTL", 3, 40, -5.0, true)) tests.push_back(u);
  const auto r = p_metric_report(controls, tests, {{"A", "H"}, {"B", "VL"}});
  EXPECT_LT(r.per_group.at("VL").p_stoi, r.per_group.at("H").p_stoi);
  EXPECT_LT(r.per_group.at("VL").p_estoi, r.per_group.at("H").p_estoi);
}

TEST(MetricReport, AggregationMatchesBruteForceAndIsOrderInvariant) {
  std::vector<EvalUtterance> controls = utterances("C1", "CTL", 2, 50);
  for (auto& u : utterances("C2", "CTL", 2, 60)) controls.push_back(u);
  std::vector<EvalUtterance> tests = utterances("A", "DYS", 2, 70);
  for (auto& u : utterances("B", "DYS", 1, 80, 0.0, true)) tests.push_back(u);
  const std::map<std::string, std::string> groups{{"A", "L"}, {"B", "L"}};
  const auto r = p_metric_report(controls, tests, groups);

  std::map<std::string, std::vector<double>> per_spk;
  for (const auto& t : tests) {
    double s = 0;
    int n = 0;
    for (const auto& c : controls)
      if (c.word == t.word) {
        const auto p = p_align(c.audio, t.audio);
        s += stoi(p.ref, p.test), ++n;
      }
    per_spk[t.speaker_id].push_back(s / n);
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  EXPECT_NEAR(r.per_speaker.at("A").p_stoi, mean(per_spk["A"]), 1e-12);
  EXPECT_NEAR(r.per_group.at("L").p_stoi, 0.5 * (mean(per_spk["A"]) + mean(per_spk["B"])), 1e-12);
  EXPECT_EQ(r.per_group.at("L").speakers, 2);
  EXPECT_EQ(r.per_group.at("L").utterances, 3);

  std::reverse(tests.begin(), tests.end());
  std::reverse(controls.begin(), controls.end());
  const auto r2 = p_metric_report(controls, tests, groups);
  EXPECT_NEAR(r2.per_group.at("L").p_stoi, r.per_group.at("L").p_stoi, 1e-12);
  EXPECT_NEAR(r2.per_group.at("L").p_estoi, r.per_group.at("L").p_estoi, 1e-12);
}

TEST(MetricReport, MissingWordsAreReportedNotFatal) {
  const auto controls = utterances("C1", "CTL", 1, 10);
  auto tests = utterances("T", "DYS", 2, 11);
  const auto r = p_metric_report(controls, tests, {{"T", "M"}});
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0].first, "T_1");
  EXPECT_EQ(r.per_speaker.at("T").utterances, 1);
  EXPECT_THROW(p_metric_report(controls, tests, {{"T", "XL"}}), InvalidArgument);
}

TEST(MetricReport, TsvAndJsonTwins) {
  MetricReport r;
  r.per_speaker["S1"] = {0.5, 0.25, 2, 1};
  r.per_speaker["S2"] = {0.7, 0.35, 1, 1};
  r.speaker_group = {{"S1", "VL"}, {"S2", "VL"}};
  r.per_group["VL"] = {0.6, 0.3, 3, 2};
  r.skipped.emplace_back("x", "why");
  EXPECT_EQ(report_tsv(r),
            "level\tname\tgroup\tspeakers\tutterances\tp_stoi\tp_estoi\n"
            "group\tVL\tVL\t2\t3\t0.6000\t0.3000\n"
            "speaker\tS1\tVL\t1\t2\t0.5000\t0.2500\n"
            "speaker\tS2\tVL\t1\t1\t0.7000\t0.3500\n");
  const auto j = report_json(r);
  EXPECT_EQ(j["groups"][0]["group"], "VL");
  EXPECT_DOUBLE_EQ(j["groups"][0]["p_stoi"].get<double>(), 0.6);
  EXPECT_EQ(j["speakers"].size(), 2u);
  EXPECT_EQ(j["skipped"][0]["id"], "x");
}

std::vector<ManifestEntry> write_sources(const fs::path& dir, int n) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> out;
  for (int k = 0; k < n; ++k) {
    ManifestEntry e;
    e.id = "src" + std::to_string(k);
    e.speaker_id = "CTL";
    e.word = toy_words()[k].first;
    e.audio_path = (dir / (e.id + ".wav")).string();
    write_wav(e.audio_path, testing::sine(200.0 + 50 * k, 0.2));
    out.push_back(e);
  }
  return out;
}

Waveform fake_convert(const Waveform& w, const std::string& target, std::uint64_t seed) {
  Waveform out = w;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.01);
  for (double& s : out.samples) s = 0.5 * s + g(rng) + (target == "T2" ? 0.01 : 0.0);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Augmentation, CountsOnePerPair) {
  const auto dir = temp_dir("count");
  const auto src = write_sources(dir / "src", 3);
  const auto s = generate_augmentation_set(src, {"T1", "T2"}, fake_convert, (dir / "out").string(), 42);
  EXPECT_EQ(s.requested, 6u);
  EXPECT_EQ(s.entries.size(), 6u);
  EXPECT_TRUE(s.failures.empty());
  const auto m = read_manifest((dir / "out" / "manifest.jsonl").string());
  ASSERT_EQ(m.size(), 6u);
  for (const auto& e : m) {
    EXPECT_TRUE(fs::exists(e.audio_path));
    EXPECT_EQ(e.id, augmentation_item_id(*e.source_id, *e.target_id));
    EXPECT_EQ(e.speaker_id, *e.target_id);
  }
  EXPECT_EQ(m[1].word, src[0].word);
  int wavs = 0;
  for (const auto& f : fs::directory_iterator(dir / "out" / "wav")) wavs += f.path().extension() == ".wav";
  EXPECT_EQ(wavs, 6);
}

TEST(Augmentation, SameRootSeedIsByteIdentical) {
  const auto dir = temp_dir("det");
  const auto src = write_sources(dir / "src", 2);
  generate_augmentation_set(src, {"T1", "T2"}, fake_convert, (dir / "a").string(), 7);
  generate_augmentation_set(src, {"T1", "T2"}, fake_convert, (dir / "b").string(), 7);
  generate_augmentation_set(src, {"T1", "T2"}, fake_convert, (dir / "c").string(), 8);
  EXPECT_EQ(slurp(dir / "a" / "manifest.jsonl"), slurp(dir / "b" / "manifest.jsonl"));
  for (const auto& f : fs::directory_iterator(dir / "a" / "wav")) {
    EXPECT_EQ(slurp(f.path()), slurp(dir / "b" / "wav" / f.path().filename()));
    EXPECT_NE(slurp(f.path()), slurp(dir / "c" / "wav" / f.path().filename()));
  }
}

TEST(Augmentation, FailuresAreSkipped) {
  const auto dir = temp_dir("fail");
  auto src = write_sources(dir / "src", 2);
  src.push_back({"ghost", (dir / "src" / "missing.wav").string(), "CTL", "w", {}, {}, {}, {}});
  const Converter flaky = [](const Waveform& w, const std::string& target, std::uint64_t seed) {
    if (target == "BAD") throw Error("no decoder for BAD");
    return fake_convert(w, target, seed);
  };
  const auto s = generate_augmentation_set(src, {"T1", "BAD"}, flaky, (dir / "out").string(), 1);
  EXPECT_EQ(s.requested, 6u);
  EXPECT_EQ(s.entries.size(), 2u);
  EXPECT_EQ(s.failures.size(), 4u);
  EXPECT_EQ(read_manifest((dir / "out" / "manifest.jsonl").string()).size(), 2u);
}

}  // namespace
}  // namespace dutavc
