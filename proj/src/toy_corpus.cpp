#include "dutavc/toy_corpus.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>

#include "dutavc/error.hpp"
#include "dutavc/random.hpp"

namespace dutavc {

namespace {

struct PhoneSpec {
  double f1, f2, f3;
  double base_duration_s;
  double gain;
  bool fricative;
};

const std::map<std::string, PhoneSpec>& phone_specs() {
  static const std::map<std::string, PhoneSpec> specs = {
      {"AA", {730, 1090, 2440, 0.20, 1.0, false}},  {"IY", {270, 2290, 3010, 0.16, 0.9, false}},
      {"UW", {300, 870, 2240, 0.18, 0.8, false}},   {"EH", {530, 1840, 2480, 0.15, 0.95, false}},
      {"OW", {570, 840, 2410, 0.21, 0.9, false}},   {"M", {250, 1200, 2300, 0.11, 0.35, false}},
      {"S", {0, 0, 0, 0.14, 0.25, true}},
  };
  return specs;
}

constexpr double kEdgeSilence = 0.15;
constexpr double kRamp = 0.012;

// Harmonic amplitude of a formant envelope with spectral tilt.
double envelope(const PhoneSpec& p, const ToySpeaker& s, double f) {
  auto peak = [&](double center, double bw) {
    const double d = (f - center * s.formant_scale) / bw;
    return 1.0 / (1.0 + d * d);
  };
  const double formants = peak(p.f1, 90.0) + 0.7 * peak(p.f2, 110.0) + 0.35 * peak(p.f3, 160.0) + 0.01;
  const double tilt = std::pow(f / 100.0, s.tilt_db_per_octave / (20.0 * std::log10(2.0)));
  return p.gain * formants * tilt;
}

}  // namespace

PhonemeInventory toy_inventory() {
  std::vector<std::string> labels = {PhonemeInventory::kSilence};
  for (const auto& [label, spec] : phone_specs()) labels.push_back(label);
  return PhonemeInventory(labels);
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& toy_words() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> words = {
      {"ama", {"AA", "M", "AA"}},        {"see", {"S", "IY"}},
      {"moo", {"M", "UW"}},              {"oh-me", {"OW", "M", "IY"}},
      {"essa", {"EH", "S", "AA"}},       {"ooze", {"UW", "S"}},
      {"meow", {"M", "IY", "OW"}},       {"assume", {"AA", "S", "UW", "M"}},
      {"emo", {"EH", "M", "OW"}},        {"sea-moss", {"S", "IY", "M", "AA", "S"}},
      {"ohm", {"OW", "M"}},              {"mesa", {"M", "EH", "S", "AA"}},
  };
  return words;
}

std::vector<ToySpeaker> default_toy_speakers() {
  return {{"CTL", 115.0, -5.0, 1.0, 1.0, 0.002}, {"DYS", 185.0, -13.0, 1.15, 1.8, 0.008}};
}

ToyUtterance synthesize_toy_utterance(const ToySpeaker& speaker, const std::string& word,
                                      const std::vector<std::string>& phones, std::uint64_t seed,
                                      const std::string& id) {
  DUTAVC_CHECK(!phones.empty(), "toy utterance needs at least one phone");
  DUTAVC_CHECK(speaker.f0_hz > 20.0 && speaker.duration_scale > 0.0, "invalid toy speaker");
  const PhonemeInventory inv = toy_inventory();
  Rng rng(seed);
  const double sr = kSampleRate;

  std::vector<PhonemeInterval> intervals;
  std::vector<const PhoneSpec*> specs;
  double t = kEdgeSilence;
  for (const auto& ph : phones) {
    const auto it = phone_specs().find(ph);
    if (it == phone_specs().end()) throw InvalidArgument("unknown toy phone '" + ph + "'");
    const double d = it->second.base_duration_s * speaker.duration_scale * uniform(rng, 0.85, 1.15);
    intervals.push_back({inv.id(ph), t, t + d});
    specs.push_back(&it->second);
    t += d;
  }
  const double total = t + kEdgeSilence;
  const auto n = static_cast<std::size_t>(std::ceil(total * sr));

  const int max_harmonics = static_cast<int>(0.45 * sr / (speaker.f0_hz * 0.9));
  std::vector<double> phase(max_harmonics + 1, 0.0);
  for (double& p : phase) p = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double vibrato_rate = uniform(rng, 4.0, 6.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Per-phone harmonic amplitudes at the nominal f0, blended across boundaries.
  std::vector<std::vector<double>> amps(specs.size(), std::vector<double>(max_harmonics + 1, 0.0));
  for (std::size_t p = 0; p < specs.size(); ++p)
    if (!specs[p]->fricative)
      for (int k = 1; k <= max_harmonics; ++k) amps[p][k] = envelope(*specs[p], speaker, k * speaker.f0_hz);

  Waveform w;
  w.sample_rate_hz = kSampleRate;
  w.samples.assign(n, 0.0);
  double prev_noise = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double time = i / sr;
    const double f0 = speaker.f0_hz * (1.0 + 0.015 * std::sin(2.0 * std::numbers::pi * vibrato_rate * time)) *
                      (1.0 - 0.05 * time / total);
    double voiced = 0.0, fric = 0.0;
    for (std::size_t p = 0; p < intervals.size(); ++p) {
      const double a = intervals[p].start_s, b = intervals[p].end_s;
      if (time < a - kRamp || time > b + kRamp) continue;
      // Raised-cosine crossfade weight of phone p at this instant.
      auto ramp = [](double x) { return x <= 0 ? 0.0 : x >= 1 ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * x); };
      const double weight = ramp((time - (a - kRamp)) / (2 * kRamp)) * ramp(((b + kRamp) - time) / (2 * kRamp));
      if (weight <= 0.0) continue;
      if (specs[p]->fricative) {
        fric += weight * specs[p]->gain;
      } else {
        double s = 0.0;
        for (int k = 1; k <= max_harmonics; ++k)
          if (k * f0 < 0.45 * sr) s += amps[p][k] * std::sin(phase[k]);
        voiced += weight * s;
      }
    }
    for (int k = 1; k <= max_harmonics; ++k) phase[k] = std::fmod(phase[k] + 2.0 * std::numbers::pi * k * f0 / sr, 2.0 * std::numbers::pi);
    const double white = gauss(rng);
    const double hp = white - prev_noise;  // first difference tilts the noise upward in frequency
    prev_noise = white;
    w.samples[i] = 0.05 * voiced + 0.15 * fric * hp + speaker.noise_level * white;
  }
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : w.samples) v *= 0.5 / peak;

  ToyUtterance u;
  u.id = id;
  u.speaker_id = speaker.id;
  u.word = word;
  for (const auto& iv : intervals) u.phones.push_back(iv.phoneme);
  u.audio = std::move(w);
  u.alignment = make_alignment(intervals);
  return u;
}

std::vector<ToyUtterance> make_toy_corpus(const std::vector<ToySpeaker>& speakers, int per_speaker,
                                          std::uint64_t seed) {
  DUTAVC_CHECK(per_speaker >= 1, "toy corpus: need at least one utterance per speaker");
  std::vector<ToyUtterance> out;
  const auto& words = toy_words();
  for (const auto& spk : speakers)
    for (int u = 0; u < per_speaker; ++u) {
      const auto& [word, phones] = words[u % words.size()];
      const std::string id = spk.id + "_" + std::to_string(u);
      out.push_back(synthesize_toy_utterance(spk, word, phones, derive_seed(seed, "toy", id), id));
    }
  return out;
}

std::vector<ManifestEntry> write_toy_corpus(const std::string& dir, const std::vector<ToyUtterance>& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "wav");
  fs::create_directories(fs::path(dir) / "lab");
  const PhonemeInventory inv = toy_inventory();
  std::vector<ManifestEntry> entries;
  for (const auto& u : corpus) {
    ManifestEntry e;
    e.id = u.id;
    e.speaker_id = u.speaker_id;
    e.word = u.word;
    e.audio_path = "wav/" + u.id + ".wav";
    e.alignment_path = "lab/" + u.id + ".lab";
    write_wav((fs::path(dir) / e.audio_path).string(), u.audio);
    write_alignment((fs::path(dir) / *e.alignment_path).string(), u.alignment, inv);
    entries.push_back(e);
  }
  write_manifest((fs::path(dir) / "manifest.jsonl").string(), entries);
  return entries;
}

ToyDataset write_toy_dataset(const std::string& dir, int per_speaker, std::uint64_t seed,
                             const std::vector<ToySpeaker>& speakers) {
  DUTAVC_CHECK(speakers.size() >= 2, "toy dataset: need a typical and at least one atypical speaker");
  namespace fs = std::filesystem;
  ToyDataset d;
  d.entries = write_toy_corpus(dir, make_toy_corpus(speakers, per_speaker, seed));
  std::vector<ManifestEntry> typical, atypical;
  for (const auto& e : d.entries) (e.speaker_id == speakers.front().id ? typical : atypical).push_back(e);
  d.typical_manifest = (fs::path(dir) / "typical.jsonl").string();
  d.atypical_manifest = (fs::path(dir) / "atypical.jsonl").string();
  write_manifest(d.typical_manifest, typical);
  write_manifest(d.atypical_manifest, atypical);
  return d;
}

}  // namespace dutavc
