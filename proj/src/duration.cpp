#include "dutavc/duration.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dutavc/error.hpp"

namespace dutavc {

void StretchSpec::validate() const {
  if (!(ratio >= kMinRatio && ratio <= kMaxRatio))
    throw InvalidArgument("stretch ratio " + std::to_string(ratio) + " outside [0.25, 4]");
  if (method != "wsola") throw InvalidArgument("unknown stretch method '" + method + "'");
  DUTAVC_CHECK(window_s > 0.0 && tolerance_s >= 0.0, "stretch window/tolerance must be positive");
}

double target_mean_duration(const std::vector<PhonemeId>& phonemes, const DurationStats& stats,
                            const std::string& target_speaker) {
  if (phonemes.empty()) throw InvalidArgument("target_mean_duration: empty phoneme set");
  if (!stats.has_speaker(target_speaker))
    throw InvalidArgument("target_mean_duration: speaker '" + target_speaker +
                          "' not in duration statistics");
  const SpeakerDurations& sd = stats.speaker(target_speaker);
  double sum = 0.0;
  for (PhonemeId p : phonemes) {
    DUTAVC_CHECK(p >= 0 && p < stats.inventory.size(), "target_mean_duration: phoneme id out of range");
    if (static_cast<std::size_t>(p) < sd.phonemes.size() && sd.phonemes[p].count > 0) {
      sum += sd.phonemes[p].mean_s;
    } else if (sd.global_mean_s) {
      sum += *sd.global_mean_s;
    } else {
      throw InvalidArgument("target_mean_duration: speaker '" + target_speaker +
                            "' has no duration for '" + stats.inventory.symbol(p) +
                            "' and no global mean");
    }
  }
  return sum / static_cast<double>(phonemes.size());
}

namespace {

struct WsolaGeometry {
  int win;  // even
  int hop;  // synthesis hop, win / 2
  int tol;
};

WsolaGeometry geometry(const StretchSpec& spec, int rate) {
  WsolaGeometry g;
  g.win = 2 * std::max(2, static_cast<int>(std::lround(spec.window_s * rate / 2.0)));
  g.hop = g.win / 2;
  g.tol = static_cast<int>(std::lround(spec.tolerance_s * rate));
  return g;
}

}  // namespace

std::size_t min_stretch_input(const StretchSpec& spec, int sample_rate_hz) {
  return 2 * static_cast<std::size_t>(geometry(spec, sample_rate_hz).win);
}

Waveform tempo_stretch(const Waveform& w, const StretchSpec& spec) {
  spec.validate();
  DUTAVC_CHECK(w.sample_rate_hz > 0, "tempo_stretch: invalid sample rate");
  const std::size_t min_len = min_stretch_input(spec, w.sample_rate_hz);
  if (w.size() < min_len)
    throw InvalidArgument("tempo_stretch: input has " + std::to_string(w.size()) +
                          " samples, need at least " + std::to_string(min_len));
  if (spec.ratio == 1.0) return w;

  const auto [win, hop, tol] = geometry(spec, w.sample_rate_hz);
  const long n = static_cast<long>(w.size());
  const long out_len = std::lround(spec.ratio * static_cast<double>(n));
  const double analysis_hop = hop / spec.ratio;

  // Frames are centred on their nominal positions; the padded input lets
  // every frame (and its tolerance search) read in range.
  const long pad = win / 2 + tol + hop;
  std::vector<double> x(static_cast<std::size_t>(n + 2 * pad + win), 0.0);
  std::copy(w.samples.begin(), w.samples.end(), x.begin() + pad);

  std::vector<double> window(win);
  for (int i = 0; i < win; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

  const long frames = (out_len + hop - 1) / hop + 1;
  std::vector<double> y(static_cast<std::size_t>((frames + 1) * hop + win), 0.0);
  std::vector<double> wsum(y.size(), 0.0);
  const long out_offset = win / 2;

  long prev = -1;  // padded-input start of the previously copied frame
  for (long m = 0; m < frames; ++m) {
    const long nominal = pad + std::lround(m * analysis_hop) - win / 2;
    long start = nominal;
    if (prev >= 0 && tol > 0) {
      // Best match to the natural continuation of the previous frame.
      const double* ref = x.data() + prev + hop;
      double best = -std::numeric_limits<double>::infinity();
      const long lo = std::max(0L, nominal - tol);
      const long hi = std::min(static_cast<long>(x.size()) - win, nominal + tol);
      for (long s = lo; s <= hi; ++s) {
        double c = 0.0;
        const double* cand = x.data() + s;
        for (int i = 0; i < win; ++i) c += ref[i] * cand[i];
        if (c > best) {
          best = c;
          start = s;
        }
      }
    }
    prev = start;
    const long at = m * hop;
    for (int i = 0; i < win; ++i) {
      y[at + i] += window[i] * x[start + i];
      wsum[at + i] += window[i];
    }
  }

  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (long i = 0; i < out_len; ++i) {
    const double s = wsum[i + out_offset];
    out.samples[i] = s > 1e-8 ? y[i + out_offset] / s : 0.0;
  }
  return out;
}

DurationModification duration_modified_source(const Waveform& w, const EncoderOutput& encoder_out,
                                               const DurationStats& stats,
                                               const std::string& target_speaker, StretchSpec spec) {
  const DurationQuery q = source_duration_query(encoder_out);
  DurationModification r;
  r.t_s = q.t_s;
  r.phoneme_set = q.phoneme_set;
  r.t_t = target_mean_duration(q.phoneme_set, stats, target_speaker);
  r.ratio = r.t_t / r.t_s;
  spec.ratio = r.ratio;
  r.audio = tempo_stretch(w, spec);
  return r;
}

}  // namespace dutavc
