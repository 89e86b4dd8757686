#pragma once

// Whole-utterance tempo modification toward a target speaker's phoneme
// durations.

#include <string>
#include <vector>

#include "dutavc/alignment.hpp"
#include "dutavc/audio.hpp"
#include "dutavc/encoder.hpp"

namespace dutavc {

struct StretchSpec {
  static constexpr double kMinRatio = 0.25;
  static constexpr double kMaxRatio = 4.0;

  double ratio = 1.0;  // output duration / input duration
  std::string method = "wsola";
  double window_s = 0.050;
  double tolerance_s = 0.010;  // +- search range around the nominal analysis position

  void validate() const;
};

/// Mean over `phonemes` of the target speaker's per-phoneme mean durations.
/// Phonemes the target never produced fall back to the speaker's global mean.
double target_mean_duration(const std::vector<PhonemeId>& phonemes, const DurationStats& stats,
                            const std::string& target_speaker);

/// Minimum input length accepted by tempo_stretch for the given spec.
std::size_t min_stretch_input(const StretchSpec& spec, int sample_rate_hz);

/// Pitch-preserving time-scale modification (WSOLA, Hann windows, 50%
/// synthesis overlap). Output length is round(ratio * input length); ratio 1
/// returns the input unchanged.
Waveform tempo_stretch(const Waveform& w, const StretchSpec& spec);

struct DurationModification {
  Waveform audio;
  double t_s = 0.0;
  double t_t = 0.0;
  double ratio = 1.0;
  std::vector<PhonemeId> phoneme_set;
};

/// source_duration_query -> target_mean_duration -> tempo_stretch with ratio t_t / t_s.
DurationModification duration_modified_source(const Waveform& w, const EncoderOutput& encoder_out,
                                               const DurationStats& stats,
                                               const std::string& target_speaker,
                                               StretchSpec spec = {});

}  // namespace dutavc
