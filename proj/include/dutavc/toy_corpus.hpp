#pragma once

// Synthetic speech corpus: harmonic vowels and a fricative with formant
// envelopes. Speakers differ in f0, spectral tilt, vocal-tract scale and
// speaking rate, which makes them separable by the built-in embedding.

#include <cstdint>
#include <string>
#include <vector>

#include "dutavc/alignment.hpp"
#include "dutavc/audio.hpp"
#include "dutavc/manifest.hpp"

namespace dutavc {

struct ToySpeaker {
  std::string id;
  double f0_hz = 120.0;
  double tilt_db_per_octave = -6.0;
  double formant_scale = 1.0;
  double duration_scale = 1.0;
  double noise_level = 0.002;
};

struct ToyUtterance {
  std::string id;
  std::string speaker_id;
  std::string word;
  std::vector<PhonemeId> phones;
  Waveform audio;
  PhonemeAlignment alignment;
};

PhonemeInventory toy_inventory();

/// Fixed vocabulary of phoneme sequences shared by all speakers.
const std::vector<std::pair<std::string, std::vector<std::string>>>& toy_words();

/// A typical ("CTL") and an atypical ("DYS") speaker with distinct tilt and rate.
std::vector<ToySpeaker> default_toy_speakers();

ToyUtterance synthesize_toy_utterance(const ToySpeaker& speaker, const std::string& word,
                                      const std::vector<std::string>& phones, std::uint64_t seed,
                                      const std::string& id);

/// `per_speaker` utterances per speaker cycling through the vocabulary.
std::vector<ToyUtterance> make_toy_corpus(const std::vector<ToySpeaker>& speakers, int per_speaker,
                                          std::uint64_t seed);

/// Writes <dir>/wav/<id>.wav, <dir>/lab/<id>.lab and <dir>/manifest.jsonl;
/// returns the manifest entries.
std::vector<ManifestEntry> write_toy_corpus(const std::string& dir, const std::vector<ToyUtterance>& corpus);

struct ToyDataset {
  std::vector<ManifestEntry> entries;
  std::string typical_manifest;   // <dir>/typical.jsonl, first speaker
  std::string atypical_manifest;  // <dir>/atypical.jsonl, the others
};

/// write_toy_corpus plus per-role manifests.
ToyDataset write_toy_dataset(const std::string& dir, int per_speaker, std::uint64_t seed,
                             const std::vector<ToySpeaker>& speakers = default_toy_speakers());

}  // namespace dutavc
