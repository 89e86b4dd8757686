#pragma once

// Phoneme alignments, the speaker-independent mel (SIMS) dictionary and
// per-speaker phoneme duration statistics.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "dutavc/audio.hpp"

namespace dutavc {

using PhonemeId = int;

/// Ordered phoneme labels; index 0 is always the silence symbol.
class PhonemeInventory {
 public:
  static constexpr const char* kSilence = "sil";
  static constexpr PhonemeId kSilenceId = 0;

  PhonemeInventory() : PhonemeInventory(std::vector<std::string>{}) {}
  /// Silence is inserted at index 0 when missing; duplicates are rejected.
  explicit PhonemeInventory(const std::vector<std::string>& labels);

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(PhonemeId id) const { return symbols_.at(id); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::optional<PhonemeId> find(const std::string& label) const;
  PhonemeId id(const std::string& label) const;  // throws on unknown labels
  std::uint64_t hash() const;

  bool operator==(const PhonemeInventory& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, PhonemeId> index_;
};

struct PhonemeInterval {
  PhonemeId phoneme = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  double duration_s() const { return end_s - start_s; }
};

/// Sorted, non-overlapping intervals. Gaps are silence.
struct PhonemeAlignment {
  std::vector<PhonemeInterval> intervals;
};

/// Reads "label<TAB>start_s<TAB>end_s" lines ('#' lines and blank lines are
/// skipped; any whitespace separates fields).
PhonemeAlignment parse_alignment(const std::string& path, const PhonemeInventory& inventory);
PhonemeAlignment parse_alignment_text(const std::string& text, const PhonemeInventory& inventory,
                                      const std::string& source_name = "<text>");
/// Sorts and validates; throws on end <= start or overlaps.
PhonemeAlignment make_alignment(std::vector<PhonemeInterval> intervals);
/// Distinct labels used by the given alignment files (no validation against an inventory).
std::vector<std::string> collect_alignment_labels(const std::vector<std::string>& paths);
void write_alignment(const std::string& path, const PhonemeAlignment& a,
                     const PhonemeInventory& inventory);

/// Label of each frame: the interval containing the frame centre (i + 0.5) * hop_s,
/// half-open [start, end); uncovered frames are silence.
std::vector<PhonemeId> frame_labels(const PhonemeAlignment& a, int num_frames, double hop_s);

/// Per-frame log duration of the owning phoneme; silence frames get 0.
std::vector<double> frame_log_durations(const PhonemeAlignment& a, int num_frames, double hop_s);

// --- SIMS dictionary ----------------------------------------------------------

struct SimsDictionary {
  PhonemeInventory inventory;
  Eigen::MatrixXd means;                // P x n_mels
  std::vector<std::uint64_t> counts;    // frames per phoneme

  bool has(PhonemeId p) const { return p >= 0 && p < static_cast<int>(counts.size()) && counts[p] > 0; }
  /// Mean mel vector of phoneme p; throws when p was never observed.
  Eigen::RowVectorXd mean(PhonemeId p) const;
  int num_mels() const { return static_cast<int>(means.cols()); }
};

/// Compensated (Kahan) frame accumulator. Partial accumulators merge.
class SimsAccumulator {
 public:
  SimsAccumulator(PhonemeInventory inventory, int n_mels);
  void add(const MelSpectrogram& mel, const std::vector<PhonemeId>& labels);
  void merge(const SimsAccumulator& other);
  SimsDictionary finish() const;

 private:
  void add_row(PhonemeId p, const Eigen::RowVectorXd& row, std::uint64_t n);

  PhonemeInventory inventory_;
  Eigen::MatrixXd sum_, comp_;
  std::vector<std::uint64_t> counts_;
};

struct LabeledMel {
  const MelSpectrogram* mel;
  const std::vector<PhonemeId>* labels;
};

SimsDictionary build_sims_dictionary(const std::vector<LabeledMel>& corpus,
                                     const PhonemeInventory& inventory);

/// Replaces every frame by the dictionary mean of its label.
MelSpectrogram ground_truth_sims(const MelSpectrogram& m, const std::vector<PhonemeId>& labels,
                                 const SimsDictionary& dict);

void write_sims_dictionary(const std::string& path, const SimsDictionary& d);
SimsDictionary read_sims_dictionary(const std::string& path);

// --- duration statistics --------------------------------------------------------

struct PhonemeDuration {
  double mean_s = 0.0;
  std::uint64_t count = 0;
};

struct SpeakerDurations {
  std::vector<PhonemeDuration> phonemes;  // indexed by PhonemeId
  std::optional<double> global_mean_s;    // unset when no non-silence phoneme was seen
};

struct DurationStats {
  PhonemeInventory inventory;
  std::map<std::string, SpeakerDurations> speakers;

  bool has_speaker(const std::string& s) const { return speakers.count(s) > 0; }
  const SpeakerDurations& speaker(const std::string& s) const;
};

struct SpeakerAlignment {
  std::string speaker_id;
  const PhonemeAlignment* alignment;
};

/// Per speaker, mean (end - start) of each non-silence phoneme; global mean is
/// the mean of the per-phoneme means with count > 0.
DurationStats build_duration_stats(const std::vector<SpeakerAlignment>& corpus,
                                   const PhonemeInventory& inventory);

void write_duration_stats(const std::string& path, const DurationStats& s);
DurationStats read_duration_stats(const std::string& path);

}  // namespace dutavc
