#pragma once

// Intelligibility metrics (STOI, ESTOI), DTW prior alignment against control
// renditions, per-group reporting and the augmentation-set generator.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dutavc/audio.hpp"
#include "dutavc/manifest.hpp"

namespace dutavc {

/// STOI analysis constants: 10 kHz, 256-sample frames with 50% overlap, 512-point
/// FFT, 15 one-third-octave bands from 150 Hz, 30-frame segments, -15 dB clipping,
/// 40 dB silent-frame removal.
struct StoiConstants {
  static constexpr int kRate = 10000;
  static constexpr int kFrame = 256;
  static constexpr int kNfft = 512;
  static constexpr int kBands = 15;
  static constexpr double kMinFreq = 150.0;
  static constexpr int kSegment = 30;
  static constexpr double kBeta = -15.0;
  static constexpr double kDynRange = 40.0;
};

/// Both signals must have the same rate and length. Result clamped to [0, 1].
double stoi(const Waveform& ref, const Waveform& deg);
double estoi(const Waveform& ref, const Waveform& deg);

/// Minimum-cost monotone path through the Euclidean frame distance matrix with
/// unit steps (1,0), (0,1), (1,1). Rows of `a` and `b` are frames. The path
/// starts at (0, 0) and ends at (rows(a)-1, rows(b)-1).
std::vector<std::pair<int, int>> dtw_path(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct AlignedPair {
  Waveform ref;
  Waveform test;  // warped onto the time axis of `ref`, same length
  std::vector<std::pair<int, int>> path;  // (ref frame, test frame)
};

/// DTW on log-mel frames, then overlap-add of test segments at the matched positions.
AlignedPair p_align(const Waveform& ref, const Waveform& test, const MelConfig& cfg = {});

struct EvalUtterance {
  std::string id;
  std::string speaker_id;
  std::string word;
  Waveform audio;
};

/// Intelligibility group labels, lowest first.
const std::vector<std::string>& intelligibility_groups();

struct MetricCell {
  double p_stoi = 0.0;
  double p_estoi = 0.0;
  int utterances = 0;
  int speakers = 0;
};

struct MetricReport {
  std::map<std::string, MetricCell> per_speaker;
  std::map<std::string, MetricCell> per_group;  // mean of speaker means
  std::map<std::string, std::string> speaker_group;
  std::vector<std::pair<std::string, std::string>> skipped;  // (test id, reason)
};

/// Each test utterance is aligned to every control utterance of the same word;
/// the per-rendition scores are averaged. Speakers are averaged within groups.
/// `groups` maps speaker ids to labels from intelligibility_groups().
MetricReport p_metric_report(const std::vector<EvalUtterance>& controls, const std::vector<EvalUtterance>& tests,
                             const std::map<std::string, std::string>& groups);

std::string report_tsv(const MetricReport& r);
nlohmann::ordered_json report_json(const MetricReport& r);
void write_report(const std::string& tsv_path, const std::string& json_path, const MetricReport& r);

/// Converts `source` toward speaker `target` with the given sampler seed.
using Converter = std::function<Waveform(const Waveform& source, const std::string& target, std::uint64_t seed)>;

struct AugmentationSummary {
  std::vector<ManifestEntry> entries;  // audio paths relative to the output directory
  std::vector<std::pair<std::string, std::string>> failures;  // (item id, reason)
  std::size_t requested = 0;
};

/// One conversion per (control utterance, target) pair, written to
/// <out_dir>/wav/<source>__<target>.wav and listed in <out_dir>/manifest.jsonl.
/// Item seeds derive from `root_seed` and the item id; failures are logged and skipped.
AugmentationSummary generate_augmentation_set(const std::vector<ManifestEntry>& controls,
                                              const std::vector<std::string>& targets, const Converter& convert,
                                              const std::string& out_dir, std::uint64_t root_seed);

std::string augmentation_item_id(const std::string& source_id, const std::string& target);

}  // namespace dutavc
