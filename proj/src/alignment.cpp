#include "dutavc/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dutavc/binary_io.hpp"
#include "dutavc/error.hpp"
#include "dutavc/random.hpp"

namespace dutavc {

// --- inventory ------------------------------------------------------------------

PhonemeInventory::PhonemeInventory(const std::vector<std::string>& labels) {
  symbols_.push_back(kSilence);
  for (const auto& l : labels) {
    if (l == kSilence) continue;
    DUTAVC_CHECK(!l.empty(), "phoneme inventory: empty label");
    symbols_.push_back(l);
  }
  for (PhonemeId i = 0; i < size(); ++i) {
    if (!index_.emplace(symbols_[i], i).second)
      throw InvalidArgument("phoneme inventory: duplicate label '" + symbols_[i] + "'");
  }
}

std::optional<PhonemeId> PhonemeInventory::find(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

PhonemeId PhonemeInventory::id(const std::string& label) const {
  auto p = find(label);
  if (!p) throw InvalidArgument("unknown phoneme label '" + label + "'");
  return *p;
}

std::uint64_t PhonemeInventory::hash() const {
  std::string joined;
  for (const auto& s : symbols_) joined.append(s).push_back('\n');
  return fnv1a64(joined);
}

namespace {

void put_inventory(std::ostream& os, const PhonemeInventory& inv) {
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(inv.size()));
  for (const auto& s : inv.symbols()) bin::put_string(os, s);
}

PhonemeInventory get_inventory(std::istream& is) {
  const auto n = bin::get<std::uint32_t>(is);
  std::vector<std::string> labels;
  for (std::uint32_t i = 0; i < n; ++i) labels.push_back(bin::get_string(is));
  if (labels.empty() || labels[0] != PhonemeInventory::kSilence)
    throw FormatError("embedded phoneme inventory does not start with silence");
  return PhonemeInventory(labels);
}

struct Kahan {
  double sum = 0.0, comp = 0.0;
  void add(double x) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

}  // namespace

// --- alignments -------------------------------------------------------------------

PhonemeAlignment make_alignment(std::vector<PhonemeInterval> intervals) {
  for (const auto& iv : intervals) {
    if (!(std::isfinite(iv.start_s) && std::isfinite(iv.end_s)) || iv.start_s < 0.0)
      throw InvalidArgument("alignment: interval times must be finite and non-negative");
    if (iv.end_s <= iv.start_s)
      throw InvalidArgument("alignment: interval end " + std::to_string(iv.end_s) +
                            " <= start " + std::to_string(iv.start_s));
  }
  std::stable_sort(intervals.begin(), intervals.end(),
                   [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
  for (std::size_t i = 1; i < intervals.size(); ++i) {
    if (intervals[i].start_s < intervals[i - 1].end_s) {
      std::ostringstream msg;
      msg << "alignment: overlapping intervals [" << intervals[i - 1].start_s << ", "
          << intervals[i - 1].end_s << ") and [" << intervals[i].start_s << ", "
          << intervals[i].end_s << ")";
      throw InvalidArgument(msg.str());
    }
  }
  return PhonemeAlignment{std::move(intervals)};
}

PhonemeAlignment parse_alignment_text(const std::string& text, const PhonemeInventory& inventory,
                                      const std::string& source_name) {
  std::istringstream in(text);
  std::string line;
  std::vector<PhonemeInterval> intervals;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string label;
    double start = 0.0, end = 0.0;
    if (!(fields >> label >> start >> end))
      throw FormatError(source_name + ":" + std::to_string(lineno) +
                        ": expected 'label<TAB>start_s<TAB>end_s'");
    auto id = inventory.find(label);
    if (!id)
      throw FormatError(source_name + ":" + std::to_string(lineno) + ": unknown phoneme '" +
                        label + "'");
    intervals.push_back({*id, start, end});
  }
  try {
    return make_alignment(std::move(intervals));
  } catch (const InvalidArgument& e) {
    throw FormatError(source_name + ": " + e.what());
  }
}

PhonemeAlignment parse_alignment(const std::string& path, const PhonemeInventory& inventory) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open alignment file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_alignment_text(ss.str(), inventory, path);
}

std::vector<std::string> collect_alignment_labels(const std::vector<std::string>& paths) {
  std::set<std::string> labels;
  for (const auto& path : paths) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open alignment file: " + path);
    std::string line;
    while (std::getline(is, line)) {
      std::istringstream fields(line);
      std::string label;
      if (!(fields >> label) || label[0] == '#') continue;
      labels.insert(label);
    }
  }
  return {labels.begin(), labels.end()};
}

void write_alignment(const std::string& path, const PhonemeAlignment& a,
                     const PhonemeInventory& inventory) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write alignment file: " + path);
  os.precision(17);
  for (const auto& iv : a.intervals)
    os << inventory.symbol(iv.phoneme) << '\t' << iv.start_s << '\t' << iv.end_s << '\n';
}

std::vector<PhonemeId> frame_labels(const PhonemeAlignment& a, int num_frames, double hop_s) {
  DUTAVC_CHECK(num_frames >= 1, "frame_labels: need at least one frame");
  DUTAVC_CHECK(hop_s > 0.0, "frame_labels: hop must be positive");
  std::vector<PhonemeId> labels(num_frames, PhonemeInventory::kSilenceId);
  std::size_t k = 0;
  for (int i = 0; i < num_frames; ++i) {
    const double centre = (i + 0.5) * hop_s;
    while (k < a.intervals.size() && a.intervals[k].end_s <= centre) ++k;
    if (k < a.intervals.size() && a.intervals[k].start_s <= centre)
      labels[i] = a.intervals[k].phoneme;
  }
  return labels;
}

std::vector<double> frame_log_durations(const PhonemeAlignment& a, int num_frames, double hop_s) {
  DUTAVC_CHECK(num_frames >= 1, "frame_log_durations: need at least one frame");
  std::vector<double> out(num_frames, 0.0);
  std::size_t k = 0;
  for (int i = 0; i < num_frames; ++i) {
    const double centre = (i + 0.5) * hop_s;
    while (k < a.intervals.size() && a.intervals[k].end_s <= centre) ++k;
    if (k < a.intervals.size() && a.intervals[k].start_s <= centre &&
        a.intervals[k].phoneme != PhonemeInventory::kSilenceId)
      out[i] = std::log(a.intervals[k].duration_s());
  }
  return out;
}

// --- SIMS -------------------------------------------------------------------------

Eigen::RowVectorXd SimsDictionary::mean(PhonemeId p) const {
  if (!has(p))
    throw InvalidArgument("SIMS dictionary has no frames for phoneme '" +
                          (p >= 0 && p < inventory.size() ? inventory.symbol(p) : std::to_string(p)) +
                          "'");
  return means.row(p);
}

SimsAccumulator::SimsAccumulator(PhonemeInventory inventory, int n_mels)
    : inventory_(std::move(inventory)),
      sum_(Eigen::MatrixXd::Zero(inventory_.size(), n_mels)),
      comp_(Eigen::MatrixXd::Zero(inventory_.size(), n_mels)),
      counts_(inventory_.size(), 0) {
  DUTAVC_CHECK(n_mels >= 1, "SIMS accumulator: n_mels must be positive");
}

void SimsAccumulator::add_row(PhonemeId p, const Eigen::RowVectorXd& row, std::uint64_t n) {
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    const double y = row(j) - comp_(p, j);
    const double t = sum_(p, j) + y;
    comp_(p, j) = (t - sum_(p, j)) - y;
    sum_(p, j) = t;
  }
  counts_[p] += n;
}

void SimsAccumulator::add(const MelSpectrogram& mel, const std::vector<PhonemeId>& labels) {
  DUTAVC_CHECK(mel.num_mels() == sum_.cols(), "SIMS accumulator: mel dimensionality mismatch");
  DUTAVC_CHECK(static_cast<int>(labels.size()) == mel.num_frames(),
               "SIMS accumulator: label count != frame count");
  for (int i = 0; i < mel.num_frames(); ++i) {
    const PhonemeId p = labels[i];
    DUTAVC_CHECK(p >= 0 && p < inventory_.size(), "SIMS accumulator: phoneme id out of range");
    add_row(p, mel.frames.row(i), 1);
  }
}

void SimsAccumulator::merge(const SimsAccumulator& other) {
  DUTAVC_CHECK(other.inventory_ == inventory_ && other.sum_.cols() == sum_.cols(),
               "SIMS accumulator: incompatible merge");
  for (PhonemeId p = 0; p < inventory_.size(); ++p) {
    add_row(p, other.sum_.row(p), other.counts_[p]);
    add_row(p, -other.comp_.row(p), 0);
  }
}

SimsDictionary SimsAccumulator::finish() const {
  SimsDictionary d{inventory_, Eigen::MatrixXd::Zero(sum_.rows(), sum_.cols()), counts_};
  for (PhonemeId p = 0; p < inventory_.size(); ++p)
    if (counts_[p] > 0) d.means.row(p) = sum_.row(p) / static_cast<double>(counts_[p]);
  return d;
}

SimsDictionary build_sims_dictionary(const std::vector<LabeledMel>& corpus,
                                     const PhonemeInventory& inventory) {
  DUTAVC_CHECK(!corpus.empty(), "build_sims_dictionary: empty corpus");
  SimsAccumulator acc(inventory, corpus.front().mel->num_mels());
  for (const auto& item : corpus) acc.add(*item.mel, *item.labels);
  return acc.finish();
}

MelSpectrogram ground_truth_sims(const MelSpectrogram& m, const std::vector<PhonemeId>& labels,
                                 const SimsDictionary& dict) {
  DUTAVC_CHECK(static_cast<int>(labels.size()) == m.num_frames(),
               "ground_truth_sims: label count != frame count");
  DUTAVC_CHECK(m.num_mels() == dict.num_mels(), "ground_truth_sims: mel dimensionality mismatch");
  MelSpectrogram out = m;
  for (int i = 0; i < m.num_frames(); ++i) out.frames.row(i) = dict.mean(labels[i]);
  return out;
}

void write_sims_dictionary(const std::string& path, const SimsDictionary& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write SIMS dictionary: " + path);
  bin::put_magic(os, "SIMS");
  bin::put<std::uint32_t>(os, 1);
  put_inventory(os, d.inventory);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.num_mels()));
  for (PhonemeId p = 0; p < d.inventory.size(); ++p) {
    bin::put<std::uint64_t>(os, d.counts[p]);
    for (int j = 0; j < d.num_mels(); ++j) bin::put<double>(os, d.means(p, j));
  }
  if (!os) throw FormatError("failed writing SIMS dictionary: " + path);
}

SimsDictionary read_sims_dictionary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open SIMS dictionary: " + path);
  bin::expect_magic(is, "SIMS", path);
  if (bin::get<std::uint32_t>(is) != 1) throw FormatError(path + ": unsupported SIMS version");
  SimsDictionary d;
  d.inventory = get_inventory(is);
  const auto n_mels = bin::get<std::uint32_t>(is);
  d.means.resize(d.inventory.size(), n_mels);
  d.counts.resize(d.inventory.size());
  for (PhonemeId p = 0; p < d.inventory.size(); ++p) {
    d.counts[p] = bin::get<std::uint64_t>(is);
    for (std::uint32_t j = 0; j < n_mels; ++j) d.means(p, j) = bin::get<double>(is);
  }
  return d;
}

// --- durations ------------------------------------------------------------------

const SpeakerDurations& DurationStats::speaker(const std::string& s) const {
  auto it = speakers.find(s);
  if (it == speakers.end()) throw InvalidArgument("no duration statistics for speaker '" + s + "'");
  return it->second;
}

DurationStats build_duration_stats(const std::vector<SpeakerAlignment>& corpus,
                                   const PhonemeInventory& inventory) {
  DUTAVC_CHECK(!corpus.empty(), "build_duration_stats: empty corpus");
  std::map<std::string, std::vector<std::pair<Kahan, std::uint64_t>>> acc;
  for (const auto& item : corpus) {
    auto& rows = acc[item.speaker_id];
    rows.resize(inventory.size());
    for (const auto& iv : item.alignment->intervals) {
      DUTAVC_CHECK(iv.phoneme >= 0 && iv.phoneme < inventory.size(),
                   "build_duration_stats: phoneme id out of range");
      if (iv.phoneme == PhonemeInventory::kSilenceId) continue;
      rows[iv.phoneme].first.add(iv.duration_s());
      rows[iv.phoneme].second += 1;
    }
  }
  DurationStats stats{inventory, {}};
  for (const auto& [spk, rows] : acc) {
    SpeakerDurations sd;
    sd.phonemes.resize(inventory.size());
    Kahan global;
    std::uint64_t seen = 0;
    for (PhonemeId p = 0; p < inventory.size(); ++p) {
      if (rows[p].second == 0) continue;
      sd.phonemes[p] = {rows[p].first.sum / static_cast<double>(rows[p].second), rows[p].second};
      global.add(sd.phonemes[p].mean_s);
      ++seen;
    }
    if (seen > 0) sd.global_mean_s = global.sum / static_cast<double>(seen);
    stats.speakers.emplace(spk, std::move(sd));
  }
  return stats;
}

void write_duration_stats(const std::string& path, const DurationStats& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write duration statistics: " + path);
  bin::put_magic(os, "DURS");
  bin::put<std::uint32_t>(os, 1);
  put_inventory(os, s.inventory);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.speakers.size()));
  for (const auto& [spk, sd] : s.speakers) {
    bin::put_string(os, spk);
    bin::put<std::uint8_t>(os, sd.global_mean_s ? 1 : 0);
    bin::put<double>(os, sd.global_mean_s.value_or(0.0));
    for (const auto& pd : sd.phonemes) {
      bin::put<double>(os, pd.mean_s);
      bin::put<std::uint64_t>(os, pd.count);
    }
  }
  if (!os) throw FormatError("failed writing duration statistics: " + path);
}

DurationStats read_duration_stats(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open duration statistics: " + path);
  bin::expect_magic(is, "DURS", path);
  if (bin::get<std::uint32_t>(is) != 1) throw FormatError(path + ": unsupported duration stats version");
  DurationStats s;
  s.inventory = get_inventory(is);
  const auto n = bin::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string spk = bin::get_string(is);
    SpeakerDurations sd;
    const bool has_global = bin::get<std::uint8_t>(is) != 0;
    const double global = bin::get<double>(is);
    if (has_global) sd.global_mean_s = global;
    sd.phonemes.resize(s.inventory.size());
    for (auto& pd : sd.phonemes) {
      pd.mean_s = bin::get<double>(is);
      pd.count = bin::get<std::uint64_t>(is);
    }
    s.speakers.emplace(std::move(spk), std::move(sd));
  }
  return s;
}

}  // namespace dutavc
