#include "dutavc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "dutavc/error.hpp"
#include "dutavc/log.hpp"
#include "dutavc/random.hpp"

namespace dutavc {

namespace {

using C = StoiConstants;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Hann window without its zero end points.
std::vector<double> inner_hann(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1));
  return w;
}

std::vector<double> to_stoi_rate(const Waveform& w) {
  return w.sample_rate_hz == C::kRate ? w.samples : resample(w, C::kRate).samples;
}

// Drops frames more than kDynRange dB below the loudest reference frame and
// overlap-adds the remaining frames of both signals.
void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const int hop = C::kFrame / 2;
  const auto w = inner_hann(C::kFrame);
  if (x.size() < static_cast<std::size_t>(C::kFrame)) throw InvalidArgument("stoi: input too short");
  const int frames = static_cast<int>((x.size() - C::kFrame) / hop) + 1;
  std::vector<double> energy(frames);
  for (int f = 0; f < frames; ++f) {
    double s = 0.0;
    for (int i = 0; i < C::kFrame; ++i) s += std::pow(w[i] * x[f * hop + i], 2);
    energy[f] = 20.0 * std::log10(std::sqrt(s) + kEps);
  }
  const double top = *std::max_element(energy.begin(), energy.end());
  std::vector<int> keep;
  for (int f = 0; f < frames; ++f)
    if (top - C::kDynRange - energy[f] < 0.0) keep.push_back(f);
  const std::size_t len = (keep.size() - 1) * hop + C::kFrame;
  std::vector<double> xo(len, 0.0), yo(len, 0.0);
  for (std::size_t k = 0; k < keep.size(); ++k)
    for (int i = 0; i < C::kFrame; ++i) {
      xo[k * hop + i] += w[i] * x[keep[k] * hop + i];
      yo[k * hop + i] += w[i] * y[keep[k] * hop + i];
    }
  x = std::move(xo);
  y = std::move(yo);
}

// Band index ranges [lo, hi) of the one-third-octave filterbank over FFT bins.
std::vector<std::pair<int, int>> third_octave_bands() {
  const int bins = C::kNfft / 2 + 1;
  auto nearest = [&](double hz) {
    int best = 0;
    for (int k = 1; k < bins; ++k)
      if (std::abs(k * double(C::kRate) / C::kNfft - hz) < std::abs(best * double(C::kRate) / C::kNfft - hz)) best = k;
    return best;
  };
  std::vector<std::pair<int, int>> bands;
  for (int b = 0; b < C::kBands; ++b) {
    const double lo = C::kMinFreq * std::pow(2.0, (2.0 * b - 1.0) / 6.0);
    const double hi = C::kMinFreq * std::pow(2.0, (2.0 * b + 1.0) / 6.0);
    bands.emplace_back(nearest(lo), nearest(hi));
  }
  return bands;
}

// Band envelopes, kBands x frames.
Eigen::MatrixXd band_envelopes(const std::vector<double>& x) {
  const int hop = C::kFrame / 2;
  const auto w = inner_hann(C::kFrame);
  const int frames = x.size() > static_cast<std::size_t>(C::kFrame)
                         ? static_cast<int>((x.size() - C::kFrame + hop - 1) / hop)
                         : 0;
  static const auto bands = third_octave_bands();
  Eigen::MatrixXd out(C::kBands, frames);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(C::kNfft);
  std::vector<std::complex<double>> spec;
  for (int f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < C::kFrame; ++i) buf[i] = w[i] * x[f * hop + i];
    fft.fwd(spec, buf);
    for (int b = 0; b < C::kBands; ++b) {
      double e = 0.0;
      for (int k = bands[b].first; k < bands[b].second; ++k) e += std::norm(spec[k]);
      out(b, f) = std::sqrt(e);
    }
  }
  return out;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> prepare(const Waveform& ref, const Waveform& deg, const char* name) {
  if (ref.sample_rate_hz != deg.sample_rate_hz || ref.size() != deg.size())
    throw InvalidArgument(std::string(name) + ": signals differ in length or rate (" + std::to_string(ref.size()) +
                          " vs " + std::to_string(deg.size()) + " samples)");
  std::vector<double> x = to_stoi_rate(ref), y = to_stoi_rate(deg);
  remove_silent_frames(x, y);
  Eigen::MatrixXd X = band_envelopes(x), Y = band_envelopes(y);
  if (X.cols() < C::kSegment)
    throw InvalidArgument(std::string(name) + ": need at least 384 ms of speech-active signal");
  if (!X.allFinite() || !Y.allFinite()) throw InvalidArgument(std::string(name) + ": non-finite input");
  return {std::move(X), std::move(Y)};
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Eigen::RowVectorXd centred_unit(Eigen::RowVectorXd v) {
  v.array() -= v.mean();
  return v / (v.norm() + kEps);
}

// Mean-and-norm normalisation of rows (over time), then of columns (over bands).
Eigen::MatrixXd row_col_normalize(Eigen::MatrixXd m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) = centred_unit(m.row(r));
  for (Eigen::Index c = 0; c < m.cols(); ++c) m.col(c) = centred_unit(m.col(c).transpose()).transpose();
  return m;
}

}  // namespace

double stoi(const Waveform& ref, const Waveform& deg) {
  const auto [X, Y] = prepare(ref, deg, "stoi");
  const double clip = std::pow(10.0, -C::kBeta / 20.0);
  const int segments = static_cast<int>(X.cols()) - C::kSegment + 1;
  double total = 0.0;
  for (int m = 0; m < segments; ++m)
    for (int b = 0; b < C::kBands; ++b) {
      const Eigen::RowVectorXd x = X.block(b, m, 1, C::kSegment);
      const Eigen::RowVectorXd y = Y.block(b, m, 1, C::kSegment);
      const double alpha = x.norm() / (y.norm() + kEps);
      const Eigen::RowVectorXd yp = (alpha * y).cwiseMin(x * (1.0 + clip));
      total += centred_unit(x).dot(centred_unit(yp));
    }
  return clamp01(total / (static_cast<double>(segments) * C::kBands));
}

double estoi(const Waveform& ref, const Waveform& deg) {
  const auto [X, Y] = prepare(ref, deg, "estoi");
  const int segments = static_cast<int>(X.cols()) - C::kSegment + 1;
  double total = 0.0;
  for (int m = 0; m < segments; ++m) {
    const Eigen::MatrixXd x = row_col_normalize(X.middleCols(m, C::kSegment));
    const Eigen::MatrixXd y = row_col_normalize(Y.middleCols(m, C::kSegment));
    total += x.cwiseProduct(y).sum() / C::kSegment;
  }
  return clamp01(total / segments);
}

std::vector<std::pair<int, int>> dtw_path(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  DUTAVC_CHECK(a.rows() > 0 && b.rows() > 0, "dtw: empty sequence");
  DUTAVC_CHECK(a.cols() == b.cols(), "dtw: feature dimensions differ");
  const Eigen::Index n = a.rows(), m = b.rows();
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd D = Eigen::MatrixXd::Constant(n + 1, m + 1, inf);
  D(0, 0) = 0.0;
  for (Eigen::Index i = 1; i <= n; ++i)
    for (Eigen::Index j = 1; j <= m; ++j) {
      const double d = (a.row(i - 1) - b.row(j - 1)).norm();
      D(i, j) = d + std::min({D(i - 1, j - 1), D(i - 1, j), D(i, j - 1)});
    }
  std::vector<std::pair<int, int>> path;
  Eigen::Index i = n, j = m;
  while (true) {
    path.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1));
    if (i == 1 && j == 1) break;
    const double diag = D(i - 1, j - 1), up = D(i - 1, j), left = D(i, j - 1);
    if (diag <= up && diag <= left) --i, --j;
    else if (up <= left) --i;
    else --j;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

AlignedPair p_align(const Waveform& ref_in, const Waveform& test_in, const MelConfig& cfg) {
  cfg.validate();
  const Waveform ref = ref_in.sample_rate_hz == cfg.sample_rate_hz ? ref_in : resample(ref_in, cfg.sample_rate_hz);
  const Waveform test = test_in.sample_rate_hz == cfg.sample_rate_hz ? test_in : resample(test_in, cfg.sample_rate_hz);
  auto silent = [](const Waveform& w) {
    return std::all_of(w.samples.begin(), w.samples.end(), [](double s) { return std::abs(s) < 1e-9; });
  };
  if (ref.size() < static_cast<std::size_t>(cfg.win_length) || test.size() < static_cast<std::size_t>(cfg.win_length))
    throw InvalidArgument("p_align: inputs must span at least one analysis window");
  if (silent(ref) || silent(test)) throw InvalidArgument("p_align: degenerate all-silence input");

  const MelSpectrogram a = mel_spectrogram(ref, cfg), b = mel_spectrogram(test, cfg);
  AlignedPair out;
  out.path = dtw_path(a.frames, b.frames);

  // Mean matched test frame for every reference frame.
  const int n = a.num_frames();
  std::vector<double> sum(n, 0.0);
  std::vector<int> cnt(n, 0);
  for (const auto& [i, j] : out.path) sum[i] += j, ++cnt[i];
  std::vector<int> match(n);
  for (int i = 0; i < n; ++i) match[i] = static_cast<int>(std::lround(sum[i] / cnt[i]));

  // Hann-weighted overlap-add of hop-spaced blocks taken from the matched positions.
  const int hop = cfg.hop_length;
  const std::size_t len = ref.size();
  out.test.sample_rate_hz = cfg.sample_rate_hz;
  out.test.samples.assign(len, 0.0);
  const long blocks = static_cast<long>(len / hop) + 2;
  for (long k = 0; k < blocks; ++k) {
    const long centre = k * hop;
    const long i = std::clamp<long>(std::lround(static_cast<double>(centre - cfg.win_length / 2) / hop), 0, n - 1);
    const long shift = static_cast<long>(match[i] - i) * hop;
    for (long t = centre - hop + 1; t < centre + hop; ++t) {
      if (t < 0 || t >= static_cast<long>(len)) continue;
      const long src = t + shift;
      if (src < 0 || src >= static_cast<long>(test.size())) continue;
      const double w = 0.5 + 0.5 * std::cos(std::numbers::pi * static_cast<double>(t - centre) / hop);
      out.test.samples[t] += w * test.samples[src];
    }
  }
  out.ref = ref;
  return out;
}

const std::vector<std::string>& intelligibility_groups() {
  static const std::vector<std::string> labels = {"VL", "L", "M", "H"};
  return labels;
}

MetricReport p_metric_report(const std::vector<EvalUtterance>& controls, const std::vector<EvalUtterance>& tests,
                             const std::map<std::string, std::string>& groups) {
  const auto& labels = intelligibility_groups();
  for (const auto& [spk, g] : groups)
    if (std::find(labels.begin(), labels.end(), g) == labels.end())
      throw InvalidArgument("p_metric_report: unknown intelligibility group '" + g + "' for speaker " + spk);

  std::map<std::string, std::vector<const EvalUtterance*>> by_word;
  for (const auto& c : controls) by_word[c.word].push_back(&c);

  MetricReport r;
  std::map<std::string, std::pair<double, double>> speaker_sum;
  for (const auto& t : tests) {
    const auto it = by_word.find(t.word);
    if (it == by_word.end()) {
      r.skipped.emplace_back(t.id, "no control rendition of word '" + t.word + "'");
      log_event(LogLevel::kWarn, "eval.missing_word", {{"id", t.id}, {"word", t.word}});
      continue;
    }
    double s = 0.0, e = 0.0;
    try {
      for (const EvalUtterance* c : it->second) {
        const AlignedPair p = p_align(c->audio, t.audio);
        s += stoi(p.ref, p.test);
        e += estoi(p.ref, p.test);
      }
    } catch (const Error& ex) {
      r.skipped.emplace_back(t.id, ex.what());
      log_event(LogLevel::kWarn, "eval.skipped", {{"id", t.id}, {"reason", ex.what()}});
      continue;
    }
    const double k = static_cast<double>(it->second.size());
    auto& acc = speaker_sum[t.speaker_id];
    acc.first += s / k;
    acc.second += e / k;
    ++r.per_speaker[t.speaker_id].utterances;
  }
  for (auto& [spk, cell] : r.per_speaker) {
    cell.p_stoi = speaker_sum[spk].first / cell.utterances;
    cell.p_estoi = speaker_sum[spk].second / cell.utterances;
    cell.speakers = 1;
    const auto g = groups.find(spk);
    if (g == groups.end()) continue;
    r.speaker_group[spk] = g->second;
    auto& gc = r.per_group[g->second];
    gc.p_stoi += cell.p_stoi;
    gc.p_estoi += cell.p_estoi;
    gc.utterances += cell.utterances;
    ++gc.speakers;
  }
  for (auto& [g, cell] : r.per_group) {
    cell.p_stoi /= cell.speakers;
    cell.p_estoi /= cell.speakers;
  }
  return r;
}

std::string report_tsv(const MetricReport& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "level\tname\tgroup\tspeakers\tutterances\tp_stoi\tp_estoi\n";
  for (const auto& g : intelligibility_groups()) {
    const auto it = r.per_group.find(g);
    if (it == r.per_group.end()) continue;
    const auto& c = it->second;
    out << "group\t" << g << '\t' << g << '\t' << c.speakers << '\t' << c.utterances << '\t' << c.p_stoi << '\t'
        << c.p_estoi << '\n';
  }
  for (const auto& [spk, c] : r.per_speaker) {
    const auto g = r.speaker_group.find(spk);
    out << "speaker\t" << spk << '\t' << (g == r.speaker_group.end() ? "-" : g->second) << '\t' << c.speakers << '\t'
        << c.utterances << '\t' << c.p_stoi << '\t' << c.p_estoi << '\n';
  }
  return out.str();
}

nlohmann::ordered_json report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  auto cell = [](const MetricCell& c) {
    return nlohmann::ordered_json{{"speakers", c.speakers}, {"utterances", c.utterances}, {"p_stoi", c.p_stoi},
                                  {"p_estoi", c.p_estoi}};
  };
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : intelligibility_groups())
    if (const auto it = r.per_group.find(g); it != r.per_group.end()) {
      auto row = cell(it->second);
      row["group"] = g;
      j["groups"].push_back(row);
    }
  j["speakers"] = nlohmann::ordered_json::array();
  for (const auto& [spk, c] : r.per_speaker) {
    auto row = cell(c);
    row["speaker_id"] = spk;
    if (const auto g = r.speaker_group.find(spk); g != r.speaker_group.end()) row["group"] = g->second;
    j["speakers"].push_back(row);
  }
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& [id, reason] : r.skipped) j["skipped"].push_back({{"id", id}, {"reason", reason}});
  return j;
}

void write_report(const std::string& tsv_path, const std::string& json_path, const MetricReport& r) {
  std::ofstream tsv(tsv_path, std::ios::binary);
  if (!tsv) throw Error("cannot write " + tsv_path);
  tsv << report_tsv(r);
  std::ofstream js(json_path, std::ios::binary);
  if (!js) throw Error("cannot write " + json_path);
  js << report_json(r).dump(2) << '\n';
}

std::string augmentation_item_id(const std::string& source_id, const std::string& target) {
  return source_id + "__" + target;
}

AugmentationSummary generate_augmentation_set(const std::vector<ManifestEntry>& controls,
                                              const std::vector<std::string>& targets, const Converter& convert,
                                              const std::string& out_dir, std::uint64_t root_seed) {
  namespace fs = std::filesystem;
  DUTAVC_CHECK(!targets.empty(), "augment: no target speakers");
  fs::create_directories(fs::path(out_dir) / "wav");
  AugmentationSummary s;
  s.requested = controls.size() * targets.size();
  for (const auto& c : controls) {
    Waveform source;
    bool loaded = true;
    std::string load_error;
    try {
      source = read_wav(c.audio_path);
    } catch (const std::exception& ex) {
      loaded = false;
      load_error = ex.what();
    }
    for (const auto& target : targets) {
      const std::string id = augmentation_item_id(c.id, target);
      try {
        if (!loaded) throw Error(load_error);
        const Waveform out = convert(source, target, derive_seed(root_seed, "augment", id));
        ManifestEntry e;
        e.id = id;
        e.audio_path = "wav/" + id + ".wav";
        e.speaker_id = target;
        e.word = c.word;
        e.source_id = c.id;
        e.target_id = target;
        write_wav((fs::path(out_dir) / e.audio_path).string(), out);
        s.entries.push_back(std::move(e));
      } catch (const std::exception& ex) {
        s.failures.emplace_back(id, ex.what());
        log_event(LogLevel::kWarn, "augment.item_failed", {{"id", id}, {"reason", ex.what()}});
      }
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), s.entries);
  log_event(LogLevel::kInfo, "augment.done",
            {{"requested", s.requested}, {"written", s.entries.size()}, {"failed", s.failures.size()}});
  return s;
}

}  // namespace dutavc
