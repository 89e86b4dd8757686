#include "dutavc/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <numeric>

#include <unsupported/Eigen/FFT>

#include "dutavc/binary_io.hpp"
#include "dutavc/error.hpp"
#include "dutavc/random.hpp"

namespace dutavc {
namespace {

constexpr double kPi = std::numbers::pi;

double hz_to_mel_slaney(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz >= min_log_hz) return min_log_mel + std::log(hz / min_log_hz) / logstep;
  return hz / f_sp;
}

double mel_to_hz_slaney(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel >= min_log_mel) return min_log_hz * std::exp(logstep * (mel - min_log_mel));
  return f_sp * mel;
}

Eigen::VectorXd hann_periodic(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
  return w;
}

using ComplexMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;

// Complex STFT of `x`, F x n_freqs.
ComplexMatrix stft_complex(const std::vector<double>& x, const MelConfig& cfg,
                           const Eigen::VectorXd& window) {
  const int frames = num_frames_for(x.size(), cfg);
  ComplexMatrix out(frames, cfg.n_freqs());
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(cfg.n_fft, 0.0);
  std::vector<std::complex<double>> spec;
  const int offset = (cfg.n_fft - cfg.win_length) / 2;
  for (int f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const std::size_t start = static_cast<std::size_t>(f) * cfg.hop_length;
    for (int i = 0; i < cfg.win_length; ++i) buf[offset + i] = x[start + i] * window(i);
    fft.fwd(spec, buf);
    for (int k = 0; k < cfg.n_freqs(); ++k) out(f, k) = spec[k];
  }
  return out;
}

// Weighted overlap-add inverse of stft_complex.
std::vector<double> istft(const ComplexMatrix& spec, const MelConfig& cfg,
                          const Eigen::VectorXd& window) {
  const int frames = static_cast<int>(spec.rows());
  const std::size_t len = static_cast<std::size_t>(frames - 1) * cfg.hop_length + cfg.win_length;
  std::vector<double> out(len, 0.0), norm(len, 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> half(cfg.n_freqs());
  std::vector<double> frame;
  const int offset = (cfg.n_fft - cfg.win_length) / 2;
  for (int f = 0; f < frames; ++f) {
    for (int k = 0; k < cfg.n_freqs(); ++k) half[k] = spec(f, k);
    fft.inv(frame, half, cfg.n_fft);
    const std::size_t start = static_cast<std::size_t>(f) * cfg.hop_length;
    for (int i = 0; i < cfg.win_length; ++i) {
      out[start + i] += frame[offset + i] * window(i);
      norm[start + i] += window(i) * window(i);
    }
  }
  for (std::size_t i = 0; i < len; ++i)
    if (norm[i] > 1e-8) out[i] /= norm[i];
  return out;
}

}  // namespace

void MelConfig::validate() const {
  DUTAVC_CHECK(sample_rate_hz > 0, "mel config: sample rate must be positive");
  DUTAVC_CHECK(n_fft > 0 && win_length > 0 && win_length <= n_fft,
               "mel config: need 0 < win_length <= n_fft");
  DUTAVC_CHECK(hop_length > 0, "mel config: hop must be positive");
  DUTAVC_CHECK(n_mels > 0, "mel config: n_mels must be positive");
  DUTAVC_CHECK(fmin_hz >= 0 && fmax_hz > fmin_hz && fmax_hz <= sample_rate_hz / 2.0,
               "mel config: need 0 <= fmin < fmax <= Nyquist");
}

// ---------------------------------------------------------------------------

Waveform resample(const Waveform& w, int target_hz) {
  DUTAVC_CHECK(target_hz > 0, "resample: target rate must be positive");
  DUTAVC_CHECK(w.sample_rate_hz > 0, "resample: source rate must be positive");
  if (w.samples.empty()) throw InvalidArgument("resample: empty waveform");
  if (w.sample_rate_hz == target_hz) return w;

  const double ratio = static_cast<double>(target_hz) / w.sample_rate_hz;
  const double cutoff = std::min(1.0, ratio);  // relative to the input Nyquist
  constexpr int kZeroCrossings = 16;
  constexpr double kBeta = 8.6;
  const double half_width = kZeroCrossings / cutoff;  // in input samples
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);

  const std::size_t n_in = w.samples.size();
  const auto n_out = static_cast<std::size_t>(
      (static_cast<std::uint64_t>(n_in) * target_hz + w.sample_rate_hz - 1) / w.sample_rate_hz);

  // Output n sits at input position base + phase / P with P = target / gcd;
  // the kernel depends only on the phase, so each phase's taps are tabulated once.
  const std::uint64_t g = std::gcd(w.sample_rate_hz, target_hz);
  const std::uint64_t phases = static_cast<std::uint64_t>(target_hz) / g;
  const long reach = static_cast<long>(std::ceil(half_width)) + 1;
  auto kernel = [&](double tau) {
    const double r = tau / half_width;
    if (std::abs(r) >= 1.0) return 0.0;
    const double arg = kPi * cutoff * tau;
    const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
    return cutoff * sinc * std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
  };
  const bool tabulate = phases <= 4096;
  std::vector<std::vector<double>> table;
  if (tabulate) {
    table.resize(phases);
    for (std::uint64_t p = 0; p < phases; ++p) {
      table[p].resize(2 * reach + 1);
      const double frac = static_cast<double>(p) / static_cast<double>(phases);
      for (long d = -reach; d <= reach; ++d) table[p][d + reach] = kernel(static_cast<double>(d) - frac);
    }
  }

  Waveform out;
  out.sample_rate_hz = target_hz;
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const std::uint64_t num = static_cast<std::uint64_t>(n) * w.sample_rate_hz;
    const auto base = static_cast<long>(num / target_hz);
    const std::uint64_t phase = (num % target_hz) / g;
    const double pos = static_cast<double>(base) + static_cast<double>(phase) / static_cast<double>(phases);
    double acc = 0.0;
    for (long k = std::max(base - reach, 0L); k <= std::min(base + reach, static_cast<long>(n_in) - 1); ++k)
      acc += w.samples[k] * (tabulate ? table[phase][k - base + reach] : kernel(static_cast<double>(k) - pos));
    out.samples[n] = acc;
  }
  return out;
}

Waveform normalize_ingested(Waveform w) {
  double peak = 0.0;
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw InvalidArgument("waveform contains non-finite samples");
    peak = std::max(peak, std::abs(s));
  }
  if (peak > 1.0)
    for (double& s : w.samples) s /= peak;
  return w;
}

// --- WAV --------------------------------------------------------------------

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open WAV file: " + path);
  char tag[4];
  auto read_tag = [&](const char* expect) {
    if (!is.read(tag, 4) || std::string(tag, 4) != expect)
      throw FormatError(path + ": not a RIFF/WAVE file");
  };
  read_tag("RIFF");
  bin::get<std::uint32_t>(is);
  read_tag("WAVE");

  int channels = 0, rate = 0, bits = 0, format = 0;
  bool have_fmt = false;
  while (is.read(tag, 4)) {
    const std::string id(tag, 4);
    const auto size = bin::get<std::uint32_t>(is);
    if (id == "fmt ") {
      format = bin::get<std::uint16_t>(is);
      channels = bin::get<std::uint16_t>(is);
      rate = static_cast<int>(bin::get<std::uint32_t>(is));
      bin::get<std::uint32_t>(is);
      bin::get<std::uint16_t>(is);
      bits = bin::get<std::uint16_t>(is);
      if (size > 16) is.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw FormatError(path + ": only 16-bit PCM is supported");
      if (channels != 1)
        throw FormatError(path + ": expected mono audio, got " + std::to_string(channels) +
                          " channels");
      Waveform w;
      w.sample_rate_hz = rate;
      w.samples.resize(size / 2);
      for (auto& s : w.samples) s = bin::get<std::int16_t>(is) / 32768.0;
      return w;
    } else {
      is.ignore(size + (size & 1));
    }
  }
  throw FormatError(path + ": no data chunk");
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write WAV file: " + path);
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  bin::put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  bin::put<std::uint32_t>(os, 16);
  bin::put<std::uint16_t>(os, 1);
  bin::put<std::uint16_t>(os, 1);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate_hz));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  bin::put<std::uint16_t>(os, 2);
  bin::put<std::uint16_t>(os, 16);
  os.write("data", 4);
  bin::put<std::uint32_t>(os, data_bytes);
  for (double s : w.samples) {
    const double c = std::clamp(std::isfinite(s) ? s : 0.0, -1.0, 1.0);
    bin::put<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32767.0)));
  }
  if (!os) throw FormatError("failed writing WAV file: " + path);
}

// --- analysis ---------------------------------------------------------------

Eigen::MatrixXd mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int n_freqs = cfg.n_freqs();
  Eigen::VectorXd fft_freqs(n_freqs);
  for (int k = 0; k < n_freqs; ++k)
    fft_freqs(k) = static_cast<double>(k) * cfg.sample_rate_hz / cfg.n_fft;

  const double mel_lo = hz_to_mel_slaney(cfg.fmin_hz);
  const double mel_hi = hz_to_mel_slaney(cfg.fmax_hz);
  std::vector<double> hz(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    hz[i] = mel_to_hz_slaney(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, n_freqs);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lower_w = hz[m + 1] - hz[m];
    const double upper_w = hz[m + 2] - hz[m + 1];
    const double enorm = 2.0 / (hz[m + 2] - hz[m]);
    for (int k = 0; k < n_freqs; ++k) {
      const double lower = (fft_freqs(k) - hz[m]) / lower_w;
      const double upper = (hz[m + 2] - fft_freqs(k)) / upper_w;
      fb(m, k) = std::max(0.0, std::min(lower, upper)) * enorm;
    }
  }
  return fb;
}

int num_frames_for(std::size_t num_samples, const MelConfig& cfg) {
  if (num_samples < static_cast<std::size_t>(cfg.win_length)) return 0;
  return 1 + static_cast<int>((num_samples - cfg.win_length) / cfg.hop_length);
}

Eigen::MatrixXd stft_magnitude(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  if (w.sample_rate_hz != cfg.sample_rate_hz)
    throw InvalidArgument("mel analysis expects " + std::to_string(cfg.sample_rate_hz) +
                          " Hz input, got " + std::to_string(w.sample_rate_hz) +
                          " Hz (resample first)");
  if (w.samples.size() < static_cast<std::size_t>(cfg.win_length))
    throw InvalidArgument("waveform shorter than one analysis window");
  return stft_complex(w.samples, cfg, hann_periodic(cfg.win_length)).cwiseAbs();
}

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg) {
  const Eigen::MatrixXd mag = stft_magnitude(w, cfg);
  const Eigen::MatrixXd fb = mel_filterbank(cfg);
  MelSpectrogram m;
  m.frames = (mag * fb.transpose()).array().max(1e-5).log().matrix();
  m.hop_s = cfg.hop_s();
  m.window_s = cfg.window_s();
  m.sample_rate_hz = cfg.sample_rate_hz;
  return m;
}

PaddedMel pad_frames_to_multiple(const MelSpectrogram& m, int k) {
  DUTAVC_CHECK(k >= 1, "pad_frames_to_multiple: k must be >= 1");
  const int f = m.num_frames();
  const int padded = (f + k - 1) / k * k;
  PaddedMel out{m, f};
  if (padded != f) {
    out.mel.frames.conservativeResize(padded, Eigen::NoChange);
    out.mel.frames.bottomRows(padded - f).setConstant(kLogFloor);
  }
  return out;
}

MelSpectrogram trim_frames(const MelSpectrogram& m, int num_frames) {
  DUTAVC_CHECK(num_frames >= 0 && num_frames <= m.num_frames(), "trim_frames: bad frame count");
  MelSpectrogram out = m;
  out.frames = m.frames.topRows(num_frames);
  return out;
}

// --- Griffin-Lim --------------------------------------------------------------

Waveform griffin_lim_invert(const MelSpectrogram& m, const GriffinLimOptions& opts,
                            const MelConfig& cfg) {
  DUTAVC_CHECK(opts.n_iters >= 1, "griffin_lim_invert: n_iters must be >= 1");
  DUTAVC_CHECK(m.num_frames() >= 1, "griffin_lim_invert: empty mel");
  DUTAVC_CHECK(m.num_mels() == cfg.n_mels, "griffin_lim_invert: mel-bin count mismatch");
  if (!m.frames.allFinite()) throw InvalidArgument("griffin_lim_invert: non-finite mel input");

  // Linear magnitudes: pseudo-inverse of the filterbank, then non-negative
  // multiplicative refinement of || mel - S fb^T ||.
  const Eigen::MatrixXd fb = mel_filterbank(cfg);
  const Eigen::MatrixXd mel_lin = m.frames.array().exp().matrix();
  const Eigen::MatrixXd fb_pinv =
      fb.transpose().completeOrthogonalDecomposition().pseudoInverse();  // n_mels x n_freqs
  Eigen::MatrixXd mag = (mel_lin * fb_pinv).cwiseMax(0.0);
  const double floor = 1e-3 * mel_lin.minCoeff();
  mag = mag.cwiseMax(floor);
  const Eigen::MatrixXd gram = fb.transpose() * fb;
  const Eigen::MatrixXd numer = mel_lin * fb;
  for (int it = 0; it < 50; ++it) {
    const Eigen::MatrixXd denom = (mag * gram).array() + 1e-30;
    mag = mag.cwiseProduct(numer.cwiseQuotient(denom));
  }

  const Eigen::VectorXd window = hann_periodic(cfg.win_length);
  Rng rng(opts.seed);
  ComplexMatrix angles(mag.rows(), mag.cols());
  for (Eigen::Index j = 0; j < angles.cols(); ++j)
    for (Eigen::Index i = 0; i < angles.rows(); ++i)
      angles(i, j) = std::polar(1.0, uniform(rng, 0.0, 2.0 * kPi));

  ComplexMatrix rebuilt = ComplexMatrix::Zero(mag.rows(), mag.cols());
  const double alpha = opts.momentum / (1.0 + opts.momentum);
  for (int it = 0; it < opts.n_iters; ++it) {
    const std::vector<double> inverse = istft(mag.cwiseProduct(angles), cfg, window);
    const ComplexMatrix prev = rebuilt;
    rebuilt = stft_complex(inverse, cfg, window);
    angles = rebuilt - alpha * prev;
    for (Eigen::Index j = 0; j < angles.cols(); ++j)
      for (Eigen::Index i = 0; i < angles.rows(); ++i) {
        const double a = std::abs(angles(i, j));
        angles(i, j) = a > 1e-16 ? angles(i, j) / a : std::complex<double>(1.0, 0.0);
      }
  }
  Waveform out;
  out.sample_rate_hz = cfg.sample_rate_hz;
  out.samples = istft(mag.cwiseProduct(angles), cfg, window);
  return out;
}

// --- mel files ----------------------------------------------------------------

void write_mel(const std::string& path, const MelSpectrogram& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write mel file: " + path);
  bin::put_magic(os, "MELS");
  bin::put<std::uint32_t>(os, 1);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.num_frames()));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.num_mels()));
  bin::put<double>(os, m.hop_s);
  bin::put<double>(os, m.window_s);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.sample_rate_hz));
  for (int i = 0; i < m.num_frames(); ++i)
    for (int j = 0; j < m.num_mels(); ++j) bin::put<float>(os, static_cast<float>(m.frames(i, j)));
  if (!os) throw FormatError("failed writing mel file: " + path);
}

MelSpectrogram read_mel(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open mel file: " + path);
  bin::expect_magic(is, "MELS", path);
  const auto version = bin::get<std::uint32_t>(is);
  if (version != 1) throw FormatError(path + ": unsupported mel file version " + std::to_string(version));
  const auto f = bin::get<std::uint32_t>(is);
  const auto n = bin::get<std::uint32_t>(is);
  MelSpectrogram m;
  m.hop_s = bin::get<double>(is);
  m.window_s = bin::get<double>(is);
  m.sample_rate_hz = static_cast<int>(bin::get<std::uint32_t>(is));
  m.frames.resize(f, n);
  for (std::uint32_t i = 0; i < f; ++i)
    for (std::uint32_t j = 0; j < n; ++j) m.frames(i, j) = bin::get<float>(is);
  return m;
}

}  // namespace dutavc
