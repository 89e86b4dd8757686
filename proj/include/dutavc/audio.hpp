#pragma once

// Waveform ingestion, mel analysis, padding and Griffin-Lim inversion.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dutavc {

inline constexpr int kSampleRate = 22050;
inline constexpr double kLogFloor = -11.512925464970229;  // log(1e-5)

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// STFT / mel analysis parameters. Defaults: 1024-sample window, 256 hop,
/// 80 Slaney mel bands over 0-8000 Hz at 22.05 kHz.
struct MelConfig {
  int sample_rate_hz = kSampleRate;
  int n_fft = 1024;
  int win_length = 1024;
  int hop_length = 256;
  int n_mels = 80;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;

  double hop_s() const { return static_cast<double>(hop_length) / sample_rate_hz; }
  double window_s() const { return static_cast<double>(win_length) / sample_rate_hz; }
  int n_freqs() const { return n_fft / 2 + 1; }
  void validate() const;
  bool operator==(const MelConfig&) const = default;
};

/// F x n_mels natural-log mel magnitudes, one frame per row.
struct MelSpectrogram {
  Eigen::MatrixXd frames;
  double hop_s = 256.0 / kSampleRate;
  double window_s = 1024.0 / kSampleRate;
  int sample_rate_hz = kSampleRate;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int num_mels() const { return static_cast<int>(frames.cols()); }
};

// --- waveform ---------------------------------------------------------------

/// Band-limited (Kaiser-windowed sinc) resampling. Equal rates return a copy.
Waveform resample(const Waveform& w, int target_hz);

/// Scales so that max |sample| <= 1 (no-op when already in range) and rejects
/// non-finite samples.
Waveform normalize_ingested(Waveform w);

Waveform read_wav(const std::string& path);
/// 16-bit PCM mono; samples are clipped to [-1, 1].
void write_wav(const std::string& path, const Waveform& w);

// --- analysis ---------------------------------------------------------------

/// n_mels x n_freqs Slaney-normalized triangular filterbank.
Eigen::MatrixXd mel_filterbank(const MelConfig& cfg);

/// Number of analysis frames for a signal of `num_samples` (no centering).
int num_frames_for(std::size_t num_samples, const MelConfig& cfg);

/// Magnitude STFT, F x n_freqs, periodic Hann window, no centering.
Eigen::MatrixXd stft_magnitude(const Waveform& w, const MelConfig& cfg);

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg = {});

struct PaddedMel {
  MelSpectrogram mel;
  int original_frames = 0;
};

/// Pads with log-floor frames up to the next multiple of k.
PaddedMel pad_frames_to_multiple(const MelSpectrogram& m, int k);
MelSpectrogram trim_frames(const MelSpectrogram& m, int num_frames);

// --- inversion --------------------------------------------------------------

struct GriffinLimOptions {
  int n_iters = 60;
  double momentum = 0.99;
  std::uint64_t seed = 0;
};

/// Reconstructs a waveform of (F-1)*hop + win samples from a log-mel matrix.
Waveform griffin_lim_invert(const MelSpectrogram& m, const GriffinLimOptions& opts = {},
                            const MelConfig& cfg = {});

/// Seam for mel-to-waveform back ends.
class Vocoder {
 public:
  virtual ~Vocoder() = default;
  virtual std::string name() const = 0;
  virtual Waveform invert(const MelSpectrogram& m) const = 0;
};

class GriffinLimVocoder final : public Vocoder {
 public:
  explicit GriffinLimVocoder(GriffinLimOptions opts = {}, MelConfig cfg = {})
      : opts_(opts), cfg_(cfg) {}
  std::string name() const override { return "griffin-lim"; }
  Waveform invert(const MelSpectrogram& m) const override {
    return griffin_lim_invert(m, opts_, cfg_);
  }

 private:
  GriffinLimOptions opts_;
  MelConfig cfg_;
};

// --- persistence --------------------------------------------------------------

/// "MELS" | u32 version | u32 F | u32 n_mels | f64 hop_s | f64 window_s |
/// u32 sample_rate | f32[F*n_mels] row-major. All little-endian.
void write_mel(const std::string& path, const MelSpectrogram& m);
MelSpectrogram read_mel(const std::string& path);

}  // namespace dutavc
