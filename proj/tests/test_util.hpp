#pragma once

// Signal generators and brute-force oracles shared by the test suites.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "dutavc/audio.hpp"

namespace dutavc::testing {

inline Waveform sine(double freq_hz, double seconds, int rate = kSampleRate, double amp = 0.5) {
  Waveform w;
  w.sample_rate_hz = rate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / rate);
  return w;
}

inline Waveform white_noise(std::size_t n, unsigned seed, double amp = 0.3, int rate = kSampleRate) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> d(0.0, amp);
  Waveform w;
  w.sample_rate_hz = rate;
  w.samples.resize(n);
  for (auto& s : w.samples) s = std::clamp(d(rng), -1.0, 1.0);
  return w;
}

/// Direct (non-FFT) DFT magnitude at an arbitrary frequency, Hann-weighted.
inline double dft_magnitude(const Waveform& w, double freq_hz) {
  const std::size_t n = w.samples.size();
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double win = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / (n - 1));
    const double ph = 2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / w.sample_rate_hz;
    re += win * w.samples[i] * std::cos(ph);
    im -= win * w.samples[i] * std::sin(ph);
  }
  return std::hypot(re, im);
}

/// Frequency of the strongest DFT component in [lo, hi], scanned coarse-to-fine.
inline double dominant_frequency(const Waveform& w, double lo, double hi) {
  double best = lo, best_mag = -1.0;
  for (double f = lo; f <= hi; f += 2.0) {
    const double m = dft_magnitude(w, f);
    if (m > best_mag) best_mag = m, best = f;
  }
  const double c = best;
  for (double f = c - 2.0; f <= c + 2.0; f += 0.05) {
    const double m = dft_magnitude(w, f);
    if (m > best_mag) best_mag = m, best = f;
  }
  return best;
}

inline double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : std::sqrt(s / x.size());
}

}  // namespace dutavc::testing
