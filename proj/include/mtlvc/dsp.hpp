#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mtlvc/types.hpp"

namespace mtlvc::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct SpectroConfig {
  int sample_rate = 16000;
  double win_length = 0.050;   // seconds
  double hop_length = 0.0125;  // seconds
  int nfft = 2048;
  int n_mels = 80;
  double fmin = 50.0;
  double fmax = 0.0;  // <= 0 means sample_rate / 2
  double ref_db = 50.0;
  double dynamic_range_db = 100.0;

  int win_samples() const;
  int hop_samples() const;
  int n_bins() const { return nfft / 2 + 1; }
  double effective_fmax() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }

  // Throws InvalidArgument when the framing or filterbank constraints fail.
  void validate() const;
};

enum class FeatureKind : std::uint8_t { kMel = 0, kLinear = 1 };

// T x F matrix of normalized log magnitudes in [0, 1].
struct FeatureMatrix {
  Matrix values;
  FeatureKind kind = FeatureKind::kMel;

  int frames() const { return static_cast<int>(values.rows()); }
  int bins() const { return static_cast<int>(values.cols()); }
};

// Magnitude floor applied before taking the log.
inline constexpr double kMagnitudeFloor = 1e-5;

double HzToMel(double hz);
double MelToHz(double mel);

// Windowed-RMS silence trimming. Windows are 30 ms, non-overlapping; a window
// is voiced when its RMS is within |threshold_db| of the loudest window. Runs
// of voiced windows shorter than min_voiced seconds are ignored.
Waveform TrimSilence(const Waveform& w, double threshold_db = -40.0, double min_voiced = 0.0);

// Kaiser-windowed sinc interpolation. Output length is round(N * target / source).
Waveform Resample(const Waveform& w, int target_rate);

// Periodic Hann window of the given length.
std::vector<double> HannWindow(int length);

int FrameCount(int n_samples, int win, int hop);

// T x (nfft/2+1) Hann-windowed magnitudes, no center padding.
Matrix StftMagnitude(const Waveform& w, const SpectroConfig& c);

// n_mels x (nfft/2+1) triangular filters on the HTK mel scale.
Matrix MelFilterbank(const SpectroConfig& c);

// Center frequency (Hz) of mel filter k.
double MelCenterHz(const SpectroConfig& c, int k);

// Affine dB -> [0,1] map with clipping.
Matrix NormalizeDb(const Matrix& db, const SpectroConfig& c);
Matrix DenormalizeToMagnitude(const Matrix& normalized, const SpectroConfig& c);
Matrix AmplitudeToDb(const Matrix& magnitude);

struct Features {
  FeatureMatrix mel;
  FeatureMatrix linear;
};

Features ExtractFeatures(const Waveform& w, const SpectroConfig& c);

// Maximum dB value (before normalization) of the mel or linear magnitudes;
// used to pick ref_db from a corpus.
double PeakDb(const Waveform& w, const SpectroConfig& c);

struct GriffinLimResult {
  Waveform waveform;
  // Spectral convergence ||S - |STFT(y)||| / ||S|| after each iteration
  // (one entry per iteration; empty when iters == 0).
  std::vector<double> convergence;
};

GriffinLimResult GriffinLim(const FeatureMatrix& linear, const SpectroConfig& c, int iters = 60,
                            std::uint64_t seed = 0);

// Inverse STFT of a complex spectrogram (overlap-add with window-power normalization).
Waveform InverseStft(const Eigen::MatrixXcd& spectrum, const SpectroConfig& c);

// Complex STFT helper shared with Griffin-Lim.
Eigen::MatrixXcd StftComplex(const std::vector<double>& samples, const SpectroConfig& c);

}  // namespace mtlvc::dsp
