#include "mtlvc/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "mtlvc/error.hpp"

namespace mtlvc::dsp {

namespace {

constexpr double kTrimWindowSeconds = 0.030;
constexpr int kResampleZeroCrossings = 32;
constexpr double kResampleRolloff = 0.97;
constexpr double kKaiserBeta = 8.6;

double Sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double Kaiser(double x, double beta) {
  // x in [-1, 1]
  if (std::abs(x) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

}  // namespace

int SpectroConfig::win_samples() const {
  return static_cast<int>(std::lround(win_length * sample_rate));
}

int SpectroConfig::hop_samples() const {
  return static_cast<int>(std::lround(hop_length * sample_rate));
}

void SpectroConfig::validate() const {
  if (sample_rate <= 0) throw Error(ErrorCode::kInvalidArgument, "sample_rate must be positive");
  if (win_samples() <= 0 || hop_samples() <= 0)
    throw Error(ErrorCode::kInvalidArgument, "window and hop must be at least one sample");
  if (win_samples() > nfft)
    throw Error(ErrorCode::kInvalidArgument, "window longer than nfft");
  if (hop_samples() > win_samples())
    throw Error(ErrorCode::kInvalidArgument, "hop longer than window");
  if (n_mels <= 0 || n_mels >= n_bins())
    throw Error(ErrorCode::kInvalidArgument, "n_mels must be in (0, nfft/2+1)");
  const double hi = effective_fmax();
  if (!(fmin >= 0.0 && fmin < hi && hi <= sample_rate / 2.0))
    throw Error(ErrorCode::kInvalidArgument, "need 0 <= fmin < fmax <= sample_rate/2");
  if (dynamic_range_db <= 0.0)
    throw Error(ErrorCode::kInvalidArgument, "dynamic_range_db must be positive");
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Waveform TrimSilence(const Waveform& w, double threshold_db, double min_voiced) {
  if (w.samples.empty()) throw Error(ErrorCode::kEmptyInput, "cannot trim an empty waveform");
  const auto n = static_cast<std::ptrdiff_t>(w.samples.size());
  const std::ptrdiff_t win =
      std::max<std::ptrdiff_t>(1, std::lround(kTrimWindowSeconds * w.sample_rate));
  const std::ptrdiff_t n_windows = (n + win - 1) / win;

  std::vector<double> rms(static_cast<std::size_t>(n_windows), 0.0);
  double peak = 0.0;
  for (std::ptrdiff_t k = 0; k < n_windows; ++k) {
    const std::ptrdiff_t begin = k * win;
    const std::ptrdiff_t end = std::min(n, begin + win);
    double acc = 0.0;
    for (std::ptrdiff_t i = begin; i < end; ++i) acc += w.samples[i] * w.samples[i];
    rms[k] = std::sqrt(acc / static_cast<double>(end - begin));
    peak = std::max(peak, rms[k]);
  }
  if (peak <= 0.0) throw Error(ErrorCode::kAllSilent, "waveform has no energy");

  const double ratio = std::pow(10.0, threshold_db / 20.0);
  std::vector<bool> voiced(rms.size());
  for (std::size_t k = 0; k < rms.size(); ++k) voiced[k] = rms[k] > peak * ratio;

  const auto min_run = std::max<std::ptrdiff_t>(
      1, static_cast<std::ptrdiff_t>(std::ceil(min_voiced / kTrimWindowSeconds - 1e-9)));
  std::ptrdiff_t first = -1;
  std::ptrdiff_t last = -1;
  for (std::ptrdiff_t k = 0; k < n_windows;) {
    if (!voiced[k]) {
      ++k;
      continue;
    }
    std::ptrdiff_t run_end = k;
    while (run_end < n_windows && voiced[run_end]) ++run_end;
    if (run_end - k >= min_run) {
      if (first < 0) first = k;
      last = run_end - 1;
    }
    k = run_end;
  }
  if (first < 0) throw Error(ErrorCode::kAllSilent, "no window above threshold");

  Waveform out;
  out.sample_rate = w.sample_rate;
  std::ptrdiff_t begin = first * win;
  std::ptrdiff_t end = std::min(n, (last + 1) * win);
  // Window edges are coarse; exact zeros at either end carry nothing.
  while (begin < end && w.samples[begin] == 0.0) ++begin;
  while (end > begin && w.samples[end - 1] == 0.0) --end;
  out.samples.assign(w.samples.begin() + begin, w.samples.begin() + end);
  return out;
}

Waveform Resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw Error(ErrorCode::kInvalidArgument, "target_rate must be positive");
  if (target_rate == w.sample_rate) return w;

  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const double cutoff = kResampleRolloff * std::min(1.0, ratio);
  const double half_width = kResampleZeroCrossings / cutoff;  // in source samples
  const auto n_in = static_cast<std::ptrdiff_t>(w.samples.size());
  const auto n_out = static_cast<std::ptrdiff_t>(std::llround(n_in * ratio));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.assign(static_cast<std::size_t>(n_out), 0.0);
  for (std::ptrdiff_t n = 0; n < n_out; ++n) {
    const double x = static_cast<double>(n) / ratio;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(x - half_width));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(x + half_width));
    double acc = 0.0;
    double norm = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      const double d = x - static_cast<double>(k);
      const double h = cutoff * Sinc(cutoff * d) * Kaiser(d / half_width, kKaiserBeta);
      norm += h;
      if (k >= 0 && k < n_in) acc += h * w.samples[k];
    }
    out.samples[n] = norm != 0.0 ? acc / norm : 0.0;
  }
  return out;
}

std::vector<double> HannWindow(int length) {
  std::vector<double> win(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i)
    win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  return win;
}

int FrameCount(int n_samples, int win, int hop) {
  if (n_samples < win) return 0;
  return 1 + (n_samples - win) / hop;
}

Eigen::MatrixXcd StftComplex(const std::vector<double>& samples, const SpectroConfig& c) {
  const int win = c.win_samples();
  const int hop = c.hop_samples();
  const int n = static_cast<int>(samples.size());
  if (n < win)
    throw Error(ErrorCode::kTooShort, "need at least " + std::to_string(win) + " samples, got " +
                                          std::to_string(n));
  const int frames = FrameCount(n, win, hop);
  const auto window = HannWindow(win);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(c.nfft), 0.0);
  std::vector<std::complex<double>> spec;
  Eigen::MatrixXcd out(frames, c.n_bins());
  for (int t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < win; ++i) buf[i] = samples[t * hop + i] * window[i];
    fft.fwd(spec, buf);
    for (int k = 0; k < c.n_bins(); ++k) out(t, k) = spec[k];
  }
  return out;
}

Matrix StftMagnitude(const Waveform& w, const SpectroConfig& c) {
  return StftComplex(w.samples, c).cwiseAbs();
}

double MelCenterHz(const SpectroConfig& c, int k) {
  const double lo = HzToMel(c.fmin);
  const double hi = HzToMel(c.effective_fmax());
  return MelToHz(lo + (k + 1) * (hi - lo) / (c.n_mels + 1));
}

Matrix MelFilterbank(const SpectroConfig& c) {
  c.validate();
  const int n_bins = c.n_bins();
  std::vector<double> edges(static_cast<std::size_t>(c.n_mels + 2));
  const double lo = HzToMel(c.fmin);
  const double hi = HzToMel(c.effective_fmax());
  for (int i = 0; i < c.n_mels + 2; ++i) edges[i] = MelToHz(lo + i * (hi - lo) / (c.n_mels + 1));

  Matrix fb = Matrix::Zero(c.n_mels, n_bins);
  for (int m = 0; m < c.n_mels; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * c.sample_rate / c.nfft;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

Matrix AmplitudeToDb(const Matrix& magnitude) {
  return magnitude.unaryExpr([](double v) { return 20.0 * std::log10(std::max(v, kMagnitudeFloor)); });
}

Matrix NormalizeDb(const Matrix& db, const SpectroConfig& c) {
  const double floor_db = c.ref_db - c.dynamic_range_db;
  return db.unaryExpr([&](double v) {
    return std::clamp((v - floor_db) / c.dynamic_range_db, 0.0, 1.0);
  });
}

Matrix DenormalizeToMagnitude(const Matrix& normalized, const SpectroConfig& c) {
  const double floor_db = c.ref_db - c.dynamic_range_db;
  // A value at the floor of the range carries no information about level;
  // treat it as silence.
  return normalized.unaryExpr([&](double v) {
    if (v <= 0.0) return 0.0;
    return std::pow(10.0, (std::min(v, 1.0) * c.dynamic_range_db + floor_db) / 20.0);
  });
}

Features ExtractFeatures(const Waveform& w, const SpectroConfig& c) {
  c.validate();
  const Matrix mag = StftMagnitude(w, c);
  const Matrix mel_mag = mag * MelFilterbank(c).transpose();
  Features f;
  f.linear.kind = FeatureKind::kLinear;
  f.linear.values = NormalizeDb(AmplitudeToDb(mag), c);
  f.mel.kind = FeatureKind::kMel;
  f.mel.values = NormalizeDb(AmplitudeToDb(mel_mag), c);
  return f;
}

double PeakDb(const Waveform& w, const SpectroConfig& c) {
  const Matrix mag = StftMagnitude(w, c);
  const Matrix mel_mag = mag * MelFilterbank(c).transpose();
  return std::max(AmplitudeToDb(mag).maxCoeff(), AmplitudeToDb(mel_mag).maxCoeff());
}

Waveform InverseStft(const Eigen::MatrixXcd& spectrum, const SpectroConfig& c) {
  const int win = c.win_samples();
  const int hop = c.hop_samples();
  const int frames = static_cast<int>(spectrum.rows());
  Waveform out;
  out.sample_rate = c.sample_rate;
  if (frames == 0) return out;
  const int length = (frames - 1) * hop + win;
  const auto window = HannWindow(win);

  std::vector<double> acc(static_cast<std::size_t>(length), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(length), 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(c.n_bins()));
  std::vector<double> frame;
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < c.n_bins(); ++k) spec[k] = spectrum(t, k);
    fft.inv(frame, spec, c.nfft);
    for (int i = 0; i < win; ++i) {
      acc[t * hop + i] += frame[i] * window[i];
      norm[t * hop + i] += window[i] * window[i];
    }
  }
  const double peak_norm = *std::max_element(norm.begin(), norm.end());
  const double floor = 1e-3 * peak_norm;
  out.samples.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.samples[i] = acc[i] / std::max(norm[i], floor);
  return out;
}

namespace {

// Phase-locked vocoder initialisation (Laroche & Dolson 1999): spectral
// peaks are located with parabolic interpolation on log magnitude, their
// phase advances by the estimated frequency times the hop, and the bins in a
// peak's region follow the Hann main-lobe phase around it. A stationary
// sinusoid starts out without drift, which plain random phases do not give.
Eigen::MatrixXcd InitialPhase(const Matrix& target, const SpectroConfig& c, std::uint64_t seed) {
  const double two_pi = 2.0 * std::numbers::pi;
  const auto frames = target.rows();
  const auto bins = target.cols();
  const double lag = static_cast<double>(c.win_samples() - 1) / 2.0;  // window centre in the buffer
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, two_pi);

  struct Peak {
    double freq;  // fractional bin
    double psi;   // sinusoid phase at the window centre
  };
  std::vector<Peak> prev;
  Eigen::MatrixXcd spectrum(frames, bins);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const auto row = target.row(t);
    const double floor = 1e-3 * row.maxCoeff();
    std::vector<Eigen::Index> idx;
    for (Eigen::Index k = 1; k + 1 < bins; ++k)
      if (row(k) > floor && row(k) >= row(k - 1) && row(k) > row(k + 1)) idx.push_back(k);

    std::vector<Peak> peaks;
    for (Eigen::Index k : idx) {
      const double a = std::log(row(k - 1) + 1e-12), b = std::log(row(k)), g = std::log(row(k + 1) + 1e-12);
      const double den = a - 2.0 * b + g;
      const double freq = static_cast<double>(k) + (den < 0.0 ? 0.5 * (a - g) / den : 0.0);
      // Continue the nearest peak of the previous frame when there is one.
      const Peak* match = nullptr;
      for (const auto& q : prev)
        if (std::abs(q.freq - freq) <= 1.0 && (!match || std::abs(q.freq - freq) < std::abs(match->freq - freq)))
          match = &q;
      const double psi = match ? match->psi + two_pi * 0.5 * (match->freq + freq) * c.hop_samples() / c.nfft
                               : uniform(rng);
      peaks.push_back({freq, psi});
    }

    std::size_t owner = 0;
    for (Eigen::Index k = 0; k < bins; ++k) {
      double ph = 0.0;
      if (!peaks.empty()) {
        while (owner + 1 < peaks.size() &&
               std::abs(peaks[owner + 1].freq - static_cast<double>(k)) < std::abs(peaks[owner].freq - static_cast<double>(k)))
          ++owner;
        const Peak& p = peaks[owner];
        ph = p.psi - two_pi * (static_cast<double>(k) - p.freq) * lag / c.nfft;
      }
      spectrum(t, k) = std::polar(target(t, k), ph);
    }
    prev = std::move(peaks);
  }
  return spectrum;
}

}  // namespace

GriffinLimResult GriffinLim(const FeatureMatrix& linear, const SpectroConfig& c, int iters,
                            std::uint64_t seed) {
  if (linear.kind != FeatureKind::kLinear)
    throw Error(ErrorCode::kInvalidArgument, "griffin-lim needs a linear spectrogram");
  if (linear.bins() != c.n_bins())
    throw Error(ErrorCode::kShapeMismatch, "linear bins do not match nfft/2+1");
  c.validate();

  const Matrix target = DenormalizeToMagnitude(linear.values, c);
  const double target_norm = target.norm();
  Eigen::MatrixXcd spectrum = InitialPhase(target, c, seed);

  GriffinLimResult result;
  result.waveform = InverseStft(spectrum, c);
  if (iters == 0) return result;
  // Fast Griffin-Lim (Perraudin et al. 2013): plain alternating projections
  // stall on phase jumps between frames, the momentum term escapes them.
  constexpr double kMomentum = 0.99;
  Eigen::MatrixXcd consistent = StftComplex(result.waveform.samples, c);
  Eigen::MatrixXcd previous = consistent;
  Eigen::MatrixXcd accelerated = consistent;
  for (int it = 0; it < iters; ++it) {
    for (Eigen::Index t = 0; t < target.rows(); ++t) {
      for (Eigen::Index k = 0; k < target.cols(); ++k) {
        const double mag = std::abs(accelerated(t, k));
        const std::complex<double> unit =
            mag > 1e-12 ? accelerated(t, k) / mag : std::complex<double>(1.0, 0.0);
        spectrum(t, k) = target(t, k) * unit;
      }
    }
    result.waveform = InverseStft(spectrum, c);
    consistent = StftComplex(result.waveform.samples, c);
    accelerated = consistent + kMomentum * (consistent - previous);
    previous = consistent;
    const double err = (target - Matrix(consistent.cwiseAbs())).norm();
    result.convergence.push_back(target_norm > 0.0 ? err / target_norm : err);
  }
  return result;
}

}  // namespace mtlvc::dsp
