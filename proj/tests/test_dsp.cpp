#include <cmath>
#include <fstream>
#include <complex>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mtlvc/dsp.hpp"
#include "mtlvc/error.hpp"
#include "mtlvc/feature_io.hpp"
#include "support.hpp"

using namespace mtlvc;
using namespace mtlvc::dsp;

namespace {

Waveform Sine(double hz, double seconds, int rate, double amp = 0.5, double phase = 0.0) {
  Waveform w;
  w.sample_rate = rate;
  const int n = static_cast<int>(std::lround(seconds * rate));
  for (int i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate + phase));
  return w;
}

double Correlation(const std::vector<double>& a, const std::vector<double>& b, std::size_t begin, std::size_t end) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = begin; i < end; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("framing: 1 s at 16 kHz gives 77 frames") {
  SpectroConfig c;
  CHECK(c.win_samples() == 800);
  CHECK(c.hop_samples() == 200);
  CHECK(FrameCount(16000, 800, 200) == 77);
  Waveform w = Sine(440.0, 1.0, 16000);
  CHECK(StftMagnitude(w, c).rows() == 77);
  CHECK(StftMagnitude(w, c).cols() == 1025);
}

TEST_CASE("framing formula for random sizes") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int win = std::uniform_int_distribution<int>(1, 400)(rng);
    const int hop = std::uniform_int_distribution<int>(1, win)(rng);
    const int n = std::uniform_int_distribution<int>(win, 5000)(rng);
    // Brute count of frame starts that fit.
    int count = 0;
    for (int s = 0; s + win <= n; s += hop) ++count;
    CHECK(FrameCount(n, win, hop) == count);
  }
}

TEST_CASE("1 kHz sine peaks at bin 128, matching a direct DFT") {
  SpectroConfig c;
  const Waveform w = Sine(1000.0, 0.5, 16000);
  const Matrix mag = StftMagnitude(w, c);
  for (Eigen::Index t = 0; t < mag.rows(); ++t) {
    Eigen::Index arg;
    mag.row(t).maxCoeff(&arg);
    CHECK(arg == 128);
  }
  // Oracle: direct O(N^2) DFT of frame 3 around the peak.
  const auto win = HannWindow(c.win_samples());
  for (int k : {120, 128, 131}) {
    std::complex<double> acc = 0;
    for (int i = 0; i < c.win_samples(); ++i) {
      acc += win[static_cast<std::size_t>(i)] * w.samples[static_cast<std::size_t>(3 * c.hop_samples() + i)] *
             std::polar(1.0, -2.0 * std::numbers::pi * k * i / c.nfft);
    }
    CHECK(mag(3, k) == doctest::Approx(std::abs(acc)).epsilon(1e-9));
  }
}

TEST_CASE("zero waveform gives zero magnitudes and zero features") {
  SpectroConfig c;
  Waveform w;
  w.samples.assign(4000, 0.0);
  CHECK(StftMagnitude(w, c).cwiseAbs().maxCoeff() == 0.0);
  const Features f = ExtractFeatures(w, c);
  CHECK(f.mel.values.maxCoeff() == 0.0);
  CHECK(f.linear.values.maxCoeff() == 0.0);
  CHECK(f.mel.frames() == f.linear.frames());
}

TEST_CASE("periodic Hann window") {
  const auto w = HannWindow(8);
  CHECK(w[0] == doctest::Approx(0.0));
  CHECK(w[4] == doctest::Approx(1.0));
  CHECK(w[2] == doctest::Approx(0.5));
}

TEST_CASE("mel filterbank shape and centers") {
  SpectroConfig c;
  const Matrix fb = MelFilterbank(c);
  REQUIRE(fb.rows() == 80);
  REQUIRE(fb.cols() == 1025);
  CHECK(fb.minCoeff() >= 0.0);
  for (Eigen::Index k = 0; k < fb.rows(); ++k) CHECK(fb.row(k).sum() > 0.0);

  auto support = [&](Eigen::Index k) {
    Eigen::Index lo = -1, hi = -1;
    for (Eigen::Index j = 0; j < fb.cols(); ++j) {
      if (fb(k, j) > 0.0) {
        if (lo < 0) lo = j;
        hi = j;
      }
    }
    return std::pair{lo, hi};
  };
  CHECK(support(0).second < support(79).first);

  // Unimodal rows with strictly increasing peaks.
  Eigen::Index prev_peak = -1;
  for (Eigen::Index k = 0; k < fb.rows(); ++k) {
    Eigen::Index peak;
    fb.row(k).maxCoeff(&peak);
    CHECK(peak >= prev_peak);
    prev_peak = peak;
    const auto [lo, hi] = support(k);
    for (Eigen::Index j = lo; j < peak; ++j) CHECK(fb(k, j) <= fb(k, j + 1) + 1e-12);
    for (Eigen::Index j = peak; j < hi; ++j) CHECK(fb(k, j) >= fb(k, j + 1) - 1e-12);
  }

  // Center formula evaluated independently.
  const double mlo = 2595.0 * std::log10(1.0 + c.fmin / 700.0);
  const double mhi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  for (int k : {0, 40, 79}) {
    const double m = mlo + (k + 1) * (mhi - mlo) / 81.0;
    const double hz = 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
    CHECK(MelCenterHz(c, k) == doctest::Approx(hz).epsilon(1e-12));
  }
  CHECK(MelToHz(HzToMel(1234.5)) == doctest::Approx(1234.5));
}

TEST_CASE("normalization: magnitude 10^(ref_db/20) maps to exactly 1") {
  SpectroConfig c;
  Matrix mag = Matrix::Zero(2, 3);
  mag(0, 1) = std::pow(10.0, c.ref_db / 20.0);
  mag(1, 2) = std::pow(10.0, (c.ref_db - c.dynamic_range_db / 2) / 20.0);
  const Matrix n = NormalizeDb(AmplitudeToDb(mag), c);
  CHECK(n(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(n(1, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(n(0, 0) == 0.0);
  const Matrix back = DenormalizeToMagnitude(n, c);
  CHECK(back(0, 1) == doctest::Approx(mag(0, 1)).epsilon(1e-9));
}

TEST_CASE("features stay in [0,1] under fuzzing") {
  SpectroConfig c;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    Waveform w;
    const double scale = std::pow(10.0, std::uniform_real_distribution<double>(-6, 3)(rng));
    const int n = std::uniform_int_distribution<int>(800, 6000)(rng);
    for (int i = 0; i < n; ++i) w.samples.push_back(scale * g(rng));
    const Features f = ExtractFeatures(w, c);
    CHECK(f.mel.values.allFinite());
    CHECK(f.mel.values.minCoeff() >= 0.0);
    CHECK(f.mel.values.maxCoeff() <= 1.0);
    CHECK(f.linear.values.minCoeff() >= 0.0);
    CHECK(f.linear.values.maxCoeff() <= 1.0);
    CHECK(f.mel.frames() == f.linear.frames());
    CHECK_NOTHROW(CheckFeatureInvariants(f.mel, c.n_mels, c.n_bins()));
  }
}

TEST_CASE("trim silence") {
  SUBCASE("leading exact zeros removed") {
    Waveform w;
    w.samples.assign(8000, 0.0);
    const Waveform s = Sine(300.0, 0.5, 16000);
    w.samples.insert(w.samples.end(), s.samples.begin(), s.samples.end());
    const Waveform t = TrimSilence(w);
    CHECK(t.samples.size() <= s.samples.size());
    CHECK(t.samples.size() >= s.samples.size() - 480);
    CHECK(std::abs(t.samples[100]) > 0.0);
  }
  SUBCASE("all zero throws AllSilent") {
    Waveform w;
    w.samples.assign(1000, 0.0);
    try {
      TrimSilence(w);
      FAIL("expected AllSilent");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kAllSilent);
    }
  }
  SUBCASE("burst in -80 dB noise: edges within one window") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1e-4 * 0.5 / std::sqrt(2.0));
    Waveform w;
    w.sample_rate = 16000;
    const int begin = 5000, end = 13000;
    for (int i = 0; i < 18000; ++i) {
      double v = g(rng);
      if (i >= begin && i < end) v += 0.5 * std::sin(2.0 * std::numbers::pi * 500.0 * i / 16000.0);
      w.samples.push_back(v);
    }
    const Waveform t = TrimSilence(w, -40.0);
    const int win = 480;  // 30 ms
    CHECK(std::abs(static_cast<int>(t.samples.size()) - (end - begin)) <= 2 * win);
  }
}

TEST_CASE("resample") {
  SUBCASE("identity at equal rates") {
    const Waveform w = Sine(440, 0.1, 16000);
    CHECK(Resample(w, 16000).samples == w.samples);
  }
  SUBCASE("DC preserved") {
    Waveform w;
    w.sample_rate = 44100;
    w.samples.assign(44100, 1.0);
    const Waveform r = Resample(w, 16000);
    CHECK(r.samples.size() == 16000);
    for (std::size_t i = 200; i + 200 < r.samples.size(); ++i) CHECK(r.samples[i] == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("440 Hz sine 44.1k -> 16k matches the analytic sine") {
    const Waveform r = Resample(Sine(440, 1.0, 44100), 16000);
    const Waveform ideal = Sine(440, 1.0, 16000);
    CHECK(Correlation(r.samples, ideal.samples, 200, 15800) > 0.999);
  }
  SUBCASE("round trip through twice the rate") {
    const Waveform w = Sine(700, 0.5, 16000);
    const Waveform back = Resample(Resample(w, 32000), 16000);
    REQUIRE(back.samples.size() == w.samples.size());
    CHECK(Correlation(back.samples, w.samples, 100, w.samples.size() - 100) > 0.99);
  }
}

TEST_CASE("Griffin-Lim") {
  SpectroConfig c;
  SUBCASE("440 Hz sine reconstruction") {
    const Waveform w = Sine(440.0, 0.5, 16000);
    const Features f = ExtractFeatures(w, c);
    const GriffinLimResult g = GriffinLim(f.linear, c, 60, 1);
    const std::size_t expected = static_cast<std::size_t>((f.linear.frames() - 1) * c.hop_samples() + c.win_samples());
    REQUIRE(g.waveform.samples.size() == expected);
    // Best |correlation| against 440 Hz sines of any phase (time shift).
    double best = 0.0;
    for (int k = 0; k < 64; ++k) {
      const Waveform ref = Sine(440.0, 0.5, 16000, 0.5, 2.0 * std::numbers::pi * k / 64);
      best = std::max(best, std::abs(Correlation(g.waveform.samples, ref.samples, 800, expected - 800)));
    }
    CHECK(best > 0.9);
    REQUIRE(g.convergence.size() == 60);
    CHECK(g.convergence.back() <= g.convergence.front());
  }
  SUBCASE("all-zero spectrogram gives near silence") {
    FeatureMatrix z{Matrix::Zero(10, c.n_bins()), FeatureKind::kLinear};
    const GriffinLimResult g = GriffinLim(z, c, 10, 0);
    double peak = 0.0;
    for (double s : g.waveform.samples) peak = std::max(peak, std::abs(s));
    CHECK(peak < 1e-3);
  }
  SUBCASE("zero iterations still has overlap-add length") {
    std::mt19937_64 rng(4);
    FeatureMatrix m{testing::RandomMatrix(7, c.n_bins(), rng), FeatureKind::kLinear};
    const GriffinLimResult g = GriffinLim(m, c, 0, 0);
    CHECK(g.waveform.samples.size() == static_cast<std::size_t>(6 * c.hop_samples() + c.win_samples()));
    CHECK(g.convergence.empty());
  }
  SUBCASE("convergence never ends worse than it starts on random inputs") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 3; ++trial) {
      FeatureMatrix m{testing::RandomMatrix(12, c.n_bins(), rng, 0.2, 0.8), FeatureKind::kLinear};
      const GriffinLimResult g = GriffinLim(m, c, 8, static_cast<std::uint64_t>(trial));
      CHECK(g.convergence.back() <= g.convergence.front());
    }
  }
}

TEST_CASE("feature files round-trip and reject corruption") {
  const auto dir = testing::TempDir("featio");
  std::mt19937_64 rng(5);
  FeatureMatrix m{testing::RandomMatrix(9, 80, rng), FeatureKind::kMel};
  WriteFeatures(dir / "a.mel", m);
  const FeatureMatrix r = ReadFeatures(dir / "a.mel");
  CHECK(r.kind == FeatureKind::kMel);
  CHECK(r.frames() == 9);
  CHECK((r.values - m.values).cwiseAbs().maxCoeff() < 1e-7);
  {
    std::fstream f(dir / "a.mel", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(ReadFeatures(dir / "a.mel"), Error);
  WriteFeatures(dir / "b.mel", m);
  {
    std::fstream f(dir / "b.mel", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v[4] = {2, 0, 0, 0};
    f.write(v, 4);
  }
  CHECK_THROWS_AS(ReadFeatures(dir / "b.mel"), Error);
}
