#include "mtlvc/feature_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mtlvc/error.hpp"

namespace mtlvc {

namespace {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

template <typename T>
void Put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T Get(std::istream& is, const std::filesystem::path& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw Error(ErrorCode::kFormat, "truncated feature file " + path.string());
  return value;
}

}  // namespace

void WriteFeatures(const std::filesystem::path& path, const dsp::FeatureMatrix& features) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  os.write("MTLF", 4);
  Put<std::uint32_t>(os, kFeatureFileVersion);
  Put<std::uint8_t>(os, static_cast<std::uint8_t>(features.kind));
  Put<std::uint32_t>(os, static_cast<std::uint32_t>(features.frames()));
  Put<std::uint32_t>(os, static_cast<std::uint32_t>(features.bins()));
  std::vector<float> row(static_cast<std::size_t>(features.bins()));
  for (int t = 0; t < features.frames(); ++t) {
    for (int f = 0; f < features.bins(); ++f) row[f] = static_cast<float>(features.values(t, f));
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

dsp::FeatureMatrix ReadFeatures(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MTLF", 4) != 0)
    throw Error(ErrorCode::kFormat, "bad magic in " + path.string());
  const auto version = Get<std::uint32_t>(is, path);
  if (version != kFeatureFileVersion)
    throw Error(ErrorCode::kFormat,
                "unsupported feature file version " + std::to_string(version) + " in " + path.string());
  const auto kind = Get<std::uint8_t>(is, path);
  if (kind > 1) throw Error(ErrorCode::kFormat, "bad feature kind in " + path.string());
  const auto frames = Get<std::uint32_t>(is, path);
  const auto bins = Get<std::uint32_t>(is, path);

  dsp::FeatureMatrix out;
  out.kind = static_cast<dsp::FeatureKind>(kind);
  out.values.resize(frames, bins);
  std::vector<float> row(bins);
  for (std::uint32_t t = 0; t < frames; ++t) {
    if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(bins * sizeof(float))))
      throw Error(ErrorCode::kFormat, "truncated feature file " + path.string());
    for (std::uint32_t f = 0; f < bins; ++f) out.values(t, f) = row[f];
  }
  return out;
}

void CheckFeatureInvariants(const dsp::FeatureMatrix& features, int n_mels, int n_linear) {
  const int expected = features.kind == dsp::FeatureKind::kMel ? n_mels : n_linear;
  if (features.bins() != expected)
    throw Error(ErrorCode::kFormat, "feature width " + std::to_string(features.bins()) +
                                        " does not match expected " + std::to_string(expected));
  for (Eigen::Index i = 0; i < features.values.size(); ++i) {
    const double v = features.values.data()[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw Error(ErrorCode::kFormat, "feature value out of [0,1]");
  }
}

}  // namespace mtlvc
