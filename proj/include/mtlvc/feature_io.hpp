#pragma once

#include <filesystem>

#include "mtlvc/dsp.hpp"

namespace mtlvc {

// Binary feature file, little-endian:
//   "MTLF" | u32 version (1) | u8 kind | u32 T | u32 F | T*F float32 row-major
inline constexpr std::uint32_t kFeatureFileVersion = 1;

void WriteFeatures(const std::filesystem::path& path, const dsp::FeatureMatrix& features);
dsp::FeatureMatrix ReadFeatures(const std::filesystem::path& path);

// Throws Format when any entry is outside [0, 1] or not finite, or when the
// width does not match the kind.
void CheckFeatureInvariants(const dsp::FeatureMatrix& features, int n_mels, int n_linear);

}  // namespace mtlvc
