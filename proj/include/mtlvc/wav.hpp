#pragma once

#include <filesystem>

#include "mtlvc/dsp.hpp"

namespace mtlvc::wav {

// PCM 16-bit mono RIFF/WAVE only; samples scaled to [-1, 1).
// Throws Io or Format (naming the file).
dsp::Waveform Read(const std::filesystem::path& path);
void Write(const dsp::Waveform& w, const std::filesystem::path& path);

}  // namespace mtlvc::wav
