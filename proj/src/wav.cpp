#include "mtlvc/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "mtlvc/error.hpp"

namespace mtlvc::wav {

namespace {

std::uint32_t U32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t U16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void PutU32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void PutU16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

dsp::Waveform Read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& what) { throw Error(ErrorCode::kFormat, path.string() + ": " + what); };
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 || std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  dsp::Waveform w;
  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const unsigned char* chunk = data.data() + pos;
    const std::uint32_t size = U32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > data.size()) fail("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) fail("short fmt chunk");
      const unsigned char* f = data.data() + body;
      if (U16(f) != 1) fail("only PCM is supported");
      if (U16(f + 2) != 1) fail("only mono is supported");
      if (U16(f + 14) != 16) fail("only 16-bit samples are supported");
      w.sample_rate = static_cast<int>(U32(f + 4));
      if (w.sample_rate <= 0) fail("bad sample rate");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) fail("data chunk before fmt chunk");
      const std::size_t n = size / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        w.samples[i] = static_cast<std::int16_t>(U16(data.data() + body + 2 * i)) / 32768.0;
      return w;
    }
    pos = body + size + (size & 1);
  }
  fail("no data chunk");
  return w;
}

void Write(const dsp::Waveform& w, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const auto bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  PutU32(os, 36 + bytes);
  os.write("WAVEfmt ", 8);
  PutU32(os, 16);
  PutU16(os, 1);
  PutU16(os, 1);
  PutU32(os, static_cast<std::uint32_t>(w.sample_rate));
  PutU32(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  PutU16(os, 2);
  PutU16(os, 16);
  os.write("data", 4);
  PutU32(os, bytes);
  for (double s : w.samples) {
    const double v = std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0;
    PutU16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(v))));
  }
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace mtlvc::wav
