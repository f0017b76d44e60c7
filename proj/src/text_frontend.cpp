#include "mtlvc/text_frontend.hpp"

#include <fstream>

#include "mtlvc/error.hpp"

namespace mtlvc::text {

std::optional<JamoTriple> DecomposeHangul(char32_t codepoint) {
  if (codepoint < kHangulBase || codepoint > kHangulLast) return std::nullopt;
  const int s = static_cast<int>(codepoint - kHangulBase);
  return JamoTriple{s / (kNucleusCount * kCodaCount), (s / kCodaCount) % kNucleusCount,
                    s % kCodaCount};
}

char32_t ComposeHangul(const JamoTriple& t) {
  if (t.onset < 0 || t.onset >= kOnsetCount || t.nucleus < 0 || t.nucleus >= kNucleusCount ||
      t.coda < 0 || t.coda >= kCodaCount) {
    throw Error(ErrorCode::kOutOfRange, "jamo triple (" + std::to_string(t.onset) + "," +
                                            std::to_string(t.nucleus) + "," +
                                            std::to_string(t.coda) + ") out of range");
  }
  return kHangulBase +
         static_cast<char32_t>((t.onset * kNucleusCount + t.nucleus) * kCodaCount + t.coda);
}

std::u32string DecodeUtf8(std::string_view utf8) {
  std::u32string out;
  std::size_t i = 0;
  auto fail = [&] { throw Error(ErrorCode::kFormat, "invalid UTF-8 at byte " + std::to_string(i)); };
  while (i < utf8.size()) {
    const auto b0 = static_cast<unsigned char>(utf8[i]);
    int extra = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      extra = 1;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      extra = 2;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      extra = 3;
    } else {
      fail();
    }
    if (i + static_cast<std::size_t>(extra) >= utf8.size()) fail();
    for (int k = 1; k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(utf8[i + k]);
      if ((b & 0xC0) != 0x80) fail();
      cp = (cp << 6) | (b & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string EncodeUtf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

// Conjoining jamo blocks: choseong U+1100, jungseong U+1161, jongseong U+11A8.
std::string OnsetSymbol(int onset) { return EncodeUtf8(0x1100 + static_cast<char32_t>(onset)); }
std::string NucleusSymbol(int nucleus) { return EncodeUtf8(0x1161 + static_cast<char32_t>(nucleus)); }
std::string CodaSymbol(int coda) {
  if (coda == 0) return std::string(kEmptyCoda);
  return EncodeUtf8(0x11A7 + static_cast<char32_t>(coda));
}

std::vector<std::string> TextToSymbols(std::string_view utf8) {
  std::vector<std::string> out;
  for (char32_t cp : DecodeUtf8(utf8)) {
    if (auto jamo = DecomposeHangul(cp)) {
      out.push_back(OnsetSymbol(jamo->onset));
      out.push_back(NucleusSymbol(jamo->nucleus));
      out.push_back(CodaSymbol(jamo->coda));
    } else {
      out.push_back(EncodeUtf8(cp));
    }
  }
  return out;
}

std::vector<std::string> SplitSymbols(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

SymbolVocabulary::SymbolVocabulary() {
  add(std::string(kPadSymbol));
  add(std::string(kEosSymbol));
}

SymbolVocabulary::SymbolVocabulary(const std::vector<std::string>& symbols) : SymbolVocabulary() {
  for (const auto& s : symbols) add(s);
}

SymbolVocabulary SymbolVocabulary::FromTexts(const std::vector<std::string>& utf8_texts) {
  SymbolVocabulary v;
  for (const auto& t : utf8_texts)
    for (const auto& s : TextToSymbols(t)) v.add(s);
  return v;
}

int SymbolVocabulary::add(const std::string& symbol) {
  if (auto it = index_.find(symbol); it != index_.end()) return it->second;
  const int id = size();
  symbols_.push_back(symbol);
  index_.emplace(symbol, id);
  return id;
}

std::optional<int> SymbolVocabulary::find(std::string_view symbol) const {
  if (auto it = index_.find(std::string(symbol)); it != index_.end()) return it->second;
  return std::nullopt;
}

void SymbolVocabulary::Save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write vocabulary " + path.string());
  for (const auto& s : symbols_) os << s << '\n';
}

SymbolVocabulary SymbolVocabulary::Load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIo, "cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  if (lines.size() < 2 || lines[0] != kPadSymbol || lines[1] != kEosSymbol)
    throw Error(ErrorCode::kFormat, "vocabulary must start with <pad> and <eos>: " + path.string());
  SymbolVocabulary v;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (v.add(lines[i]) != static_cast<int>(i))
      throw Error(ErrorCode::kFormat, "duplicate symbol '" + lines[i] + "' in " + path.string());
  }
  return v;
}

TokenSequence EncodeSymbols(const std::vector<std::string>& symbols, const SymbolVocabulary& v) {
  TokenSequence seq;
  seq.ids.reserve(symbols.size() + 1);
  for (const auto& s : symbols) {
    auto id = v.find(s);
    if (!id) throw Error(ErrorCode::kUnknownSymbol, "symbol '" + s + "' not in vocabulary");
    seq.ids.push_back(*id);
  }
  seq.ids.push_back(kEosId);
  return seq;
}

TokenSequence EncodeText(std::string_view utf8, const SymbolVocabulary& v) {
  return EncodeSymbols(TextToSymbols(utf8), v);
}

TokenSequence MakeSequence(std::vector<int> content) {
  content.push_back(kEosId);
  return TokenSequence{std::move(content)};
}

}  // namespace mtlvc::text
