#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtlvc::text {

inline constexpr char32_t kHangulBase = 0xAC00;
inline constexpr char32_t kHangulLast = 0xD7A3;
inline constexpr int kOnsetCount = 19;
inline constexpr int kNucleusCount = 21;
inline constexpr int kCodaCount = 28;  // includes the empty coda at 0

struct JamoTriple {
  int onset = 0;
  int nucleus = 0;
  int coda = 0;

  friend bool operator==(const JamoTriple&, const JamoTriple&) = default;
};

// Empty optional for code points outside the precomposed syllable block.
std::optional<JamoTriple> DecomposeHangul(char32_t codepoint);

// Throws OutOfRange when any component is outside its range.
char32_t ComposeHangul(const JamoTriple& t);

std::u32string DecodeUtf8(std::string_view utf8);
std::string EncodeUtf8(char32_t codepoint);

// Symbols emitted for a syllable. Onsets and codas use the separate Unicode
// conjoining-jamo blocks, so the same consonant never shares an id across
// positions.
std::string OnsetSymbol(int onset);
std::string NucleusSymbol(int nucleus);
std::string CodaSymbol(int coda);  // coda 0 yields kEmptyCoda
inline constexpr std::string_view kEmptyCoda = "<nc>";

// Jamo-level symbol stream for arbitrary UTF-8 text; non-Hangul code points
// pass through as single-character symbols.
std::vector<std::string> TextToSymbols(std::string_view utf8);

// Whitespace-separated symbol stream (synthetic corpus token strings).
std::vector<std::string> SplitSymbols(std::string_view line);

inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;
inline constexpr std::string_view kPadSymbol = "<pad>";
inline constexpr std::string_view kEosSymbol = "<eos>";

class SymbolVocabulary {
 public:
  SymbolVocabulary();
  // Reserved symbols first, then the given symbols in order, duplicates dropped.
  explicit SymbolVocabulary(const std::vector<std::string>& symbols);

  static SymbolVocabulary FromTexts(const std::vector<std::string>& utf8_texts);
  static SymbolVocabulary Load(const std::filesystem::path& path);
  void Save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view symbol) const;
  int add(const std::string& symbol);

  const std::vector<std::string>& symbols() const { return symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

// Ids with exactly one trailing EOS.
struct TokenSequence {
  std::vector<int> ids;

  // Length excluding the terminal EOS.
  std::size_t content_length() const { return ids.empty() ? 0 : ids.size() - 1; }
  std::vector<int> content() const {
    return ids.empty() ? std::vector<int>{} : std::vector<int>(ids.begin(), ids.end() - 1);
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

TokenSequence EncodeSymbols(const std::vector<std::string>& symbols, const SymbolVocabulary& v);
TokenSequence EncodeText(std::string_view utf8, const SymbolVocabulary& v);

// Appends EOS to a content id list.
TokenSequence MakeSequence(std::vector<int> content);

}  // namespace mtlvc::text
