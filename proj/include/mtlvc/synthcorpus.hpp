#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mtlvc/dsp.hpp"
#include "mtlvc/text_frontend.hpp"

namespace mtlvc::synth {

// Vocabulary id of content token 0; ids below are <pad> and <eos>.
inline constexpr int kFirstContentId = 2;

struct TokenTemplate {
  int center_bin = 0;
  double bandwidth = 8.0;  // Gaussian sigma in mel bins
  int base_duration = 4;   // frames
};

struct StyleTransform {
  int bin_shift = 0;
  double duration_scale = 1.0;
  double tilt = 0.0;  // relative gain change across the mel axis
  double gain = 1.0;
};

// Generator for the synthetic parallel corpus. Token k in style s is a block
// of round(base_duration * duration_scale) identical frames holding a single
// Gaussian band centred on center_bin + bin_shift.
struct Articulator {
  std::vector<TokenTemplate> tokens;
  std::vector<StyleTransform> styles;
  double noise_std = 0.02;
  std::uint64_t seed = 1234;
  dsp::SpectroConfig spectro;

  int vocab_size() const { return static_cast<int>(tokens.size()); }
  int style_count() const { return static_cast<int>(styles.size()); }
  int n_mels() const { return spectro.n_mels; }
  int n_linear() const { return spectro.n_bins(); }

  int duration(int token, int style) const;
  double center(int token, int style) const;

  // Noise-free template frames.
  RowVector mel_frame(int token, int style) const;
  RowVector linear_frame(int token, int style) const;

  // Throws InvalidArgument when a range or separability constraint fails.
  void validate() const;

  // 30 tokens / 4 styles by default; shifts {0,+6,-6,+12}, scales
  // {1.0,1.25,0.8,1.1}. Extra styles beyond four get further shifts.
  static Articulator Default(int vocab_size = 30, int n_styles = 4,
                             const dsp::SpectroConfig& spectro = {});
};

struct RenderedUtterance {
  dsp::FeatureMatrix mel;
  dsp::FeatureMatrix linear;
};

// Content tokens of a sequence as articulator indices (EOS and PAD dropped).
std::vector<int> ContentTokens(const text::TokenSequence& seq);

std::uint64_t UtteranceSeed(std::uint64_t seed, std::uint64_t sentence_id, std::uint64_t style_id);

// Throws InvalidStyle or OutOfRange.
RenderedUtterance RenderUtterance(const text::TokenSequence& tokens, int style_id,
                                  const Articulator& a, std::uint64_t noise_seed);
// Noise seed derived from the articulator seed and the token content.
RenderedUtterance RenderUtterance(const text::TokenSequence& tokens, int style_id,
                                  const Articulator& a);

struct DecodeResult {
  text::TokenSequence tokens;
  int style_id = 0;
  double cost = 0.0;
};

// Matched-template segmentation by dynamic programming: silence frames, or
// token segments whose length may deviate up to two frames from the template
// duration at a per-frame penalty. Each style is decoded separately and the
// cheapest one wins, so all segments of the result share the reported style.
DecodeResult OracleDecode(const dsp::FeatureMatrix& mel, const Articulator& a);

struct ManifestRow {
  std::string utt_id;
  int sentence_id = 0;
  int style_id = 0;
  std::string tokens;  // whitespace-separated symbols, EOS not included
  std::string mel_path;     // relative to the manifest directory
  std::string linear_path;
};

struct CorpusManifest {
  std::vector<ManifestRow> rows;
  Articulator articulator;
  std::filesystem::path directory;

  int sentence_count() const;
  int style_count() const;
  // Row index for (sentence, style); throws OutOfRange when absent.
  std::size_t find(int sentence_id, int style_id) const;
};

inline constexpr std::string_view kManifestHeader =
    "utt_id\tsentence_id\tstyle_id\ttokens\tmel_path\tlinear_path";

void WriteManifest(const CorpusManifest& m, const std::filesystem::path& manifest_path);
// Reads the manifest and its sibling articulator snapshot.
CorpusManifest ReadManifest(const std::filesystem::path& manifest_path);

// Parallel-corpus invariant: every sentence present in every style with the
// same token string, (sentence, style) unique.
void ValidateParallel(const CorpusManifest& m);

// Content-token vocabulary of the synthetic corpus: <pad>, <eos>, t00..t{n-1}.
text::SymbolVocabulary SyntheticVocabulary(int vocab_size);
std::string TokenName(int token);

struct CorpusSpec {
  int n_sentences = 120;
  int min_len = 5;
  int max_len = 10;
  int n_styles = 4;
};

CorpusManifest GenerateCorpus(const CorpusSpec& spec, const Articulator& a,
                              const std::filesystem::path& out_dir);

// In-memory corpus with parsed features and token sequences.
struct LoadedUtterance {
  int sentence_id = 0;
  int style_id = 0;
  text::TokenSequence tokens;
  dsp::FeatureMatrix mel;
  dsp::FeatureMatrix linear;
};

struct Corpus {
  CorpusManifest manifest;
  text::SymbolVocabulary vocabulary;
  std::vector<LoadedUtterance> utterances;  // manifest row order

  const LoadedUtterance& at(int sentence_id, int style_id) const {
    return utterances[manifest.find(sentence_id, style_id)];
  }
  std::vector<int> sentence_ids() const;
};

Corpus LoadCorpus(const std::filesystem::path& manifest_path);
// Keeps only the listed sentences (order preserved as in the manifest).
Corpus SubsetCorpus(const Corpus& c, const std::vector<int>& sentence_ids);

}  // namespace mtlvc::synth
