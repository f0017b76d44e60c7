#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtlvc/model.hpp"
#include "mtlvc/synthcorpus.hpp"

namespace mtlvc::eval {

struct EvalConfig {
  int heldout_sentences = 20;
  int source_style = 0;
  int n_per_style = 20;
  // Sentence supplying x_s at evaluation time; -1 picks the first training
  // sentence.
  int reference_sentence = -1;
  std::uint64_t seed = 7;

  void validate() const;
};

int EditDistance(const std::vector<int>& ref, const std::vector<int>& hyp);
// Levenshtein distance over len(ref). Throws EmptyReference.
double TokenErrorRate(const std::vector<int>& ref, const std::vector<int>& hyp);
// EOS and PAD are excluded from both sides.
double TokenErrorRate(const text::TokenSequence& ref, const text::TokenSequence& hyp);

struct VariantSpec {
  std::string name;
  double p_vc = 0.5;
  model::Task inference = model::Task::kVC;
};

// VC, VCTTS-V, VCTTS-T, TTS in table order.
const std::vector<VariantSpec>& Variants();
// Throws InvalidArgument for an unknown name.
const VariantSpec& VariantByName(const std::string& name);

struct UtteranceResult {
  int sentence_id = 0;
  int target_style = 0;
  int edits = 0;
  int ref_length = 0;
  double ter = 0.0;
  int decoded_style = 0;
  int frames = 0;
  bool max_steps_exceeded = false;
  std::string hypothesis;
};

struct VariantResult {
  std::string variant;
  double mean_ter = 0.0;    // utterance-averaged
  double pooled_ter = 0.0;  // total edits / total reference tokens
  std::vector<UtteranceResult> rows;
};

// Resolves EvalConfig::reference_sentence against the training sentences.
int ReferenceSentence(const EvalConfig& cfg, const std::vector<int>& train_sentences);

// For each held-out sentence and each target style other than the source
// style: free-running synthesis along the variant's inference path with x_s
// taken from the reference sentence in the target style, oracle decoding of
// the generated mel, TER against the true tokens.
VariantResult EvalVariant(const model::Model& m, const synth::Corpus& corpus, const std::vector<int>& heldout,
                          int reference_sentence, const VariantSpec& variant, const EvalConfig& cfg);

struct ConfusionMatrix {
  Matrix values;             // S x S mean cosine similarity
  std::vector<int> counts;   // samples per style
};

double Cosine(const Vector& a, const Vector& b);

ConfusionMatrix StyleConfusionFromVectors(const std::vector<std::vector<Vector>>& per_style);
// n_per_style utterances per style drawn without replacement (seeded).
ConfusionMatrix StyleConfusion(const model::Model& m, const synth::Corpus& corpus, int n_per_style,
                               std::uint64_t seed);

// Mean diagonal minus mean off-diagonal entry.
double DiagonalMargin(const ConfusionMatrix& c);

// Writes source.mel plus style_{k}.mel for every style, stacked into
// grid.pgm (source on top). Returns the number of rows written.
int DumpConversionGrid(const model::Model& m, const synth::Corpus& corpus, int sentence_id, int source_style,
                       int reference_sentence, const std::filesystem::path& out_dir);

std::string FormatResults(const std::vector<VariantResult>& results, const std::vector<std::string>& checkpoints,
                          const std::vector<std::uint64_t>& seeds);

}  // namespace mtlvc::eval
