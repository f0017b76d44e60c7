#include "mtlvc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mtlvc/error.hpp"
#include "mtlvc/feature_io.hpp"
#include "mtlvc/image.hpp"

namespace mtlvc::eval {

void EvalConfig::validate() const {
  if (heldout_sentences < 1) throw Error(ErrorCode::kInvalidArgument, "heldout_sentences must be >= 1");
  if (source_style < 0) throw Error(ErrorCode::kInvalidArgument, "source_style must be >= 0");
  if (n_per_style < 2) throw Error(ErrorCode::kInvalidArgument, "n_per_style must be >= 2");
}

int EditDistance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  std::vector<int> prev(hyp.size() + 1), cur(hyp.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const int sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double TokenErrorRate(const std::vector<int>& ref, const std::vector<int>& hyp) {
  if (ref.empty()) throw Error(ErrorCode::kEmptyReference, "reference has no tokens");
  return static_cast<double>(EditDistance(ref, hyp)) / static_cast<double>(ref.size());
}

double TokenErrorRate(const text::TokenSequence& ref, const text::TokenSequence& hyp) {
  return TokenErrorRate(ref.content(), hyp.content());
}

const std::vector<VariantSpec>& Variants() {
  static const std::vector<VariantSpec> kVariants = {
      {"VC", 1.0, model::Task::kVC},
      {"VCTTS-V", 0.5, model::Task::kVC},
      {"VCTTS-T", 0.5, model::Task::kTTS},
      {"TTS", 0.0, model::Task::kTTS},
  };
  return kVariants;
}

const VariantSpec& VariantByName(const std::string& name) {
  for (const auto& v : Variants())
    if (v.name == name) return v;
  throw Error(ErrorCode::kInvalidArgument, "unknown variant '" + name + "' (VC, VCTTS-V, VCTTS-T, TTS)");
}

int ReferenceSentence(const EvalConfig& cfg, const std::vector<int>& train_sentences) {
  if (cfg.reference_sentence >= 0) return cfg.reference_sentence;
  if (train_sentences.empty()) throw Error(ErrorCode::kCorpusTooSmall, "no sentence available for x_s");
  return train_sentences.front();
}

namespace {

std::string JoinTokens(const std::vector<int>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) s += (i ? " " : "") + synth::TokenName(tokens[i]);
  return s;
}

}  // namespace

VariantResult EvalVariant(const model::Model& m, const synth::Corpus& corpus, const std::vector<int>& heldout,
                          int reference_sentence, const VariantSpec& variant, const EvalConfig& cfg) {
  const int n_styles = corpus.manifest.style_count();
  if (cfg.source_style >= n_styles) throw Error(ErrorCode::kInvalidStyle, "source_style out of range");
  VariantResult res;
  res.variant = variant.name;
  long edits = 0;
  long ref_tokens = 0;
  for (int s : heldout) {
    for (int target = 0; target < n_styles; ++target) {
      if (target == cfg.source_style) continue;
      const auto& truth = corpus.at(s, target);
      const auto& ref = corpus.at(reference_sentence, target).mel;
      model::SynthesisResult out;
      if (variant.inference == model::Task::kVC) {
        out = m.Synthesize(model::Task::kVC, nullptr, &corpus.at(s, cfg.source_style).mel, ref);
      } else {
        out = m.Synthesize(model::Task::kTTS, &truth.tokens, nullptr, ref);
      }
      const synth::DecodeResult dec = synth::OracleDecode(out.mel, corpus.manifest.articulator);
      const std::vector<int> want = synth::ContentTokens(truth.tokens);
      const std::vector<int> got = synth::ContentTokens(dec.tokens);
      UtteranceResult u;
      u.sentence_id = s;
      u.target_style = target;
      u.edits = EditDistance(want, got);
      u.ref_length = static_cast<int>(want.size());
      u.ter = TokenErrorRate(want, got);
      u.decoded_style = dec.style_id;
      u.frames = out.mel.frames();
      u.max_steps_exceeded = out.max_steps_exceeded;
      u.hypothesis = JoinTokens(got);
      edits += u.edits;
      ref_tokens += u.ref_length;
      res.rows.push_back(std::move(u));
    }
  }
  if (res.rows.empty()) throw Error(ErrorCode::kEmptyInput, "nothing to evaluate");
  double total = 0.0;
  for (const auto& u : res.rows) total += u.ter;
  res.mean_ter = total / static_cast<double>(res.rows.size());
  res.pooled_ter = static_cast<double>(edits) / static_cast<double>(ref_tokens);
  return res;
}

double Cosine(const Vector& a, const Vector& b) {
  const double denom = a.norm() * b.norm();
  if (denom == 0.0) return 0.0;
  return std::clamp(a.dot(b) / denom, -1.0, 1.0);
}

ConfusionMatrix StyleConfusionFromVectors(const std::vector<std::vector<Vector>>& per_style) {
  const auto S = static_cast<Eigen::Index>(per_style.size());
  ConfusionMatrix c;
  c.values = Matrix::Zero(S, S);
  for (const auto& v : per_style) c.counts.push_back(static_cast<int>(v.size()));
  for (Eigen::Index i = 0; i < S; ++i) {
    for (Eigen::Index j = i; j < S; ++j) {
      double sum = 0.0;
      long pairs = 0;
      const auto& A = per_style[static_cast<std::size_t>(i)];
      const auto& B = per_style[static_cast<std::size_t>(j)];
      for (std::size_t a = 0; a < A.size(); ++a) {
        for (std::size_t b = 0; b < B.size(); ++b) {
          if (i == j && a == b) continue;
          sum += Cosine(A[a], B[b]);
          ++pairs;
        }
      }
      if (pairs == 0) throw Error(ErrorCode::kInvalidArgument, "need at least two samples per style");
      c.values(i, j) = c.values(j, i) = sum / static_cast<double>(pairs);
    }
  }
  return c;
}

ConfusionMatrix StyleConfusion(const model::Model& m, const synth::Corpus& corpus, int n_per_style,
                               std::uint64_t seed) {
  if (n_per_style < 2) throw Error(ErrorCode::kInvalidArgument, "n_per_style must be >= 2");
  const int S = corpus.manifest.style_count();
  std::vector<int> sentences = corpus.sentence_ids();
  if (static_cast<int>(sentences.size()) < n_per_style)
    throw Error(ErrorCode::kCorpusTooSmall, "fewer sentences than n_per_style");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<Vector>> per_style(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    std::shuffle(sentences.begin(), sentences.end(), rng);
    for (int k = 0; k < n_per_style; ++k)
      per_style[static_cast<std::size_t>(s)].push_back(m.StyleVector(corpus.at(sentences[static_cast<std::size_t>(k)], s).mel));
  }
  return StyleConfusionFromVectors(per_style);
}

double DiagonalMargin(const ConfusionMatrix& c) {
  const auto S = c.values.rows();
  if (S < 2) return 0.0;
  const double diag = c.values.diagonal().sum();
  const double off = c.values.sum() - diag;
  return diag / static_cast<double>(S) - off / static_cast<double>(S * (S - 1));
}

int DumpConversionGrid(const model::Model& m, const synth::Corpus& corpus, int sentence_id, int source_style,
                       int reference_sentence, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto& source = corpus.at(sentence_id, source_style).mel;
  std::vector<Matrix> rows = {source.values};
  WriteFeatures(out_dir / "source.mel", source);
  std::ofstream frames(out_dir / "frames.tsv", std::ios::trunc);
  if (!frames) throw Error(ErrorCode::kIo, "cannot write " + (out_dir / "frames.tsv").string());
  frames << "row\tstyle\tframes\n" << "source\t" << source_style << '\t' << source.frames() << '\n';
  for (int k = 0; k < corpus.manifest.style_count(); ++k) {
    const model::SynthesisResult out =
        m.Synthesize(model::Task::kVC, nullptr, &source, corpus.at(reference_sentence, k).mel);
    const std::string name = "style_" + std::to_string(k);
    WriteFeatures(out_dir / (name + ".mel"), out.mel);
    WriteFeatures(out_dir / (name + ".lin"), out.linear);
    frames << name << '\t' << k << '\t' << out.mel.frames() << '\n';
    rows.push_back(out.mel.values);
  }
  image::WriteSpectrogramStackPgm(rows, out_dir / "grid.pgm");
  return static_cast<int>(rows.size());
}

std::string FormatResults(const std::vector<VariantResult>& results, const std::vector<std::string>& checkpoints,
                          const std::vector<std::uint64_t>& seeds) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "# summary\nvariant\tmean_ter\tpooled_ter\tutterances\tseed\tcheckpoint\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    os << results[i].variant << '\t' << results[i].mean_ter << '\t' << results[i].pooled_ter << '\t'
       << results[i].rows.size() << '\t' << (i < seeds.size() ? std::to_string(seeds[i]) : "-") << '\t'
       << (i < checkpoints.size() ? checkpoints[i] : "-") << '\n';
  }
  os << "\n# utterances\nvariant\tsentence_id\ttarget_style\tter\tedits\tref_len\tdecoded_style\tframes\t"
        "max_steps_exceeded\thypothesis\n";
  for (const auto& r : results) {
    for (const auto& u : r.rows) {
      os << r.variant << '\t' << u.sentence_id << '\t' << u.target_style << '\t' << u.ter << '\t' << u.edits
         << '\t' << u.ref_length << '\t' << u.decoded_style << '\t' << u.frames << '\t'
         << (u.max_steps_exceeded ? 1 : 0) << '\t' << u.hypothesis << '\n';
    }
  }
  return os.str();
}

}  // namespace mtlvc::eval
