#include "mtlvc/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mtlvc/config.hpp"
#include "mtlvc/error.hpp"
#include "mtlvc/feature_io.hpp"

namespace mtlvc::synth {

namespace {

constexpr int kDurationSlack = 2;
constexpr double kDurationPenalty = 0.25;  // per frame of deviation
constexpr double kTokenPenalty = 0.05;     // per emitted token

std::uint64_t SplitMix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Fractional mel-filter index of a frequency (filter k is centred at k).
double MelPosition(const dsp::SpectroConfig& c, double hz) {
  const double lo = dsp::HzToMel(c.fmin);
  const double hi = dsp::HzToMel(c.effective_fmax());
  const double step = (hi - lo) / (c.n_mels + 1);
  return (dsp::HzToMel(hz) - lo) / step - 1.0;
}

double BandValue(const StyleTransform& st, double center, double sigma, double position, int n_mels) {
  const double d = position - center;
  const double bump = std::exp(-d * d / (2.0 * sigma * sigma));
  const double tilt = 1.0 + st.tilt * (position / (n_mels - 1) - 0.5);
  return std::max(0.0, st.gain * bump * tilt);
}

}  // namespace

int Articulator::duration(int token, int style) const {
  return static_cast<int>(
      std::lround(tokens.at(static_cast<std::size_t>(token)).base_duration *
                  styles.at(static_cast<std::size_t>(style)).duration_scale));
}

double Articulator::center(int token, int style) const {
  return tokens.at(static_cast<std::size_t>(token)).center_bin +
         styles.at(static_cast<std::size_t>(style)).bin_shift;
}

RowVector Articulator::mel_frame(int token, int style) const {
  const auto& st = styles.at(static_cast<std::size_t>(style));
  const double c = center(token, style);
  const double sigma = tokens.at(static_cast<std::size_t>(token)).bandwidth;
  RowVector frame(n_mels());
  for (int b = 0; b < n_mels(); ++b)
    frame(b) = std::min(1.0, BandValue(st, c, sigma, b, n_mels()));
  return frame;
}

RowVector Articulator::linear_frame(int token, int style) const {
  const auto& st = styles.at(static_cast<std::size_t>(style));
  const double c = center(token, style);
  const double sigma = tokens.at(static_cast<std::size_t>(token)).bandwidth;
  RowVector frame(n_linear());
  for (int j = 0; j < n_linear(); ++j) {
    const double hz = static_cast<double>(j) * spectro.sample_rate / spectro.nfft;
    frame(j) = std::min(1.0, BandValue(st, c, sigma, MelPosition(spectro, hz), n_mels()));
  }
  return frame;
}

void Articulator::validate() const {
  spectro.validate();
  if (tokens.empty()) throw Error(ErrorCode::kInvalidArgument, "articulator has no tokens");
  if (styles.empty()) throw Error(ErrorCode::kInvalidArgument, "articulator has no styles");
  if (noise_std < 0.0) throw Error(ErrorCode::kInvalidArgument, "noise_std must be >= 0");
  for (int s = 0; s < style_count(); ++s) {
    if (styles[s].duration_scale <= 0.0)
      throw Error(ErrorCode::kInvalidArgument, "duration_scale must be positive");
    std::set<int> centers;
    for (int k = 0; k < vocab_size(); ++k) {
      const auto c = static_cast<int>(center(k, s));
      if (c < 0 || c >= n_mels())
        throw Error(ErrorCode::kInvalidArgument,
                    "token " + std::to_string(k) + " leaves the mel range in style " + std::to_string(s));
      if (duration(k, s) < 2)
        throw Error(ErrorCode::kInvalidArgument, "token duration below 2 frames");
      if (tokens[k].bandwidth <= 0.0)
        throw Error(ErrorCode::kInvalidArgument, "bandwidth must be positive");
      if (!centers.insert(c).second)
        throw Error(ErrorCode::kInvalidArgument,
                    "tokens share a center bin in style " + std::to_string(s));
    }
  }
}

Articulator Articulator::Default(int vocab_size, int n_styles, const dsp::SpectroConfig& spectro) {
  static const StyleTransform kBase[] = {
      {0, 1.0, 0.0, 1.0}, {6, 1.25, 0.3, 0.85}, {-6, 0.8, -0.3, 0.9}, {12, 1.1, 0.15, 0.75}};
  static const StyleTransform kExtra[] = {
      {-12, 1.4, -0.15, 0.8}, {3, 0.9, 0.45, 0.95}, {-3, 1.2, -0.45, 0.7}};
  if (vocab_size <= 0) throw Error(ErrorCode::kInvalidArgument, "vocab_size must be positive");
  if (n_styles <= 0 || n_styles > 7)
    throw Error(ErrorCode::kInvalidArgument, "default articulator supports 1..7 styles");

  Articulator a;
  a.spectro = spectro;
  for (int s = 0; s < n_styles; ++s) a.styles.push_back(s < 4 ? kBase[s] : kExtra[s - 4]);
  int min_shift = 0;
  int max_shift = 0;
  for (const auto& st : a.styles) {
    min_shift = std::min(min_shift, st.bin_shift);
    max_shift = std::max(max_shift, st.bin_shift);
  }
  constexpr int kMargin = 2;
  const int lo = kMargin - min_shift;
  const int hi = spectro.n_mels - 1 - kMargin - max_shift;
  if (hi - lo + 1 < vocab_size)
    throw Error(ErrorCode::kInvalidArgument, "not enough mel bins for " + std::to_string(vocab_size) +
                                                 " distinct tokens");
  for (int k = 0; k < vocab_size; ++k) {
    TokenTemplate t;
    t.center_bin = vocab_size == 1
                       ? lo
                       : lo + static_cast<int>(std::lround(static_cast<double>(k) * (hi - lo) /
                                                           (vocab_size - 1)));
    a.tokens.push_back(t);
  }
  return a;
}

std::vector<int> ContentTokens(const text::TokenSequence& seq) {
  std::vector<int> out;
  for (int id : seq.ids)
    if (id >= kFirstContentId) out.push_back(id - kFirstContentId);
  return out;
}

std::uint64_t UtteranceSeed(std::uint64_t seed, std::uint64_t sentence_id, std::uint64_t style_id) {
  return SplitMix(SplitMix(SplitMix(seed) ^ sentence_id) ^ (style_id + 0x51ED2701ULL));
}

RenderedUtterance RenderUtterance(const text::TokenSequence& tokens, int style_id,
                                  const Articulator& a, std::uint64_t noise_seed) {
  if (style_id < 0 || style_id >= a.style_count())
    throw Error(ErrorCode::kInvalidStyle, "style " + std::to_string(style_id) + " not in [0, " +
                                              std::to_string(a.style_count()) + ")");
  const auto content = ContentTokens(tokens);
  int frames = 0;
  for (int k : content) {
    if (k >= a.vocab_size())
      throw Error(ErrorCode::kOutOfRange, "token " + std::to_string(k) + " outside articulator vocabulary");
    frames += a.duration(k, style_id);
  }

  RenderedUtterance out;
  out.mel.kind = dsp::FeatureKind::kMel;
  out.linear.kind = dsp::FeatureKind::kLinear;
  out.mel.values = Matrix::Zero(frames, a.n_mels());
  out.linear.values = Matrix::Zero(frames, a.n_linear());
  int t = 0;
  for (int k : content) {
    const RowVector mel = a.mel_frame(k, style_id);
    const RowVector lin = a.linear_frame(k, style_id);
    for (int d = 0; d < a.duration(k, style_id); ++d, ++t) {
      out.mel.values.row(t) = mel;
      out.linear.values.row(t) = lin;
    }
  }
  if (a.noise_std > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, a.noise_std);
    for (Eigen::Index i = 0; i < out.mel.values.size(); ++i) out.mel.values.data()[i] += noise(rng);
    for (Eigen::Index i = 0; i < out.linear.values.size(); ++i)
      out.linear.values.data()[i] += noise(rng);
  }
  out.mel.values = out.mel.values.cwiseMax(0.0).cwiseMin(1.0);
  out.linear.values = out.linear.values.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

RenderedUtterance RenderUtterance(const text::TokenSequence& tokens, int style_id,
                                  const Articulator& a) {
  std::uint64_t h = a.seed;
  for (int id : tokens.ids) h = SplitMix(h ^ static_cast<std::uint64_t>(id));
  return RenderUtterance(tokens, style_id, a, SplitMix(h ^ static_cast<std::uint64_t>(style_id)));
}

DecodeResult OracleDecode(const dsp::FeatureMatrix& mel, const Articulator& a) {
  if (mel.kind != dsp::FeatureKind::kMel)
    throw Error(ErrorCode::kInvalidArgument, "oracle decoding needs a mel spectrogram");
  if (mel.bins() != a.n_mels())
    throw Error(ErrorCode::kShapeMismatch, "mel width does not match the articulator");
  const int frames = mel.frames();
  const int vocab = a.vocab_size();

  DecodeResult best;
  best.tokens = text::MakeSequence({});
  best.cost = std::numeric_limits<double>::infinity();
  if (frames == 0) {
    best.cost = 0.0;
    return best;
  }

  // prefix[k][t] = sum of squared distances of frames [0, t) to template k;
  // row `vocab` is the silence template.
  const Vector frame_energy = mel.values.rowwise().squaredNorm();
  for (int s = 0; s < a.style_count(); ++s) {
    Matrix templates(vocab, a.n_mels());
    for (int k = 0; k < vocab; ++k) templates.row(k) = a.mel_frame(k, s);
    const Vector template_energy = templates.rowwise().squaredNorm();
    const Matrix cross = mel.values * templates.transpose();  // frames x vocab
    Matrix prefix = Matrix::Zero(vocab + 1, frames + 1);
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < vocab; ++k)
        prefix(k, t + 1) = prefix(k, t) + frame_energy(t) - 2.0 * cross(t, k) + template_energy(k);
      prefix(vocab, t + 1) = prefix(vocab, t) + frame_energy(t);
    }

    std::vector<double> cost(static_cast<std::size_t>(frames + 1),
                             std::numeric_limits<double>::infinity());
    std::vector<int> back_token(static_cast<std::size_t>(frames + 1), -1);
    std::vector<int> back_len(static_cast<std::size_t>(frames + 1), 0);
    cost[0] = 0.0;
    for (int t = 1; t <= frames; ++t) {
      const double silence = cost[t - 1] + prefix(vocab, t) - prefix(vocab, t - 1);
      cost[t] = silence;
      back_token[t] = -1;
      back_len[t] = 1;
      for (int k = 0; k < vocab; ++k) {
        const int d = a.duration(k, s);
        const int lo = std::max(1, d - kDurationSlack);
        const int hi = std::min(t, d + kDurationSlack);
        for (int n = lo; n <= hi; ++n) {
          const double c = cost[t - n] + prefix(k, t) - prefix(k, t - n) +
                           kDurationPenalty * std::abs(n - d) + kTokenPenalty;
          if (c < cost[t]) {
            cost[t] = c;
            back_token[t] = k;
            back_len[t] = n;
          }
        }
      }
    }
    if (cost[frames] < best.cost) {
      std::vector<int> content;
      for (int t = frames; t > 0; t -= back_len[t])
        if (back_token[t] >= 0) content.push_back(back_token[t] + kFirstContentId);
      std::reverse(content.begin(), content.end());
      best.tokens = text::MakeSequence(std::move(content));
      best.style_id = s;
      best.cost = cost[frames];
    }
  }
  return best;
}

int CorpusManifest::sentence_count() const {
  std::set<int> ids;
  for (const auto& r : rows) ids.insert(r.sentence_id);
  return static_cast<int>(ids.size());
}

int CorpusManifest::style_count() const {
  std::set<int> ids;
  for (const auto& r : rows) ids.insert(r.style_id);
  return static_cast<int>(ids.size());
}

std::size_t CorpusManifest::find(int sentence_id, int style_id) const {
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].sentence_id == sentence_id && rows[i].style_id == style_id) return i;
  throw Error(ErrorCode::kOutOfRange, "no utterance for sentence " + std::to_string(sentence_id) +
                                          " style " + std::to_string(style_id));
}

void WriteManifest(const CorpusManifest& m, const std::filesystem::path& manifest_path) {
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write manifest " + manifest_path.string());
  os << kManifestHeader << '\n';
  for (const auto& r : m.rows) {
    os << r.utt_id << '\t' << r.sentence_id << '\t' << r.style_id << '\t' << r.tokens << '\t'
       << r.mel_path << '\t' << r.linear_path << '\n';
  }
  const auto snapshot = manifest_path.parent_path() / "articulator.json";
  std::ofstream js(snapshot, std::ios::trunc);
  if (!js) throw Error(ErrorCode::kIo, "cannot write " + snapshot.string());
  js << ArticulatorToJson(m.articulator).dump(2) << '\n';
  if (!os || !js) throw Error(ErrorCode::kIo, "write failed under " + manifest_path.parent_path().string());
}

CorpusManifest ReadManifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw Error(ErrorCode::kIo, "cannot read manifest " + manifest_path.string());
  CorpusManifest m;
  m.directory = manifest_path.parent_path();
  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader)
    throw Error(ErrorCode::kFormat, "bad manifest header in " + manifest_path.string());
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, '\t');) cols.push_back(col);
    if (cols.size() != 6)
      throw Error(ErrorCode::kFormat, manifest_path.string() + ":" + std::to_string(line_no) +
                                          ": expected 6 columns");
    ManifestRow r;
    r.utt_id = cols[0];
    try {
      r.sentence_id = std::stoi(cols[1]);
      r.style_id = std::stoi(cols[2]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kFormat,
                  manifest_path.string() + ":" + std::to_string(line_no) + ": bad integer column");
    }
    r.tokens = cols[3];
    r.mel_path = cols[4];
    r.linear_path = cols[5];
    m.rows.push_back(std::move(r));
  }
  const auto snapshot = m.directory / "articulator.json";
  if (std::filesystem::exists(snapshot)) {
    std::ifstream js(snapshot);
    m.articulator = ArticulatorFromJson(nlohmann::json::parse(js));
  }
  return m;
}

void ValidateParallel(const CorpusManifest& m) {
  std::map<int, std::string> text_of;
  std::map<int, std::set<int>> styles_of;
  std::set<int> all_styles;
  for (const auto& r : m.rows) {
    if (!styles_of[r.sentence_id].insert(r.style_id).second)
      throw Error(ErrorCode::kFormat, "duplicate (sentence, style) = (" + std::to_string(r.sentence_id) +
                                          ", " + std::to_string(r.style_id) + ")");
    auto [it, inserted] = text_of.emplace(r.sentence_id, r.tokens);
    if (!inserted && it->second != r.tokens)
      throw Error(ErrorCode::kFormat,
                  "sentence " + std::to_string(r.sentence_id) + " has different text across styles");
    all_styles.insert(r.style_id);
  }
  for (const auto& [sentence, styles] : styles_of) {
    if (styles != all_styles)
      throw Error(ErrorCode::kFormat,
                  "sentence " + std::to_string(sentence) + " is missing from some styles");
  }
}

std::string TokenName(int token) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%02d", token);
  return buf;
}

text::SymbolVocabulary SyntheticVocabulary(int vocab_size) {
  text::SymbolVocabulary v;
  for (int k = 0; k < vocab_size; ++k) v.add(TokenName(k));
  return v;
}

CorpusManifest GenerateCorpus(const CorpusSpec& spec, const Articulator& a,
                              const std::filesystem::path& out_dir) {
  a.validate();
  if (spec.n_sentences <= 0 || spec.min_len <= 0 || spec.max_len < spec.min_len)
    throw Error(ErrorCode::kInvalidArgument, "bad corpus size parameters");
  if (spec.n_styles <= 0 || spec.n_styles > a.style_count())
    throw Error(ErrorCode::kInvalidArgument, "n_styles exceeds the articulator's styles");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "feats", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + (out_dir / "feats").string() + ": " + ec.message());

  const auto vocab = SyntheticVocabulary(a.vocab_size());
  std::mt19937_64 rng(a.seed);
  std::uniform_int_distribution<int> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> token(0, a.vocab_size() - 1);
  std::vector<std::vector<int>> sentences(static_cast<std::size_t>(spec.n_sentences));
  for (auto& s : sentences) {
    s.resize(static_cast<std::size_t>(length(rng)));
    for (auto& k : s) k = token(rng);
  }

  CorpusManifest m;
  m.articulator = a;
  m.directory = out_dir;
  for (int i = 0; i < spec.n_sentences; ++i) {
    std::vector<int> ids;
    std::string joined;
    for (int k : sentences[i]) {
      ids.push_back(k + kFirstContentId);
      if (!joined.empty()) joined += ' ';
      joined += TokenName(k);
    }
    const auto seq = text::MakeSequence(ids);
    for (int s = 0; s < spec.n_styles; ++s) {
      char utt[32];
      std::snprintf(utt, sizeof utt, "s%04d_e%d", i, s);
      const auto rendered = RenderUtterance(seq, s, a, UtteranceSeed(a.seed, i, s));
      ManifestRow row{utt, i, s, joined, std::string("feats/") + utt + ".mel",
                      std::string("feats/") + utt + ".lin"};
      WriteFeatures(out_dir / row.mel_path, rendered.mel);
      WriteFeatures(out_dir / row.linear_path, rendered.linear);
      m.rows.push_back(std::move(row));
    }
  }
  WriteManifest(m, out_dir / "manifest.tsv");
  vocab.Save(out_dir / "vocab.txt");
  return m;
}

std::vector<int> Corpus::sentence_ids() const {
  std::vector<int> out;
  std::set<int> seen;
  for (const auto& r : manifest.rows)
    if (seen.insert(r.sentence_id).second) out.push_back(r.sentence_id);
  return out;
}

Corpus LoadCorpus(const std::filesystem::path& manifest_path) {
  Corpus c;
  c.manifest = ReadManifest(manifest_path);
  ValidateParallel(c.manifest);
  const auto vocab_path = c.manifest.directory / "vocab.txt";
  c.vocabulary = std::filesystem::exists(vocab_path)
                     ? text::SymbolVocabulary::Load(vocab_path)
                     : SyntheticVocabulary(c.manifest.articulator.vocab_size());
  for (const auto& r : c.manifest.rows) {
    LoadedUtterance u;
    u.sentence_id = r.sentence_id;
    u.style_id = r.style_id;
    u.tokens = text::EncodeSymbols(text::SplitSymbols(r.tokens), c.vocabulary);
    u.mel = ReadFeatures(c.manifest.directory / r.mel_path);
    u.linear = ReadFeatures(c.manifest.directory / r.linear_path);
    if (u.mel.frames() != u.linear.frames())
      throw Error(ErrorCode::kFormat, "mel/linear frame counts differ for " + r.utt_id);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

Corpus SubsetCorpus(const Corpus& c, const std::vector<int>& sentence_ids) {
  const std::set<int> keep(sentence_ids.begin(), sentence_ids.end());
  Corpus out;
  out.manifest.articulator = c.manifest.articulator;
  out.manifest.directory = c.manifest.directory;
  out.vocabulary = c.vocabulary;
  for (std::size_t i = 0; i < c.manifest.rows.size(); ++i) {
    if (!keep.count(c.manifest.rows[i].sentence_id)) continue;
    out.manifest.rows.push_back(c.manifest.rows[i]);
    out.utterances.push_back(c.utterances[i]);
  }
  return out;
}

}  // namespace mtlvc::synth
