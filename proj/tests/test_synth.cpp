#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "mtlvc/error.hpp"
#include "mtlvc/evaluation.hpp"
#include "mtlvc/feature_io.hpp"
#include "mtlvc/synthcorpus.hpp"
#include "support.hpp"

using namespace mtlvc;
using namespace mtlvc::synth;

namespace {

text::TokenSequence RandomTokens(int len, int vocab, std::mt19937_64& rng) {
  std::vector<int> ids;
  for (int i = 0; i < len; ++i) ids.push_back(kFirstContentId + std::uniform_int_distribution<int>(0, vocab - 1)(rng));
  return text::MakeSequence(ids);
}

std::string ReadAll(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("default articulator") {
  const Articulator a = Articulator::Default();
  CHECK(a.vocab_size() == 30);
  CHECK(a.style_count() == 4);
  CHECK(a.styles[1].bin_shift == 6);
  CHECK(a.styles[2].bin_shift == -6);
  CHECK(a.styles[3].bin_shift == 12);
  CHECK(a.styles[1].duration_scale == 1.25);
  CHECK_NOTHROW(a.validate());
  // Argmax bins distinct within every style.
  for (int s = 0; s < a.style_count(); ++s) {
    std::set<Eigen::Index> bins;
    for (int k = 0; k < a.vocab_size(); ++k) {
      Eigen::Index arg;
      a.mel_frame(k, s).maxCoeff(&arg);
      CHECK(arg >= 0);
      CHECK(arg < a.n_mels());
      bins.insert(arg);
    }
    CHECK(static_cast<int>(bins.size()) == a.vocab_size());
  }
}

TEST_CASE("render_utterance") {
  Articulator a = Articulator::Default();
  SUBCASE("3 tokens at duration scale 1.25 give 15 frames") {
    const auto r = RenderUtterance(text::MakeSequence({2, 3, 4}), 1, a);
    CHECK(r.mel.frames() == 15);
    CHECK(r.linear.frames() == 15);
    CHECK(r.linear.bins() == a.n_linear());
  }
  SUBCASE("identity style, no noise: argmax equals template center") {
    a.noise_std = 0.0;
    const auto seq = text::MakeSequence({2, 9, 31});
    const auto r = RenderUtterance(seq, 0, a);
    const auto tokens = ContentTokens(seq);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      Eigen::Index arg;
      r.mel.values.row(static_cast<Eigen::Index>(4 * i)).maxCoeff(&arg);
      CHECK(arg == a.tokens[static_cast<std::size_t>(tokens[i])].center_bin);
    }
  }
  SUBCASE("deterministic and in range") {
    const auto seq = text::MakeSequence({5, 6, 7, 8});
    const auto r1 = RenderUtterance(seq, 2, a);
    const auto r2 = RenderUtterance(seq, 2, a);
    CHECK(r1.mel.values == r2.mel.values);
    CHECK(r1.linear.values == r2.linear.values);
    CHECK(r1.mel.values.minCoeff() >= 0.0);
    CHECK(r1.mel.values.maxCoeff() <= 1.0);
  }
  SUBCASE("bad style") {
    try {
      RenderUtterance(text::MakeSequence({2}), 4, a);
      FAIL("expected InvalidStyle");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidStyle);
    }
  }
}

TEST_CASE("noiseless render -> decode is the identity over 200 random utterances") {
  Articulator a = Articulator::Default();
  a.noise_std = 0.0;
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int len = std::uniform_int_distribution<int>(1, 20)(rng);
    const int style = std::uniform_int_distribution<int>(0, a.style_count() - 1)(rng);
    const auto seq = RandomTokens(len, a.vocab_size(), rng);
    const auto dec = OracleDecode(RenderUtterance(seq, style, a).mel, a);
    REQUIRE(dec.tokens == seq);
    REQUIRE(dec.style_id == style);
  }
}

TEST_CASE("decoder tolerates noise 0.05") {
  Articulator a = Articulator::Default();
  a.noise_std = 0.05;
  std::mt19937_64 rng(22);
  long errors = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int len = std::uniform_int_distribution<int>(5, 10)(rng);
    const int style = std::uniform_int_distribution<int>(0, a.style_count() - 1)(rng);
    const auto seq = RandomTokens(len, a.vocab_size(), rng);
    const auto dec = OracleDecode(RenderUtterance(seq, style, a, static_cast<std::uint64_t>(trial)).mel, a);
    errors += eval::EditDistance(seq.content(), dec.tokens.content());
    total += len;
  }
  CHECK(1.0 - static_cast<double>(errors) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("all-zero mel decodes to nothing") {
  const Articulator a = Articulator::Default();
  dsp::FeatureMatrix z{Matrix::Zero(20, a.n_mels()), dsp::FeatureKind::kMel};
  CHECK(OracleDecode(z, a).tokens.content().empty());
}

TEST_CASE("generate_corpus") {
  const Articulator a = Articulator::Default();
  SUBCASE("2 sentences x 3 styles") {
    const auto dir = testing::TempDir("gen23");
    CorpusSpec spec;
    spec.n_sentences = 2;
    spec.n_styles = 3;
    const auto m = GenerateCorpus(spec, Articulator::Default(30, 3), dir);
    CHECK(m.rows.size() == 6);
    std::set<std::string> texts;
    for (const auto& r : m.rows) texts.insert(r.tokens);
    CHECK(texts.size() == 2);
    CHECK_NOTHROW(ValidateParallel(ReadManifest(dir / "manifest.tsv")));
    const Corpus c = LoadCorpus(dir / "manifest.tsv");
    for (const auto& u : c.utterances) {
      CHECK_NOTHROW(CheckFeatureInvariants(u.mel, a.n_mels(), a.n_linear()));
      CHECK_NOTHROW(CheckFeatureInvariants(u.linear, a.n_mels(), a.n_linear()));
    }
  }
  SUBCASE("same seed twice gives byte-identical manifests and features") {
    const auto d1 = testing::TempDir("gen_a");
    const auto d2 = testing::TempDir("gen_b");
    CorpusSpec spec;
    spec.n_sentences = 4;
    GenerateCorpus(spec, a, d1);
    GenerateCorpus(spec, a, d2);
    CHECK(ReadAll(d1 / "manifest.tsv") == ReadAll(d2 / "manifest.tsv"));
    CHECK(ReadAll(d1 / "feats" / "s0003_e2.mel") == ReadAll(d2 / "feats" / "s0003_e2.mel"));
  }
  SUBCASE("fixed sentence length") {
    const auto dir = testing::TempDir("gen55");
    CorpusSpec spec;
    spec.n_sentences = 5;
    spec.min_len = spec.max_len = 5;
    const Corpus c = LoadCorpus(GenerateCorpus(spec, a, dir).directory / "manifest.tsv");
    for (const auto& u : c.utterances) {
      CHECK(u.tokens.content_length() == 5);
      CHECK(u.tokens.ids.back() == text::kEosId);
    }
  }
  SUBCASE("manifest header and articulator snapshot") {
    const auto dir = testing::TempDir("genhdr");
    CorpusSpec spec;
    spec.n_sentences = 1;
    GenerateCorpus(spec, a, dir);
    std::ifstream is(dir / "manifest.tsv");
    std::string header;
    std::getline(is, header);
    CHECK(header == kManifestHeader);
    const auto m = ReadManifest(dir / "manifest.tsv");
    CHECK(m.articulator.tokens.size() == a.tokens.size());
    CHECK(m.articulator.styles[3].bin_shift == 12);
  }
}

TEST_CASE("parallel-corpus violations are detected") {
  CorpusManifest m;
  m.rows.push_back({"a", 0, 0, "t01 t02", "x", "y"});
  m.rows.push_back({"b", 0, 1, "t01 t03", "x", "y"});
  CHECK_THROWS_AS(ValidateParallel(m), Error);
  m.rows[1].tokens = "t01 t02";
  m.rows.push_back({"c", 1, 0, "t05", "x", "y"});
  CHECK_THROWS_AS(ValidateParallel(m), Error);  // sentence 1 missing style 1
}
