#include <fstream>
#include <functional>
#include <random>

#include "corpus_fixture.hpp"
#include "doctest.h"
#include "mtlvc/error.hpp"
#include "mtlvc/evaluation.hpp"

using namespace mtlvc;
using namespace mtlvc::eval;

namespace {

// Plain recursive Levenshtein, exponential but fine for short inputs.
int NaiveDistance(const std::vector<int>& a, std::size_t i, const std::vector<int>& b, std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const int sub = NaiveDistance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  return std::min({sub, NaiveDistance(a, i + 1, b, j) + 1, NaiveDistance(a, i, b, j + 1) + 1});
}

}  // namespace

TEST_CASE("token error rate oracles") {
  CHECK(TokenErrorRate({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(TokenErrorRate({1, 2, 3}, {1, 5, 3}) == doctest::Approx(1.0 / 3.0));
  CHECK(TokenErrorRate({1, 2, 3}, {}) == 1.0);
  CHECK(TokenErrorRate({1, 2}, {1, 2, 3, 4}) == 1.0);
  CHECK(EditDistance({1, 2, 3, 4}, {2, 3, 4, 5}) == 2);
  try {
    TokenErrorRate(std::vector<int>{}, {1});
    FAIL("expected EmptyReference");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyReference);
  }
  // EOS is not a scored token.
  CHECK(TokenErrorRate(text::MakeSequence({3, 4}), text::MakeSequence({3, 4})) == 0.0);
}

TEST_CASE("edit distance matches brute force on short strings") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(0, 6), sym(0, 3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (int& x : a) x = sym(rng);
    for (int& x : b) x = sym(rng);
    REQUIRE(EditDistance(a, b) == NaiveDistance(a, 0, b, 0));
    REQUIRE(EditDistance(a, b) == EditDistance(b, a));
  }
}

TEST_CASE("cosine and confusion") {
  Vector a(2), b(2);
  a << 1, 0;
  b << 1, 1;
  CHECK(Cosine(a, b) == doctest::Approx(0.70710678));
  CHECK(Cosine(a, Vector::Zero(2)) == 0.0);

  std::mt19937_64 rng(12);
  std::vector<std::vector<Vector>> per_style(3);
  for (int s = 0; s < 3; ++s) {
    for (int k = 0; k < 5; ++k) {
      Vector v = Vector::Zero(3);
      v(s) = 1.0;
      v += 0.1 * testing::RandomMatrix(3, 1, rng, -1, 1);
      per_style[static_cast<std::size_t>(s)].push_back(v);
    }
  }
  const auto c = StyleConfusionFromVectors(per_style);
  CHECK(c.values.isApprox(c.values.transpose()));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(c.values(i, i) > c.values(i, j));
  CHECK(DiagonalMargin(c) > 0.5);

  // Identical vectors everywhere: no margin.
  std::vector<std::vector<Vector>> same(2, std::vector<Vector>(3, a));
  CHECK(DiagonalMargin(StyleConfusionFromVectors(same)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(StyleConfusionFromVectors({{a}, {a, b}}), Error);
}

TEST_CASE("variant table") {
  REQUIRE(Variants().size() == 4);
  CHECK(VariantByName("VC").p_vc == 1.0);
  CHECK(VariantByName("VCTTS-V").inference == model::Task::kVC);
  CHECK(VariantByName("VCTTS-T").inference == model::Task::kTTS);
  CHECK(VariantByName("TTS").p_vc == 0.0);
  CHECK_THROWS_AS(VariantByName("ASR"), Error);
}

TEST_CASE("evaluation with an untrained model") {
  const auto c = testing::SmallCorpus("eval", 4, 3);
  auto mcfg = testing::FastConfig(c);
  model::Model m(mcfg, 3);
  EvalConfig cfg;
  const std::vector<int> heldout = {2, 3};

  SUBCASE("TER is high and every (sentence, target style) pair is scored") {
    const auto r = EvalVariant(m, c, heldout, 0, VariantByName("VCTTS-V"), cfg);
    CHECK(r.rows.size() == 4);
    for (const auto& u : r.rows) CHECK(u.target_style != cfg.source_style);
    CHECK(r.mean_ter > 0.8);
    const auto t = EvalVariant(m, c, heldout, 0, VariantByName("TTS"), cfg);
    CHECK(t.mean_ter > 0.8);
    const std::string table = FormatResults({r, t}, {"a", "b"}, {1, 2});
    CHECK(table.find("# summary") != std::string::npos);
    CHECK(table.find("VCTTS-V\t") != std::string::npos);
  }
  SUBCASE("grid has source plus one row per style") {
    const auto dir = testing::TempDir("grid");
    CHECK(DumpConversionGrid(m, c, 2, 0, 0, dir) == 4);
    CHECK(std::filesystem::exists(dir / "grid.pgm"));
    CHECK(std::filesystem::exists(dir / "style_2.mel"));
  }
  SUBCASE("style confusion shape") {
    const auto conf = StyleConfusion(m, c, 3, 1);
    CHECK(conf.values.rows() == 3);
    CHECK(conf.values.isApprox(conf.values.transpose()));
    CHECK_THROWS_AS(StyleConfusion(m, c, 9, 1), Error);
  }
  SUBCASE("source style out of range") {
    EvalConfig bad;
    bad.source_style = 7;
    CHECK_THROWS_AS(EvalVariant(m, c, heldout, 0, VariantByName("VC"), bad), Error);
  }
}

TEST_CASE("ground-truth features score zero through the oracle") {
  const auto c = testing::SmallCorpus("eval_gt", 3, 2, 0.0);
  for (int s = 0; s < 3; ++s) {
    for (int e = 0; e < 2; ++e) {
      const auto dec = synth::OracleDecode(c.at(s, e).mel, c.manifest.articulator);
      CHECK(TokenErrorRate(c.at(s, e).tokens, dec.tokens) == 0.0);
    }
  }
}
