#include <random>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "mtlvc/error.hpp"
#include "mtlvc/model.hpp"
#include "support.hpp"

using namespace mtlvc;
using namespace mtlvc::model;
using testing::MicroConfig;
using testing::RandomMatrix;

namespace {

std::set<std::string> UsedParameters(Model& m, const ModelInput& in) {
  m.params().zero_grad();
  ad::Tape tape;
  nn::RunContext ctx{tape, false, nullptr};
  m.Forward(ctx, in);
  std::set<std::string> used;
  for (std::size_t i = 0; i < m.params().size(); ++i)
    if (m.params()[i].used) used.insert(m.params()[i].name);
  return used;
}

bool HasPrefix(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_CASE("whole-model gradient check on the micro config") {
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 3);
  testing::JitterParameters(m, 9);
  const auto errors = testing::GradCheck(m, testing::MakeGradCheckProblem(cfg, 5));
  CHECK(errors.size() == m.params().size());
  for (const auto& [name, err] : errors) {
    INFO(name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("attention weights are normalized under random inputs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    ModelConfig cfg = MicroConfig();
    cfg.encoder_dim = 6;
    Model m(cfg, static_cast<std::uint64_t>(trial));
    testing::JitterParameters(m, static_cast<std::uint64_t>(100 + trial), 2.0);
    const int B = std::uniform_int_distribution<int>(1, 4)(rng);
    const int L = std::uniform_int_distribution<int>(1, 9)(rng);
    ad::Tape tape(false);
    nn::RunContext ctx{tape, false, nullptr};
    EncodedLinguistic h;
    h.values = tape.constant(RandomMatrix(L * B, cfg.encoder_dim, rng, -5, 5));
    h.length = L;
    for (int b = 0; b < B; ++b) h.lengths.push_back(std::uniform_int_distribution<int>(1, L)(rng));
    const auto keys = m.AttentionKeys(ctx, h);
    DecoderState st = m.InitialState(ctx, B);
    st.context = tape.constant(RandomMatrix(B, cfg.encoder_dim, rng, -3, 3));
    st.attention_hidden = tape.constant(RandomMatrix(B, cfg.attention_dim, rng, -1, 1));
    const auto hs = tape.constant(RandomMatrix(B, cfg.style_dim, rng, -3, 3));
    const auto prev = tape.constant(RandomMatrix(B, cfg.n_mels, rng));
    const AttentionOutput out = m.AttentionStep(ctx, prev, hs, h, keys, st);
    const Matrix& w = out.weights.value();
    REQUIRE(w.rows() == B);
    REQUIRE(w.cols() == L);
    for (int b = 0; b < B; ++b) {
      CHECK(std::abs(w.row(b).sum() - 1.0) <= 1e-6);
      CHECK(w.row(b).minCoeff() >= 0.0);
      for (int i = h.lengths[static_cast<std::size_t>(b)]; i < L; ++i) CHECK(w(b, i) == 0.0);
    }
  }
}

TEST_CASE("contents encoder preserves length") {
  std::mt19937_64 rng(4);
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const int B = std::uniform_int_distribution<int>(1, 3)(rng);
    const int T = std::uniform_int_distribution<int>(1, 30)(rng);
    ad::Tape tape(false);
    nn::RunContext ctx{tape, false, nullptr};
    const auto h = m.ContentsEncoder(ctx, tape.constant(RandomMatrix(T * B, cfg.n_mels, rng)), B, {});
    CHECK(h.values.rows() == T * B);
    CHECK(h.values.cols() == cfg.encoder_dim);
    CHECK(h.length == T);
    CHECK(h.source == Source::kContents);
  }
  ad::Tape tape(false);
  nn::RunContext ctx{tape, false, nullptr};
  CHECK_THROWS_AS(m.ContentsEncoder(ctx, tape.constant(Matrix(0, cfg.n_mels)), 1, {}), Error);
}

TEST_CASE("zero input with zero biases gives zero contents encoding") {
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 2);
  ad::Tape tape(false);
  nn::RunContext ctx{tape, false, nullptr};
  const auto h = m.ContentsEncoder(ctx, tape.constant(Matrix::Zero(10, cfg.n_mels)), 2, {});
  CHECK(h.values.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("text encoder output shape and id validation") {
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 2);
  ad::Tape tape(false);
  nn::RunContext ctx{tape, false, nullptr};
  const auto h = m.TextEncoder(ctx, {2, 3, 4, 1}, 1, {});
  CHECK(h.values.rows() == 4);
  CHECK(h.values.cols() == cfg.encoder_dim);
  CHECK_THROWS_AS(m.TextEncoder(ctx, {2, 6}, 1, {}), Error);
}

TEST_CASE("xor_route") {
  EncodedLinguistic c;
  c.source = Source::kContents;
  c.length = 7;
  EncodedLinguistic t;
  t.source = Source::kText;
  t.length = 3;
  CHECK(XorRoute(c, std::nullopt).length == 7);
  CHECK(XorRoute(std::nullopt, t).length == 3);
  try {
    XorRoute(c, t);
    FAIL("expected BothPresent");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBothPresent);
  }
  try {
    XorRoute(std::nullopt, std::nullopt);
    FAIL("expected NeitherPresent");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNeitherPresent);
  }
}

TEST_CASE("style encoder ignores padding and trailing zeros of all-zero input") {
  std::mt19937_64 rng(9);
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 5);
  testing::JitterParameters(m, 6, 0.2);
  const Matrix ref = RandomMatrix(5, cfg.n_mels, rng);
  ad::Tape tape(false);
  nn::RunContext ctx{tape, false, nullptr};
  const Matrix alone = m.StyleEncoder(ctx, tape.constant(ref), 1, {}).value();
  // Same reference as item 1 of a padded batch of two.
  Matrix batch = Matrix::Zero(8 * 2, cfg.n_mels);
  for (int t = 0; t < 8; ++t) batch.row(2 * t) = RandomMatrix(1, cfg.n_mels, rng);
  for (int t = 0; t < 5; ++t) batch.row(2 * t + 1) = ref.row(t);
  const Matrix both = m.StyleEncoder(ctx, tape.constant(batch), 2, {8, 5}).value();
  CHECK((both.row(1) - alone.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("decoder and post-processor parameters are shared by both paths") {
  std::mt19937_64 rng(3);
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 1);
  const auto p = testing::MakeGradCheckProblem(cfg, 2);
  const auto vc = UsedParameters(m, p.vc);
  const auto tts = UsedParameters(m, p.tts);
  std::set<std::string> vc_shared, tts_shared;
  for (const auto& n : vc) {
    CHECK_FALSE(HasPrefix(n, Model::kTextPrefix));
    if (!HasPrefix(n, Model::kContentsPrefix)) vc_shared.insert(n);
  }
  for (const auto& n : tts) {
    CHECK_FALSE(HasPrefix(n, Model::kContentsPrefix));
    if (!HasPrefix(n, Model::kTextPrefix)) tts_shared.insert(n);
  }
  CHECK(vc_shared == tts_shared);
  int decoder_params = 0;
  for (const auto& n : vc_shared) decoder_params += HasPrefix(n, Model::kDecoderPrefix) ? 1 : 0;
  CHECK(decoder_params > 0);
  // Every parameter belongs to one of the two paths.
  CHECK(vc.size() + tts.size() - vc_shared.size() == m.params().size());
}

TEST_CASE("teacher-forced forward emits r frames per step") {
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 1);
  const auto p = testing::MakeGradCheckProblem(cfg, 2);
  ad::Tape tape(false);
  nn::RunContext ctx{tape, false, nullptr};
  const ForwardOutput fo = m.Forward(ctx, p.tts);
  CHECK(fo.steps == 2);
  CHECK(fo.frames == 2 * cfg.reduction_factor);
  CHECK(fo.mel.rows() == fo.frames * 2);
  CHECK(fo.linear.cols() == cfg.n_linear);
  CHECK(fo.alignments.size() == 2);
}

TEST_CASE("free-running synthesis stops at max steps or on silence") {
  const ModelConfig cfg = MicroConfig();
  Model m(cfg, 1);
  std::mt19937_64 rng(1);
  dsp::FeatureMatrix ref{RandomMatrix(6, cfg.n_mels, rng), dsp::FeatureKind::kMel};
  text::TokenSequence toks{{2, 3, 1}};
  const SynthesisResult r = m.Synthesize(Task::kTTS, &toks, nullptr, ref);
  CHECK(r.mel.frames() == r.steps * cfg.reduction_factor);
  CHECK(r.steps <= cfg.max_decoder_steps);
  CHECK(r.mel.values.minCoeff() >= 0.0);
  CHECK(r.mel.values.maxCoeff() <= 1.0);
  CHECK(r.alignment.rows() == r.steps);
  CHECK(r.alignment.cols() == 3);
  // Fresh output heads are zero, so synthesis stops as early as it can.
  CHECK(r.steps == cfg.stop_groups);
  CHECK(r.mel.values.isZero());
  // Zero-initialised decoder biases and no input signal give silent frames.
  CHECK_THROWS_AS(m.Synthesize(Task::kVC, &toks, nullptr, ref), Error);
}

TEST_CASE("config validation") {
  ModelConfig c = MicroConfig();
  c.encoder_dim = 5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = MicroConfig();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(ModelConfig{}.validate());
}
