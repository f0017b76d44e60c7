#include <fstream>
#include <random>

#include "corpus_fixture.hpp"
#include "doctest.h"
#include "mtlvc/error.hpp"
#include "mtlvc/training.hpp"

using namespace mtlvc;
using namespace mtlvc::train;
using model::Task;

namespace {

const synth::Corpus& Corpus4() {
  static const synth::Corpus c = testing::SmallCorpus("train4");
  return c;
}

TrainingExample Example(int frames, int mels, int lins, int tokens) {
  TrainingExample e;
  e.task = Task::kTTS;
  e.mel_target = Matrix::Constant(frames, mels, 0.5);
  e.linear_target = Matrix::Constant(frames, lins, 0.25);
  e.style_ref = Matrix::Constant(frames + 1, mels, 0.1);
  std::vector<int> ids(static_cast<std::size_t>(tokens), 2);
  e.tokens = text::MakeSequence(ids);
  return e;
}

}  // namespace

TEST_CASE("sample_task") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(SampleTask(1.0, rng) == Task::kVC);
  for (int i = 0; i < 1000; ++i) CHECK(SampleTask(0.0, rng) == Task::kTTS);
  int vc = 0;
  for (int i = 0; i < 10000; ++i) vc += SampleTask(0.5, rng) == Task::kVC ? 1 : 0;
  CHECK(std::abs(vc / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("sample_example invariants over 10000 draws") {
  const auto& c = Corpus4();
  const auto ids = c.sentence_ids();
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const Task task = i % 2 ? Task::kVC : Task::kTTS;
    const TrainingExample e = SampleExample(c, ids, task, rng);
    REQUIRE(e.reference_sentence != e.sentence_id);
    const auto& target = c.at(e.sentence_id, e.target_style);
    REQUIRE(e.mel_target == target.mel.values);
    REQUIRE(e.style_ref == c.at(e.reference_sentence, e.target_style).mel.values);
    if (task == Task::kVC) {
      REQUIRE(e.source_style != e.target_style);
      REQUIRE(e.contents == c.at(e.sentence_id, e.source_style).mel.values);
      REQUIRE(e.tokens.ids.empty());
    } else {
      REQUIRE(e.tokens == target.tokens);
      REQUIRE(e.contents.size() == 0);
    }
  }
}

TEST_CASE("two-style corpus: the VC source is the other style") {
  const auto c = testing::SmallCorpus("train2s", 3, 2);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto e = SampleExample(c, c.sentence_ids(), Task::kVC, rng);
    CHECK(e.source_style == 1 - e.target_style);
  }
}

TEST_CASE("sample_example rejects a one-style corpus") {
  const auto c = testing::SmallCorpus("train1s", 3, 1);
  std::mt19937_64 rng(3);
  try {
    SampleExample(c, c.sentence_ids(), Task::kTTS, rng);
    FAIL("expected CorpusTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorpusTooSmall);
  }
}

TEST_CASE("pad_batch") {
  SUBCASE("lengths 7 and 12 with r=5 pad to 15") {
    const auto b = PadBatch({Example(7, 3, 4, 2), Example(12, 3, 4, 5)}, 5);
    CHECK(b.frames == 15);
    CHECK(b.mel_target.rows() == 30);
    CHECK(b.target_lengths == std::vector<int>{7, 12});
    // Item 0 is zero beyond frame 7, item 1 beyond frame 12.
    CHECK(b.mel_target(6 * 2 + 0, 0) == 0.5);
    CHECK(b.mel_target(7 * 2 + 0, 0) == 0.0);
    CHECK(b.mel_target(11 * 2 + 1, 0) == 0.5);
    CHECK(b.mel_target(12 * 2 + 1, 0) == 0.0);
    // Tokens padded with PAD, time-major.
    CHECK(b.input.token_ids.size() == 6 * 2);
    CHECK(b.input.token_ids[2 * 2 + 0] == text::kEosId);
    CHECK(b.input.token_ids[3 * 2 + 0] == text::kPadId);
    CHECK(b.input.token_lengths == std::vector<int>{3, 6});
    REQUIRE(b.input.target_mel.has_value());
  }
  SUBCASE("single example pads only to the r multiple") {
    const auto b = PadBatch({Example(7, 3, 4, 2)}, 5);
    CHECK(b.frames == 10);
    CHECK(b.input.style_ref.rows() == 8);
  }
  SUBCASE("equal lengths already a multiple of r are unchanged") {
    const auto e = Example(10, 3, 4, 2);
    const auto b = PadBatch({e, e}, 5);
    CHECK(b.frames == 10);
    for (int t = 0; t < 10; ++t) CHECK(b.mel_target.row(2 * t) == e.mel_target.row(t));
  }
  SUBCASE("mixed tasks rejected") {
    auto a = Example(5, 3, 4, 2);
    auto v = a;
    v.task = Task::kVC;
    CHECK_THROWS_AS(PadBatch({a, v}, 5), Error);
  }
}

TEST_CASE("loss") {
  std::mt19937_64 rng(4);
  const Matrix m = testing::RandomMatrix(6, 3, rng);
  const Matrix l = testing::RandomMatrix(6, 5, rng);
  CHECK(LossValue(m, l, m, l) == 0.0);
  CHECK(LossValue((m.array() + 0.5).matrix(), l, m, l) == doctest::Approx(0.5));
  CHECK(LossValue(m, l, (m.array() - 0.1).matrix(), l) > 0.0);
  CHECK_THROWS_AS(LossValue(m, l, Matrix::Zero(5, 3), l), Error);

  SUBCASE("autodiff loss matches and is nonnegative") {
    ad::Tape tape;
    const auto v = Loss(tape.constant(m), tape.constant(l), (m.array() * 0.5).matrix(), l);
    CHECK(v.value()(0, 0) == doctest::Approx(LossValue(m, l, (m.array() * 0.5).matrix(), l)));
    CHECK(v.value()(0, 0) >= 0.0);
  }
  SUBCASE("padded region counts") {
    auto b = PadBatch({Example(7, 3, 4, 2), Example(12, 3, 4, 5)}, 5);
    const Matrix pred_mel = b.mel_target;
    const Matrix pred_lin = b.linear_target;
    CHECK(LossValue(pred_mel, pred_lin, b.mel_target, b.linear_target) == 0.0);
    b.mel_target(13 * 2 + 0, 1) = 0.3;  // inside item 0's padding
    CHECK(LossValue(pred_mel, pred_lin, b.mel_target, b.linear_target) > 0.0);
  }
}

TEST_CASE("gradient clipping bound") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ad::ParameterStore ps;
    for (int i = 0; i < 4; ++i) {
      auto& p = ps.create("p" + std::to_string(i), 3, 4);
      p.grad = testing::RandomMatrix(3, 4, rng, -5, 5);
    }
    const double before = ps.grad_norm();
    const double reported = ps.clip_grad_norm(1.0);
    CHECK(reported == doctest::Approx(before));
    if (before > 1.0) CHECK(ps.grad_norm() <= 1.0 + 1e-6);
    else CHECK(ps.grad_norm() == doctest::Approx(before));
  }
}

TEST_CASE("Adam leaves unused parameters untouched") {
  ad::ParameterStore ps;
  auto& a = ps.create("a", 2, 2);
  auto& b = ps.create("b", 2, 2);
  a.value.setConstant(1.0);
  b.value.setConstant(1.0);
  Adam adam(ps, 1e-3, 0.9, 0.999, 1e-8);
  ps.zero_grad();
  a.grad.setConstant(0.3);
  a.used = true;
  b.grad.setConstant(0.3);  // gradient without participation is ignored
  adam.step(ps);
  CHECK(a.value(0, 0) == doctest::Approx(1.0 - 1e-3));
  CHECK(b.value == Matrix::Constant(2, 2, 1.0));
  CHECK(adam.slots()[1].steps == 0);
}

TEST_CASE("train steps are deterministic and checkpoints resume exactly") {
  const auto& c = Corpus4();
  const auto mcfg = testing::FastConfig(c);
  TrainConfig tcfg;
  tcfg.batch_size = 2;
  tcfg.steps = 12;
  tcfg.checkpoint_interval = 6;
  tcfg.seed = 5;

  const auto dir_a = testing::TempDir("det_a");
  const auto dir_b = testing::TempDir("det_b");
  Trainer ta(c, mcfg, tcfg);
  const auto ra = RunTraining(ta, {dir_a, std::nullopt, {}});
  Trainer tb(c, mcfg, tcfg);
  const auto rb = RunTraining(tb, {dir_b, std::nullopt, {}});
  REQUIRE(ra.size() == 12);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].loss == rb[i].loss);
    CHECK(ra[i].task == rb[i].task);
  }
  CHECK(std::filesystem::exists(CheckpointPath(dir_a, 6)));
  CHECK(std::filesystem::exists(CheckpointPath(dir_a, 12)));
  CHECK(*LatestCheckpoint(dir_a) == CheckpointPath(dir_a, 12));

  Trainer tc(c, mcfg, tcfg);
  const auto rc = RunTraining(tc, {dir_a, CheckpointPath(dir_a, 6), {}});
  REQUIRE(rc.size() == 6);
  for (std::size_t i = 0; i < rc.size(); ++i) CHECK(rc[i].loss == ra[i + 6].loss);
  for (std::size_t i = 0; i < tc.model().params().size(); ++i)
    CHECK(tc.model().params()[i].value == ta.model().params()[i].value);

  // Log keeps one trajectory of 12 rows after the resume.
  std::ifstream log(dir_a / "metrics.tsv");
  std::string line;
  int rows = -1;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("checkpoint loading rejects mismatched parameter sets") {
  const auto& c = Corpus4();
  const auto mcfg = testing::FastConfig(c);
  TrainConfig tcfg;
  tcfg.batch_size = 1;
  tcfg.steps = 1;
  Trainer t(c, mcfg, tcfg);
  auto ck = t.MakeCheckpoint();
  const auto dir = testing::TempDir("ckpt");
  ckpt::WriteCheckpoint(ck, dir / "ok.bin");
  const auto back = ckpt::ReadCheckpoint(dir / "ok.bin");
  CHECK(back.arrays.size() == ck.arrays.size());
  CHECK(back.rng_state == ck.rng_state);
  CHECK_NOTHROW(ckpt::LoadModel(dir / "ok.bin"));

  model::Model fresh(mcfg, 0);
  auto missing = ck;
  missing.arrays.pop_back();
  CHECK_THROWS_AS(ckpt::RestoreParameters(missing, fresh.params()), Error);
  auto extra = ck;
  extra.arrays.push_back({"bogus.weight", Matrix::Zero(1, 1), {}});
  CHECK_THROWS_AS(ckpt::RestoreParameters(extra, fresh.params()), Error);
  auto shaped = ck;
  shaped.arrays.front().value = Matrix::Zero(1, 1);
  CHECK_THROWS_AS(ckpt::RestoreParameters(shaped, fresh.params()), Error);

  std::ofstream(dir / "junk.bin") << "nope";
  CHECK_THROWS_AS(ckpt::ReadCheckpoint(dir / "junk.bin"), Error);
}

TEST_CASE("task-gradient isolation over a few steps") {
  const auto& c = Corpus4();
  const auto mcfg = testing::FastConfig(c);
  for (double p_vc : {0.0, 1.0}) {
    TrainConfig tcfg;
    tcfg.batch_size = 2;
    tcfg.p_vc = p_vc;
    tcfg.steps = 5;
    Trainer t(c, mcfg, tcfg);
    const ad::ParameterStore before = t.model().params();
    for (int i = 0; i < 5; ++i) t.Step();
    const char* frozen = p_vc == 0.0 ? model::Model::kContentsPrefix : model::Model::kTextPrefix;
    bool decoder_changed = false;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& now = t.model().params()[i];
      if (now.name.rfind(frozen, 0) == 0) CHECK(now.value == before[i].value);
      if (now.name.rfind(model::Model::kDecoderPrefix, 0) == 0 && now.value != before[i].value)
        decoder_changed = true;
    }
    CHECK(decoder_changed);
  }
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.p_vc = 1.5;
  CHECK_THROWS_AS(t.validate(), Error);
  t = TrainConfig{};
  t.steps = 0;
  CHECK_THROWS_AS(t.validate(), Error);
}
