#include <fstream>

#include "doctest.h"
#include "mtlvc/config.hpp"
#include "mtlvc/error.hpp"
#include "support.hpp"

using namespace mtlvc;

TEST_CASE("run config round trip") {
  RunConfig c;
  c.training.p_vc = 0.25;
  c.training.seed = 99;
  c.articulator.spec.n_sentences = 7;
  c.model = model::ModelConfig::Tiny(12, 80, 1025);
  const RunConfig back = RunConfigFromJson(RunConfigToJson(c));
  CHECK(back.training.p_vc == 0.25);
  CHECK(back.training.seed == 99);
  CHECK(back.articulator.spec.n_sentences == 7);
  CHECK(ModelConfigToJson(back.model) == ModelConfigToJson(c.model));
  CHECK(RunConfigToJson(back) == RunConfigToJson(c));
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_AS(RunConfigFromJson(json{{"trainning", json::object()}}), Error);
  CHECK_THROWS_AS(RunConfigFromJson(json{{"training", {{"lr", 0.1}}}}), Error);
  CHECK_THROWS_AS(RunConfigFromJson(json{{"model", {{"preset", "huge"}}}}), Error);
  CHECK_THROWS_AS(RunConfigFromJson(json{{"training", {{"steps", "many"}}}}), Error);
  CHECK_THROWS_AS(RunConfigFromJson(json{{"training", {{"p_vc", 2.0}}}}), Error);
}

TEST_CASE("tiny preset") {
  const auto m = ModelConfigFromJson(json{{"preset", "tiny"}, {"vocab_size", 32}});
  CHECK(m.vocab_size == 32);
  CHECK(m.decoder_dim == model::ModelConfig::Tiny(32, 80, 1025).decoder_dim);
}

TEST_CASE("config files") {
  CHECK(RunConfigToJson(LoadRunConfig("")) == RunConfigToJson(RunConfig{}));
  const auto dir = testing::TempDir("config");
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(LoadRunConfig(dir / "bad.json"), Error);
  CHECK_THROWS_AS(LoadRunConfig(dir / "missing.json"), Error);
}
