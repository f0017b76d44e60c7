#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mtlvc/dsp.hpp"
#include "mtlvc/evaluation.hpp"
#include "mtlvc/model.hpp"
#include "mtlvc/synthcorpus.hpp"
#include "mtlvc/training.hpp"

namespace mtlvc {

using json = nlohmann::json;

// All *FromJson functions start from the defaults, override the keys that
// are present and throw InvalidArgument on unknown keys or bad types.
json SpectroToJson(const dsp::SpectroConfig& c);
dsp::SpectroConfig SpectroFromJson(const json& j);

// Full snapshot (every template and style listed).
json ArticulatorToJson(const synth::Articulator& a);
synth::Articulator ArticulatorFromJson(const json& j);

json ModelConfigToJson(const model::ModelConfig& c);
// "preset": "full" (default) or "tiny" selects the starting point.
model::ModelConfig ModelConfigFromJson(const json& j);

json TrainConfigToJson(const train::TrainConfig& c);
train::TrainConfig TrainConfigFromJson(const json& j);

json EvalConfigToJson(const eval::EvalConfig& c);
eval::EvalConfig EvalConfigFromJson(const json& j);

// Corpus section of a run config.
struct CorpusSection {
  synth::CorpusSpec spec;
  int vocab_size = 30;
  double noise_std = 0.02;
  std::uint64_t seed = 1234;

  synth::Articulator Build(const dsp::SpectroConfig& spectro) const;
};

struct RunConfig {
  dsp::SpectroConfig dsp;
  CorpusSection articulator;
  model::ModelConfig model;
  train::TrainConfig training;
  eval::EvalConfig evaluation;
};

json RunConfigToJson(const RunConfig& c);
RunConfig RunConfigFromJson(const json& j);
// Missing path -> defaults.
RunConfig LoadRunConfig(const std::filesystem::path& path);

}  // namespace mtlvc
