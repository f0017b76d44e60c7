#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mtlvc/checkpoint.hpp"
#include "mtlvc/model.hpp"
#include "mtlvc/synthcorpus.hpp"

namespace mtlvc::train {

using model::Task;

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  double p_vc = 0.5;
  int steps = 1000;
  int checkpoint_interval = 500;  // 0 disables periodic checkpoints
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Throws InvalidArgument.
  void validate() const;
};

Task SampleTask(double p_vc, std::mt19937_64& rng);

struct TrainingExample {
  Task task = Task::kTTS;
  int sentence_id = 0;
  int target_style = 0;
  int source_style = -1;          // VC only
  int reference_sentence = 0;     // sentence of x_s
  text::TokenSequence tokens;     // TTS linguistic input
  Matrix contents;                // VC linguistic input x_c
  Matrix style_ref;               // x_s
  Matrix mel_target;
  Matrix linear_target;
};

// Throws CorpusTooSmall when fewer than two styles or two sentences exist.
TrainingExample SampleExample(const synth::Corpus& corpus, const std::vector<int>& sentence_ids, Task task,
                              std::mt19937_64& rng);

struct PaddedBatch {
  model::ModelInput input;      // target_mel set for teacher forcing
  Matrix mel_target;            // (T * B) x n_mels, T a multiple of r
  Matrix linear_target;         // (T * B) x n_linear
  std::vector<int> target_lengths;
  int frames = 0;               // padded T
};

// Zero/PAD padding to the longest item; the target is further padded to a
// multiple of r. Lengths are kept for bookkeeping only.
PaddedBatch PadBatch(const std::vector<TrainingExample>& examples, int reduction_factor);

// Mean |m - m_gt| + mean |l - l_gt| over the padded extent.
ad::Var Loss(const ad::Var& mel, const ad::Var& linear, const Matrix& mel_gt, const Matrix& linear_gt);
double LossValue(const Matrix& mel, const Matrix& linear, const Matrix& mel_gt, const Matrix& linear_gt);

// Adam with per-parameter step counts; parameters that took no part in the
// forward pass (Parameter::used false) are left untouched.
class Adam {
 public:
  Adam() = default;
  Adam(const ad::ParameterStore& params, double lr, double beta1, double beta2, double eps);
  void step(ad::ParameterStore& params);

  std::vector<ckpt::AdamSlot>& slots() { return slots_; }
  const std::vector<ckpt::AdamSlot>& slots() const { return slots_; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::vector<ckpt::AdamSlot> slots_;
};

struct StepRecord {
  int step = 0;  // 1-based
  Task task = Task::kTTS;
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double wall_ms = 0.0;
};

class Trainer {
 public:
  // `sentence_ids` restricts sampling (held-out sentences excluded); empty
  // means every sentence.
  Trainer(const synth::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
          std::vector<int> sentence_ids = {});

  StepRecord Step();
  int step() const { return step_; }
  model::Model& model() { return model_; }
  const model::Model& model() const { return model_; }
  const TrainConfig& config() const { return tcfg_; }

  ckpt::Checkpoint MakeCheckpoint() const;
  void Restore(const ckpt::Checkpoint& c);

 private:
  const synth::Corpus& corpus_;
  std::vector<int> sentence_ids_;
  TrainConfig tcfg_;
  model::Model model_;
  Adam adam_;
  std::mt19937_64 rng_;
  int step_ = 0;
};

std::string MetricsHeader();
std::string MetricsLine(const StepRecord& r);

struct RunOptions {
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const StepRecord&)> on_step;
};

// Runs until tcfg.steps, appending to run_dir/metrics.tsv and writing
// ckpt_{step}.bin every checkpoint_interval steps and at the end.
std::vector<StepRecord> RunTraining(Trainer& trainer, const RunOptions& opts);

std::filesystem::path CheckpointPath(const std::filesystem::path& run_dir, int step);
// Highest-step ckpt_{step}.bin in a directory, if any.
std::optional<std::filesystem::path> LatestCheckpoint(const std::filesystem::path& run_dir);

// Last `heldout` sentence ids are held out; returns (train, heldout).
std::pair<std::vector<int>, std::vector<int>> SplitSentences(const synth::Corpus& corpus, int heldout);

}  // namespace mtlvc::train
