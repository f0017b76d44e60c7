#include "mtlvc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "mtlvc/config.hpp"
#include "mtlvc/error.hpp"

namespace mtlvc::train {

void TrainConfig::validate() const {
  if (batch_size <= 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw Error(ErrorCode::kInvalidArgument, "clip_norm must be positive");
  if (!(p_vc >= 0.0 && p_vc <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "p_vc must be in [0, 1]");
  if (steps <= 0) throw Error(ErrorCode::kInvalidArgument, "steps must be positive");
  if (checkpoint_interval < 0) throw Error(ErrorCode::kInvalidArgument, "checkpoint_interval must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "bad Adam hyperparameters");
}

Task SampleTask(double p_vc, std::mt19937_64& rng) {
  // Draw even at the extremes so the RNG stream does not depend on p_vc.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < p_vc ? Task::kVC : Task::kTTS;
}

namespace {

int Pick(int n, std::mt19937_64& rng) {
  return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng));
}

}  // namespace

TrainingExample SampleExample(const synth::Corpus& corpus, const std::vector<int>& sentence_ids, Task task,
                              std::mt19937_64& rng) {
  const int n_styles = corpus.manifest.style_count();
  if (n_styles < 2) throw Error(ErrorCode::kCorpusTooSmall, "training needs at least two styles");
  if (sentence_ids.empty()) throw Error(ErrorCode::kCorpusTooSmall, "no training sentences");
  const int n = static_cast<int>(sentence_ids.size());

  TrainingExample ex;
  ex.task = task;
  ex.sentence_id = sentence_ids[static_cast<std::size_t>(Pick(n, rng))];
  ex.target_style = Pick(n_styles, rng);
  if (task == Task::kVC) {
    // Uniform over the other styles.
    const int k = Pick(n_styles - 1, rng);
    ex.source_style = k >= ex.target_style ? k + 1 : k;
  }
  // x_s comes from a different sentence when one exists.
  if (n >= 2) {
    const int k = Pick(n - 1, rng);
    const auto self = std::find(sentence_ids.begin(), sentence_ids.end(), ex.sentence_id) - sentence_ids.begin();
    ex.reference_sentence = sentence_ids[static_cast<std::size_t>(k >= self ? k + 1 : k)];
  } else {
    ex.reference_sentence = ex.sentence_id;
  }

  const auto& target = corpus.at(ex.sentence_id, ex.target_style);
  ex.mel_target = target.mel.values;
  ex.linear_target = target.linear.values;
  ex.style_ref = corpus.at(ex.reference_sentence, ex.target_style).mel.values;
  if (task == Task::kVC) {
    ex.contents = corpus.at(ex.sentence_id, ex.source_style).mel.values;
  } else {
    ex.tokens = target.tokens;
  }
  return ex;
}

namespace {

// Interleaves per-item T_i x F matrices into a zero-padded (T * B) x F matrix.
Matrix TimeMajor(const std::vector<const Matrix*>& items, Eigen::Index frames, Eigen::Index cols) {
  const auto batch = static_cast<Eigen::Index>(items.size());
  Matrix out = Matrix::Zero(frames * batch, cols);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Matrix& m = *items[static_cast<std::size_t>(b)];
    for (Eigen::Index t = 0; t < m.rows(); ++t) out.row(t * batch + b) = m.row(t);
  }
  return out;
}

Eigen::Index MaxRows(const std::vector<const Matrix*>& items) {
  Eigen::Index n = 0;
  for (const Matrix* m : items) n = std::max(n, m->rows());
  return n;
}

}  // namespace

PaddedBatch PadBatch(const std::vector<TrainingExample>& examples, int reduction_factor) {
  if (examples.empty()) throw Error(ErrorCode::kEmptyInput, "empty batch");
  const Task task = examples.front().task;
  const int batch = static_cast<int>(examples.size());
  std::vector<const Matrix*> mels, linears, refs, contents;
  PaddedBatch out;
  out.input.task = task;
  out.input.batch = batch;
  for (const auto& ex : examples) {
    if (ex.task != task) throw Error(ErrorCode::kInvalidArgument, "mixed-task batch");
    mels.push_back(&ex.mel_target);
    linears.push_back(&ex.linear_target);
    refs.push_back(&ex.style_ref);
    out.target_lengths.push_back(static_cast<int>(ex.mel_target.rows()));
    out.input.style_lengths.push_back(static_cast<int>(ex.style_ref.rows()));
    if (task == Task::kVC) {
      contents.push_back(&ex.contents);
      out.input.contents_lengths.push_back(static_cast<int>(ex.contents.rows()));
    } else {
      out.input.token_lengths.push_back(static_cast<int>(ex.tokens.ids.size()));
    }
  }
  const Eigen::Index longest = MaxRows(mels);
  const Eigen::Index frames = (longest + reduction_factor - 1) / reduction_factor * reduction_factor;
  out.frames = static_cast<int>(frames);
  out.mel_target = TimeMajor(mels, frames, examples.front().mel_target.cols());
  out.linear_target = TimeMajor(linears, frames, examples.front().linear_target.cols());
  out.input.style_ref = TimeMajor(refs, MaxRows(refs), examples.front().style_ref.cols());
  if (task == Task::kVC) {
    out.input.contents = TimeMajor(contents, MaxRows(contents), examples.front().contents.cols());
  } else {
    const int len = *std::max_element(out.input.token_lengths.begin(), out.input.token_lengths.end());
    out.input.token_ids.assign(static_cast<std::size_t>(len) * batch, text::kPadId);
    for (int b = 0; b < batch; ++b) {
      const auto& ids = examples[static_cast<std::size_t>(b)].tokens.ids;
      for (std::size_t t = 0; t < ids.size(); ++t) out.input.token_ids[t * batch + b] = ids[t];
    }
  }
  out.input.target_mel = out.mel_target;
  return out;
}

ad::Var Loss(const ad::Var& mel, const ad::Var& linear, const Matrix& mel_gt, const Matrix& linear_gt) {
  return ad::add(ad::mean_abs_error(mel, mel_gt), ad::mean_abs_error(linear, linear_gt));
}

double LossValue(const Matrix& mel, const Matrix& linear, const Matrix& mel_gt, const Matrix& linear_gt) {
  if (mel.rows() != mel_gt.rows() || mel.cols() != mel_gt.cols() || linear.rows() != linear_gt.rows() ||
      linear.cols() != linear_gt.cols())
    throw Error(ErrorCode::kShapeMismatch, "loss operands differ in shape");
  return (mel - mel_gt).cwiseAbs().mean() + (linear - linear_gt).cwiseAbs().mean();
}

Adam::Adam(const ad::ParameterStore& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& v = params[i].value;
    slots_.push_back({Matrix::Zero(v.rows(), v.cols()), Matrix::Zero(v.rows(), v.cols()), 0});
  }
}

void Adam::step(ad::ParameterStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = params[i];
    if (!p.used) continue;
    auto& s = slots_[i];
    s.steps += 1;
    s.m = beta1_ * s.m + (1.0 - beta1_) * p.grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.steps));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.steps));
    p.value.array() -= lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  }
}

Trainer::Trainer(const synth::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                 std::vector<int> sentence_ids)
    : corpus_(corpus),
      sentence_ids_(sentence_ids.empty() ? corpus.sentence_ids() : std::move(sentence_ids)),
      tcfg_(tcfg),
      model_(mcfg, tcfg.seed),
      rng_(tcfg.seed ^ 0x9E3779B97F4A7C15ULL) {
  tcfg_.validate();
  adam_ = Adam(model_.params(), tcfg_.learning_rate, tcfg_.adam_beta1, tcfg_.adam_beta2, tcfg_.adam_eps);
}

StepRecord Trainer::Step() {
  const auto t0 = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = step_ + 1;
  rec.task = SampleTask(tcfg_.p_vc, rng_);
  std::vector<TrainingExample> examples;
  examples.reserve(static_cast<std::size_t>(tcfg_.batch_size));
  for (int b = 0; b < tcfg_.batch_size; ++b) examples.push_back(SampleExample(corpus_, sentence_ids_, rec.task, rng_));
  const PaddedBatch batch = PadBatch(examples, model_.config().reduction_factor);

  auto& params = model_.params();
  params.zero_grad();
  ad::Tape tape;
  nn::RunContext ctx{tape, true, &rng_};
  const model::ForwardOutput fo = model_.Forward(ctx, batch.input);
  const ad::Var loss = Loss(fo.mel, fo.linear, batch.mel_target, batch.linear_target);
  rec.loss = loss.value()(0, 0);
  if (!std::isfinite(rec.loss))
    throw Error(ErrorCode::kNonFiniteLoss, "non-finite loss at step " + std::to_string(rec.step));
  tape.backward(loss);
  rec.grad_norm = params.clip_grad_norm(tcfg_.clip_norm);
  adam_.step(params);
  step_ = rec.step;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

ckpt::Checkpoint Trainer::MakeCheckpoint() const {
  ckpt::Checkpoint c;
  c.model = model_.config();
  c.train_config_json = TrainConfigToJson(tcfg_).dump();
  c.step = step_;
  std::ostringstream rs;
  rs << rng_;
  c.rng_state = rs.str();
  const auto& params = model_.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.arrays.push_back({params[i].name, params[i].value, adam_.slots()[i]});
  return c;
}

void Trainer::Restore(const ckpt::Checkpoint& c) {
  auto& params = model_.params();
  ckpt::RestoreParameters(c, params);
  for (const auto& a : c.arrays) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name != a.name) continue;
      auto& slot = adam_.slots()[i];
      if (a.adam.m.size() == a.value.size()) {
        slot = a.adam;
      } else {
        slot.m.setZero();
        slot.v.setZero();
        slot.steps = a.adam.steps;
      }
    }
  }
  std::istringstream rs(c.rng_state);
  rs >> rng_;
  if (!rs) throw Error(ErrorCode::kFormat, "bad RNG state in checkpoint");
  step_ = static_cast<int>(c.step);
}

std::string MetricsHeader() { return "step\ttask\tloss\tgrad_norm\twall_ms"; }

std::string MetricsLine(const StepRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << '\t' << model::TaskName(r.task) << '\t' << r.loss << '\t' << r.grad_norm << '\t';
  os.precision(6);
  os << r.wall_ms;
  return os.str();
}

std::filesystem::path CheckpointPath(const std::filesystem::path& run_dir, int step) {
  return run_dir / ("ckpt_" + std::to_string(step) + ".bin");
}

std::optional<std::filesystem::path> LatestCheckpoint(const std::filesystem::path& run_dir) {
  static const std::regex kName(R"(ckpt_(\d+)\.bin)");
  std::optional<std::filesystem::path> best;
  long best_step = -1;
  if (!std::filesystem::is_directory(run_dir)) return best;
  for (const auto& e : std::filesystem::directory_iterator(run_dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, kName) && std::stol(m[1]) > best_step) {
      best_step = std::stol(m[1]);
      best = e.path();
    }
  }
  return best;
}

std::vector<StepRecord> RunTraining(Trainer& trainer, const RunOptions& opts) {
  std::filesystem::create_directories(opts.run_dir);
  const auto metrics_path = opts.run_dir / "metrics.tsv";
  std::vector<std::string> kept;
  if (opts.resume_from) {
    trainer.Restore(ckpt::ReadCheckpoint(*opts.resume_from));
    // Drop log lines past the checkpoint so the log stays a single trajectory.
    std::ifstream old(metrics_path);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      const auto tab = line.find('\t');
      if (tab != std::string::npos && std::stol(line.substr(0, tab)) <= trainer.step()) kept.push_back(line);
    }
  }
  std::ofstream log(metrics_path, std::ios::trunc);
  if (!log) throw Error(ErrorCode::kIo, "cannot write " + metrics_path.string());
  log << MetricsHeader() << '\n';
  for (const auto& line : kept) log << line << '\n';
  log.flush();

  std::vector<StepRecord> records;
  const auto& cfg = trainer.config();
  while (trainer.step() < cfg.steps) {
    StepRecord rec = trainer.Step();
    log << MetricsLine(rec) << '\n';
    log.flush();
    if (opts.on_step) opts.on_step(rec);
    records.push_back(rec);
    const bool periodic = cfg.checkpoint_interval > 0 && rec.step % cfg.checkpoint_interval == 0;
    if (periodic || rec.step == cfg.steps)
      ckpt::WriteCheckpoint(trainer.MakeCheckpoint(), CheckpointPath(opts.run_dir, rec.step));
  }
  if (!log) throw Error(ErrorCode::kIo, "write failed for " + metrics_path.string());
  return records;
}

std::pair<std::vector<int>, std::vector<int>> SplitSentences(const synth::Corpus& corpus, int heldout) {
  std::vector<int> ids = corpus.sentence_ids();
  std::sort(ids.begin(), ids.end());
  if (heldout < 0 || heldout >= static_cast<int>(ids.size()))
    throw Error(ErrorCode::kCorpusTooSmall, "cannot hold out " + std::to_string(heldout) + " of " +
                                                std::to_string(ids.size()) + " sentences");
  std::vector<int> train(ids.begin(), ids.end() - heldout);
  std::vector<int> held(ids.end() - heldout, ids.end());
  return {train, held};
}

}  // namespace mtlvc::train
