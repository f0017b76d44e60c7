// mtlvc: corpus generation, preprocessing, training, inference and evaluation.
#include <cstdlib>
#include <fcntl.h>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "CLI11.hpp"
#include "mtlvc/config.hpp"
#include "mtlvc/error.hpp"
#include "mtlvc/evaluation.hpp"
#include "mtlvc/feature_io.hpp"
#include "mtlvc/image.hpp"
#include "mtlvc/wav.hpp"

namespace fs = std::filesystem;
using namespace mtlvc;

namespace {

// Bad flag combinations detected after parsing; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> EnvSeed() {
  const char* s = std::getenv("MTLVC_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw UsageError(std::string("MTLVC_SEED is not an unsigned integer: ") + s);
  }
}

void EchoConfig(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream os(dir / "config.json", std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + (dir / "config.json").string());
  os << RunConfigToJson(cfg).dump(2) << '\n';
}

// Single-writer guard for a run directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw Error(ErrorCode::kIo, "run directory is locked by another process: " + path_.string());
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {}
  }
  ~DirLock() {
    ::close(fd_);
    fs::remove(path_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// Model widths that must agree with the data.
model::ModelConfig FitToCorpus(model::ModelConfig m, const synth::Corpus& c) {
  m.vocab_size = c.vocabulary.size();
  if (!c.utterances.empty()) {
    m.n_mels = c.utterances.front().mel.bins();
    m.n_linear = c.utterances.front().linear.bins();
  }
  m.validate();
  return m;
}

std::uint64_t SeedOf(const ckpt::Checkpoint& c) {
  try {
    return json::parse(c.train_config_json).value("seed", std::uint64_t{0});
  } catch (const json::exception&) {
    return 0;
  }
}

bool IsFeatureFile(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  char magic[4] = {};
  is.read(magic, 4);
  return is.gcount() == 4 && std::string(magic, 4) == "MTLF";
}

int CmdSynthCorpus(const std::string& config_path, const fs::path& out) {
  RunConfig cfg = LoadRunConfig(config_path);
  if (auto s = EnvSeed()) cfg.articulator.seed = *s;
  const synth::Articulator a = cfg.articulator.Build(cfg.dsp);
  try {
    fs::create_directories(out);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::kIo, "cannot create output directory " + out.string() + ": " + e.code().message());
  }
  EchoConfig(cfg, out);
  const auto m = synth::GenerateCorpus(cfg.articulator.spec, a, out);
  std::cout << "wrote " << m.rows.size() << " utterances (" << m.sentence_count() << " sentences x "
            << m.style_count() << " styles) to " << out.string() << "\n";
  return 0;
}

struct MetaRow {
  std::string text;
  int style = 0;
};

int CmdPreprocess(const std::string& config_path, const fs::path& wav_dir, const fs::path& manifest_path,
                  const std::string& metadata_path, bool strict) {
  const RunConfig cfg = LoadRunConfig(config_path);
  if (!fs::is_directory(wav_dir)) throw UsageError("--wav-dir is not a directory: " + wav_dir.string());
  std::map<std::string, MetaRow> meta;
  if (!metadata_path.empty()) {
    std::ifstream is(metadata_path);
    if (!is) throw Error(ErrorCode::kIo, "cannot read metadata " + metadata_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
      if (cols.size() != 3) throw Error(ErrorCode::kFormat, metadata_path + ": expected utt_id<TAB>text<TAB>style");
      meta[cols[0]] = {cols[1], std::stoi(cols[2])};
    }
  }
  std::vector<fs::path> wavs;
  for (const auto& e : fs::directory_iterator(wav_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
  std::sort(wavs.begin(), wavs.end());

  const fs::path out_dir = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
  fs::create_directories(out_dir / "feats");
  EchoConfig(cfg, out_dir);
  synth::CorpusManifest manifest;
  manifest.articulator = cfg.articulator.Build(cfg.dsp);
  std::vector<std::string> texts;
  std::map<std::string, int> sentence_of;
  int silent = 0;
  int failed = 0;
  for (const auto& path : wavs) {
    const std::string utt = path.stem().string();
    try {
      dsp::Waveform w = wav::Read(path);
      w = dsp::TrimSilence(w);
      if (w.sample_rate != cfg.dsp.sample_rate) w = dsp::Resample(w, cfg.dsp.sample_rate);
      const dsp::Features f = dsp::ExtractFeatures(w, cfg.dsp);
      synth::ManifestRow r;
      r.utt_id = utt;
      const auto it = meta.find(utt);
      const std::string text = it == meta.end() ? "" : it->second.text;
      r.style_id = it == meta.end() ? 0 : it->second.style;
      r.sentence_id = sentence_of.emplace(text, static_cast<int>(sentence_of.size())).first->second;
      const auto symbols = text::TextToSymbols(text);
      for (std::size_t i = 0; i < symbols.size(); ++i) r.tokens += (i ? " " : "") + symbols[i];
      r.mel_path = "feats/" + utt + ".mel";
      r.linear_path = "feats/" + utt + ".lin";
      WriteFeatures(out_dir / r.mel_path, f.mel);
      WriteFeatures(out_dir / r.linear_path, f.linear);
      texts.push_back(text);
      manifest.rows.push_back(std::move(r));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kAllSilent) {
        ++silent;
        std::cerr << "skipped silent file " << path.string() << "\n";
      } else {
        ++failed;
        std::cerr << "skipped " << path.string() << ": " << e.what() << "\n";
      }
    }
  }
  synth::WriteManifest(manifest, manifest_path);
  text::SymbolVocabulary::FromTexts(texts).Save(out_dir / "vocab.txt");
  if (wavs.empty()) std::cerr << "warning: no .wav files in " << wav_dir.string() << "\n";
  std::cout << "processed " << manifest.rows.size() << " files, " << silent << " all-silent skipped, " << failed
            << " failed\n";
  return strict && (failed > 0 || silent > 0) ? 1 : 0;
}

struct TrainFlags {
  std::string config;
  fs::path manifest;
  fs::path run_dir;
  std::optional<double> p_vc;
  std::optional<int> steps;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

int CmdTrain(const TrainFlags& fl) {
  RunConfig cfg = LoadRunConfig(fl.config);
  if (auto s = EnvSeed()) cfg.training.seed = *s;
  if (fl.seed) cfg.training.seed = *fl.seed;
  if (fl.p_vc) cfg.training.p_vc = *fl.p_vc;
  if (fl.steps) cfg.training.steps = *fl.steps;
  if (fl.batch_size) cfg.training.batch_size = *fl.batch_size;
  try {
    cfg.training.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (!fs::exists(fl.manifest)) throw Error(ErrorCode::kIo, "manifest not found: " + fl.manifest.string());
  const synth::Corpus corpus = synth::LoadCorpus(fl.manifest);
  cfg.model = FitToCorpus(cfg.model, corpus);
  const auto [train_ids, heldout] = train::SplitSentences(corpus, cfg.evaluation.heldout_sentences);

  DirLock lock(fl.run_dir);
  EchoConfig(cfg, fl.run_dir);
  train::Trainer trainer(corpus, cfg.model, cfg.training, train_ids);
  train::RunOptions opts;
  opts.run_dir = fl.run_dir;
  if (fl.resume) opts.resume_from = train::LatestCheckpoint(fl.run_dir);
  opts.on_step = [&](const train::StepRecord& r) {
    if (r.step % 100 == 0 || r.step == cfg.training.steps)
      std::cout << "step " << r.step << " " << model::TaskName(r.task) << " loss " << r.loss << "\n" << std::flush;
  };
  train::RunTraining(trainer, opts);
  return 0;
}

struct InferFlags {
  fs::path ckpt;
  std::string task;
  fs::path input;
  fs::path style_ref;
  fs::path out;
  fs::path vocab;
  std::string config;
  bool griffin_lim = false;
};

int CmdInfer(const InferFlags& fl) {
  const bool is_mel = IsFeatureFile(fl.input);
  if (fl.task == "vc" && !is_mel) throw UsageError("--task vc needs a mel feature file as --input, got a token file");
  if (fl.task == "tts" && is_mel) throw UsageError("--task tts needs a token file as --input, got a feature file");
  const auto m = ckpt::LoadModel(fl.ckpt);
  const dsp::FeatureMatrix ref = ReadFeatures(fl.style_ref);
  model::SynthesisResult out;
  if (fl.task == "vc") {
    const dsp::FeatureMatrix src = ReadFeatures(fl.input);
    out = m->Synthesize(model::Task::kVC, nullptr, &src, ref);
  } else {
    if (fl.vocab.empty()) throw UsageError("--task tts needs --vocab");
    std::ifstream is(fl.input);
    if (!is) throw Error(ErrorCode::kIo, "cannot read " + fl.input.string());
    std::stringstream ss;
    ss << is.rdbuf();
    const auto vocab = text::SymbolVocabulary::Load(fl.vocab);
    const text::TokenSequence tokens = text::EncodeSymbols(text::SplitSymbols(ss.str()), vocab);
    out = m->Synthesize(model::Task::kTTS, &tokens, nullptr, ref);
  }
  fs::create_directories(fl.out);
  WriteFeatures(fl.out / "output.mel", out.mel);
  WriteFeatures(fl.out / "output.lin", out.linear);
  image::WriteSpectrogramPgm(out.mel.values, fl.out / "output_mel.pgm");
  if (out.alignment.size() > 0) image::WriteSpectrogramPgm(out.alignment, fl.out / "alignment.pgm");
  if (out.max_steps_exceeded) std::cerr << "warning: decoder hit max_decoder_steps\n";
  if (fl.griffin_lim) {
    const RunConfig cfg = LoadRunConfig(fl.config);
    wav::Write(dsp::GriffinLim(out.linear, cfg.dsp).waveform, fl.out / "output.wav");
  }
  std::cout << "wrote " << out.mel.frames() << " frames to " << fl.out.string() << "\n";
  return 0;
}

struct EvalFlags {
  std::string config;
  fs::path manifest;
  std::vector<std::string> ckpts;
  std::vector<std::string> variants;
  fs::path out;
  std::optional<int> n_per_style;
  std::optional<int> sentence;
  std::optional<int> source_style;
};

struct EvalSetup {
  RunConfig cfg;
  synth::Corpus corpus;
  std::vector<int> train_ids;
  std::vector<int> heldout;
  int reference = 0;
};

EvalSetup LoadEval(const EvalFlags& fl) {
  EvalSetup s;
  s.cfg = LoadRunConfig(fl.config);
  if (auto seed = EnvSeed()) s.cfg.evaluation.seed = *seed;
  if (fl.n_per_style) s.cfg.evaluation.n_per_style = *fl.n_per_style;
  if (fl.source_style) s.cfg.evaluation.source_style = *fl.source_style;
  if (!fs::exists(fl.manifest)) throw Error(ErrorCode::kIo, "manifest not found: " + fl.manifest.string());
  s.corpus = synth::LoadCorpus(fl.manifest);
  std::tie(s.train_ids, s.heldout) = train::SplitSentences(s.corpus, s.cfg.evaluation.heldout_sentences);
  s.reference = eval::ReferenceSentence(s.cfg.evaluation, s.train_ids);
  return s;
}

int CmdEvalTer(const EvalFlags& fl) {
  if (fl.ckpts.size() != fl.variants.size())
    throw UsageError("--ckpt and --variant must be given the same number of times");
  for (const auto& v : fl.variants) {
    try {
      eval::VariantByName(v);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  const EvalSetup s = LoadEval(fl);
  EchoConfig(s.cfg, fl.out.parent_path().empty() ? fs::path(".") : fl.out.parent_path());
  std::vector<eval::VariantResult> results;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < fl.ckpts.size(); ++i) {
    const ckpt::Checkpoint c = ckpt::ReadCheckpoint(fl.ckpts[i]);
    model::Model m(c.model, 0);
    ckpt::RestoreParameters(c, m.params());
    results.push_back(eval::EvalVariant(m, s.corpus, s.heldout, s.reference, eval::VariantByName(fl.variants[i]),
                                        s.cfg.evaluation));
    seeds.push_back(SeedOf(c));
    std::cout << fl.variants[i] << "\tmean TER " << results.back().mean_ter << "\tpooled TER "
              << results.back().pooled_ter << "\n";
  }
  std::ofstream os(fl.out, std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + fl.out.string());
  os << eval::FormatResults(results, fl.ckpts, seeds);
  return 0;
}

int CmdEvalStyle(const EvalFlags& fl) {
  if (fl.ckpts.size() != 1) throw UsageError("eval-style takes exactly one --ckpt");
  const EvalSetup s = LoadEval(fl);
  EchoConfig(s.cfg, fl.out);
  const auto m = ckpt::LoadModel(fl.ckpts.front());
  const eval::ConfusionMatrix c =
      eval::StyleConfusion(*m, s.corpus, s.cfg.evaluation.n_per_style, s.cfg.evaluation.seed);
  std::ofstream os(fl.out / "confusion.tsv", std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + (fl.out / "confusion.tsv").string());
  os.precision(6);
  for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.values.cols(); ++j) os << (j ? "\t" : "") << c.values(i, j);
    os << "\n";
  }
  image::WriteHeatmapPpm(c.values, -1.0, 1.0, 32, fl.out / "confusion.ppm");
  std::cout << "diagonal margin " << eval::DiagonalMargin(c) << "\n";
  return 0;
}

int CmdPlotGrid(const EvalFlags& fl) {
  if (fl.ckpts.size() != 1) throw UsageError("plot-grid takes exactly one --ckpt");
  const EvalSetup s = LoadEval(fl);
  EchoConfig(s.cfg, fl.out);
  const auto m = ckpt::LoadModel(fl.ckpts.front());
  const int sentence = fl.sentence.value_or(s.heldout.front());
  const int rows = eval::DumpConversionGrid(*m, s.corpus, sentence, s.cfg.evaluation.source_style, s.reference, fl.out);
  std::cout << "wrote " << rows << " rows to " << fl.out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtlvc: multitask voice conversion / TTS experiments"};
  app.require_subcommand(1);

  std::string config;
  fs::path out;

  auto* synth = app.add_subcommand("synth-corpus", "Generate the synthetic parallel corpus");
  synth->add_option("--config", config, "Run config (JSON)");
  synth->add_option("--out", out, "Output directory")->required();

  fs::path wav_dir, manifest;
  std::string metadata;
  bool strict = false;
  auto* pre = app.add_subcommand("preprocess", "Trim, resample and extract features from WAV files");
  pre->add_option("--wav-dir", wav_dir, "Directory of PCM16 mono .wav files")->required();
  pre->add_option("--manifest", manifest, "Output manifest path")->required();
  pre->add_option("--config", config, "Run config (JSON)");
  pre->add_option("--metadata", metadata, "TSV of utt_id, text, style");
  pre->add_flag("--strict", strict, "Exit nonzero when any file is skipped");

  TrainFlags tf;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", tf.config, "Run config (JSON)");
  trn->add_option("--manifest", tf.manifest, "Corpus manifest")->required();
  trn->add_option("--run-dir", tf.run_dir, "Run directory")->required();
  trn->add_option("--p-vc", tf.p_vc, "Probability of a VC batch (1: VC, 0.5: VCTTS, 0: TTS)");
  trn->add_option("--steps", tf.steps, "Optimizer steps");
  trn->add_option("--batch-size", tf.batch_size, "Batch size");
  trn->add_option("--seed", tf.seed, "Training seed");
  trn->add_flag("--resume", tf.resume, "Continue from the latest checkpoint in the run directory");

  InferFlags inf;
  auto* infer = app.add_subcommand("infer", "Synthesize features from a checkpoint");
  infer->add_option("--ckpt", inf.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--task", inf.task, "vc or tts")->required()->check(CLI::IsMember({"vc", "tts"}));
  infer->add_option("--input", inf.input, "Mel feature file (vc) or token file (tts)")->required()->check(CLI::ExistingFile);
  infer->add_option("--style-ref", inf.style_ref, "Style reference mel")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", inf.out, "Output directory")->required();
  infer->add_option("--vocab", inf.vocab, "Symbol vocabulary (tts)");
  infer->add_option("--config", inf.config, "Run config for Griffin-Lim settings");
  infer->add_flag("--griffin-lim", inf.griffin_lim, "Also write a waveform");

  EvalFlags ef;
  auto add_eval = [&](const char* name, const char* help, bool multi) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--config", ef.config, "Run config (JSON)");
    c->add_option("--manifest", ef.manifest, "Corpus manifest")->required();
    c->add_option("--ckpt", ef.ckpts, multi ? "Checkpoints (repeatable)" : "Checkpoint")->required();
    c->add_option("--out", ef.out, multi ? "Results file" : "Output directory")->required();
    c->add_option("--source-style", ef.source_style, "Source style of converted utterances");
    return c;
  };
  auto* ter = add_eval("eval-ter", "Token error rate per variant", true);
  ter->add_option("--variant", ef.variants, "VC, VCTTS-V, VCTTS-T or TTS, one per --ckpt")->required();
  auto* sty = add_eval("eval-style", "Style-vector cosine confusion matrix", false);
  sty->add_option("--n-per-style", ef.n_per_style, "Samples per style");
  auto* grid = add_eval("plot-grid", "Conversion of one utterance into every style", false);
  grid->add_option("--sentence", ef.sentence, "Sentence id (default: first held-out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return CmdSynthCorpus(config, out);
    if (pre->parsed()) return CmdPreprocess(config, wav_dir, manifest, metadata, strict);
    if (trn->parsed()) return CmdTrain(tf);
    if (infer->parsed()) return CmdInfer(inf);
    if (ter->parsed()) return CmdEvalTer(ef);
    if (sty->parsed()) return CmdEvalStyle(ef);
    if (grid->parsed()) return CmdPlotGrid(ef);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
