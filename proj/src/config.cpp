#include "mtlvc/config.hpp"

#include <fstream>
#include <set>

#include "mtlvc/error.hpp"

namespace mtlvc {

namespace {

// Reads optional fields from a JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw Error(ErrorCode::kInvalidArgument, section_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, section_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key()))
        throw Error(ErrorCode::kInvalidArgument, "unknown key '" + section_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

json SpectroToJson(const dsp::SpectroConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"win_length", c.win_length}, {"hop_length", c.hop_length},
          {"nfft", c.nfft},               {"n_mels", c.n_mels},         {"fmin", c.fmin},
          {"fmax", c.fmax},               {"ref_db", c.ref_db},         {"dynamic_range_db", c.dynamic_range_db}};
}

dsp::SpectroConfig SpectroFromJson(const json& j) {
  dsp::SpectroConfig c;
  Fields f(j, "dsp");
  f.get("sample_rate", c.sample_rate);
  f.get("win_length", c.win_length);
  f.get("hop_length", c.hop_length);
  f.get("nfft", c.nfft);
  f.get("n_mels", c.n_mels);
  f.get("fmin", c.fmin);
  f.get("fmax", c.fmax);
  f.get("ref_db", c.ref_db);
  f.get("dynamic_range_db", c.dynamic_range_db);
  f.finish();
  c.validate();
  return c;
}

json ArticulatorToJson(const synth::Articulator& a) {
  json tokens = json::array();
  for (const auto& t : a.tokens)
    tokens.push_back({{"center_bin", t.center_bin}, {"bandwidth", t.bandwidth}, {"base_duration", t.base_duration}});
  json styles = json::array();
  for (const auto& s : a.styles) {
    styles.push_back({{"bin_shift", s.bin_shift},
                      {"duration_scale", s.duration_scale},
                      {"tilt", s.tilt},
                      {"gain", s.gain}});
  }
  return {{"noise_std", a.noise_std},
          {"seed", a.seed},
          {"spectro", SpectroToJson(a.spectro)},
          {"tokens", tokens},
          {"styles", styles}};
}

synth::Articulator ArticulatorFromJson(const json& j) {
  synth::Articulator a;
  Fields f(j, "articulator");
  f.get("noise_std", a.noise_std);
  f.get("seed", a.seed);
  if (const json* s = f.sub("spectro")) a.spectro = SpectroFromJson(*s);
  if (const json* toks = f.sub("tokens")) {
    for (const auto& t : *toks) {
      synth::TokenTemplate tt;
      Fields g(t, "articulator.tokens[]");
      g.get("center_bin", tt.center_bin);
      g.get("bandwidth", tt.bandwidth);
      g.get("base_duration", tt.base_duration);
      g.finish();
      a.tokens.push_back(tt);
    }
  }
  if (const json* styles = f.sub("styles")) {
    for (const auto& s : *styles) {
      synth::StyleTransform st;
      Fields g(s, "articulator.styles[]");
      g.get("bin_shift", st.bin_shift);
      g.get("duration_scale", st.duration_scale);
      g.get("tilt", st.tilt);
      g.get("gain", st.gain);
      g.finish();
      a.styles.push_back(st);
    }
  }
  f.finish();
  a.validate();
  return a;
}

json ModelConfigToJson(const model::ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"char_embed_dim", c.char_embed_dim},
          {"style_dim", c.style_dim},
          {"encoder_dim", c.encoder_dim},
          {"attention_dim", c.attention_dim},
          {"decoder_dim", c.decoder_dim},
          {"n_mels", c.n_mels},
          {"n_linear", c.n_linear},
          {"reduction_factor", c.reduction_factor},
          {"prenet_dims", c.prenet_dims},
          {"text_bank_size", c.text_bank_size},
          {"text_bank_channels", c.text_bank_channels},
          {"post_bank_size", c.post_bank_size},
          {"post_bank_channels", c.post_bank_channels},
          {"post_dim", c.post_dim},
          {"highway_layers", c.highway_layers},
          {"contents_hidden", c.contents_hidden},
          {"style_hidden", c.style_hidden},
          {"dropout", c.dropout},
          {"max_decoder_steps", c.max_decoder_steps},
          {"stop_threshold", c.stop_threshold},
          {"stop_groups", c.stop_groups}};
}

model::ModelConfig ModelConfigFromJson(const json& j) {
  Fields f(j, "model");
  std::string preset = "full";
  f.get("preset", preset);
  model::ModelConfig c;
  if (preset == "tiny") {
    c = model::ModelConfig::Tiny(c.vocab_size, c.n_mels, c.n_linear);
  } else if (preset != "full") {
    throw Error(ErrorCode::kInvalidArgument, "model.preset must be 'full' or 'tiny'");
  }
  f.get("vocab_size", c.vocab_size);
  f.get("char_embed_dim", c.char_embed_dim);
  f.get("style_dim", c.style_dim);
  f.get("encoder_dim", c.encoder_dim);
  f.get("attention_dim", c.attention_dim);
  f.get("decoder_dim", c.decoder_dim);
  f.get("n_mels", c.n_mels);
  f.get("n_linear", c.n_linear);
  f.get("reduction_factor", c.reduction_factor);
  f.get("prenet_dims", c.prenet_dims);
  f.get("text_bank_size", c.text_bank_size);
  f.get("text_bank_channels", c.text_bank_channels);
  f.get("post_bank_size", c.post_bank_size);
  f.get("post_bank_channels", c.post_bank_channels);
  f.get("post_dim", c.post_dim);
  f.get("highway_layers", c.highway_layers);
  f.get("contents_hidden", c.contents_hidden);
  f.get("style_hidden", c.style_hidden);
  f.get("dropout", c.dropout);
  f.get("max_decoder_steps", c.max_decoder_steps);
  f.get("stop_threshold", c.stop_threshold);
  f.get("stop_groups", c.stop_groups);
  f.finish();
  c.validate();
  return c;
}

json TrainConfigToJson(const train::TrainConfig& c) {
  return {{"batch_size", c.batch_size},   {"learning_rate", c.learning_rate},
          {"clip_norm", c.clip_norm},     {"p_vc", c.p_vc},
          {"steps", c.steps},             {"checkpoint_interval", c.checkpoint_interval},
          {"seed", c.seed},               {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},   {"adam_eps", c.adam_eps}};
}

train::TrainConfig TrainConfigFromJson(const json& j) {
  train::TrainConfig c;
  Fields f(j, "training");
  f.get("batch_size", c.batch_size);
  f.get("learning_rate", c.learning_rate);
  f.get("clip_norm", c.clip_norm);
  f.get("p_vc", c.p_vc);
  f.get("steps", c.steps);
  f.get("checkpoint_interval", c.checkpoint_interval);
  f.get("seed", c.seed);
  f.get("adam_beta1", c.adam_beta1);
  f.get("adam_beta2", c.adam_beta2);
  f.get("adam_eps", c.adam_eps);
  f.finish();
  c.validate();
  return c;
}

json EvalConfigToJson(const eval::EvalConfig& c) {
  return {{"heldout_sentences", c.heldout_sentences},
          {"source_style", c.source_style},
          {"n_per_style", c.n_per_style},
          {"reference_sentence", c.reference_sentence},
          {"seed", c.seed}};
}

eval::EvalConfig EvalConfigFromJson(const json& j) {
  eval::EvalConfig c;
  Fields f(j, "evaluation");
  f.get("heldout_sentences", c.heldout_sentences);
  f.get("source_style", c.source_style);
  f.get("n_per_style", c.n_per_style);
  f.get("reference_sentence", c.reference_sentence);
  f.get("seed", c.seed);
  f.finish();
  c.validate();
  return c;
}

synth::Articulator CorpusSection::Build(const dsp::SpectroConfig& spectro) const {
  synth::Articulator a = synth::Articulator::Default(vocab_size, spec.n_styles, spectro);
  a.noise_std = noise_std;
  a.seed = seed;
  a.validate();
  return a;
}

json RunConfigToJson(const RunConfig& c) {
  json art = {{"vocab_size", c.articulator.vocab_size},
              {"noise_std", c.articulator.noise_std},
              {"seed", c.articulator.seed},
              {"n_sentences", c.articulator.spec.n_sentences},
              {"min_len", c.articulator.spec.min_len},
              {"max_len", c.articulator.spec.max_len},
              {"n_styles", c.articulator.spec.n_styles}};
  return {{"dsp", SpectroToJson(c.dsp)},
          {"articulator", art},
          {"model", ModelConfigToJson(c.model)},
          {"training", TrainConfigToJson(c.training)},
          {"evaluation", EvalConfigToJson(c.evaluation)}};
}

RunConfig RunConfigFromJson(const json& j) {
  RunConfig c;
  Fields f(j, "config");
  if (const json* s = f.sub("dsp")) c.dsp = SpectroFromJson(*s);
  if (const json* s = f.sub("articulator")) {
    Fields g(*s, "articulator");
    g.get("vocab_size", c.articulator.vocab_size);
    g.get("noise_std", c.articulator.noise_std);
    g.get("seed", c.articulator.seed);
    g.get("n_sentences", c.articulator.spec.n_sentences);
    g.get("min_len", c.articulator.spec.min_len);
    g.get("max_len", c.articulator.spec.max_len);
    g.get("n_styles", c.articulator.spec.n_styles);
    g.finish();
  }
  if (const json* s = f.sub("model")) c.model = ModelConfigFromJson(*s);
  if (const json* s = f.sub("training")) c.training = TrainConfigFromJson(*s);
  if (const json* s = f.sub("evaluation")) c.evaluation = EvalConfigFromJson(*s);
  f.finish();
  return c;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIo, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  return RunConfigFromJson(j);
}

}  // namespace mtlvc
