#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mtlvc/dsp.hpp"
#include "mtlvc/layers.hpp"
#include "mtlvc/text_frontend.hpp"

namespace mtlvc::model {

using ad::Var;

enum class Task { kVC, kTTS };
const char* TaskName(Task task);

struct ModelConfig {
  int vocab_size = 32;
  int char_embed_dim = 256;
  int style_dim = 32;
  int encoder_dim = 256;     // width of h_l; even (bi-GRU halves)
  int attention_dim = 256;   // attention RNN and additive-attention width
  int decoder_dim = 256;
  int n_mels = 80;
  int n_linear = 1025;
  int reduction_factor = 5;
  std::vector<int> prenet_dims = {256, 128};
  int text_bank_size = 16;
  int text_bank_channels = 128;
  int post_bank_size = 8;
  int post_bank_channels = 128;
  int post_dim = 256;        // post-processor highway width; even
  int highway_layers = 4;
  int contents_hidden = 128; // per LSTM direction
  int style_hidden = 128;
  double dropout = 0.5;
  int max_decoder_steps = 200;
  double stop_threshold = 0.05;
  int stop_groups = 2;

  // Throws InvalidArgument.
  void validate() const;

  // Small widths for desk-scale experiments on the synthetic corpus.
  static ModelConfig Tiny(int vocab_size, int n_mels, int n_linear);
};

enum class Source { kText, kContents };

// h_l rows laid out time-major: row i * batch + b.
struct EncodedLinguistic {
  Var values;
  Source source = Source::kText;
  int length = 0;              // padded L
  std::vector<int> lengths;    // per batch item
};

// Exactly one input must be present; returns it unmodified.
// Throws BothPresent / NeitherPresent.
EncodedLinguistic XorRoute(const std::optional<EncodedLinguistic>& contents,
                           const std::optional<EncodedLinguistic>& text);

struct DecoderState {
  Var attention_hidden;              // B x attention_dim (also o^(t))
  std::vector<Var> decoder_hidden;   // two layers, B x decoder_dim
  Var context;                       // B x encoder_dim
  Var prev_frame;                    // B x n_mels
  int step = 0;
};

struct AttentionOutput {
  Var attention_hidden;
  Var context;
  Var output;   // o^(t)
  Var weights;  // B x L
};

struct DecoderOutput {
  std::vector<Var> decoder_hidden;
  Var frames;   // B x (r * n_mels)
};

// One training or inference batch. Sequences are time-major and zero (or
// PAD) padded; lengths are the unpadded extents.
struct ModelInput {
  Task task = Task::kTTS;
  int batch = 1;
  // TTS: L x B token ids, row-major by time (index t * batch + b).
  std::vector<int> token_ids;
  std::vector<int> token_lengths;
  // VC: (T * B) x n_mels contents mel.
  Matrix contents;
  std::vector<int> contents_lengths;
  // Style reference (T_s * B) x n_mels.
  Matrix style_ref;
  std::vector<int> style_lengths;
  // Teacher-forcing target, (T_gt * B) x n_mels with T_gt a multiple of r.
  std::optional<Matrix> target_mel;
};

struct ForwardOutput {
  Var mel;      // (T * B) x n_mels
  Var linear;   // (T * B) x n_linear
  std::vector<Matrix> alignments;  // one B x L matrix per decoder step
  int steps = 0;
  int frames = 0;
  bool max_steps_exceeded = false;
};

struct SynthesisResult {
  dsp::FeatureMatrix mel;
  dsp::FeatureMatrix linear;
  Matrix alignment;  // steps x L
  int steps = 0;
  bool max_steps_exceeded = false;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  // Parameter-name prefixes of each submodule.
  static constexpr const char* kTextPrefix = "text_encoder.";
  static constexpr const char* kContentsPrefix = "contents_encoder.";
  static constexpr const char* kStylePrefix = "style_encoder.";
  static constexpr const char* kAttentionPrefix = "attention.";
  static constexpr const char* kDecoderPrefix = "decoder.";
  static constexpr const char* kPostPrefix = "post_processor.";

  EncodedLinguistic TextEncoder(const nn::RunContext& ctx, const std::vector<int>& ids, int batch,
                                std::vector<int> lengths) const;
  EncodedLinguistic ContentsEncoder(const nn::RunContext& ctx, const Var& mel, int batch,
                                    std::vector<int> lengths) const;
  // B x style_dim: last valid LSTM step of each item followed by an affine map.
  Var StyleEncoder(const nn::RunContext& ctx, const Var& mel, int batch,
                   const std::vector<int>& lengths) const;

  // Decoder prenet applied to the previous frame.
  Var DecoderPrenet(const nn::RunContext& ctx, const Var& frame) const;

  DecoderState InitialState(nn::RunContext& ctx, int batch) const;
  // Additive-attention keys U h_l + b, computed once per utterance.
  Var AttentionKeys(const nn::RunContext& ctx, const EncodedLinguistic& h_l) const;
  AttentionOutput AttentionStep(const nn::RunContext& ctx, const Var& prev_frame, const Var& h_s,
                                const EncodedLinguistic& h_l, const Var& keys,
                                const DecoderState& state) const;
  DecoderOutput DecoderStep(const nn::RunContext& ctx, const Var& context, const Var& output,
                            const Var& h_s, const DecoderState& state) const;
  Var PostProcessor(const nn::RunContext& ctx, const Var& mel, int batch) const;

  // Encode, route, decode (teacher-forced iff target_mel is set), post-process.
  ForwardOutput Forward(const nn::RunContext& ctx, const ModelInput& input) const;

  // Single-utterance free-running (or teacher-forced) synthesis in eval mode.
  SynthesisResult Synthesize(Task task, const text::TokenSequence* tokens,
                             const dsp::FeatureMatrix* contents, const dsp::FeatureMatrix& style_ref,
                             const dsp::FeatureMatrix* target = nullptr) const;
  // Style vector for a single reference.
  Vector StyleVector(const dsp::FeatureMatrix& style_ref) const;

 private:
  ModelConfig cfg_;
  ad::ParameterStore params_;

  // Text encoder
  ad::Parameter* embedding_ = nullptr;
  nn::Prenet text_prenet_;
  nn::Cbhg text_cbhg_;
  // Contents encoder
  std::vector<nn::LSTMCell> contents_fw_;
  std::vector<nn::LSTMCell> contents_bw_;
  nn::Linear contents_proj_;
  // Style encoder
  std::vector<nn::LSTMCell> style_lstm_;
  nn::Linear style_proj_;
  // Attention
  nn::Prenet decoder_prenet_;
  nn::GRUCell attention_rnn_;
  nn::Linear query_;
  nn::Linear keys_;
  ad::Parameter* energy_ = nullptr;  // v, attention_dim x 1
  // Decoder
  nn::Linear decoder_in_;
  std::vector<nn::GRUCell> decoder_rnn_;
  nn::Linear frame_head_;
  // Post-processor
  nn::Cbhg post_cbhg_;
  nn::Linear linear_head_;
};

// Reshapes a (T * B) x F time-major matrix into item b's T x F matrix.
Matrix ExtractItem(const Matrix& time_major, int batch, int item, int frames);

}  // namespace mtlvc::model
