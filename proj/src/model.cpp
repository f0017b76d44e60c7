#include "mtlvc/model.hpp"

#include <algorithm>

#include "mtlvc/error.hpp"

namespace mtlvc::model {

namespace {

constexpr double kMaskedEnergy = -1e9;

void Check(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace

const char* TaskName(Task task) { return task == Task::kVC ? "VC" : "TTS"; }

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(char_embed_dim, "char_embed_dim");
  positive(style_dim, "style_dim");
  positive(encoder_dim, "encoder_dim");
  positive(attention_dim, "attention_dim");
  positive(decoder_dim, "decoder_dim");
  positive(n_mels, "n_mels");
  positive(n_linear, "n_linear");
  positive(reduction_factor, "reduction_factor");
  positive(text_bank_size, "text_bank_size");
  positive(text_bank_channels, "text_bank_channels");
  positive(post_bank_size, "post_bank_size");
  positive(post_bank_channels, "post_bank_channels");
  positive(post_dim, "post_dim");
  positive(contents_hidden, "contents_hidden");
  positive(style_hidden, "style_hidden");
  positive(max_decoder_steps, "max_decoder_steps");
  positive(stop_groups, "stop_groups");
  if (highway_layers < 0) throw Error(ErrorCode::kInvalidArgument, "highway_layers must be >= 0");
  if (encoder_dim % 2 != 0 || post_dim % 2 != 0)
    throw Error(ErrorCode::kInvalidArgument, "encoder_dim and post_dim must be even");
  if (prenet_dims.empty()) throw Error(ErrorCode::kInvalidArgument, "prenet needs at least one layer");
  for (int d : prenet_dims) positive(d, "prenet_dims");
  if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::kInvalidArgument, "dropout must be in [0, 1)");
}

ModelConfig ModelConfig::Tiny(int vocab_size, int n_mels, int n_linear) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.n_mels = n_mels;
  c.n_linear = n_linear;
  c.char_embed_dim = 64;
  c.style_dim = 32;
  c.encoder_dim = 64;
  c.attention_dim = 64;
  c.decoder_dim = 128;
  c.prenet_dims = {64, 32};
  c.text_bank_size = 4;
  c.text_bank_channels = 8;
  c.post_bank_size = 4;
  c.post_bank_channels = 16;
  c.post_dim = 32;
  c.highway_layers = 2;
  c.contents_hidden = 64;
  c.style_hidden = 32;
  c.dropout = 0.5;
  c.max_decoder_steps = 40;
  return c;
}

EncodedLinguistic XorRoute(const std::optional<EncodedLinguistic>& contents,
                           const std::optional<EncodedLinguistic>& text) {
  if (contents && text)
    throw Error(ErrorCode::kBothPresent, "exactly one of contents/text encodings may be given");
  if (!contents && !text)
    throw Error(ErrorCode::kNeitherPresent, "one of contents/text encodings is required");
  return contents ? *contents : *text;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int half_enc = cfg_.encoder_dim / 2;

  embedding_ = &params_.create(std::string(kTextPrefix) + "embedding", cfg_.vocab_size, cfg_.char_embed_dim);
  {
    std::normal_distribution<double> g(0.0, 0.3);
    for (Eigen::Index i = 0; i < embedding_->value.size(); ++i) embedding_->value.data()[i] = g(rng);
  }
  text_prenet_ = nn::Prenet(params_, std::string(kTextPrefix) + "prenet", cfg_.char_embed_dim,
                            cfg_.prenet_dims, cfg_.dropout, rng);
  nn::CbhgConfig text_cbhg;
  text_cbhg.in_dim = text_prenet_.out();
  text_cbhg.bank_size = cfg_.text_bank_size;
  text_cbhg.bank_channels = cfg_.text_bank_channels;
  text_cbhg.projection_dim = text_prenet_.out();
  text_cbhg.highway_dim = half_enc;
  text_cbhg.highway_layers = cfg_.highway_layers;
  text_cbhg.gru_dim = half_enc;
  text_cbhg_ = nn::Cbhg(params_, std::string(kTextPrefix) + "cbhg", text_cbhg, rng);

  for (int layer = 0; layer < 2; ++layer) {
    const int in = layer == 0 ? cfg_.n_mels : 2 * cfg_.contents_hidden;
    const std::string name = std::string(kContentsPrefix) + "lstm" + std::to_string(layer + 1);
    contents_fw_.emplace_back(params_, name + ".fw", in, cfg_.contents_hidden, rng);
    contents_bw_.emplace_back(params_, name + ".bw", in, cfg_.contents_hidden, rng);
  }
  contents_proj_ = nn::Linear(params_, std::string(kContentsPrefix) + "proj", 2 * cfg_.contents_hidden,
                              cfg_.encoder_dim, rng);

  for (int layer = 0; layer < 2; ++layer) {
    const int in = layer == 0 ? cfg_.n_mels : cfg_.style_hidden;
    style_lstm_.emplace_back(params_, std::string(kStylePrefix) + "lstm" + std::to_string(layer + 1), in,
                             cfg_.style_hidden, rng);
  }
  style_proj_ = nn::Linear(params_, std::string(kStylePrefix) + "proj", cfg_.style_hidden, cfg_.style_dim, rng);

  decoder_prenet_ = nn::Prenet(params_, std::string(kAttentionPrefix) + "prenet", cfg_.n_mels,
                               cfg_.prenet_dims, cfg_.dropout, rng);
  attention_rnn_ = nn::GRUCell(params_, std::string(kAttentionPrefix) + "rnn",
                               decoder_prenet_.out() + cfg_.style_dim + cfg_.encoder_dim,
                               cfg_.attention_dim, rng);
  query_ = nn::Linear(params_, std::string(kAttentionPrefix) + "query", cfg_.attention_dim,
                      cfg_.attention_dim, rng, false);
  keys_ = nn::Linear(params_, std::string(kAttentionPrefix) + "keys", cfg_.encoder_dim, cfg_.attention_dim, rng);
  energy_ = &params_.create(std::string(kAttentionPrefix) + "v", cfg_.attention_dim, 1);
  nn::InitFanIn(*energy_, cfg_.attention_dim, rng);

  decoder_in_ = nn::Linear(params_, std::string(kDecoderPrefix) + "input",
                           cfg_.encoder_dim + cfg_.attention_dim + cfg_.style_dim, cfg_.decoder_dim, rng);
  for (int layer = 0; layer < 2; ++layer) {
    decoder_rnn_.emplace_back(params_, std::string(kDecoderPrefix) + "gru" + std::to_string(layer + 1),
                              cfg_.decoder_dim, cfg_.decoder_dim, rng);
  }
  frame_head_ = nn::Linear(params_, std::string(kDecoderPrefix) + "frames", cfg_.decoder_dim,
                           cfg_.reduction_factor * cfg_.n_mels, rng);

  nn::CbhgConfig post;
  post.in_dim = cfg_.n_mels;
  post.bank_size = cfg_.post_bank_size;
  post.bank_channels = cfg_.post_bank_channels;
  post.projection_dim = cfg_.post_dim;
  post.highway_dim = cfg_.post_dim / 2;
  post.highway_layers = cfg_.highway_layers;
  post.gru_dim = cfg_.post_dim / 2;
  post_cbhg_ = nn::Cbhg(params_, std::string(kPostPrefix) + "cbhg", post, rng);
  linear_head_ = nn::Linear(params_, std::string(kPostPrefix) + "linear", cfg_.post_dim, cfg_.n_linear, rng);

  // Output heads start at zero. With random heads the first L1 steps cancel
  // the output noise by shrinking every upstream activation, and training
  // then sits in that collapsed state for a long time.
  params_.get(std::string(kDecoderPrefix) + "frames.weight").value.setZero();
  params_.get(std::string(kPostPrefix) + "linear.weight").value.setZero();
}

EncodedLinguistic Model::TextEncoder(const nn::RunContext& ctx, const std::vector<int>& ids, int batch,
                                     std::vector<int> lengths) const {
  Check(batch > 0 && !ids.empty() && ids.size() % static_cast<std::size_t>(batch) == 0,
        ErrorCode::kShapeMismatch, "token ids must be L x batch with L >= 1");
  for (int id : ids)
    Check(id >= 0 && id < cfg_.vocab_size, ErrorCode::kOutOfRange,
          "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(cfg_.vocab_size));
  Var emb = ad::gather_rows(ctx.tape.param(*embedding_), ids);
  Var h = text_cbhg_(ctx.tape, text_prenet_(ctx, emb), batch);
  EncodedLinguistic out;
  out.values = h;
  out.source = Source::kText;
  out.length = static_cast<int>(ids.size()) / batch;
  out.lengths = lengths.empty() ? std::vector<int>(static_cast<std::size_t>(batch), out.length) : std::move(lengths);
  return out;
}

EncodedLinguistic Model::ContentsEncoder(const nn::RunContext& ctx, const Var& mel, int batch,
                                         std::vector<int> lengths) const {
  Check(mel.rows() > 0, ErrorCode::kEmptyInput, "contents encoder needs at least one frame");
  Check(mel.cols() == cfg_.n_mels && mel.rows() % batch == 0, ErrorCode::kShapeMismatch,
        "contents input must be (T*B) x n_mels");
  Var h = mel;
  for (std::size_t layer = 0; layer < contents_fw_.size(); ++layer) {
    h = ad::concat_cols({nn::RunLSTM(ctx.tape, contents_fw_[layer], h, batch, false),
                         nn::RunLSTM(ctx.tape, contents_bw_[layer], h, batch, true)});
  }
  EncodedLinguistic out;
  out.values = contents_proj_(ctx.tape, h);
  out.source = Source::kContents;
  out.length = static_cast<int>(mel.rows()) / batch;
  out.lengths = lengths.empty() ? std::vector<int>(static_cast<std::size_t>(batch), out.length) : std::move(lengths);
  return out;
}

Var Model::StyleEncoder(const nn::RunContext& ctx, const Var& mel, int batch,
                        const std::vector<int>& lengths) const {
  Check(mel.rows() > 0, ErrorCode::kEmptyInput, "style encoder needs at least one frame");
  Check(mel.cols() == cfg_.n_mels && mel.rows() % batch == 0, ErrorCode::kShapeMismatch,
        "style reference must be (T*B) x n_mels");
  const int steps = static_cast<int>(mel.rows()) / batch;
  Var h = mel;
  for (const auto& cell : style_lstm_) h = nn::RunLSTM(ctx.tape, cell, h, batch, false);
  std::vector<int> last(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const int len = lengths.empty() ? steps : lengths[static_cast<std::size_t>(b)];
    Check(len >= 1 && len <= steps, ErrorCode::kShapeMismatch, "bad style reference length");
    last[static_cast<std::size_t>(b)] = (len - 1) * batch + b;
  }
  return style_proj_(ctx.tape, ad::gather_rows(h, last));
}

Var Model::DecoderPrenet(const nn::RunContext& ctx, const Var& frame) const {
  return decoder_prenet_(ctx, frame);
}

DecoderState Model::InitialState(nn::RunContext& ctx, int batch) const {
  DecoderState s;
  s.attention_hidden = ctx.tape.constant(Matrix::Zero(batch, cfg_.attention_dim));
  for (std::size_t i = 0; i < decoder_rnn_.size(); ++i)
    s.decoder_hidden.push_back(ctx.tape.constant(Matrix::Zero(batch, cfg_.decoder_dim)));
  s.context = ctx.tape.constant(Matrix::Zero(batch, cfg_.encoder_dim));
  s.prev_frame = ctx.tape.constant(Matrix::Zero(batch, cfg_.n_mels));
  return s;
}

Var Model::AttentionKeys(const nn::RunContext& ctx, const EncodedLinguistic& h_l) const {
  return keys_(ctx.tape, h_l.values);
}

AttentionOutput Model::AttentionStep(const nn::RunContext& ctx, const Var& prev_frame, const Var& h_s,
                                     const EncodedLinguistic& h_l, const Var& keys,
                                     const DecoderState& state) const {
  const Eigen::Index batch = prev_frame.rows();
  Check(prev_frame.cols() == cfg_.n_mels && h_s.cols() == cfg_.style_dim && h_s.rows() == batch &&
            state.context.cols() == cfg_.encoder_dim && state.attention_hidden.cols() == cfg_.attention_dim,
        ErrorCode::kShapeMismatch, "attention step input shapes do not match the config");
  Var x = ad::concat_cols({DecoderPrenet(ctx, prev_frame), h_s, state.context});
  Var h_att = attention_rnn_.step_raw(ctx.tape, x, state.attention_hidden);

  Var query = ad::repeat_rows(query_(ctx.tape, h_att), h_l.length);
  Var energies = ad::matmul(ad::tanh(ad::add(query, keys)), ctx.tape.param(*energy_));
  energies = ad::blocks_to_cols(energies, batch);
  bool padded = false;
  Matrix mask = Matrix::Zero(batch, h_l.length);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int i = h_l.lengths[static_cast<std::size_t>(b)]; i < h_l.length; ++i) {
      mask(b, i) = kMaskedEnergy;
      padded = true;
    }
  }
  if (padded) energies = ad::add(energies, ctx.tape.constant(std::move(mask)));
  Var weights = ad::softmax_rows(energies);

  AttentionOutput out;
  out.attention_hidden = h_att;
  out.output = h_att;
  out.weights = weights;
  out.context = ad::weighted_blocks(weights, h_l.values);
  return out;
}

DecoderOutput Model::DecoderStep(const nn::RunContext& ctx, const Var& context, const Var& output,
                                 const Var& h_s, const DecoderState& state) const {
  Check(context.cols() == cfg_.encoder_dim && output.cols() == cfg_.attention_dim &&
            h_s.cols() == cfg_.style_dim && state.decoder_hidden.size() == decoder_rnn_.size(),
        ErrorCode::kShapeMismatch, "decoder step input shapes do not match the config");
  Var x = decoder_in_(ctx.tape, ad::concat_cols({context, output, h_s}));
  DecoderOutput out;
  for (std::size_t layer = 0; layer < decoder_rnn_.size(); ++layer) {
    Var h = decoder_rnn_[layer].step_raw(ctx.tape, x, state.decoder_hidden[layer]);
    out.decoder_hidden.push_back(h);
    x = ad::add(x, h);
  }
  out.frames = frame_head_(ctx.tape, x);
  return out;
}

Var Model::PostProcessor(const nn::RunContext& ctx, const Var& mel, int batch) const {
  Check(mel.cols() == cfg_.n_mels, ErrorCode::kShapeMismatch, "post-processor input must have n_mels columns");
  return linear_head_(ctx.tape, post_cbhg_(ctx.tape, mel, batch));
}

ForwardOutput Model::Forward(const nn::RunContext& ctx_in, const ModelInput& input) const {
  nn::RunContext ctx = ctx_in;
  const int batch = input.batch;
  const int r = cfg_.reduction_factor;
  Check(batch >= 1, ErrorCode::kInvalidArgument, "batch must be >= 1");

  std::optional<EncodedLinguistic> h_c;
  std::optional<EncodedLinguistic> h_t;
  if (input.task == Task::kVC) {
    Check(input.contents.rows() > 0 && input.token_ids.empty(), ErrorCode::kInvalidArgument,
          "VC needs a contents mel and no tokens");
    h_c = ContentsEncoder(ctx, ctx.tape.constant(input.contents), batch, input.contents_lengths);
  } else {
    Check(!input.token_ids.empty() && input.contents.rows() == 0, ErrorCode::kInvalidArgument,
          "TTS needs tokens and no contents mel");
    h_t = TextEncoder(ctx, input.token_ids, batch, input.token_lengths);
  }
  const EncodedLinguistic h_l = XorRoute(h_c, h_t);
  const Var h_s = StyleEncoder(ctx, ctx.tape.constant(input.style_ref), batch, input.style_lengths);
  const Var keys = AttentionKeys(ctx, h_l);

  int steps = cfg_.max_decoder_steps;
  const Matrix* target = input.target_mel ? &*input.target_mel : nullptr;
  if (target) {
    Check(target->cols() == cfg_.n_mels && target->rows() % (static_cast<Eigen::Index>(batch) * r) == 0 &&
              target->rows() > 0,
          ErrorCode::kShapeMismatch, "teacher-forcing target must be (T*B) x n_mels with T a multiple of r");
    steps = static_cast<int>(target->rows() / batch) / r;
  }

  DecoderState state = InitialState(ctx, batch);
  ForwardOutput out;
  std::vector<Var> frame_rows;
  std::vector<int> silent_run(static_cast<std::size_t>(batch), 0);
  int step = 0;
  for (; step < steps; ++step) {
    Var prev = state.prev_frame;
    if (target && step > 0) {
      const Eigen::Index frame = static_cast<Eigen::Index>(r) * step - 1;
      prev = ctx.tape.constant(target->middleRows(frame * batch, batch));
    }
    AttentionOutput att = AttentionStep(ctx, prev, h_s, h_l, keys, state);
    DecoderOutput dec = DecoderStep(ctx, att.context, att.output, h_s, state);
    out.alignments.push_back(att.weights.value());
    for (int j = 0; j < r; ++j) frame_rows.push_back(ad::slice_cols(dec.frames, j * cfg_.n_mels, cfg_.n_mels));

    state.attention_hidden = att.attention_hidden;
    state.context = att.context;
    state.decoder_hidden = dec.decoder_hidden;
    state.prev_frame = frame_rows.back();
    state.step = step + 1;

    if (!target) {
      bool all_done = true;
      for (int b = 0; b < batch; ++b) {
        const bool silent = dec.frames.value().row(b).maxCoeff() < cfg_.stop_threshold;
        auto& run = silent_run[static_cast<std::size_t>(b)];
        run = silent ? run + 1 : 0;
        all_done = all_done && run >= cfg_.stop_groups;
      }
      if (all_done) {
        ++step;
        break;
      }
    }
  }
  out.steps = step;
  out.frames = step * r;
  out.max_steps_exceeded = !target && step >= steps &&
                           std::any_of(silent_run.begin(), silent_run.end(),
                                       [&](int run) { return run < cfg_.stop_groups; });
  out.mel = ad::concat_rows(frame_rows);
  out.linear = PostProcessor(ctx, out.mel, batch);
  return out;
}

Matrix ExtractItem(const Matrix& time_major, int batch, int item, int frames) {
  Matrix out(frames, time_major.cols());
  for (int t = 0; t < frames; ++t) out.row(t) = time_major.row(static_cast<Eigen::Index>(t) * batch + item);
  return out;
}

SynthesisResult Model::Synthesize(Task task, const text::TokenSequence* tokens,
                                  const dsp::FeatureMatrix* contents, const dsp::FeatureMatrix& style_ref,
                                  const dsp::FeatureMatrix* target) const {
  ad::Tape tape(false);
  nn::RunContext ctx{tape, false, nullptr};
  ModelInput in;
  in.task = task;
  in.batch = 1;
  if (task == Task::kTTS) {
    Check(tokens != nullptr && contents == nullptr, ErrorCode::kInvalidArgument, "TTS synthesis takes tokens only");
    in.token_ids = tokens->ids;
  } else {
    Check(contents != nullptr && tokens == nullptr, ErrorCode::kInvalidArgument, "VC synthesis takes a mel only");
    Check(contents->kind == dsp::FeatureKind::kMel, ErrorCode::kInvalidArgument, "VC input must be a mel");
    in.contents = contents->values;
  }
  Check(style_ref.kind == dsp::FeatureKind::kMel, ErrorCode::kInvalidArgument, "style reference must be a mel");
  in.style_ref = style_ref.values;
  if (target) {
    const int r = cfg_.reduction_factor;
    const int padded = (target->frames() + r - 1) / r * r;
    Matrix t = Matrix::Zero(padded, cfg_.n_mels);
    t.topRows(target->frames()) = target->values;
    in.target_mel = std::move(t);
  }
  ForwardOutput fo = Forward(ctx, in);

  SynthesisResult res;
  res.mel.kind = dsp::FeatureKind::kMel;
  res.mel.values = fo.mel.value().cwiseMax(0.0).cwiseMin(1.0);
  res.linear.kind = dsp::FeatureKind::kLinear;
  res.linear.values = fo.linear.value().cwiseMax(0.0).cwiseMin(1.0);
  res.steps = fo.steps;
  res.max_steps_exceeded = fo.max_steps_exceeded;
  const auto L = fo.alignments.empty() ? 0 : fo.alignments.front().cols();
  res.alignment.resize(fo.steps, L);
  for (int s = 0; s < fo.steps; ++s) res.alignment.row(s) = fo.alignments[static_cast<std::size_t>(s)].row(0);
  return res;
}

Vector Model::StyleVector(const dsp::FeatureMatrix& style_ref) const {
  ad::Tape tape(false);
  nn::RunContext ctx{tape, false, nullptr};
  Var v = StyleEncoder(ctx, tape.constant(style_ref.values), 1, {});
  return v.value().row(0).transpose();
}

}  // namespace mtlvc::model
