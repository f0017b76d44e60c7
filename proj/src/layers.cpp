#include "mtlvc/layers.hpp"

#include <cmath>

#include "mtlvc/error.hpp"

namespace mtlvc::nn {

void InitFanIn(Parameter& p, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double a = std::sqrt(3.0 / static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-a, a);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
}

void InitOrthogonalBlocks(Parameter& p, std::mt19937_64& rng) {
  const Eigen::Index n = p.value.rows();
  if (n == 0 || p.value.cols() % n != 0)
    throw Error(ErrorCode::kShapeMismatch, "orthogonal init needs square column blocks: " + p.name);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index block = 0; block < p.value.cols() / n; ++block) {
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();
    // Sign fix makes the distribution uniform over orthogonal matrices.
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
      if (r(j, j) < 0) q.col(j) = -q.col(j);
    p.value.middleCols(block * n, n) = q;
  }
}

Matrix DropoutMask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Matrix mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  return mask;
}

Var Dropout(const RunContext& ctx, const Var& x, double rate) {
  if (!ctx.training || rate <= 0.0) return x;
  if (ctx.rng == nullptr) throw Error(ErrorCode::kInvalidArgument, "training dropout needs an rng");
  return ad::mul(x, ctx.tape.constant(DropoutMask(x.rows(), x.cols(), rate, *ctx.rng)));
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
               bool bias)
    : in_(in), out_(out) {
  weight_ = &store.create(name + ".weight", in, out);
  InitFanIn(*weight_, in, rng);
  if (bias) bias_ = &store.create(name + ".bias", 1, out);
}

Var Linear::operator()(Tape& tape, const Var& x) const {
  Var y = ad::matmul(x, tape.param(*weight_));
  return bias_ ? ad::add_row(y, tape.param(*bias_)) : y;
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, int in, int out, int width,
               std::mt19937_64& rng)
    : in_(in), out_(out), width_(width) {
  if (width < 1) throw Error(ErrorCode::kInvalidArgument, "conv width must be >= 1");
  weight_ = &store.create(name + ".weight", static_cast<Eigen::Index>(width) * in, out);
  InitFanIn(*weight_, static_cast<Eigen::Index>(width) * in, rng);
  bias_ = &store.create(name + ".bias", 1, out);
}

Var Conv1d::operator()(Tape& tape, const Var& x, Eigen::Index batch) const {
  if (x.cols() != in_)
    throw Error(ErrorCode::kShapeMismatch, "conv input width " + std::to_string(x.cols()) +
                                               " != " + std::to_string(in_));
  const int left = (width_ - 1) / 2;
  Var cols;
  if (width_ == 1) {
    cols = x;
  } else {
    std::vector<Var> taps;
    taps.reserve(static_cast<std::size_t>(width_));
    for (int j = 0; j < width_; ++j) taps.push_back(ad::shift_rows(x, (j - left) * batch));
    cols = ad::concat_cols(taps);
  }
  return ad::add_row(ad::matmul(cols, tape.param(*weight_)), tape.param(*bias_));
}

Prenet::Prenet(ParameterStore& store, const std::string& name, int in, const std::vector<int>& dims,
               double dropout, std::mt19937_64& rng)
    : dropout_(dropout) {
  int prev = in;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    layers_.emplace_back(store, name + ".fc" + std::to_string(i + 1), prev, dims[i], rng);
    prev = dims[i];
  }
}

Var Prenet::operator()(const RunContext& ctx, const Var& x) const {
  Var h = x;
  for (const auto& layer : layers_) h = Dropout(ctx, ad::relu(layer(ctx.tape, h)), dropout_);
  return h;
}

GRUCell::GRUCell(ParameterStore& store, const std::string& name, int in, int hidden,
                 std::mt19937_64& rng)
    : hidden_(hidden) {
  w_ih_ = &store.create(name + ".w_ih", in, 3 * hidden);
  w_hh_ = &store.create(name + ".w_hh", hidden, 3 * hidden);
  b_ih_ = &store.create(name + ".b_ih", 1, 3 * hidden);
  b_hh_ = &store.create(name + ".b_hh", 1, 3 * hidden);
  InitFanIn(*w_ih_, in, rng);
  InitOrthogonalBlocks(*w_hh_, rng);
}

Var GRUCell::project(Tape& tape, const Var& x) const {
  return ad::add_row(ad::matmul(x, tape.param(*w_ih_)), tape.param(*b_ih_));
}

Var GRUCell::step(Tape& tape, const Var& x_proj, const Var& h) const {
  const Eigen::Index H = hidden_;
  Var hp = ad::add_row(ad::matmul(h, tape.param(*w_hh_)), tape.param(*b_hh_));
  Var r = ad::sigmoid(ad::add(ad::slice_cols(x_proj, 0, H), ad::slice_cols(hp, 0, H)));
  Var z = ad::sigmoid(ad::add(ad::slice_cols(x_proj, H, H), ad::slice_cols(hp, H, H)));
  Var n = ad::tanh(ad::add(ad::slice_cols(x_proj, 2 * H, H), ad::mul(r, ad::slice_cols(hp, 2 * H, H))));
  // h' = (1 - z) * n + z * h
  return ad::add(n, ad::mul(z, ad::sub(h, n)));
}

LSTMCell::LSTMCell(ParameterStore& store, const std::string& name, int in, int hidden,
                   std::mt19937_64& rng)
    : hidden_(hidden) {
  w_ih_ = &store.create(name + ".w_ih", in, 4 * hidden);
  w_hh_ = &store.create(name + ".w_hh", hidden, 4 * hidden);
  bias_ = &store.create(name + ".bias", 1, 4 * hidden);
  InitFanIn(*w_ih_, in, rng);
  InitOrthogonalBlocks(*w_hh_, rng);
}

Var LSTMCell::project(Tape& tape, const Var& x) const {
  return ad::add_row(ad::matmul(x, tape.param(*w_ih_)), tape.param(*bias_));
}

std::pair<Var, Var> LSTMCell::step(Tape& tape, const Var& x_proj, const Var& h, const Var& c) const {
  const Eigen::Index H = hidden_;
  Var gates = ad::add(x_proj, ad::matmul(h, tape.param(*w_hh_)));
  Var i = ad::sigmoid(ad::slice_cols(gates, 0, H));
  Var f = ad::sigmoid(ad::slice_cols(gates, H, H));
  Var g = ad::tanh(ad::slice_cols(gates, 2 * H, H));
  Var o = ad::sigmoid(ad::slice_cols(gates, 3 * H, H));
  Var c_next = ad::add(ad::mul(f, c), ad::mul(i, g));
  Var h_next = ad::mul(o, ad::tanh(c_next));
  return {h_next, c_next};
}

Var RunGRU(Tape& tape, const GRUCell& cell, const Var& x, Eigen::Index batch, bool reverse) {
  const Eigen::Index steps = x.rows() / batch;
  Var proj = cell.project(tape, x);
  Var h = tape.constant(Matrix::Zero(batch, cell.hidden()));
  std::vector<Var> outputs(static_cast<std::size_t>(steps));
  for (Eigen::Index k = 0; k < steps; ++k) {
    const Eigen::Index t = reverse ? steps - 1 - k : k;
    h = cell.step(tape, ad::slice_rows(proj, t * batch, batch), h);
    outputs[static_cast<std::size_t>(t)] = h;
  }
  return ad::concat_rows(outputs);
}

Var RunLSTM(Tape& tape, const LSTMCell& cell, const Var& x, Eigen::Index batch, bool reverse) {
  const Eigen::Index steps = x.rows() / batch;
  Var proj = cell.project(tape, x);
  Var h = tape.constant(Matrix::Zero(batch, cell.hidden()));
  Var c = tape.constant(Matrix::Zero(batch, cell.hidden()));
  std::vector<Var> outputs(static_cast<std::size_t>(steps));
  for (Eigen::Index k = 0; k < steps; ++k) {
    const Eigen::Index t = reverse ? steps - 1 - k : k;
    std::tie(h, c) = cell.step(tape, ad::slice_rows(proj, t * batch, batch), h, c);
    outputs[static_cast<std::size_t>(t)] = h;
  }
  return ad::concat_rows(outputs);
}

BiGRU::BiGRU(ParameterStore& store, const std::string& name, int in, int hidden, std::mt19937_64& rng)
    : forward_(store, name + ".fw", in, hidden, rng), backward_(store, name + ".bw", in, hidden, rng) {}

Var BiGRU::operator()(Tape& tape, const Var& x, Eigen::Index batch) const {
  return ad::concat_cols({RunGRU(tape, forward_, x, batch, false), RunGRU(tape, backward_, x, batch, true)});
}

Highway::Highway(ParameterStore& store, const std::string& name, int dim, std::mt19937_64& rng)
    : transform_(store, name + ".H", dim, dim, rng), gate_(store, name + ".T", dim, dim, rng) {}

Var Highway::operator()(Tape& tape, const Var& x) const {
  Var h = ad::relu(transform_(tape, x));
  Var t = ad::sigmoid(gate_(tape, x));
  // t * h + (1 - t) * x
  return ad::add(x, ad::mul(t, ad::sub(h, x)));
}

Cbhg::Cbhg(ParameterStore& store, const std::string& name, const CbhgConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  if (cfg.bank_size < 1) throw Error(ErrorCode::kInvalidArgument, "CBHG bank size must be >= 1");
  for (int k = 1; k <= cfg.bank_size; ++k)
    bank_.emplace_back(store, name + ".bank" + std::to_string(k), cfg.in_dim, cfg.bank_channels, k, rng);
  projection1_ = Conv1d(store, name + ".proj1", cfg.bank_size * cfg.bank_channels, cfg.projection_dim, 3, rng);
  projection2_ = Conv1d(store, name + ".proj2", cfg.projection_dim, cfg.in_dim, 3, rng);
  if (cfg.in_dim != cfg.highway_dim) {
    pre_highway_ = Linear(store, name + ".pre_highway", cfg.in_dim, cfg.highway_dim, rng, false);
    has_pre_highway_ = true;
  }
  for (int i = 0; i < cfg.highway_layers; ++i)
    highways_.emplace_back(store, name + ".highway" + std::to_string(i + 1), cfg.highway_dim, rng);
  gru_ = BiGRU(store, name + ".gru", cfg.highway_dim, cfg.gru_dim, rng);
}

Var Cbhg::operator()(Tape& tape, const Var& x, Eigen::Index batch) const {
  if (x.cols() != cfg_.in_dim)
    throw Error(ErrorCode::kShapeMismatch, "CBHG input width " + std::to_string(x.cols()) +
                                               " != " + std::to_string(cfg_.in_dim));
  if (x.rows() == 0 || x.rows() % batch != 0)
    throw Error(ErrorCode::kShapeMismatch, "CBHG input needs L >= 1 full time steps");
  std::vector<Var> bank;
  bank.reserve(bank_.size());
  for (const auto& conv : bank_) bank.push_back(ad::relu(conv(tape, x, batch)));
  Var h = bank.size() == 1 ? bank[0] : ad::concat_cols(bank);
  h = ad::max_pool_pair(h, batch);
  h = ad::relu(projection1_(tape, h, batch));
  h = projection2_(tape, h, batch);
  h = ad::add(h, x);
  if (has_pre_highway_) h = pre_highway_(tape, h);
  for (const auto& hw : highways_) h = hw(tape, h);
  return gru_(tape, h, batch);
}

}  // namespace mtlvc::nn
