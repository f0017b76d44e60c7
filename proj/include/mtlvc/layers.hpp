#pragma once

#include <random>
#include <string>
#include <vector>

#include "mtlvc/autodiff.hpp"

namespace mtlvc::nn {

using ad::Parameter;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

// Per-forward settings: dropout is applied only when training.
struct RunContext {
  Tape& tape;
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

// Uniform(-a, a) with a = sqrt(3 / fan_in).
void InitFanIn(Parameter& p, Eigen::Index fan_in, std::mt19937_64& rng);
// Each consecutive square column block of `p` becomes an orthogonal matrix.
void InitOrthogonalBlocks(Parameter& p, std::mt19937_64& rng);

// Inverted-dropout mask: entries are 0 or 1/(1-rate).
Matrix DropoutMask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng);
Var Dropout(const RunContext& ctx, const Var& x, double rate);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
         bool bias = true);
  Var operator()(Tape& tape, const Var& x) const;
  int in() const { return in_; }
  int out() const { return out_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  int in_ = 0;
  int out_ = 0;
};

// 'Same'-padded 1-D convolution along time over a time-major (T*B) x in input.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& name, int in, int out, int width,
         std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x, Eigen::Index batch) const;
  int width() const { return width_; }

 private:
  Parameter* weight_ = nullptr;  // (width * in) x out
  Parameter* bias_ = nullptr;
  int in_ = 0;
  int out_ = 0;
  int width_ = 1;
};

// Two FC-ReLU-Dropout layers (or as many as dims has entries).
class Prenet {
 public:
  Prenet() = default;
  Prenet(ParameterStore& store, const std::string& name, int in, const std::vector<int>& dims,
         double dropout, std::mt19937_64& rng);
  Var operator()(const RunContext& ctx, const Var& x) const;
  int out() const { return layers_.empty() ? 0 : layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
  double dropout_ = 0.0;
};

class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(ParameterStore& store, const std::string& name, int in, int hidden, std::mt19937_64& rng);
  // Input projection for a whole sequence ((T*B) x 3H).
  Var project(Tape& tape, const Var& x) const;
  // One step given the projected input rows for this step.
  Var step(Tape& tape, const Var& x_proj, const Var& h) const;
  Var step_raw(Tape& tape, const Var& x, const Var& h) const { return step(tape, project(tape, x), h); }
  int hidden() const { return hidden_; }

 private:
  Parameter* w_ih_ = nullptr;
  Parameter* w_hh_ = nullptr;
  Parameter* b_ih_ = nullptr;
  Parameter* b_hh_ = nullptr;
  int hidden_ = 0;
};

class LSTMCell {
 public:
  LSTMCell() = default;
  LSTMCell(ParameterStore& store, const std::string& name, int in, int hidden, std::mt19937_64& rng);
  Var project(Tape& tape, const Var& x) const;
  // Returns (h, c).
  std::pair<Var, Var> step(Tape& tape, const Var& x_proj, const Var& h, const Var& c) const;
  int hidden() const { return hidden_; }

 private:
  Parameter* w_ih_ = nullptr;
  Parameter* w_hh_ = nullptr;
  Parameter* bias_ = nullptr;
  int hidden_ = 0;
};

// Runs a recurrent cell over a time-major sequence starting from zero state
// and returns every hidden state in input order.
Var RunGRU(Tape& tape, const GRUCell& cell, const Var& x, Eigen::Index batch, bool reverse);
Var RunLSTM(Tape& tape, const LSTMCell& cell, const Var& x, Eigen::Index batch, bool reverse);

class BiGRU {
 public:
  BiGRU() = default;
  BiGRU(ParameterStore& store, const std::string& name, int in, int hidden, std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x, Eigen::Index batch) const;

 private:
  GRUCell forward_;
  GRUCell backward_;
};

class Highway {
 public:
  Highway() = default;
  Highway(ParameterStore& store, const std::string& name, int dim, std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x) const;

 private:
  Linear transform_;
  Linear gate_;
};

struct CbhgConfig {
  int in_dim = 128;
  int bank_size = 16;      // K: widths 1..K
  int bank_channels = 128;
  int projection_dim = 128;
  int highway_dim = 128;
  int highway_layers = 4;
  int gru_dim = 128;       // per direction
};

// Conv bank -> max-pool (width 2, stride 1) -> two conv projections ->
// residual add of the input -> highway stack -> bidirectional GRU.
class Cbhg {
 public:
  Cbhg() = default;
  Cbhg(ParameterStore& store, const std::string& name, const CbhgConfig& cfg, std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x, Eigen::Index batch) const;
  int out_dim() const { return 2 * cfg_.gru_dim; }

 private:
  CbhgConfig cfg_;
  std::vector<Conv1d> bank_;
  Conv1d projection1_;
  Conv1d projection2_;
  Linear pre_highway_;
  bool has_pre_highway_ = false;
  std::vector<Highway> highways_;
  BiGRU gru_;
};

}  // namespace mtlvc::nn
