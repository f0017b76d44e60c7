#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlvc/types.hpp"

// Reverse-mode differentiation over dense row-major matrices.
//
// Sequences are laid out time-major in a single matrix: row t * B + b holds
// step t of batch item b. Row shifts by multiples of B therefore move whole
// time steps, which is how convolutions and pooling are expressed.
namespace mtlvc::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Set when a recording tape reads the parameter; cleared by zero_grad.
  bool used = false;
};

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  // Throws InvalidArgument on a duplicate name.
  Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  // Creation order.
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  std::vector<std::string> names() const;

  void zero_grad();
  double grad_norm() const;
  // Scales all gradients so their global norm is at most max_norm; returns
  // the norm before clipping.
  double clip_grad_norm(double max_norm);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> index_;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  // A non-recording tape evaluates values only (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  // One leaf per parameter per tape; repeated calls return the same Var.
  Var param(Parameter& p);

  // Creates a node; `backward` is dropped unless some input requires grad.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

  // Seeds d(loss)/d(loss) = 1 and propagates into parameter gradients.
  void backward(const Var& loss);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  // Gradient accumulator for a node, allocated as zeros on first use.
  Matrix& grad(int id);

  std::size_t node_count() const { return nodes_.size(); }
  // Id the next recorded node will receive.
  int next_id() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

// Shape-checked operations. All throw ShapeMismatch on incompatible inputs.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// Adds a 1 x C row to every row of a.
Var add_row(const Var& a, const Var& row);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, const std::vector<int>& rows);
// out[i] = a[i + offset] when in range, else 0.
Var shift_rows(const Var& a, Eigen::Index offset);
// out[i] = max(a[i], a[i + offset]); rows without a partner pass through.
Var max_pool_pair(const Var& a, Eigen::Index offset);
// Stacks `times` copies of a vertically.
Var repeat_rows(const Var& a, Eigen::Index times);
// (L*B) x 1 time-major column -> B x L.
Var blocks_to_cols(const Var& a, Eigen::Index batch);
Var softmax_rows(const Var& a);
// out[b] = sum_i weights(b, i) * values[i * B + b]; weights B x L, values (L*B) x E.
Var weighted_blocks(const Var& weights, const Var& values);

// Mean of |a - target| over all elements, as a 1 x 1 node.
Var mean_abs_error(const Var& a, const Matrix& target);
Var sum(const Var& a);
// Sum of a .* weights (1 x 1).
Var dot(const Var& a, const Matrix& weights);

}  // namespace mtlvc::ad
