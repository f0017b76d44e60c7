#include "mtlvc/autodiff.hpp"

#include <cmath>

#include "mtlvc/error.hpp"

namespace mtlvc::ad {

namespace {

void Require(bool ok, const char* op, const Var& a, const Var& b) {
  if (!ok) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void Require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

}  // namespace

ParameterStore::ParameterStore(const ParameterStore& other) { *this = other; }

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this == &other) return *this;
  params_.clear();
  index_.clear();
  for (const auto& p : other.params_) {
    params_.push_back(std::make_unique<Parameter>(*p));
    index_[p->name] = params_.back().get();
  }
  return *this;
}

Parameter& ParameterStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (index_.count(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  index_[name] = p.get();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "no parameter named " + name);
  return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "no parameter named " + name);
  return *it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->name);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    p->grad.setZero();
    p->used = false;
  }
}

double ParameterStore::grad_norm() const {
  double acc = 0.0;
  for (const auto& p : params_) acc += p->grad.squaredNorm();
  return std::sqrt(acc);
}

double ParameterStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params_) p->grad *= s;
  }
  return norm;
}

const Matrix& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  if (record_) p.used = true;
  nodes_.push_back(Node{p.value, Matrix(), record_, nullptr, &p});
  const int id = static_cast<int>(nodes_.size() - 1);
  param_ids_[&p] = id;
  return Var(this, id);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool rg = false;
  if (record_)
    for (const auto& v : inputs) rg = rg || v.requires_grad();
  nodes_.push_back(Node{std::move(value), Matrix(), rg, rg ? std::move(backward) : nullptr, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool rg = false;
  if (record_)
    for (const auto& v : inputs) rg = rg || v.requires_grad();
  nodes_.push_back(Node{std::move(value), Matrix(), rg, rg ? std::move(backward) : nullptr, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  Require(loss.rows() == 1 && loss.cols() == 1, "backward needs a scalar loss");
  if (!loss.requires_grad()) return;
  grad(loss.id()).setConstant(1.0);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      // Move the gradient out so the callback can grow nodes_ safely.
      Matrix g = std::move(n.grad);
      n.backward(*this, g);
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  Require(a.cols() == b.rows(), "matmul", a, b);
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += g;
  });
}

Var sub(const Var& a, const Var& b) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a, b);
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](Tape& t, const Matrix& g) {
                           if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
                           if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
                         });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape().record(a.value() * s, {a}, [ia, s](Tape& t, const Matrix& g) { t.grad(ia) += g * s; });
}

Var add_row(const Var& a, const Var& row) {
  Require(row.rows() == 1 && row.cols() == a.cols(), "add_row", a, row);
  const int ia = a.id();
  const int ir = row.id();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  const int io = a.tape().next_id();
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return a.tape().record(std::move(out), {a}, [ia, io](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(io);
    t.grad(ia) += g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  const int io = a.tape().next_id();
  return a.tape().record(a.value().array().tanh().matrix(), {a}, [ia, io](Tape& t, const Matrix& g) {
    t.grad(ia) += g.cwiseProduct((1.0 - t.value(io).array().square()).matrix());
  });
}

Var relu(const Var& a) {
  const int ia = a.id();
  return a.tape().record(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, const Matrix& g) {
    t.grad(ia) += (t.value(ia).array() > 0.0).select(g, 0.0).matrix();
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  Require(!parts.empty(), "concat_cols of nothing");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    Require(p.rows() == rows, "concat_cols", parts[0], p);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(c);
    c += p.cols();
  }
  return parts[0].tape().record(std::move(out), parts, [ids, offsets](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Matrix& dst = t.grad(ids[k]);
      dst += g.middleCols(offsets[k], dst.cols());
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  Require(!parts.empty(), "concat_rows of nothing");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    Require(p.cols() == cols, "concat_rows", parts[0], p);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(r);
    r += p.rows();
  }
  return parts[0].tape().record(std::move(out), parts, [ids, offsets](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Matrix& dst = t.grad(ids[k]);
      dst += g.middleRows(offsets[k], dst.rows());
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  Require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  const int ia = a.id();
  return a.tape().record(a.value().middleCols(start, count), {a},
                         [ia, start, count](Tape& t, const Matrix& g) {
                           t.grad(ia).middleCols(start, count) += g;
                         });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  Require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  const int ia = a.id();
  return a.tape().record(a.value().middleRows(start, count), {a},
                         [ia, start, count](Tape& t, const Matrix& g) {
                           t.grad(ia).middleRows(start, count) += g;
                         });
}

Var gather_rows(const Var& a, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Require(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, rows](Tape& t, const Matrix& g) {
    Matrix& dst = t.grad(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) dst.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var shift_rows(const Var& a, Eigen::Index offset) {
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, a.cols());
  // out[i] = a[i + offset]
  const Eigen::Index lo = std::max<Eigen::Index>(0, -offset);
  const Eigen::Index hi = std::min<Eigen::Index>(n, n - offset);
  if (hi > lo) out.middleRows(lo, hi - lo) = a.value().middleRows(lo + offset, hi - lo);
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, lo, hi, offset](Tape& t, const Matrix& g) {
    if (hi > lo) t.grad(ia).middleRows(lo + offset, hi - lo) += g.middleRows(lo, hi - lo);
  });
}

Var max_pool_pair(const Var& a, Eigen::Index offset) {
  Require(offset > 0, "max_pool_pair offset must be positive");
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows();
  Matrix out = x;
  // 1 where the partner row wins.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> partner =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(n, x.cols(), false);
  for (Eigen::Index i = 0; i + offset < n; ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(i + offset, j) > x(i, j)) {
        out(i, j) = x(i + offset, j);
        partner(i, j) = true;
      }
    }
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, offset, partner](Tape& t, const Matrix& g) {
    Matrix& dst = t.grad(ia);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        dst(partner(i, j) ? i + offset : i, j) += g(i, j);
  });
}

Var repeat_rows(const Var& a, Eigen::Index times) {
  const Eigen::Index n = a.rows();
  Matrix out(n * times, a.cols());
  for (Eigen::Index k = 0; k < times; ++k) out.middleRows(k * n, n) = a.value();
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, n, times](Tape& t, const Matrix& g) {
    Matrix& dst = t.grad(ia);
    for (Eigen::Index k = 0; k < times; ++k) dst += g.middleRows(k * n, n);
  });
}

Var blocks_to_cols(const Var& a, Eigen::Index batch) {
  Require(a.cols() == 1 && batch > 0 && a.rows() % batch == 0, "blocks_to_cols shape");
  const Eigen::Index len = a.rows() / batch;
  Matrix out(batch, len);
  for (Eigen::Index i = 0; i < len; ++i)
    for (Eigen::Index b = 0; b < batch; ++b) out(b, i) = a.value()(i * batch + b, 0);
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, batch, len](Tape& t, const Matrix& g) {
    Matrix& dst = t.grad(ia);
    for (Eigen::Index i = 0; i < len; ++i)
      for (Eigen::Index b = 0; b < batch; ++b) dst(i * batch + b, 0) += g(b, i);
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    // Vectorized exp can return denormals far below double underflow; masked
    // entries must come out as exact zeros.
    const auto shifted = (out.row(r).array() - m).eval();
    out.row(r) = (shifted < -745.0).select(0.0, shifted.exp()).matrix();
    out.row(r) /= out.row(r).sum();
  }
  const int ia = a.id();
  const int io = a.tape().next_id();
  return a.tape().record(std::move(out), {a}, [ia, io](Tape& t, const Matrix& g) {
    // dx = y * (g - sum(g * y))
    const Matrix& y = t.value(io);
    const Vector inner = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = g;
    dx.colwise() -= inner;
    t.grad(ia) += dx.cwiseProduct(y);
  });
}

Var weighted_blocks(const Var& weights, const Var& values) {
  const Eigen::Index batch = weights.rows();
  const Eigen::Index len = weights.cols();
  Require(values.rows() == batch * len, "weighted_blocks", weights, values);
  Matrix out = Matrix::Zero(batch, values.cols());
  for (Eigen::Index i = 0; i < len; ++i)
    for (Eigen::Index b = 0; b < batch; ++b)
      out.row(b) += weights.value()(b, i) * values.value().row(i * batch + b);
  const int iw = weights.id();
  const int iv = values.id();
  return weights.tape().record(std::move(out), {weights, values},
                               [iw, iv, batch, len](Tape& t, const Matrix& g) {
                                 const Matrix& w = t.value(iw);
                                 const Matrix& v = t.value(iv);
                                 if (t.requires_grad(iw)) {
                                   Matrix& dw = t.grad(iw);
                                   for (Eigen::Index i = 0; i < len; ++i)
                                     for (Eigen::Index b = 0; b < batch; ++b)
                                       dw(b, i) += g.row(b).dot(v.row(i * batch + b));
                                 }
                                 if (t.requires_grad(iv)) {
                                   Matrix& dv = t.grad(iv);
                                   for (Eigen::Index i = 0; i < len; ++i)
                                     for (Eigen::Index b = 0; b < batch; ++b)
                                       dv.row(i * batch + b) += w(b, i) * g.row(b);
                                 }
                               });
}

Var mean_abs_error(const Var& a, const Matrix& target) {
  Require(a.rows() == target.rows() && a.cols() == target.cols(),
          "mean_abs_error: prediction " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
              " vs target " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  const double n = static_cast<double>(target.size());
  Matrix diff = a.value() - target;
  Matrix out(1, 1);
  out(0, 0) = n > 0 ? diff.cwiseAbs().sum() / n : 0.0;
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, n, diff = std::move(diff)](Tape& t, const Matrix& g) {
    t.grad(ia) += (diff.array().sign() * (g(0, 0) / n)).matrix();
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    t.grad(ia).array() += g(0, 0);
  });
}

Var dot(const Var& a, const Matrix& weights) {
  Require(a.rows() == weights.rows() && a.cols() == weights.cols(), "dot weight shape");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, weights](Tape& t, const Matrix& g) {
    t.grad(ia) += weights * g(0, 0);
  });
}

}  // namespace mtlvc::ad
