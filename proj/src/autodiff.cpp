#include "skd/autodiff.hpp"

#include "skd/error.hpp"

#include <cmath>
#include <string>

namespace skd {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw StateError("use of an unrecorded variable");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a non-1x1 variable");
  return v(0, 0);
}

Tape::Node& Tape::node(const Var& v) {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw StateError("variable belongs to another tape");
  return nodes_[v.id_];
}

const Tape::Node& Tape::node(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw StateError("variable belongs to another tape");
  return nodes_[v.id_];
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<Var> inputs, Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || node(in).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& root) {
  if (root.tape_ != this || root.id_ >= nodes_.size()) {
    throw StateError("backward called before the loss was recorded on this tape");
  }
  Node& r = nodes_[root.id_];
  if (r.value.size() != 1) throw ShapeError("backward root must be a 1x1 scalar");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  r.grad = Matrix::Ones(1, 1);
  r.has_grad = true;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  backward_done_ = true;
}

const Matrix& Tape::grad(const Var& v) const {
  if (!backward_done_) throw StateError("grad requested before backward");
  const Node& n = node(v);
  if (!n.has_grad) {
    static thread_local Matrix empty;
    empty = Matrix::Zero(n.value.rows(), n.value.cols());
    return empty;
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw ShapeError("adjoint shape " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()) +
                     " does not match value shape " + std::to_string(n.value.rows()) + "x" +
                     std::to_string(n.value.cols()));
  }
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

bool Tape::requires_grad(const Var& v) const { return node(v).requires_grad; }

namespace ad {
namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw StateError("variables from different tapes");
  return *a.tape();
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " by " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (tape.requires_grad(a)) tape.accumulate(a, g * b.value().transpose());
    if (tape.requires_grad(b)) tape.accumulate(b, a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add shape mismatch");
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("sub shape mismatch");
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, -g);
  });
}

Var scale(const Var& a, double s) {
  return a.tape()->record(a.value() * s, {a},
                          [a, s](Tape& tape, const Matrix& g) { tape.accumulate(a, g * s); });
}

Var add_row(const Var& x, const Var& bias) {
  Tape& t = same_tape(x, bias);
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw ShapeError("add_row bias shape mismatch");
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return t.record(std::move(out), {x, bias}, [x, bias](Tape& tape, const Matrix& g) {
    tape.accumulate(x, g);
    if (tape.requires_grad(bias)) tape.accumulate(bias, g.colwise().sum());
  });
}

Var tanh(const Var& x) {
  auto yv = std::make_shared<Matrix>(x.value().array().tanh().matrix());
  Matrix out = *yv;
  return x.tape()->record(std::move(out), {x}, [x, yv](Tape& tape, const Matrix& g) {
    tape.accumulate(x, (g.array() * (1.0 - yv->array().square())).matrix());
  });
}

Var sigmoid(const Var& x) {
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  Tape& t = *x.tape();
  auto yv = std::make_shared<Matrix>(out);
  return t.record(std::move(out), {x}, [x, yv](Tape& tape, const Matrix& g) {
    tape.accumulate(x, (g.array() * yv->array() * (1.0 - yv->array())).matrix());
  });
}

Var leaky_relu(const Var& x, double slope) {
  const Matrix& xv = x.value();
  Matrix out = xv.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  return x.tape()->record(std::move(out), {x}, [x, slope](Tape& tape, const Matrix& g) {
    const Matrix& xv = x.value();
    Matrix d = g;
    for (Index i = 0; i < d.size(); ++i) {
      if (!(xv.data()[i] > 0.0)) d.data()[i] *= slope;
    }
    tape.accumulate(x, d);
  });
}

Var gather_rows(const Var& x, std::vector<Index> rows) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) throw ShapeError("gather_rows index out of range");
    out.row(static_cast<Index>(i)) = xv.row(rows[i]);
  }
  return x.tape()->record(std::move(out), {x}, [x, rows = std::move(rows)](Tape& tape, const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(rows[i]) += g.row(static_cast<Index>(i));
    tape.accumulate(x, d);
  });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape& tape, const Matrix& g) {
    tape.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mse(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mse shape mismatch");
  const double n = static_cast<double>(a.value().size());
  auto diff = std::make_shared<Matrix>(a.value() - b.value());
  Matrix out(1, 1);
  out(0, 0) = diff->squaredNorm() / n;
  return t.record(std::move(out), {a, b}, [a, b, diff, n](Tape& tape, const Matrix& g) {
    const Matrix d = (2.0 * g(0, 0) / n) * *diff;
    tape.accumulate(a, d);
    tape.accumulate(b, -d);
  });
}

Var weighted_sum(std::initializer_list<std::pair<double, Var>> terms) {
  if (terms.size() == 0) throw ShapeError("weighted_sum of no terms");
  Tape& t = *terms.begin()->second.tape();
  std::vector<std::pair<double, Var>> items(terms);
  Matrix out = Matrix::Zero(1, 1);
  for (const auto& [w, v] : items) {
    if (v.tape() != &t) throw StateError("variables from different tapes");
    if (v.value().size() != 1) throw ShapeError("weighted_sum needs 1x1 terms");
    out(0, 0) += w * v.scalar();
  }
  std::vector<Var> inputs;
  for (const auto& item : items) inputs.push_back(item.second);
  return t.record(std::move(out), std::move(inputs), [items](Tape& tape, const Matrix& g) {
    for (const auto& [w, v] : items) tape.accumulate(v, Matrix::Constant(1, 1, w * g(0, 0)));
  });
}

Var pinv(const Var& a, double cutoff) {
  auto p = std::make_shared<Matrix>(skd::pinv(a.value(), cutoff));
  Matrix out = *p;
  return a.tape()->record(std::move(out), {a}, [a, p](Tape& tape, const Matrix& g) {
    tape.accumulate(a, pinv_backward(a.value(), *p, g));
  });
}

Var eigenvalue_functional(const Var& a, std::shared_ptr<const EigenDecomposition> decomposition,
                          double value, std::vector<Complex> grad_values) {
  if (!decomposition || decomposition->size() != a.rows() || a.rows() != a.cols()) {
    throw ShapeError("eigenvalue_functional decomposition does not match the matrix");
  }
  if (!std::isfinite(value)) throw NumericError("eigenvalue functional is not finite");
  Matrix out(1, 1);
  out(0, 0) = value;
  return a.tape()->record(std::move(out), {a},
                          [a, decomposition, grad_values = std::move(grad_values)](Tape& tape, const Matrix& g) {
                            Matrix adj = eigenvalue_adjoint(*decomposition, grad_values);
                            tape.accumulate(a, g(0, 0) * adj);
                          });
}

}  // namespace ad
}  // namespace skd
