#pragma once

#include "skd/linalg.hpp"
#include "skd/tensor.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <vector>

namespace skd {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  // Value of a 1x1 variable.
  double scalar() const;

  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording of matrix operations. One tape per forward pass,
// confined to a single thread.
class Tape {
 public:
  // Receives the adjoint of the node's output and accumulates into inputs.
  using Backward = std::function<void(Tape& tape, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);
  // Records an operation. The node needs a gradient iff any input does.
  Var record(Matrix value, std::vector<Var> inputs, Backward backward);

  // Fills adjoints of every node reachable from `root`, which must be 1x1.
  void backward(const Var& root);

  // Adjoint of a node after backward(); zeros when it received none.
  const Matrix& grad(const Var& v) const;
  void accumulate(const Var& v, const Matrix& g);
  bool requires_grad(const Var& v) const;

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  Node& node(const Var& v);
  const Node& node(const Var& v) const;

  // deque: references to recorded values stay valid as the tape grows.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

namespace ad {

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// x (n x d) + bias (1 x d) broadcast over rows.
Var add_row(const Var& x, const Var& bias);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var leaky_relu(const Var& x, double slope);
// Rows of x at `rows`, in order; rows may repeat.
Var gather_rows(const Var& x, std::vector<Index> rows);
Var sum(const Var& x);
// Mean of squared differences over all entries, 1x1.
Var mse(const Var& a, const Var& b);
// Weighted sum of 1x1 variables.
Var weighted_sum(std::initializer_list<std::pair<double, Var>> terms);
Var pinv(const Var& a, double cutoff = kPinvCutoff);

// 1x1 node whose value is a real function of the eigenvalues of the square
// matrix `a`. `decomposition` must be eig(a.value()) and grad_values the
// complex gradient of the function with respect to each eigenvalue.
Var eigenvalue_functional(const Var& a, std::shared_ptr<const EigenDecomposition> decomposition,
                          double value, std::vector<Complex> grad_values);

}  // namespace ad
}  // namespace skd
