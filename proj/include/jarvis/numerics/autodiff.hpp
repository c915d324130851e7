#pragma once

#include "jarvis/numerics/rng.hpp"
#include "jarvis/numerics/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace jarvis {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamically recorded reverse-mode tape. Confined to one thread.
class Tape {
 public:
  /// Receives the gradient of the loss w.r.t. the node's output and must
  /// accumulate into the inputs via Tape::accumulate.
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Constant that aliases `value`; the referent must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Leaf bound to a parameter. Frozen parameters become constants.
  Var parameter(Parameter& p);
  Var record(Tensor value, bool requires_grad, Backward backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Propagates d(loss)/d(.) to every reachable Parameter, adding into
  /// Parameter::grad. Node gradients are reset first, so the tape may be
  /// replayed; parameter gradients accumulate across calls.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

// Coarse-grained differentiable operations. All inputs must share a tape.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// x (R x C) plus column vector b (R x 1) broadcast over columns.
Var add_bias(const Var& x, const Var& b);
/// Normalizes each column over its rows, then applies gain/bias (R x 1).
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
/// axis 0: every column sums to one; axis 1: every row sums to one.
Var softmax(const Var& x, int axis);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
/// Training mode zeroes entries with probability `rate` and rescales the
/// rest by 1/(1-rate); inference mode returns `x` itself.
Var dropout(const Var& x, double rate, RngStream& rng, bool training);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
/// Sum of all entries as a 1 x 1 tensor.
Var sum(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return matmul(a, b); }

// Pointwise helpers shared with non-tape code.
double gelu_value(double x);
double gelu_derivative(double x);
double sigmoid_value(double x);
/// log(1 + e^x) without overflow.
double softplus(double x);

}  // namespace jarvis
