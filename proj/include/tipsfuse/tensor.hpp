#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tipsfuse/matrix.hpp"

namespace tipsfuse::ad {

// A named, persistent learnable matrix. Owned by model components; the tape
// only refers to it.
struct Parameter {
  std::string name;
  Matrix value;
};

using ParamList = std::vector<Parameter*>;
using GradMap = std::unordered_map<const Parameter*, Matrix>;

class Tape;

// Lightweight handle to a node recorded on a Tape. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  // Convenience for 1x1 results.
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records a computation for one reverse-mode pass. Nodes are appended in
// evaluation order, so the node vector is already topologically sorted.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Tensor constant(Matrix value);
  // Leaf that receives a gradient but is not bound to a parameter (e.g. the
  // inputs of an attribution pass).
  Tensor variable(Matrix value);
  // Leaf bound to a parameter. Repeated calls return the same node.
  Tensor param(const Parameter& p);
  // Parameter value used as a constant (frozen sub-model).
  Tensor frozen(const Parameter& p);

  // Seeds d(loss)/d(loss) = 1 and propagates. Allowed once per tape.
  void backward(const Tensor& loss);

  // Gradient of the last backward pass with respect to t (zeros when t was
  // unreachable or does not require grad).
  Matrix grad(const Tensor& t) const;
  // Gradients for every parameter registered on this tape.
  GradMap parameter_grads() const;
  // Gradients for the listed parameters; unreachable ones are zero.
  GradMap parameter_grads(const ParamList& params) const;

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Node construction used by the op implementations.
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  Tensor record(const char* op, Matrix value, std::initializer_list<Tensor> inputs,
                BackwardFn fn);
  Tensor record(const char* op, Matrix value, std::span<const Tensor> inputs, BackwardFn fn);
  // Adds g into the gradient slot of node id (no-op when it needs no grad).
  void accumulate(std::size_t id, const Matrix& g);
  // Adds scale*g[i] elementwise without allocating a temporary.
  void accumulate_scaled(std::size_t id, const Matrix& g, double scale);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    BackwardFn backward;
  };

  Tensor push(const char* op, Matrix value, bool requires_grad, BackwardFn fn);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Binary elementwise ops broadcast the right-hand
// operand when it is 1x1, 1xC (row vector) or Rx1 (column vector).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor row_softmax(const Tensor& a);
Tensor selu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
// log(max(x, 1e-12)); the gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
// Rx1 column of Euclidean row norms.
Tensor l2_row_norms(const Tensor& a);
// Each row divided by its norm; rows with norm < 1e-12 map to zero.
Tensor normalize_rows(const Tensor& a);
// Per-row standardisation (x - mean) / sqrt(var + eps), no affine part.
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double c);

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}
inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

// Canonical self-normalising constants.
inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

}  // namespace tipsfuse::ad
