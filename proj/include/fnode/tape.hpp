#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "fnode/tensor.hpp"

namespace fnode::tg {

// Raised when a primitive produces NaN/Inf; carries the primitive's index on the tape.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string msg, std::size_t index) : Error(std::move(msg)), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  AddScaled,
  Scale,
  MulScalar,
  AddRow,
  Linear,
  MatMul,
  Tanh,
  Exp,
  Log,
  Sum,
  Mean,
  Square,
  Concat,
  Slice,
  Reshape,
};

std::string_view op_name(Op op);

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

// Reverse-mode record of tensor primitives. Nodes are appended in evaluation
// order, so index order is a valid topological order for the backward sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf that receives a gradient.
  Var leaf(Tensor value);
  // A leaf excluded from differentiation.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  std::size_t size() const { return nodes_.size(); }
  Op op(Var v) const { return nodes_[check(v)].op; }

  // Seeds d(root)/d(root) = 1; root must hold exactly one value.
  void backward(Var root);
  // Vector-Jacobian product: seeds each listed node with the given cotangent.
  void backward(std::span<const std::pair<Var, Tensor>> seeds);
  // Gradient accumulated by the last backward(); zeros if the node was not reached.
  Tensor grad(Var v) const;

  // Primitive constructors; all validate shapes and reject non-finite results.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_scaled(Var a, Var b, double k);  // a + k*b
  Var scale(Var a, double k);
  Var mul_scalar(Var a, Var s);  // s holds one value
  Var add_row(Var m, Var row);   // [r,c] + [c] broadcast over rows
  Var linear(Var x, Var w, Var b);  // x[..,in] * w[out,in]^T + b[out]; b may be a null Var
  Var matmul(Var a, Var b);         // [m,k]x[k,n] or [m,k]x[k]
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var square(Var a);
  Var concat(std::span<const Var> parts);  // flat concatenation into a vector
  Var slice(Var a, std::size_t offset, Shape shape);  // contiguous flat range
  Var reshape(Var a, Shape shape);

 private:
  struct Node {
    Op op = Op::Leaf;
    bool requires_grad = false;
    std::vector<int> inputs;
    double k = 0.0;
    std::size_t offset = 0;
    Tensor value;
    Tensor grad;
  };

  std::size_t check(Var v) const;
  Var push(Op op, std::vector<int> inputs, Tensor value, double k = 0.0, std::size_t offset = 0);
  void sweep(std::size_t last);
  Tensor& grad_buffer(std::size_t i);
  void backprop_node(std::size_t i);

  std::vector<Node> nodes_;
};

// Operator sugar over the owning tape.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(double k, Var a);
Var operator-(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);

}  // namespace fnode::tg
