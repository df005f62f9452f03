#include "fnode/tape.hpp"

#include <algorithm>
#include <cmath>

#include "fnode/kernels.hpp"

namespace fnode::tg {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddScaled: return "add_scaled";
    case Op::Scale: return "scale";
    case Op::MulScalar: return "mul_scalar";
    case Op::AddRow: return "add_row";
    case Op::Linear: return "linear";
    case Op::MatMul: return "matmul";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, const Shape& a, const Shape& b) {
  throw Error(std::string(op_name(op)) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_same(Op op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto o = out.data();
  auto in = a.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

const Tensor& Var::value() const {
  if (tape == nullptr) throw Error("value() on a null Var");
  return tape->value(*this);
}

std::size_t Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error("Var does not belong to this tape");
  }
  return static_cast<std::size_t>(v.id);
}

Var Tape::push(Op op, std::vector<int> inputs, Tensor value, double k, std::size_t offset) {
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite value produced by primitive #" + std::to_string(nodes_.size()) + " (" +
                             std::string(op_name(op)) + ")",
                         nodes_.size());
  }
  Node n;
  n.op = op;
  for (int id : inputs)
    if (id >= 0 && nodes_[id].requires_grad) n.requires_grad = true;
  n.inputs = std::move(inputs);
  n.k = k;
  n.offset = offset;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  Var v = push(Op::Leaf, {}, std::move(value));
  nodes_.back().requires_grad = true;
  return v;
}

Var Tape::constant(Tensor value) { return push(Op::Leaf, {}, std::move(value)); }

Var Tape::add(Var a, Var b) {
  const auto& x = nodes_[check(a)].value;
  const auto& y = nodes_[check(b)].value;
  require_same(Op::Add, x, y);
  return push(Op::Add, {a.id, b.id}, map_binary(x, y, [](double p, double q) { return p + q; }));
}

Var Tape::sub(Var a, Var b) {
  const auto& x = nodes_[check(a)].value;
  const auto& y = nodes_[check(b)].value;
  require_same(Op::Sub, x, y);
  return push(Op::Sub, {a.id, b.id}, map_binary(x, y, [](double p, double q) { return p - q; }));
}

Var Tape::mul(Var a, Var b) {
  const auto& x = nodes_[check(a)].value;
  const auto& y = nodes_[check(b)].value;
  require_same(Op::Mul, x, y);
  return push(Op::Mul, {a.id, b.id}, map_binary(x, y, [](double p, double q) { return p * q; }));
}

Var Tape::add_scaled(Var a, Var b, double k) {
  const auto& x = nodes_[check(a)].value;
  const auto& y = nodes_[check(b)].value;
  require_same(Op::AddScaled, x, y);
  return push(Op::AddScaled, {a.id, b.id}, map_binary(x, y, [k](double p, double q) { return p + k * q; }), k);
}

Var Tape::scale(Var a, double k) {
  const auto& x = nodes_[check(a)].value;
  return push(Op::Scale, {a.id}, map_unary(x, [k](double p) { return k * p; }), k);
}

Var Tape::mul_scalar(Var a, Var s) {
  const auto& x = nodes_[check(a)].value;
  const auto& sv = nodes_[check(s)].value;
  if (sv.size() != 1) shape_error(Op::MulScalar, x.shape(), sv.shape());
  const double c = sv[0];
  return push(Op::MulScalar, {a.id, s.id}, map_unary(x, [c](double p) { return p * c; }));
}

Var Tape::add_row(Var m, Var row) {
  const auto& x = nodes_[check(m)].value;
  const auto& r = nodes_[check(row)].value;
  if (x.rank() != 2 || r.rank() != 1 || r.size() != x.cols()) shape_error(Op::AddRow, x.shape(), r.shape());
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) += r[j];
  return push(Op::AddRow, {m.id, row.id}, std::move(out));
}

Var Tape::linear(Var x, Var w, Var b) {
  const auto& xv = nodes_[check(x)].value;
  const auto& wv = nodes_[check(w)].value;
  if (wv.rank() != 2 || (xv.rank() != 1 && xv.rank() != 2) || xv.cols() != wv.shape()[1]) {
    shape_error(Op::Linear, xv.shape(), wv.shape());
  }
  const std::size_t out = wv.shape()[0];
  std::span<const double> bias;
  int bid = -1;
  if (b.tape != nullptr) {
    const auto& bv = nodes_[check(b)].value;
    if (bv.rank() != 1 || bv.size() != out) shape_error(Op::Linear, wv.shape(), bv.shape());
    bias = bv.data();
    bid = b.id;
  }
  const kernels::LinearDims d{xv.rows(), wv.shape()[1], out};
  Tensor y(xv.rank() == 1 ? Shape{out} : Shape{d.batch, out});
  kernels::par::linear_forward(d, xv.data(), wv.data(), bias, y.data());
  return push(Op::Linear, {x.id, w.id, bid}, std::move(y));
}

Var Tape::matmul(Var a, Var b) {
  const auto& av = nodes_[check(a)].value;
  const auto& bv = nodes_[check(b)].value;
  if (av.rank() != 2 || bv.rank() < 1 || bv.shape()[0] != av.shape()[1]) {
    shape_error(Op::MatMul, av.shape(), bv.shape());
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.rank() == 2 ? bv.shape()[1] : 1;
  Tensor c(bv.rank() == 2 ? Shape{m, n} : Shape{m});
  kernels::par::matmul(m, k, n, av.data(), bv.data(), c.data());
  return push(Op::MatMul, {a.id, b.id}, std::move(c));
}

Var Tape::tanh(Var a) {
  const Tensor& x = nodes_[check(a)].value;
  Tensor y(x.shape());
  kernels::tanh(x.data(), y.data());
  return push(Op::Tanh, {a.id}, std::move(y));
}

Var Tape::exp(Var a) {
  return push(Op::Exp, {a.id}, map_unary(nodes_[check(a)].value, [](double p) { return std::exp(p); }));
}

Var Tape::log(Var a) {
  return push(Op::Log, {a.id}, map_unary(nodes_[check(a)].value, [](double p) { return std::log(p); }));
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : nodes_[check(a)].value.data()) s += v;
  return push(Op::Sum, {a.id}, Tensor::scalar(s));
}

Var Tape::mean(Var a) {
  const auto& x = nodes_[check(a)].value;
  if (x.size() == 0) throw Error("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return push(Op::Mean, {a.id}, Tensor::scalar(s / static_cast<double>(x.size())));
}

Var Tape::square(Var a) {
  return push(Op::Square, {a.id}, map_unary(nodes_[check(a)].value, [](double p) { return p * p; }));
}

Var Tape::concat(std::span<const Var> parts) {
  std::vector<int> ids;
  std::vector<double> data;
  for (Var p : parts) {
    const auto& v = nodes_[check(p)].value;
    ids.push_back(p.id);
    data.insert(data.end(), v.values().begin(), v.values().end());
  }
  return push(Op::Concat, std::move(ids), Tensor::vector(std::move(data)));
}

Var Tape::slice(Var a, std::size_t offset, Shape shape) {
  const auto& x = nodes_[check(a)].value;
  const std::size_t n = shape_size(shape);
  if (offset + n > x.size()) {
    throw Error("slice: range [" + std::to_string(offset) + "," + std::to_string(offset + n) + ") exceeds " +
                shape_str(x.shape()));
  }
  std::vector<double> data(x.values().begin() + static_cast<long>(offset),
                           x.values().begin() + static_cast<long>(offset + n));
  return push(Op::Slice, {a.id}, Tensor(std::move(shape), std::move(data)), 0.0, offset);
}

Var Tape::reshape(Var a, Shape shape) {
  const auto& x = nodes_[check(a)].value;
  if (shape_size(shape) != x.size()) shape_error(Op::Reshape, x.shape(), shape);
  return push(Op::Reshape, {a.id}, x.reshaped(std::move(shape)));
}

Tensor& Tape::grad_buffer(std::size_t i) {
  auto& n = nodes_[i];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var root) {
  const auto& v = nodes_[check(root)].value;
  if (v.size() != 1) throw Error("backward: output must be scalar, got shape " + shape_str(v.shape()));
  Tensor seed(v.shape());
  seed[0] = 1.0;
  std::pair<Var, Tensor> s{root, std::move(seed)};
  backward(std::span<const std::pair<Var, Tensor>>(&s, 1));
}

void Tape::backward(std::span<const std::pair<Var, Tensor>> seeds) {
  for (auto& n : nodes_) n.grad = Tensor();
  std::size_t last = 0;
  for (const auto& [var, cot] : seeds) {
    const std::size_t i = check(var);
    require_same(Op::Leaf, nodes_[i].value, cot);
    auto& g = grad_buffer(i);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += cot[j];
    last = std::max(last, i);
  }
  if (!seeds.empty()) sweep(last);
}

void Tape::sweep(std::size_t last) {
  for (std::size_t i = last + 1; i-- > 0;) {
    const auto& n = nodes_[i];
    if (n.op == Op::Leaf || !n.requires_grad || n.grad.size() != n.value.size()) continue;
    backprop_node(i);
  }
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_[check(v)];
  if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) return n.grad;
  return Tensor(n.value.shape());
}

void Tape::backprop_node(std::size_t i) {
  // grad_buffer() only touches other nodes' buffers, so `g` stays valid.
  const Node& n = nodes_[i];
  const Tensor& g = n.grad;
  auto wants = [&](int id) { return id >= 0 && nodes_[id].requires_grad; };
  auto gin = [&](int id) -> Tensor& { return grad_buffer(static_cast<std::size_t>(id)); };
  const int a = n.inputs.empty() ? -1 : n.inputs[0];
  const int b = n.inputs.size() > 1 ? n.inputs[1] : -1;

  switch (n.op) {
    case Op::Leaf: break;
    case Op::Add:
    case Op::Sub:
    case Op::AddScaled: {
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      }
      if (wants(b)) {
        const double k = n.op == Op::Add ? 1.0 : n.op == Op::Sub ? -1.0 : n.k;
        auto& gb = gin(b);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] += k * g[j];
      }
      break;
    }
    case Op::Mul: {
      const auto& av = nodes_[a].value;
      const auto& bv = nodes_[b].value;
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * bv[j];
      }
      if (wants(b)) {
        auto& gb = gin(b);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * av[j];
      }
      break;
    }
    case Op::Scale: {
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.k * g[j];
      }
      break;
    }
    case Op::MulScalar: {
      const auto& av = nodes_[a].value;
      const double s = nodes_[b].value[0];
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * s;
      }
      if (wants(b)) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) acc += g[j] * av[j];
        gin(b)[0] += acc;
      }
      break;
    }
    case Op::AddRow: {
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      }
      if (wants(b)) {
        auto& gb = gin(b);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
      }
      break;
    }
    case Op::Linear: {
      const int bias = n.inputs[2];
      const auto& xv = nodes_[a].value;
      const auto& wv = nodes_[b].value;
      const kernels::LinearDims d{xv.rows(), wv.shape()[1], wv.shape()[0]};
      std::span<double> dx, dw, db;
      if (wants(a)) dx = gin(a).data();
      if (wants(b)) dw = gin(b).data();
      if (wants(bias)) db = gin(bias).data();
      kernels::par::linear_backward(d, g.data(), xv.data(), wv.data(), dx, dw, db);
      break;
    }
    case Op::MatMul: {
      const auto& av = nodes_[a].value;
      const auto& bv = nodes_[b].value;
      const std::size_t m = av.shape()[0], k = av.shape()[1], cols = bv.rank() == 2 ? bv.shape()[1] : 1;
      std::span<double> da, db;
      if (wants(a)) da = gin(a).data();
      if (wants(b)) db = gin(b).data();
      kernels::matmul_backward(m, k, cols, g.data(), av.data(), bv.data(), da, db);
      break;
    }
    case Op::Tanh: {
      if (wants(a)) {
        auto& ga = gin(a);
        const auto& y = n.value;
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * (1.0 - y[j] * y[j]);
      }
      break;
    }
    case Op::Exp: {
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * n.value[j];
      }
      break;
    }
    case Op::Log: {
      if (wants(a)) {
        auto& ga = gin(a);
        const auto& x = nodes_[a].value;
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] / x[j];
      }
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      if (wants(a)) {
        auto& ga = gin(a);
        const double s = n.op == Op::Sum ? g[0] : g[0] / static_cast<double>(ga.size());
        for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += s;
      }
      break;
    }
    case Op::Square: {
      if (wants(a)) {
        auto& ga = gin(a);
        const auto& x = nodes_[a].value;
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += 2.0 * x[j] * g[j];
      }
      break;
    }
    case Op::Concat: {
      std::size_t off = 0;
      for (int id : n.inputs) {
        const std::size_t len = nodes_[id].value.size();
        if (wants(id)) {
          auto& gp = gin(id);
          for (std::size_t j = 0; j < len; ++j) gp[j] += g[off + j];
        }
        off += len;
      }
      break;
    }
    case Op::Slice: {
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[n.offset + j] += g[j];
      }
      break;
    }
    case Op::Reshape: {
      if (wants(a)) {
        auto& ga = gin(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      }
      break;
    }
  }
}

Var operator+(Var a, Var b) { return a.tape->add(a, b); }
Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
Var operator*(double k, Var a) { return a.tape->scale(a, k); }
Var operator-(Var a) { return a.tape->scale(a, -1.0); }
Var tanh(Var a) { return a.tape->tanh(a); }
Var exp(Var a) { return a.tape->exp(a); }
Var log(Var a) { return a.tape->log(a); }
Var sum(Var a) { return a.tape->sum(a); }
Var mean(Var a) { return a.tape->mean(a); }
Var square(Var a) { return a.tape->square(a); }

}  // namespace fnode::tg
