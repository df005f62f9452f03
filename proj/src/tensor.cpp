#include "fnode/tensor.hpp"

#include <cmath>
#include <sstream>

namespace fnode::tg {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
  if (shape_.size() > 2) throw Error("tensor rank > 2 is not supported: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw Error("tensor rank > 2 is not supported: " + shape_str(shape_));
  if (shape_size(shape_) != data_.size()) {
    throw Error("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                " values");
  }
  if (!all_finite()) throw Error("tensor constructed with non-finite entries");
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }
Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}
Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

double Tensor::item() const {
  if (data_.size() != 1) throw Error("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error("reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes size");
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return entries_[it->second].second;
}

Tensor& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& [_, t] : entries_) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

void ParamSet::assign_flat(std::span<const double> flat) {
  if (flat.size() != total_size()) {
    throw Error("flat parameter vector has " + std::to_string(flat.size()) + " values, expected " +
                std::to_string(total_size()));
  }
  std::size_t off = 0;
  for (auto& [_, t] : entries_) {
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = flat[off + i];
    off += d.size();
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
  return out;
}

}  // namespace fnode::tg
