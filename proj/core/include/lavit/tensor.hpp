#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lavit {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

/// Dense row-major f64 tensor. Copies share storage; `node` ties the value to
/// the tape that produced it (-1 = constant, invisible to backward).
struct Tensor {
  std::vector<int64_t> shape;
  std::shared_ptr<std::vector<double>> data;
  int node = -1;

  Tensor() : data(std::make_shared<std::vector<double>>()) {}
  Tensor(std::vector<int64_t> s, std::vector<double> v)
      : shape(std::move(s)), data(std::make_shared<std::vector<double>>(std::move(v))) {
    if (static_cast<int64_t>(data->size()) != numel())
      throw ShapeError("tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
  }
  static Tensor full(std::vector<int64_t> s, double v) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int64_t numel() const {
    if (shape.empty()) return 0;  // default-constructed: no elements
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  int64_t cols() const {
    if (shape.size() == 1) return shape[0];
    int64_t c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }

  double& at(int64_t i) { return (*data)[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return (*data)[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return (*data)[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return (*data)[static_cast<size_t>(r * cols() + c)]; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
    return (*data)[0];
  }

  /// Same storage, no tape node.
  Tensor detached() const {
    Tensor t = *this;
    t.node = -1;
    return t;
  }
  /// Deep copy of the values (no tape node).
  Tensor clone() const { return Tensor(shape, *data); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

}  // namespace lavit
