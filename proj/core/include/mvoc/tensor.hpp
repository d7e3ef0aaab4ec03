#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvoc/rng.hpp"

namespace mvoc {

// Dense row-major tensor of doubles. The buffer is shared between reshaped
// views; operations never mutate their inputs, so sharing is safe. Only the
// optimizer writes into an existing buffer (parameters are unique owners).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<double>>(compute_numel(shape_), 0.0)) {}

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : *t.buf_) x = v;
    return t;
  }

  static Tensor from(std::vector<std::int64_t> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (compute_numel(t.shape_) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("Tensor::from: shape/data size mismatch");
    t.buf_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : *t.buf_) x = stddev * rng.normal();
    return t;
  }

  bool defined() const { return buf_ != nullptr; }
  std::int64_t numel() const { return buf_ ? static_cast<std::int64_t>(buf_->size()) : 0; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::int64_t>& shape() const { return shape_; }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }
  double& operator[](std::int64_t i) { return (*buf_)[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

  // 2D accessors (row-major).
  std::int64_t rows() const { return rank() == 1 ? 1 : dim(0); }
  std::int64_t cols() const { return rank() == 1 ? dim(0) : numel() / dim(0); }
  double& at(std::int64_t r, std::int64_t c) { return (*buf_)[static_cast<std::size_t>(r * cols() + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return (*buf_)[static_cast<std::size_t>(r * cols() + c)]; }

  // Shares the buffer; shape must preserve numel.
  Tensor reshaped(std::vector<std::int64_t> shape) const {
    if (compute_numel(shape) != numel()) throw std::invalid_argument("reshape: numel mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = buf_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<double>>(*buf_);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : *buf_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static std::int64_t compute_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d < 0) throw std::invalid_argument("negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<std::int64_t> shape_;
  std::shared_ptr<std::vector<double>> buf_;
};

}  // namespace mvoc
