#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsft {

using Index = Eigen::Index;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = std::vector<bool>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         std::multiplies<Index>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

// Dense n-d array, row-major. Model code works on 2-d Mat views; Tensor is the
// interchange form for checkpoints and stacked (P, C, D) arrays.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<Index>(data_.size()))
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}

  static Tensor from_matrix(const Mat<S>& m, Shape shape) {
    return Tensor(std::move(shape), std::vector<S>(m.data(), m.data() + m.size()));
  }

  const Shape& shape() const { return shape_; }
  Index numel() const { return static_cast<Index>(data_.size()); }
  const std::vector<S>& data() const { return data_; }
  std::vector<S>& data() { return data_; }

  // Flattened view as rows x cols; the product must equal numel.
  Eigen::Map<const Mat<S>> as_matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) throw ShapeError("tensor: bad matrix view");
    return Eigen::Map<const Mat<S>>(data_.data(), rows, cols);
  }

  S& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  S at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Index offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("tensor: rank mismatch in index");
    Index off = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[k]) throw ShapeError("tensor: index out of range");
      off = off * shape_[k++] + i;
    }
    return off;
  }

  Shape shape_;
  std::vector<S> data_;
};

// A named model weight. Vectors (biases, norms) are stored as 1 x n matrices
// with shape {n}.
template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Shape shape;
  bool trainable = true;
  Mat<S> grad;

  Parameter() = default;
  Parameter(std::string n, Mat<S> v, bool is_vector = false)
      : name(std::move(n)), value(std::move(v)) {
    shape = is_vector ? Shape{value.size()} : Shape{value.rows(), value.cols()};
  }

  Index numel() const { return value.size(); }
  bool has_grad() const { return grad.size() == value.size(); }
  void zero_grad() {
    if (trainable)
      grad.setZero(value.rows(), value.cols());
    else
      grad.resize(0, 0);
  }
};

template <typename S>
using ParamRefs = std::vector<Parameter<S>*>;

template <typename S>
Index count_params(const ParamRefs<S>& params, bool trainable_only) {
  Index n = 0;
  for (const auto* p : params)
    if (!trainable_only || p->trainable) n += p->numel();
  return n;
}

template <typename To, typename From>
Parameter<To> cast_parameter(const Parameter<From>& p) {
  Parameter<To> out;
  out.name = p.name;
  out.value = p.value.template cast<To>();
  out.shape = p.shape;
  out.trainable = p.trainable;
  return out;
}

}  // namespace tsft
