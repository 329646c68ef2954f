#ifndef PNET_TENSOR_HPP
#define PNET_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pnet/errors.hpp"

namespace pnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major N-d array. Element type is float for training and
// checkpoints, double for finite-difference verification.
template <typename S>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, S fill = S(0)) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_volume(shape_), fill);
  }

  TensorT(Shape shape, std::vector<S> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_extents();
    if (data_.size() != shape_volume(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT full(Shape shape, S value) { return TensorT(std::move(shape), value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& values() { return data_; }
  const std::vector<S>& values() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  // Row-major addressing: trailing extent has stride 1.
  S& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const S& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  S& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const S& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  S& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const S& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  // Same elements, new extents; element order is preserved.
  TensorT reshaped(Shape shape) const {
    if (shape_volume(shape) != data_.size()) {
      throw ShapeError("reshape to " + shape_str(shape) + " changes element count of " +
                       shape_str(shape_));
    }
    TensorT out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  void fill(S value) { data_.assign(data_.size(), value); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (S v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename T>
  TensorT<T> cast() const {
    std::vector<T> vals(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) vals[i] = static_cast<T>(data_[i]);
    return TensorT<T>(shape_, std::move(vals));
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extent must be >= 1, got shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<S> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  require_same_shape(a, b, "add");
  TensorT<S> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  require_same_shape(a, b, "sub");
  TensorT<S> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  require_same_shape(a, b, "mul");
  TensorT<S> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  TensorT<S> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return out;
}

template <typename S>
void add_in_place(TensorT<S>& a, const TensorT<S>& b) {
  require_same_shape(a, b, "add_in_place");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename S>
void scale_in_place(TensorT<S>& a, S factor) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= factor;
}

template <typename S>
void require_matrix(const TensorT<S>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

// C[m,n] = A[m,k] * B[k,n]
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = b.shape()[1];
  TensorT<S> c({m, n});
  const S* pa = a.data();
  const S* pb = b.data();
  S* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const S av = pa[i * k + p];
      if (av == S(0)) continue;
      const S* brow = pb + p * n;
      S* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C[m,n] = A[m,k] * B[n,k]^T
template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[1] != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = b.shape()[0];
  TensorT<S> c({m, n});
  const S* pa = a.data();
  const S* pb = b.data();
  S* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const S* brow = pb + j * k;
      S acc = S(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      pc[i * n + j] = acc;
    }
  }
  return c;
}

// C[m,n] = A[k,m]^T * B[k,n]
template <typename S>
TensorT<S> matmul_tn(const TensorT<S>& a, const TensorT<S>& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.shape()[0], m = a.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul_tn: inner extents differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = b.shape()[1];
  TensorT<S> c({m, n});
  const S* pa = a.data();
  const S* pb = b.data();
  S* pc = c.data();
  for (std::size_t p = 0; p < k; ++p) {
    const S* arow = pa + p * m;
    const S* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const S av = arow[i];
      if (av == S(0)) continue;
      S* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <typename S>
TensorT<S> identity_matrix(std::size_t n) {
  TensorT<S> out({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = S(1);
  return out;
}

// NaN/Inf is an error state, never silently propagated.
template <typename S>
void ensure_finite(const TensorT<S>& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string(what) + ": non-finite values in tensor " +
                       shape_str(t.shape()));
  }
}

}  // namespace pnet

#endif
