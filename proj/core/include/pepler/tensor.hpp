#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "pepler/errors.hpp"
#include "pepler/threadpool.hpp"

namespace pepler::num {

// Dense row-major tensor of rank 1 or 2 (a scalar is shape {1}). Storage is
// float for training, double for the verification mode; both instantiations
// share this definition.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), T(0)) {
    check_rank();
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor: data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str());
    }
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<std::size_t> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : shape_[0]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    if (shape_.empty()) return "()";
    std::string s;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s;
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

 private:
  void check_rank() const {
    if (shape_.empty() || shape_.size() > 2) {
      throw ShapeError("tensor: rank must be 1 or 2, got shape " + shape_str());
    }
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_str());
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + t.shape_str());
  }
}

// Work threshold below which gemm stays on the calling thread.
inline constexpr std::size_t kGemmParallelCutoff = 1u << 20;

// C (+)= A * B. C must be pre-shaped (A.rows x B.cols). Each output row is
// produced by one thread with a fixed-order inner loop, so results do not
// depend on the worker count.
template <typename T>
void gemm_nn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k || c.rows() != n || c.cols() != m) {
    throw ShapeError("matmul: " + a.shape_str() + " * " + b.shape_str() +
                     " -> " + c.shape_str());
  }
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  std::size_t min_par = n * k * m >= kGemmParallelCutoff ? 2 : std::size_t(-1);
  parallel_for(n, min_par, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* ci = pc + i * m;
      if (!accumulate) {
        for (std::size_t j = 0; j < m; ++j) ci[j] = T(0);
      }
      const T* ai = pa + i * k;
      for (std::size_t l = 0; l < k; ++l) {
        T av = ai[l];
        const T* bl = pb + l * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
      }
    }
  });
}

// C (+)= A * B^T.
template <typename T>
void gemm_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k || c.rows() != n || c.cols() != m) {
    throw ShapeError("matmul_nt: " + a.shape_str() + " * " + b.shape_str() +
                     "^T -> " + c.shape_str());
  }
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  std::size_t min_par = n * k * m >= kGemmParallelCutoff ? 2 : std::size_t(-1);
  parallel_for(n, min_par, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const T* ai = pa + i * k;
      T* ci = pc + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const T* bj = pb + j * k;
        T acc = T(0);
        for (std::size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
        ci[j] = accumulate ? ci[j] + acc : acc;
      }
    }
  });
}

// C (+)= A^T * B.
template <typename T>
void gemm_tn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  if (b.rows() != k || c.rows() != n || c.cols() != m) {
    throw ShapeError("matmul_tn: " + a.shape_str() + "^T * " + b.shape_str() +
                     " -> " + c.shape_str());
  }
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  std::size_t min_par = n * k * m >= kGemmParallelCutoff ? 2 : std::size_t(-1);
  parallel_for(n, min_par, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* ci = pc + i * m;
      if (!accumulate) {
        for (std::size_t j = 0; j < m; ++j) ci[j] = T(0);
      }
      for (std::size_t l = 0; l < k; ++l) {
        T av = pa[l * n + i];
        const T* bl = pb + l * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
      }
    }
  });
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) return false;
  }
  return true;
}

}  // namespace pepler::num
