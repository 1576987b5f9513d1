#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pepler/errors.hpp"
#include "pepler/tensor.hpp"

namespace pepler::num {

// Reverse-mode autodiff tape. Each op records its output value and a closure
// that scatters the output gradient back to its inputs. Creation order is a
// topological order, so backward() is a single reverse sweep.
//
// Parameters are bound by pointer: the tape reads values in place and
// accumulates their gradients into caller-owned sink tensors, which lets many
// per-example tapes share one set of gradient buffers without copying the
// parameter matrices into every tape. Bound tensors must stay alive and
// unmodified until the tape is dropped.
//
// Broadcasting is deliberately absent except bias-add over rows; every other
// shape mismatch throws ShapeError naming the op.
template <typename T>
class Graph {
 public:
  using Id = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Owned constant; never receives a gradient (attention masks, zero rows).
  Id constant(Tensor<T> v) {
    return push(Node{std::move(v), nullptr, nullptr, false});
  }

  // External tensor. With a grad sink the node is trainable: backward
  // accumulates into *grad (which must match the value's shape). With
  // grad == nullptr the value participates in the forward pass but is frozen.
  Id param(const Tensor<T>* value, Tensor<T>* grad) {
    if (grad != nullptr && !grad->same_shape(*value)) {
      throw ShapeError("param: grad sink " + grad->shape_str() +
                       " does not match value " + value->shape_str());
    }
    return push(Node{Tensor<T>{}, value, grad, grad != nullptr});
  }

  const Tensor<T>& value(Id id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.owned;
  }

  // Gradient as computed by the last backward(); zeros if the node was not
  // reached. Meant for tests and checks, not the training hot path.
  Tensor<T> grad_of(Id id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad_sink) return *n.grad_sink;
    if (n.grad_alloc) return n.grad;
    return Tensor<T>(value(id).shape());
  }

  // ---- ops ----

  Id matmul(Id a, Id b) {
    const Tensor<T>&va = value(a);
    const Tensor<T>&vb = value(b);
    require_rank2(va, "matmul");
    require_rank2(vb, "matmul");
    if (va.cols() != vb.rows()) {
      throw ShapeError("matmul: " + va.shape_str() + " * " + vb.shape_str());
    }
    Tensor<T> out({va.rows(), vb.cols()});
    gemm_nn(va, vb, out, false);
    Id id = push_op(std::move(out), {a, b});
    nodes_[id].back = [this, id, a, b] {
      const Tensor<T>& g = nodes_[id].grad;
      if (needs_grad(a)) gemm_nt(g, value(b), gbuf(a), true);   // dA = g * B^T
      if (needs_grad(b)) gemm_tn(value(a), g, gbuf(b), true);   // dB = A^T * g
    };
    return id;
  }

  // a * b^T without materializing the transpose.
  Id matmul_nt(Id a, Id b) {
    const Tensor<T>&va = value(a);
    const Tensor<T>&vb = value(b);
    require_rank2(va, "matmul_nt");
    require_rank2(vb, "matmul_nt");
    if (va.cols() != vb.cols()) {
      throw ShapeError("matmul_nt: " + va.shape_str() + " * " + vb.shape_str() + "^T");
    }
    Tensor<T> out({va.rows(), vb.rows()});
    gemm_nt(va, vb, out, false);
    Id id = push_op(std::move(out), {a, b});
    nodes_[id].back = [this, id, a, b] {
      const Tensor<T>& g = nodes_[id].grad;
      if (needs_grad(a)) gemm_nn(g, value(b), gbuf(a), true);   // dA = g * B
      if (needs_grad(b)) gemm_tn(g, value(a), gbuf(b), true);   // dB = g^T * A
    };
    return id;
  }

  // Same-shape add, or rank-2 plus rank-1 bias broadcast over rows.
  Id add(Id a, Id b) {
    const Tensor<T>&va = value(a);
    const Tensor<T>&vb = value(b);
    bool bias = va.rank() == 2 && vb.rank() == 1 && va.cols() == vb.cols();
    if (!bias && !va.same_shape(vb)) {
      throw ShapeError("add: " + va.shape_str() + " + " + vb.shape_str());
    }
    Tensor<T> out(va.shape());
    if (bias) {
      for (std::size_t r = 0; r < va.rows(); ++r) {
        for (std::size_t c = 0; c < va.cols(); ++c) {
          out.at(r, c) = va.at(r, c) + vb[c];
        }
      }
    } else {
      for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
    }
    Id id = push_op(std::move(out), {a, b});
    nodes_[id].back = [this, id, a, b, bias] {
      const Tensor<T>& g = nodes_[id].grad;
      if (needs_grad(a)) {
        Tensor<T>& ga = gbuf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (needs_grad(b)) {
        Tensor<T>& gb = gbuf(b);
        if (bias) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
          }
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      }
    };
    return id;
  }

  Id relu(Id a) {
    const Tensor<T>& va = value(a);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] > T(0) ? va[i] : T(0);
    Id id = push_op(std::move(out), {a});
    nodes_[id].back = [this, id, a] {
      if (!needs_grad(a)) return;
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& va = value(a);
      Tensor<T>& ga = gbuf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (va[i] > T(0)) ga[i] += g[i];
      }
    };
    return id;
  }

  Id sigmoid(Id a) {
    const Tensor<T>& va = value(a);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < va.size(); ++i) {
      out[i] = T(1) / (T(1) + std::exp(-va[i]));
    }
    Id id = push_op(std::move(out), {a});
    nodes_[id].back = [this, id, a] {
      if (!needs_grad(a)) return;
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& y = value(id);
      Tensor<T>& ga = gbuf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    };
    return id;
  }

  // Row-wise softmax with max subtraction. -inf inputs (masked attention
  // scores) come out exactly 0.
  Id softmax(Id a) {
    const Tensor<T>& va = value(a);
    require_rank2(va, "softmax");
    Tensor<T> out(va.shape());
    const std::size_t rows = va.rows(), cols = va.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* x = va.data() + r * cols;
      T* y = out.data() + r * cols;
      T mx = x[0];
      for (std::size_t c = 1; c < cols; ++c) mx = x[c] > mx ? x[c] : mx;
      T sum = T(0);
      for (std::size_t c = 0; c < cols; ++c) {
        y[c] = std::exp(x[c] - mx);
        sum += y[c];
      }
      for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
    }
    Id id = push_op(std::move(out), {a});
    nodes_[id].back = [this, id, a] {
      if (!needs_grad(a)) return;
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& y = value(id);
      Tensor<T>& ga = gbuf(a);
      const std::size_t rows = y.rows(), cols = y.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * cols;
        const T* gr = g.data() + r * cols;
        T dotv = T(0);
        for (std::size_t c = 0; c < cols; ++c) dotv += gr[c] * yr[c];
        T* gar = ga.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gar[c] += yr[c] * (gr[c] - dotv);
      }
    };
    return id;
  }

  // Row-wise layer norm with an affine gain/bias pair (rank-1, width cols).
  Id layer_norm(Id x, Id gain, Id bias, T eps = T(1e-5)) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vg = value(gain);
    const Tensor<T>& vb = value(bias);
    require_rank2(vx, "layer_norm");
    if (vg.rank() != 1 || vb.rank() != 1 || vg.cols() != vx.cols() ||
        vb.cols() != vx.cols()) {
      throw ShapeError("layer_norm: input " + vx.shape_str() + ", gain " +
                       vg.shape_str() + ", bias " + vb.shape_str());
    }
    const std::size_t rows = vx.rows(), cols = vx.cols();
    Tensor<T> out(vx.shape());
    Tensor<T> xhat(vx.shape());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = vx.data() + r * cols;
      T mean = T(0);
      for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
      mean /= static_cast<T>(cols);
      T var = T(0);
      for (std::size_t c = 0; c < cols; ++c) {
        T d = xr[c] - mean;
        var += d * d;
      }
      var /= static_cast<T>(cols);
      T inv = T(1) / std::sqrt(var + eps);
      inv_std[r] = inv;
      T* hr = xhat.data() + r * cols;
      T* yr = out.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        hr[c] = (xr[c] - mean) * inv;
        yr[c] = hr[c] * vg[c] + vb[c];
      }
    }
    Id id = push_op(std::move(out), {x, gain, bias});
    nodes_[id].back = [this, id, x, gain, bias, xh = std::move(xhat),
                       inv = std::move(inv_std)] {
      const Tensor<T>& g = nodes_[id].grad;
      const std::size_t rows = g.rows(), cols = g.cols();
      const Tensor<T>& vg = value(gain);
      if (needs_grad(gain)) {
        Tensor<T>& gg = gbuf(gain);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gg[c] += g.at(r, c) * xh.at(r, c);
        }
      }
      if (needs_grad(bias)) {
        Tensor<T>& gb = gbuf(bias);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g.at(r, c);
        }
      }
      if (needs_grad(x)) {
        Tensor<T>& gx = gbuf(x);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * cols;
          const T* hr = xh.data() + r * cols;
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t c = 0; c < cols; ++c) {
            T dh = gr[c] * vg[c];
            mean_dh += dh;
            mean_dh_h += dh * hr[c];
          }
          mean_dh /= static_cast<T>(cols);
          mean_dh_h /= static_cast<T>(cols);
          T* gxr = gx.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            T dh = gr[c] * vg[c];
            gxr[c] += inv[r] * (dh - mean_dh - hr[c] * mean_dh_h);
          }
        }
      }
    };
    return id;
  }

  // Gathers table rows; backward scatter-adds into the table gradient.
  Id embedding_rows(Id table, std::vector<int> rows) {
    const Tensor<T>& vt = value(table);
    require_rank2(vt, "embedding_gather");
    if (rows.empty()) throw ShapeError("embedding_gather: empty row list");
    for (int r : rows) {
      if (r < 0 || static_cast<std::size_t>(r) >= vt.rows()) {
        throw ShapeError("embedding_gather: row " + std::to_string(r) +
                         " out of range for table " + vt.shape_str());
      }
    }
    const std::size_t d = vt.cols();
    Tensor<T> out({rows.size(), d});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const T* src = vt.data() + static_cast<std::size_t>(rows[k]) * d;
      T* dst = out.data() + k * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] = src[c];
    }
    Id id = push_op(std::move(out), {table});
    nodes_[id].back = [this, id, table, rows = std::move(rows)] {
      if (!needs_grad(table)) return;
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& gt = gbuf(table);
      const std::size_t d = g.cols();
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const T* src = g.data() + k * d;
        T* dst = gt.data() + static_cast<std::size_t>(rows[k]) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    };
    return id;
  }

  Id concat_rows(std::span<const Id> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::size_t cols = value(parts[0]).cols(), total = 0;
    for (Id p : parts) {
      const Tensor<T>& v = value(p);
      require_rank2(v, "concat");
      if (v.cols() != cols) {
        throw ShapeError("concat: column mismatch " + v.shape_str() + " vs " +
                         value(parts[0]).shape_str());
      }
      total += v.rows();
    }
    Tensor<T> out({total, cols});
    std::size_t r = 0;
    for (Id p : parts) {
      const Tensor<T>& v = value(p);
      for (std::size_t i = 0; i < v.size(); ++i) out[r * cols + i] = v[i];
      r += v.rows();
    }
    std::vector<Id> ps(parts.begin(), parts.end());
    Id id = push_op(std::move(out), ps);
    nodes_[id].back = [this, id, ps = std::move(ps)] {
      const Tensor<T>& g = nodes_[id].grad;
      const std::size_t cols = g.cols();
      std::size_t r = 0;
      for (Id p : ps) {
        const std::size_t rows = value(p).rows();
        if (needs_grad(p)) {
          Tensor<T>& gp = gbuf(p);
          for (std::size_t i = 0; i < rows * cols; ++i) gp[i] += g[r * cols + i];
        }
        r += rows;
      }
    };
    return id;
  }

  Id concat_cols(std::span<const Id> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::size_t rows = value(parts[0]).rows(), total = 0;
    for (Id p : parts) {
      const Tensor<T>& v = value(p);
      require_rank2(v, "concat");
      if (v.rows() != rows) {
        throw ShapeError("concat: row mismatch " + v.shape_str() + " vs " +
                         value(parts[0]).shape_str());
      }
      total += v.cols();
    }
    Tensor<T> out({rows, total});
    std::size_t c0 = 0;
    for (Id p : parts) {
      const Tensor<T>& v = value(p);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < v.cols(); ++c) out.at(r, c0 + c) = v.at(r, c);
      }
      c0 += v.cols();
    }
    std::vector<Id> ps(parts.begin(), parts.end());
    Id id = push_op(std::move(out), ps);
    nodes_[id].back = [this, id, ps = std::move(ps)] {
      const Tensor<T>& g = nodes_[id].grad;
      std::size_t c0 = 0;
      for (Id p : ps) {
        const Tensor<T>& v = value(p);
        if (needs_grad(p)) {
          Tensor<T>& gp = gbuf(p);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < v.cols(); ++c) gp.at(r, c) += g.at(r, c0 + c);
          }
        }
        c0 += v.cols();
      }
    };
    return id;
  }

  // Column block [c0, c1) of a rank-2 tensor (per-head views of fused QKV).
  Id slice_cols(Id a, std::size_t c0, std::size_t c1) {
    const Tensor<T>& va = value(a);
    require_rank2(va, "slice_cols");
    if (c0 >= c1 || c1 > va.cols()) {
      throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " +
                       std::to_string(c1) + ") of " + va.shape_str());
    }
    Tensor<T> out({va.rows(), c1 - c0});
    for (std::size_t r = 0; r < va.rows(); ++r) {
      for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = va.at(r, c);
    }
    Id id = push_op(std::move(out), {a});
    nodes_[id].back = [this, id, a, c0] {
      if (!needs_grad(a)) return;
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& ga = gbuf(a);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) ga.at(r, c0 + c) += g.at(r, c);
      }
    };
    return id;
  }

  Id transpose(Id a) {
    Tensor<T> out = transposed(value(a));
    Id id = push_op(std::move(out), {a});
    nodes_[id].back = [this, id, a] {
      if (!needs_grad(a)) return;
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& ga = gbuf(a);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) ga.at(c, r) += g.at(r, c);
      }
    };
    return id;
  }

  Id scale(Id a, T factor) {
    const Tensor<T>& va = value(a);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * factor;
    Id id = push_op(std::move(out), {a});
    nodes_[id].back = [this, id, a, factor] {
      if (!needs_grad(a)) return;
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& ga = gbuf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    };
    return id;
  }

  Id sum(Id a) {
    const Tensor<T>& va = value(a);
    T s = T(0);
    for (std::size_t i = 0; i < va.size(); ++i) s += va[i];
    Id id = push_op(Tensor<T>::scalar(s), {a});
    nodes_[id].back = [this, id, a] {
      if (!needs_grad(a)) return;
      T g = nodes_[id].grad[0];
      Tensor<T>& ga = gbuf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
    return id;
  }

  // Flat inner product; operands must hold the same number of elements.
  Id dot(Id a, Id b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.size() != vb.size()) {
      throw ShapeError("dot: " + va.shape_str() + " . " + vb.shape_str());
    }
    T s = T(0);
    for (std::size_t i = 0; i < va.size(); ++i) s += va[i] * vb[i];
    Id id = push_op(Tensor<T>::scalar(s), {a, b});
    nodes_[id].back = [this, id, a, b] {
      T g = nodes_[id].grad[0];
      if (needs_grad(a)) {
        const Tensor<T>& vb = value(b);
        Tensor<T>& ga = gbuf(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * vb[i];
      }
      if (needs_grad(b)) {
        const Tensor<T>& va = value(a);
        Tensor<T>& gb = gbuf(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * va[i];
      }
    };
    return id;
  }

  // Mean negative log-likelihood over the rows whose target is >= 0.
  // Fuses log-softmax with the target pick; the dense probability matrix is
  // never stored, only per-row log partition values.
  Id masked_nll(Id logits, std::vector<int> targets) {
    const Tensor<T>& x = value(logits);
    require_rank2(x, "masked_nll");
    if (targets.size() != x.rows()) {
      throw ShapeError("masked_nll: " + std::to_string(targets.size()) +
                       " targets for logits " + x.shape_str());
    }
    const std::size_t cols = x.cols();
    std::size_t selected = 0;
    std::vector<T> logz(targets.size(), T(0));
    T loss = T(0);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      int t = targets[r];
      if (t < 0) continue;
      if (static_cast<std::size_t>(t) >= cols) {
        throw ShapeError("masked_nll: target " + std::to_string(t) +
                         " out of range for logits " + x.shape_str());
      }
      const T* xr = x.data() + r * cols;
      T mx = xr[0];
      for (std::size_t c = 1; c < cols; ++c) mx = xr[c] > mx ? xr[c] : mx;
      T sum = T(0);
      for (std::size_t c = 0; c < cols; ++c) sum += std::exp(xr[c] - mx);
      logz[r] = mx + std::log(sum);
      loss += logz[r] - xr[t];
      ++selected;
    }
    if (selected == 0) throw ShapeError("masked_nll: no selected rows");
    loss /= static_cast<T>(selected);
    Id id = push_op(Tensor<T>::scalar(loss), {logits});
    nodes_[id].back = [this, id, logits, targets = std::move(targets),
                       logz = std::move(logz), selected] {
      if (!needs_grad(logits)) return;
      T coef = nodes_[id].grad[0] / static_cast<T>(selected);
      const Tensor<T>& x = value(logits);
      Tensor<T>& gx = gbuf(logits);
      const std::size_t cols = x.cols();
      for (std::size_t r = 0; r < targets.size(); ++r) {
        int t = targets[r];
        if (t < 0) continue;
        const T* xr = x.data() + r * cols;
        T* gr = gx.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          gr[c] += coef * std::exp(xr[c] - logz[r]);
        }
        gr[t] -= coef;
      }
    };
    return id;
  }

  // (pred - target)^2 for a scalar prediction node.
  Id squared_error(Id pred, T target) {
    const Tensor<T>& p = value(pred);
    if (p.size() != 1) {
      throw ShapeError("squared_error: prediction must be scalar, got " + p.shape_str());
    }
    T d = p[0] - target;
    Id id = push_op(Tensor<T>::scalar(d * d), {pred});
    nodes_[id].back = [this, id, pred, target] {
      if (!needs_grad(pred)) return;
      T g = nodes_[id].grad[0];
      gbuf(pred)[0] += g * T(2) * (value(pred)[0] - target);
    };
    return id;
  }

  // Seeds d(loss)/d(loss) = seed and sweeps the tape once in reverse.
  // Gradients accumulate, so external sinks carry sums across calls and
  // across tapes until the caller zeroes them.
  void backward(Id loss, T seed = T(1)) {
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    const Tensor<T>& lv = value(loss);
    if (lv.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + lv.shape_str());
    }
    if (!ln.needs) return;  // nothing trainable upstream
    gbuf(loss)[0] += seed;
    for (Id id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.back && n.grad_alloc) n.back();
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* grad_sink = nullptr;
    bool needs = false;
    bool grad_alloc = false;
    Tensor<T> grad;
    std::function<void()> back;
  };

  bool needs_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].needs; }

  Tensor<T>& gbuf(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad_sink) return *n.grad_sink;
    if (!n.grad_alloc) {
      n.grad = Tensor<T>(value(id).shape());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  Id push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id push_op(Tensor<T> out, std::span<const Id> inputs) {
    bool req = false;
    for (Id i : inputs) req = req || needs_grad(i);
    return push(Node{std::move(out), nullptr, nullptr, req});
  }

  Id push_op(Tensor<T> out, std::initializer_list<Id> inputs) {
    return push_op(std::move(out), std::span<const Id>(inputs.begin(), inputs.size()));
  }

  std::vector<Node> nodes_;
};

// Central-difference gradient verification. eval() must recompute the scalar
// objective from the current contents of the parameter tensors; analytic[i]
// holds the gradient previously produced by backward() for params[i].
// Returns the elementwise maximum of |fd - analytic| / max(|fd|, |analytic|,
// 1e-3); the floor keeps finite-difference noise on near-zero entries from
// registering as relative error.
inline double finite_diff_check(const std::function<double()>& eval,
                                std::span<Tensor<double>* const> params,
                                std::span<const Tensor<double>* const> analytic,
                                double eps = 1e-5) {
  if (params.size() != analytic.size()) {
    throw ShapeError("finite_diff_check: params/analytic gradient count mismatch");
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& theta = *params[p];
    const Tensor<double>& an = *analytic[p];
    if (!theta.same_shape(an)) {
      throw ShapeError("finite_diff_check: gradient shape " + an.shape_str() +
                       " does not match parameter " + theta.shape_str());
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double saved = theta[i];
      theta[i] = saved + eps;
      double up = eval();
      theta[i] = saved - eps;
      double down = eval();
      theta[i] = saved;
      double fd = (up - down) / (2.0 * eps);
      double a = an[i];
      double denom = std::max({std::fabs(fd), std::fabs(a), 1e-3});
      double rel = std::fabs(fd - a) / denom;
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace pepler::num
