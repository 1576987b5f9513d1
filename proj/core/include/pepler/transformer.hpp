#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "pepler/errors.hpp"
#include "pepler/graph.hpp"
#include "pepler/rng.hpp"
#include "pepler/tensor.hpp"

namespace pepler::lm {

struct TransformerConfig {
  int layers = 4;
  int heads = 4;
  int dim = 128;
  int ffn_dim = 512;
  int max_seq = 64;
  int vocab = 8192;
  // true: scores scaled by 1/sqrt(dim/heads); false: 1/sqrt(dim).
  bool scale_per_head = true;

  void validate() const {
    if (layers < 1 || heads < 1 || dim < 1 || ffn_dim < 1 || max_seq < 1 ||
        vocab < 1)
      throw ValidationError("transformer dimensions must be positive");
    if (dim % heads != 0)
      throw ValidationError("model width " + std::to_string(dim) +
                            " not divisible by head count " +
                            std::to_string(heads));
  }
  int head_dim() const { return dim / heads; }
};

template <typename T>
struct LayerParams {
  num::Tensor<T> ln1_gain, ln1_bias;
  num::Tensor<T> wq, wk, wv, wo;  // each dim x dim, heads packed in columns
  num::Tensor<T> ln2_gain, ln2_bias;
  num::Tensor<T> w1, b1, w2, b2;
};

// All backbone weights. Layer norms start at gain 1 / bias 0, projection
// and embedding weights at normal(0, 0.02), biases at zero. The LM head is
// a separate vocab x dim matrix (no tying with the word embeddings).
template <typename T>
struct TransformerParams {
  TransformerConfig config;
  num::Tensor<T> wte, wpe;
  std::vector<LayerParams<T>> layers;
  num::Tensor<T> lnf_gain, lnf_bias;
  num::Tensor<T> head_w, head_b;

  static TransformerParams init(const TransformerConfig& config,
                                num::Rng& rng) {
    config.validate();
    auto normal = [&rng](std::size_t r, std::size_t c) {
      std::vector<T> data(r * c);
      for (auto& v : data) v = static_cast<T>(rng.normal(0.0, 0.02));
      return num::Tensor<T>({r, c}, std::move(data));
    };
    const auto d = static_cast<std::size_t>(config.dim);
    const auto dff = static_cast<std::size_t>(config.ffn_dim);
    TransformerParams p;
    p.config = config;
    p.wte = normal(static_cast<std::size_t>(config.vocab), d);
    p.wpe = normal(static_cast<std::size_t>(config.max_seq), d);
    p.layers.reserve(static_cast<std::size_t>(config.layers));
    for (int l = 0; l < config.layers; ++l) {
      LayerParams<T> layer{
          num::Tensor<T>::full({d}, T(1)), num::Tensor<T>::full({d}, T(0)),
          normal(d, d),                    normal(d, d),
          normal(d, d),                    normal(d, d),
          num::Tensor<T>::full({d}, T(1)), num::Tensor<T>::full({d}, T(0)),
          normal(d, dff),                  num::Tensor<T>::full({dff}, T(0)),
          normal(dff, d),                  num::Tensor<T>::full({d}, T(0))};
      p.layers.push_back(std::move(layer));
    }
    p.lnf_gain = num::Tensor<T>::full({d}, T(1));
    p.lnf_bias = num::Tensor<T>::full({d}, T(0));
    p.head_w = normal(static_cast<std::size_t>(config.vocab), d);
    p.head_b = num::Tensor<T>::full({static_cast<std::size_t>(config.vocab)},
                                    T(0));
    return p;
  }

  static TransformerParams zeros_like(const TransformerParams& other) {
    TransformerParams p;
    p.config = other.config;
    auto z = [](const num::Tensor<T>& t) {
      return num::Tensor<T>::full(t.shape(), T(0));
    };
    p.wte = z(other.wte);
    p.wpe = z(other.wpe);
    for (const auto& l : other.layers) {
      p.layers.push_back(LayerParams<T>{
          z(l.ln1_gain), z(l.ln1_bias), z(l.wq), z(l.wk), z(l.wv), z(l.wo),
          z(l.ln2_gain), z(l.ln2_bias), z(l.w1), z(l.b1), z(l.w2), z(l.b2)});
    }
    p.lnf_gain = z(other.lnf_gain);
    p.lnf_bias = z(other.lnf_bias);
    p.head_w = z(other.head_w);
    p.head_b = z(other.head_b);
    return p;
  }

  // Fixed enumeration order; the same order drives optimizer attachment and
  // checkpoint naming.
  template <typename F>
  void visit(F&& fn) {
    fn("lm.wte", wte);
    fn("lm.wpe", wpe);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "lm.layers." + std::to_string(l) + ".";
      fn(p + "ln1.gain", layers[l].ln1_gain);
      fn(p + "ln1.bias", layers[l].ln1_bias);
      fn(p + "attn.wq", layers[l].wq);
      fn(p + "attn.wk", layers[l].wk);
      fn(p + "attn.wv", layers[l].wv);
      fn(p + "attn.wo", layers[l].wo);
      fn(p + "ln2.gain", layers[l].ln2_gain);
      fn(p + "ln2.bias", layers[l].ln2_bias);
      fn(p + "ffn.w1", layers[l].w1);
      fn(p + "ffn.b1", layers[l].b1);
      fn(p + "ffn.w2", layers[l].w2);
      fn(p + "ffn.b2", layers[l].b2);
    }
    fn("lm.ln_f.gain", lnf_gain);
    fn("lm.ln_f.bias", lnf_bias);
    fn("lm.head.w", head_w);
    fn("lm.head.b", head_b);
  }
  template <typename F>
  void visit(F&& fn) const {
    const_cast<TransformerParams*>(this)->visit(
        [&fn](const std::string& name, num::Tensor<T>& t) {
          fn(name, static_cast<const num::Tensor<T>&>(t));
        });
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    visit([&n](const std::string&, const num::Tensor<T>& t) { n += t.size(); });
    return n;
  }
};

// Maps parameter tensors to their gradient sinks. Parameters without an
// entry are frozen: the graph treats them as constants and the optimizer
// never sees them.
template <typename T>
class GradBinder {
 public:
  void bind(const num::Tensor<T>& param, num::Tensor<T>& grad) {
    if (param.shape() != grad.shape())
      throw ShapeError("gradient sink shape " + grad.shape_str() +
                       " does not match parameter " + param.shape_str());
    map_[&param] = &grad;
  }
  num::Tensor<T>* find(const num::Tensor<T>* param) const {
    auto it = map_.find(param);
    return it == map_.end() ? nullptr : it->second;
  }

 private:
  std::unordered_map<const num::Tensor<T>*, num::Tensor<T>*> map_;
};

template <typename T>
typename num::Graph<T>::Id bind_param(num::Graph<T>& g,
                                      const num::Tensor<T>& t,
                                      const GradBinder<T>* binder) {
  return g.param(&t, binder ? binder->find(&t) : nullptr);
}

// Entries are 0 (attend) or -inf (blocked). Causal: key j visible to query
// i iff j <= i. Keys at positions >= valid_len (right padding) are blocked
// for every query.
template <typename T>
num::Tensor<T> causal_mask(std::size_t len, std::size_t valid_len) {
  const T ninf = -std::numeric_limits<T>::infinity();
  std::vector<T> data(len * len, ninf);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i && j < valid_len; ++j)
      data[i * len + j] = T(0);
  return num::Tensor<T>({len, len}, std::move(data));
}

template <typename T>
num::Tensor<T> causal_mask(std::size_t len) {
  return causal_mask<T>(len, len);
}

template <typename T>
struct ForwardResult {
  typename num::Graph<T>::Id final_reps;  // len x dim after the final norm
  // attention[layer][head] -> len x len softmax node
  std::vector<std::vector<typename num::Graph<T>::Id>> attention;
};

// Pre-norm residual stack: x += W_O . MHSA(LN(x)); x += FFN(LN(x)).
// Per-head attention: softmax(Q Kᵀ * scale + M) V on column slices of the
// packed projections.
template <typename T>
ForwardResult<T> forward_graph(num::Graph<T>& g,
                               const TransformerParams<T>& params,
                               const GradBinder<T>* binder,
                               typename num::Graph<T>::Id s0,
                               const num::Tensor<T>& mask) {
  using Id = typename num::Graph<T>::Id;
  const TransformerConfig& config = params.config;
  const std::size_t len = g.value(s0).rows();
  if (len > static_cast<std::size_t>(config.max_seq))
    throw ShapeError("sequence length " + std::to_string(len) +
                     " exceeds max_seq " + std::to_string(config.max_seq));
  if (mask.rows() != len || mask.cols() != len)
    throw ShapeError("mask shape " + mask.shape_str() +
                     " does not match sequence length " + std::to_string(len));

  const std::size_t dh = static_cast<std::size_t>(config.head_dim());
  const T scale = T(1) / std::sqrt(static_cast<T>(
                       config.scale_per_head ? config.head_dim() : config.dim));
  Id mask_node = g.constant(mask);

  ForwardResult<T> result;
  Id x = s0;
  for (const auto& layer : params.layers) {
    Id h = g.layer_norm(x, bind_param(g, layer.ln1_gain, binder),
                        bind_param(g, layer.ln1_bias, binder));
    Id q = g.matmul(h, bind_param(g, layer.wq, binder));
    Id k = g.matmul(h, bind_param(g, layer.wk, binder));
    Id v = g.matmul(h, bind_param(g, layer.wv, binder));

    std::vector<Id> heads, weights;
    for (int j = 0; j < config.heads; ++j) {
      Id qj = g.slice_cols(q, j * dh, (j + 1) * dh);
      Id kj = g.slice_cols(k, j * dh, (j + 1) * dh);
      Id vj = g.slice_cols(v, j * dh, (j + 1) * dh);
      Id scores = g.add(g.scale(g.matmul_nt(qj, kj), scale), mask_node);
      Id attn = g.softmax(scores);
      weights.push_back(attn);
      heads.push_back(g.matmul(attn, vj));
    }
    result.attention.push_back(weights);
    Id ctx = heads.size() == 1 ? heads[0] : g.concat_cols(heads);
    x = g.add(x, g.matmul(ctx, bind_param(g, layer.wo, binder)));

    Id h2 = g.layer_norm(x, bind_param(g, layer.ln2_gain, binder),
                         bind_param(g, layer.ln2_bias, binder));
    Id f = g.relu(g.add(g.matmul(h2, bind_param(g, layer.w1, binder)),
                        bind_param(g, layer.b1, binder)));
    Id f2 = g.add(g.matmul(f, bind_param(g, layer.w2, binder)),
                  bind_param(g, layer.b2, binder));
    x = g.add(x, f2);
  }
  result.final_reps = g.layer_norm(x, bind_param(g, params.lnf_gain, binder),
                                   bind_param(g, params.lnf_bias, binder));
  return result;
}

// len x vocab scores W^v s + b^v.
template <typename T>
typename num::Graph<T>::Id lm_logits(num::Graph<T>& g,
                                     const TransformerParams<T>& params,
                                     const GradBinder<T>* binder,
                                     typename num::Graph<T>::Id final_reps) {
  return g.add(g.matmul_nt(final_reps, bind_param(g, params.head_w, binder)),
               bind_param(g, params.head_b, binder));
}

// Per-position probability rows c_t.
template <typename T>
typename num::Graph<T>::Id lm_probs(num::Graph<T>& g,
                                    const TransformerParams<T>& params,
                                    const GradBinder<T>* binder,
                                    typename num::Graph<T>::Id final_reps) {
  return g.softmax(lm_logits(g, params, binder, final_reps));
}

// Embeds token ids at consecutive positions starting from pos_offset.
template <typename T>
typename num::Graph<T>::Id embed_tokens(num::Graph<T>& g,
                                        const TransformerParams<T>& params,
                                        const GradBinder<T>* binder,
                                        const std::vector<int>& ids,
                                        int pos_offset = 0) {
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    positions[i] = pos_offset + static_cast<int>(i);
  return g.add(g.embedding_rows(bind_param(g, params.wte, binder), ids),
               g.embedding_rows(bind_param(g, params.wpe, binder), positions));
}

namespace detail {

// First-maximum argmax: ties resolve to the smallest index.
template <typename T>
int argmax_row(const num::Tensor<T>& m, std::size_t row) {
  int best = 0;
  T best_v = m.at(row, 0);
  for (std::size_t j = 1; j < m.cols(); ++j) {
    if (m.at(row, j) > best_v) {
      best_v = m.at(row, j);
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace detail

// Greedy continuation of an assembled prefix (prompt plus <bos>, positional
// terms already added). Each step recomputes the full forward, takes the
// argmax of the last position, stops on eos_id or after max_new tokens, and
// extends the prefix with the word + positional embedding of the new token.
// Hard stop when the sequence would exceed max_seq.
template <typename T>
std::vector<int> greedy_decode(const TransformerParams<T>& params,
                               num::Tensor<T> prefix, int max_new,
                               int eos_id) {
  num::require_rank2(prefix, "greedy_decode");
  std::vector<int> out;
  const auto d = static_cast<std::size_t>(params.config.dim);
  while (static_cast<int>(out.size()) < max_new) {
    const std::size_t len = prefix.rows();
    num::Graph<T> g;
    auto fw = forward_graph<T>(g, params, nullptr, g.constant(prefix),
                               causal_mask<T>(len));
    auto logits_id = lm_logits<T>(g, params, nullptr, fw.final_reps);
    const num::Tensor<T>& logits = g.value(logits_id);
    int next = detail::argmax_row(logits, len - 1);
    if (next == eos_id) break;
    out.push_back(next);
    if (len >= static_cast<std::size_t>(params.config.max_seq)) break;

    std::vector<T> grown((len + 1) * d);
    std::copy(prefix.data(), prefix.data() + len * d, grown.begin());
    for (std::size_t c = 0; c < d; ++c)
      grown[len * d + c] = params.wte.at(static_cast<std::size_t>(next), c) +
                           params.wpe.at(len, c);
    prefix = num::Tensor<T>({len + 1, d}, std::move(grown));
  }
  return out;
}

// Last-layer attention weights, one len x len matrix per head. Rows sum to
// 1 over unmasked keys; masked cells are exactly zero.
template <typename T>
std::vector<num::Tensor<T>> export_attention(const TransformerParams<T>& params,
                                             const num::Tensor<T>& input_reps,
                                             const num::Tensor<T>& mask) {
  num::Graph<T> g;
  auto fw =
      forward_graph<T>(g, params, nullptr, g.constant(input_reps), mask);
  std::vector<num::Tensor<T>> out;
  out.reserve(fw.attention.back().size());
  for (auto id : fw.attention.back()) out.push_back(g.value(id));
  return out;
}

}  // namespace pepler::lm
