#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pepler/bpe.hpp"
#include "pepler/corpus.hpp"
#include "pepler/transformer.hpp"

namespace pepler::model {

enum class PromptMode { kContinuous, kDiscrete };

enum class Strategy {
  kFixedLmPromptTuning,
  kPromptLmFineTuning,
  kSequential,
  kRecRegularizedMf,
  kRecRegularizedMlp,
};

inline PromptMode parse_mode(const std::string& s) {
  if (s == "continuous") return PromptMode::kContinuous;
  if (s == "discrete") return PromptMode::kDiscrete;
  throw ValidationError("unknown prompt mode \"" + s + "\"");
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "fixed-lm-prompt-tuning") return Strategy::kFixedLmPromptTuning;
  if (s == "prompt+lm-fine-tuning") return Strategy::kPromptLmFineTuning;
  if (s == "sequential") return Strategy::kSequential;
  if (s == "rec-regularized-mf") return Strategy::kRecRegularizedMf;
  if (s == "rec-regularized-mlp") return Strategy::kRecRegularizedMlp;
  throw ValidationError("unknown strategy \"" + s + "\"");
}

inline bool uses_rating_head(Strategy s) {
  return s == Strategy::kRecRegularizedMf ||
         s == Strategy::kRecRegularizedMlp;
}

// Stable id -> embedding row mapping, rows in sorted id order.
class IdIndex {
 public:
  IdIndex() = default;
  explicit IdIndex(std::set<std::string> sorted_ids) {
    ids_.assign(sorted_ids.begin(), sorted_ids.end());
    for (std::size_t r = 0; r < ids_.size(); ++r) rows_[ids_[r]] = r;
  }
  explicit IdIndex(const std::vector<std::string>& ids_in_row_order) {
    ids_ = ids_in_row_order;
    for (std::size_t r = 0; r < ids_.size(); ++r) rows_[ids_[r]] = r;
  }

  int row(const std::string& id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) throw LookupError("unknown id: " + id);
    return static_cast<int>(it->second);
  }
  bool has(const std::string& id) const { return rows_.count(id) > 0; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> rows_;
};

// Continuous-prompt embeddings: one learned d-vector per training user and
// per training item.
template <typename T>
struct PromptParams {
  IdIndex users, items;
  num::Tensor<T> user_table, item_table;

  static PromptParams init(IdIndex users, IdIndex items, int dim,
                           num::Rng& rng) {
    PromptParams p;
    p.users = std::move(users);
    p.items = std::move(items);
    auto table = [&](std::size_t rows) {
      std::vector<T> data(rows * static_cast<std::size_t>(dim));
      for (auto& v : data) v = static_cast<T>(rng.normal(0.0, 0.02));
      return num::Tensor<T>({rows, static_cast<std::size_t>(dim)},
                            std::move(data));
    };
    p.user_table = table(p.users.size());
    p.item_table = table(p.items.size());
    return p;
  }

  template <typename F>
  void visit(F&& fn) {
    fn("prompt.user", user_table);
    fn("prompt.item", item_table);
  }
  template <typename F>
  void visit(F&& fn) const {
    fn("prompt.user", user_table);
    fn("prompt.item", item_table);
  }
};

// MLP rating head: a_0 = sigmoid(W_0 [u;i] + b_0), a_k = sigmoid(W_k a_{k-1}
// + b_k) for k = 1..z, score = w . a_z + b. The MF head has no parameters.
template <typename T>
struct RecMlpParams {
  std::vector<num::Tensor<T>> ws, bs;  // W_0: d_h x 2d; W_k: d_h x d_h
  num::Tensor<T> w;                    // d_h
  num::Tensor<T> b;                    // scalar

  static RecMlpParams init(int hidden_layers, int hidden_dim, int model_dim,
                           num::Rng& rng) {
    if (hidden_layers < 1 || hidden_dim < 1)
      throw ValidationError("MLP head needs at least one hidden layer and a "
                            "positive width");
    auto normal = [&](std::size_t r, std::size_t c) {
      std::vector<T> data(r * c);
      for (auto& v : data) v = static_cast<T>(rng.normal(0.0, 0.02));
      return num::Tensor<T>({r, c}, std::move(data));
    };
    const auto dh = static_cast<std::size_t>(hidden_dim);
    RecMlpParams p;
    p.ws.push_back(normal(dh, 2 * static_cast<std::size_t>(model_dim)));
    p.bs.push_back(num::Tensor<T>::full({dh}, T(0)));
    for (int k = 1; k <= hidden_layers; ++k) {
      p.ws.push_back(normal(dh, dh));
      p.bs.push_back(num::Tensor<T>::full({dh}, T(0)));
    }
    std::vector<T> out_w(dh);
    for (auto& v : out_w) v = static_cast<T>(rng.normal(0.0, 0.02));
    p.w = num::Tensor<T>({dh}, std::move(out_w));
    p.b = num::Tensor<T>::scalar(T(0));
    return p;
  }

  template <typename F>
  void visit(F&& fn) {
    for (std::size_t k = 0; k < ws.size(); ++k) {
      fn("rec.mlp." + std::to_string(k) + ".w", ws[k]);
      fn("rec.mlp." + std::to_string(k) + ".b", bs[k]);
    }
    fn("rec.mlp.out.w", w);
    fn("rec.mlp.out.b", b);
  }
  template <typename F>
  void visit(F&& fn) const {
    const_cast<RecMlpParams*>(this)->visit(
        [&fn](const std::string& name, num::Tensor<T>& t) {
          fn(name, static_cast<const num::Tensor<T>&>(t));
        });
  }
};

// One training example after tokenization and id resolution.
struct TrainExample {
  int user_row = -1, item_row = -1;  // continuous mode
  std::vector<int> prompt_ids;       // discrete mode feature tokens
  std::vector<int> expl_ids;         // truncated explanation, never empty
  double rating = 0;
};

inline IdIndex index_users(std::span<const corpus::Record> records,
                           std::span<const std::size_t> indices) {
  std::set<std::string> ids;
  for (std::size_t i : indices) ids.insert(records[i].user);
  return IdIndex(std::move(ids));
}

inline IdIndex index_items(std::span<const corpus::Record> records,
                           std::span<const std::size_t> indices) {
  std::set<std::string> ids;
  for (std::size_t i : indices) ids.insert(records[i].item);
  return IdIndex(std::move(ids));
}

// Resolves records into TrainExamples. Continuous mode needs the id
// indexes; discrete mode needs profiles plus the prompt token budget.
inline std::vector<TrainExample> make_examples(
    std::span<const corpus::Record> records,
    std::span<const std::size_t> indices, PromptMode mode,
    const bpe::BpeModel& tok, int expl_len, const IdIndex* users,
    const IdIndex* items, const corpus::FeatureProfiles* profiles,
    int prompt_budget) {
  if (expl_len < 1) throw ValidationError("explanation length must be >= 1");
  std::vector<TrainExample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& rec = records[i];
    TrainExample ex;
    ex.rating = rec.rating;
    ex.expl_ids = tok.encode(rec.text);
    if (ex.expl_ids.size() > static_cast<std::size_t>(expl_len))
      ex.expl_ids.resize(static_cast<std::size_t>(expl_len));
    if (mode == PromptMode::kContinuous) {
      if (!users || !items)
        throw ValidationError("continuous mode needs user/item indexes");
      ex.user_row = users->row(rec.user);
      ex.item_row = items->row(rec.item);
    } else {
      if (!profiles)
        throw ValidationError("discrete mode needs feature profiles");
      ex.prompt_ids =
          corpus::build_discrete_prompt(rec.user, rec.item, *profiles,
                                        static_cast<std::size_t>(prompt_budget),
                                        tok)
              .token_ids;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename T>
struct Assembled {
  typename num::Graph<T>::Id s0;
  std::size_t offset = 0;  // first explanation-target position
  std::size_t len = 0;
  std::vector<int> targets;  // -1 outside the supervised span
};

// Builds S_0 for one example: [prompt slots..., <bos>, e_1..e_T, <eos>]
// with positional embeddings across the whole sequence. offset = |prompt|+1,
// so the <bos> slot predicts e_1 and the e_T slot predicts <eos>. With
// pos_on_prompt false the continuous u/i slots skip their positional terms;
// later slots keep absolute positions.
template <typename T>
Assembled<T> assemble_input(num::Graph<T>& g,
                            const lm::TransformerParams<T>& lm_params,
                            const PromptParams<T>* prompt,
                            const lm::GradBinder<T>* binder, PromptMode mode,
                            const TrainExample& ex, int bos_id, int eos_id,
                            bool pos_on_prompt = true) {
  using Id = typename num::Graph<T>::Id;
  Assembled<T> a;

  std::vector<int> token_ids;
  std::size_t prompt_rows = 0;
  if (mode == PromptMode::kDiscrete) {
    token_ids = ex.prompt_ids;
    prompt_rows = ex.prompt_ids.size();
  } else {
    prompt_rows = 2;
  }
  token_ids.push_back(bos_id);
  token_ids.insert(token_ids.end(), ex.expl_ids.begin(), ex.expl_ids.end());
  token_ids.push_back(eos_id);

  a.offset = prompt_rows + 1;
  Id words = g.embedding_rows(bind_param(g, lm_params.wte, binder), token_ids);

  Id reps;
  if (mode == PromptMode::kContinuous) {
    if (!prompt)
      throw ValidationError("continuous mode needs prompt parameters");
    Id u = g.embedding_rows(bind_param(g, prompt->user_table, binder),
                            {ex.user_row});
    Id i = g.embedding_rows(bind_param(g, prompt->item_table, binder),
                            {ex.item_row});
    std::vector<Id> parts = {u, i, words};
    reps = g.concat_rows(parts);
  } else {
    reps = words;
  }
  a.len = g.value(reps).rows();

  std::vector<int> positions;
  std::size_t pos_start = 0;
  if (!pos_on_prompt && mode == PromptMode::kContinuous) pos_start = 2;
  for (std::size_t p = pos_start; p < a.len; ++p)
    positions.push_back(static_cast<int>(p));
  Id pos = g.embedding_rows(bind_param(g, lm_params.wpe, binder), positions);
  if (pos_start > 0) {
    Id zeros = g.constant(num::Tensor<T>::full(
        {pos_start, static_cast<std::size_t>(lm_params.config.dim)}, T(0)));
    std::vector<Id> parts = {zeros, pos};
    pos = g.concat_rows(parts);
  }
  a.s0 = g.add(reps, pos);

  a.targets.assign(a.len, -1);
  for (std::size_t j = 0; j < ex.expl_ids.size(); ++j)
    a.targets[a.offset - 1 + j] = ex.expl_ids[j];
  a.targets[a.offset - 1 + ex.expl_ids.size()] = eos_id;
  return a;
}

// Reference NLL over probability rows: mean over targets e_1..e_T,<eos> of
// -log c[position - 1][target]. The training path uses the fused
// logits-space op; this form states the contract over c vectors directly.
template <typename T>
double explanation_loss(const num::Tensor<T>& c,
                        const std::vector<int>& expl_ids, int eos_id,
                        std::size_t offset) {
  if (offset < 1) throw ValidationError("offset must be >= 1");
  if (offset + expl_ids.size() > c.rows())
    throw ShapeError("probability rows do not cover the explanation span");
  std::vector<int> targets = expl_ids;
  targets.push_back(eos_id);
  double sum = 0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    T p = c.at(offset - 1 + j, static_cast<std::size_t>(targets[j]));
    sum += -std::log(static_cast<double>(p));
  }
  return sum / static_cast<double>(targets.size());
}

// Rating score graph: MF takes the dot product of the two prompt vectors
// and adds no parameters; MLP runs [u;i] through the sigmoid stack.
template <typename T>
typename num::Graph<T>::Id rating_score(num::Graph<T>& g,
                                        const PromptParams<T>& prompt,
                                        const RecMlpParams<T>* mlp,
                                        const lm::GradBinder<T>* binder,
                                        int user_row, int item_row) {
  using Id = typename num::Graph<T>::Id;
  Id u = g.embedding_rows(bind_param(g, prompt.user_table, binder),
                          {user_row});
  Id i = g.embedding_rows(bind_param(g, prompt.item_table, binder),
                          {item_row});
  if (!mlp) return g.dot(u, i);

  std::vector<Id> ui = {u, i};
  Id a = g.concat_cols(ui);  // 1 x 2d
  for (std::size_t k = 0; k < mlp->ws.size(); ++k) {
    a = g.sigmoid(g.add(g.matmul_nt(a, bind_param(g, mlp->ws[k], binder)),
                        bind_param(g, mlp->bs[k], binder)));
  }
  Id score = g.dot(a, bind_param(g, mlp->w, binder));
  return g.add(score, bind_param(g, mlp->b, binder));
}

template <typename T>
double predict_rating(const PromptParams<T>& prompt, const RecMlpParams<T>* mlp,
                      const std::string& user, const std::string& item) {
  num::Graph<T> g;
  auto score = rating_score<T>(g, prompt, mlp, nullptr, prompt.users.row(user),
                               prompt.items.row(item));
  return static_cast<double>(g.value(score)[0]);
}

inline double rating_loss(std::span<const double> predictions,
                          std::span<const double> truths) {
  if (predictions.size() != truths.size())
    throw ValidationError("prediction/truth count mismatch");
  if (predictions.empty()) throw ValidationError("no ratings to score");
  double sum = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double d = predictions[i] - truths[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predictions.size());
}

// Generation-time prefix [prompt slots..., <bos>] with positional terms,
// built directly as a tensor.
template <typename T>
num::Tensor<T> assemble_prefix(const lm::TransformerParams<T>& lm_params,
                               const PromptParams<T>* prompt, PromptMode mode,
                               int user_row, int item_row,
                               const std::vector<int>& prompt_ids, int bos_id,
                               bool pos_on_prompt = true) {
  const auto d = static_cast<std::size_t>(lm_params.config.dim);
  std::vector<std::vector<T>> rows;
  auto word_row = [&](int id) {
    std::vector<T> r(d);
    for (std::size_t c = 0; c < d; ++c)
      r[c] = lm_params.wte.at(static_cast<std::size_t>(id), c);
    return r;
  };
  if (mode == PromptMode::kContinuous) {
    if (!prompt)
      throw ValidationError("continuous mode needs prompt parameters");
    std::vector<T> u(d), i(d);
    for (std::size_t c = 0; c < d; ++c) {
      u[c] = prompt->user_table.at(static_cast<std::size_t>(user_row), c);
      i[c] = prompt->item_table.at(static_cast<std::size_t>(item_row), c);
    }
    rows.push_back(std::move(u));
    rows.push_back(std::move(i));
  } else {
    for (int id : prompt_ids) rows.push_back(word_row(id));
  }
  rows.push_back(word_row(bos_id));

  if (rows.size() > static_cast<std::size_t>(lm_params.config.max_seq))
    throw ValidationError("prompt length exceeds max_seq");
  std::size_t pos_start = 0;
  if (!pos_on_prompt && mode == PromptMode::kContinuous) pos_start = 2;
  std::vector<T> data;
  data.reserve(rows.size() * d);
  for (std::size_t p = 0; p < rows.size(); ++p) {
    for (std::size_t c = 0; c < d; ++c) {
      T v = rows[p][c];
      if (p >= pos_start) v += lm_params.wpe.at(p, c);
      data.push_back(v);
    }
  }
  return num::Tensor<T>({rows.size(), d}, std::move(data));
}

// End-to-end generation for one (user, item): assemble the prompt prefix,
// greedy-decode up to max_new tokens, strip specials, BPE-decode.
template <typename T>
std::string generate(PromptMode mode, const std::string& user,
                     const std::string& item,
                     const lm::TransformerParams<T>& lm_params,
                     const PromptParams<T>* prompt,
                     const corpus::FeatureProfiles* profiles,
                     const bpe::BpeModel& tok, int prompt_budget, int max_new,
                     bool pos_on_prompt = true) {
  std::vector<int> prompt_ids;
  int user_row = -1, item_row = -1;
  if (mode == PromptMode::kContinuous) {
    if (!prompt)
      throw ValidationError("continuous mode needs prompt parameters");
    user_row = prompt->users.row(user);
    item_row = prompt->items.row(item);
  } else {
    if (!profiles)
      throw ValidationError("discrete mode needs feature profiles");
    prompt_ids = corpus::build_discrete_prompt(
                     user, item, *profiles,
                     static_cast<std::size_t>(prompt_budget), tok)
                     .token_ids;
  }
  auto prefix = assemble_prefix<T>(lm_params, prompt, mode, user_row, item_row,
                                   prompt_ids, tok.bos_id(), pos_on_prompt);
  auto ids = lm::greedy_decode<T>(lm_params, std::move(prefix), max_new,
                                  tok.eos_id());
  return tok.decode(ids, /*strip_special=*/true);
}

}  // namespace pepler::model
