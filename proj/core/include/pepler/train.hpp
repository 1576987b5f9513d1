#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pepler/adamw.hpp"
#include "pepler/model.hpp"
#include "pepler/training_log.hpp"

namespace pepler::model {

struct TrainingPlan {
  PromptMode mode = PromptMode::kContinuous;
  Strategy strategy = Strategy::kSequential;
  double lambda = 0.01;  // rating-regularization weight (rec strategies)
  double lr = 1e-3;
  double lr_stage2 = 1e-3;  // sequential stage 2
  double weight_decay = 0.01;
  int batch = 128;
  int patience = 5;
  int max_epochs = 50;  // per stage
  std::uint64_t seed = 42;
  bool pos_on_prompt = true;

  void validate() const {
    if (mode == PromptMode::kDiscrete &&
        strategy != Strategy::kPromptLmFineTuning)
      throw UsageError(
          "discrete mode admits only the prompt+lm-fine-tuning strategy");
    if (lambda < 0) throw ValidationError("lambda must be >= 0");
    if (lr <= 0 || lr_stage2 <= 0)
      throw ValidationError("learning rates must be positive");
    if (weight_decay < 0) throw ValidationError("weight decay must be >= 0");
    if (batch < 1) throw ValidationError("batch size must be >= 1");
    if (patience < 1) throw ValidationError("patience must be >= 1");
    if (max_epochs < 0) throw ValidationError("max_epochs must be >= 0");
  }
};

template <typename T>
struct ModelState {
  lm::TransformerParams<T> lm;
  std::optional<PromptParams<T>> prompt;  // continuous mode
  std::optional<RecMlpParams<T>> mlp;     // rec-regularized-mlp

  // Fixed enumeration across all parameter groups, matching checkpoint
  // tensor names.
  template <typename F>
  void visit(F&& fn) {
    lm.visit(fn);
    if (prompt) prompt->visit(fn);
    if (mlp) mlp->visit(fn);
  }
  template <typename F>
  void visit(F&& fn) const {
    lm.visit(fn);
    if (prompt) prompt->visit(fn);
    if (mlp) mlp->visit(fn);
  }
};

template <typename T>
struct TrainResult {
  ModelState<T> best;
  ModelState<T> final;
  std::vector<EpochLog> log;
  double best_valid = std::numeric_limits<double>::infinity();
};

template <typename T>
using EpochHook = std::function<void(const EpochLog&, const ModelState<T>&)>;

namespace detail {

struct StageSpec {
  int stage = 1;
  double lr = 1e-3;
  bool train_lm = false;
  bool train_prompt = false;
  bool train_mlp = false;
};

template <typename T>
struct ExampleLoss {
  double j = 0, l_c = 0;
  std::optional<double> l_r;
};

// One example's objective; with a binder also accumulates gradients scaled
// by `seed`. When lambda is zero the rating branch is evaluated for logging
// but never joins the loss graph, so gradients are bit-identical to plain
// fine-tuning.
template <typename T>
ExampleLoss<T> example_loss(const TrainingPlan& plan, const ModelState<T>& state,
                            const TrainExample& ex, int bos_id, int eos_id,
                            const lm::GradBinder<T>* binder, double seed) {
  num::Graph<T> g;
  const PromptParams<T>* prompt = state.prompt ? &*state.prompt : nullptr;
  auto a = assemble_input<T>(g, state.lm, prompt, binder, plan.mode, ex,
                             bos_id, eos_id, plan.pos_on_prompt);
  auto fw = lm::forward_graph<T>(g, state.lm, binder, a.s0,
                                 lm::causal_mask<T>(a.len));
  auto logits = lm::lm_logits<T>(g, state.lm, binder, fw.final_reps);
  auto l_c_node = g.masked_nll(logits, a.targets);

  ExampleLoss<T> out;
  out.l_c = static_cast<double>(g.value(l_c_node)[0]);
  auto loss_node = l_c_node;
  if (uses_rating_head(plan.strategy)) {
    auto score = rating_score<T>(g, *state.prompt,
                                 state.mlp ? &*state.mlp : nullptr, binder,
                                 ex.user_row, ex.item_row);
    auto l_r_node = g.squared_error(score, static_cast<T>(ex.rating));
    out.l_r = static_cast<double>(g.value(l_r_node)[0]);
    if (plan.lambda > 0)
      loss_node = g.add(
          l_c_node, g.scale(l_r_node, static_cast<T>(plan.lambda)));
  }
  out.j = static_cast<double>(g.value(loss_node)[0]);
  if (binder) g.backward(loss_node, static_cast<T>(seed));
  return out;
}

template <typename T>
PromptParams<T> prompt_zeros_like(const PromptParams<T>& p) {
  PromptParams<T> z;
  z.users = p.users;
  z.items = p.items;
  z.user_table = num::Tensor<T>::full(p.user_table.shape(), T(0));
  z.item_table = num::Tensor<T>::full(p.item_table.shape(), T(0));
  return z;
}

template <typename T>
RecMlpParams<T> mlp_zeros_like(const RecMlpParams<T>& p) {
  RecMlpParams<T> z;
  for (const auto& w : p.ws)
    z.ws.push_back(num::Tensor<T>::full(w.shape(), T(0)));
  for (const auto& b : p.bs)
    z.bs.push_back(num::Tensor<T>::full(b.shape(), T(0)));
  z.w = num::Tensor<T>::full(p.w.shape(), T(0));
  z.b = num::Tensor<T>::full(p.b.shape(), T(0));
  return z;
}

template <typename T>
void run_stage(const TrainingPlan& plan, const StageSpec& spec,
               ModelState<T>& state,
               const std::vector<TrainExample>& train_set,
               const std::vector<TrainExample>& valid_set, int bos_id,
               int eos_id, TrainResult<T>& result, int& global_epoch,
               const EpochHook<T>& hook) {
  // Gradient sinks exist only for trainable groups; frozen parameters stay
  // out of both the binder and the optimizer, so weight decay cannot move
  // them.
  lm::GradBinder<T> binder;
  num::AdamW<T> opt({static_cast<T>(spec.lr), T(0.9), T(0.999), T(1e-8),
                     static_cast<T>(plan.weight_decay)});

  auto lm_grads = lm::TransformerParams<T>::zeros_like(state.lm);
  std::optional<PromptParams<T>> prompt_grads;
  std::optional<RecMlpParams<T>> mlp_grads;
  auto attach_group = [&](auto& params, auto& grads) {
    std::vector<num::Tensor<T>*> sinks;
    grads.visit([&](const std::string&, num::Tensor<T>& t) {
      sinks.push_back(&t);
    });
    std::size_t slot = 0;
    params.visit([&](const std::string&, num::Tensor<T>& t) {
      binder.bind(t, *sinks[slot]);
      opt.attach(&t, sinks[slot]);
      ++slot;
    });
  };
  if (spec.train_lm) attach_group(state.lm, lm_grads);
  if (spec.train_prompt) {
    if (!state.prompt)
      throw ValidationError("strategy trains prompt parameters but none "
                            "were provided");
    prompt_grads = prompt_zeros_like(*state.prompt);
    attach_group(*state.prompt, *prompt_grads);
  }
  if (spec.train_mlp) {
    if (!state.mlp)
      throw ValidationError("strategy trains the MLP head but none was "
                            "provided");
    mlp_grads = mlp_zeros_like(*state.mlp);
    attach_group(*state.mlp, *mlp_grads);
  }

  const std::vector<TrainExample>& valid_eval =
      valid_set.empty() ? train_set : valid_set;
  num::Rng run_rng(plan.seed);
  int bad_epochs = 0;

  for (int e = 1; e <= plan.max_epochs; ++e) {
    ++global_epoch;
    num::Rng epoch_rng = run_rng.derive(
        1000 * static_cast<std::uint64_t>(spec.stage) +
        static_cast<std::uint64_t>(e));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    epoch_rng.shuffle(order);

    double sum_j = 0, sum_lc = 0, sum_lr = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(plan.batch)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(plan.batch));
      opt.zero_grads();
      double seed = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        auto loss = example_loss<T>(plan, state, train_set[order[k]], bos_id,
                                    eos_id, &binder, seed);
        if (!std::isfinite(loss.j))
          throw NumericError("training loss became non-finite at epoch " +
                             std::to_string(global_epoch));
        sum_j += loss.j;
        sum_lc += loss.l_c;
        if (loss.l_r) sum_lr += *loss.l_r;
      }
      opt.step();
    }
    const double n = static_cast<double>(train_set.size());

    double valid_sum = 0;
    for (const auto& ex : valid_eval)
      valid_sum += example_loss<T>(plan, state, ex, bos_id, eos_id, nullptr, 0)
                       .j;
    double valid_loss = valid_sum / static_cast<double>(valid_eval.size());
    if (!std::isfinite(valid_loss))
      throw NumericError("validation loss became non-finite at epoch " +
                         std::to_string(global_epoch));

    EpochLog entry;
    entry.epoch = global_epoch;
    entry.stage = spec.stage;
    entry.train_loss = sum_j / n;
    entry.valid_loss = valid_loss;
    entry.l_c = sum_lc / n;
    if (uses_rating_head(plan.strategy)) entry.l_r = sum_lr / n;
    result.log.push_back(entry);
    if (hook) hook(entry, state);

    if (valid_loss < result.best_valid) {
      result.best_valid = valid_loss;
      result.best = state;
      bad_epochs = 0;
    } else if (++bad_epochs >= plan.patience) {
      break;
    }
  }
}

inline void check_lengths(const std::vector<TrainExample>& examples,
                          PromptMode mode, int max_seq) {
  for (const auto& ex : examples) {
    std::size_t prompt_rows =
        mode == PromptMode::kContinuous ? 2 : ex.prompt_ids.size();
    std::size_t len = prompt_rows + 1 + ex.expl_ids.size() + 1;
    if (len > static_cast<std::size_t>(max_seq))
      throw ValidationError(
          "example sequence length " + std::to_string(len) +
          " exceeds max_seq " + std::to_string(max_seq) +
          "; lower the prompt budget or explanation length");
    if (ex.expl_ids.empty())
      throw ValidationError("example has an empty explanation");
  }
}

}  // namespace detail

// Runs the selected strategy. Sequential trains the prompt against a frozen
// backbone until early stopping, then fine-tunes everything from the best
// stage-1 state with a fresh optimizer. Rec-regularized strategies minimize
// L_C + lambda * L_R in a single stage. Early stopping and the returned
// best state follow validation loss with the plan's patience; with an empty
// validation set the training set stands in.
template <typename T>
TrainResult<T> train(const TrainingPlan& plan, ModelState<T> state,
                     const std::vector<TrainExample>& train_set,
                     const std::vector<TrainExample>& valid_set, int bos_id,
                     int eos_id, const EpochHook<T>& hook = {}) {
  plan.validate();
  if (train_set.empty()) throw ValidationError("empty training set");
  if (plan.mode == PromptMode::kContinuous && !state.prompt)
    throw ValidationError("continuous mode needs prompt parameters");
  if (plan.strategy == Strategy::kRecRegularizedMlp && !state.mlp)
    throw ValidationError("rec-regularized-mlp needs MLP head parameters");
  detail::check_lengths(train_set, plan.mode, state.lm.config.max_seq);
  detail::check_lengths(valid_set, plan.mode, state.lm.config.max_seq);

  TrainResult<T> result;
  result.best = state;
  int global_epoch = 0;

  detail::StageSpec spec;
  spec.lr = plan.lr;
  switch (plan.strategy) {
    case Strategy::kFixedLmPromptTuning:
      spec.train_prompt = true;
      detail::run_stage<T>(plan, spec, state, train_set, valid_set, bos_id,
                           eos_id, result, global_epoch, hook);
      break;
    case Strategy::kPromptLmFineTuning:
      spec.train_lm = true;
      spec.train_prompt = plan.mode == PromptMode::kContinuous;
      detail::run_stage<T>(plan, spec, state, train_set, valid_set, bos_id,
                           eos_id, result, global_epoch, hook);
      break;
    case Strategy::kSequential: {
      spec.train_prompt = true;
      detail::run_stage<T>(plan, spec, state, train_set, valid_set, bos_id,
                           eos_id, result, global_epoch, hook);
      state = result.best;  // stage 2 resumes from the best stage-1 state
      detail::StageSpec stage2;
      stage2.stage = 2;
      stage2.lr = plan.lr_stage2;
      stage2.train_lm = true;
      stage2.train_prompt = true;
      detail::run_stage<T>(plan, stage2, state, train_set, valid_set, bos_id,
                           eos_id, result, global_epoch, hook);
      break;
    }
    case Strategy::kRecRegularizedMf:
    case Strategy::kRecRegularizedMlp:
      spec.train_lm = true;
      spec.train_prompt = true;
      spec.train_mlp = plan.strategy == Strategy::kRecRegularizedMlp;
      detail::run_stage<T>(plan, spec, state, train_set, valid_set, bos_id,
                           eos_id, result, global_epoch, hook);
      break;
  }
  result.final = std::move(state);
  return result;
}

}  // namespace pepler::model
