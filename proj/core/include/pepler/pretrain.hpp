#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "pepler/adamw.hpp"
#include "pepler/training_log.hpp"
#include "pepler/transformer.hpp"

namespace pepler::lm {

struct PretrainHyper {
  double lr = 1e-3;
  double weight_decay = 0.01;
  int batch = 16;      // windows per optimizer step
  int max_epochs = 50;
  int patience = 5;
  double valid_fraction = 0.1;
  std::uint64_t seed = 42;
};

template <typename T>
struct PretrainResult {
  TransformerParams<T> best;   // lowest validation loss seen
  TransformerParams<T> final;  // state at the last executed epoch
  std::vector<EpochLog> log;
  double best_valid = std::numeric_limits<double>::infinity();
};

namespace detail {

// Mean next-token NLL of one window under the current parameters.
template <typename T>
double window_nll(const TransformerParams<T>& params,
                  const std::vector<int>& ids, GradBinder<T>* binder,
                  double backward_seed) {
  num::Graph<T> g;
  auto s0 = embed_tokens<T>(g, params, binder, ids);
  auto fw = forward_graph<T>(g, params, binder, s0,
                             causal_mask<T>(ids.size()));
  auto logits = lm_logits<T>(g, params, binder, fw.final_reps);
  std::vector<int> targets(ids.begin() + 1, ids.end());
  targets.push_back(-1);  // nothing to predict after the last position
  auto loss = g.masked_nll(logits, targets);
  double value = g.value(loss)[0];
  if (binder) g.backward(loss, static_cast<T>(backward_seed));
  return value;
}

}  // namespace detail

// Next-token pretraining over non-overlapping max_seq windows of the token
// stream. A shuffled holdout of windows drives early stopping; the best
// validation state is kept. Window order reshuffles every epoch; all
// randomness derives from hyper.seed.
template <typename T>
PretrainResult<T> pretrain(
    const std::vector<int>& stream, const TransformerConfig& config,
    const PretrainHyper& hyper,
    const std::function<void(const EpochLog&, const TransformerParams<T>&)>&
        epoch_hook = {}) {
  config.validate();
  const std::size_t window = static_cast<std::size_t>(config.max_seq);
  const std::size_t n_windows = stream.size() / window;
  if (n_windows == 0)
    throw ValidationError("pretraining corpus has " +
                          std::to_string(stream.size()) +
                          " tokens, shorter than one window of " +
                          std::to_string(window));

  num::Rng rng(hyper.seed);
  num::Rng init_rng = rng.derive(1);
  auto params = TransformerParams<T>::init(config, init_rng);

  std::vector<std::vector<int>> windows(n_windows);
  for (std::size_t w = 0; w < n_windows; ++w)
    windows[w].assign(stream.begin() + static_cast<std::ptrdiff_t>(w * window),
                      stream.begin() +
                          static_cast<std::ptrdiff_t>((w + 1) * window));

  std::vector<std::size_t> order(n_windows);
  for (std::size_t i = 0; i < n_windows; ++i) order[i] = i;
  num::Rng split_rng = rng.derive(2);
  split_rng.shuffle(order);
  std::size_t n_valid = static_cast<std::size_t>(
      static_cast<double>(n_windows) * hyper.valid_fraction);
  if (n_valid >= n_windows) n_valid = n_windows - 1;
  if (n_valid == 0 && hyper.valid_fraction > 0 && n_windows >= 2) n_valid = 1;
  std::vector<std::size_t> train_ids(order.begin(), order.end() - n_valid);
  std::vector<std::size_t> valid_ids(order.end() - n_valid, order.end());
  if (valid_ids.empty()) valid_ids = train_ids;  // degenerate tiny corpus

  auto grads = TransformerParams<T>::zeros_like(params);
  GradBinder<T> binder;
  num::AdamW<T> opt({static_cast<T>(hyper.lr), T(0.9), T(0.999), T(1e-8),
                     static_cast<T>(hyper.weight_decay)});
  {
    std::vector<num::Tensor<T>*> grad_ptrs;
    grads.visit([&](const std::string&, num::Tensor<T>& t) {
      grad_ptrs.push_back(&t);
    });
    std::size_t slot = 0;
    params.visit([&](const std::string&, num::Tensor<T>& t) {
      binder.bind(t, *grad_ptrs[slot]);
      opt.attach(&t, grad_ptrs[slot]);
      ++slot;
    });
  }

  PretrainResult<T> result;
  result.best = params;
  result.final = params;
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    num::Rng epoch_rng = rng.derive(100 + static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> sched = train_ids;
    epoch_rng.shuffle(sched);

    double train_sum = 0;
    for (std::size_t start = 0; start < sched.size();
         start += static_cast<std::size_t>(hyper.batch)) {
      std::size_t end = std::min(sched.size(),
                                 start + static_cast<std::size_t>(hyper.batch));
      opt.zero_grads();
      double seed = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        double loss =
            detail::window_nll<T>(params, windows[sched[k]], &binder, seed);
        if (!std::isfinite(loss))
          throw NumericError("pretraining loss became non-finite at epoch " +
                             std::to_string(epoch));
        train_sum += loss;
      }
      opt.step();
    }
    double train_loss = train_sum / static_cast<double>(sched.size());

    double valid_sum = 0;
    for (std::size_t w : valid_ids)
      valid_sum += detail::window_nll<T>(params, windows[w], nullptr, 0);
    double valid_loss = valid_sum / static_cast<double>(valid_ids.size());
    if (!std::isfinite(valid_loss))
      throw NumericError("validation loss became non-finite at epoch " +
                         std::to_string(epoch));

    EpochLog entry;
    entry.epoch = epoch;
    entry.stage = 1;
    entry.train_loss = train_loss;
    entry.valid_loss = valid_loss;
    entry.l_c = train_loss;
    result.log.push_back(entry);
    if (epoch_hook) epoch_hook(entry, params);

    if (valid_loss < result.best_valid) {
      result.best_valid = valid_loss;
      result.best = params;
      bad_epochs = 0;
    } else if (++bad_epochs >= hyper.patience) {
      break;
    }
  }
  result.final = params;
  return result;
}

}  // namespace pepler::lm
