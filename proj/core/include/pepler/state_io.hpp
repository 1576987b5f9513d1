#pragma once

#include <map>
#include <string>

#include "pepler/checkpoint.hpp"
#include "pepler/config.hpp"
#include "pepler/model.hpp"
#include "pepler/train.hpp"

// Bridges between in-memory parameter packs (anything with visit()) and the
// f32 tensor maps the checkpoint format stores.

namespace pepler {

template <typename T, typename P>
TensorMap snapshot_tensors(const P& params) {
  TensorMap out;
  params.visit([&out](const std::string& name, const num::Tensor<T>& t) {
    num::Tensor<float> copy(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
      copy[i] = static_cast<float>(t[i]);
    out.emplace(name, std::move(copy));
  });
  return out;
}

// Fills params from the map. The tensor sets must match exactly: a missing
// name means the checkpoint was written by a different model shape, an extra
// name means the caller reconstructed the wrong parameter groups.
template <typename T, typename P>
void restore_tensors(P& params, const TensorMap& tensors) {
  std::size_t seen = 0;
  params.visit([&](const std::string& name, num::Tensor<T>& t) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw CheckpointError(CheckpointError::Kind::kBadHeader,
                            "checkpoint is missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw CheckpointError(CheckpointError::Kind::kShapeMismatch,
                            "tensor " + name + ": checkpoint shape " +
                                it->second.shape_str() +
                                " does not match configured shape " +
                                t.shape_str());
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(it->second[i]);
    ++seen;
  });
  if (seen != tensors.size()) {
    std::string extras;
    for (const auto& kv : tensors) {
      bool known = false;
      params.visit([&](const std::string& n, num::Tensor<T>&) {
        known = known || n == kv.first;
      });
      if (!known) extras += (extras.empty() ? "" : ", ") + kv.first;
    }
    throw CheckpointError(CheckpointError::Kind::kBadHeader,
                          "checkpoint holds unexpected tensors: " + extras);
  }
}

inline lm::TransformerConfig transformer_config(const cli::Config& c) {
  lm::TransformerConfig t;
  t.layers = c.layers;
  t.heads = c.heads;
  t.dim = c.dim;
  t.ffn_dim = c.ffn_dim;
  t.max_seq = c.max_seq;
  t.vocab = c.vocab;
  t.scale_per_head = c.attn_scale == "per_head";
  return t;
}

inline model::TrainingPlan training_plan(const cli::Config& c) {
  model::TrainingPlan plan;
  plan.mode = model::parse_mode(c.mode);
  plan.strategy = model::parse_strategy(c.strategy);
  plan.lambda = c.lambda;
  plan.lr = c.resolved_lr();
  plan.lr_stage2 = c.resolved_lr_stage2();
  plan.weight_decay = c.weight_decay;
  plan.batch = c.batch;
  plan.patience = c.patience;
  plan.max_epochs = c.max_epochs;
  plan.seed = c.seed;
  plan.pos_on_prompt = c.pos_on_prompt;
  return plan;
}

inline cli::Config config_from_meta(
    const std::map<std::string, std::string>& meta_config) {
  cli::Config cfg;
  for (const auto& [key, value] : meta_config)
    cli::set_config_key(cfg, key, value);
  cli::validate_config(cfg);
  return cfg;
}

// Rebuilds a full model state (backbone, prompt tables when user/item ids
// are recorded, MLP head when its tensors are present) from a checkpoint.
template <typename T>
model::ModelState<T> restore_state(const Checkpoint& ck) {
  cli::Config cfg = config_from_meta(ck.meta.config);
  lm::TransformerConfig tc = transformer_config(cfg);

  model::ModelState<T> st;
  num::Rng scratch(0);  // shapes only; every value is overwritten below
  st.lm = lm::TransformerParams<T>::init(tc, scratch);

  if (!ck.meta.users.empty() || ck.tensors.count("prompt.user")) {
    model::PromptParams<T> pp;
    pp.users = model::IdIndex(ck.meta.users);
    pp.items = model::IdIndex(ck.meta.items);
    pp.user_table = num::Tensor<T>(
        {pp.users.size(), static_cast<std::size_t>(tc.dim)});
    pp.item_table = num::Tensor<T>(
        {pp.items.size(), static_cast<std::size_t>(tc.dim)});
    st.prompt = std::move(pp);
  }

  if (ck.tensors.count("rec.mlp.0.w")) {
    model::RecMlpParams<T> mlp;
    for (std::size_t k = 0;; ++k) {
      auto it = ck.tensors.find("rec.mlp." + std::to_string(k) + ".w");
      if (it == ck.tensors.end()) break;
      mlp.ws.emplace_back(num::Tensor<T>(it->second.shape()));
      mlp.bs.emplace_back(
          num::Tensor<T>({it->second.shape()[0]}));
    }
    const std::size_t dh = mlp.ws.front().shape()[0];
    mlp.w = num::Tensor<T>({dh});
    mlp.b = num::Tensor<T>::scalar(T(0));
    st.mlp = std::move(mlp);
  }

  restore_tensors<T>(st, ck.tensors);
  return st;
}

// Backbone-only restore, shaped by the caller's config so a checkpoint
// written under different model dimensions fails with a shape mismatch.
template <typename T>
lm::TransformerParams<T> restore_backbone(const Checkpoint& ck,
                                          const lm::TransformerConfig& tc) {
  num::Rng scratch(0);  // shapes only; every value is overwritten below
  auto params = lm::TransformerParams<T>::init(tc, scratch);
  restore_tensors<T>(params, ck.tensors);
  return params;
}

// Backbone-only restore for checkpoints written by pretraining.
template <typename T>
lm::TransformerParams<T> restore_backbone(const Checkpoint& ck) {
  cli::Config cfg = config_from_meta(ck.meta.config);
  return restore_backbone<T>(ck, transformer_config(cfg));
}

}  // namespace pepler
