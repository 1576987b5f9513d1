// Acceptance gate for the whole pipeline: nine checks with hard thresholds,
// one PASS/FAIL line each, nonzero exit when anything fails. All numeric
// checks run in 64-bit precision.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pepler/bpe.hpp"
#include "pepler/checkpoint.hpp"
#include "pepler/corpus.hpp"
#include "pepler/metrics.hpp"
#include "pepler/model.hpp"
#include "pepler/state_io.hpp"
#include "pepler/train.hpp"
#include "pepler/transformer.hpp"

using namespace pepler;

namespace {

bool bits_equal(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

template <typename P>
bool params_bitwise_equal(const P& a, const P& b) {
  std::vector<const num::Tensor<double>*> ta, tb;
  a.visit([&](const std::string&, const num::Tensor<double>& t) {
    ta.push_back(&t);
  });
  b.visit([&](const std::string&, const num::Tensor<double>& t) {
    tb.push_back(&t);
  });
  if (ta.size() != tb.size()) return false;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (ta[k]->shape() != tb[k]->shape()) return false;
    for (std::size_t i = 0; i < ta[k]->size(); ++i)
      if (!bits_equal((*ta[k])[i], (*tb[k])[i])) return false;
  }
  return true;
}

template <typename P>
std::size_t scalar_count(const P& params) {
  std::size_t n = 0;
  params.visit([&](const std::string&, const num::Tensor<double>& t) {
    n += t.size();
  });
  return n;
}

// ---------------------------------------------------------------- check 1

bool check_gradients(std::string& detail) {
  lm::TransformerConfig tc;
  tc.layers = 1;
  tc.heads = 2;
  tc.dim = 16;
  tc.ffn_dim = 32;
  tc.max_seq = 16;
  tc.vocab = 64;

  num::Rng lw(11), pw(12), mw(13);
  auto lm_params = lm::TransformerParams<double>::init(tc, lw);
  model::IdIndex users(std::vector<std::string>{"u0", "u1"});
  model::IdIndex items(std::vector<std::string>{"i0", "i1"});
  auto prompt = model::PromptParams<double>::init(users, items, tc.dim, pw);
  auto mlp = model::RecMlpParams<double>::init(1, 8, tc.dim, mw);

  model::TrainExample ex;
  ex.user_row = 0;
  ex.item_row = 1;
  ex.expl_ids = {3, 9, 27};
  ex.rating = 4;
  const int bos = 60, eos = 63;
  const double lambda = 0.7;

  auto combined_loss = [&](const lm::GradBinder<double>* b, bool use_mlp) {
    num::Graph<double> g;
    auto a = model::assemble_input<double>(g, lm_params, &prompt, b,
                                           model::PromptMode::kContinuous,
                                           ex, bos, eos);
    auto fw = lm::forward_graph<double>(g, lm_params, b, a.s0,
                                        lm::causal_mask<double>(a.len));
    auto logits = lm::lm_logits<double>(g, lm_params, b, fw.final_reps);
    auto l_c = g.masked_nll(logits, a.targets);
    auto score = model::rating_score<double>(g, prompt,
                                             use_mlp ? &mlp : nullptr, b,
                                             ex.user_row, ex.item_row);
    auto l_r = g.squared_error(score, static_cast<double>(ex.rating));
    auto loss = g.add(l_c, g.scale(l_r, lambda));
    double v = g.value(loss)[0];
    if (b) g.backward(loss);
    return v;
  };

  double worst = 0;

  {
    // MLP-head objective, every parameter group bound
    auto lm_grads = lm::TransformerParams<double>::zeros_like(lm_params);
    auto prompt_grads = prompt;
    prompt_grads.visit([](const std::string&, num::Tensor<double>& t) {
      t = num::Tensor<double>(t.shape());
    });
    auto mlp_grads = mlp;
    mlp_grads.visit([](const std::string&, num::Tensor<double>& t) {
      t = num::Tensor<double>(t.shape());
    });

    lm::GradBinder<double> binder;
    std::vector<num::Tensor<double>*> ps;
    std::vector<const num::Tensor<double>*> gs;
    auto attach = [&](auto& params, auto& grads) {
      std::vector<num::Tensor<double>*> sinks;
      grads.visit([&](const std::string&, num::Tensor<double>& t) {
        sinks.push_back(&t);
      });
      std::size_t slot = 0;
      params.visit([&](const std::string&, num::Tensor<double>& t) {
        binder.bind(t, *sinks[slot]);
        ps.push_back(&t);
        gs.push_back(sinks[slot]);
        ++slot;
      });
    };
    attach(lm_params, lm_grads);
    attach(prompt, prompt_grads);
    attach(mlp, mlp_grads);

    combined_loss(&binder, true);
    worst = std::max(
        worst, num::finite_diff_check([&] { return combined_loss(nullptr, true); },
                                      ps, gs));
  }

  {
    // MF-head objective reaches the prompt tables through the dot product
    auto prompt_grads = prompt;
    prompt_grads.visit([](const std::string&, num::Tensor<double>& t) {
      t = num::Tensor<double>(t.shape());
    });
    lm::GradBinder<double> binder;
    std::vector<num::Tensor<double>*> ps;
    std::vector<const num::Tensor<double>*> gs;
    std::vector<num::Tensor<double>*> sinks;
    prompt_grads.visit([&](const std::string&, num::Tensor<double>& t) {
      sinks.push_back(&t);
    });
    std::size_t slot = 0;
    prompt.visit([&](const std::string&, num::Tensor<double>& t) {
      binder.bind(t, *sinks[slot]);
      ps.push_back(&t);
      gs.push_back(sinks[slot]);
      ++slot;
    });

    combined_loss(&binder, false);
    worst = std::max(
        worst, num::finite_diff_check([&] { return combined_loss(nullptr, false); },
                                      ps, gs));
  }

  char buf[64];
  std::snprintf(buf, sizeof buf, "max relative error %.3g", worst);
  detail = buf;
  return worst < 1e-5;
}

// ---------------------------------------------------------------- check 2

bool check_causality(std::string& detail) {
  lm::TransformerConfig tc;
  tc.layers = 2;
  tc.heads = 2;
  tc.dim = 16;
  tc.ffn_dim = 32;
  tc.max_seq = 16;
  tc.vocab = 64;
  num::Rng pw(21);
  auto params = lm::TransformerParams<double>::init(tc, pw);

  auto logits_for = [&](const std::vector<int>& ids) {
    num::Graph<double> g;
    auto s0 = lm::embed_tokens<double>(g, params, nullptr, ids);
    auto fw = lm::forward_graph<double>(g, params, nullptr, s0,
                                        lm::causal_mask<double>(ids.size()));
    auto logits = lm::lm_logits<double>(g, params, nullptr, fw.final_reps);
    return g.value(logits);
  };

  num::Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 2 + rng.next_u64() % 15;  // [2, 16]
    std::vector<int> ids(len);
    for (auto& id : ids) id = static_cast<int>(rng.next_u64() % 64);
    const std::size_t cut = 1 + rng.next_u64() % (len - 1);  // [1, len)

    auto base = logits_for(ids);
    std::vector<int> perturbed = ids;
    for (std::size_t p = cut; p < len; ++p)
      perturbed[p] =
          (perturbed[p] + 1 + static_cast<int>(rng.next_u64() % 63)) % 64;
    auto other = logits_for(perturbed);

    for (std::size_t r = 0; r < cut; ++r)
      for (std::size_t c = 0; c < base.cols(); ++c)
        if (!bits_equal(base.at(r, c), other.at(r, c))) {
          char buf[96];
          std::snprintf(buf, sizeof buf,
                        "trial %d: row %zu changed after perturbing >= %zu",
                        trial, r, cut);
          detail = buf;
          return false;
        }
  }
  detail = "100 perturbation trials, past logits bitwise stable";
  return true;
}

// ------------------------------------------------------------- check 3

struct SyntheticCorpus {
  std::vector<corpus::Record> records;
  std::string all_text;
};

// feature and text depend on both ids: 64 distinct templated explanations
SyntheticCorpus pair_keyed_corpus() {
  const char* feats[8] = {"pool",   "gym",  "breakfast", "bathroom",
                          "subway", "view", "wifi",      "parking"};
  SyntheticCorpus c;
  for (int u = 0; u < 8; ++u)
    for (int i = 0; i < 8; ++i) {
      corpus::Record r;
      r.user = "u" + std::to_string(u);
      r.item = "i" + std::to_string(i);
      r.rating = (u + i) % 5 + 1;
      r.text = std::string("the ") + feats[(u + i) % 8] + " at i" +
               std::to_string(i) + " pleased u" + std::to_string(u);
      r.feature = feats[(u + i) % 8];
      c.records.push_back(r);
      c.all_text += r.text + "\n";
    }
  return c;
}

// text depends on the item alone so held-out pairs are predictable
SyntheticCorpus item_keyed_corpus() {
  const char* sig[8] = {"pool",   "gym",  "breakfast", "bathroom",
                        "subway", "view", "wifi",      "parking"};
  SyntheticCorpus c;
  for (int u = 0; u < 8; ++u)
    for (int i = 0; i < 8; ++i) {
      corpus::Record r;
      r.user = "u" + std::to_string(u);
      r.item = "i" + std::to_string(i);
      r.rating = (u + 2 * i) % 5 + 1;
      r.text = std::string("the ") + sig[i] + " was delightful";
      r.feature = sig[i];
      c.records.push_back(r);
      c.all_text += r.text + "\n";
    }
  return c;
}

bool check_memorization(std::string& detail) {
  auto corpus = pair_keyed_corpus();
  auto tok = bpe::BpeModel::train(corpus.all_text, 300);
  int expl_len = 0;
  for (const auto& r : corpus.records)
    expl_len = std::max(expl_len,
                        static_cast<int>(tok.encode(r.text).size()));

  lm::TransformerConfig tc;
  tc.layers = 2;
  tc.heads = 2;
  tc.dim = 48;
  tc.ffn_dim = 96;
  tc.max_seq = expl_len + 4;
  tc.vocab = 300;

  num::Rng lw(1), pw(2);
  model::ModelState<double> state;
  state.lm = lm::TransformerParams<double>::init(tc, lw);
  std::set<std::string> us, is;
  for (const auto& r : corpus.records) {
    us.insert(r.user);
    is.insert(r.item);
  }
  model::IdIndex users(us), items(is);
  state.prompt = model::PromptParams<double>::init(users, items, tc.dim, pw);

  std::vector<std::size_t> idx(corpus.records.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  auto examples = model::make_examples(corpus.records, idx,
                                       model::PromptMode::kContinuous, tok,
                                       expl_len, &users, &items, nullptr, 0);

  model::TrainingPlan plan;
  plan.mode = model::PromptMode::kContinuous;
  plan.strategy = model::Strategy::kSequential;
  plan.lr = 3e-3;
  plan.lr_stage2 = 3e-3;
  plan.batch = 8;
  plan.patience = 100000;  // run both stages to max_epochs
  plan.max_epochs = 100;
  plan.seed = 42;

  auto result = model::train<double>(plan, std::move(state), examples, {},
                                     tok.bos_id(), tok.eos_id());

  const int steps_per_epoch =
      static_cast<int>((examples.size() + plan.batch - 1) / plan.batch);
  int first_under = -1, stage2_epoch = 0;
  for (const auto& e : result.log) {
    if (e.stage != 2) continue;
    ++stage2_epoch;
    if (e.l_c < 0.1) {
      first_under = stage2_epoch * steps_per_epoch;
      break;
    }
  }

  int verbatim = 0;
  for (const auto& r : corpus.records) {
    auto text = model::generate<double>(
        model::PromptMode::kContinuous, r.user, r.item, result.best.lm,
        &*result.best.prompt, nullptr, tok, 0, expl_len + 2);
    if (text == r.text) ++verbatim;
  }

  char buf[96];
  std::snprintf(buf, sizeof buf,
                "training NLL < 0.1 after %d steps, verbatim %d/64",
                first_under, verbatim);
  detail = buf;
  return first_under > 0 && first_under <= 500 && verbatim >= 58;
}

// ------------------------------------------------------------- check 4

bool check_discrete_prompt(std::string& detail) {
  auto mk = [](const std::string& user, const std::string& item,
               const std::string& feature) {
    corpus::Record r;
    r.user = user;
    r.item = item;
    r.rating = 5;
    r.text = "liked the " + feature;
    r.feature = feature;
    return r;
  };
  // mention frequency orders each profile: F_u = [gym, bathroom, breakfast],
  // F_i = [gym, breakfast, subway, Wi-Fi]
  std::vector<corpus::Record> records;
  for (int k = 0; k < 3; ++k)
    records.push_back(mk("u", "x" + std::to_string(k), "gym"));
  for (int k = 0; k < 2; ++k)
    records.push_back(mk("u", "y" + std::to_string(k), "bathroom"));
  records.push_back(mk("u", "z", "breakfast"));
  for (int k = 0; k < 4; ++k)
    records.push_back(mk("a" + std::to_string(k), "i", "gym"));
  for (int k = 0; k < 3; ++k)
    records.push_back(mk("b" + std::to_string(k), "i", "breakfast"));
  for (int k = 0; k < 2; ++k)
    records.push_back(mk("c" + std::to_string(k), "i", "subway"));
  records.push_back(mk("d", "i", "Wi-Fi"));

  auto profiles = corpus::FeatureProfiles::build(records);
  auto tok = bpe::BpeModel::train("gym bathroom breakfast subway Wi-Fi", 259);
  // byte-level widths: "gym" 3, " breakfast" 10, " bathroom" 9, " subway" 7
  auto prompt = corpus::build_discrete_prompt("u", "i", profiles,
                                              3 + 10 + 9 + 7, tok);

  std::vector<std::string> expected = {"gym", "breakfast", "bathroom",
                                       "subway"};
  std::string got;
  for (const auto& f : prompt.features) got += (got.empty() ? "" : ", ") + f;
  detail = "[" + got + "]";
  return prompt.features == expected;
}

// ------------------------------------------------------------- check 5

bool check_strategy_contracts(std::string& detail) {
  auto corpus = pair_keyed_corpus();
  corpus.records.resize(16);  // 2 users x 8 items is plenty here
  auto tok = bpe::BpeModel::train(corpus.all_text, 300);
  int expl_len = 0;
  for (const auto& r : corpus.records)
    expl_len = std::max(expl_len,
                        static_cast<int>(tok.encode(r.text).size()));

  lm::TransformerConfig tc;
  tc.layers = 1;
  tc.heads = 2;
  tc.dim = 16;
  tc.ffn_dim = 32;
  tc.max_seq = expl_len + 4;
  tc.vocab = 300;

  num::Rng lw(31), pw(32);
  model::ModelState<double> init;
  init.lm = lm::TransformerParams<double>::init(tc, lw);
  std::set<std::string> us, is;
  for (const auto& r : corpus.records) {
    us.insert(r.user);
    is.insert(r.item);
  }
  model::IdIndex users(us), items(is);
  init.prompt = model::PromptParams<double>::init(users, items, tc.dim, pw);

  std::vector<std::size_t> idx(corpus.records.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  auto examples = model::make_examples(corpus.records, idx,
                                       model::PromptMode::kContinuous, tok,
                                       expl_len, &users, &items, nullptr, 0);

  model::TrainingPlan plan;
  plan.mode = model::PromptMode::kContinuous;
  plan.lr = 1e-3;
  plan.batch = 4;
  plan.patience = 1000;
  plan.max_epochs = 3;
  plan.seed = 7;

  // (a) the prompt-tuning stage must not move the backbone
  plan.strategy = model::Strategy::kFixedLmPromptTuning;
  auto fixed = model::train<double>(plan, init, examples, {}, tok.bos_id(),
                                    tok.eos_id());
  const bool lm_frozen = params_bitwise_equal(fixed.final.lm, init.lm);
  const bool prompt_moved =
      !params_bitwise_equal(*fixed.final.prompt, *init.prompt);

  // (b) lambda = 0 keeps the rating branch out of the gradients entirely
  plan.strategy = model::Strategy::kPromptLmFineTuning;
  auto fine = model::train<double>(plan, init, examples, {}, tok.bos_id(),
                                   tok.eos_id());
  plan.strategy = model::Strategy::kRecRegularizedMf;
  plan.lambda = 0.0;
  auto mf = model::train<double>(plan, init, examples, {}, tok.bos_id(),
                                 tok.eos_id());
  const bool lambda0_identical =
      params_bitwise_equal(fine.final.lm, mf.final.lm) &&
      params_bitwise_equal(*fine.final.prompt, *mf.final.prompt);

  // (c) the MF head introduces no parameters of its own
  const bool mf_zero_params =
      !mf.final.mlp && scalar_count(mf.final) == scalar_count(fine.final);

  detail = std::string("backbone frozen: ") + (lm_frozen ? "yes" : "NO") +
           ", lambda=0 bitwise equal: " + (lambda0_identical ? "yes" : "NO") +
           ", MF extra params: " + (mf_zero_params ? "0" : "NONZERO");
  return lm_frozen && prompt_moved && lambda0_identical && mf_zero_params;
}

// ------------------------------------------------------------- check 6

bool check_metric_oracles(std::string& detail) {
  auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-9; };
  std::vector<std::pair<std::string, bool>> results;

  std::vector<std::string> cand = {"the pool is great"};
  std::vector<std::string> ref = {"the swimming pool is fantastic"};
  results.emplace_back(
      "bleu1", close(metrics::bleu(cand, ref, 1), 75.0 * std::exp(-0.25)));

  auto r = metrics::rouge(cand, ref);
  results.emplace_back("rouge1",
                       close(r.p1, 75.0) && close(r.r1, 60.0) &&
                           close(r.f1, 200.0 / 3.0));

  std::vector<std::string> four = {"nice pool", "nice pool", "bad room",
                                   "bad room"};
  results.emplace_back("usr", close(metrics::usr(four), 0.5));

  std::vector<metrics::EvalSample> hit = {
      {"the swimming pool is fantastic", "ref", "pool"}};
  std::vector<metrics::EvalSample> miss = {
      {"the pool is great", "ref", "bathroom"}};
  results.emplace_back("fmr", close(metrics::fmr(hit), 1.0) &&
                                  close(metrics::fmr(miss), 0.0));

  std::vector<std::string> universe = {"pool", "room", "location"};
  std::vector<metrics::EvalSample> two_of_three = {
      {"the pool is great", "r", "pool"},
      {"the room was clean", "r", "room"},
  };
  results.emplace_back("fcr",
                       close(metrics::fcr(two_of_three, universe), 2.0 / 3.0));

  std::vector<std::string> div_universe = {"pool", "room", "view"};
  std::vector<std::string> disjoint = {"the pool is great",
                                       "the room was clean"};
  std::vector<std::string> share_two = {"pool and room together",
                                        "room by the pool"};
  std::vector<std::string> all_pool = {"pool one", "pool two", "pool three"};
  results.emplace_back("div",
                       close(metrics::div(disjoint, div_universe), 0.0) &&
                           close(metrics::div(share_two, div_universe), 2.0) &&
                           close(metrics::div(all_pool, div_universe), 1.0));

  std::string failed;
  for (const auto& [name, ok] : results)
    if (!ok) failed += (failed.empty() ? "" : ", ") + name;
  detail = failed.empty() ? "all oracle fixtures exact to 1e-9"
                          : "off-oracle: " + failed;
  return failed.empty();
}

// ------------------------------------------------------------- check 7

bool check_personalization(std::string& detail) {
  auto corpus = item_keyed_corpus();
  auto tok = bpe::BpeModel::train(corpus.all_text, 300);
  int expl_len = 0;
  for (const auto& r : corpus.records)
    expl_len = std::max(expl_len,
                        static_cast<int>(tok.encode(r.text).size()));

  lm::TransformerConfig tc;
  tc.layers = 2;
  tc.heads = 2;
  tc.dim = 48;
  tc.ffn_dim = 96;
  tc.max_seq = expl_len + 4;
  tc.vocab = 300;

  auto split = corpus::make_split(corpus.records, 5);
  auto users = model::index_users(corpus.records, split.train);
  auto items = model::index_items(corpus.records, split.train);

  num::Rng lw(1), pw(2);
  model::ModelState<double> init;
  init.lm = lm::TransformerParams<double>::init(tc, lw);
  init.prompt = model::PromptParams<double>::init(users, items, tc.dim, pw);

  auto train_ex = model::make_examples(corpus.records, split.train,
                                       model::PromptMode::kContinuous, tok,
                                       expl_len, &users, &items, nullptr, 0);
  auto valid_ex = model::make_examples(corpus.records, split.valid,
                                       model::PromptMode::kContinuous, tok,
                                       expl_len, &users, &items, nullptr, 0);

  auto fmr_on_test = [&](const model::ModelState<double>& st) {
    std::vector<metrics::EvalSample> samples;
    for (std::size_t i : split.test) {
      const auto& r = corpus.records[i];
      auto text = model::generate<double>(
          model::PromptMode::kContinuous, r.user, r.item, st.lm, &*st.prompt,
          nullptr, tok, 0, expl_len + 2);
      samples.push_back({text, r.text, r.feature});
    }
    return metrics::fmr(samples);
  };

  const double fmr_untrained = fmr_on_test(init);

  model::TrainingPlan plan;
  plan.mode = model::PromptMode::kContinuous;
  plan.strategy = model::Strategy::kSequential;
  plan.lr = 3e-3;
  plan.lr_stage2 = 3e-3;
  plan.batch = 8;
  plan.patience = 100000;
  plan.max_epochs = 60;
  plan.seed = 42;
  auto result = model::train<double>(plan, init, train_ex, valid_ex,
                                     tok.bos_id(), tok.eos_id());
  const double fmr_trained = fmr_on_test(result.best);

  char buf[96];
  std::snprintf(buf, sizeof buf, "held-out FMR %.3f untrained -> %.3f trained",
                fmr_untrained, fmr_trained);
  detail = buf;
  return fmr_trained > fmr_untrained && fmr_trained >= 0.8;
}

// ------------------------------------------------------------- check 8

bool check_regularization_direction(std::string& detail) {
  auto corpus = item_keyed_corpus();
  auto tok = bpe::BpeModel::train(corpus.all_text, 300);
  int expl_len = 0;
  for (const auto& r : corpus.records)
    expl_len = std::max(expl_len,
                        static_cast<int>(tok.encode(r.text).size()));

  lm::TransformerConfig tc;
  tc.layers = 2;
  tc.heads = 2;
  tc.dim = 48;
  tc.ffn_dim = 96;
  tc.max_seq = expl_len + 4;
  tc.vocab = 300;

  auto split = corpus::make_split(corpus.records, 5);
  auto users = model::index_users(corpus.records, split.train);
  auto items = model::index_items(corpus.records, split.train);

  num::Rng lw(1), pw(2);
  model::ModelState<double> init;
  init.lm = lm::TransformerParams<double>::init(tc, lw);
  init.prompt = model::PromptParams<double>::init(users, items, tc.dim, pw);

  auto train_ex = model::make_examples(corpus.records, split.train,
                                       model::PromptMode::kContinuous, tok,
                                       expl_len, &users, &items, nullptr, 0);

  auto final_l_r = [&](double lambda) {
    model::TrainingPlan plan;
    plan.mode = model::PromptMode::kContinuous;
    plan.strategy = model::Strategy::kRecRegularizedMf;
    plan.lambda = lambda;
    plan.lr = 3e-3;
    plan.batch = 8;
    plan.patience = 100000;
    plan.max_epochs = 10;
    plan.seed = 42;
    auto result = model::train<double>(plan, init, train_ex, {},
                                       tok.bos_id(), tok.eos_id());
    return *result.log.back().l_r;
  };

  const double strong = final_l_r(1e3);
  const double weak = final_l_r(1e-5);
  char buf[96];
  std::snprintf(buf, sizeof buf,
                "final L_R %.4f (lambda 1e3) vs %.4f (lambda 1e-5)", strong,
                weak);
  detail = buf;
  return strong < weak;
}

// ------------------------------------------------------------- check 9

bool check_round_trips(std::string& detail) {
  // byte-level decode(encode(s)) identity on fuzzed binary strings
  auto tok = bpe::BpeModel::train(
      "the pool was great, das Frühstück war köstlich; ставка 5/5 ☺", 300);
  num::Rng rng(91);
  for (int trial = 0; trial < 10000; ++trial) {
    std::string s;
    const std::size_t len = rng.next_u64() % 65;
    s.reserve(len);
    for (std::size_t k = 0; k < len; ++k)
      s.push_back(static_cast<char>(rng.next_u64() & 0xff));
    if (tok.decode(tok.encode(s)) != s) {
      detail = "bpe round-trip failed at fuzz trial " + std::to_string(trial);
      return false;
    }
  }

  // checkpoint save/load bitwise across all parameter-set shapes
  lm::TransformerConfig tc;
  tc.layers = 1;
  tc.heads = 2;
  tc.dim = 16;
  tc.ffn_dim = 32;
  tc.max_seq = 12;
  tc.vocab = 300;
  num::Rng lw(92), pw(93), mw(94);
  model::ModelState<double> state;
  state.lm = lm::TransformerParams<double>::init(tc, lw);

  const auto dir = std::filesystem::temp_directory_path() / "pepler_accept";
  std::filesystem::create_directories(dir);
  auto roundtrip = [&](const model::ModelState<double>& st,
                       const std::string& name) {
    CheckpointMeta meta;
    meta.config = {{"model.layers", "1"}, {"model.dim", "16"}};
    meta.seed = 77;
    meta.epoch = 3;
    meta.valid_loss = 1.25;
    if (st.prompt) {
      meta.users = st.prompt->users.ids();
      meta.items = st.prompt->items.ids();
    }
    const std::string path = (dir / (name + ".ckpt")).string();
    auto tensors = snapshot_tensors<double>(st);
    save_checkpoint(path, tensors, meta);
    auto back = load_checkpoint(path);
    if (back.meta.seed != meta.seed || back.meta.epoch != meta.epoch ||
        back.meta.valid_loss != meta.valid_loss ||
        back.meta.config != meta.config || back.meta.users != meta.users ||
        back.meta.items != meta.items)
      return false;
    if (back.tensors.size() != tensors.size()) return false;
    for (const auto& [tname, t] : tensors) {
      auto it = back.tensors.find(tname);
      if (it == back.tensors.end() || it->second.shape() != t.shape())
        return false;
      for (std::size_t i = 0; i < t.size(); ++i)
        if (std::bit_cast<std::uint32_t>(it->second[i]) !=
            std::bit_cast<std::uint32_t>(t[i]))
          return false;
    }
    return true;
  };

  if (!roundtrip(state, "backbone")) {
    detail = "backbone checkpoint round-trip lost data";
    return false;
  }
  model::IdIndex users(std::vector<std::string>{"u0", "u1", "u2"});
  model::IdIndex items(std::vector<std::string>{"i0", "i1"});
  state.prompt = model::PromptParams<double>::init(users, items, tc.dim, pw);
  if (!roundtrip(state, "prompt")) {
    detail = "prompt checkpoint round-trip lost data";
    return false;
  }
  state.mlp = model::RecMlpParams<double>::init(2, 8, tc.dim, mw);
  if (!roundtrip(state, "mlp")) {
    detail = "mlp checkpoint round-trip lost data";
    return false;
  }

  // split partition and coverage across seeds
  auto corpus = item_keyed_corpus();
  corpus.records.resize(30);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto split = corpus::make_split(corpus.records, seed);
    std::vector<int> hits(corpus.records.size(), 0);
    for (const auto* part : {&split.train, &split.valid, &split.test})
      for (std::size_t idx : *part) ++hits[idx];
    for (int h : hits)
      if (h != 1) {
        detail = "split is not a partition at seed " + std::to_string(seed);
        return false;
      }
    std::set<std::string> train_users, train_items;
    for (std::size_t idx : split.train) {
      train_users.insert(corpus.records[idx].user);
      train_items.insert(corpus.records[idx].item);
    }
    for (const auto& r : corpus.records)
      if (!train_users.count(r.user) || !train_items.count(r.item)) {
        detail = "coverage repair missed an id at seed " +
                 std::to_string(seed);
        return false;
      }
  }

  // attention rows are distributions; the causal mask zeroes the future
  num::Rng aw(95);
  auto params = lm::TransformerParams<double>::init(tc, aw);
  const std::size_t len = 12;
  num::Tensor<double> reps({len, static_cast<std::size_t>(tc.dim)});
  for (std::size_t i = 0; i < reps.size(); ++i) reps[i] = aw.normal(0.0, 1.0);
  num::Graph<double> g;
  auto fw = lm::forward_graph<double>(g, params, nullptr, g.constant(reps),
                                      lm::causal_mask<double>(len));
  for (const auto& layer : fw.attention)
    for (auto head : layer) {
      const auto& a = g.value(head);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          sum += a.at(r, c);
          if (c > r && a.at(r, c) != 0.0) {
            detail = "masked attention cell is nonzero";
            return false;
          }
        }
        if (std::fabs(sum - 1.0) > 1e-12) {
          detail = "attention row does not sum to 1";
          return false;
        }
      }
    }

  detail = "bpe fuzz 10^4, checkpoint bitwise, split coverage, attention";
  return true;
}

}  // namespace

int main() {
  struct Check {
    const char* name;
    bool (*fn)(std::string&);
  };
  const Check checks[] = {
      {"gradients vs finite differences", check_gradients},
      {"causal masking", check_causality},
      {"memorization via sequential tuning", check_memorization},
      {"discrete prompt worked example", check_discrete_prompt},
      {"training strategy contracts", check_strategy_contracts},
      {"metric oracles", check_metric_oracles},
      {"held-out personalization", check_personalization},
      {"rating regularization direction", check_regularization_direction},
      {"infrastructure round-trips", check_round_trips},
  };

  int failures = 0;
  int index = 0;
  for (const auto& check : checks) {
    ++index;
    std::string detail;
    const auto start = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = check.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    std::printf("[%d/9] %-36s %s (%s; %.1fs)\n", index, check.name,
                ok ? "PASS" : "FAIL", detail.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures) std::printf("%d of 9 checks failed\n", failures);
  return failures == 0 ? 0 : 1;
}
