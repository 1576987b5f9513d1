#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "pepler/bpe.hpp"
#include "pepler/corpus.hpp"
#include "pepler/model.hpp"

using namespace pepler;

namespace {

lm::TransformerConfig model_config() {
  lm::TransformerConfig c;
  c.layers = 1;
  c.heads = 2;
  c.dim = 16;
  c.ffn_dim = 32;
  c.max_seq = 16;
  c.vocab = 259;  // byte alphabet plus <bos>, <eos>, <pad>
  return c;
}

constexpr int kBos = 256;
constexpr int kEos = 257;

lm::TransformerParams<double> model_lm(std::uint64_t seed = 3) {
  num::Rng rng(seed);
  return lm::TransformerParams<double>::init(model_config(), rng);
}

model::PromptParams<double> two_by_two_prompt(std::uint64_t seed = 4) {
  num::Rng rng(seed);
  return model::PromptParams<double>::init(
      model::IdIndex(std::vector<std::string>{"u0", "u1"}),
      model::IdIndex(std::vector<std::string>{"i0", "i1"}), 16, rng);
}

template <typename T>
bool bitwise_equal(const num::Tensor<T>& a, const num::Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("mode and strategy names parse; unknown names are rejected") {
  CHECK(model::parse_mode("continuous") == model::PromptMode::kContinuous);
  CHECK(model::parse_mode("discrete") == model::PromptMode::kDiscrete);
  CHECK_THROWS_AS(model::parse_mode("hybrid"), ValidationError);

  CHECK(model::parse_strategy("fixed-lm-prompt-tuning") ==
        model::Strategy::kFixedLmPromptTuning);
  CHECK(model::parse_strategy("prompt+lm-fine-tuning") ==
        model::Strategy::kPromptLmFineTuning);
  CHECK(model::parse_strategy("sequential") == model::Strategy::kSequential);
  CHECK(model::parse_strategy("rec-regularized-mf") ==
        model::Strategy::kRecRegularizedMf);
  CHECK(model::parse_strategy("rec-regularized-mlp") ==
        model::Strategy::kRecRegularizedMlp);
  CHECK_THROWS_AS(model::parse_strategy("adam"), ValidationError);

  CHECK(model::uses_rating_head(model::Strategy::kRecRegularizedMf));
  CHECK(model::uses_rating_head(model::Strategy::kRecRegularizedMlp));
  CHECK_FALSE(model::uses_rating_head(model::Strategy::kSequential));
}

TEST_CASE("id index maps sorted ids to rows and rejects strangers") {
  model::IdIndex idx(std::set<std::string>{"zeta", "alpha", "mid"});
  CHECK(idx.size() == 3);
  CHECK(idx.ids() == std::vector<std::string>{"alpha", "mid", "zeta"});
  CHECK(idx.row("alpha") == 0);
  CHECK(idx.row("zeta") == 2);
  CHECK(idx.has("mid"));
  CHECK_FALSE(idx.has("omega"));
  CHECK_THROWS_AS(idx.row("omega"), LookupError);

  std::vector<corpus::Record> recs = {
      {"u9", "i1", 5, "t", "f"},
      {"u1", "i2", 4, "t", "f"},
      {"u9", "i2", 3, "t", "f"},
  };
  std::vector<std::size_t> all = {0, 1, 2};
  auto users = model::index_users(recs, all);
  auto items = model::index_items(recs, all);
  CHECK(users.ids() == std::vector<std::string>{"u1", "u9"});
  CHECK(items.ids() == std::vector<std::string>{"i1", "i2"});
}

TEST_CASE("prompt parameters carry one row per known user and item") {
  auto prompt = two_by_two_prompt();
  CHECK(prompt.user_table.shape() == std::vector<std::size_t>{2, 16});
  CHECK(prompt.item_table.shape() == std::vector<std::size_t>{2, 16});
  std::vector<std::string> names;
  prompt.visit([&](const std::string& n, num::Tensor<double>&) {
    names.push_back(n);
  });
  CHECK(names == std::vector<std::string>{"prompt.user", "prompt.item"});
}

TEST_CASE("MLP head shapes follow the hidden layer count and width") {
  num::Rng rng(5);
  auto mlp = model::RecMlpParams<double>::init(2, 8, 16, rng);
  REQUIRE(mlp.ws.size() == 3);  // input projection plus two hidden layers
  CHECK(mlp.ws[0].shape() == std::vector<std::size_t>{8, 32});
  CHECK(mlp.ws[1].shape() == std::vector<std::size_t>{8, 8});
  CHECK(mlp.ws[2].shape() == std::vector<std::size_t>{8, 8});
  CHECK(mlp.w.shape() == std::vector<std::size_t>{8});
  CHECK(mlp.b.size() == 1);
  std::vector<std::string> names;
  mlp.visit([&](const std::string& n, num::Tensor<double>&) {
    names.push_back(n);
  });
  CHECK(names == std::vector<std::string>{"rec.mlp.0.w", "rec.mlp.0.b",
                                          "rec.mlp.1.w", "rec.mlp.1.b",
                                          "rec.mlp.2.w", "rec.mlp.2.b",
                                          "rec.mlp.out.w", "rec.mlp.out.b"});
  CHECK_THROWS_AS(model::RecMlpParams<double>::init(0, 8, 16, rng),
                  ValidationError);
}

TEST_CASE("make_examples tokenizes, truncates, and resolves rows") {
  auto tok = bpe::BpeModel::train("the gym was great and clean", 259);
  std::vector<corpus::Record> recs = {
      {"u0", "i1", 5, "great gym", "gym"},
      {"u1", "i0", 2, "the room was fine", "room"},
  };
  std::vector<std::size_t> all = {0, 1};
  auto users = model::index_users(recs, all);
  auto items = model::index_items(recs, all);

  auto examples = model::make_examples(recs, all, model::PromptMode::kContinuous,
                                       tok, 6, &users, &items, nullptr, 0);
  REQUIRE(examples.size() == 2);
  CHECK(examples[0].user_row == 0);
  CHECK(examples[0].item_row == 1);
  CHECK(examples[0].rating == 5.0);
  CHECK(examples[0].expl_ids.size() == 6);  // "great gym" is 9 bytes, cut to 6
  CHECK(examples[1].user_row == 1);
  CHECK(examples[1].item_row == 0);
  CHECK(examples[0].prompt_ids.empty());

  CHECK_THROWS_AS(model::make_examples(recs, all,
                                       model::PromptMode::kContinuous, tok, 6,
                                       nullptr, nullptr, nullptr, 0),
                  ValidationError);
  CHECK_THROWS_AS(model::make_examples(recs, all, model::PromptMode::kDiscrete,
                                       tok, 6, nullptr, nullptr, nullptr, 8),
                  ValidationError);

  auto profiles = corpus::FeatureProfiles::build(recs);
  auto discrete = model::make_examples(recs, all, model::PromptMode::kDiscrete,
                                       tok, 6, nullptr, nullptr, &profiles, 8);
  REQUIRE(discrete.size() == 2);
  CHECK_FALSE(discrete[0].prompt_ids.empty());
  CHECK(discrete[0].user_row == -1);
}

TEST_CASE("continuous assembly: 5-token explanation gives length 9, offset 3") {
  auto params = model_lm();
  auto prompt = two_by_two_prompt();
  model::TrainExample ex;
  ex.user_row = 0;
  ex.item_row = 1;
  ex.expl_ids = {65, 66, 67, 68, 69};

  num::Graph<double> g;
  auto a = model::assemble_input<double>(g, params, &prompt, nullptr,
                                         model::PromptMode::kContinuous, ex,
                                         kBos, kEos);
  CHECK(a.len == 9);
  CHECK(a.offset == 3);
  CHECK(g.value(a.s0).rows() == 9);
  CHECK(g.value(a.s0).cols() == 16);
  REQUIRE(a.targets.size() == 9);
  CHECK(a.targets[0] == -1);
  CHECK(a.targets[1] == -1);
  for (int j = 0; j < 5; ++j) CHECK(a.targets[2 + j] == 65 + j);
  CHECK(a.targets[7] == kEos);
  CHECK(a.targets[8] == -1);
}

TEST_CASE("discrete assembly: 4 prompt tokens and 5 explanation tokens give 11/5") {
  auto params = model_lm();
  model::TrainExample ex;
  ex.prompt_ids = {40, 41, 42, 43};
  ex.expl_ids = {65, 66, 67, 68, 69};

  num::Graph<double> g;
  auto a = model::assemble_input<double>(g, params, nullptr, nullptr,
                                         model::PromptMode::kDiscrete, ex,
                                         kBos, kEos);
  CHECK(a.len == 11);
  CHECK(a.offset == 5);
  CHECK(a.targets[3] == -1);
  CHECK(a.targets[4] == 65);
  CHECK(a.targets[9] == kEos);
  CHECK(a.targets[10] == -1);

  // The prompt rows are the word embeddings of the feature tokens.
  const auto& s0 = g.value(a.s0);
  for (std::size_t c = 0; c < 16; ++c)
    CHECK(s0.at(0, c) == params.wte.at(40, c) + params.wpe.at(0, c));
}

TEST_CASE("assembly row contents with and without prompt positions") {
  auto params = model_lm();
  auto prompt = two_by_two_prompt();
  model::TrainExample ex;
  ex.user_row = 1;
  ex.item_row = 0;
  ex.expl_ids = {70};

  num::Graph<double> g;
  auto with_pos = model::assemble_input<double>(
      g, params, &prompt, nullptr, model::PromptMode::kContinuous, ex, kBos,
      kEos, /*pos_on_prompt=*/true);
  const auto& sw = g.value(with_pos.s0);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(sw.at(0, c) == prompt.user_table.at(1, c) + params.wpe.at(0, c));
    CHECK(sw.at(1, c) == prompt.item_table.at(0, c) + params.wpe.at(1, c));
    CHECK(sw.at(2, c) == params.wte.at(kBos, c) + params.wpe.at(2, c));
  }

  num::Graph<double> g2;
  auto no_pos = model::assemble_input<double>(
      g2, params, &prompt, nullptr, model::PromptMode::kContinuous, ex, kBos,
      kEos, /*pos_on_prompt=*/false);
  const auto& sn = g2.value(no_pos.s0);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(sn.at(0, c) == prompt.user_table.at(1, c));
    CHECK(sn.at(1, c) == prompt.item_table.at(0, c));
    // absolute positions resume after the prompt slots
    CHECK(sn.at(2, c) == params.wte.at(kBos, c) + params.wpe.at(2, c));
  }
}

TEST_CASE("explanation loss: uniform rows give ln|V|; fixture matches hand math") {
  const std::size_t v = 64;
  num::Tensor<double> c({6, v});
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 1.0 / double(v);
  std::vector<int> expl = {10, 20, 30};
  CHECK(model::explanation_loss(c, expl, 5, 3) ==
        doctest::Approx(std::log(64.0)).epsilon(1e-12));

  // One explanation token plus <eos>: mean of the two negative logs.
  num::Tensor<double> h({4, v});
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = 1e-9;
  h.at(2, 7) = 0.2;   // offset 3 -> row 2 predicts e_1 = 7
  h.at(3, 12) = 0.5;  // row 3 predicts <eos> = 12
  double expected = -(std::log(0.2) + std::log(0.5)) / 2.0;
  CHECK(model::explanation_loss(h, {7}, 12, 3) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss ignores probability rows before the offset window") {
  const std::size_t v = 32;
  num::Rng rng(8);
  num::Tensor<double> c({7, v});
  for (std::size_t r = 0; r < 7; ++r) {
    double sum = 0;
    for (std::size_t j = 0; j < v; ++j) {
      c.at(r, j) = rng.uniform() + 0.01;
      sum += c.at(r, j);
    }
    for (std::size_t j = 0; j < v; ++j) c.at(r, j) /= sum;
  }
  std::vector<int> expl = {4, 9};
  const std::size_t offset = 3;
  double before = model::explanation_loss(c, expl, 11, offset);
  for (std::size_t r = 0; r + 1 < offset; ++r)
    for (std::size_t j = 0; j < v; ++j) c.at(r, j) = rng.uniform();
  CHECK(model::explanation_loss(c, expl, 11, offset) == before);
  CHECK_THROWS_AS(model::explanation_loss(c, expl, 11, 0), ValidationError);
  CHECK_THROWS_AS(model::explanation_loss(c, {1, 2, 3, 4, 5, 6}, 11, 3),
                  ShapeError);
}

TEST_CASE("probability-space loss agrees with the fused training loss") {
  auto params = model_lm();
  auto prompt = two_by_two_prompt();
  model::TrainExample ex;
  ex.user_row = 0;
  ex.item_row = 0;
  ex.expl_ids = {80, 90, 100};

  num::Graph<double> g;
  auto a = model::assemble_input<double>(g, params, &prompt, nullptr,
                                         model::PromptMode::kContinuous, ex,
                                         kBos, kEos);
  auto fw = lm::forward_graph<double>(g, params, nullptr, a.s0,
                                      lm::causal_mask<double>(a.len));
  auto probs = lm::lm_probs<double>(g, params, nullptr, fw.final_reps);
  auto nll = g.masked_nll(lm::lm_logits<double>(g, params, nullptr,
                                                fw.final_reps),
                          a.targets);
  double from_probs =
      model::explanation_loss(g.value(probs), ex.expl_ids, kEos, a.offset);
  CHECK(from_probs == doctest::Approx(g.value(nll)[0]).epsilon(1e-12));
}

TEST_CASE("MF rating is the dot product; zeroed MLP head scores zero") {
  model::PromptParams<double> prompt;
  prompt.users = model::IdIndex(std::vector<std::string>{"u"});
  prompt.items = model::IdIndex(std::vector<std::string>{"i", "j"});
  num::Tensor<double> u({1, 4});
  u.at(0, 0) = 1.0;
  num::Tensor<double> items({2, 4});
  items.at(0, 0) = 1.0;  // same unit vector
  items.at(1, 1) = 1.0;  // orthogonal
  prompt.user_table = u;
  prompt.item_table = items;

  CHECK(model::predict_rating<double>(prompt, nullptr, "u", "i") == 1.0);
  CHECK(model::predict_rating<double>(prompt, nullptr, "u", "j") == 0.0);
  CHECK_THROWS_AS(model::predict_rating<double>(prompt, nullptr, "nope", "i"),
                  LookupError);

  num::Rng rng(6);
  auto mlp = model::RecMlpParams<double>::init(2, 8, 4, rng);
  for (auto& w : mlp.ws)
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
  for (std::size_t i = 0; i < mlp.w.size(); ++i) mlp.w[i] = 0.0;
  CHECK(model::predict_rating<double>(prompt, &mlp, "u", "j") == 0.0);
  CHECK(model::predict_rating<double>(prompt, &mlp, "u", "i") == 0.0);
}

TEST_CASE("rating loss is plain MSE with strict input checks") {
  std::vector<double> perfect = {5, 3, 1};
  CHECK(model::rating_loss(perfect, perfect) == 0.0);
  std::vector<double> p1 = {3.0}, t1 = {5.0};
  CHECK(model::rating_loss(p1, t1) == 4.0);
  std::vector<double> p2 = {4.0, 2.0}, t2 = {5.0, 1.0};
  CHECK(model::rating_loss(p2, t2) == 1.0);
  std::vector<double> shorter = {1.0};
  CHECK_THROWS_AS(model::rating_loss(shorter, t2), ValidationError);
  std::vector<double> none;
  CHECK_THROWS_AS(model::rating_loss(none, none), ValidationError);
}

TEST_CASE("generation prefix is prompt plus <bos> only") {
  auto params = model_lm();
  auto prompt = two_by_two_prompt();
  auto prefix = model::assemble_prefix<double>(params, &prompt,
                                               model::PromptMode::kContinuous,
                                               0, 1, {}, kBos);
  REQUIRE(prefix.rows() == 3);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(prefix.at(0, c) == prompt.user_table.at(0, c) + params.wpe.at(0, c));
    CHECK(prefix.at(1, c) == prompt.item_table.at(1, c) + params.wpe.at(1, c));
    CHECK(prefix.at(2, c) == params.wte.at(kBos, c) + params.wpe.at(2, c));
  }

  auto bare = model::assemble_prefix<double>(params, &prompt,
                                             model::PromptMode::kContinuous, 0,
                                             1, {}, kBos,
                                             /*pos_on_prompt=*/false);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(bare.at(0, c) == prompt.user_table.at(0, c));
    CHECK(bare.at(1, c) == prompt.item_table.at(1, c));
    CHECK(bare.at(2, c) == params.wte.at(kBos, c) + params.wpe.at(2, c));
  }

  auto discrete = model::assemble_prefix<double>(
      params, nullptr, model::PromptMode::kDiscrete, -1, -1, {50, 51}, kBos);
  REQUIRE(discrete.rows() == 3);
  for (std::size_t c = 0; c < 16; ++c)
    CHECK(discrete.at(0, c) == params.wte.at(50, c) + params.wpe.at(0, c));

  std::vector<int> too_many(17, 60);
  CHECK_THROWS_AS(
      model::assemble_prefix<double>(params, nullptr,
                                     model::PromptMode::kDiscrete, -1, -1,
                                     too_many, kBos),
      ValidationError);
}

TEST_CASE("generate is deterministic, bounded, and free of special markers") {
  auto tok = bpe::BpeModel::train("clean quiet room near the gym", 259);
  auto params = model_lm(21);
  auto prompt = two_by_two_prompt(22);

  auto a = model::generate<double>(model::PromptMode::kContinuous, "u0", "i1",
                                   params, &prompt, nullptr, tok, 0, 10);
  auto b = model::generate<double>(model::PromptMode::kContinuous, "u0", "i1",
                                   params, &prompt, nullptr, tok, 0, 10);
  CHECK(a == b);
  CHECK(a.size() <= 10);  // byte tokens decode to at most one byte each
  CHECK(a.find("<bos>") == std::string::npos);
  CHECK(a.find("<eos>") == std::string::npos);

  CHECK_THROWS_AS(model::generate<double>(model::PromptMode::kContinuous,
                                          "ghost", "i1", params, &prompt,
                                          nullptr, tok, 0, 10),
                  LookupError);
  CHECK_THROWS_AS(model::generate<double>(model::PromptMode::kDiscrete, "u0",
                                          "i1", params, nullptr, nullptr, tok,
                                          8, 10),
                  ValidationError);

  // An eos-dominant head ends generation immediately.
  auto quiet = params;
  for (std::size_t i = 0; i < quiet.head_w.size(); ++i) quiet.head_w[i] = 0;
  for (std::size_t i = 0; i < quiet.head_b.size(); ++i) quiet.head_b[i] = 0;
  quiet.head_b[tok.eos_id()] = 50.0;
  CHECK(model::generate<double>(model::PromptMode::kContinuous, "u0", "i1",
                                quiet, &prompt, nullptr, tok, 0, 10) == "");
}
