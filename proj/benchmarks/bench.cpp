#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "pepler/bpe.hpp"
#include "pepler/metrics.hpp"
#include "pepler/model.hpp"
#include "pepler/rng.hpp"
#include "pepler/tensor.hpp"
#include "pepler/transformer.hpp"

namespace {

using namespace pepler;

num::Tensor<float> random_matrix(std::size_t r, std::size_t c,
                                 std::uint64_t seed) {
  num::Rng rng(seed);
  num::Tensor<float> t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.normal(0.0, 1.0));
  return t;
}

void bm_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, n, 1);
  auto b = random_matrix(n, n, 2);
  num::Tensor<float> c({n, n});
  for (auto _ : state) {
    num::gemm_nn(a, b, c, /*accumulate=*/false);
    benchmark::DoNotOptimize(c[0]);
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(bm_gemm)->Arg(64)->Arg(128)->Arg(256);

const char* kReview =
    "the breakfast buffet was fresh and the rooftop pool stayed warm even "
    "after sunset while the staff kept every request quick and friendly";

void bm_bpe_encode(benchmark::State& state) {
  std::string corpus;
  for (int i = 0; i < 64; ++i) corpus += std::string(kReview) + "\n";
  auto tok = bpe::BpeModel::train(corpus, 320);
  for (auto _ : state) {
    auto ids = tok.encode(kReview);
    benchmark::DoNotOptimize(ids.data());
  }
  state.SetBytesProcessed(state.iterations() * std::string(kReview).size());
}
BENCHMARK(bm_bpe_encode);

void bm_forward(benchmark::State& state) {
  lm::TransformerConfig tc;
  tc.layers = 2;
  tc.heads = 4;
  tc.dim = 64;
  tc.ffn_dim = 256;
  tc.max_seq = 64;
  tc.vocab = 512;
  num::Rng rng(3);
  auto params = lm::TransformerParams<float>::init(tc, rng);
  std::vector<int> ids(tc.max_seq);
  for (std::size_t i = 0; i < ids.size(); ++i)
    ids[i] = static_cast<int>(i % tc.vocab);
  for (auto _ : state) {
    num::Graph<float> g;
    auto s0 = lm::embed_tokens<float>(g, params, nullptr, ids);
    auto fw = lm::forward_graph<float>(g, params, nullptr, s0,
                                       lm::causal_mask<float>(ids.size()));
    auto logits = lm::lm_logits<float>(g, params, nullptr, fw.final_reps);
    benchmark::DoNotOptimize(g.value(logits)[0]);
  }
  state.SetItemsProcessed(state.iterations() * ids.size());
}
BENCHMARK(bm_forward);

void bm_greedy_decode(benchmark::State& state) {
  lm::TransformerConfig tc;
  tc.layers = 2;
  tc.heads = 4;
  tc.dim = 64;
  tc.ffn_dim = 256;
  tc.max_seq = 32;
  tc.vocab = 512;
  num::Rng rng(4);
  auto params = lm::TransformerParams<float>::init(tc, rng);
  num::Tensor<float> prefix({3, static_cast<std::size_t>(tc.dim)});
  num::Rng pr(5);
  for (std::size_t i = 0; i < prefix.size(); ++i)
    prefix[i] = static_cast<float>(pr.normal(0.0, 0.02));
  for (auto _ : state) {
    auto out = lm::greedy_decode<float>(params, prefix, 20, -1);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(bm_greedy_decode);

void bm_bleu(benchmark::State& state) {
  std::vector<std::string> cands(256, kReview);
  std::vector<std::string> refs(
      256, "the pool was warm and the breakfast stayed fresh");
  for (auto _ : state) {
    double v = metrics::bleu(cands, refs, 4);
    benchmark::DoNotOptimize(v);
  }
  state.SetItemsProcessed(state.iterations() * cands.size());
}
BENCHMARK(bm_bleu);

}  // namespace

BENCHMARK_MAIN();
