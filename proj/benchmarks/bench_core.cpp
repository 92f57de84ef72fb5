// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "dysi/data.hpp"
#include "dysi/decoding.hpp"
#include "dysi/imitation.hpp"
#include "dysi/metrics.hpp"
#include "dysi/model.hpp"

namespace {

using namespace dysi;

ModelConfig desk_config(int vocab, ModelConfig::Mode mode) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.n_layers = 2;
  cfg.ffn_dim = 128;
  cfg.dropout = 0.1;
  cfg.max_positions = 24;
  cfg.mode = mode;
  return cfg;
}

ParallelBatch cipher_batch(int vocab, int pairs) {
  auto data = gen_cipher_task(pairs, 4, 12, vocab, 3);
  std::vector<const SequencePair*> ptrs;
  for (const auto& p : data) ptrs.push_back(&p);
  return batch_from_pairs(ptrs);
}

void BM_Matmul(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Rng rng(1);
  std::vector<float> av(static_cast<std::size_t>(m) * 64), bv(64 * 64);
  for (auto& v : av) v = rng.uniform_float();
  for (auto& v : bv) v = rng.uniform_float();
  auto a = Tensor::from_values({m, 64}, av);
  auto b = Tensor::from_values({64, 64}, bv);
  for (auto _ : state) {
    auto c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2ll * m * 64 * 64);
}
BENCHMARK(BM_Matmul)->Arg(256)->Arg(1024);

void BM_ForwardTeacherForced(benchmark::State& state) {
  Rng init(1, rng_stream::kInit);
  Transformer model(desk_config(30, ModelConfig::Mode::kEncoderDecoder), init);
  const auto batch = cipher_batch(30, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto dists = model.forward_teacher_forced(batch);
    benchmark::DoNotOptimize(dists.probs.values().data());
  }
}
BENCHMARK(BM_ForwardTeacherForced)->Arg(16)->Arg(64);

void BM_TrainStepMle(benchmark::State& state) {
  Rng init(1, rng_stream::kInit);
  Transformer model(desk_config(30, ModelConfig::Mode::kEncoderDecoder), init);
  OptimizerState optimizer;
  optimizer.init(model.params());
  const auto batch = cipher_batch(30, 64);
  TrainingObjective obj;
  obj.objective = Objective::kMle;
  std::int64_t step = 0;
  for (auto _ : state) {
    auto stats = train_step(model, batch, obj, ++step, optimizer, 1e-4, 7);
    benchmark::DoNotOptimize(stats.loss.total);
  }
}
BENCHMARK(BM_TrainStepMle);

void BM_TrainStepDysi(benchmark::State& state) {
  Rng init(1, rng_stream::kInit);
  Transformer model(desk_config(30, ModelConfig::Mode::kEncoderDecoder), init);
  OptimizerState optimizer;
  optimizer.init(model.params());
  const auto batch = cipher_batch(30, 64);
  TrainingObjective obj;
  obj.objective = Objective::kDysi;
  obj.alpha = 0.5;
  obj.scheduler.beta = 0.5;
  std::int64_t step = 0;
  for (auto _ : state) {
    auto stats = train_step(model, batch, obj, ++step, optimizer, 1e-4, 7);
    benchmark::DoNotOptimize(stats.loss.total);
  }
}
BENCHMARK(BM_TrainStepDysi);

void BM_GreedyDecode(benchmark::State& state) {
  Rng init(1, rng_stream::kInit);
  Transformer model(desk_config(30, ModelConfig::Mode::kEncoderDecoder), init);
  auto pairs = gen_cipher_task(1, 10, 10, 30, 5);
  std::vector<std::int32_t> source = pairs[0].source;
  source.push_back(Vocabulary::kEos);
  for (auto _ : state) {
    TransformerScorer scorer(model, model.encode_single(source));
    auto out = greedy_decode(scorer, 16);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_GreedyDecode);

void BM_BeamDecode(benchmark::State& state) {
  Rng init(1, rng_stream::kInit);
  Transformer model(desk_config(30, ModelConfig::Mode::kEncoderDecoder), init);
  auto pairs = gen_cipher_task(1, 10, 10, 30, 5);
  std::vector<std::int32_t> source = pairs[0].source;
  source.push_back(Vocabulary::kEos);
  for (auto _ : state) {
    TransformerScorer scorer(model, model.encode_single(source));
    auto out = beam_decode(scorer, 5, 0.2, 16);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_BeamDecode);

void BM_CorpusBleu(benchmark::State& state) {
  Rng rng(9);
  std::vector<TokenSeq> hyps, refs_flat;
  for (int i = 0; i < 500; ++i) {
    TokenSeq h, r;
    const int len = 8 + static_cast<int>(rng.uniform_int(20));
    for (int j = 0; j < len; ++j) {
      h.push_back("w" + std::to_string(rng.uniform_int(200)));
      r.push_back("w" + std::to_string(rng.uniform_int(200)));
    }
    hyps.push_back(h);
    refs_flat.push_back(r);
  }
  std::vector<std::vector<TokenSeq>> refs;
  for (auto& r : refs_flat) refs.push_back({r});
  for (auto _ : state) {
    auto report = corpus_bleu(hyps, refs);
    benchmark::DoNotOptimize(report.bleu);
  }
}
BENCHMARK(BM_CorpusBleu);

}  // namespace

BENCHMARK_MAIN();
