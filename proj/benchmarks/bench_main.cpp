// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>
#include <unistd.h>

#include "kasr/audio.hpp"
#include "kasr/augment.hpp"
#include "kasr/dataset.hpp"
#include "kasr/metrics.hpp"
#include "kasr/model.hpp"
#include "kasr/trainer.hpp"

namespace {

using namespace kasr;

AudioClip noise_clip(double seconds) {
    AudioClip c;
    c.samples.resize(static_cast<std::size_t>(seconds * c.sample_rate));
    std::mt19937 gen(1);
    std::normal_distribution<float> nd(0.0f, 0.1f);
    for (auto& v : c.samples) v = nd(gen);
    return c;
}

void BM_LogMel(benchmark::State& state) {
    const auto clip = noise_clip(static_cast<double>(state.range(0)));
    const MelParams p;
    for (auto _ : state) benchmark::DoNotOptimize(log_mel(clip, p));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(clip.samples.size()));
}
BENCHMARK(BM_LogMel)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_SpecAugment(benchmark::State& state) {
    const auto spec = log_mel(noise_clip(10.0), MelParams{});
    const SpecAugmentConfig cfg{2, 27, 2, 100, MaskFill::kMean};
    Rng rng(3);
    for (auto _ : state) benchmark::DoNotOptimize(spec_augment(spec, cfg, rng));
}
BENCHMARK(BM_SpecAugment)->Unit(benchmark::kMicrosecond);

void BM_MatmulForwardBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    ad::Tensor<float> a({n, n}), b({n, n});
    std::mt19937 gen(2);
    std::normal_distribution<float> nd;
    for (auto& v : a.data) v = nd(gen);
    for (auto& v : b.data) v = nd(gen);
    a.requires_grad = b.requires_grad = true;
    for (auto _ : state) {
        ad::Graph<float> g;
        g.backward(ad::sum(ad::matmul(g.param(a), g.param(b))));
        benchmark::DoNotOptimize(g.param_grad(a));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(3 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_CharErrorRate(benchmark::State& state) {
    std::mt19937 gen(4);
    std::uniform_int_distribution<char32_t> kana(U'ぁ', U'ゖ');
    std::u32string r, h;
    for (int i = 0; i < state.range(0); ++i) {
        r.push_back(kana(gen));
        h.push_back(i % 7 == 0 ? kana(gen) : r.back());
    }
    for (auto _ : state) benchmark::DoNotOptimize(edit_counts<char32_t>(std::span<const char32_t>(r), std::span<const char32_t>(h)));
}
BENCHMARK(BM_CharErrorRate)->Arg(64)->Arg(1024)->Unit(benchmark::kMicrosecond);

void BM_ToyTrainStep(benchmark::State& state) {
    const auto dir = std::filesystem::temp_directory_path() / ("kasr_bench_" + std::to_string(::getpid()));
    const auto entries = synth_corpus(8, 7, dir);
    const Vocabulary vocab = build_vocab(entries);
    const auto examples = load_examples(entries, vocab, MelParams{}, 160);
    ModelConfig c;
    c.d_model = 64;
    c.n_heads = 4;
    c.enc_layers = 2;
    c.dec_layers = 2;
    c.d_ff = 256;
    c.vocab_size = vocab.size();
    c.max_target_len = 16;
    c.max_source_frames = 160;
    Rng rng(7);
    Model m = build(c, rng);
    std::vector<const Example*> ptrs;
    for (const auto& e : examples) ptrs.push_back(&e);
    const std::vector<Batch> batches{make_batch(ptrs)};
    const auto params = trainable_params(m, nullptr);
    for (auto _ : state) benchmark::DoNotOptimize(accumulate_gradients(m, batches, params));
    std::filesystem::remove_all(dir);
}
BENCHMARK(BM_ToyTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
