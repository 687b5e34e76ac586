// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end and LoRA training loops.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kasr/augment.hpp"
#include "kasr/dataset.hpp"
#include "kasr/lora.hpp"
#include "kasr/metrics.hpp"
#include "kasr/model.hpp"

namespace kasr {

enum class TrainMode { kE2E, kLora };

struct TrainConfig {
    TrainMode mode = TrainMode::kE2E;
    LoraConfig lora;
    int steps = 1000;
    int batch_size = 8;
    int grad_accum = 1;
    double lr_peak = 1e-3;
    double warmup_frac = 0.1;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    int eval_every = 100;  // 0: evaluate only after the last step
    SpecAugmentConfig spec_augment;
    WaveAugmentConfig wave_augment;
    bool checkpoint_activations = false;
    int early_stop_patience = 0;  // eval rounds; 0 disables
    double dropout = 0.0;
    int max_decode_len = 64;
    std::string segmenter = "script";
    bool log_wall_time = true;  // false writes 0 so logs are byte-comparable

    void validate() const;
};

// Linear warmup from 0 to lr_peak over warmup_frac * steps, then linear decay
// to 0 at `steps`.
double lr_at(int step, const TrainConfig& cfg);

struct LogRow {
    int step = 0;
    std::string split;  // "train" or "eval"
    double loss = 0.0;
    std::optional<double> wer;
    std::optional<double> cer;
    double lr = 0.0;
    double wall_time_s = 0.0;
};

struct TrainLog {
    std::vector<LogRow> rows;

    std::string to_csv() const;
    void save(const std::filesystem::path& path) const;
};

// A named trainable tensor together with whether weight decay applies to it.
struct TrainableParam {
    std::string name;
    ad::Tensor<float>* tensor = nullptr;
    bool decay = false;
};

// Only 2-D matrices outside the embeddings are decayed.
bool decays(const std::string& name, const ad::Shape& shape);
// Tensors with requires_grad from the base, then adapter A/B pairs.
std::vector<TrainableParam> trainable_params(Model& model, AdapterSet* adapters);

// Teacher-forced cross entropy of a batch (mean over sequences of the
// per-sequence mean over target positions).
ad::Var<float> batch_loss(ad::Graph<float>& g, const Model& model, const Batch& batch, const ForwardOptions& opts = {});

struct Gradients {
    double loss = 0.0;                     // mean over micro-batches
    std::vector<std::vector<float>> grad;  // aligned with the params passed in
};

// Averages gradients over micro-batches; parameters that receive no gradient
// get zeros.
Gradients accumulate_gradients(const Model& model, std::span<const Batch> micro_batches,
                               std::span<const TrainableParam> params, const ForwardOptions& opts = {});

class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

    // Decoupled weight decay: w -= lr * wd * w for params with decay set.
    void step(std::span<const TrainableParam> params, const std::vector<std::vector<float>>& grads, double lr,
              double weight_decay);
    int steps_taken() const { return t_; }

private:
    double b1_, b2_, eps_;
    int t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

struct TrainData {
    std::vector<Example> train;
    std::vector<Example> val;
    Vocabulary vocab;
};

struct TrainResult {
    TrainLog log;
    double best_eval_cer = 0.0;
    int best_step = 0;
    int steps_run = 0;
    bool early_stopped = false;
};

using ProgressFn = std::function<void(const LogRow&)>;

// E2E: updates `model` and leaves it at the best-eval-CER snapshot.
TrainResult train(Model& model, const TrainData& data, const TrainConfig& cfg, const ProgressFn& progress = {});
// LoRA: base stays untouched; adapters end at the best-eval-CER snapshot.
TrainResult train(AdaptedModel& adapted, const TrainData& data, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

// Greedy transcription of every example scored with corpus_score.
CorpusScore evaluate(const Model& model, std::span<const Example> examples, const Vocabulary& vocab,
                     const Segmenter& seg, int max_len, const DeltaMap* deltas = nullptr);

struct RankRun {
    int rank = 0;
    std::size_t trainable = 0;
    double best_eval_cer = 0.0;
    TrainResult result;
};

// One LoRA run per rank from the same base, seed and data order; sorted by rank.
std::vector<RankRun> sweep_ranks(const Model& base, const TrainData& data, std::vector<int> ranks,
                                 const TrainConfig& cfg, const ProgressFn& progress = {});
// rank,trainable_params,best_eval_cer
std::string sweep_summary_csv(std::span<const RankRun> runs);

}  // namespace kasr
