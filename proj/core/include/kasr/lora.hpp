// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters on the attention (and optionally MLP) projections of a
// frozen base model.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kasr/model.hpp"
#include "kasr/rng.hpp"

namespace kasr {

struct LoraConfig {
    int rank = 8;
    double alpha = 0.0;  // <= 0 means alpha = rank
    // Any of q, k, v, o (every attention block) and fc1, fc2 (every MLP).
    std::vector<std::string> targets{"q", "v"};
    double dropout_p = 0.0;

    void validate() const;
    double effective_alpha() const { return alpha > 0.0 ? alpha : static_cast<double>(rank); }
    float scale() const { return static_cast<float>(effective_alpha() / rank); }

    bool operator==(const LoraConfig&) const = default;
};

struct LoraPair {
    ad::Tensor<float> a;  // [r, d_in], N(0, 0.02)
    ad::Tensor<float> b;  // [d_out, r], zeros at injection
};

struct AdapterSet {
    LoraConfig config;
    std::map<std::string, LoraPair> pairs;  // keyed by adapted weight name

    std::size_t parameter_count() const;
    // Views for ForwardOptions::deltas; valid while this set is alive and unmodified.
    DeltaMap deltas() const;
};

struct AdaptedModel {
    Model base;  // every tensor frozen
    AdapterSet adapters;
};

// Weight names a config would adapt, in map order. Throws kUnknownTarget.
std::vector<std::string> lora_target_weights(const ModelConfig& model, const LoraConfig& cfg);

// Freezes base and attaches fresh adapters. Throws kUnknownTarget for names
// outside the supported set and kRankNotLow when rank >= min(d_in, d_out).
AdaptedModel inject(Model base, const LoraConfig& cfg, Rng& rng);

// Folds W += (alpha / r) B A into the base and drops the adapters; calling it
// again returns the already-merged weights.
Model merge(AdaptedModel& adapted);

// Adapter parameters per config without materialising anything.
std::size_t lora_parameter_count(const ModelConfig& model, const LoraConfig& cfg);

std::size_t trainable_count(const Model& model);
std::size_t trainable_count(const AdaptedModel& adapted);
// Trainable parameters over base parameter count.
double trainable_fraction(const Model& model);
double trainable_fraction(const AdaptedModel& adapted);

// Adapter-only container with kind "lora" and the base config hash.
void save_adapters(const std::filesystem::path& path, const AdaptedModel& adapted);
AdapterSet load_adapters(const std::filesystem::path& path, const ModelConfig& base);

}  // namespace kasr
