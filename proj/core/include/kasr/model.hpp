// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Whisper-style encoder-decoder built from kasr::ad ops.
//
// Encoder: conv(k3, s1) + GELU, conv(k3, s2) + GELU, sinusoidal positions,
// pre-LN transformer blocks, final LN. Decoder: token embedding + learned
// positions, pre-LN blocks with causal self-attention and cross-attention,
// final LN, output projection tied to the token embedding.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kasr/audio.hpp"
#include "kasr/autodiff.hpp"
#include "kasr/rng.hpp"
#include "kasr/vocab.hpp"

namespace kasr {

struct ModelConfig {
    int n_mels = 80;
    int d_model = 384;
    int n_heads = 6;
    int enc_layers = 4;
    int dec_layers = 4;
    int d_ff = 1536;
    int vocab_size = 51865;
    int max_target_len = 448;
    int max_source_frames = 3000;

    // "tiny", "base", "small"; throws kConfig otherwise.
    static ModelConfig preset(std::string_view name);

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    int n_out_frames() const { return max_source_frames / 2; }

    std::string to_json() const;
    static ModelConfig from_json(std::string_view json);
    // CRC32 of to_json(); identifies the base an adapter set was trained on.
    std::uint32_t hash() const;

    bool operator==(const ModelConfig&) const = default;
};

using ParamMap = std::map<std::string, ad::Tensor<float>>;

struct Model {
    ModelConfig config;
    ParamMap params;

    const ad::Tensor<float>& at(const std::string& name) const;
    ad::Tensor<float>& at(const std::string& name);
};

// Every parameter name with its shape, in map order.
std::vector<std::pair<std::string, ad::Shape>> parameter_shapes(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);
std::size_t parameter_count(const ParamMap& params);

// N(0, 0.02) weights, zero biases, unit LN gains; all tensors trainable.
Model build(const ModelConfig& config, Rng& rng);

// Names of the attention blocks in forward order, e.g. "enc.0.attn",
// "dec.1.self_attn", "dec.1.cross_attn".
std::vector<std::string> attention_blocks(const ModelConfig& config);

// Low-rank update applied on top of a base linear layer: y += scale * (x A^T) B^T.
struct LowRankDelta {
    const ad::Tensor<float>* a = nullptr;  // [r, d_in]
    const ad::Tensor<float>* b = nullptr;  // [d_out, r]
    float scale = 1.0f;
    double dropout = 0.0;
};
// Keyed by weight name ("dec.0.self_attn.q.w").
using DeltaMap = std::map<std::string, LowRankDelta>;

struct ForwardOptions {
    const DeltaMap* deltas = nullptr;
    bool checkpoint_activations = false;
    double dropout = 0.0;
    bool training = false;  // dropout (model and adapter) only when set
    Rng* rng = nullptr;     // required for training with dropout
};

// features [B, n_mels, max_source_frames] -> latents [B, n_out_frames, d_model].
ad::Var<float> encode(ad::Graph<float>& g, const Model& model, ad::Var<float> features, const ForwardOptions& opts = {});
// tokens [B, T] row-major -> logits [B, T, vocab_size].
ad::Var<float> decode(ad::Graph<float>& g, const Model& model, std::span<const int> tokens, std::size_t batch,
                      std::size_t len, ad::Var<float> latents, const ForwardOptions& opts = {});

// Single-utterance conveniences; no gradients are kept.
ad::Tensor<float> encode(const Model& model, const LogMelSpectrogram& spec, const DeltaMap* deltas = nullptr);
ad::Tensor<float> decode(const Model& model, std::span<const int> tokens, const ad::Tensor<float>& latents,
                         const DeltaMap* deltas = nullptr);

// Starts from <sot>, appends the argmax over <eot>, <unk> and the vocabulary
// symbols (lowest id on ties) until <eot> or max_len tokens. <pad>, <sot> and
// output rows beyond the vocabulary are never chosen.
std::vector<int> greedy_transcribe(const Model& model, const LogMelSpectrogram& spec, const Vocabulary& vocab,
                                   int max_len, const DeltaMap* deltas = nullptr);

// --- checkpoint container ----------------------------------------------------
//
// "KASR" | version u32 LE | header length u32 LE | JSON header | f32 LE payload
// | CRC32(payload) u32 LE.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Model model;
    Vocabulary vocab;
    MelParams mel;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Vocabulary& vocab,
                     const MelParams& mel);
Checkpoint load_checkpoint(const std::filesystem::path& path);

namespace detail {
struct Container {
    std::string header_json;  // without the tensor directory
    std::vector<std::pair<std::string, ad::Tensor<float>>> tensors;
};
void write_container(const std::filesystem::path& path, const std::string& header_json,
                     const std::vector<std::pair<std::string, const ad::Tensor<float>*>>& tensors);
Container read_container(const std::filesystem::path& path);
}  // namespace detail

}  // namespace kasr
