// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Manifests, filtering, splits, batching and the synthetic tone corpus.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kasr/audio.hpp"
#include "kasr/vocab.hpp"

namespace kasr {

struct ManifestEntry {
    std::string id;
    std::filesystem::path audio;  // absolute after load_manifest
    std::string text;
    std::optional<double> duration_s;
    std::string source;

    bool operator==(const ManifestEntry&) const = default;
};

// JSONL with keys id, audio, text and optional source, duration_s. Relative
// audio paths resolve against the manifest's directory. Throws kMalformed or
// kDuplicateId with the 1-based line number in the message.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
// Audio paths are written relative to the manifest's directory.
void save_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

enum class RejectReason { kUnreadableAudio, kTooShort, kTooLong, kEmptyAfterNormalization, kNoLetters };
std::string_view to_string(RejectReason reason);

struct FilterChecks {
    double min_duration_s = 0.3;
    double max_duration_s = 30.0;
    bool read_audio = true;  // otherwise trust duration_s when present
};

struct FilterResult {
    std::vector<ManifestEntry> kept;
    std::vector<std::pair<ManifestEntry, RejectReason>> rejected;

    std::map<std::string, int> histogram() const;
};

FilterResult filter_invalid(std::span<const ManifestEntry> entries, const FilterChecks& checks = {});

struct Splits {
    std::vector<ManifestEntry> train, val, test;
};

// Seeded shuffle, then train | val | test slices. val and test take
// floor(n * ratio) entries, train the remainder.
Splits split(std::span<const ManifestEntry> entries, std::array<double, 3> ratios = {0.8, 0.1, 0.1},
             std::uint64_t seed = 0);

// Code points of the normalized transcripts.
Vocabulary build_vocab(std::span<const ManifestEntry> train);
void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::filesystem::path& path);

// Normalizes first, like build_vocab.
std::vector<int> encode_text(const Vocabulary& vocab, std::string_view text);
std::string decode_tokens(const Vocabulary& vocab, std::span<const int> ids);

// --- synthetic corpus ----------------------------------------------------------

inline constexpr int kSynthSampleRate = 16000;
inline constexpr int kSynthToneSamples = kSynthSampleRate / 4;
inline constexpr std::array<char32_t, 16> kSynthSyllabary{U'あ', U'い', U'う', U'え', U'お', U'か', U'き', U'く',
                                                           U'け', U'こ', U'さ', U'し', U'す', U'せ', U'そ', U'た'};
double synth_tone_hz(int k);

struct SynthOptions {
    int min_len = 2;
    int max_len = 6;
    double amplitude = 0.5;
};

// Writes synth_XXXX.wav files and manifest.jsonl into out_dir; each clip is
// 2..6 tones of 0.25 s, one per character of its transcript.
std::vector<ManifestEntry> synth_corpus(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                        const SynthOptions& opts = {});
AudioClip synth_clip(std::span<const int> tone_ids, double amplitude = 0.5);

// --- examples and batches -------------------------------------------------------

struct Example {
    std::string id;
    std::string text;         // normalized
    std::vector<int> tokens;  // without sot/eot
    AudioClip audio;          // resampled and padded/trimmed
    LogMelSpectrogram features;
};

// Loads, resamples and pads every entry to n_frames * hop samples, then
// extracts features. Worker count only affects speed.
std::vector<Example> load_examples(std::span<const ManifestEntry> entries, const Vocabulary& vocab,
                                   const MelParams& mel, int n_frames, int threads = 1);

struct Batch {
    std::size_t size = 0;
    std::size_t n_mels = 0;
    std::size_t frames = 0;
    std::size_t len = 0;          // T
    std::vector<float> features;  // [B, n_mels, frames]
    std::vector<int> inputs;      // [B, T]: sot, tokens, pad...
    std::vector<int> targets;     // [B, T]: tokens, eot, pad...
    std::vector<std::uint8_t> mask;  // 1 where targets are real

    static constexpr int kIgnore = Vocabulary::kPad;
};

// Features may be overridden per example (augmented views); pass empty to use
// each example's own.
Batch make_batch(std::span<const Example* const> examples, std::span<const LogMelSpectrogram* const> features = {});

}  // namespace kasr
