// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-side reference implementations and fixtures. Nothing here calls into
// the code under test for the quantity it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "kasr/audio.hpp"
#include "kasr/augment.hpp"
#include "kasr/dataset.hpp"
#include "kasr/model.hpp"
#include "kasr/trainer.hpp"

namespace kasr::testing {

// Plain recursion over the three edit moves, no table.
template <class Seq>
int brute_edit_distance(const Seq& a, std::size_t i, const Seq& b, std::size_t j) {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    const int sub = brute_edit_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
    const int del = brute_edit_distance(a, i + 1, b, j) + 1;
    const int ins = brute_edit_distance(a, i, b, j + 1) + 1;
    return std::min({sub, del, ins});
}

template <class Seq>
int brute_edit_distance(const Seq& a, const Seq& b) {
    return brute_edit_distance(a, 0, b, 0);
}

inline double htk_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double htk_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Straightforward log-Mel: numpy-style reflect padding, periodic Hann, complex
// DFT per bin, triangular HTK filters, log10 with a floor.
inline std::vector<std::vector<double>> reference_log_mel(const std::vector<float>& x, const MelParams& p) {
    const int n = static_cast<int>(x.size());
    const int frames = (n + p.hop - 1) / p.hop;
    const int pad = p.n_fft / 2;
    auto at = [&](int idx) {
        while (idx < 0 || idx >= n) {
            if (idx < 0) idx = -idx;
            if (idx >= n) idx = 2 * (n - 1) - idx;
        }
        return static_cast<double>(x[idx]);
    };
    std::vector<double> hann(p.n_fft, 0.0);
    const int off = (p.n_fft - p.win) / 2;
    for (int i = 0; i < p.win; ++i) hann[off + i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / p.win));

    const int bins = p.n_fft / 2 + 1;
    const double m_lo = htk_mel(p.fmin), m_hi = htk_mel(p.fmax);
    std::vector<double> edges(p.n_mels + 2);
    for (int i = 0; i < p.n_mels + 2; ++i) edges[i] = htk_hz(m_lo + (m_hi - m_lo) * i / (p.n_mels + 1));

    std::vector<std::vector<double>> out(p.n_mels, std::vector<double>(frames));
    for (int t = 0; t < frames; ++t) {
        std::vector<double> power(bins);
        for (int k = 0; k < bins; ++k) {
            std::complex<double> acc = 0.0;
            for (int m = 0; m < p.n_fft; ++m) {
                acc += hann[m] * at(t * p.hop - pad + m) * std::polar(1.0, -2.0 * std::numbers::pi * k * m / p.n_fft);
            }
            power[k] = std::norm(acc);
        }
        for (int m = 0; m < p.n_mels; ++m) {
            double e = 0.0;
            for (int k = 0; k < bins; ++k) {
                const double f = static_cast<double>(k) * p.sample_rate / p.n_fft;
                const double w = std::max(0.0, std::min((f - edges[m]) / (edges[m + 1] - edges[m]),
                                                        (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1])));
                e += w * power[k];
            }
            out[m][t] = std::log10(std::max(e, p.log_floor));
        }
    }
    return out;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto base = std::filesystem::temp_directory_path() / ("kasr_test_" + std::to_string(::getpid()));
    const auto dir = base / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// The toy encoder-decoder used by the training fixtures.
inline ModelConfig toy_config(int vocab_size, int frames = 160) {
    ModelConfig c;
    c.n_mels = 80;
    c.d_model = 64;
    c.n_heads = 4;
    c.enc_layers = 2;
    c.dec_layers = 2;
    c.d_ff = 256;
    c.vocab_size = vocab_size;
    c.max_target_len = 16;
    c.max_source_frames = frames;
    return c;
}

// The 8-clip synthetic corpus, seed 7, loaded as examples; val mirrors train.
struct SynthFixture {
    std::vector<ManifestEntry> entries;
    TrainData data;
    MelParams mel;
};

inline SynthFixture synth_fixture(const std::string& name, int n = 8, std::uint64_t seed = 7, int frames = 160) {
    SynthFixture f;
    f.entries = synth_corpus(n, seed, fresh_dir(name));
    f.data.vocab = build_vocab(f.entries);
    f.data.train = load_examples(f.entries, f.data.vocab, f.mel, frames);
    f.data.val = f.data.train;
    return f;
}

inline LogMelSpectrogram random_spec(int n_mels, int n_frames, std::uint32_t seed) {
    LogMelSpectrogram s;
    s.n_mels = n_mels;
    s.n_frames = n_frames;
    s.data.resize(static_cast<std::size_t>(n_mels) * n_frames);
    std::mt19937 gen(seed);
    std::normal_distribution<float> d(-4.0f, 1.0f);
    for (auto& v : s.data) v = d(gen);
    return s;
}

// Mask geometry drawn with an unrelated generator; returns the mean masked area.
inline double simulated_fraction(const SpecAugmentConfig& cfg, int n_mels, int n_frames, int draws) {
    std::mt19937 gen(12345);
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); };
    double total = 0.0;
    for (int d = 0; d < draws; ++d) {
        std::vector<char> rows(n_mels, 0), cols(n_frames, 0);
        for (int m = 0; m < cfg.n_freq_masks; ++m) {
            const int w = uni(0, std::min(cfg.max_freq_width, n_mels));
            const int s = uni(0, n_mels - w);
            for (int r = s; r < s + w; ++r) rows[r] = 1;
        }
        for (int m = 0; m < cfg.n_time_masks; ++m) {
            const int w = uni(0, std::min(cfg.max_time_width, n_frames));
            const int s = uni(0, n_frames - w);
            for (int c = s; c < s + w; ++c) cols[c] = 1;
        }
        double clear_rows = 0, clear_cols = 0;
        for (char r : rows) clear_rows += r ? 0 : 1;
        for (char c : cols) clear_cols += c ? 0 : 1;
        total += 1.0 - (clear_rows / n_mels) * (clear_cols / n_frames);
    }
    return total / draws;
}

inline std::size_t changed_cells(const LogMelSpectrogram& a, const LogMelSpectrogram& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) n += a.data[i] != b.data[i] ? 1 : 0;
    return n;
}

}  // namespace kasr::testing
