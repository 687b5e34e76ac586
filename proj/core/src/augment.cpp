// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "kasr/error.hpp"

namespace kasr {

void SpecAugmentConfig::validate(int n_mels) const {
    if (n_freq_masks < 0 || n_time_masks < 0) throw Error(ErrorKind::kInvalidArgument, "mask counts must be >= 0");
    if (max_freq_width < 0 || max_time_width < 0) throw Error(ErrorKind::kInvalidArgument, "mask widths must be >= 0");
    if (max_freq_width > n_mels) {
        throw Error(ErrorKind::kInvalidArgument,
                    "max_freq_width " + std::to_string(max_freq_width) + " exceeds n_mels " + std::to_string(n_mels));
    }
}

void WaveAugmentConfig::validate() const {
    if (!(stretch_min > 0.0 && stretch_max >= stretch_min)) {
        throw Error(ErrorKind::kInvalidArgument, "stretch ratios must be positive with min <= max");
    }
    if (pitch_semitones_max < pitch_semitones_min || gain_db_max < gain_db_min) {
        throw Error(ErrorKind::kInvalidArgument, "augmentation intervals need min <= max");
    }
    if (!(noise_std >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "noise_std must be >= 0");
}

namespace {

int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform_real(Rng& rng, double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Probability that a single mask with width ~ U{0..max_width} and uniform start
// covers index i of an axis of length n.
std::vector<double> single_mask_coverage(int n, int max_width) {
    std::vector<double> p(n, 0.0);
    const int w_max = std::min(max_width, n);
    for (int w = 1; w <= w_max; ++w) {
        const int n_starts = n - w + 1;
        for (int i = 0; i < n; ++i) {
            const int lo = std::max(0, i - w + 1);
            const int hi = std::min(i, n - w);
            if (hi >= lo) p[i] += static_cast<double>(hi - lo + 1) / n_starts;
        }
    }
    for (auto& v : p) v /= (w_max + 1);
    return p;
}

double mean_uncovered(int n, int max_width, int n_masks) {
    if (n == 0) return 1.0;
    const auto p = single_mask_coverage(n, max_width);
    double acc = 0.0;
    for (double pi : p) acc += std::pow(1.0 - pi, n_masks);
    return acc / n;
}

}  // namespace

LogMelSpectrogram spec_augment(const LogMelSpectrogram& spec, const SpecAugmentConfig& cfg, Rng& rng) {
    cfg.validate(spec.n_mels);
    LogMelSpectrogram out = spec;
    if (cfg.is_noop() || spec.empty()) return out;

    float fill;
    if (cfg.fill == MaskFill::kFloor) {
        fill = spec.params.floor_value();
    } else {
        double sum = 0.0;
        for (float v : spec.data) sum += v;
        fill = static_cast<float>(sum / static_cast<double>(spec.data.size()));
    }

    const int f_max = std::min(cfg.max_freq_width, spec.n_mels);
    for (int m = 0; m < cfg.n_freq_masks; ++m) {
        const int w = uniform_int(rng, 0, f_max);
        const int start = uniform_int(rng, 0, spec.n_mels - w);
        for (int r = start; r < start + w; ++r) {
            std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(r) * spec.n_frames, spec.n_frames, fill);
        }
    }
    const int t_max = std::min(cfg.max_time_width, spec.n_frames);
    for (int m = 0; m < cfg.n_time_masks; ++m) {
        const int w = uniform_int(rng, 0, t_max);
        const int start = uniform_int(rng, 0, spec.n_frames - w);
        for (int r = 0; r < spec.n_mels; ++r) {
            for (int c = start; c < start + w; ++c) out.at(r, c) = fill;
        }
    }
    return out;
}

double expected_masked_fraction(const SpecAugmentConfig& cfg, int n_mels, int n_frames) {
    const double rows_clear = mean_uncovered(n_mels, cfg.max_freq_width, cfg.n_freq_masks);
    const double cols_clear = mean_uncovered(n_frames, cfg.max_time_width, cfg.n_time_masks);
    return 1.0 - rows_clear * cols_clear;
}

AudioClip time_stretch_linear(const AudioClip& clip, double ratio) {
    if (!(ratio > 0.0)) throw Error(ErrorKind::kInvalidArgument, "stretch ratio must be positive");
    if (ratio == 1.0) return clip;
    const std::size_t n_in = clip.samples.size();
    const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) / ratio));
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.resize(n_out);
    if (n_in == 0) return out;
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const auto i0 = std::min(static_cast<std::size_t>(pos), n_in - 1);
        const std::size_t i1 = std::min(i0 + 1, n_in - 1);
        const double frac = pos - static_cast<double>(i0);
        out.samples[i] = static_cast<float>(clip.samples[i0] + (clip.samples[i1] - clip.samples[i0]) * frac);
    }
    return out;
}

AudioClip ola_stretch(const AudioClip& clip, std::size_t target_len) {
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.assign(target_len, 0.0f);
    const std::size_t n_in = clip.samples.size();
    if (n_in == 0 || target_len == 0) return out;

    // WSOLA: each analysis frame may slide by up to kTolerance samples to best
    // continue the waveform laid down by the previous frame.
    constexpr long long kFrame = 512;
    constexpr long long kSynthHop = kFrame / 4;
    constexpr long long kTolerance = kFrame / 4;
    const double analysis_hop = static_cast<double>(kSynthHop) * static_cast<double>(n_in) / static_cast<double>(target_len);
    const auto n = static_cast<long long>(n_in);
    auto x = [&](long long i) -> double { return i >= 0 && i < n ? clip.samples[static_cast<std::size_t>(i)] : 0.0; };

    std::vector<double> window(kFrame);
    for (long long i = 0; i < kFrame; ++i) {
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / kFrame);
    }
    std::vector<double> acc(target_len, 0.0), norm(target_len, 0.0);
    long long prev = 0;
    for (long long k = 0;; ++k) {
        const long long out_start = k * kSynthHop - kFrame / 2;
        if (out_start >= static_cast<long long>(target_len)) break;
        const auto nominal = static_cast<long long>(std::llround(static_cast<double>(k) * analysis_hop));
        long long chosen = nominal;
        if (k > 0) {
            const long long natural = prev + kSynthHop;
            double best = -std::numeric_limits<double>::infinity();
            for (long long d = -kTolerance; d <= kTolerance; ++d) {
                double score = 0.0;
                for (long long i = 0; i < kFrame; i += 2) score += x(nominal + d - kFrame / 2 + i) * x(natural - kFrame / 2 + i);
                if (score > best) {
                    best = score;
                    chosen = nominal + d;
                }
            }
        }
        prev = chosen;
        for (long long i = 0; i < kFrame; ++i) {
            const long long o = out_start + i;
            if (o < 0 || o >= static_cast<long long>(target_len)) continue;
            acc[static_cast<std::size_t>(o)] += window[i] * x(chosen - kFrame / 2 + i);
            norm[static_cast<std::size_t>(o)] += window[i];
        }
    }
    for (std::size_t i = 0; i < target_len; ++i) {
        out.samples[i] = norm[i] > 1e-8 ? static_cast<float>(acc[i] / norm[i]) : 0.0f;
    }
    return out;
}

AudioClip wave_augment(const AudioClip& clip, const WaveAugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    if (!cfg.enabled) return clip;

    AudioClip out = time_stretch_linear(clip, uniform_real(rng, cfg.stretch_min, cfg.stretch_max));

    const double semitones = uniform_real(rng, cfg.pitch_semitones_min, cfg.pitch_semitones_max);
    if (semitones != 0.0) {
        const std::size_t len = out.samples.size();
        out = ola_stretch(time_stretch_linear(out, std::pow(2.0, semitones / 12.0)), len);
    }

    const double db = uniform_real(rng, cfg.gain_db_min, cfg.gain_db_max);
    if (db != 0.0) {
        const double gain = std::pow(10.0, db / 20.0);
        for (auto& s : out.samples) s = static_cast<float>(s * gain);
    }

    if (cfg.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_std);
        for (auto& s : out.samples) s = static_cast<float>(s + noise(rng));
    }
    return out;
}

}  // namespace kasr
