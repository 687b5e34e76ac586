// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kasr/audio.hpp"
#include "kasr/rng.hpp"

namespace kasr {

enum class MaskFill { kMean, kFloor };

struct SpecAugmentConfig {
    int n_freq_masks = 2;
    int max_freq_width = 10;
    int n_time_masks = 2;
    int max_time_width = 50;
    MaskFill fill = MaskFill::kMean;

    void validate(int n_mels) const;
    bool is_noop() const { return n_freq_masks == 0 && n_time_masks == 0; }
    static SpecAugmentConfig disabled() { return {0, 0, 0, 0, MaskFill::kMean}; }
};

// Waveform augmentation; ships disabled.
struct WaveAugmentConfig {
    double stretch_min = 1.0;
    double stretch_max = 1.0;
    double pitch_semitones_min = 0.0;
    double pitch_semitones_max = 0.0;
    double gain_db_min = 0.0;
    double gain_db_max = 0.0;
    double noise_std = 0.0;
    bool enabled = false;

    void validate() const;
};

// Block masking along the mel and frame axes. Width ~ U{0..max}, start ~ U over
// valid positions. Masked cells take the fill statistic of the input.
LogMelSpectrogram spec_augment(const LogMelSpectrogram& spec, const SpecAugmentConfig& cfg, Rng& rng);

// Expected masked fraction of an n_mels x n_frames grid, accounting for
// overlapping masks exactly (per-cell inclusion probabilities).
double expected_masked_fraction(const SpecAugmentConfig& cfg, int n_mels, int n_frames);

// Time-stretch, pitch shift, gain, then Gaussian noise, in that order.
AudioClip wave_augment(const AudioClip& clip, const WaveAugmentConfig& cfg, Rng& rng);

// Building blocks of wave_augment, exposed for tests.
AudioClip time_stretch_linear(const AudioClip& clip, double ratio);
// Waveform-similarity overlap-add to exactly target_len samples; keeps pitch.
AudioClip ola_stretch(const AudioClip& clip, std::size_t target_len);

}  // namespace kasr
