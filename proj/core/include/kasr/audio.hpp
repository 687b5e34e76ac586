// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Audio front-end: WAV I/O, resampling, fixed-length segmenting and the
// log-Mel spectrogram that feeds the encoder.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace kasr {

struct AudioClip {
    std::vector<float> samples;  // mono, nominally in [-1, 1]
    int sample_rate = 16000;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

struct MelParams {
    int n_mels = 80;
    int n_fft = 400;
    int hop = 160;
    int win = 400;
    int sample_rate = 16000;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;

    // Throws Error(kInvalidArgument) when the invariants do not hold.
    void validate() const;
    int n_bins() const { return n_fft / 2 + 1; }
    float floor_value() const;

    bool operator==(const MelParams&) const = default;
};

// Row-major [n_mels x n_frames].
struct LogMelSpectrogram {
    int n_mels = 0;
    int n_frames = 0;
    std::vector<float> data;
    MelParams params;

    float& at(int mel, int frame) { return data[static_cast<std::size_t>(mel) * n_frames + frame]; }
    float at(int mel, int frame) const { return data[static_cast<std::size_t>(mel) * n_frames + frame]; }
    bool empty() const { return data.empty(); }
};

enum class WavEncoding { kPcm16, kFloat32 };

AudioClip load_audio(const std::filesystem::path& path);
void save_wav(const std::filesystem::path& path, const AudioClip& clip,
              WavEncoding encoding = WavEncoding::kPcm16);

// Linear-interpolation resampler; output length is round(len * target / source).
AudioClip resample(const AudioClip& clip, int target_rate);

// Zero-pads at the tail or truncates to exactly round(seconds * sample_rate) samples.
AudioClip pad_or_trim(const AudioClip& clip, double seconds);
AudioClip pad_or_trim_samples(const AudioClip& clip, std::size_t n_samples);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular HTK filters, [n_mels][n_fft/2 + 1].
std::vector<std::vector<double>> mel_filterbank(const MelParams& params);
// Peak frequency of each filter (n_mels values).
std::vector<double> mel_center_frequencies(const MelParams& params);

// Frames are centred at multiples of hop with reflection padding, so the
// frame count is ceil(len / hop).
int frame_count(std::size_t n_samples, int hop);

LogMelSpectrogram log_mel(const AudioClip& clip, const MelParams& params);

}  // namespace kasr
