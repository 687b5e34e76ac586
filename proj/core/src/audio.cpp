// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "kasr/error.hpp"

namespace kasr {

namespace {

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

// Index into [0, n) under symmetric reflection without edge repetition.
std::size_t reflect_index(long long i, std::size_t n) {
    if (n == 1) return 0;
    const long long period = 2 * (static_cast<long long>(n) - 1);
    i = std::llabs(i) % period;
    if (i >= static_cast<long long>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

}  // namespace

void MelParams::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::kInvalidArgument, "mel params: " + what); };
    if (n_mels < 1) fail("n_mels must be >= 1");
    if (n_fft < 2) fail("n_fft must be >= 2");
    if (hop < 1) fail("hop must be >= 1");
    if (win < 1 || win > n_fft) fail("win must be in [1, n_fft]");
    if (sample_rate <= 0) fail("sample_rate must be positive");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) fail("need 0 <= fmin < fmax <= sample_rate/2");
    if (!(log_floor > 0.0)) fail("log_floor must be positive");
}

float MelParams::floor_value() const {
    return static_cast<float>(std::log10(log_floor));
}

AudioClip load_audio(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kUnreadableFile, "cannot open audio file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
        throw Error(ErrorKind::kUnreadableFile, "not a RIFF/WAVE file: " + path.string());
    }

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= n) {
        const unsigned char* chunk = p + pos;
        const std::uint32_t len = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16 || body + 16 > n) throw Error(ErrorKind::kUnreadableFile, "truncated fmt chunk: " + path.string());
            format = read_u16(p + body);
            channels = read_u16(p + body + 2);
            rate = read_u32(p + body + 4);
            bits = read_u16(p + body + 14);
            if (format == kFormatExtensible && len >= 40 && body + 26 <= n) format = read_u16(p + body + 24);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = p + body;
            data_len = std::min<std::size_t>(len, n - body);
            break;
        }
        pos = body + len + (len & 1u);
    }
    if (!have_fmt || data == nullptr) throw Error(ErrorKind::kUnreadableFile, "missing fmt or data chunk: " + path.string());
    if (rate == 0) throw Error(ErrorKind::kUnreadableFile, "zero sample rate: " + path.string());
    if (channels < 1 || channels > 2) {
        throw Error(ErrorKind::kUnsupportedCodec, "unsupported channel count " + std::to_string(channels));
    }
    const bool pcm16 = format == kFormatPcm && bits == 16;
    const bool float32 = format == kFormatFloat && bits == 32;
    if (!pcm16 && !float32) {
        throw Error(ErrorKind::kUnsupportedCodec,
                    "unsupported WAV encoding (format " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");
    }

    const std::size_t bytes_per_sample = bits / 8;
    const std::size_t frame_bytes = bytes_per_sample * channels;
    const std::size_t n_frames = data_len / frame_bytes;
    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.samples.resize(n_frames);
    for (std::size_t f = 0; f < n_frames; ++f) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char* s = data + f * frame_bytes + c * bytes_per_sample;
            float v;
            if (pcm16) {
                v = static_cast<float>(static_cast<std::int16_t>(read_u16(s))) / 32768.0f;
            } else {
                v = std::bit_cast<float>(read_u32(s));
                if (!std::isfinite(v)) throw Error(ErrorKind::kUnreadableFile, "non-finite sample in " + path.string());
            }
            acc += v;
        }
        clip.samples[f] = channels == 2 ? acc * 0.5f : acc;
    }
    return clip;
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding) {
    if (clip.sample_rate <= 0) throw Error(ErrorKind::kInvalidArgument, "sample rate must be positive");
    const bool pcm = encoding == WavEncoding::kPcm16;
    const std::uint16_t bits = pcm ? 16 : 32;
    const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * (bits / 8));

    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, pcm ? kFormatPcm : kFormatFloat);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
    put_u16(out, bits / 8);
    put_u16(out, bits);
    out += "data";
    put_u32(out, data_len);
    for (float s : clip.samples) {
        if (pcm) {
            const float clamped = std::clamp(s, -1.0f, 1.0f);
            const auto q = static_cast<std::int16_t>(std::clamp(std::lround(clamped * 32768.0f), -32768L, 32767L));
            put_u16(out, static_cast<std::uint16_t>(q));
        } else {
            put_u32(out, std::bit_cast<std::uint32_t>(s));
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::kUnreadableFile, "cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

AudioClip resample(const AudioClip& clip, int target_rate) {
    if (target_rate <= 0) throw Error(ErrorKind::kInvalidArgument, "target sample rate must be positive");
    if (clip.sample_rate <= 0) throw Error(ErrorKind::kInvalidArgument, "source sample rate must be positive");
    if (target_rate == clip.sample_rate) return clip;

    const std::size_t n_in = clip.samples.size();
    const auto n_out = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_in) * target_rate / clip.sample_rate));
    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(n_out);
    if (n_in == 0) return out;
    const double step = static_cast<double>(clip.sample_rate) / target_rate;
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * step;
        const auto i0 = std::min(static_cast<std::size_t>(pos), n_in - 1);
        const std::size_t i1 = std::min(i0 + 1, n_in - 1);
        const double frac = pos - static_cast<double>(i0);
        const double s0 = clip.samples[i0];
        const double s1 = clip.samples[i1];
        out.samples[i] = static_cast<float>(s0 + (s1 - s0) * frac);
    }
    return out;
}

AudioClip pad_or_trim_samples(const AudioClip& clip, std::size_t n_samples) {
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.assign(n_samples, 0.0f);
    std::copy_n(clip.samples.begin(), std::min(n_samples, clip.samples.size()), out.samples.begin());
    return out;
}

AudioClip pad_or_trim(const AudioClip& clip, double seconds) {
    if (!(seconds > 0.0)) throw Error(ErrorKind::kInvalidArgument, "segment length must be positive");
    return pad_or_trim_samples(clip, static_cast<std::size_t>(std::llround(seconds * clip.sample_rate)));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_points_hz(const MelParams& params) {
    const double lo = hz_to_mel(params.fmin);
    const double hi = hz_to_mel(params.fmax);
    std::vector<double> hz(static_cast<std::size_t>(params.n_mels) + 2);
    for (std::size_t i = 0; i < hz.size(); ++i) {
        hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (params.n_mels + 1));
    }
    return hz;
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelParams& params) {
    params.validate();
    auto hz = mel_points_hz(params);
    return {hz.begin() + 1, hz.end() - 1};
}

std::vector<std::vector<double>> mel_filterbank(const MelParams& params) {
    params.validate();
    const auto hz = mel_points_hz(params);
    const int n_bins = params.n_bins();
    std::vector<std::vector<double>> fb(params.n_mels, std::vector<double>(n_bins, 0.0));
    for (int m = 0; m < params.n_mels; ++m) {
        const double left = hz[m], center = hz[m + 1], right = hz[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * params.sample_rate / params.n_fft;
            const double up = (f - left) / (center - left);
            const double down = (right - f) / (right - center);
            fb[m][k] = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

int frame_count(std::size_t n_samples, int hop) {
    return static_cast<int>((n_samples + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop));
}

LogMelSpectrogram log_mel(const AudioClip& clip, const MelParams& params) {
    params.validate();
    if (clip.sample_rate != params.sample_rate) {
        throw Error(ErrorKind::kInvalidArgument, "sample rate mismatch: clip " + std::to_string(clip.sample_rate) +
                                                     " Hz, mel params " + std::to_string(params.sample_rate) + " Hz");
    }
    const std::size_t len = clip.samples.size();
    const int n_fft = params.n_fft;
    const int n_bins = params.n_bins();
    const int n_frames = frame_count(len, params.hop);

    LogMelSpectrogram spec;
    spec.n_mels = params.n_mels;
    spec.n_frames = n_frames;
    spec.params = params;
    spec.data.assign(static_cast<std::size_t>(params.n_mels) * n_frames, params.floor_value());
    if (n_frames == 0) return spec;

    // Periodic Hann window centred inside the FFT frame.
    std::vector<double> window(n_fft, 0.0);
    const int offset = (n_fft - params.win) / 2;
    for (int i = 0; i < params.win; ++i) {
        window[offset + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / params.win);
    }

    const auto fb = mel_filterbank(params);
    // Only bins touched by some filter need a DFT.
    int k_lo = n_bins, k_hi = -1;
    for (const auto& row : fb) {
        for (int k = 0; k < n_bins; ++k) {
            if (row[k] > 0.0) {
                k_lo = std::min(k_lo, k);
                k_hi = std::max(k_hi, k);
            }
        }
    }

    std::vector<double> cos_table, sin_table;
    const int n_active = k_hi >= k_lo ? k_hi - k_lo + 1 : 0;
    cos_table.resize(static_cast<std::size_t>(n_active) * n_fft);
    sin_table.resize(static_cast<std::size_t>(n_active) * n_fft);
    for (int b = 0; b < n_active; ++b) {
        const int k = k_lo + b;
        for (int n = 0; n < n_fft; ++n) {
            const double phase = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long long>(k) * n) % n_fft) / n_fft;
            cos_table[static_cast<std::size_t>(b) * n_fft + n] = std::cos(phase);
            sin_table[static_cast<std::size_t>(b) * n_fft + n] = std::sin(phase);
        }
    }

    std::vector<double> frame(n_fft);
    std::vector<double> power(n_active);
    const long long pad = n_fft / 2;
    for (int t = 0; t < n_frames; ++t) {
        const long long start = static_cast<long long>(t) * params.hop - pad;
        for (int n = 0; n < n_fft; ++n) {
            frame[n] = window[n] == 0.0 ? 0.0 : window[n] * clip.samples[reflect_index(start + n, len)];
        }
        for (int b = 0; b < n_active; ++b) {
            const double* c = &cos_table[static_cast<std::size_t>(b) * n_fft];
            const double* s = &sin_table[static_cast<std::size_t>(b) * n_fft];
            double re = 0.0, im = 0.0;
            for (int n = 0; n < n_fft; ++n) {
                re += frame[n] * c[n];
                im -= frame[n] * s[n];
            }
            power[b] = re * re + im * im;
        }
        for (int m = 0; m < params.n_mels; ++m) {
            double energy = 0.0;
            for (int b = 0; b < n_active; ++b) energy += fb[m][k_lo + b] * power[b];
            spec.at(m, t) = static_cast<float>(std::log10(std::max(energy, params.log_floor)));
        }
    }
    return spec;
}

}  // namespace kasr
