// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/dataset.hpp"

#include <unicode/uchar.h>
#include <unicode/uscript.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "kasr/error.hpp"
#include "kasr/metrics.hpp"
#include "kasr/rng.hpp"
#include "kasr/text.hpp"

namespace kasr {

namespace fs = std::filesystem;
using json = nlohmann::json;

// --- manifests -------------------------------------------------------------------

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kUnreadableFile, "cannot open manifest " + path.string());
    const fs::path base = fs::absolute(path).parent_path();
    std::vector<ManifestEntry> out;
    std::map<std::string, int> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto fail = [&](const std::string& why) {
            throw Error(ErrorKind::kMalformed, path.string() + ":" + std::to_string(lineno) + ": " + why);
        };
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) fail("not a JSON object");
        ManifestEntry e;
        try {
            e.id = j.at("id").get<std::string>();
            e.audio = j.at("audio").get<std::string>();
            e.text = j.at("text").get<std::string>();
            if (j.contains("source") && !j["source"].is_null()) e.source = j["source"].get<std::string>();
            if (j.contains("duration_s") && !j["duration_s"].is_null()) e.duration_s = j["duration_s"].get<double>();
        } catch (const json::exception& ex) {
            fail(ex.what());
        }
        if (e.id.empty()) fail("empty id");
        if (const auto it = seen.find(e.id); it != seen.end()) {
            throw Error(ErrorKind::kDuplicateId, path.string() + ":" + std::to_string(lineno) + ": duplicate id '" +
                                                     e.id + "' (first on line " + std::to_string(it->second) + ")");
        }
        seen.emplace(e.id, lineno);
        if (e.audio.is_relative()) e.audio = base / e.audio;
        e.audio = e.audio.lexically_normal();
        out.push_back(std::move(e));
    }
    return out;
}

void save_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
    const fs::path base = fs::absolute(path).parent_path();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kUnreadableFile, "cannot write " + path.string());
    for (const auto& e : entries) {
        fs::path audio = fs::absolute(e.audio).lexically_normal();
        const fs::path rel = audio.lexically_relative(base);
        json j{{"id", e.id}, {"audio", (rel.empty() ? audio : rel).generic_string()}, {"text", e.text}};
        if (!e.source.empty()) j["source"] = e.source;
        if (e.duration_s) j["duration_s"] = *e.duration_s;
        out << j.dump() << '\n';
    }
}

// --- filtering -------------------------------------------------------------------

std::string_view to_string(RejectReason reason) {
    switch (reason) {
        case RejectReason::kUnreadableAudio: return "unreadable_audio";
        case RejectReason::kTooShort: return "too_short";
        case RejectReason::kTooLong: return "too_long";
        case RejectReason::kEmptyAfterNormalization: return "empty_after_normalization";
        case RejectReason::kNoLetters: return "no_letters";
    }
    return "unknown";
}

std::map<std::string, int> FilterResult::histogram() const {
    std::map<std::string, int> h;
    for (const auto& [e, r] : rejected) ++h[std::string(to_string(r))];
    return h;
}

namespace {

bool is_ja_or_latin_alnum(char32_t c) {
    const auto cp = static_cast<UChar32>(c);
    if (u_isdigit(cp)) return true;
    if (c == U'ー' || c == U'々') return true;
    if (!u_isalpha(cp)) return false;
    UErrorCode status = U_ZERO_ERROR;
    switch (uscript_getScript(cp, &status)) {
        case USCRIPT_HAN:
        case USCRIPT_HIRAGANA:
        case USCRIPT_KATAKANA:
        case USCRIPT_LATIN:
            return true;
        default:
            return false;
    }
}

}  // namespace

FilterResult filter_invalid(std::span<const ManifestEntry> entries, const FilterChecks& checks) {
    FilterResult out;
    for (const auto& e : entries) {
        auto reject = [&](RejectReason r) { out.rejected.emplace_back(e, r); };
        std::optional<double> duration = checks.read_audio ? std::nullopt : e.duration_s;
        if (checks.read_audio) {
            try {
                duration = load_audio(e.audio).duration_s();
            } catch (const Error&) {
                reject(RejectReason::kUnreadableAudio);
                continue;
            }
        }
        if (duration && *duration < checks.min_duration_s) {
            reject(RejectReason::kTooShort);
            continue;
        }
        if (duration && *duration > checks.max_duration_s) {
            reject(RejectReason::kTooLong);
            continue;
        }
        const std::u32string norm = utf8_to_u32(normalize_ja(e.text));
        if (norm.empty()) {
            reject(RejectReason::kEmptyAfterNormalization);
            continue;
        }
        if (std::none_of(norm.begin(), norm.end(), is_ja_or_latin_alnum)) {
            reject(RejectReason::kNoLetters);
            continue;
        }
        out.kept.push_back(e);
    }
    return out;
}

// --- splits and vocabulary -------------------------------------------------------

Splits split(std::span<const ManifestEntry> entries, std::array<double, 3> ratios, std::uint64_t seed) {
    if (entries.size() < 3) throw Error(ErrorKind::kInvalidArgument, "need at least 3 entries to split");
    for (double r : ratios) {
        if (!(r >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "split ratios must be non-negative");
    }
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-6) {
        throw Error(ErrorKind::kInvalidArgument, "split ratios must sum to 1");
    }
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(seed));
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    const double n = static_cast<double>(entries.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios[1] + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratios[2] + 1e-9));
    const std::size_t n_train = entries.size() - n_val - n_test;
    Splits s;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
        dst.push_back(entries[order[i]]);
    }
    return s;
}

Vocabulary build_vocab(std::span<const ManifestEntry> train) {
    std::vector<std::string> texts;
    texts.reserve(train.size());
    for (const auto& e : train) texts.push_back(normalize_ja(e.text));
    return Vocabulary::from_texts(texts);
}

void save_vocab(const fs::path& path, const Vocabulary& vocab) {
    std::vector<std::uint32_t> cps(vocab.symbols().begin(), vocab.symbols().end());
    std::string chars;
    for (char32_t c : vocab.symbols()) chars += u32_to_utf8(std::u32string(1, c));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kUnreadableFile, "cannot write " + path.string());
    out << json{{"specials", {"<pad>", "<sot>", "<eot>", "<unk>"}}, {"codepoints", cps}, {"symbols", chars}}.dump()
        << '\n';
}

Vocabulary load_vocab(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kUnreadableFile, "cannot open vocabulary " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::kMalformed, path.string() + ": not a JSON object");
    try {
        const auto cps = j.at("codepoints").get<std::vector<std::uint32_t>>();
        return Vocabulary(std::vector<char32_t>(cps.begin(), cps.end()));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::kMalformed, path.string() + ": " + e.what());
    }
}

std::vector<int> encode_text(const Vocabulary& vocab, std::string_view text) {
    return vocab.encode(normalize_ja(text));
}

std::string decode_tokens(const Vocabulary& vocab, std::span<const int> ids) { return vocab.decode(ids); }

// --- synthetic corpus --------------------------------------------------------------

double synth_tone_hz(int k) {
    if (k < 0 || k >= static_cast<int>(kSynthSyllabary.size())) {
        throw Error(ErrorKind::kInvalidArgument, "tone index out of range");
    }
    return 300.0 + 200.0 * k;
}

AudioClip synth_clip(std::span<const int> tone_ids, double amplitude) {
    constexpr int kRamp = kSynthSampleRate / 200;
    AudioClip clip;
    clip.sample_rate = kSynthSampleRate;
    clip.samples.reserve(tone_ids.size() * kSynthToneSamples);
    for (int k : tone_ids) {
        const double w = 2.0 * std::numbers::pi * synth_tone_hz(k) / kSynthSampleRate;
        for (int i = 0; i < kSynthToneSamples; ++i) {
            const int edge = std::min(i, kSynthToneSamples - 1 - i);
            const double env = edge < kRamp ? 0.5 - 0.5 * std::cos(std::numbers::pi * edge / kRamp) : 1.0;
            clip.samples.push_back(static_cast<float>(amplitude * env * std::sin(w * i)));
        }
    }
    return clip;
}

std::vector<ManifestEntry> synth_corpus(int n, std::uint64_t seed, const fs::path& out_dir, const SynthOptions& opts) {
    if (n < 1) throw Error(ErrorKind::kInvalidArgument, "synth_corpus needs n >= 1");
    if (opts.min_len < 1 || opts.max_len < opts.min_len) {
        throw Error(ErrorKind::kInvalidArgument, "synth_corpus length range is empty");
    }
    fs::create_directories(out_dir);
    Rng rng(mix_seed(seed));
    std::uniform_int_distribution<int> len_dist(opts.min_len, opts.max_len);
    std::uniform_int_distribution<int> tone_dist(0, static_cast<int>(kSynthSyllabary.size()) - 1);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < n; ++i) {
        std::vector<int> tones(static_cast<std::size_t>(len_dist(rng)));
        for (auto& t : tones) t = tone_dist(rng);
        std::u32string text;
        for (int t : tones) text.push_back(kSynthSyllabary[static_cast<std::size_t>(t)]);
        char name[32];
        std::snprintf(name, sizeof name, "synth_%04d", i);
        ManifestEntry e;
        e.id = name;
        e.audio = fs::absolute(out_dir / (std::string(name) + ".wav")).lexically_normal();
        e.text = u32_to_utf8(text);
        e.duration_s = static_cast<double>(tones.size()) * kSynthToneSamples / kSynthSampleRate;
        e.source = "synth";
        save_wav(e.audio, synth_clip(tones, opts.amplitude));
        entries.push_back(std::move(e));
    }
    save_manifest(out_dir / "manifest.jsonl", entries);
    return entries;
}

// --- examples and batches -----------------------------------------------------------

std::vector<Example> load_examples(std::span<const ManifestEntry> entries, const Vocabulary& vocab,
                                   const MelParams& mel, int n_frames, int threads) {
    mel.validate();
    if (n_frames < 1) throw Error(ErrorKind::kInvalidArgument, "n_frames must be positive");
    std::vector<Example> out(entries.size());
    const std::size_t n_samples = static_cast<std::size_t>(n_frames) * static_cast<std::size_t>(mel.hop);
    auto work = [&](std::size_t i) {
        const ManifestEntry& e = entries[i];
        Example& x = out[i];
        x.id = e.id;
        x.text = normalize_ja(e.text);
        x.tokens = vocab.encode(x.text);
        AudioClip clip = load_audio(e.audio);
        if (clip.sample_rate != mel.sample_rate) clip = resample(clip, mel.sample_rate);
        x.audio = pad_or_trim_samples(clip, n_samples);
        x.features = log_mel(x.audio, mel);
    };
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || entries.size() < 2) {
        for (std::size_t i = 0; i < entries.size(); ++i) work(i);
        return out;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < entries.size(); i += workers) work(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

Batch make_batch(std::span<const Example* const> examples, std::span<const LogMelSpectrogram* const> features) {
    if (examples.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
    if (!features.empty() && features.size() != examples.size()) {
        throw Error(ErrorKind::kInvalidArgument, "feature override count does not match batch");
    }
    Batch b;
    b.size = examples.size();
    auto feat = [&](std::size_t i) -> const LogMelSpectrogram& {
        return features.empty() ? examples[i]->features : *features[i];
    };
    b.n_mels = static_cast<std::size_t>(feat(0).n_mels);
    b.frames = static_cast<std::size_t>(feat(0).n_frames);
    std::size_t max_tokens = 0;
    for (const auto* x : examples) max_tokens = std::max(max_tokens, x->tokens.size());
    b.len = max_tokens + 1;
    b.features.reserve(b.size * b.n_mels * b.frames);
    b.inputs.assign(b.size * b.len, Vocabulary::kPad);
    b.targets.assign(b.size * b.len, Vocabulary::kPad);
    b.mask.assign(b.size * b.len, 0);
    for (std::size_t i = 0; i < b.size; ++i) {
        const LogMelSpectrogram& f = feat(i);
        if (static_cast<std::size_t>(f.n_mels) != b.n_mels || static_cast<std::size_t>(f.n_frames) != b.frames) {
            throw Error(ErrorKind::kShapeMismatch, "batch features differ in shape");
        }
        b.features.insert(b.features.end(), f.data.begin(), f.data.end());
        const auto& tok = examples[i]->tokens;
        int* in = b.inputs.data() + i * b.len;
        int* tg = b.targets.data() + i * b.len;
        std::uint8_t* m = b.mask.data() + i * b.len;
        in[0] = Vocabulary::kSot;
        for (std::size_t t = 0; t < tok.size(); ++t) {
            in[t + 1] = tok[t];
            tg[t] = tok[t];
            m[t] = 1;
        }
        tg[tok.size()] = Vocabulary::kEot;
        m[tok.size()] = 1;
    }
    return b;
}

}  // namespace kasr
