// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/metrics.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>

#include "kasr/error.hpp"
#include "kasr/text.hpp"

namespace kasr {

namespace {

const icu::Normalizer2& nfkc() {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* n = icu::Normalizer2::getNFKCInstance(status);
    if (U_FAILURE(status) || n == nullptr) throw Error(ErrorKind::kInvalidArgument, "ICU NFKC data unavailable");
    return *n;
}

bool is_japanese_punct(UChar32 c) {
    switch (c) {
        case U'、': case U'。': case U'「': case U'」': case U'『': case U'』':
        case U'・': case U'！': case U'？': case U'…':
            return true;
        default:
            return false;
    }
}

bool is_dropped(UChar32 c) {
    return u_ispunct(c) || is_japanese_punct(c) || u_isUWhiteSpace(c);
}

icu::UnicodeString one_pass(const icu::UnicodeString& in) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::UnicodeString folded = nfkc().normalize(in, status);
    if (U_FAILURE(status)) throw Error(ErrorKind::kInvalidArgument, "NFKC normalization failed");
    icu::UnicodeString out;
    for (int32_t i = 0; i < folded.length();) {
        const UChar32 c = folded.char32At(i);
        i += U16_LENGTH(c);
        if (is_dropped(c)) continue;
        UErrorCode se = U_ZERO_ERROR;
        out.append(uscript_getScript(c, &se) == USCRIPT_LATIN ? u_tolower(c) : c);
    }
    return out;
}

}  // namespace

std::string normalize_ja(std::string_view text) {
    icu::UnicodeString cur = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    // Dropping a code point can bring a base and a combining mark together,
    // and NFKC can then compose them into something new; iterate to a fixed point.
    for (int round = 0; round < 8; ++round) {
        icu::UnicodeString next = one_pass(cur);
        if (next == cur) break;
        cur = std::move(next);
    }
    std::string out;
    cur.toUTF8String(out);
    return out;
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
    S += o.S;
    D += o.D;
    I += o.I;
    N += o.N;
    C += o.C;
    return *this;
}

template <class Sym>
EditCounts edit_counts(std::span<const Sym> ref, std::span<const Sym> hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<std::size_t> dp((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
        }
    }
    EditCounts c;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            const bool same = ref[i - 1] == hyp[j - 1];
            if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
                if (!same) ++c.S;
                --i, --j;
                continue;
            }
        }
        if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            ++c.D;
            --i;
        } else {
            ++c.I;
            --j;
        }
    }
    return c;
}

template EditCounts edit_counts<char32_t>(std::span<const char32_t>, std::span<const char32_t>);
template EditCounts edit_counts<std::u32string>(std::span<const std::u32string>, std::span<const std::u32string>);
template EditCounts edit_counts<int>(std::span<const int>, std::span<const int>);
template EditCounts edit_counts<char>(std::span<const char>, std::span<const char>);

std::vector<std::u32string> WhitespaceSegmenter::split(std::u32string_view text) const {
    std::vector<std::u32string> out;
    std::u32string cur;
    for (char32_t c : text) {
        if (u_isUWhiteSpace(static_cast<UChar32>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace {

enum class ScriptClass { kKanji, kHiragana, kKatakana, kLatin, kDigit, kOther, kSpace };

ScriptClass classify(char32_t c) {
    const auto cp = static_cast<UChar32>(c);
    if (u_isUWhiteSpace(cp)) return ScriptClass::kSpace;
    if (u_isdigit(cp)) return ScriptClass::kDigit;
    if (c == U'ー' || c == U'ｰ') return ScriptClass::kKatakana;
    if (c == U'々' || c == U'〆') return ScriptClass::kKanji;
    UErrorCode status = U_ZERO_ERROR;
    switch (uscript_getScript(cp, &status)) {
        case USCRIPT_HAN: return ScriptClass::kKanji;
        case USCRIPT_HIRAGANA: return ScriptClass::kHiragana;
        case USCRIPT_KATAKANA: return ScriptClass::kKatakana;
        case USCRIPT_LATIN: return ScriptClass::kLatin;
        default: return ScriptClass::kOther;
    }
}

}  // namespace

std::vector<std::u32string> ScriptRunSegmenter::split(std::u32string_view text) const {
    std::vector<std::u32string> out;
    std::u32string cur;
    ScriptClass cur_class = ScriptClass::kSpace;
    for (char32_t c : text) {
        const ScriptClass k = classify(c);
        if (k != cur_class && !cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
        cur_class = k;
        if (k != ScriptClass::kSpace) cur.push_back(c);
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::unique_ptr<Segmenter> make_segmenter(std::string_view name) {
    if (name == "whitespace") return std::make_unique<WhitespaceSegmenter>();
    if (name == "script") return std::make_unique<ScriptRunSegmenter>();
    throw Error(ErrorKind::kInvalidArgument, "unknown segmenter '" + std::string(name) + "' (whitespace|script)");
}

EditCounts char_counts(std::string_view ref, std::string_view hyp) {
    const std::u32string r = utf8_to_u32(ref), h = utf8_to_u32(hyp);
    EditCounts c = edit_counts<char32_t>(r, h);
    c.C = r.size();
    return c;
}

EditCounts word_counts(std::string_view ref, std::string_view hyp, const Segmenter& seg) {
    const auto r = seg.split(utf8_to_u32(ref));
    const auto h = seg.split(utf8_to_u32(hyp));
    EditCounts c = edit_counts<std::u32string>(r, h);
    c.N = r.size();
    return c;
}

namespace {

double rate(std::size_t errors, std::size_t denom, bool hyp_empty) {
    if (denom == 0) {
        if (hyp_empty) return 0.0;
        throw Error(ErrorKind::kEmptyReference, "empty reference with non-empty hypothesis");
    }
    return static_cast<double>(errors) / static_cast<double>(denom);
}

}  // namespace

double cer(std::string_view ref, std::string_view hyp) {
    const EditCounts c = char_counts(ref, hyp);
    return rate(c.errors(), c.C, hyp.empty());
}

double wer(std::string_view ref, std::string_view hyp, const Segmenter& seg) {
    const EditCounts c = word_counts(ref, hyp, seg);
    return rate(c.errors(), c.N, c.I == 0);
}

CorpusScore corpus_score(std::span<const ScoredPair> pairs, const Segmenter& seg) {
    if (pairs.empty()) throw Error(ErrorKind::kInvalidArgument, "cannot score an empty corpus");
    CorpusScore out;
    for (const auto& p : pairs) {
        const std::string r = normalize_ja(p.ref), h = normalize_ja(p.hyp);
        UtteranceScore u;
        u.id = p.id;
        u.chars = char_counts(r, h);
        u.words = word_counts(r, h, seg);
        u.cer = u.chars.C > 0 ? static_cast<double>(u.chars.errors()) / static_cast<double>(u.chars.C)
                              : (u.chars.errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity());
        u.wer = u.words.N > 0 ? static_cast<double>(u.words.errors()) / static_cast<double>(u.words.N)
                              : (u.words.errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity());
        out.chars += u.chars;
        out.words += u.words;
        out.utterances.push_back(std::move(u));
    }
    if (out.chars.C == 0) throw Error(ErrorKind::kEmptyReference, "every reference is empty");
    out.cer = static_cast<double>(out.chars.errors()) / static_cast<double>(out.chars.C);
    out.wer = out.words.N > 0 ? static_cast<double>(out.words.errors()) / static_cast<double>(out.words.N) : 0.0;
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

}  // namespace

std::string report_csv(const CorpusScore& score) {
    std::ostringstream os;
    os << "utterance_id,ref_len_chars,S,D,I,cer,wer\n";
    for (const auto& u : score.utterances) {
        os << csv_field(u.id) << ',' << u.chars.C << ',' << u.chars.S << ',' << u.chars.D << ',' << u.chars.I << ','
           << fmt(u.cer) << ',' << fmt(u.wer) << '\n';
    }
    os << "TOTAL," << score.chars.C << ',' << score.chars.S << ',' << score.chars.D << ',' << score.chars.I << ','
       << fmt(score.cer) << ',' << fmt(score.wer) << '\n';
    return os.str();
}

std::string summary_line(const CorpusScore& score) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "WER %.2f CER %.2f", 100.0 * score.wer, 100.0 * score.cer);
    return buf;
}

}  // namespace kasr
