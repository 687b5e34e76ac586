// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Error-rate metrics for Japanese transcripts.

#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kasr {

// NFKC, drop punctuation (general category P plus 、。「」『』・！？…) and
// whitespace, lowercase Latin letters. Repeated until stable, so the result is
// a fixed point.
std::string normalize_ja(std::string_view text);

struct EditCounts {
    std::size_t S = 0;
    std::size_t D = 0;
    std::size_t I = 0;
    std::size_t N = 0;  // reference words
    std::size_t C = 0;  // reference characters

    std::size_t errors() const { return S + D + I; }
    EditCounts& operator+=(const EditCounts& o);
    bool operator==(const EditCounts&) const = default;
};

// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
// prefers match/substitution, then deletion, then insertion. Only S, D and I
// are filled in.
template <class Sym>
EditCounts edit_counts(std::span<const Sym> ref, std::span<const Sym> hyp);

// Splits normalized text into words.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual std::string_view name() const = 0;
    virtual std::vector<std::u32string> split(std::u32string_view text) const = 0;
};

class WhitespaceSegmenter final : public Segmenter {
public:
    std::string_view name() const override { return "whitespace"; }
    std::vector<std::u32string> split(std::u32string_view text) const override;
};

// Maximal runs of one script class: kanji, hiragana, katakana (with the
// prolonged sound mark), Latin, digits, anything else.
class ScriptRunSegmenter final : public Segmenter {
public:
    std::string_view name() const override { return "script"; }
    std::vector<std::u32string> split(std::u32string_view text) const override;
};

// "whitespace" or "script"; throws kInvalidArgument otherwise.
std::unique_ptr<Segmenter> make_segmenter(std::string_view name);

// Character counts over code points; C filled in.
EditCounts char_counts(std::string_view ref, std::string_view hyp);
// Word counts over segmenter tokens; N filled in.
EditCounts word_counts(std::string_view ref, std::string_view hyp, const Segmenter& seg);

// (S + D + I) / C over code points. Throws kEmptyReference when C = 0 and hyp
// is non-empty; returns 0 when both are empty. Inputs are used as given.
double cer(std::string_view ref, std::string_view hyp);
double wer(std::string_view ref, std::string_view hyp, const Segmenter& seg);

struct UtteranceScore {
    std::string id;
    EditCounts chars;
    EditCounts words;
    double cer = 0.0;
    double wer = 0.0;
};

struct CorpusScore {
    EditCounts chars;  // summed
    EditCounts words;  // summed
    double cer = 0.0;  // micro-averaged
    double wer = 0.0;
    std::vector<UtteranceScore> utterances;
};

struct ScoredPair {
    std::string id;
    std::string ref;
    std::string hyp;
};

// Normalizes both sides, then micro-averages. Throws kInvalidArgument on an
// empty list and kEmptyReference when every reference is empty.
CorpusScore corpus_score(std::span<const ScoredPair> pairs, const Segmenter& seg);

// utterance_id,ref_len_chars,S,D,I,cer,wer rows then a "TOTAL" row.
std::string report_csv(const CorpusScore& score);
// "WER 12.34 CER 5.67" (percent, two decimals).
std::string summary_line(const CorpusScore& score);

}  // namespace kasr
