// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "kasr/augment.hpp"
#include "kasr/dataset.hpp"
#include "kasr/error.hpp"
#include "kasr/lora.hpp"
#include "kasr/metrics.hpp"
#include "kasr/model.hpp"
#include "kasr/trainer.hpp"
#include "run_config.hpp"

namespace kasr::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kUnreadableFile, "cannot write " + path.string());
    out << text;
}

LogMelSpectrogram features_for(const fs::path& wav, const MelParams& mel, std::optional<int> n_frames) {
    AudioClip clip = load_audio(wav);
    if (clip.sample_rate != mel.sample_rate) clip = resample(clip, mel.sample_rate);
    if (n_frames) {
        clip = pad_or_trim_samples(clip, static_cast<std::size_t>(*n_frames) * static_cast<std::size_t>(mel.hop));
    }
    return log_mel(clip, mel);
}

// --- prepare ---------------------------------------------------------------------------

struct PrepareArgs {
    std::string manifest;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string ratios = "0.8,0.1,0.1";
    bool skip_audio = false;
};

std::array<double, 3> parse_ratios(const std::string& s) {
    std::array<double, 3> r{};
    std::stringstream ss(s);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i == 3) break;
        try {
            r[i++] = std::stod(item);
        } catch (const std::exception&) {
            i = 4;
            break;
        }
    }
    if (i != 3 || ss.rdbuf()->in_avail() > 0) {
        throw Error(ErrorKind::kInvalidArgument, "--ratios expects three comma-separated numbers");
    }
    return r;
}

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
    const auto entries = load_manifest(a.manifest);
    FilterChecks checks;
    checks.read_audio = !a.skip_audio;
    const FilterResult filtered = filter_invalid(entries, checks);
    const Splits s = split(filtered.kept, parse_ratios(a.ratios), a.seed);
    const Vocabulary vocab = build_vocab(s.train);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    const std::string stem = fs::path(a.manifest).stem().string();
    save_manifest(dir / (stem + ".train.jsonl"), s.train);
    save_manifest(dir / (stem + ".val.jsonl"), s.val);
    save_manifest(dir / (stem + ".test.jsonl"), s.test);
    save_vocab(dir / "vocab.json", vocab);

    std::ostringstream report;
    report << "kept: " << filtered.kept.size() << '\n' << "rejected: " << filtered.rejected.size() << '\n';
    for (const auto& [reason, count] : filtered.histogram()) report << reason << ": " << count << '\n';
    write_text(dir / "filter_report.txt", report.str());
    for (const auto& [e, reason] : filtered.rejected) err << "rejected " << e.id << ": " << to_string(reason) << '\n';

    out << "train " << s.train.size() << " val " << s.val.size() << " test " << s.test.size() << " vocab "
        << vocab.size() << '\n';
    return kExitOk;
}

// --- training ----------------------------------------------------------------------------

struct Setup {
    Model model;
    Vocabulary vocab;
    MelParams mel;
    TrainData data;
};

Setup load_setup(const RunConfig& rc, int threads, std::ostream& err) {
    Setup s;
    if (!rc.base_checkpoint.empty()) {
        Checkpoint ck = load_checkpoint(rc.base_checkpoint);
        if (!rc.vocab_path.empty() && !(load_vocab(rc.vocab_path) == ck.vocab)) {
            throw Error(ErrorKind::kVocabMismatch, "data.vocab differs from the base checkpoint's vocabulary");
        }
        s.model = std::move(ck.model);
        s.vocab = std::move(ck.vocab);
        s.mel = ck.mel;
        for (auto& [name, t] : s.model.params) t.requires_grad = true;
    } else {
        const auto train_entries = load_manifest(rc.train_manifest);
        s.vocab = rc.vocab_path.empty() ? build_vocab(train_entries) : load_vocab(rc.vocab_path);
        s.mel = rc.mel;
        ModelConfig mc = rc.model;
        mc.vocab_size = s.vocab.size();
        mc.n_mels = s.mel.n_mels;
        Rng rng(mix_seed(rc.train.seed));
        s.model = build(mc, rng);
        err << "initialised a new model (no base_checkpoint)\n";
    }
    s.data.vocab = s.vocab;
    const int frames = s.model.config.max_source_frames;
    s.data.train = load_examples(load_manifest(rc.train_manifest), s.vocab, s.mel, frames, threads);
    if (!rc.val_manifest.empty()) {
        s.data.val = load_examples(load_manifest(rc.val_manifest), s.vocab, s.mel, frames, threads);
    }
    return s;
}

ProgressFn progress_to(std::ostream& err) {
    return [&err](const LogRow& r) {
        if (r.split != "eval") return;
        err << "step " << r.step << " eval loss " << fixed(r.loss, 4) << " WER " << fixed(100.0 * r.wer.value_or(0), 2)
            << " CER " << fixed(100.0 * r.cer.value_or(0), 2) << '\n';
    };
}

struct TrainArgs {
    std::string config;
    bool dry_run = false;
};

int cmd_train(const TrainArgs& a, std::optional<TrainMode> forced, int threads, std::ostream& out, std::ostream& err) {
    RunConfig rc = load_run_config(a.config, ParseOptions{forced, true});
    const int workers = std::max(threads, rc.threads);
    Setup s = load_setup(rc, workers, err);
    const auto seg = make_segmenter(rc.train.segmenter);
    const fs::path out_dir = rc.output_dir;

    if (rc.train.mode == TrainMode::kE2E) {
        out << "parameters " << parameter_count(s.model.params) << " trainable " << trainable_count(s.model) << '\n';
        if (a.dry_run) {
            out << "dry run: 0 steps\n";
            return kExitOk;
        }
        fs::create_directories(out_dir);
        const TrainResult res = train(s.model, s.data, rc.train, progress_to(err));
        res.log.save(out_dir / "train_log.csv");
        save_checkpoint(out_dir / "model.kasr", s.model, s.vocab, s.mel);
        const CorpusScore tr = evaluate(s.model, s.data.train, s.vocab, *seg, rc.train.max_decode_len);
        out << "train CER " << fixed(tr.cer, 3) << '\n';
        if (!s.data.val.empty()) {
            out << "eval " << summary_line(evaluate(s.model, s.data.val, s.vocab, *seg, rc.train.max_decode_len)) << '\n';
        }
        return kExitOk;
    }

    Rng rng(mix_seed(rc.train.seed));
    AdaptedModel am = inject(std::move(s.model), rc.train.lora, rng);
    out << "parameters " << parameter_count(am.base.params) << " trainable " << trainable_count(am) << " fraction "
        << fixed(trainable_fraction(am), 6) << '\n';
    if (a.dry_run) {
        out << "dry run: 0 steps\n";
        return kExitOk;
    }
    fs::create_directories(out_dir);
    const TrainResult res = train(am, s.data, rc.train, progress_to(err));
    res.log.save(out_dir / "train_log.csv");
    save_adapters(out_dir / "adapters.kasr", am);
    const DeltaMap deltas = am.adapters.deltas();
    const CorpusScore tr = evaluate(am.base, s.data.train, s.vocab, *seg, rc.train.max_decode_len, &deltas);
    std::optional<CorpusScore> ev;
    if (!s.data.val.empty()) ev = evaluate(am.base, s.data.val, s.vocab, *seg, rc.train.max_decode_len, &deltas);
    const Model merged = merge(am);
    save_checkpoint(out_dir / "model.kasr", merged, s.vocab, s.mel);
    out << "train CER " << fixed(tr.cer, 3) << '\n';
    if (ev) out << "eval " << summary_line(*ev) << '\n';
    return kExitOk;
}

// --- sweep ----------------------------------------------------------------------------------

struct SweepArgs {
    std::string config;
    std::string ranks;
};

std::vector<int> parse_ranks(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const int r = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(r);
        } catch (const std::exception&) {
            throw Error(ErrorKind::kInvalidArgument, "--ranks: '" + item + "' is not an integer");
        }
    }
    if (out.empty()) throw Error(ErrorKind::kInvalidArgument, "--ranks needs at least one rank");
    return out;
}

int cmd_sweep(const SweepArgs& a, int threads, std::ostream& out, std::ostream& err) {
    const std::vector<int> ranks = parse_ranks(a.ranks);
    RunConfig rc = load_run_config(a.config, ParseOptions{TrainMode::kLora, false});
    Setup s = load_setup(rc, std::max(threads, rc.threads), err);
    for (auto& [name, t] : s.model.params) t.requires_grad = false;
    const fs::path out_dir = rc.output_dir;
    fs::create_directories(out_dir);
    const auto runs = sweep_ranks(s.model, s.data, ranks, rc.train, progress_to(err));
    for (const auto& r : runs) r.result.log.save(out_dir / ("rank_" + std::to_string(r.rank) + ".csv"));
    const std::string summary = sweep_summary_csv(runs);
    write_text(out_dir / "sweep_summary.csv", summary);
    out << summary;
    return kExitOk;
}

// --- evaluate / transcribe ------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string segmenter = "script";
    std::string adapters;
    std::string vocab;
    std::string report = "evaluation_report.csv";
    int max_len = 64;
};

int cmd_evaluate(const EvalArgs& a, int threads, std::ostream& out, std::ostream&) {
    const auto seg = make_segmenter(a.segmenter);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    if (!a.vocab.empty() && !(load_vocab(a.vocab) == ck.vocab)) {
        throw Error(ErrorKind::kVocabMismatch, "vocabulary " + a.vocab + " does not match the checkpoint");
    }
    std::optional<AdapterSet> adapters;
    DeltaMap deltas;
    if (!a.adapters.empty()) {
        adapters = load_adapters(a.adapters, ck.model.config);
        deltas = adapters->deltas();
    }
    const auto examples =
        load_examples(load_manifest(a.manifest), ck.vocab, ck.mel, ck.model.config.max_source_frames, threads);
    const CorpusScore score = evaluate(ck.model, examples, ck.vocab, *seg, a.max_len, adapters ? &deltas : nullptr);
    if (!a.report.empty()) write_text(a.report, report_csv(score));
    out << summary_line(score) << '\n';
    return kExitOk;
}

struct TranscribeArgs {
    std::string checkpoint;
    std::string wav;
    std::string adapters;
    int max_len = 64;
};

int cmd_transcribe(const TranscribeArgs& a, std::ostream& out, std::ostream&) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    std::optional<AdapterSet> adapters;
    DeltaMap deltas;
    if (!a.adapters.empty()) {
        adapters = load_adapters(a.adapters, ck.model.config);
        deltas = adapters->deltas();
    }
    const LogMelSpectrogram spec = features_for(a.wav, ck.mel, ck.model.config.max_source_frames);
    const auto ids = greedy_transcribe(ck.model, spec, ck.vocab, a.max_len, adapters ? &deltas : nullptr);
    out << normalize_ja(ck.vocab.decode(ids)) << '\n';
    return kExitOk;
}

// --- augment preview ------------------------------------------------------------------------

struct PreviewArgs {
    std::string wav;
    std::string out_dir;
    std::uint64_t seed = 0;
    SpecAugmentConfig cfg;
    std::string fill = "mean";
};

std::string matrix_csv(const LogMelSpectrogram& s) {
    std::string out;
    char buf[32];
    for (int r = 0; r < s.n_mels; ++r) {
        for (int c = 0; c < s.n_frames; ++c) {
            std::snprintf(buf, sizeof buf, c == 0 ? "%.6g" : ",%.6g", static_cast<double>(s.at(r, c)));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

// 8-bit binary PGM, low frequencies at the bottom, grey levels from [lo, hi].
std::string matrix_pgm(const LogMelSpectrogram& s, float lo, float hi) {
    std::string out = "P5\n" + std::to_string(s.n_frames) + " " + std::to_string(s.n_mels) + "\n255\n";
    const float span = hi > lo ? hi - lo : 1.0f;
    for (int r = s.n_mels - 1; r >= 0; --r) {
        for (int c = 0; c < s.n_frames; ++c) {
            const float v = std::clamp((s.at(r, c) - lo) / span, 0.0f, 1.0f);
            out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
        }
    }
    return out;
}

int cmd_augment_preview(PreviewArgs a, std::ostream& out, std::ostream&) {
    if (a.fill == "mean") a.cfg.fill = MaskFill::kMean;
    else if (a.fill == "floor") a.cfg.fill = MaskFill::kFloor;
    else throw Error(ErrorKind::kInvalidArgument, "--fill expects mean or floor");
    const MelParams mel;
    const LogMelSpectrogram orig = features_for(a.wav, mel, std::nullopt);
    Rng rng(mix_seed(a.seed));
    const LogMelSpectrogram aug = spec_augment(orig, a.cfg, rng);
    const auto [lo, hi] = std::minmax_element(orig.data.begin(), orig.data.end());
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    write_text(dir / "original.csv", matrix_csv(orig));
    write_text(dir / "augmented.csv", matrix_csv(aug));
    write_text(dir / "original.pgm", matrix_pgm(orig, *lo, *hi));
    write_text(dir / "augmented.pgm", matrix_pgm(aug, *lo, *hi));
    std::size_t changed = 0;
    for (std::size_t i = 0; i < orig.data.size(); ++i) changed += orig.data[i] != aug.data[i] ? 1 : 0;
    out << "masked cells " << changed << " of " << orig.data.size() << '\n';
    return kExitOk;
}

// --- synth --------------------------------------------------------------------------------------

struct SynthArgs {
    int n = 8;
    std::string out_dir;
    std::uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
    const auto entries = synth_corpus(a.n, a.seed, a.out_dir);
    out << entries.size() << " clips written to " << (fs::path(a.out_dir) / "manifest.jsonl").string() << '\n';
    return kExitOk;
}

int exit_code_for(const Error& e) {
    return e.kind() == ErrorKind::kDivergence || e.kind() == ErrorKind::kNumerical ? kExitNumerical : kExitInput;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"kasr: toy-scale Japanese ASR fine-tuning toolkit", "kasr"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads for feature extraction")->check(CLI::PositiveNumber);

    PrepareArgs prep;
    auto* c_prep = app.add_subcommand("prepare", "filter, split and build a vocabulary from a manifest");
    c_prep->add_option("manifest", prep.manifest, "input JSONL manifest")->required();
    c_prep->add_option("out_dir", prep.out_dir, "output directory")->required();
    c_prep->add_option("--seed", prep.seed, "shuffle seed");
    c_prep->add_option("--ratios", prep.ratios, "train,val,test ratios");
    c_prep->add_flag("--skip-audio-check", prep.skip_audio, "trust duration_s instead of reading audio");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "end-to-end training from a run config");
    c_train->add_option("config", tr.config, "run config file")->required();
    c_train->add_flag("--dry-run", tr.dry_run, "validate, build and report parameter counts only");

    TrainArgs lo;
    auto* c_lora = app.add_subcommand("finetune-lora", "LoRA fine-tuning from a run config");
    c_lora->add_option("config", lo.config, "run config file")->required();
    c_lora->add_flag("--dry-run", lo.dry_run, "validate, build and report parameter counts only");

    SweepArgs sw;
    auto* c_sweep = app.add_subcommand("sweep-ranks", "one LoRA run per rank");
    c_sweep->add_option("config", sw.config, "run config file")->required();
    c_sweep->add_option("--ranks", sw.ranks, "comma-separated ranks, e.g. 64,128,256")->required();

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "score a checkpoint on a manifest");
    c_eval->add_option("checkpoint", ev.checkpoint, "model checkpoint")->required();
    c_eval->add_option("manifest", ev.manifest, "JSONL manifest")->required();
    c_eval->add_option("--segmenter", ev.segmenter, "whitespace or script");
    c_eval->add_option("--adapters", ev.adapters, "adapter checkpoint to apply");
    c_eval->add_option("--vocab", ev.vocab, "vocabulary that must match the checkpoint");
    c_eval->add_option("--report", ev.report, "per-utterance CSV path (empty to skip)");
    c_eval->add_option("--max-len", ev.max_len, "decode length cap")->check(CLI::PositiveNumber);

    TranscribeArgs tc;
    auto* c_tc = app.add_subcommand("transcribe", "greedy transcription of one WAV file");
    c_tc->add_option("checkpoint", tc.checkpoint, "model checkpoint")->required();
    c_tc->add_option("wav", tc.wav, "input WAV")->required();
    c_tc->add_option("--adapters", tc.adapters, "adapter checkpoint to apply");
    c_tc->add_option("--max-len", tc.max_len, "decode length cap")->check(CLI::PositiveNumber);

    PreviewArgs pv;
    auto* c_pv = app.add_subcommand("augment-preview", "write a spectrogram before and after SpecAugment");
    c_pv->add_option("wav", pv.wav, "input WAV")->required();
    c_pv->add_option("out_dir", pv.out_dir, "output directory")->required();
    c_pv->add_option("--seed", pv.seed, "mask seed");
    c_pv->add_option("--freq-masks", pv.cfg.n_freq_masks, "number of frequency masks");
    c_pv->add_option("--max-freq-width", pv.cfg.max_freq_width, "widest frequency mask (bins)");
    c_pv->add_option("--time-masks", pv.cfg.n_time_masks, "number of time masks");
    c_pv->add_option("--max-time-width", pv.cfg.max_time_width, "widest time mask (frames)");
    c_pv->add_option("--fill", pv.fill, "mean or floor");

    SynthArgs sy;
    auto* c_sy = app.add_subcommand("synth", "generate the synthetic tone corpus");
    c_sy->add_option("n", sy.n, "number of clips")->required()->check(CLI::PositiveNumber);
    c_sy->add_option("out_dir", sy.out_dir, "output directory")->required();
    c_sy->add_option("--seed", sy.seed, "corpus seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*c_prep) return cmd_prepare(prep, out, err);
        if (*c_train) return cmd_train(tr, TrainMode::kE2E, threads, out, err);
        if (*c_lora) return cmd_train(lo, TrainMode::kLora, threads, out, err);
        if (*c_sweep) return cmd_sweep(sw, threads, out, err);
        if (*c_eval) return cmd_evaluate(ev, threads, out, err);
        if (*c_tc) return cmd_transcribe(tc, out, err);
        if (*c_pv) return cmd_augment_preview(pv, out, err);
        if (*c_sy) return cmd_synth(sy, out, err);
    } catch (const Error& e) {
        err << "kasr: " << to_string(e.kind()) << ": " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "kasr: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}

}  // namespace kasr::cli
