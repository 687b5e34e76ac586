// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "kasr/dataset.hpp"
#include "kasr/error.hpp"
#include "kasr/model.hpp"
#include "oracles.hpp"
#include "run_config.hpp"

namespace kasr {
namespace {

namespace fs = std::filesystem;
using testing::fresh_dir;
using testing::slurp;

struct Result {
    int code;
    std::string out, err;
};

Result kasr_run(std::vector<std::string> args) {
    args.insert(args.begin(), "kasr");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string write_config(const fs::path& dir, const std::string& extra) {
    const auto path = dir / "run.cfg";
    std::ofstream(path) << "# toy run\n"
                           "data.train = corpus/manifest.jsonl\n"
                           "data.val = corpus/manifest.jsonl\n"
                           "output_dir = out\n"
                           "model.d_model = 16\n"
                           "model.n_heads = 2\n"
                           "model.enc_layers = 1\n"
                           "model.dec_layers = 1\n"
                           "model.d_ff = 32\n"
                           "model.max_target_len = 8\n"
                           "model.max_source_frames = 160\n"
                           "train.steps = 2\n"
                           "train.batch_size = 2\n"
                           "train.eval_every = 1\n"
                           "train.max_decode_len = 8\n"
                           "train.log_wall_time = false\n"
                           "specaug.n_freq_masks = 0\n"
                           "specaug.n_time_masks = 0\n"
                        << extra;
    return path.string();
}

fs::path corpus_dir(const std::string& name, int n = 4) {
    const auto dir = fresh_dir(name);
    synth_corpus(n, 13, dir / "corpus");
    return dir;
}

TEST(Prepare, SplitsFiltersAndIsRepeatable) {
    const auto dir = fresh_dir("cli_prepare");
    auto es = synth_corpus(10, 3, dir / "c");
    ManifestEntry longer = es[0];
    longer.id = "long";
    longer.duration_s = 40.0;
    es.push_back(longer);
    save_manifest(dir / "all.jsonl", es);
    const auto r = kasr_run({"prepare", (dir / "all.jsonl").string(), (dir / "p1").string(), "--skip-audio-check"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, 22), "train 8 val 1 test 1 v");
    EXPECT_EQ(load_manifest(dir / "p1/all.train.jsonl").size(), 8u);
    EXPECT_EQ(load_manifest(dir / "p1/all.val.jsonl").size(), 1u);
    EXPECT_EQ(load_manifest(dir / "p1/all.test.jsonl").size(), 1u);
    const std::string report = slurp(dir / "p1/filter_report.txt");
    EXPECT_NE(report.find("kept: 10"), std::string::npos) << report;
    EXPECT_NE(report.find("too_long: 1"), std::string::npos) << report;
    EXPECT_NO_THROW(load_vocab(dir / "p1/vocab.json"));

    ASSERT_EQ(kasr_run({"prepare", (dir / "all.jsonl").string(), (dir / "p2").string(), "--skip-audio-check"}).code, 0);
    for (const char* f : {"all.train.jsonl", "all.val.jsonl", "all.test.jsonl", "vocab.json", "filter_report.txt"})
        EXPECT_EQ(slurp(dir / "p1" / f), slurp(dir / "p2" / f)) << f;
}

TEST(Prepare, MalformedManifestIsAnInputError) {
    const auto dir = fresh_dir("cli_prepare_bad");
    std::ofstream(dir / "m.jsonl") << "{\"id\": \"a\"\n";
    const auto r = kasr_run({"prepare", (dir / "m.jsonl").string(), (dir / "p").string()});
    EXPECT_EQ(r.code, cli::kExitInput);
    EXPECT_NE(r.err.find("m.jsonl:1:"), std::string::npos) << r.err;
    EXPECT_EQ(kasr_run({"prepare", (dir / "m.jsonl").string(), (dir / "p").string(), "--ratios", "0.5,0.5"}).code,
              cli::kExitInput);
}

TEST(RunConfig, LoraModeNeedsRankAndUnknownKeysAreNamed) {
    const auto dir = fresh_dir("cli_cfg");
    EXPECT_THROW(cli::parse_run_config("data.train = x\nmode = lora\n", dir), Error);
    try {
        cli::parse_run_config("data.train = x\nmode = lora\n", dir);
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("lora.rank"), std::string::npos);
    }
    try {
        cli::parse_run_config("data.train = x\nmodel.widht = 3\n", dir);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("model.widht"), std::string::npos) << e.what();
    }
    const auto rc = cli::parse_run_config("data.train = sub/m.jsonl\nlora.rank = 4\n", dir, {TrainMode::kLora, true});
    EXPECT_EQ(rc.train.mode, TrainMode::kLora);
    EXPECT_EQ(rc.train_manifest, dir / "sub/m.jsonl");
    EXPECT_THROW(cli::parse_run_config("data.train = x\nmode = e2e\n", dir, {TrainMode::kLora, true}), Error);
}

TEST(Train, DryRunAndShortRun) {
    const auto dir = corpus_dir("cli_train");
    const auto cfg = write_config(dir, "");
    auto r = kasr_run({"train", cfg, "--dry-run"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("dry run: 0 steps"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "out"));

    r = kasr_run({"train", cfg});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("train CER "), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("eval WER "), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(dir / "out/train_log.csv"));
    const auto ck = load_checkpoint(dir / "out/model.kasr");
    EXPECT_EQ(ck.model.config.d_model, 16);

    const std::string first = slurp(dir / "out/model.kasr");
    ASSERT_EQ(kasr_run({"train", cfg}).code, 0);
    EXPECT_EQ(slurp(dir / "out/model.kasr"), first);

    const auto ev = kasr_run({"evaluate", (dir / "out/model.kasr").string(), (dir / "corpus/manifest.jsonl").string(),
                              "--report", (dir / "report.csv").string()});
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_EQ(ev.out.substr(0, 4), "WER ");
    EXPECT_EQ(slurp(dir / "report.csv").substr(0, 12), "utterance_id");
}

TEST(Train, OverfitFixtureMemorisesItsCorpus) {
    const auto dir = fresh_dir("cli_overfit");
    const auto entries = synth_corpus(8, 7, dir / "corpus");
    std::ofstream(dir / "overfit.cfg") << "data.train = corpus/manifest.jsonl\n"
                                          "data.val = corpus/manifest.jsonl\n"
                                          "output_dir = out\n"
                                          "model.d_model = 64\n"
                                          "model.n_heads = 4\n"
                                          "model.enc_layers = 2\n"
                                          "model.dec_layers = 2\n"
                                          "model.d_ff = 256\n"
                                          "model.max_target_len = 16\n"
                                          "model.max_source_frames = 160\n"
                                          "train.steps = 200\n"
                                          "train.batch_size = 8\n"
                                          "train.lr = 0.003\n"
                                          "train.weight_decay = 0\n"
                                          "train.seed = 7\n"
                                          "train.eval_every = 50\n"
                                          "train.max_decode_len = 16\n"
                                          "specaug.n_freq_masks = 0\n"
                                          "specaug.n_time_masks = 0\n";
    const auto t = kasr_run({"train", (dir / "overfit.cfg").string()});
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_NE(t.out.find("train CER 0.000"), std::string::npos) << t.out;
    const auto ckpt = (dir / "out/model.kasr").string();
    const auto ev = kasr_run({"evaluate", ckpt, (dir / "corpus/manifest.jsonl").string(), "--report", ""});
    EXPECT_EQ(ev.out, "WER 0.00 CER 0.00\n") << ev.err;
    const auto tr = kasr_run({"transcribe", ckpt, entries[0].audio.string()});
    EXPECT_EQ(tr.out, entries[0].text + "\n");
}

TEST(Lora, MissingRankOrCheckpointAreInputErrors) {
    const auto dir = corpus_dir("cli_lora_bad");
    auto r = kasr_run({"finetune-lora", write_config(dir, "")});
    EXPECT_EQ(r.code, cli::kExitInput);
    EXPECT_NE(r.err.find("lora.rank"), std::string::npos) << r.err;
    r = kasr_run({"finetune-lora", write_config(dir, "lora.rank = 2\nbase_checkpoint = nowhere.kasr\n")});
    EXPECT_EQ(r.code, cli::kExitInput);
    r = kasr_run({"train", write_config(dir, "mode = lora\nlora.rank = 2\n")});
    EXPECT_EQ(r.code, cli::kExitInput);
}

TEST(Lora, FinetuneFromBaseWritesAdaptersAndMergedModel) {
    const auto dir = corpus_dir("cli_lora");
    ASSERT_EQ(kasr_run({"train", write_config(dir, "")}).code, 0);
    fs::rename(dir / "out", dir / "base");
    const auto cfg = write_config(dir, "lora.rank = 2\nbase_checkpoint = base/model.kasr\ntrain.lr = 0.01\n");
    auto r = kasr_run({"finetune-lora", cfg, "--dry-run"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find(" fraction "), std::string::npos);
    r = kasr_run({"finetune-lora", cfg});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "out/adapters.kasr"));
    EXPECT_TRUE(fs::exists(dir / "out/model.kasr"));

    const auto wav = load_manifest(dir / "corpus/manifest.jsonl")[0].audio.string();
    const auto with = kasr_run({"transcribe", (dir / "base/model.kasr").string(), wav, "--adapters",
                                (dir / "out/adapters.kasr").string()});
    const auto merged = kasr_run({"transcribe", (dir / "out/model.kasr").string(), wav});
    ASSERT_EQ(with.code, 0) << with.err;
    EXPECT_EQ(with.out, merged.out);

    std::ofstream(dir / "other_vocab.json") << R"(["ア","イ"])";
    const auto bad = write_config(dir, "lora.rank = 2\nbase_checkpoint = base/model.kasr\ndata.vocab = other_vocab.json\n");
    r = kasr_run({"finetune-lora", bad});
    EXPECT_EQ(r.code, cli::kExitInput) << r.err;
}

TEST(Sweep, RanksListIsValidated) {
    const auto dir = corpus_dir("cli_sweep");
    ASSERT_EQ(kasr_run({"train", write_config(dir, "")}).code, 0);
    fs::rename(dir / "out", dir / "base");
    const auto cfg = write_config(dir, "base_checkpoint = base/model.kasr\n");
    EXPECT_EQ(kasr_run({"sweep-ranks", cfg, "--ranks", ""}).code, cli::kExitInput);
    EXPECT_EQ(kasr_run({"sweep-ranks", cfg, "--ranks", "2,x"}).code, cli::kExitInput);
    const auto r = kasr_run({"sweep-ranks", cfg, "--ranks", "4,2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "rank,trainable_params,best_eval_cer");
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 3);
    EXPECT_EQ(slurp(dir / "out/sweep_summary.csv"), r.out);
    EXPECT_TRUE(fs::exists(dir / "out/rank_2.csv"));
    EXPECT_TRUE(fs::exists(dir / "out/rank_4.csv"));
}

TEST(Transcribe, BadInputsAndSilence) {
    const auto dir = corpus_dir("cli_transcribe", 2);
    const auto t = kasr_run({"train", write_config(dir, "")});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto ckpt = (dir / "out/model.kasr").string();
    std::ofstream(dir / "junk.wav") << "RIFF....WAVEjunk";
    EXPECT_EQ(kasr_run({"transcribe", ckpt, (dir / "junk.wav").string()}).code, cli::kExitInput);
    EXPECT_EQ(kasr_run({"transcribe", (dir / "none.kasr").string(), (dir / "junk.wav").string()}).code,
              cli::kExitInput);
    AudioClip silent;
    silent.samples.assign(16000, 0.0f);
    save_wav(dir / "silent.wav", silent);
    const auto r = kasr_run({"transcribe", ckpt, (dir / "silent.wav").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(kasr_run({"evaluate", ckpt, (dir / "corpus/manifest.jsonl").string(), "--vocab",
                        (dir / "missing_vocab.json").string()})
                  .code,
              cli::kExitInput);
}

TEST(AugmentPreview, DeterministicAndZeroMaskIsIdentity) {
    const auto dir = corpus_dir("cli_preview", 1);
    const auto wav = load_manifest(dir / "corpus/manifest.jsonl")[0].audio.string();
    auto a = kasr_run({"augment-preview", wav, (dir / "a").string(), "--seed", "4"});
    auto b = kasr_run({"augment-preview", wav, (dir / "b").string(), "--seed", "4"});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(slurp(dir / "a/augmented.csv"), slurp(dir / "b/augmented.csv"));
    EXPECT_EQ(slurp(dir / "a/augmented.pgm"), slurp(dir / "b/augmented.pgm"));
    EXPECT_NE(slurp(dir / "a/augmented.csv"), slurp(dir / "a/original.csv"));
    EXPECT_EQ(slurp(dir / "a/original.pgm").substr(0, 3), "P5\n");

    const auto z = kasr_run({"augment-preview", wav, (dir / "z").string(), "--freq-masks", "0", "--time-masks", "0"});
    ASSERT_EQ(z.code, 0);
    EXPECT_EQ(z.out.substr(0, 15), "masked cells 0 ");
    EXPECT_EQ(slurp(dir / "z/augmented.csv"), slurp(dir / "z/original.csv"));
    EXPECT_EQ(kasr_run({"augment-preview", wav, (dir / "f").string(), "--fill", "zero"}).code, cli::kExitInput);
}

TEST(Synth, WritesManifest) {
    const auto dir = fresh_dir("cli_synth");
    const auto r = kasr_run({"synth", "3", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_manifest(dir / "manifest.jsonl").size(), 3u);
    EXPECT_EQ(kasr_run({"synth", "0", dir.string()}).code, cli::kExitInput);
    EXPECT_EQ(kasr_run({"bogus"}).code, cli::kExitInput);
    EXPECT_EQ(kasr_run({"--help"}).code, 0);
}

}  // namespace
}  // namespace kasr
