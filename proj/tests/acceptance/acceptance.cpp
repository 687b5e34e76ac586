// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion. `--only N` runs a single one.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "grad_cases.hpp"
#include "kasr/augment.hpp"
#include "kasr/error.hpp"
#include "kasr/lora.hpp"
#include "kasr/metrics.hpp"
#include "kasr/text.hpp"
#include "kasr/trainer.hpp"
#include "oracles.hpp"

namespace kasr {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, const char* fmt = "%.3g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

// --- fixtures -------------------------------------------------------------------------------

const testing::SynthFixture& corpus() {
    static const testing::SynthFixture f = testing::synth_fixture("acceptance_corpus", 8, 7);
    return f;
}

TrainConfig overfit_config() {
    TrainConfig c;
    c.steps = 300;
    c.batch_size = 8;
    c.lr_peak = 3e-3;
    c.weight_decay = 0.0;
    c.seed = 7;
    c.eval_every = 50;
    c.spec_augment = SpecAugmentConfig::disabled();
    c.max_decode_len = 16;
    c.log_wall_time = false;
    return c;
}

TrainConfig lora_config(int rank) {
    TrainConfig c = overfit_config();
    c.mode = TrainMode::kLora;
    c.lora.rank = rank;
    c.lr_peak = 3e-2;
    return c;
}

Model toy_model(std::uint64_t seed) {
    Rng rng(seed);
    return build(testing::toy_config(corpus().data.vocab.size()), rng);
}

LogMelSpectrogram random_features(const ModelConfig& c, std::uint32_t seed) {
    LogMelSpectrogram s;
    s.n_mels = c.n_mels;
    s.n_frames = c.max_source_frames;
    s.data.resize(static_cast<std::size_t>(s.n_mels) * s.n_frames);
    std::mt19937 gen(seed);
    std::normal_distribution<float> nd(-4.0f, 1.0f);
    for (auto& v : s.data) v = nd(gen);
    return s;
}

float max_abs_diff(const ad::Tensor<float>& a, const ad::Tensor<float>& b) {
    if (a.data.size() != b.data.size()) return std::numeric_limits<float>::infinity();
    float d = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
    return d;
}

template <class F>
std::optional<ErrorKind> kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

// --- criteria -------------------------------------------------------------------------------

Outcome gradients() {
    Outcome o;
    const auto t0 = Clock::now();
    int cases = 0;
    double worst = 0.0;
    for (const auto& op : testing::grad_case_ops()) {
        int passed = 0;
        for (const auto& c : testing::grad_cases(op, 20, 2026)) {
            const auto r = ad::grad_check<double>(c.f, c.x, 1e-3, 1e-4);
            ++cases;
            worst = std::max(worst, r.max_rel_error);
            if (r.passed) ++passed;
            else o.require(false, op + " " + c.what + " rel " + num(r.max_rel_error));
        }
        o.require(passed >= 20, op + " has only " + std::to_string(passed) + " passing shapes");
    }
    const double secs = seconds_since(t0);
    o.require(secs < 120.0, "took " + num(secs) + " s");
    if (o.pass) o.detail = std::to_string(cases) + " cases, worst rel " + num(worst) + ", " + num(secs) + " s";
    return o;
}

Outcome edit_distance() {
    Outcome o;
    const auto t0 = Clock::now();
    std::vector<std::string> all{""};
    for (std::size_t begin = 0, len = 1; len <= 4; ++len) {
        const std::size_t end = all.size();
        for (std::size_t i = begin; i < end; ++i)
            for (char c : std::string("abc")) all.push_back(all[i] + c);
        begin = end;
    }
    std::size_t pairs = 0, bad = 0;
    for (const auto& r : all)
        for (const auto& h : all) {
            ++pairs;
            const auto c = edit_counts<char>(std::span<const char>(r), std::span<const char>(h));
            if (static_cast<int>(c.errors()) != testing::brute_edit_distance(r, h)) ++bad;
        }
    const double secs = seconds_since(t0);
    o.require(bad == 0, std::to_string(bad) + " disagreements");
    o.require(secs < 60.0, "took " + num(secs) + " s");
    if (o.pass) o.detail = std::to_string(pairs) + " pairs, " + num(secs) + " s";
    return o;
}

Outcome rate_fixtures() {
    Outcome o;
    const double c = cer("こんにちは", "こんにちわ");
    const double w = wer("a b c", "a x c", WhitespaceSegmenter{});
    o.require(c == 0.2, "cer " + num(c, "%.17g"));
    o.require(w == 1.0 / 3.0, "wer " + num(w, "%.17g"));
    if (o.pass) o.detail = "cer 0.2, wer 1/3";
    return o;
}

Outcome normalization() {
    Outcome o;
    const std::vector<std::pair<std::string, std::string>> fixtures{
        {"ＡＢＣ１２３", "abc123"},     {"ｶﾀｶﾅ", "カタカナ"},         {"ｶﾞｷﾞ", "ガギ"},
        {"こんにちは、世界。", "こんにちは世界"}, {"「テスト」・！？", "テスト"}, {"全角　スペース a b", "全角スペースab"},
        {"Hello, World!", "helloworld"}};
    for (const auto& [in, want] : fixtures) {
        const auto got = normalize_ja(in);
        o.require(got == want, "'" + in + "' -> '" + got + "'");
    }
    std::mt19937 gen(4242);
    std::uniform_int_distribution<int> len(0, 24), bucket(0, 3);
    std::uniform_int_distribution<char32_t> any(0x20, 0x2FFFF), cjk(0x3000, 0x30FF), wide(0xFF00, 0xFFEF),
        ascii(0x20, 0x7E);
    int broken = 0;
    for (int i = 0; i < 1000; ++i) {
        std::u32string s;
        const int n = len(gen);
        while (static_cast<int>(s.size()) < n) {
            const int b = bucket(gen);
            const char32_t cp = b == 0 ? any(gen) : b == 1 ? cjk(gen) : b == 2 ? wide(gen) : ascii(gen);
            if (cp < 0xD800 || cp > 0xDFFF) s.push_back(cp);
        }
        const auto once = normalize_ja(u32_to_utf8(s));
        if (normalize_ja(once) != once) ++broken;
    }
    o.require(broken == 0, std::to_string(broken) + " of 1000 not idempotent");
    if (o.pass) o.detail = std::to_string(fixtures.size()) + " fixtures, 1000 strings idempotent";
    return o;
}

Outcome lora_identity_and_merge() {
    Outcome o;
    const Model base = toy_model(11);
    LoraConfig cfg;
    cfg.rank = 8;
    cfg.targets = {"q", "k", "v", "o", "fc1", "fc2"};
    Rng rng(12);
    AdaptedModel am = inject(base, cfg, rng);
    const std::vector<int> toks{Vocabulary::kSot, 4, 5, 6, 7};

    float identity = 0.0f;
    {
        const auto deltas = am.adapters.deltas();
        for (std::uint32_t s = 0; s < 10; ++s) {
            const auto f = random_features(base.config, s);
            const auto ref = decode(base, toks, encode(base, f));
            identity = std::max(identity, max_abs_diff(decode(am.base, toks, encode(am.base, f, &deltas), &deltas), ref));
        }
    }
    o.require(identity <= 1e-6f, "post-injection deviation " + num(identity));

    std::mt19937 gen(13);
    std::normal_distribution<float> nd(0.0f, 0.05f);
    for (auto& [name, p] : am.adapters.pairs)
        for (auto& v : p.b.data) v = nd(gen);
    const auto deltas = am.adapters.deltas();
    std::vector<ad::Tensor<float>> adapted;
    for (std::uint32_t s = 0; s < 10; ++s) {
        const auto f = random_features(base.config, 100 + s);
        adapted.push_back(decode(am.base, toks, encode(am.base, f, &deltas), &deltas));
    }

    // Frozen base: every base tensor either receives no gradient or an all-zero one.
    {
        ad::Graph<float> g;
        ForwardOptions fo;
        fo.deltas = &deltas;
        const auto f = random_features(base.config, 7);
        const auto x = g.constant(ad::Tensor<float>({1, 80, static_cast<std::size_t>(base.config.max_source_frames)}, f.data));
        const std::vector<int> tgt{4, 5, 6, 7, Vocabulary::kEot};
        const auto logits = decode(g, am.base, toks, 1, toks.size(), encode(g, am.base, x, fo), fo);
        g.backward(ad::cross_entropy(logits, std::span<const int>(tgt), Vocabulary::kPad));
        std::size_t nonzero = 0;
        for (const auto& [name, t] : am.base.params)
            if (const auto* gr = g.param_grad(t))
                for (float v : *gr) nonzero += v != 0.0f ? 1 : 0;
        o.require(nonzero == 0, std::to_string(nonzero) + " non-zero frozen gradient entries");
        std::size_t missing = 0;
        for (const auto& [name, p] : am.adapters.pairs) missing += g.param_grad(p.b) == nullptr ? 1 : 0;
        o.require(missing == 0, std::to_string(missing) + " adapters without gradient");
    }

    const Model merged = merge(am);
    float merge_dev = 0.0f;
    for (std::uint32_t s = 0; s < 10; ++s) {
        const auto f = random_features(base.config, 100 + s);
        merge_dev = std::max(merge_dev, max_abs_diff(decode(merged, toks, encode(merged, f)), adapted[s]));
    }
    o.require(merge_dev <= 1e-5f, "merge deviation " + num(merge_dev));
    if (o.pass) o.detail = "identity " + num(identity) + ", merge " + num(merge_dev) + ", frozen grads zero";
    return o;
}

Outcome lora_accounting() {
    Outcome o;
    const auto tiny = ModelConfig::preset("tiny");
    LoraConfig qv;
    qv.rank = 64;
    qv.targets = {"q", "v"};
    const std::size_t n = lora_parameter_count(tiny, qv);
    o.require(tiny.enc_layers == 4 && tiny.dec_layers == 4 && tiny.d_model == 384, "tiny preset shape");
    o.require(n == 1179648u, "count " + std::to_string(n));
    Rng rng(1);
    const Model base = build(tiny, rng);
    double prev = 0.0;
    std::string fracs;
    for (int r : {2, 4, 8}) {
        LoraConfig c = qv;
        c.rank = r;
        const AdaptedModel am = inject(base, c, rng);
        const double f = trainable_fraction(am);
        o.require(f > prev, "fraction not increasing at r=" + std::to_string(r));
        o.require(trainable_count(am) == lora_parameter_count(tiny, c), "trainable count at r=" + std::to_string(r));
        fracs += (fracs.empty() ? "" : " < ") + num(f, "%.6f");
        prev = f;
    }
    if (o.pass) o.detail = "1179648 adapter params; fractions " + fracs;
    return o;
}

struct OverfitRun {
    double train_cer = 1.0;
    double seconds = 0.0;
    std::string log_csv;
    std::string checkpoint;
};

OverfitRun run_e2e(const std::string& tag) {
    const auto& f = corpus();
    Model m = toy_model(7);
    const auto t0 = Clock::now();
    const auto res = train(m, f.data, overfit_config());
    OverfitRun out;
    out.seconds = seconds_since(t0);
    const auto seg = make_segmenter("script");
    out.train_cer = evaluate(m, f.data.train, f.data.vocab, *seg, 16).cer;
    out.log_csv = res.log.to_csv();
    const auto path = testing::fresh_dir("acceptance_" + tag) / "model.kasr";
    save_checkpoint(path, m, f.data.vocab, f.mel);
    out.checkpoint = testing::slurp(path);
    return out;
}

double lora_best_cer(int rank, double* train_cer = nullptr) {
    const auto& f = corpus();
    Rng rng(7);
    AdaptedModel am = inject(toy_model(7), lora_config(rank).lora, rng);
    const auto res = train(am, f.data, lora_config(rank));
    if (train_cer != nullptr) {
        const auto deltas = am.adapters.deltas();
        const auto seg = make_segmenter("script");
        *train_cer = evaluate(am.base, f.data.train, f.data.vocab, *seg, 16, &deltas).cer;
    }
    return res.best_eval_cer;
}

Outcome overfit() {
    Outcome o;
    const auto e2e = run_e2e("overfit");
    o.require(e2e.train_cer == 0.0, "E2E train CER " + num(e2e.train_cer));
    o.require(e2e.seconds < 600.0, "E2E took " + num(e2e.seconds) + " s");
    double lora_cer = 1.0;
    lora_best_cer(8, &lora_cer);
    o.require(lora_cer <= 0.1, "LoRA r=8 train CER " + num(lora_cer));
    if (o.pass) {
        o.detail = "E2E train CER 0 in " + num(e2e.seconds, "%.0f") + " s; LoRA r=8 train CER " + num(lora_cer);
    }
    return o;
}

Outcome reproducibility() {
    Outcome o;
    const auto a = run_e2e("repro_a");
    const auto b = run_e2e("repro_b");
    o.require(a.log_csv == b.log_csv, "train logs differ");
    o.require(a.checkpoint == b.checkpoint, "checkpoints differ");
    if (o.pass) o.detail = "logs and checkpoints byte-identical (" + std::to_string(a.checkpoint.size()) + " bytes)";
    return o;
}

Outcome spec_augment_stats() {
    Outcome o;
    const SpecAugmentConfig cfg{2, 27, 2, 40, MaskFill::kMean};
    const auto s = testing::random_spec(80, 200, 9);
    const double sim = testing::simulated_fraction(cfg, 80, 200, 40000);
    Rng rng(mix_seed(9));
    double acc = 0.0;
    for (int i = 0; i < 1000; ++i) acc += double(testing::changed_cells(s, spec_augment(s, cfg, rng))) / s.data.size();
    const double mc = acc / 1000.0;
    o.require(std::abs(mc - sim) <= 0.1 * sim, "MC " + num(mc) + " vs simulated " + num(sim));
    const double closed = expected_masked_fraction(cfg, 80, 200);
    o.require(std::abs(closed - sim) <= 0.1 * sim, "closed form " + num(closed) + " vs simulated " + num(sim));
    const auto none = spec_augment(s, SpecAugmentConfig::disabled(), rng);
    o.require(none.data == s.data, "disabled config changed data");
    const auto zero_width = spec_augment(s, SpecAugmentConfig{2, 0, 2, 0, MaskFill::kFloor}, rng);
    o.require(zero_width.data == s.data, "zero-width masks changed data");
    if (o.pass) o.detail = "MC " + num(mc, "%.4f") + " vs simulated " + num(sim, "%.4f") + "; zero masks no-op";
    return o;
}

Outcome checkpoint_round_trip() {
    Outcome o;
    const auto dir = testing::fresh_dir("acceptance_ckpt");
    const Model m = toy_model(21);
    save_checkpoint(dir / "a.kasr", m, corpus().data.vocab, corpus().mel);
    const auto ck = load_checkpoint(dir / "a.kasr");
    save_checkpoint(dir / "b.kasr", ck.model, ck.vocab, ck.mel);
    const std::string good = testing::slurp(dir / "a.kasr");
    o.require(good == testing::slurp(dir / "b.kasr"), "save-load-save not byte-identical");

    std::uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i) hlen |= std::uint32_t(static_cast<unsigned char>(good[8 + i])) << (8 * i);
    const std::size_t begin = 12 + hlen, end = good.size();
    std::mt19937_64 gen(10);
    int caught = 0, trials = 0;
    for (; trials < 64; ++trials) {
        std::string bytes = good;
        const std::size_t at = std::uniform_int_distribution<std::size_t>(begin, end - 1)(gen);
        bytes[at] = static_cast<char>(bytes[at] ^ (1 << (trials % 8)));
        std::ofstream(dir / "x.kasr", std::ios::binary) << bytes;
        if (kind_of([&] { load_checkpoint(dir / "x.kasr"); }) == ErrorKind::kChecksum) ++caught;
    }
    o.require(caught == trials, std::to_string(trials - caught) + " payload corruptions slipped through");
    if (o.pass) o.detail = "round trip identical; " + std::to_string(caught) + "/" + std::to_string(trials) + " flips caught";
    return o;
}

Outcome causality_and_padding() {
    Outcome o;
    const Model m = toy_model(31);
    const auto lat = encode(m, random_features(m.config, 3));
    std::mt19937 gen(32);
    const int v = m.config.vocab_size;
    std::uniform_int_distribution<int> tok(4, v - 1);
    std::size_t leaks = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> a(m.config.max_target_len), b;
        a[0] = Vocabulary::kSot;
        for (std::size_t i = 1; i < a.size(); ++i) a[i] = tok(gen);
        const std::size_t j = 1 + trial % (a.size() - 1);
        b = a;
        for (std::size_t i = j + 1; i < b.size(); ++i) b[i] = tok(gen);
        const auto la = decode(m, a, lat), lb = decode(m, b, lat);
        for (std::size_t p = 0; p <= j; ++p)
            for (int k = 0; k < v; ++k) leaks += la.data[p * v + k] != lb.data[p * v + k] ? 1 : 0;
    }
    o.require(leaks == 0, std::to_string(leaks) + " logits changed by future tokens");

    const auto& f = corpus();
    std::vector<const Example*> xs;
    for (const auto& e : f.data.train) xs.push_back(&e);
    Batch batch = make_batch(xs);
    ad::Graph<float> g1;
    const float before = batch_loss(g1, m, batch).value()[0];
    int pads = 0;
    for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
        if (batch.mask[i] == 0 && i % batch.len != 0) {
            batch.inputs[i] = tok(gen);
            ++pads;
        }
    }
    ad::Graph<float> g2;
    const float after = batch_loss(g2, m, batch).value()[0];
    o.require(pads > 0, "fixture has no pad positions");
    o.require(before == after, "loss moved from " + num(before, "%.9g") + " to " + num(after, "%.9g"));
    if (o.pass) o.detail = "causal; loss unchanged after rewriting " + std::to_string(pads) + " pad tokens";
    return o;
}

Outcome split_contract() {
    Outcome o;
    std::vector<ManifestEntry> es(10);
    for (int i = 0; i < 10; ++i) {
        es[i].id = "utt" + std::to_string(i);
        es[i].audio = "/data/" + es[i].id + ".wav";
        es[i].text = "あ";
    }
    const auto s = split(es, {0.8, 0.1, 0.1}, 123);
    o.require(s.train.size() == 8 && s.val.size() == 1 && s.test.size() == 1, "sizes " + std::to_string(s.train.size()) +
                                                                                  "/" + std::to_string(s.val.size()) + "/" +
                                                                                  std::to_string(s.test.size()));
    const auto again = split(es, {0.8, 0.1, 0.1}, 123);
    o.require(again.train == s.train && again.val == s.val && again.test == s.test, "not deterministic");
    std::set<std::string> ids;
    std::size_t total = 0;
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (const auto& e : *part) {
            ids.insert(e.id);
            ++total;
        }
    o.require(total == 10 && ids.size() == 10, "not disjoint and exhaustive");
    if (o.pass) o.detail = "8/1/1, deterministic, disjoint, exhaustive";
    return o;
}

Outcome rank_trend() {
    Outcome o;
    std::vector<double> best;
    std::string row;
    for (int r : {2, 8, 32}) {
        best.push_back(lora_best_cer(r));
        row += (row.empty() ? "" : ", ") + ("r=" + std::to_string(r) + " " + num(best.back(), "%.3f"));
    }
    for (std::size_t i = 1; i < best.size(); ++i) o.require(best[i] <= best[i - 1], "strict increase: " + row);
    if (o.pass) o.detail = "best eval CER " + row;
    return o;
}

}  // namespace
}  // namespace kasr

int main(int argc, char** argv) {
    CLI::App app{"kasr acceptance checks"};
    int only = 0;
    app.add_option("--only", only, "run a single criterion")->check(CLI::Range(1, 13));
    CLI11_PARSE(app, argc, argv);

    using namespace kasr;
    const std::vector<std::function<Outcome()>> criteria{
        gradients,       edit_distance,      rate_fixtures,      normalization,          lora_identity_and_merge,
        lora_accounting, overfit,            reproducibility,    spec_augment_stats,     checkpoint_round_trip,
        causality_and_padding, split_contract, rank_trend};

    int failures = 0;
    for (int i = 1; i <= 13; ++i) {
        if (only != 0 && only != i) continue;
        Outcome o;
        try {
            o = criteria[i - 1]();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        std::printf("criterion %d: %s %s\n", i, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
