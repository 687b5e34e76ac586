// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "kasr/error.hpp"

namespace kasr {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

void TrainConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw Error(ErrorKind::kConfig, what);
    };
    need(steps > 0, "train.steps must be > 0");
    need(batch_size > 0, "train.batch_size must be > 0");
    need(grad_accum > 0, "train.grad_accum must be > 0");
    need(lr_peak > 0.0, "train.lr must be > 0");
    need(warmup_frac >= 0.0 && warmup_frac < 1.0, "train.warmup_frac must be in [0, 1)");
    need(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    need(eval_every >= 0, "train.eval_every must be >= 0");
    need(early_stop_patience >= 0, "train.early_stop_patience must be >= 0");
    need(dropout >= 0.0 && dropout < 1.0, "train.dropout must be in [0, 1)");
    need(max_decode_len > 0, "train.max_decode_len must be > 0");
    if (mode == TrainMode::kLora) lora.validate();
    wave_augment.validate();
    make_segmenter(segmenter);
}

double lr_at(int step, const TrainConfig& cfg) {
    const double total = cfg.steps;
    const double warm = cfg.warmup_frac * total;
    const double s = std::clamp(static_cast<double>(step), 0.0, total);
    if (s <= warm) return warm > 0.0 ? cfg.lr_peak * (s / warm) : cfg.lr_peak;
    return cfg.lr_peak * (total - s) / (total - warm);
}

// --- logs --------------------------------------------------------------------------

namespace {

std::string num(double v, const char* f = "%.9g") {
    char buf[40];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

std::string TrainLog::to_csv() const {
    std::ostringstream os;
    os << "step,split,loss,wer,cer,lr,wall_time_s\n";
    for (const auto& r : rows) {
        os << r.step << ',' << r.split << ',' << num(r.loss) << ',' << (r.wer ? num(*r.wer) : "") << ','
           << (r.cer ? num(*r.cer) : "") << ',' << num(r.lr) << ',' << num(r.wall_time_s, "%.3f") << '\n';
    }
    return os.str();
}

void TrainLog::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kUnreadableFile, "cannot write " + path.string());
    out << to_csv();
}

// --- parameters and gradients ---------------------------------------------------------

bool decays(const std::string& name, const Shape& shape) {
    return shape.size() == 2 && name != "token_embed" && name != "dec.pos_embed";
}

std::vector<TrainableParam> trainable_params(Model& model, AdapterSet* adapters) {
    std::vector<TrainableParam> out;
    for (auto& [name, t] : model.params) {
        if (t.requires_grad) out.push_back({name, &t, decays(name, t.shape)});
    }
    if (adapters != nullptr) {
        for (auto& [name, p] : adapters->pairs) {
            if (p.a.requires_grad) out.push_back({name + ".lora_a", &p.a, decays(name, p.a.shape)});
            if (p.b.requires_grad) out.push_back({name + ".lora_b", &p.b, decays(name, p.b.shape)});
        }
    }
    return out;
}

Var<float> batch_loss(Graph<float>& g, const Model& model, const Batch& batch, const ForwardOptions& opts) {
    Var<float> feats = g.constant(Tensor<float>(Shape{batch.size, batch.n_mels, batch.frames}, batch.features));
    Var<float> latents = encode(g, model, feats, opts);
    Var<float> logits = decode(g, model, batch.inputs, batch.size, batch.len, latents, opts);
    return ad::cross_entropy(logits, std::span<const int>(batch.targets), Batch::kIgnore);
}

Gradients accumulate_gradients(const Model& model, std::span<const Batch> micro_batches,
                               std::span<const TrainableParam> params, const ForwardOptions& opts) {
    if (micro_batches.empty()) throw Error(ErrorKind::kInvalidArgument, "no micro-batches");
    Gradients out;
    out.grad.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) out.grad[i].assign(params[i].tensor->numel(), 0.0f);
    const float inv = 1.0f / static_cast<float>(micro_batches.size());
    for (const auto& b : micro_batches) {
        Graph<float> g;
        Var<float> loss = batch_loss(g, model, b, opts);
        g.backward(loss);
        out.loss += static_cast<double>(loss.value()[0]) / static_cast<double>(micro_batches.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto* pg = g.param_grad(*params[i].tensor);
            if (pg == nullptr) continue;
            auto& dst = out.grad[i];
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += (*pg)[j] * inv;
        }
    }
    return out;
}

void AdamW::step(std::span<const TrainableParam> params, const std::vector<std::vector<float>>& grads, double lr,
                 double weight_decay) {
    if (grads.size() != params.size()) throw Error(ErrorKind::kInvalidArgument, "gradient list does not match params");
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.tensor->numel(), 0.0f);
            v_.emplace_back(p.tensor->numel(), 0.0f);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].tensor->data;
        const auto& g = grads[i];
        auto& m = m_[i];
        auto& v = v_[i];
        const double shrink = params[i].decay ? lr * weight_decay : 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = static_cast<float>(b1_ * m[j] + (1.0 - b1_) * g[j]);
            v[j] = static_cast<float>(b2_ * v[j] + (1.0 - b2_) * static_cast<double>(g[j]) * g[j]);
            const double mh = m[j] / c1;
            const double vh = v[j] / c2;
            double x = w[j];
            x -= shrink * x;
            x -= lr * mh / (std::sqrt(vh) + eps_);
            w[j] = static_cast<float>(x);
        }
    }
}

// --- evaluation ------------------------------------------------------------------------

CorpusScore evaluate(const Model& model, std::span<const Example> examples, const Vocabulary& vocab,
                     const Segmenter& seg, int max_len, const DeltaMap* deltas) {
    if (examples.empty()) throw Error(ErrorKind::kInvalidArgument, "nothing to evaluate");
    if (vocab.size() > model.config.vocab_size) {
        throw Error(ErrorKind::kVocabMismatch, "vocabulary larger than the model's output layer");
    }
    std::vector<ScoredPair> pairs;
    pairs.reserve(examples.size());
    for (const auto& x : examples) {
        const auto ids = greedy_transcribe(model, x.features, vocab, max_len, deltas);
        pairs.push_back({x.id, x.text, vocab.decode(ids)});
    }
    return corpus_score(pairs, seg);
}

// --- training loop ---------------------------------------------------------------------

namespace {

class Sampler {
public:
    Sampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

    std::size_t next() {
        if (cursor_ == order_.size()) reshuffle();
        return order_[cursor_++];
    }

private:
    void reshuffle() {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        Rng rng(mix_seed(seed_ ^ (0x5eed0000ULL + epoch_++)));
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng() % i)]);
        cursor_ = 0;
    }

    std::size_t n_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

std::vector<std::vector<float>> snapshot(std::span<const TrainableParam> params) {
    std::vector<std::vector<float>> s;
    s.reserve(params.size());
    for (const auto& p : params) s.push_back(p.tensor->data);
    return s;
}

void restore(std::span<const TrainableParam> params, const std::vector<std::vector<float>>& s) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor->data = s[i];
}

double eval_loss(const Model& model, std::span<const Example> val, int batch_size, const ForwardOptions& opts) {
    double total = 0.0;
    for (std::size_t i = 0; i < val.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(val.size(), i + static_cast<std::size_t>(batch_size));
        std::vector<const Example*> xs;
        for (std::size_t j = i; j < end; ++j) xs.push_back(&val[j]);
        Graph<float> g;
        const Batch b = make_batch(xs);
        total += static_cast<double>(batch_loss(g, model, b, opts).value()[0]) * static_cast<double>(xs.size());
    }
    return total / static_cast<double>(val.size());
}

TrainResult run(Model& model, AdapterSet* adapters, const TrainData& data, const TrainConfig& cfg,
                const ProgressFn& progress) {
    cfg.validate();
    if (data.train.empty()) throw Error(ErrorKind::kInvalidArgument, "training split is empty");
    if (data.vocab.size() > model.config.vocab_size) {
        throw Error(ErrorKind::kVocabMismatch, "vocabulary larger than the model's output layer");
    }
    const auto params = trainable_params(model, adapters);
    if (params.empty()) throw Error(ErrorKind::kInvalidArgument, "nothing to train");

    const DeltaMap deltas = adapters != nullptr ? adapters->deltas() : DeltaMap{};
    Rng dropout_rng(mix_seed(cfg.seed ^ 0xd80900ULL));
    ForwardOptions fo;
    fo.deltas = adapters != nullptr ? &deltas : nullptr;
    fo.checkpoint_activations = cfg.checkpoint_activations;
    fo.dropout = cfg.dropout;
    fo.training = true;
    fo.rng = &dropout_rng;
    ForwardOptions eval_fo;
    eval_fo.deltas = fo.deltas;

    const auto seg = make_segmenter(cfg.segmenter);
    const bool augment = !cfg.spec_augment.is_noop() || cfg.wave_augment.enabled;
    Sampler sampler(data.train.size(), cfg.seed);
    AdamW opt;
    TrainResult res;
    res.best_eval_cer = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best;
    int bad_rounds = 0;
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&] {
        if (!cfg.log_wall_time) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    auto emit = [&](LogRow row) {
        res.log.rows.push_back(row);
        if (progress) progress(res.log.rows.back());
    };

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<Batch> micro;
        micro.reserve(static_cast<std::size_t>(cfg.grad_accum));
        for (int a = 0; a < cfg.grad_accum; ++a) {
            std::vector<const Example*> xs;
            for (int k = 0; k < cfg.batch_size; ++k) xs.push_back(&data.train[sampler.next()]);
            if (!augment) {
                micro.push_back(make_batch(xs));
                continue;
            }
            std::vector<LogMelSpectrogram> views;
            views.reserve(xs.size());
            for (std::size_t k = 0; k < xs.size(); ++k) {
                Rng r = item_rng(mix_seed(cfg.seed) + static_cast<std::uint64_t>(step),
                                 static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(cfg.batch_size) + k);
                LogMelSpectrogram f = xs[k]->features;
                if (cfg.wave_augment.enabled) {
                    const AudioClip aug = wave_augment(xs[k]->audio, cfg.wave_augment, r);
                    f = log_mel(pad_or_trim_samples(aug, xs[k]->audio.samples.size()), f.params);
                }
                views.push_back(spec_augment(f, cfg.spec_augment, r));
            }
            std::vector<const LogMelSpectrogram*> ptrs;
            for (const auto& v : views) ptrs.push_back(&v);
            micro.push_back(make_batch(xs, ptrs));
        }

        Gradients grads;
        try {
            grads = accumulate_gradients(model, micro, params, fo);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::kNumerical) throw;
            throw Error(ErrorKind::kDivergence, "diverged at step " + std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(grads.loss)) {
            throw Error(ErrorKind::kDivergence, "loss became non-finite at step " + std::to_string(step));
        }
        const double lr = lr_at(step, cfg);
        opt.step(params, grads.grad, lr, cfg.weight_decay);
        emit({step, "train", grads.loss, std::nullopt, std::nullopt, lr, wall()});
        res.steps_run = step;

        const bool eval_now = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps;
        if (!eval_now || data.val.empty()) continue;
        const double vloss = eval_loss(model, data.val, cfg.batch_size, eval_fo);
        const CorpusScore sc = evaluate(model, data.val, data.vocab, *seg, cfg.max_decode_len, eval_fo.deltas);
        emit({step, "eval", vloss, sc.wer, sc.cer, lr, wall()});
        if (sc.cer < res.best_eval_cer) {
            res.best_eval_cer = sc.cer;
            res.best_step = step;
            best = snapshot(params);
            bad_rounds = 0;
        } else if (cfg.early_stop_patience > 0 && ++bad_rounds >= cfg.early_stop_patience) {
            res.early_stopped = true;
            break;
        }
    }

    if (!best.empty()) {
        restore(params, best);
    } else {
        res.best_eval_cer = std::numeric_limits<double>::quiet_NaN();
        res.best_step = res.steps_run;
    }
    return res;
}

}  // namespace

TrainResult train(Model& model, const TrainData& data, const TrainConfig& cfg, const ProgressFn& progress) {
    if (cfg.mode != TrainMode::kE2E) throw Error(ErrorKind::kConfig, "LoRA mode needs an adapted model");
    return run(model, nullptr, data, cfg, progress);
}

TrainResult train(AdaptedModel& adapted, const TrainData& data, const TrainConfig& cfg, const ProgressFn& progress) {
    if (cfg.mode != TrainMode::kLora) throw Error(ErrorKind::kConfig, "E2E mode needs a plain model");
    for (const auto& [name, t] : adapted.base.params) {
        if (t.requires_grad) throw Error(ErrorKind::kInvalidArgument, "base tensor '" + name + "' is not frozen");
    }
    return run(adapted.base, &adapted.adapters, data, cfg, progress);
}

std::vector<RankRun> sweep_ranks(const Model& base, const TrainData& data, std::vector<int> ranks,
                                 const TrainConfig& cfg, const ProgressFn& progress) {
    if (ranks.empty()) throw Error(ErrorKind::kInvalidArgument, "rank list is empty");
    std::sort(ranks.begin(), ranks.end());
    ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
    std::vector<RankRun> out;
    for (int r : ranks) {
        TrainConfig c = cfg;
        c.mode = TrainMode::kLora;
        c.lora.rank = r;
        Rng rng(mix_seed(cfg.seed));
        AdaptedModel am = inject(base, c.lora, rng);
        RankRun run;
        run.rank = r;
        run.trainable = trainable_count(am);
        run.result = train(am, data, c, progress);
        run.best_eval_cer = run.result.best_eval_cer;
        out.push_back(std::move(run));
    }
    return out;
}

std::string sweep_summary_csv(std::span<const RankRun> runs) {
    std::ostringstream os;
    os << "rank,trainable_params,best_eval_cer\n";
    for (const auto& r : runs) os << r.rank << ',' << r.trainable << ',' << num(r.best_eval_cer, "%.6f") << '\n';
    return os.str();
}

}  // namespace kasr
