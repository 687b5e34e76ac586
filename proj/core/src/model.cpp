// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "kasr/error.hpp"

namespace kasr {

using json = nlohmann::json;
using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// --- config ------------------------------------------------------------------

ModelConfig ModelConfig::preset(std::string_view name) {
    ModelConfig c;
    if (name == "tiny") {
        c.d_model = 384, c.n_heads = 6, c.enc_layers = 4, c.dec_layers = 4;
    } else if (name == "base") {
        c.d_model = 512, c.n_heads = 8, c.enc_layers = 6, c.dec_layers = 6;
    } else if (name == "small") {
        c.d_model = 768, c.n_heads = 12, c.enc_layers = 12, c.dec_layers = 12;
    } else {
        throw Error(ErrorKind::kConfig, "unknown model preset '" + std::string(name) + "'");
    }
    c.d_ff = 4 * c.d_model;
    return c;
}

void ModelConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorKind::kConfig, std::string("invalid model config: ") + what);
    };
    need(n_mels > 0 && d_model > 0 && n_heads > 0 && d_ff > 0, "dimensions must be positive");
    need(enc_layers > 0 && dec_layers > 0, "layer counts must be positive");
    need(vocab_size > Vocabulary::kNumSpecial, "vocab_size must exceed the special tokens");
    need(max_target_len > 0, "max_target_len must be positive");
    need(max_source_frames > 0 && max_source_frames % 2 == 0, "max_source_frames must be positive and even");
    need(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    need(d_model % 2 == 0, "d_model must be even for sinusoidal positions");
}

namespace {

json config_json(const ModelConfig& c) {
    return json{{"n_mels", c.n_mels},
                {"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"enc_layers", c.enc_layers},
                {"dec_layers", c.dec_layers},
                {"d_ff", c.d_ff},
                {"vocab_size", c.vocab_size},
                {"max_target_len", c.max_target_len},
                {"max_source_frames", c.max_source_frames}};
}

ModelConfig config_from(const json& j) {
    ModelConfig c;
    try {
        c.n_mels = j.at("n_mels").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.enc_layers = j.at("enc_layers").get<int>();
        c.dec_layers = j.at("dec_layers").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_target_len = j.at("max_target_len").get<int>();
        c.max_source_frames = j.at("max_source_frames").get<int>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::kMalformed, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

json mel_json(const MelParams& m) {
    return json{{"n_mels", m.n_mels}, {"n_fft", m.n_fft}, {"hop", m.hop},   {"win", m.win},
                {"sample_rate", m.sample_rate}, {"fmin", m.fmin}, {"fmax", m.fmax}, {"log_floor", m.log_floor}};
}

MelParams mel_from(const json& j) {
    MelParams m;
    try {
        m.n_mels = j.at("n_mels").get<int>();
        m.n_fft = j.at("n_fft").get<int>();
        m.hop = j.at("hop").get<int>();
        m.win = j.at("win").get<int>();
        m.sample_rate = j.at("sample_rate").get<int>();
        m.fmin = j.at("fmin").get<double>();
        m.fmax = j.at("fmax").get<double>();
        m.log_floor = j.at("log_floor").get<double>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::kMalformed, std::string("mel params: ") + e.what());
    }
    m.validate();
    return m;
}

}  // namespace

std::string ModelConfig::to_json() const { return config_json(*this).dump(); }

ModelConfig ModelConfig::from_json(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::kMalformed, "model config is not a JSON object");
    return config_from(j);
}

std::uint32_t ModelConfig::hash() const {
    const std::string s = to_json();
    return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

// --- parameters ----------------------------------------------------------------

const Tensor<float>& Model::at(const std::string& name) const {
    const auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorKind::kInvalidArgument, "missing parameter '" + name + "'");
    return it->second;
}

Tensor<float>& Model::at(const std::string& name) {
    return const_cast<Tensor<float>&>(std::as_const(*this).at(name));
}

namespace {

void add_linear(std::vector<std::pair<std::string, Shape>>& out, const std::string& p, std::size_t d_out,
                std::size_t d_in) {
    out.emplace_back(p + ".w", Shape{d_out, d_in});
    out.emplace_back(p + ".b", Shape{d_out});
}

void add_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& p, std::size_t d) {
    out.emplace_back(p + ".g", Shape{d});
    out.emplace_back(p + ".b", Shape{d});
}

void add_attention(std::vector<std::pair<std::string, Shape>>& out, const std::string& p, std::size_t d) {
    for (const char* t : {"q", "k", "v", "o"}) add_linear(out, p + "." + t, d, d);
}

bool is_norm_gain(const std::string& name) {
    return name.size() > 2 && name.ends_with(".g");
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
    c.validate();
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto ff = static_cast<std::size_t>(c.d_ff);
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("conv1.w", Shape{d, static_cast<std::size_t>(c.n_mels), 3});
    out.emplace_back("conv1.b", Shape{d});
    out.emplace_back("conv2.w", Shape{d, d, 3});
    out.emplace_back("conv2.b", Shape{d});
    for (int l = 0; l < c.enc_layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        add_norm(out, p + ".ln1", d);
        add_attention(out, p + ".attn", d);
        add_norm(out, p + ".ln2", d);
        add_linear(out, p + ".mlp.fc1", ff, d);
        add_linear(out, p + ".mlp.fc2", d, ff);
    }
    add_norm(out, "enc.final_ln", d);
    for (int l = 0; l < c.dec_layers; ++l) {
        const std::string p = "dec." + std::to_string(l);
        add_norm(out, p + ".ln1", d);
        add_attention(out, p + ".self_attn", d);
        add_norm(out, p + ".ln2", d);
        add_attention(out, p + ".cross_attn", d);
        add_norm(out, p + ".ln3", d);
        add_linear(out, p + ".mlp.fc1", ff, d);
        add_linear(out, p + ".mlp.fc2", d, ff);
    }
    out.emplace_back("dec.pos_embed", Shape{static_cast<std::size_t>(c.max_target_len), d});
    add_norm(out, "dec.final_ln", d);
    out.emplace_back("token_embed", Shape{static_cast<std::size_t>(c.vocab_size), d});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

std::size_t parameter_count(const ModelConfig& config) {
    std::size_t n = 0;
    for (const auto& [name, shape] : parameter_shapes(config)) n += ad::numel(shape);
    return n;
}

std::size_t parameter_count(const ParamMap& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

Model build(const ModelConfig& config, Rng& rng) {
    Model m;
    m.config = config;
    std::normal_distribution<float> normal(0.0f, 0.02f);
    // Initialise in map order so the draw sequence is independent of how the
    // shape table is assembled.
    for (const auto& [name, shape] : parameter_shapes(config)) {
        Tensor<float> t(shape, 0.0f);
        if (is_norm_gain(name)) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (shape.size() >= 2) {
            for (auto& v : t.data) v = normal(rng);
        }
        t.requires_grad = true;
        m.params.emplace(name, std::move(t));
    }
    return m;
}

std::vector<std::string> attention_blocks(const ModelConfig& c) {
    std::vector<std::string> out;
    for (int l = 0; l < c.enc_layers; ++l) out.push_back("enc." + std::to_string(l) + ".attn");
    for (int l = 0; l < c.dec_layers; ++l) {
        out.push_back("dec." + std::to_string(l) + ".self_attn");
        out.push_back("dec." + std::to_string(l) + ".cross_attn");
    }
    return out;
}

// --- forward -------------------------------------------------------------------

namespace {

constexpr float kLnEps = 1e-5f;

struct Fwd {
    Graph<float>& g;
    const Model& m;
    const ForwardOptions& o;

    Var<float> p(const std::string& name) const { return g.param(m.at(name)); }

    Var<float> maybe_dropout(Var<float> x, double rate) const {
        if (rate <= 0.0 || !o.training) return x;
        if (o.rng == nullptr) throw Error(ErrorKind::kInvalidArgument, "dropout requires a random source");
        return ad::dropout(x, rate, *o.rng);
    }

    Var<float> linear(Var<float> x, const std::string& prefix) const {
        const std::string wname = prefix + ".w";
        Var<float> y = ad::add(ad::matmul(x, ad::transpose(p(wname), 0, 1)), p(prefix + ".b"));
        if (o.deltas != nullptr) {
            const auto it = o.deltas->find(wname);
            if (it != o.deltas->end()) {
                const LowRankDelta& d = it->second;
                Var<float> xa = maybe_dropout(x, d.dropout);
                Var<float> u = ad::matmul(xa, ad::transpose(g.param(*d.a), 0, 1));
                Var<float> v = ad::matmul(u, ad::transpose(g.param(*d.b), 0, 1));
                y = ad::add(y, ad::mul_scalar(v, d.scale));
            }
        }
        return y;
    }

    Var<float> norm(Var<float> x, const std::string& prefix) const {
        return ad::layer_norm(x, p(prefix + ".g"), p(prefix + ".b"), kLnEps);
    }

    // x [B, L, d] -> [B, H, L, dh]
    Var<float> split_heads(Var<float> x) const {
        const auto& s = x.shape();
        const auto H = static_cast<std::size_t>(m.config.n_heads);
        return ad::transpose(ad::reshape(x, Shape{s[0], s[1], H, s[2] / H}), 1, 2);
    }

    Var<float> attention(Var<float> x, Var<float> kv, const std::string& prefix, bool causal) const {
        const auto& s = x.shape();
        Var<float> q = split_heads(linear(x, prefix + ".q"));
        Var<float> k = split_heads(linear(kv, prefix + ".k"));
        Var<float> v = split_heads(linear(kv, prefix + ".v"));
        const float scale = 1.0f / std::sqrt(static_cast<float>(m.config.head_dim()));
        Var<float> scores = ad::mul_scalar(ad::matmul(q, ad::transpose(k, 2, 3)), scale);
        Var<float> att = ad::softmax(scores, causal);
        Var<float> ctx = ad::transpose(ad::matmul(att, v), 1, 2);
        ctx = ad::reshape(ctx, Shape{s[0], s[1], s[2]});
        return linear(ctx, prefix + ".o");
    }

    Var<float> mlp(Var<float> x, const std::string& prefix) const {
        return linear(ad::gelu(linear(x, prefix + ".fc1")), prefix + ".fc2");
    }

    Var<float> encoder_block(Var<float> x, const std::string& p) const {
        Var<float> h = norm(x, p + ".ln1");
        x = ad::add(x, maybe_dropout(attention(h, h, p + ".attn", false), o.dropout));
        h = norm(x, p + ".ln2");
        return ad::add(x, maybe_dropout(mlp(h, p + ".mlp"), o.dropout));
    }

    Var<float> decoder_block(Var<float> x, Var<float> latents, const std::string& p) const {
        Var<float> h = norm(x, p + ".ln1");
        x = ad::add(x, maybe_dropout(attention(h, h, p + ".self_attn", true), o.dropout));
        h = norm(x, p + ".ln2");
        x = ad::add(x, maybe_dropout(attention(h, latents, p + ".cross_attn", false), o.dropout));
        h = norm(x, p + ".ln3");
        return ad::add(x, maybe_dropout(mlp(h, p + ".mlp"), o.dropout));
    }
};

bool any_dropout(const ForwardOptions& o) {
    if (!o.training) return false;
    if (o.dropout > 0.0) return true;
    if (o.deltas == nullptr) return false;
    return std::any_of(o.deltas->begin(), o.deltas->end(), [](const auto& kv) { return kv.second.dropout > 0.0; });
}

// Runs `block` directly or as a checkpointed segment. A checkpointed segment
// replays dropout from its own seed so the recompute sees the same masks.
template <class Block>
Var<float> run_block(Graph<float>& g, const Model& m, const ForwardOptions& o, std::vector<Var<float>> inputs,
                     Block block) {
    if (!o.checkpoint_activations) {
        Fwd f{g, m, o};
        return block(f, std::span<const Var<float>>(inputs));
    }
    const bool drop = any_dropout(o);
    if (drop && o.rng == nullptr) throw Error(ErrorKind::kInvalidArgument, "dropout requires a random source");
    const std::uint64_t seed = drop ? (*o.rng)() : 0;
    const Model* mp = &m;
    const ForwardOptions base = o;
    ad::SegmentFn<float> fn = [mp, base, seed, drop, block](Graph<float>& sg, std::span<const Var<float>> in) {
        Rng local(seed);
        ForwardOptions so = base;
        so.checkpoint_activations = false;
        so.rng = drop ? &local : nullptr;
        Fwd f{sg, *mp, so};
        return block(f, in);
    };
    return ad::checkpoint(g, std::move(inputs), std::move(fn));
}

}  // namespace

Var<float> encode(Graph<float>& g, const Model& model, Var<float> features, const ForwardOptions& opts) {
    const ModelConfig& c = model.config;
    const Shape& s = features.shape();
    if (s.size() != 3 || s[1] != static_cast<std::size_t>(c.n_mels) ||
        s[2] != static_cast<std::size_t>(c.max_source_frames)) {
        throw Error(ErrorKind::kShapeMismatch, "encoder expects [B, " + std::to_string(c.n_mels) + ", " +
                                                   std::to_string(c.max_source_frames) + "] features, got " +
                                                   ad::to_string(s));
    }
    Fwd f{g, model, opts};
    Var<float> x = ad::gelu(ad::conv1d(features, f.p("conv1.w"), f.p("conv1.b"), 1));
    x = ad::gelu(ad::conv1d(x, f.p("conv2.w"), f.p("conv2.b"), 2));
    x = ad::transpose(x, 1, 2);
    x = ad::add(x, ad::sinusoidal_positions(g, static_cast<std::size_t>(c.n_out_frames()),
                                            static_cast<std::size_t>(c.d_model)));
    for (int l = 0; l < c.enc_layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        x = run_block(g, model, opts, {x},
                      [p](const Fwd& ff, std::span<const Var<float>> in) { return ff.encoder_block(in[0], p); });
    }
    return f.norm(x, "enc.final_ln");
}

Var<float> decode(Graph<float>& g, const Model& model, std::span<const int> tokens, std::size_t batch, std::size_t len,
                  Var<float> latents, const ForwardOptions& opts) {
    const ModelConfig& c = model.config;
    if (len == 0 || len > static_cast<std::size_t>(c.max_target_len)) {
        throw Error(ErrorKind::kShapeMismatch, "decoder length " + std::to_string(len) + " outside [1, " +
                                                   std::to_string(c.max_target_len) + "]");
    }
    if (tokens.size() != batch * len) throw Error(ErrorKind::kShapeMismatch, "token count does not match [B, T]");
    const Shape& ls = latents.shape();
    if (ls.size() != 3 || ls[0] != batch || ls[2] != static_cast<std::size_t>(c.d_model)) {
        throw Error(ErrorKind::kShapeMismatch, "latents must be [B, S, d_model], got " + ad::to_string(ls));
    }
    for (int t : tokens) {
        if (t < 0 || t >= c.vocab_size) {
            throw Error(ErrorKind::kInvalidArgument, "token id " + std::to_string(t) + " outside vocabulary of size " +
                                                         std::to_string(c.vocab_size));
        }
    }
    Fwd f{g, model, opts};
    Var<float> emb = f.p("token_embed");
    Var<float> x = ad::embedding(emb, tokens, Shape{batch, len});
    x = ad::add(x, ad::slice(f.p("dec.pos_embed"), 0, 0, len));
    for (int l = 0; l < c.dec_layers; ++l) {
        const std::string p = "dec." + std::to_string(l);
        x = run_block(g, model, opts, {x, latents}, [p](const Fwd& ff, std::span<const Var<float>> in) {
            return ff.decoder_block(in[0], in[1], p);
        });
    }
    x = f.norm(x, "dec.final_ln");
    return ad::matmul(x, ad::transpose(emb, 0, 1));
}

namespace {

Tensor<float> spec_tensor(const Model& model, const LogMelSpectrogram& spec) {
    const ModelConfig& c = model.config;
    if (spec.n_mels != c.n_mels || spec.n_frames != c.max_source_frames) {
        throw Error(ErrorKind::kShapeMismatch, "spectrogram is " + std::to_string(spec.n_mels) + "x" +
                                                   std::to_string(spec.n_frames) + ", model expects " +
                                                   std::to_string(c.n_mels) + "x" + std::to_string(c.max_source_frames));
    }
    return Tensor<float>(Shape{1, static_cast<std::size_t>(spec.n_mels), static_cast<std::size_t>(spec.n_frames)},
                         spec.data);
}

Tensor<float> strip_batch(Var<float> v) {
    const Shape full = v.shape();
    Shape s(full.begin() + 1, full.end());
    return Tensor<float>(std::move(s), std::vector<float>(v.value().begin(), v.value().end()));
}

}  // namespace

Tensor<float> encode(const Model& model, const LogMelSpectrogram& spec, const DeltaMap* deltas) {
    Graph<float> g;
    ForwardOptions o;
    o.deltas = deltas;
    return strip_batch(encode(g, model, g.constant(spec_tensor(model, spec)), o));
}

Tensor<float> decode(const Model& model, std::span<const int> tokens, const Tensor<float>& latents,
                     const DeltaMap* deltas) {
    if (latents.dim() != 2) throw Error(ErrorKind::kShapeMismatch, "latents must be [S, d_model]");
    Graph<float> g;
    ForwardOptions o;
    o.deltas = deltas;
    Shape ls{1, latents.shape[0], latents.shape[1]};
    Var<float> lat = g.constant(Tensor<float>(std::move(ls), latents.data));
    return strip_batch(decode(g, model, tokens, 1, tokens.size(), lat, o));
}

std::vector<int> greedy_transcribe(const Model& model, const LogMelSpectrogram& spec, const Vocabulary& vocab,
                                   int max_len, const DeltaMap* deltas) {
    if (vocab.size() > model.config.vocab_size) {
        throw Error(ErrorKind::kVocabMismatch, "vocabulary larger than the model's output layer");
    }
    const Tensor<float> latents = encode(model, spec, deltas);
    const int cap = std::min(max_len, model.config.max_target_len);
    const auto V = static_cast<std::size_t>(model.config.vocab_size);
    std::vector<int> seq{Vocabulary::kSot};
    std::vector<int> out;
    while (static_cast<int>(out.size()) < cap) {
        const Tensor<float> logits = decode(model, seq, latents, deltas);
        const float* last = logits.data.data() + (seq.size() - 1) * V;
        int best = Vocabulary::kEot;
        for (int id = Vocabulary::kEot + 1; id < vocab.size(); ++id) {
            if (last[id] > last[best]) best = id;
        }
        if (best == Vocabulary::kEot) break;
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

// --- checkpoint ----------------------------------------------------------------

namespace detail {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    return v;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_container(const std::filesystem::path& path, const std::string& header_json,
                     const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
    json header = json::parse(header_json);
    json dir = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::size_t bytes = t->numel() * sizeof(float);
        dir.push_back(json{{"name", name}, {"shape", t->shape}, {"offset", offset}, {"length", bytes}});
        offset += bytes;
    }
    header["tensors"] = std::move(dir);
    const std::string h = header.dump();

    std::string payload;
    payload.reserve(offset);
    for (const auto& [name, t] : tensors) {
        payload.append(reinterpret_cast<const char*>(t->data.data()), t->numel() * sizeof(float));
    }

    std::string buf = "KASR";
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<std::uint32_t>(h.size()));
    buf += h;
    buf += payload;
    put_u32(buf, crc_of(payload.data(), payload.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kUnreadableFile, "cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error(ErrorKind::kUnreadableFile, "write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kUnreadableFile, "cannot open checkpoint " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4) throw Error(ErrorKind::kTruncated, "checkpoint shorter than its magic");
    if (buf.compare(0, 4, "KASR") != 0) throw Error(ErrorKind::kMagicMismatch, path.string() + " is not a kasr checkpoint");
    if (buf.size() < 12) throw Error(ErrorKind::kTruncated, "checkpoint preamble truncated");
    const std::uint32_t version = get_u32(buf, 4);
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::kVersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                     ", expected " + std::to_string(kCheckpointVersion));
    }
    const std::size_t hlen = get_u32(buf, 8);
    if (buf.size() < 12 + hlen) throw Error(ErrorKind::kTruncated, "checkpoint header truncated");
    json header = json::parse(buf.begin() + 12, buf.begin() + 12 + static_cast<std::ptrdiff_t>(hlen), nullptr, false);
    if (header.is_discarded() || !header.is_object() || !header.contains("tensors")) {
        throw Error(ErrorKind::kMalformed, "checkpoint header is not valid JSON");
    }

    const std::size_t payload_at = 12 + hlen;
    std::size_t payload_len = 0;
    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset, length;
    };
    std::vector<Entry> entries;
    try {
        for (const auto& e : header.at("tensors")) {
            Entry en{e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>(),
                     e.at("length").get<std::size_t>()};
            if (en.length != ad::numel(en.shape) * sizeof(float) || en.offset != payload_len) {
                throw Error(ErrorKind::kMalformed, "tensor directory inconsistent at '" + en.name + "'");
            }
            payload_len += en.length;
            entries.push_back(std::move(en));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::kMalformed, std::string("tensor directory: ") + e.what());
    }
    if (buf.size() < payload_at + payload_len + 4) throw Error(ErrorKind::kTruncated, "checkpoint payload truncated");
    if (buf.size() > payload_at + payload_len + 4) throw Error(ErrorKind::kMalformed, "trailing bytes after checksum");
    const std::uint32_t stored = get_u32(buf, payload_at + payload_len);
    if (stored != crc_of(buf.data() + payload_at, payload_len)) {
        throw Error(ErrorKind::kChecksum, "checkpoint payload checksum mismatch");
    }

    Container c;
    for (auto& e : entries) {
        Tensor<float> t(e.shape, 0.0f);
        std::memcpy(t.data.data(), buf.data() + payload_at + e.offset, e.length);
        c.tensors.emplace_back(std::move(e.name), std::move(t));
    }
    header.erase("tensors");
    c.header_json = header.dump();
    return c;
}

}  // namespace detail

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Vocabulary& vocab,
                     const MelParams& mel) {
    if (vocab.size() > model.config.vocab_size) {
        throw Error(ErrorKind::kVocabMismatch, "vocabulary larger than the model's output layer");
    }
    std::vector<std::uint32_t> cps(vocab.symbols().begin(), vocab.symbols().end());
    json header{{"kind", "model"}, {"config", config_json(model.config)}, {"mel", mel_json(mel)}, {"vocab", cps}};
    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    for (const auto& [name, t] : model.params) tensors.emplace_back(name, &t);
    detail::write_container(path, header.dump(), tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    detail::Container c = detail::read_container(path);
    const json header = json::parse(c.header_json);
    if (header.value("kind", "") != "model") throw Error(ErrorKind::kMalformed, "not a model checkpoint");
    Checkpoint ck;
    ck.model.config = config_from(header.at("config"));
    ck.mel = mel_from(header.at("mel"));
    try {
        const auto cps = header.at("vocab").get<std::vector<std::uint32_t>>();
        ck.vocab = Vocabulary(std::vector<char32_t>(cps.begin(), cps.end()));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::kMalformed, std::string("vocabulary: ") + e.what());
    }
    if (ck.vocab.size() > ck.model.config.vocab_size) {
        throw Error(ErrorKind::kVocabMismatch, "checkpoint vocabulary larger than its output layer");
    }
    const auto expected = parameter_shapes(ck.model.config);
    if (expected.size() != c.tensors.size()) throw Error(ErrorKind::kMalformed, "checkpoint tensor set does not match config");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        auto& [name, t] = c.tensors[i];
        if (name != expected[i].first || t.shape != expected[i].second) {
            throw Error(ErrorKind::kMalformed, "unexpected tensor '" + name + "' in checkpoint");
        }
        t.requires_grad = true;
        ck.model.params.emplace(std::move(name), std::move(t));
    }
    return ck;
}

}  // namespace kasr
