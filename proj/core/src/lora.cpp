// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/lora.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

#include "kasr/error.hpp"

namespace kasr {

using json = nlohmann::json;
using ad::Shape;
using ad::Tensor;

namespace {

const std::set<std::string> kAttentionTargets{"q", "k", "v", "o"};
const std::set<std::string> kMlpTargets{"fc1", "fc2"};

}  // namespace

void LoraConfig::validate() const {
    if (rank < 1) throw Error(ErrorKind::kConfig, "lora.rank must be >= 1");
    if (!(alpha >= 0.0)) throw Error(ErrorKind::kConfig, "lora.alpha must be positive (0 selects alpha = rank)");
    if (targets.empty()) throw Error(ErrorKind::kConfig, "lora.targets must not be empty");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorKind::kConfig, "lora.dropout must be in [0, 1)");
    for (const auto& t : targets) {
        if (!kAttentionTargets.contains(t) && !kMlpTargets.contains(t)) {
            throw Error(ErrorKind::kUnknownTarget, "unknown LoRA target '" + t + "'");
        }
    }
}

std::size_t AdapterSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : pairs) n += p.a.numel() + p.b.numel();
    return n;
}

DeltaMap AdapterSet::deltas() const {
    DeltaMap out;
    for (const auto& [name, p] : pairs) out.emplace(name, LowRankDelta{&p.a, &p.b, config.scale(), config.dropout_p});
    return out;
}

std::vector<std::string> lora_target_weights(const ModelConfig& model, const LoraConfig& cfg) {
    cfg.validate();
    std::vector<std::string> names;
    for (const auto& t : cfg.targets) {
        if (kAttentionTargets.contains(t)) {
            for (const auto& block : attention_blocks(model)) names.push_back(block + "." + t + ".w");
        } else {
            for (int l = 0; l < model.enc_layers; ++l) names.push_back("enc." + std::to_string(l) + ".mlp." + t + ".w");
            for (int l = 0; l < model.dec_layers; ++l) names.push_back("dec." + std::to_string(l) + ".mlp." + t + ".w");
        }
    }
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

namespace {

// (d_out, d_in) of every adapted weight, validated against the rank bound.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> adapted_shapes(const ModelConfig& model,
                                                                                         const LoraConfig& cfg) {
    std::map<std::string, Shape> shapes;
    for (auto& [name, shape] : parameter_shapes(model)) shapes.emplace(name, shape);
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
    for (const auto& name : lora_target_weights(model, cfg)) {
        const Shape& s = shapes.at(name);
        if (static_cast<std::size_t>(cfg.rank) >= std::min(s[0], s[1])) {
            throw Error(ErrorKind::kRankNotLow, "rank " + std::to_string(cfg.rank) + " is not low for " + name + " " +
                                                    ad::to_string(s));
        }
        out.emplace_back(name, std::make_pair(s[0], s[1]));
    }
    return out;
}

}  // namespace

std::size_t lora_parameter_count(const ModelConfig& model, const LoraConfig& cfg) {
    std::size_t n = 0;
    for (const auto& [name, dims] : adapted_shapes(model, cfg)) {
        n += static_cast<std::size_t>(cfg.rank) * (dims.first + dims.second);
    }
    return n;
}

AdaptedModel inject(Model base, const LoraConfig& cfg, Rng& rng) {
    const auto shapes = adapted_shapes(base.config, cfg);
    AdaptedModel out;
    for (auto& [name, t] : base.params) t.requires_grad = false;
    out.base = std::move(base);
    out.adapters.config = cfg;
    const auto r = static_cast<std::size_t>(cfg.rank);
    std::normal_distribution<float> normal(0.0f, 0.02f);
    for (const auto& [name, dims] : shapes) {
        LoraPair p{Tensor<float>(Shape{r, dims.second}, 0.0f), Tensor<float>(Shape{dims.first, r}, 0.0f)};
        for (auto& v : p.a.data) v = normal(rng);
        p.a.requires_grad = true;
        p.b.requires_grad = true;
        out.adapters.pairs.emplace(name, std::move(p));
    }
    return out;
}

Model merge(AdaptedModel& adapted) {
    const float scale = adapted.adapters.config.scale();
    for (const auto& [name, p] : adapted.adapters.pairs) {
        Tensor<float>& w = adapted.base.at(name);
        const std::size_t d_out = w.shape[0], d_in = w.shape[1], r = p.a.shape[0];
        for (std::size_t i = 0; i < d_out; ++i) {
            for (std::size_t j = 0; j < d_in; ++j) {
                float acc = 0.0f;
                for (std::size_t k = 0; k < r; ++k) acc += p.b.data[i * r + k] * p.a.data[k * d_in + j];
                w.data[i * d_in + j] += scale * acc;
            }
        }
    }
    adapted.adapters.pairs.clear();
    return adapted.base;
}

std::size_t trainable_count(const Model& model) {
    std::size_t n = 0;
    for (const auto& [name, t] : model.params) n += t.requires_grad ? t.numel() : 0;
    return n;
}

std::size_t trainable_count(const AdaptedModel& adapted) {
    std::size_t n = trainable_count(adapted.base);
    for (const auto& [name, p] : adapted.adapters.pairs) {
        n += (p.a.requires_grad ? p.a.numel() : 0) + (p.b.requires_grad ? p.b.numel() : 0);
    }
    return n;
}

double trainable_fraction(const Model& model) {
    return static_cast<double>(trainable_count(model)) / static_cast<double>(parameter_count(model.params));
}

double trainable_fraction(const AdaptedModel& adapted) {
    return static_cast<double>(trainable_count(adapted)) / static_cast<double>(parameter_count(adapted.base.params));
}

void save_adapters(const std::filesystem::path& path, const AdaptedModel& adapted) {
    const LoraConfig& c = adapted.adapters.config;
    json header{{"kind", "lora"},
                {"config_hash", adapted.base.config.hash()},
                {"lora", json{{"rank", c.rank}, {"alpha", c.alpha}, {"targets", c.targets}, {"dropout", c.dropout_p}}}};
    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    for (const auto& [name, p] : adapted.adapters.pairs) {
        tensors.emplace_back(name + ".lora_a", &p.a);
        tensors.emplace_back(name + ".lora_b", &p.b);
    }
    detail::write_container(path, header.dump(), tensors);
}

AdapterSet load_adapters(const std::filesystem::path& path, const ModelConfig& base) {
    detail::Container c = detail::read_container(path);
    const json header = json::parse(c.header_json);
    if (header.value("kind", "") != "lora") throw Error(ErrorKind::kMalformed, "not an adapter checkpoint");
    AdapterSet set;
    try {
        if (header.at("config_hash").get<std::uint32_t>() != base.hash()) {
            throw Error(ErrorKind::kConfig, "adapters were trained on a different base configuration");
        }
        const json& l = header.at("lora");
        set.config.rank = l.at("rank").get<int>();
        set.config.alpha = l.at("alpha").get<double>();
        set.config.targets = l.at("targets").get<std::vector<std::string>>();
        set.config.dropout_p = l.at("dropout").get<double>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::kMalformed, std::string("adapter header: ") + e.what());
    }
    const auto expected = adapted_shapes(base, set.config);
    if (c.tensors.size() != 2 * expected.size()) throw Error(ErrorKind::kMalformed, "adapter tensor set does not match");
    std::map<std::string, Tensor<float>> by_name;
    for (auto& [name, t] : c.tensors) by_name.emplace(std::move(name), std::move(t));
    const auto r = static_cast<std::size_t>(set.config.rank);
    for (const auto& [name, dims] : expected) {
        auto a = by_name.find(name + ".lora_a");
        auto b = by_name.find(name + ".lora_b");
        if (a == by_name.end() || b == by_name.end() || a->second.shape != Shape{r, dims.second} ||
            b->second.shape != Shape{dims.first, r}) {
            throw Error(ErrorKind::kMalformed, "adapter tensors for '" + name + "' missing or misshapen");
        }
        LoraPair p{std::move(a->second), std::move(b->second)};
        p.a.requires_grad = p.b.requires_grad = true;
        set.pairs.emplace(name, std::move(p));
    }
    return set;
}

}  // namespace kasr
