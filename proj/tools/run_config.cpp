// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "kasr/error.hpp"

namespace kasr::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& why) {
    throw Error(ErrorKind::kConfig, key + ": " + why);
}

int to_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected an integer, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected a non-negative integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        bad(key, "expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad(key, "expected true/false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value, const fs::path& base)>;

fs::path resolve(const fs::path& base, const std::string& v) {
    fs::path p(v);
    return (p.is_relative() ? base / p : p).lexically_normal();
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto path_key = [&](const char* k, fs::path RunConfig::*field) {
            t[k] = [field](RunConfig& c, const std::string&, const std::string& v, const fs::path& b) {
                c.*field = resolve(b, v);
            };
        };
        auto int_key = [&](const char* k, auto getter) {
            t[k] = [getter](RunConfig& c, const std::string& key, const std::string& v, const fs::path&) {
                getter(c) = to_int(key, v);
            };
        };
        auto dbl_key = [&](const char* k, auto getter) {
            t[k] = [getter](RunConfig& c, const std::string& key, const std::string& v, const fs::path&) {
                getter(c) = to_double(key, v);
            };
        };
        auto bool_key = [&](const char* k, auto getter) {
            t[k] = [getter](RunConfig& c, const std::string& key, const std::string& v, const fs::path&) {
                getter(c) = to_bool(key, v);
            };
        };

        t["mode"] = [](RunConfig& c, const std::string& key, const std::string& v, const fs::path&) {
            if (v == "e2e") c.train.mode = TrainMode::kE2E;
            else if (v == "lora") c.train.mode = TrainMode::kLora;
            else bad(key, "expected e2e or lora, got '" + v + "'");
        };
        path_key("data.train", &RunConfig::train_manifest);
        path_key("data.val", &RunConfig::val_manifest);
        path_key("data.vocab", &RunConfig::vocab_path);
        path_key("base_checkpoint", &RunConfig::base_checkpoint);
        path_key("output_dir", &RunConfig::output_dir);

        t["model.preset"] = [](RunConfig& c, const std::string& key, const std::string& v, const fs::path&) {
            try {
                c.model = ModelConfig::preset(v);
            } catch (const Error& e) {
                bad(key, e.what());
            }
        };
        int_key("model.d_model", [](RunConfig& c) -> int& { return c.model.d_model; });
        int_key("model.n_heads", [](RunConfig& c) -> int& { return c.model.n_heads; });
        int_key("model.enc_layers", [](RunConfig& c) -> int& { return c.model.enc_layers; });
        int_key("model.dec_layers", [](RunConfig& c) -> int& { return c.model.dec_layers; });
        int_key("model.d_ff", [](RunConfig& c) -> int& { return c.model.d_ff; });
        int_key("model.max_target_len", [](RunConfig& c) -> int& { return c.model.max_target_len; });
        int_key("model.max_source_frames", [](RunConfig& c) -> int& { return c.model.max_source_frames; });

        int_key("mel.n_mels", [](RunConfig& c) -> int& { return c.mel.n_mels; });
        int_key("mel.n_fft", [](RunConfig& c) -> int& { return c.mel.n_fft; });
        int_key("mel.hop", [](RunConfig& c) -> int& { return c.mel.hop; });
        int_key("mel.win", [](RunConfig& c) -> int& { return c.mel.win; });
        int_key("mel.sample_rate", [](RunConfig& c) -> int& { return c.mel.sample_rate; });
        dbl_key("mel.fmin", [](RunConfig& c) -> double& { return c.mel.fmin; });
        dbl_key("mel.fmax", [](RunConfig& c) -> double& { return c.mel.fmax; });
        dbl_key("mel.log_floor", [](RunConfig& c) -> double& { return c.mel.log_floor; });

        int_key("train.steps", [](RunConfig& c) -> int& { return c.train.steps; });
        int_key("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; });
        int_key("train.grad_accum", [](RunConfig& c) -> int& { return c.train.grad_accum; });
        dbl_key("train.lr", [](RunConfig& c) -> double& { return c.train.lr_peak; });
        dbl_key("train.warmup_frac", [](RunConfig& c) -> double& { return c.train.warmup_frac; });
        dbl_key("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
        t["train.seed"] = [](RunConfig& c, const std::string& key, const std::string& v, const fs::path&) {
            c.train.seed = to_u64(key, v);
        };
        int_key("train.eval_every", [](RunConfig& c) -> int& { return c.train.eval_every; });
        bool_key("train.checkpoint_activations", [](RunConfig& c) -> bool& { return c.train.checkpoint_activations; });
        int_key("train.early_stop_patience", [](RunConfig& c) -> int& { return c.train.early_stop_patience; });
        dbl_key("train.dropout", [](RunConfig& c) -> double& { return c.train.dropout; });
        int_key("train.max_decode_len", [](RunConfig& c) -> int& { return c.train.max_decode_len; });
        t["train.segmenter"] = [](RunConfig& c, const std::string&, const std::string& v, const fs::path&) {
            c.train.segmenter = v;
        };
        bool_key("train.log_wall_time", [](RunConfig& c) -> bool& { return c.train.log_wall_time; });
        int_key("train.threads", [](RunConfig& c) -> int& { return c.threads; });

        int_key("lora.rank", [](RunConfig& c) -> int& { return c.train.lora.rank; });
        dbl_key("lora.alpha", [](RunConfig& c) -> double& { return c.train.lora.alpha; });
        dbl_key("lora.dropout", [](RunConfig& c) -> double& { return c.train.lora.dropout_p; });
        t["lora.targets"] = [](RunConfig& c, const std::string&, const std::string& v, const fs::path&) {
            c.train.lora.targets = to_list(v);
        };

        int_key("specaug.n_freq_masks", [](RunConfig& c) -> int& { return c.train.spec_augment.n_freq_masks; });
        int_key("specaug.max_freq_width", [](RunConfig& c) -> int& { return c.train.spec_augment.max_freq_width; });
        int_key("specaug.n_time_masks", [](RunConfig& c) -> int& { return c.train.spec_augment.n_time_masks; });
        int_key("specaug.max_time_width", [](RunConfig& c) -> int& { return c.train.spec_augment.max_time_width; });
        t["specaug.fill"] = [](RunConfig& c, const std::string& key, const std::string& v, const fs::path&) {
            if (v == "mean") c.train.spec_augment.fill = MaskFill::kMean;
            else if (v == "floor") c.train.spec_augment.fill = MaskFill::kFloor;
            else bad(key, "expected mean or floor, got '" + v + "'");
        };

        bool_key("waveaug.enabled", [](RunConfig& c) -> bool& { return c.train.wave_augment.enabled; });
        dbl_key("waveaug.stretch_min", [](RunConfig& c) -> double& { return c.train.wave_augment.stretch_min; });
        dbl_key("waveaug.stretch_max", [](RunConfig& c) -> double& { return c.train.wave_augment.stretch_max; });
        dbl_key("waveaug.pitch_min", [](RunConfig& c) -> double& { return c.train.wave_augment.pitch_semitones_min; });
        dbl_key("waveaug.pitch_max", [](RunConfig& c) -> double& { return c.train.wave_augment.pitch_semitones_max; });
        dbl_key("waveaug.gain_db_min", [](RunConfig& c) -> double& { return c.train.wave_augment.gain_db_min; });
        dbl_key("waveaug.gain_db_max", [](RunConfig& c) -> double& { return c.train.wave_augment.gain_db_max; });
        dbl_key("waveaug.noise_std", [](RunConfig& c) -> double& { return c.train.wave_augment.noise_std; });
        return t;
    }();
    return table;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, fn] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir, const ParseOptions& opts) {
    RunConfig c;
    c.output_dir = base_dir;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const std::string where = "line " + std::to_string(lineno);
        if (eq == std::string::npos) throw Error(ErrorKind::kConfig, where + ": expected key = value");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) throw Error(ErrorKind::kConfig, where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw Error(ErrorKind::kConfig, where + ": duplicate key '" + key + "'");
        it->second(c, key, value, base_dir);
    }
    if (opts.mode) {
        if (seen.contains("mode") && c.train.mode != *opts.mode) {
            bad("mode", std::string("'") + (c.train.mode == TrainMode::kLora ? "lora" : "e2e") +
                            "' does not match the subcommand");
        }
        c.train.mode = *opts.mode;
    }
    if (c.train_manifest.empty()) bad("data.train", "missing");
    if (opts.require_rank && c.train.mode == TrainMode::kLora && !seen.contains("lora.rank")) bad("lora.rank", "missing (required in lora mode)");
    if (c.threads < 1) bad("train.threads", "must be >= 1");
    c.model.n_mels = c.mel.n_mels;
    try {
        c.mel.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::kConfig, std::string("mel: ") + e.what());
    }
    try {
        c.train.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::kConfig, e.what());
    }
    return c;
}

RunConfig load_run_config(const fs::path& path, const ParseOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kUnreadableFile, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), fs::absolute(path).parent_path(), opts);
}

}  // namespace kasr::cli
