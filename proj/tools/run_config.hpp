// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Declarative run configuration: UTF-8 "key = value" lines, '#' comments.
// Relative paths resolve against the config file's directory.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "kasr/audio.hpp"
#include "kasr/model.hpp"
#include "kasr/trainer.hpp"

namespace kasr::cli {

struct RunConfig {
    std::filesystem::path train_manifest;
    std::filesystem::path val_manifest;    // optional
    std::filesystem::path vocab_path;      // optional; built from the train split otherwise
    std::filesystem::path base_checkpoint; // optional
    std::filesystem::path output_dir;
    ModelConfig model;  // vocab_size and n_mels are filled in at build time
    MelParams mel;
    TrainConfig train;
    int threads = 1;
};

// Set by the subcommand. A config whose `mode` disagrees with `mode` is rejected.
struct ParseOptions {
    std::optional<TrainMode> mode;
    bool require_rank = true;  // sweep-ranks supplies ranks itself
};

// Throws Error(kConfig) naming the offending key (and line when applicable).
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir, const ParseOptions& opts = {});
RunConfig load_run_config(const std::filesystem::path& path, const ParseOptions& opts = {});

// Every accepted key, for documentation and error messages.
const std::vector<std::string>& run_config_keys();

}  // namespace kasr::cli
