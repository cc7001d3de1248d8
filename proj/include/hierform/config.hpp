// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration for the command-line tool. Files hold one `key = value`
// per line; `#` starts a comment. Command-line overrides use the same keys
// and win over the file.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hierform/error.hpp"
#include "hierform/hierarchy.hpp"
#include "hierform/training.hpp"

namespace hierform {

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

enum class PadPolicy {
  pad,   // zero-pad or tail-truncate every input to max_len frames
  none,  // use inputs at their own length
};

struct RunConfig {
  DurationStats durations;
  std::array<std::size_t, 4> layers{2, 2, 4, 4};
  std::size_t d = 1024;
  std::size_t d_ff = 0;
  std::size_t d_cls = 0;
  std::size_t heads = 8;
  std::size_t classes = 4;
  Ablations ablations;
  std::optional<std::array<std::size_t, 3>> windows;
  std::optional<std::array<std::size_t, 3>> merges;
  std::optional<std::size_t> word_tokens;
  std::uint64_t seed = 0;
  std::size_t max_len = 326;
  PadPolicy pad_policy = PadPolicy::pad;
  double hop_ms = 20.0;
  std::size_t epochs = 120;
  double lr = 5e-4;
  double momentum = 0.9;
  std::size_t batch_size = 32;

  void validate() const;
};

// Keys accepted by `apply_setting`, in documentation order.
const std::vector<std::string>& config_keys();

void apply_setting(RunConfig& config, std::string_view key, std::string_view value);
// "key=value"
void apply_override(RunConfig& config, std::string_view assignment);
void apply_config_text(RunConfig& config, std::string_view text);
// Starts from `base`, applies the file, then the overrides, then validates.
RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::vector<std::string>& overrides = {}, RunConfig base = {});

// Small fixed setup for gradient checks and smoke runs: d=8, two heads,
// one layer per stage, 12 frames, two word tokens, two classes.
RunConfig tiny_preset();

PlanOverrides plan_overrides(const RunConfig& config);
ModelDims model_dims(const RunConfig& config, std::size_t input_width);
TrainConfig train_config(const RunConfig& config);

}  // namespace hierform
