// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature files and weight snapshots.
//
// Binary feature layout (all little-endian):
//   "HFM1" | u32 T | u32 d | f32 hop_ms | T*d f32 row-major
//   [ u32 0xFFFFFFFE | u32 label ]   optional
// CSV fallback (".csv"): header row "T,d,hop_ms[,label]", then T rows of d
// values.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "hierform/error.hpp"
#include "hierform/numerics.hpp"

namespace hierform {

enum class FeatureErrorCode {
  io,
  bad_magic,
  truncated,
  non_finite,
  bad_header,
  bad_label,
  trailing_data,
  bad_csv,
};

const char* to_string(FeatureErrorCode code);

class FeatureFormatError : public Error {
 public:
  FeatureFormatError(FeatureErrorCode code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FeatureErrorCode code() const { return code_; }

 private:
  FeatureErrorCode code_;
};

struct FeatureSequence {
  Matrix values;  // T x d
  double hop_ms = 20.0;
  std::optional<std::uint32_t> label;

  std::size_t frames() const { return values.rows(); }
  std::size_t width() const { return values.cols(); }
  void validate() const;
};

inline constexpr std::uint32_t kLabelSentinel = 0xFFFFFFFEu;

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq);
FeatureSequence decode_features(std::span<const std::uint8_t> bytes);

// Dispatches on extension: ".csv" reads the text form, anything else the
// binary form.
FeatureSequence load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence parse_features_csv(const std::string& text);
std::string format_features_csv(const FeatureSequence& seq);

struct PaddedSequence {
  FeatureSequence sequence;
  std::vector<bool> valid;
};

// Tail truncation or zero padding to exactly `max_frames` frames.
PaddedSequence pad_or_truncate(const FeatureSequence& seq, std::size_t max_frames);

// Weight snapshot: "HFW1" | u32 count | per entry: u32 name length, name,
// u32 rows, u32 cols, rows*cols f64.
void save_weights(const std::filesystem::path& path, const ParameterStore& store);
// Names and shapes must match `store` exactly.
void load_weights(const std::filesystem::path& path, ParameterStore& store);

}  // namespace hierform
