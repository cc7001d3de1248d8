// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stage planning from speech-unit durations, merging blocks and assembly of
// the four-stage hierarchical model plus the flat Transformer baseline.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hierform/attention.hpp"
#include "hierform/numerics.hpp"

namespace hierform {

// Typical duration bounds of phones and words. `mismatch` scales all four.
struct DurationStats {
  double phone_short_ms = 50.0;
  double phone_long_ms = 200.0;
  double word_short_ms = 250.0;
  double word_long_ms = 1000.0;
  double mismatch = 1.0;

  void validate() const;
};

struct PlanOverrides {
  std::optional<std::array<std::size_t, 3>> windows;
  std::optional<std::array<std::size_t, 3>> merges;
  std::optional<std::size_t> word_tokens;
  std::array<std::size_t, 4> layers{2, 2, 4, 4};
  std::size_t d = 1024;
};

struct StagePlan {
  double hop_ms = 20.0;
  std::array<double, 3> token_span_ms{};   // duration covered by one token, stages 1..3
  std::array<std::size_t, 3> window{};     // t_w per stage, in tokens
  std::array<std::size_t, 3> merge{};      // merge scale after each stage, in tokens
  std::array<std::size_t, 4> length{};     // T_1..T_4
  std::size_t word_tokens = 1;             // T_z
  std::array<std::size_t, 4> layers{2, 2, 4, 4};
  std::size_t d = 1024;

  std::size_t total_layers() const { return layers[0] + layers[1] + layers[2] + layers[3]; }
};

// Windows and merge scales are the token counts (ceil) covering:
//   t_w = (phone_short, 2*phone_long, 2*word_long), m = (phone_short, word_short, word_long)
// at each stage's token span; T_z = max(1, ceil(T_1 * hop / word_long)).
StagePlan derive_stage_plan(const DurationStats& stats, double hop_ms, std::size_t frames,
                            const PlanOverrides& overrides = {});

Matrix init_word_tokens(std::size_t count, std::size_t d, std::uint64_t seed);

struct Ablations {
  bool unit_encoder = true;
  bool word_encoder = true;
  bool merging = true;
};

enum class ModelKind { baseline, hierarchical };
const char* to_string(ModelKind kind);

struct ModelDims {
  std::size_t input_width = 1024;
  std::size_t d = 1024;
  std::size_t heads = 8;
  std::size_t d_ff = 0;   // 0: d / 2
  std::size_t d_cls = 0;  // 0: d / 2
  std::size_t classes = 4;

  std::size_t ffn_width() const { return d_ff != 0 ? d_ff : d / 2; }
  std::size_t classifier_width() const { return d_cls != 0 ? d_cls : d / 2; }
  void validate() const;
};

struct AffineParams {
  ParamId weight, bias;
};

// Shared affine for x and z paths, separate norms.
struct MergingParams {
  ParamId weight, bias;
  ParamId x_norm_gamma, x_norm_beta;
  ParamId z_norm_gamma, z_norm_beta;
};

struct ClassifierParams {
  AffineParams hidden, output;
};

struct ModelParams {
  ModelKind kind = ModelKind::hierarchical;
  ModelDims dims;
  ParameterStore store;
  std::optional<AffineParams> input_projection;  // present iff input_width != d
  std::vector<EncoderLayerParams> layers;
  std::vector<MergingParams> merges;             // hierarchical only, 3 entries
  std::optional<ParamId> word_tokens;            // hierarchical only
  ClassifierParams classifier;
};

// Parameters are named ("layers.3.msa.wq", ...) and each is drawn from a
// stream keyed by (seed, name), so both model kinds built from one seed share
// every identically named weight.
ModelParams init_hierarchical(const ModelDims& dims, const StagePlan& plan, std::uint64_t seed);
ModelParams init_baseline(const ModelDims& dims, std::size_t layers, std::uint64_t seed);

struct MergeOutput {
  Var x;
  std::optional<Var> z;
  std::vector<bool> valid;
};

// x' = Norm(AvgPool(xbar, m) W + b); z' = Norm(zbar W + b).
MergeOutput merging_block(ParamBinding& params, const Var& xbar, const std::optional<Var>& zbar,
                          std::size_t m, const MergingParams& merge,
                          const std::vector<bool>& valid = {});

struct ForwardOptions {
  Ablations ablations;
  bool record_attention = false;
};

struct ForwardResult {
  Var logits;  // 1 x classes
  std::vector<AttentionRecord> records;  // one per encoder layer when recorded
};

// `valid` flags real frames (empty: all real). Requires features.rows() ==
// plan.length[0].
ForwardResult hierarchical_forward(ParamBinding& params, const Matrix& features,
                                   const std::vector<bool>& valid, const ModelParams& model,
                                   const StagePlan& plan, const ForwardOptions& options = {});

// First `layers` encoder layers of `model` over the whole sequence.
ForwardResult baseline_transformer_forward(ParamBinding& params, const Matrix& features,
                                           const std::vector<bool>& valid, const ModelParams& model,
                                           std::size_t layers, bool record_attention = false);

// Forward on a private tape; returns the logits row and optional records.
struct Prediction {
  std::vector<double> logits;
  std::size_t label = 0;
  std::vector<AttentionRecord> records;
};
Prediction predict(const ModelParams& model, const StagePlan* plan, const Matrix& features,
                   const std::vector<bool>& valid, const ForwardOptions& options = {});

}  // namespace hierform
