// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic cost accounting. Attention costs follow the closed forms
//   full attention:      4 T d^2 + 2 T^2 d
//   windowed + words:    4 (T + T_z) d^2 + 2 T (T_w + 2) d
// (softmax excluded). These count one unit per multiply-accumulate, which is
// what the instrumented MacCounter reproduces. FFN cost is reported apart as
// 2 T d d_ff per affine map, two maps per layer.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hierform/attention.hpp"
#include "hierform/hierarchy.hpp"

namespace hierform {

std::uint64_t msa_flops(std::uint64_t length, std::uint64_t d);
std::uint64_t smsa_flops(std::uint64_t length, std::uint64_t word_tokens, std::uint64_t window,
                         std::uint64_t d);

// Generalized attention-path cost of one layer: word_tokens == 0 disables
// the word encoder, an empty window means full attention. Reduces to the two
// closed forms above in their respective settings.
std::uint64_t attention_flops(std::uint64_t length, std::uint64_t word_tokens,
                              std::optional<std::uint64_t> window, std::uint64_t d);
std::uint64_t ffn_flops(std::uint64_t length, std::uint64_t d, std::uint64_t d_ff);
// Pooling adds plus the shared affine over pooled and word tokens.
std::uint64_t merge_flops(std::uint64_t length_in, std::uint64_t length_out,
                          std::uint64_t word_tokens, std::uint64_t d);

std::uint64_t encoder_layer_params(std::uint64_t d, std::uint64_t d_ff);
std::uint64_t merging_block_params(std::uint64_t d);

struct CostRow {
  std::string stage;  // "frame", "phone", "word", "utterance", "merge1".., "input", "classifier"
  std::size_t layer = 0;
  ModelKind kind = ModelKind::hierarchical;
  std::uint64_t attn_flops = 0;
  std::uint64_t ffn_flops = 0;
  std::uint64_t merge_flops = 0;
  std::uint64_t params = 0;
};

struct CostReport {
  ModelKind kind = ModelKind::hierarchical;
  std::vector<CostRow> rows;
  std::uint64_t attn_total = 0;
  std::uint64_t ffn_total = 0;
  std::uint64_t merge_total = 0;
  std::uint64_t params_total = 0;

  std::uint64_t compute_total() const { return attn_total + ffn_total; }
};

// Baseline: plan.total_layers() full-attention layers at T_1. Hierarchical model:
// stage i at its own length, windows and word tokens per `ablations`.
CostReport model_flops(const StagePlan& plan, ModelKind kind, const ModelDims& dims,
                       const Ablations& ablations = {});

// Signed change from `reference` to `candidate`; gain is relative to the
// reference (negative means cheaper).
struct CostComparison {
  std::int64_t compute_delta = 0;
  std::int64_t params_delta = 0;
  double compute_gain_percent = 0.0;
  double params_gain_percent = 0.0;
};
CostComparison compare_costs(const CostReport& reference, const CostReport& candidate);

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t word_tokens = 0;
  std::uint64_t structural() const { return total - word_tokens; }
};
ParamCount count_params(const ModelParams& model);

// Word tokens are reported apart: their row count follows the utterance
// length, so they are not part of the architecture's fixed weight budget.
struct ParamDiff {
  std::int64_t structural = 0;
  std::int64_t word_tokens = 0;
  std::int64_t total = 0;
  double structural_percent = 0.0;  // relative to the reference's structural count
};
ParamDiff param_diff(const ModelParams& reference, const ModelParams& candidate);

// Softmax over the acoustic-token mass received in one recorded layer.
std::vector<double> attention_weight_profile(const std::vector<AttentionRecord>& records,
                                             std::size_t layer = 0);

void write_cost_table(std::ostream& os, const CostReport& baseline, const CostReport& candidate);
// Columns: stage,layer,kind,attn_flops,ffn_flops,merge_flops,params
void write_cost_csv(std::ostream& os, const std::vector<CostReport>& reports);

}  // namespace hierform
