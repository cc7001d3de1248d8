// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-head attention, windowed unit encoder, word encoder and the standard
// Transformer encoder layer.
//
// All attention variants run through one gathered-attention kernel: every
// query row owns a list of key slots (possibly padded) and attends only to
// the live ones. Full attention, overlapping windows and the word encoder's
// even segments differ only in how that slot table is built.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hierform/numerics.hpp"

namespace hierform {

// Per-head projections W_i^Q/K/V are the column blocks of wq/wk/wv
// (head i owns columns [i*d_m, (i+1)*d_m)). No projection biases.
struct MsaParams {
  ParamId wq, wk, wv, wo;
  std::size_t heads = 1;
};

struct EncoderLayerParams {
  MsaParams msa;
  ParamId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  ParamId norm1_gamma, norm1_beta;
  ParamId norm2_gamma, norm2_beta;
};

// Registers one encoder layer under `prefix` with uniform(+-1/sqrt(fan_in))
// weights, zero biases and identity norms.
EncoderLayerParams add_encoder_layer(ParameterStore& store, const std::string& prefix,
                                     std::size_t d, std::size_t d_ff, std::size_t heads,
                                     std::uint64_t seed);

// Attention mass received by each key, summed over heads and queries.
struct AttentionRecord {
  std::vector<double> token_mass;  // acoustic tokens
  std::vector<double> word_mass;   // word tokens, empty when not attended
  std::size_t heads = 0;
  std::size_t queries = 0;  // queries that actually attended

  double total_mass() const;
};

// Key slots of one query. Slots with live[s] == false are padding and get
// exactly zero attention; their key index is meaningless.
struct AttentionIndex {
  std::vector<std::size_t> offsets{0};  // CSR row pointers, size Tq+1
  std::vector<std::size_t> keys;
  std::vector<bool> live;
  std::vector<bool> active;  // queries with active == false output zeros

  std::size_t queries() const { return offsets.size() - 1; }
  void add_query(bool is_active) {
    active.push_back(is_active);
    offsets.push_back(keys.size());
  }
  void add_slot(std::size_t key, bool is_live) {
    keys.push_back(key);
    live.push_back(is_live);
    offsets.back() = keys.size();
  }
};

// Scaled dot-product attention per head over the slot table, heads
// concatenated (no output projection). Adds 2*slots*d MACs per query to the
// tape's counter, padded slots included. `record`, when given, receives
// per-key mass (size k.rows()).
Var gathered_attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                       const AttentionIndex& index, std::vector<double>* record = nullptr);

struct MsaResult {
  Var output;
  AttentionRecord record;
};

// Standard multi-head attention. `key_mask` flags live keys (empty = all).
MsaResult msa(ParamBinding& params, const Var& query, const Var& key, const Var& value,
              const MsaParams& weights, const std::vector<bool>& key_mask = {});

// Overlapping window of length t_w around token j over positions
// [j - floor(t_w/2), j + ceil(t_w/2)); out-of-range slots are padding.
struct WindowSpec {
  std::vector<std::ptrdiff_t> slots;
  std::vector<bool> real;
};
WindowSpec overlap_window(std::size_t j, std::size_t length, std::size_t t_w);

// 1-based segment of 1-based token j when `length` tokens are split evenly
// into `segments` groups: ceil(j * segments / length).
std::size_t even_segment_of(std::size_t j, std::size_t length, std::size_t segments);

// 0-based half-open [begin, end) row ranges of the even segments.
std::vector<std::pair<std::size_t, std::size_t>> even_segments(std::size_t length,
                                                               std::size_t segments);

// Word encoder: word token k attends over the k-th even segment of x. No
// residual and no normalization. `valid` flags real rows of x. With more
// word tokens than rows some segments are empty; those tokens, like tokens
// whose segment is all padding, come out as zeros.
Var word_encoder_step(ParamBinding& params, const Var& z, const Var& x, const MsaParams& weights,
                      const std::vector<bool>& valid = {});

struct EncoderOutput {
  Var output;
  AttentionRecord record;
};

// Unit encoder. Query j attends to its overlapping window of length t_w
// (whole sequence when t_w is empty), prefixed by word token zbar[k(j)] when
// `zbar` is given. Followed by residual, norm, FFN, residual, norm.
EncoderOutput unit_encoder_step(ParamBinding& params, const Var& x, const std::optional<Var>& zbar,
                                const EncoderLayerParams& layer, std::optional<std::size_t> t_w,
                                const std::vector<bool>& valid = {});

// Standard Transformer encoder layer with full attention.
EncoderOutput transformer_encoder_step(ParamBinding& params, const Var& x,
                                       const EncoderLayerParams& layer,
                                       const std::vector<bool>& valid = {});

// Attention path of one block (word encoder, then the word-token enhanced
// windowed attention) without residuals, norms or FFN. Projections of x are
// shared between the two attentions, so the MAC count is exactly
// 4(T+T_z)d^2 + 2T(T_w+2)d.
struct SmsaResult {
  Var attention;  // T x d, output-projected
  Var zbar;       // T_z x d
  AttentionRecord record;
};
SmsaResult smsa(ParamBinding& params, const Var& x, const Var& z, const MsaParams& weights,
                std::optional<std::size_t> t_w, const std::vector<bool>& valid = {});

// One hierarchical block: word encoder (when z is given) followed by the
// unit encoder fed with the updated word tokens.
struct BlockOutput {
  Var x;
  std::optional<Var> z;
  AttentionRecord record;
};
BlockOutput hierarchical_block(ParamBinding& params, const Var& x, const std::optional<Var>& z,
                               const EncoderLayerParams& layer, std::optional<std::size_t> t_w,
                               const std::vector<bool>& valid = {});

}  // namespace hierform
