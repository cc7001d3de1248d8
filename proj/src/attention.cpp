// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hierform {

namespace {

bool is_valid(const std::vector<bool>& valid, std::size_t i) { return valid.empty() || valid[i]; }

void require_valid_size(const std::vector<bool>& valid, std::size_t n, const char* op) {
  if (!valid.empty() && valid.size() != n) {
    throw ShapeError(std::string(op) + ": validity mask has " + std::to_string(valid.size()) +
                     " entries for " + std::to_string(n) + " tokens");
  }
}

ParamId add_uniform(ParameterStore& store, const std::string& name, std::size_t rows,
                    std::size_t cols, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  return store.add(name, uniform_matrix(rows, cols, bound, seed, name));
}

struct Projected {
  Var q, k, v;
};

Projected project(ParamBinding& p, const Var& x, const MsaParams& w) {
  return {matmul(x, p(w.wq)), matmul(x, p(w.wk)), matmul(x, p(w.wv))};
}

AttentionIndex full_index(std::size_t queries, std::size_t keys, const std::vector<bool>& key_live,
                          const std::vector<bool>& query_active) {
  AttentionIndex index;
  for (std::size_t i = 0; i < queries; ++i) {
    index.add_query(is_valid(query_active, i));
    for (std::size_t k = 0; k < keys; ++k) index.add_slot(k, is_valid(key_live, k));
  }
  return index;
}

// The ceil map without the segments <= length precondition. Later stages can
// hold fewer tokens than there are word tokens; the surplus word tokens then
// own empty segments.
std::size_t segment_of(std::size_t j, std::size_t length, std::size_t segments) {
  return (j * segments + length - 1) / length;
}

std::vector<std::pair<std::size_t, std::size_t>> segment_ranges(std::size_t length,
                                                                std::size_t segments) {
  std::vector<std::pair<std::size_t, std::size_t>> out(segments, {0, 0});
  std::size_t begin = 0;
  for (std::size_t k = 1; k <= segments; ++k) {
    std::size_t end = begin;
    while (end < length && segment_of(end + 1, length, segments) == k) ++end;
    out[k - 1] = {begin, end};
    begin = end;
  }
  return out;
}

// A word token whose segment is empty or fully padded attends to nothing and
// comes out as zeros.
AttentionIndex segment_index(std::size_t length, std::size_t segments,
                             const std::vector<bool>& valid) {
  AttentionIndex index;
  for (auto [begin, end] : segment_ranges(length, segments)) {
    bool any = false;
    for (std::size_t r = begin; r < end; ++r) any = any || is_valid(valid, r);
    index.add_query(any);
    for (std::size_t r = begin; r < end; ++r) index.add_slot(r, is_valid(valid, r));
  }
  return index;
}

// Keys are laid out as [word tokens (num_words rows); x rows].
AttentionIndex unit_index(std::size_t length, std::size_t num_words,
                          std::optional<std::size_t> t_w, const std::vector<bool>& valid) {
  AttentionIndex index;
  for (std::size_t j = 0; j < length; ++j) {
    index.add_query(is_valid(valid, j));
    if (num_words > 0) index.add_slot(segment_of(j + 1, length, num_words) - 1, true);
    if (t_w) {
      const WindowSpec w = overlap_window(j, length, *t_w);
      for (std::size_t s = 0; s < w.slots.size(); ++s) {
        const bool real = w.real[s];
        const std::size_t pos = real ? static_cast<std::size_t>(w.slots[s]) : 0;
        index.add_slot(num_words + pos, real && is_valid(valid, pos));
      }
    } else {
      for (std::size_t k = 0; k < length; ++k) index.add_slot(num_words + k, is_valid(valid, k));
    }
  }
  return index;
}

Var output_projection(ParamBinding& p, const Var& heads_out, const MsaParams& w) {
  return matmul(heads_out, p(w.wo));
}

Var encoder_tail(ParamBinding& p, const Var& x, const Var& attention,
                 const EncoderLayerParams& layer) {
  const Var xhat = layer_norm(add(attention, x), p(layer.norm1_gamma), p(layer.norm1_beta));
  const Var hidden = relu(add_row(matmul(xhat, p(layer.ffn_w1)), p(layer.ffn_b1)));
  const Var ffn = add_row(matmul(hidden, p(layer.ffn_w2)), p(layer.ffn_b2));
  return layer_norm(add(ffn, xhat), p(layer.norm2_gamma), p(layer.norm2_beta));
}

AttentionRecord split_record(const std::vector<double>& mass, std::size_t num_words,
                             std::size_t heads, const AttentionIndex& index) {
  AttentionRecord rec;
  rec.word_mass.assign(mass.begin(), mass.begin() + static_cast<std::ptrdiff_t>(num_words));
  rec.token_mass.assign(mass.begin() + static_cast<std::ptrdiff_t>(num_words), mass.end());
  rec.heads = heads;
  rec.queries = static_cast<std::size_t>(std::count(index.active.begin(), index.active.end(), true));
  return rec;
}

}  // namespace

EncoderLayerParams add_encoder_layer(ParameterStore& store, const std::string& prefix,
                                     std::size_t d, std::size_t d_ff, std::size_t heads,
                                     std::uint64_t seed) {
  if (heads == 0 || d % heads != 0) {
    throw ParameterError("encoder layer: head count " + std::to_string(heads) +
                         " must divide width " + std::to_string(d));
  }
  EncoderLayerParams layer;
  layer.msa.wq = add_uniform(store, prefix + ".msa.wq", d, d, seed);
  layer.msa.wk = add_uniform(store, prefix + ".msa.wk", d, d, seed);
  layer.msa.wv = add_uniform(store, prefix + ".msa.wv", d, d, seed);
  layer.msa.wo = add_uniform(store, prefix + ".msa.wo", d, d, seed);
  layer.msa.heads = heads;
  layer.ffn_w1 = add_uniform(store, prefix + ".ffn.w1", d, d_ff, seed);
  layer.ffn_b1 = store.add(prefix + ".ffn.b1", Matrix(1, d_ff));
  layer.ffn_w2 = add_uniform(store, prefix + ".ffn.w2", d_ff, d, seed);
  layer.ffn_b2 = store.add(prefix + ".ffn.b2", Matrix(1, d));
  layer.norm1_gamma = store.add(prefix + ".norm1.gamma", Matrix(1, d, 1.0));
  layer.norm1_beta = store.add(prefix + ".norm1.beta", Matrix(1, d));
  layer.norm2_gamma = store.add(prefix + ".norm2.gamma", Matrix(1, d, 1.0));
  layer.norm2_beta = store.add(prefix + ".norm2.beta", Matrix(1, d));
  return layer;
}

double AttentionRecord::total_mass() const {
  return std::accumulate(token_mass.begin(), token_mass.end(), 0.0) +
         std::accumulate(word_mass.begin(), word_mass.end(), 0.0);
}

Var gathered_attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                       const AttentionIndex& index, std::vector<double>* record) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  const std::size_t d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) {
    throw ShapeError("gathered_attention: query/key/value widths or key/value rows disagree");
  }
  if (heads == 0 || d % heads != 0) {
    throw ParameterError("gathered_attention: " + std::to_string(heads) +
                         " heads do not divide width " + std::to_string(d));
  }
  if (index.queries() != qv.rows() || index.active.size() != qv.rows()) {
    throw ShapeError("gathered_attention: slot table covers " + std::to_string(index.queries()) +
                     " queries, got " + std::to_string(qv.rows()));
  }
  const std::size_t dm = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dm));
  const std::size_t nslots = index.keys.size();
  for (std::size_t s = 0; s < nslots; ++s) {
    if (index.live[s] && index.keys[s] >= kv.rows()) {
      throw ShapeError("gathered_attention: key index out of range");
    }
  }
  if (record != nullptr) record->assign(kv.rows(), 0.0);

  // probs[s * heads + h]: weight of slot s in head h.
  std::vector<double> probs(nslots * heads, 0.0);
  Matrix out(qv.rows(), d);
  std::uint64_t macs = 0;
  for (std::size_t i = 0; i < qv.rows(); ++i) {
    const std::size_t begin = index.offsets[i], end = index.offsets[i + 1];
    macs += 2ULL * (end - begin) * d;
    if (!index.active[i]) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dm;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t s = begin; s < end; ++s) {
        if (!index.live[s]) continue;
        double dot = 0.0;
        const std::size_t key = index.keys[s];
        for (std::size_t c = c0; c < c0 + dm; ++c) dot += qv(i, c) * kv(key, c);
        probs[s * heads + h] = dot * inv_sqrt;
        mx = std::max(mx, dot * inv_sqrt);
      }
      if (std::isinf(mx)) {
        throw DegenerateMaskError("attention: query " + std::to_string(i) + " has no live key");
      }
      double total = 0.0;
      for (std::size_t s = begin; s < end; ++s) {
        double& p = probs[s * heads + h];
        p = index.live[s] ? std::exp(p - mx) : 0.0;
        total += p;
      }
      for (std::size_t s = begin; s < end; ++s) {
        if (!index.live[s]) continue;
        double& p = probs[s * heads + h];
        p /= total;
        const std::size_t key = index.keys[s];
        for (std::size_t c = c0; c < c0 + dm; ++c) out(i, c) += p * vv(key, c);
        if (record != nullptr) (*record)[key] += p;
      }
    }
  }
  q.tape().count_macs(macs);

  return q.tape().record(
      std::move(out), {q, k, v},
      [q, k, v, heads, dm, inv_sqrt, index, probs = std::move(probs)](Tape& tp,
                                                                       const Matrix& g) {
        const Matrix& qv = q.value();
        const Matrix& kv = k.value();
        const Matrix& vv = v.value();
        Matrix gq(qv.rows(), qv.cols());
        Matrix gk(kv.rows(), kv.cols());
        Matrix gv(vv.rows(), vv.cols());
        for (std::size_t i = 0; i < qv.rows(); ++i) {
          if (!index.active[i]) continue;
          const std::size_t begin = index.offsets[i], end = index.offsets[i + 1];
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dm;
            // dp_s = g_i . v_s ; ds_s = p_s (dp_s - sum_t p_t dp_t)
            double weighted = 0.0;
            std::vector<double> dp(end - begin, 0.0);
            for (std::size_t s = begin; s < end; ++s) {
              if (!index.live[s]) continue;
              const std::size_t key = index.keys[s];
              const double p = probs[s * heads + h];
              double acc = 0.0;
              for (std::size_t c = c0; c < c0 + dm; ++c) {
                acc += g(i, c) * vv(key, c);
                gv(key, c) += p * g(i, c);
              }
              dp[s - begin] = acc;
              weighted += p * acc;
            }
            for (std::size_t s = begin; s < end; ++s) {
              if (!index.live[s]) continue;
              const std::size_t key = index.keys[s];
              const double ds = probs[s * heads + h] * (dp[s - begin] - weighted) * inv_sqrt;
              for (std::size_t c = c0; c < c0 + dm; ++c) {
                gq(i, c) += ds * kv(key, c);
                gk(key, c) += ds * qv(i, c);
              }
            }
          }
        }
        tp.accumulate(q, gq);
        tp.accumulate(k, gk);
        tp.accumulate(v, gv);
      });
}

MsaResult msa(ParamBinding& params, const Var& query, const Var& key, const Var& value,
              const MsaParams& weights, const std::vector<bool>& key_mask) {
  if (key.rows() != value.rows()) throw ShapeError("msa: key and value row counts differ");
  require_valid_size(key_mask, key.rows(), "msa");
  if (!key_mask.empty() && std::none_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; })) {
    throw DegenerateMaskError("msa: every key is masked");
  }
  const Var q = matmul(query, params(weights.wq));
  const Var k = matmul(key, params(weights.wk));
  const Var v = matmul(value, params(weights.wv));
  const AttentionIndex index = full_index(query.rows(), key.rows(), key_mask, {});
  std::vector<double> mass;
  const Var heads_out = gathered_attention(q, k, v, weights.heads, index, &mass);
  return {output_projection(params, heads_out, weights), split_record(mass, 0, weights.heads, index)};
}

WindowSpec overlap_window(std::size_t j, std::size_t length, std::size_t t_w) {
  if (t_w < 1) throw ParameterError("overlap_window: window must be >= 1");
  if (j >= length) throw UsageError("overlap_window: token index out of range");
  WindowSpec w;
  const auto left = static_cast<std::ptrdiff_t>(t_w / 2);
  const auto start = static_cast<std::ptrdiff_t>(j) - left;
  for (std::size_t s = 0; s < t_w; ++s) {
    const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(s);
    w.slots.push_back(pos);
    w.real.push_back(pos >= 0 && pos < static_cast<std::ptrdiff_t>(length));
  }
  return w;
}

std::size_t even_segment_of(std::size_t j, std::size_t length, std::size_t segments) {
  if (segments < 1 || segments > length) {
    throw PlanError("even segmentation: " + std::to_string(segments) + " segments over " +
                    std::to_string(length) + " tokens");
  }
  if (j < 1 || j > length) throw UsageError("even_segment_of: token index out of range");
  return (j * segments + length - 1) / length;
}

std::vector<std::pair<std::size_t, std::size_t>> even_segments(std::size_t length,
                                                               std::size_t segments) {
  even_segment_of(1, length, segments);  // validates the pair
  return segment_ranges(length, segments);
}

Var word_encoder_step(ParamBinding& params, const Var& z, const Var& x, const MsaParams& weights,
                      const std::vector<bool>& valid) {
  require_valid_size(valid, x.rows(), "word_encoder_step");
  const Var zq = matmul(z, params(weights.wq));
  const Var xk = matmul(x, params(weights.wk));
  const Var xv = matmul(x, params(weights.wv));
  const AttentionIndex index = segment_index(x.rows(), z.rows(), valid);
  return output_projection(params, gathered_attention(zq, xk, xv, weights.heads, index), weights);
}

EncoderOutput unit_encoder_step(ParamBinding& params, const Var& x, const std::optional<Var>& zbar,
                                const EncoderLayerParams& layer, std::optional<std::size_t> t_w,
                                const std::vector<bool>& valid) {
  require_valid_size(valid, x.rows(), "unit_encoder_step");
  const MsaParams& w = layer.msa;
  const Projected px = project(params, x, w);
  Var keys = px.k, values = px.v;
  std::size_t num_words = 0;
  if (zbar) {
    num_words = zbar->rows();
    keys = concat_rows(matmul(*zbar, params(w.wk)), px.k);
    values = concat_rows(matmul(*zbar, params(w.wv)), px.v);
  }
  const AttentionIndex index = unit_index(x.rows(), num_words, t_w, valid);
  std::vector<double> mass;
  const Var heads_out = gathered_attention(px.q, keys, values, w.heads, index, &mass);
  const Var out = encoder_tail(params, x, output_projection(params, heads_out, w), layer);
  return {out, split_record(mass, num_words, w.heads, index)};
}

EncoderOutput transformer_encoder_step(ParamBinding& params, const Var& x,
                                       const EncoderLayerParams& layer,
                                       const std::vector<bool>& valid) {
  require_valid_size(valid, x.rows(), "transformer_encoder_step");
  const MsaParams& w = layer.msa;
  const Projected px = project(params, x, w);
  const AttentionIndex index = full_index(x.rows(), x.rows(), valid, valid);
  std::vector<double> mass;
  const Var heads_out = gathered_attention(px.q, px.k, px.v, w.heads, index, &mass);
  const Var out = encoder_tail(params, x, output_projection(params, heads_out, w), layer);
  return {out, split_record(mass, 0, w.heads, index)};
}

SmsaResult smsa(ParamBinding& params, const Var& x, const Var& z, const MsaParams& weights,
                std::optional<std::size_t> t_w, const std::vector<bool>& valid) {
  require_valid_size(valid, x.rows(), "smsa");
  const Projected px = project(params, x, weights);
  const Var zq = matmul(z, params(weights.wq));
  const AttentionIndex words = segment_index(x.rows(), z.rows(), valid);
  const Var zbar =
      output_projection(params, gathered_attention(zq, px.k, px.v, weights.heads, words), weights);

  const Var keys = concat_rows(matmul(zbar, params(weights.wk)), px.k);
  const Var values = concat_rows(matmul(zbar, params(weights.wv)), px.v);
  const AttentionIndex index = unit_index(x.rows(), z.rows(), t_w, valid);
  std::vector<double> mass;
  const Var heads_out = gathered_attention(px.q, keys, values, weights.heads, index, &mass);
  return {output_projection(params, heads_out, weights), zbar,
          split_record(mass, z.rows(), weights.heads, index)};
}

BlockOutput hierarchical_block(ParamBinding& params, const Var& x, const std::optional<Var>& z,
                               const EncoderLayerParams& layer, std::optional<std::size_t> t_w,
                               const std::vector<bool>& valid) {
  if (!z) {
    EncoderOutput enc = unit_encoder_step(params, x, std::nullopt, layer, t_w, valid);
    return {enc.output, std::nullopt, std::move(enc.record)};
  }
  SmsaResult attn = smsa(params, x, *z, layer.msa, t_w, valid);
  const Var out = encoder_tail(params, x, attn.attention, layer);
  return {out, attn.zbar, std::move(attn.record)};
}

}  // namespace hierform
