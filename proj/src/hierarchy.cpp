// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/hierarchy.hpp"

#include <algorithm>
#include <cmath>

namespace hierform {

namespace {

// Smallest token count whose span covers `duration_ms`. The relative slack
// absorbs binary noise in products such as 200 * 0.9.
std::size_t tokens_covering(double duration_ms, double span_ms) {
  const double ratio = duration_ms / span_ms;
  const double tokens = std::ceil(ratio - 1e-9 * std::max(1.0, ratio));
  return std::max<std::size_t>(1, static_cast<std::size_t>(tokens));
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

ParamId add_uniform(ParameterStore& store, const std::string& name, std::size_t rows,
                    std::size_t cols, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  return store.add(name, uniform_matrix(rows, cols, bound, seed, name));
}

AffineParams add_affine(ParameterStore& store, const std::string& prefix, std::size_t in,
                        std::size_t out, std::uint64_t seed) {
  return {add_uniform(store, prefix + ".weight", in, out, seed),
          store.add(prefix + ".bias", Matrix(1, out))};
}

Var apply_affine(ParamBinding& p, const Var& x, const AffineParams& a) {
  return add_row(matmul(x, p(a.weight)), p(a.bias));
}

void add_common(ModelParams& model, std::size_t layers, std::uint64_t seed) {
  const ModelDims& dims = model.dims;
  if (dims.input_width != dims.d) {
    model.input_projection = add_affine(model.store, "input", dims.input_width, dims.d, seed);
  }
  for (std::size_t i = 0; i < layers; ++i) {
    model.layers.push_back(add_encoder_layer(model.store, "layers." + std::to_string(i), dims.d,
                                             dims.ffn_width(), dims.heads, seed));
  }
}

void add_classifier(ModelParams& model, std::uint64_t seed) {
  const ModelDims& dims = model.dims;
  model.classifier.hidden =
      add_affine(model.store, "classifier.hidden", dims.d, dims.classifier_width(), seed);
  model.classifier.output =
      add_affine(model.store, "classifier.output", dims.classifier_width(), dims.classes, seed);
}

Var input_features(ParamBinding& p, const Matrix& features, const ModelParams& model) {
  if (features.cols() != model.dims.input_width) {
    throw ShapeError("forward: features have width " + std::to_string(features.cols()) +
                     ", model expects " + std::to_string(model.dims.input_width));
  }
  Var x = p.tape().constant(features);
  if (model.input_projection) x = apply_affine(p, x, *model.input_projection);
  return x;
}

Var classify(ParamBinding& p, const Var& tokens, const std::vector<bool>& valid,
             const ModelParams& model) {
  const Var pooled = mean_rows(tokens, valid);
  const Var hidden = relu(apply_affine(p, pooled, model.classifier.hidden));
  return apply_affine(p, hidden, model.classifier.output);
}

std::vector<bool> validity_or_all(const std::vector<bool>& valid, std::size_t n) {
  if (valid.empty()) return std::vector<bool>(n, true);
  if (valid.size() != n) {
    throw ShapeError("forward: validity mask has " + std::to_string(valid.size()) +
                     " entries for " + std::to_string(n) + " frames");
  }
  if (std::none_of(valid.begin(), valid.end(), [](bool b) { return b; })) {
    throw DegenerateMaskError("forward: no valid frame");
  }
  return {valid.begin(), valid.end()};
}

}  // namespace

void DurationStats::validate() const {
  if (!(phone_short_ms > 0.0 && phone_short_ms < phone_long_ms)) {
    throw PlanError("duration stats: need 0 < phone_short < phone_long");
  }
  if (!(word_short_ms > 0.0 && word_short_ms < word_long_ms)) {
    throw PlanError("duration stats: need 0 < word_short < word_long");
  }
  if (!(mismatch > 0.0) || !std::isfinite(mismatch)) {
    throw PlanError("duration stats: mismatch must be positive");
  }
}

StagePlan derive_stage_plan(const DurationStats& stats, double hop_ms, std::size_t frames,
                            const PlanOverrides& overrides) {
  stats.validate();
  if (!(hop_ms > 0.0) || !std::isfinite(hop_ms)) throw PlanError("plan: hop must be positive");
  if (frames < 1) throw PlanError("plan: need at least one frame");
  if (overrides.d < 1) throw PlanError("plan: width must be positive");

  const double k = stats.mismatch;
  const double phone_short = stats.phone_short_ms * k;
  const double phone_long = stats.phone_long_ms * k;
  const double word_short = stats.word_short_ms * k;
  const double word_long = stats.word_long_ms * k;

  StagePlan plan;
  plan.hop_ms = hop_ms;
  plan.layers = overrides.layers;
  plan.d = overrides.d;

  const std::array<double, 3> window_ms{phone_short, 2.0 * phone_long, 2.0 * word_long};
  const std::array<double, 3> merge_ms{phone_short, word_short, word_long};
  double span = hop_ms;
  for (std::size_t s = 0; s < 3; ++s) {
    plan.token_span_ms[s] = span;
    plan.window[s] = overrides.windows ? (*overrides.windows)[s] : tokens_covering(window_ms[s], span);
    plan.merge[s] = overrides.merges ? (*overrides.merges)[s] : tokens_covering(merge_ms[s], span);
    if (plan.window[s] < 1 || plan.merge[s] < 1) {
      throw PlanError("plan: windows and merge scales must be >= 1");
    }
    span *= static_cast<double>(plan.merge[s]);
  }

  plan.length[0] = frames;
  for (std::size_t s = 0; s < 3; ++s) plan.length[s + 1] = ceil_div(plan.length[s], plan.merge[s]);

  if (overrides.word_tokens) {
    plan.word_tokens = *overrides.word_tokens;
  } else {
    plan.word_tokens =
        tokens_covering(static_cast<double>(frames) * hop_ms, word_long);
  }
  if (plan.word_tokens < 1 || plan.word_tokens > frames) {
    throw PlanError("plan: " + std::to_string(plan.word_tokens) + " word tokens for " +
                    std::to_string(frames) + " frames");
  }
  return plan;
}

Matrix init_word_tokens(std::size_t count, std::size_t d, std::uint64_t seed) {
  if (count < 1 || d < 1) throw ParameterError("word tokens: count and width must be >= 1");
  return uniform_matrix(count, d, 1.0 / std::sqrt(static_cast<double>(d)), seed, "word_tokens");
}

const char* to_string(ModelKind kind) {
  return kind == ModelKind::baseline ? "baseline" : "hierarchical";
}

void ModelDims::validate() const {
  if (input_width < 1 || d < 1 || classes < 1) {
    throw ParameterError("model: widths and class count must be >= 1");
  }
  if (heads < 1 || d % heads != 0) {
    throw ParameterError("model: head count " + std::to_string(heads) + " must divide d=" +
                         std::to_string(d));
  }
  if (ffn_width() < 1 || classifier_width() < 1) {
    throw ParameterError("model: FFN and classifier widths must be >= 1");
  }
}

ModelParams init_hierarchical(const ModelDims& dims, const StagePlan& plan, std::uint64_t seed) {
  dims.validate();
  if (plan.d != dims.d) throw PlanError("model: plan width differs from model width");
  ModelParams model;
  model.kind = ModelKind::hierarchical;
  model.dims = dims;
  add_common(model, plan.total_layers(), seed);
  model.word_tokens =
      model.store.add("word_tokens", init_word_tokens(plan.word_tokens, dims.d, seed));
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string prefix = "merge." + std::to_string(s);
    MergingParams m;
    m.weight = add_uniform(model.store, prefix + ".weight", dims.d, dims.d, seed);
    m.bias = model.store.add(prefix + ".bias", Matrix(1, dims.d));
    m.x_norm_gamma = model.store.add(prefix + ".x_norm.gamma", Matrix(1, dims.d, 1.0));
    m.x_norm_beta = model.store.add(prefix + ".x_norm.beta", Matrix(1, dims.d));
    m.z_norm_gamma = model.store.add(prefix + ".z_norm.gamma", Matrix(1, dims.d, 1.0));
    m.z_norm_beta = model.store.add(prefix + ".z_norm.beta", Matrix(1, dims.d));
    model.merges.push_back(m);
  }
  add_classifier(model, seed);
  return model;
}

ModelParams init_baseline(const ModelDims& dims, std::size_t layers, std::uint64_t seed) {
  dims.validate();
  ModelParams model;
  model.kind = ModelKind::baseline;
  model.dims = dims;
  add_common(model, layers, seed);
  add_classifier(model, seed);
  return model;
}

MergeOutput merging_block(ParamBinding& params, const Var& xbar, const std::optional<Var>& zbar,
                          std::size_t m, const MergingParams& merge, const std::vector<bool>& valid) {
  if (m < 1) throw ParameterError("merging block: merge scale must be >= 1");
  const Var w = params(merge.weight);
  const Var b = params(merge.bias);
  MergeOutput out;
  const Var pooled = avg_pool_rows(xbar, m, valid);
  out.x = layer_norm(add_row(matmul(pooled, w), b), params(merge.x_norm_gamma),
                     params(merge.x_norm_beta));
  if (zbar) {
    out.z = layer_norm(add_row(matmul(*zbar, w), b), params(merge.z_norm_gamma),
                       params(merge.z_norm_beta));
  }
  out.valid = valid.empty() ? std::vector<bool>(pooled.rows(), true) : pool_validity(valid, m);
  return out;
}

ForwardResult hierarchical_forward(ParamBinding& params, const Matrix& features,
                                   const std::vector<bool>& valid, const ModelParams& model,
                                   const StagePlan& plan, const ForwardOptions& options) {
  if (model.kind != ModelKind::hierarchical) {
    throw UsageError("hierarchical_forward: model was built as a baseline");
  }
  if (features.rows() != plan.length[0]) {
    throw PlanError("hierarchical_forward: " + std::to_string(features.rows()) +
                    " frames, plan expects " + std::to_string(plan.length[0]));
  }
  if (plan.total_layers() != model.layers.size()) {
    throw PlanError("hierarchical_forward: plan has " + std::to_string(plan.total_layers()) +
                    " layers, model has " + std::to_string(model.layers.size()));
  }
  if (plan.d != model.dims.d) throw PlanError("hierarchical_forward: plan width mismatch");
  const Matrix& tokens = model.store.value(*model.word_tokens);
  if (tokens.rows() != plan.word_tokens) {
    throw PlanError("hierarchical_forward: model holds " + std::to_string(tokens.rows()) +
                    " word tokens, plan expects " + std::to_string(plan.word_tokens));
  }
  const Ablations& ab = options.ablations;

  std::vector<bool> mask = validity_or_all(valid, features.rows());
  Var x = input_features(params, features, model);
  std::optional<Var> z;
  if (ab.word_encoder) z = params(*model.word_tokens);

  ForwardResult result;
  std::size_t layer = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::optional<std::size_t> t_w =
        ab.unit_encoder ? std::optional<std::size_t>(plan.window[s]) : std::nullopt;
    for (std::size_t l = 0; l < plan.layers[s]; ++l) {
      BlockOutput block = hierarchical_block(params, x, z, model.layers[layer++], t_w, mask);
      x = block.x;
      z = block.z;
      if (options.record_attention) result.records.push_back(std::move(block.record));
    }
    if (ab.merging) {
      MergeOutput merged = merging_block(params, x, z, plan.merge[s], model.merges[s], mask);
      x = merged.x;
      z = merged.z;
      mask = std::move(merged.valid);
    }
  }

  // Utterance stage over [x; z].
  if (z) {
    x = concat_rows(x, *z);
    mask.resize(mask.size() + z->rows(), true);
  }
  for (std::size_t l = 0; l < plan.layers[3]; ++l) {
    EncoderOutput enc = transformer_encoder_step(params, x, model.layers[layer++], mask);
    x = enc.output;
    if (options.record_attention) result.records.push_back(std::move(enc.record));
  }
  result.logits = classify(params, x, mask, model);
  return result;
}

ForwardResult baseline_transformer_forward(ParamBinding& params, const Matrix& features,
                                           const std::vector<bool>& valid, const ModelParams& model,
                                           std::size_t layers, bool record_attention) {
  if (layers > model.layers.size()) {
    throw UsageError("baseline forward: " + std::to_string(layers) + " layers requested, model has " +
                     std::to_string(model.layers.size()));
  }
  const std::vector<bool> mask = validity_or_all(valid, features.rows());
  Var x = input_features(params, features, model);
  ForwardResult result;
  for (std::size_t l = 0; l < layers; ++l) {
    EncoderOutput enc = transformer_encoder_step(params, x, model.layers[l], mask);
    x = enc.output;
    if (record_attention) result.records.push_back(std::move(enc.record));
  }
  result.logits = classify(params, x, mask, model);
  return result;
}

Prediction predict(const ModelParams& model, const StagePlan* plan, const Matrix& features,
                   const std::vector<bool>& valid, const ForwardOptions& options) {
  Tape tape;
  ParamBinding params(tape, model.store);
  ForwardResult fwd;
  if (model.kind == ModelKind::hierarchical) {
    if (plan == nullptr) throw UsageError("predict: a stage plan is required");
    fwd = hierarchical_forward(params, features, valid, model, *plan, options);
  } else {
    fwd = baseline_transformer_forward(params, features, valid, model, model.layers.size(),
                                       options.record_attention);
  }
  Prediction out;
  const Matrix& logits = fwd.logits.value();
  out.logits.assign(logits.values().begin(), logits.values().end());
  out.label = static_cast<std::size_t>(
      std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin());
  out.records = std::move(fwd.records);
  return out;
}

}  // namespace hierform
