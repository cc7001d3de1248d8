// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace hierform {

namespace {

constexpr const char* kStageNames[4] = {"frame", "phone", "word", "utterance"};

std::uint64_t input_params(const ModelDims& dims) {
  return dims.input_width == dims.d ? 0 : dims.input_width * dims.d + dims.d;
}

std::uint64_t classifier_params(const ModelDims& dims) {
  const std::uint64_t h = dims.classifier_width();
  return dims.d * h + h + h * dims.classes + dims.classes;
}

void add_row(CostReport& report, CostRow row) {
  row.kind = report.kind;
  report.attn_total += row.attn_flops;
  report.ffn_total += row.ffn_flops;
  report.merge_total += row.merge_flops;
  report.params_total += row.params;
  report.rows.push_back(std::move(row));
}

double percent(std::int64_t delta, std::uint64_t reference) {
  return reference == 0 ? 0.0 : 100.0 * static_cast<double>(delta) / static_cast<double>(reference);
}

}  // namespace

std::uint64_t msa_flops(std::uint64_t length, std::uint64_t d) {
  return 4 * length * d * d + 2 * length * length * d;
}

std::uint64_t smsa_flops(std::uint64_t length, std::uint64_t word_tokens, std::uint64_t window,
                         std::uint64_t d) {
  return 4 * (length + word_tokens) * d * d + 2 * length * (window + 2) * d;
}

std::uint64_t attention_flops(std::uint64_t length, std::uint64_t word_tokens,
                              std::optional<std::uint64_t> window, std::uint64_t d) {
  const std::uint64_t keys = window.value_or(length) + (word_tokens > 0 ? 1 : 0);
  const std::uint64_t word_encoder = word_tokens > 0 ? 2 * length * d : 0;
  return 4 * (length + word_tokens) * d * d + 2 * length * keys * d + word_encoder;
}

std::uint64_t ffn_flops(std::uint64_t length, std::uint64_t d, std::uint64_t d_ff) {
  return 2 * (2 * length * d * d_ff);
}

std::uint64_t merge_flops(std::uint64_t length_in, std::uint64_t length_out,
                          std::uint64_t word_tokens, std::uint64_t d) {
  return length_in * d + (length_out + word_tokens) * d * d;
}

std::uint64_t encoder_layer_params(std::uint64_t d, std::uint64_t d_ff) {
  return 4 * d * d + (d * d_ff + d_ff) + (d_ff * d + d) + 4 * d;
}

std::uint64_t merging_block_params(std::uint64_t d) { return d * d + d + 2 * (2 * d); }

CostReport model_flops(const StagePlan& plan, ModelKind kind, const ModelDims& dims,
                       const Ablations& ablations) {
  const std::uint64_t d = dims.d;
  const std::uint64_t d_ff = dims.ffn_width();
  const std::uint64_t layer_params = encoder_layer_params(d, d_ff);
  CostReport report;
  report.kind = kind;
  if (const std::uint64_t p = input_params(dims); p > 0) add_row(report, {"input", 0, kind, 0, 0, 0, p});

  if (kind == ModelKind::baseline) {
    const std::uint64_t t = plan.length[0];
    for (std::size_t l = 0; l < plan.total_layers(); ++l) {
      add_row(report, {"encoder", l, kind, msa_flops(t, d), ffn_flops(t, d, d_ff), 0, layer_params});
    }
  } else {
    const std::uint64_t tz = ablations.word_encoder ? plan.word_tokens : 0;
    std::uint64_t t = plan.length[0];
    for (std::size_t s = 0; s < 3; ++s) {
      const std::optional<std::uint64_t> window =
          ablations.unit_encoder ? std::optional<std::uint64_t>(plan.window[s]) : std::nullopt;
      for (std::size_t l = 0; l < plan.layers[s]; ++l) {
        add_row(report, {kStageNames[s], l, kind, attention_flops(t, tz, window, d),
                         ffn_flops(t, d, d_ff), 0, layer_params});
      }
      const std::uint64_t next = ablations.merging ? plan.length[s + 1] : t;
      add_row(report, {"merge" + std::to_string(s + 1), 0, kind, 0, 0,
                       ablations.merging ? merge_flops(t, next, tz, d) : 0,
                       merging_block_params(d)});
      t = next;
    }
    const std::uint64_t tu = t + tz;
    for (std::size_t l = 0; l < plan.layers[3]; ++l) {
      add_row(report, {kStageNames[3], l, kind, msa_flops(tu, d), ffn_flops(tu, d, d_ff), 0,
                       layer_params});
    }
    add_row(report, {"word_tokens", 0, kind, 0, 0, 0, plan.word_tokens * d});
  }
  add_row(report, {"classifier", 0, kind, 0, 0, 0, classifier_params(dims)});
  return report;
}

CostComparison compare_costs(const CostReport& reference, const CostReport& candidate) {
  CostComparison c;
  c.compute_delta = static_cast<std::int64_t>(candidate.compute_total()) -
                    static_cast<std::int64_t>(reference.compute_total());
  c.params_delta = static_cast<std::int64_t>(candidate.params_total) -
                   static_cast<std::int64_t>(reference.params_total);
  c.compute_gain_percent = percent(c.compute_delta, reference.compute_total());
  c.params_gain_percent = percent(c.params_delta, reference.params_total);
  return c;
}

ParamCount count_params(const ModelParams& model) {
  ParamCount count;
  count.total = model.store.scalar_count();
  if (model.word_tokens) count.word_tokens = model.store.value(*model.word_tokens).size();
  return count;
}

ParamDiff param_diff(const ModelParams& reference, const ModelParams& candidate) {
  const ParamCount a = count_params(reference);
  const ParamCount b = count_params(candidate);
  ParamDiff diff;
  diff.structural = static_cast<std::int64_t>(b.structural()) - static_cast<std::int64_t>(a.structural());
  diff.word_tokens = static_cast<std::int64_t>(b.word_tokens) - static_cast<std::int64_t>(a.word_tokens);
  diff.total = static_cast<std::int64_t>(b.total) - static_cast<std::int64_t>(a.total);
  diff.structural_percent = percent(diff.structural, a.structural());
  return diff;
}

std::vector<double> attention_weight_profile(const std::vector<AttentionRecord>& records,
                                             std::size_t layer) {
  if (layer >= records.size()) {
    throw UsageError("attention profile: layer " + std::to_string(layer) + " of " +
                     std::to_string(records.size()) + " recorded layers");
  }
  const std::vector<double>& mass = records[layer].token_mass;
  if (mass.empty()) throw UsageError("attention profile: layer has no tokens");
  const double mx = *std::max_element(mass.begin(), mass.end());
  std::vector<double> out(mass.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    out[i] = std::exp(mass[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

void write_cost_table(std::ostream& os, const CostReport& baseline, const CostReport& candidate) {
  const auto line = [&os](const std::string& kind, const std::string& stage, const std::string& layer,
                          const std::string& attn, const std::string& ffn, const std::string& merge,
                          const std::string& params) {
    os << std::left << std::setw(14) << kind << std::setw(12) << stage << std::right
       << std::setw(6) << layer << std::setw(16) << attn << std::setw(16) << ffn << std::setw(14)
       << merge << std::setw(14) << params << '\n';
  };
  line("kind", "stage", "layer", "attn_flops", "ffn_flops", "merge_flops", "params");
  for (const CostReport* r : {&baseline, &candidate}) {
    for (const CostRow& row : r->rows) {
      line(to_string(row.kind), row.stage, std::to_string(row.layer), std::to_string(row.attn_flops),
           std::to_string(row.ffn_flops), std::to_string(row.merge_flops),
           std::to_string(row.params));
    }
  }
  for (const CostReport* r : {&baseline, &candidate}) {
    line(to_string(r->kind), "total", "", std::to_string(r->attn_total),
         std::to_string(r->ffn_total), std::to_string(r->merge_total),
         std::to_string(r->params_total));
  }
  const CostComparison c = compare_costs(baseline, candidate);
  os << std::fixed << std::setprecision(2) << "gain: flops(attn+ffn) " << std::showpos
     << c.compute_gain_percent << "%, params " << c.params_gain_percent << "%" << std::noshowpos
     << '\n';
  os.unsetf(std::ios::fixed);
}

void write_cost_csv(std::ostream& os, const std::vector<CostReport>& reports) {
  os << "stage,layer,kind,attn_flops,ffn_flops,merge_flops,params\n";
  for (const CostReport& r : reports) {
    for (const CostRow& row : r.rows) {
      os << row.stage << ',' << row.layer << ',' << to_string(row.kind) << ',' << row.attn_flops
         << ',' << row.ffn_flops << ',' << row.merge_flops << ',' << row.params << '\n';
    }
  }
}

}  // namespace hierform
