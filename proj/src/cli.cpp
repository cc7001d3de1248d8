// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "hierform/analysis.hpp"
#include "hierform/config.hpp"
#include "hierform/io.hpp"
#include "hierform/training.hpp"

namespace hierform {

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string preset;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.overrides, "Override a configuration key (key=value), repeatable")
      ->allow_extra_args(false);
  cmd->add_option("--preset", o.preset, "Start from a built-in configuration")
      ->check(CLI::IsMember({"default", "tiny"}));
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig base = o.preset == "tiny" ? tiny_preset() : RunConfig{};
  std::optional<fs::path> path;
  if (!o.config_path.empty()) path = o.config_path;
  return load_config(path, o.overrides, base);
}

ModelKind parse_kind(const std::string& name) {
  return name == "baseline" ? ModelKind::baseline : ModelKind::hierarchical;
}

std::string triple(const std::array<std::size_t, 3>& a) {
  return "(" + std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + ")";
}

std::string quad(const std::array<std::size_t, 4>& a) {
  return "(" + std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," +
         std::to_string(a[3]) + ")";
}

std::string number(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

void write_plan(std::ostream& os, const StagePlan& plan, double mismatch) {
  os << "hop_ms=" << number(plan.hop_ms) << " frames=" << plan.length[0]
     << " mismatch=" << number(mismatch) << '\n';
  os << "spans_ms=(" << number(plan.token_span_ms[0]) << ',' << number(plan.token_span_ms[1]) << ','
     << number(plan.token_span_ms[2]) << ")\n";
  os << "t_w=" << triple(plan.window) << '\n';
  os << "m=" << triple(plan.merge) << '\n';
  os << "T=" << quad(plan.length) << '\n';
  os << "T_z=" << plan.word_tokens << '\n';
  os << "layers=" << quad(plan.layers) << '\n';
}

struct BuiltModel {
  StagePlan plan;
  ModelParams params;
};

BuiltModel build_model(const RunConfig& config, ModelKind kind, std::size_t frames, double hop_ms,
                       std::size_t input_width) {
  BuiltModel m{derive_stage_plan(config.durations, hop_ms, frames, plan_overrides(config)), {}};
  const ModelDims dims = model_dims(config, input_width);
  m.params = kind == ModelKind::hierarchical
                 ? init_hierarchical(dims, m.plan, config.seed)
                 : init_baseline(dims, m.plan.total_layers(), config.seed);
  return m;
}

PaddedSequence prepare(const FeatureSequence& seq, const RunConfig& config) {
  if (config.pad_policy == PadPolicy::pad) return pad_or_truncate(seq, config.max_len);
  return {seq, std::vector<bool>(seq.frames(), true)};
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FeatureFormatError(FeatureErrorCode::io, "cannot write " + path);
  return out;
}

// ---------------------------------------------------------------------------

struct PlanCommand {
  CommonOptions common;
  std::optional<std::size_t> frames;
  std::optional<double> hop_ms;
  std::string features;

  void attach(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("plan", "Print the stage plan for a frame count and hop");
    add_common(cmd, common);
    cmd->add_option("-T,--frames", frames, "Frame count T_1 (default: max_len)");
    cmd->add_option("--hop", hop_ms, "Frame hop in ms (default: hop_ms)");
    cmd->add_option("--features", features, "Take T_1 and hop from a feature file")
        ->check(CLI::ExistingFile);
  }

  int run(std::ostream& out) const {
    const RunConfig config = resolve_config(common);
    std::size_t t = frames.value_or(config.max_len);
    double hop = hop_ms.value_or(config.hop_ms);
    if (!features.empty()) {
      const FeatureSequence seq = load_features(features);
      hop = hop_ms.value_or(seq.hop_ms);
      t = frames.value_or(config.pad_policy == PadPolicy::pad ? config.max_len : seq.frames());
    }
    const StagePlan plan = derive_stage_plan(config.durations, hop, t, plan_overrides(config));
    write_plan(out, plan, config.durations.mismatch);
    return kExitOk;
  }
};

struct FlopsCommand {
  CommonOptions common;
  std::optional<std::size_t> frames;
  std::optional<double> hop_ms;
  std::optional<std::size_t> input_width;
  std::string dataset;
  std::string csv;

  void attach(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("flops", "Cost report for the baseline and the hierarchical model");
    add_common(cmd, common);
    cmd->add_option("-T,--frames", frames, "Frame count T_1 (default: max_len)");
    cmd->add_option("--hop", hop_ms, "Frame hop in ms (default: hop_ms)");
    cmd->add_option("--input-width", input_width, "Feature width (default: d)");
    cmd->add_option("--dataset", dataset, "Use a corpus maximum length as T_1")
        ->check(CLI::IsMember({"iemocap", "meld", "pitt", "daic"}));
    cmd->add_option("--csv", csv, "Also write the report as CSV");
  }

  int run(std::ostream& out) const {
    const RunConfig config = resolve_config(common);
    static const std::map<std::string, std::size_t> kLengths = {
        {"iemocap", 326}, {"meld", 224}, {"pitt", 328}, {"daic", 426}};
    std::size_t t = config.max_len;
    if (!dataset.empty()) t = kLengths.at(dataset);
    t = frames.value_or(t);
    const StagePlan plan =
        derive_stage_plan(config.durations, hop_ms.value_or(config.hop_ms), t, plan_overrides(config));
    const ModelDims dims = model_dims(config, input_width.value_or(config.d));
    const CostReport base = model_flops(plan, ModelKind::baseline, dims);
    const CostReport ours = model_flops(plan, ModelKind::hierarchical, dims, config.ablations);
    write_cost_table(out, base, ours);
    if (!csv.empty()) {
      std::ofstream file = open_output(csv);
      write_cost_csv(file, {base, ours});
    }
    return kExitOk;
  }
};

struct InferCommand {
  CommonOptions common;
  std::string features;
  std::string weights;
  std::string model = "hierarchical";
  std::string attention_csv;
  std::size_t layer = 0;

  void attach(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("infer", "Logits and predicted class for one feature file");
    add_common(cmd, common);
    cmd->add_option("features", features, "Feature file (.hfm binary or .csv)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("-w,--weights", weights, "Weights saved by `train` (default: seeded init)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--model", model, "Model kind")->check(CLI::IsMember({"hierarchical", "baseline"}));
    cmd->add_option("--record-attention", attention_csv, "Write the attention profile CSV here");
    cmd->add_option("--layer", layer, "Encoder layer profiled by --record-attention");
  }

  int run(std::ostream& out) const {
    const RunConfig config = resolve_config(common);
    const FeatureSequence seq = load_features(features);
    const PaddedSequence input = prepare(seq, config);
    BuiltModel built =
        build_model(config, parse_kind(model), input.sequence.frames(), seq.hop_ms, seq.width());
    if (!weights.empty()) load_weights(weights, built.params.store);

    ForwardOptions options;
    options.ablations = config.ablations;
    options.record_attention = !attention_csv.empty();
    const Prediction p = predict(built.params, &built.plan, input.sequence.values, input.valid, options);

    out << "logits=";
    for (std::size_t c = 0; c < p.logits.size(); ++c) out << (c ? "," : "") << number(p.logits[c]);
    out << "\npredicted=" << p.label << '\n';
    if (!attention_csv.empty()) {
      const std::vector<double> profile = attention_weight_profile(p.records, layer);
      std::ofstream file = open_output(attention_csv);
      file << "token,weight\n" << std::setprecision(17);
      for (std::size_t i = 0; i < profile.size(); ++i) file << i << ',' << profile[i] << '\n';
    }
    return kExitOk;
  }
};

struct TrainCommand {
  CommonOptions common;
  std::string data_dir;
  std::string labels_csv;
  std::string log_csv;
  std::string weights_out;
  std::string model = "hierarchical";

  void attach(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("train", "Train on a directory of feature files");
    add_common(cmd, common);
    cmd->add_option("data", data_dir, "Directory of .hfm/.csv feature files")
        ->required()
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--labels", labels_csv, "CSV of file,label (default: labels stored in the files)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--log", log_csv, "Training log CSV")->required();
    cmd->add_option("-o,--out", weights_out, "Where to save the trained weights")->required();
    cmd->add_option("--model", model, "Model kind")->check(CLI::IsMember({"hierarchical", "baseline"}));
  }

  std::map<std::string, std::size_t> read_labels() const {
    std::map<std::string, std::size_t> labels;
    if (labels_csv.empty()) return labels;
    std::ifstream in(labels_csv);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw UsageError("labels: expected file,label in '" + line + "'");
      std::string name = line.substr(0, comma);
      std::string value = line.substr(comma + 1);
      if (!value.empty() && value.back() == '\r') value.pop_back();
      try {
        labels[name] = std::stoul(value);
      } catch (const std::exception&) {
        if (labels.empty() && name == "file") continue;  // header row
        throw UsageError("labels: bad label '" + value + "'");
      }
    }
    return labels;
  }

  int run(std::ostream& out) const {
    const RunConfig config = resolve_config(common);
    const std::map<std::string, std::size_t> labels = read_labels();

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(data_dir)) {
      const std::string ext = entry.path().extension().string();
      if (!entry.is_regular_file() || (ext != ".hfm" && ext != ".csv")) continue;
      if (!labels_csv.empty() && fs::equivalent(entry.path(), labels_csv)) continue;
      files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("train: no .hfm or .csv files in " + data_dir);

    std::vector<Sample> data;
    double hop = 0.0;
    std::size_t width = 0;
    for (const fs::path& path : files) {
      const FeatureSequence seq = load_features(path);
      if (data.empty()) {
        hop = seq.hop_ms;
        width = seq.width();
      } else if (seq.hop_ms != hop || seq.width() != width) {
        throw UsageError("train: " + path.filename().string() + " differs in hop or width");
      }
      std::size_t label = 0;
      if (const auto it = labels.find(path.filename().string()); it != labels.end()) {
        label = it->second;
      } else if (seq.label) {
        label = *seq.label;
      } else {
        throw UsageError("train: no label for " + path.filename().string());
      }
      if (label >= config.classes) {
        throw UsageError("train: label " + std::to_string(label) + " of " + path.filename().string() +
                         " is outside [0, classes)");
      }
      PaddedSequence input = prepare(seq, config);
      if (!data.empty() && input.sequence.frames() != data.front().features.rows()) {
        throw UsageError("train: sequences differ in length; use pad_policy=pad");
      }
      data.push_back({std::move(input.sequence.values), std::move(input.valid), label});
    }

    BuiltModel built = build_model(config, parse_kind(model), data.front().features.rows(), hop, width);
    const ModelForward forward = make_model_forward(built.params, &built.plan, config.ablations);
    const TrainConfig train = train_config(config);
    TrainState state(config.seed);
    std::ofstream log = open_output(log_csv);
    write_training_log_header(log);
    EpochResult last;
    for (std::size_t e = 0; e < train.epochs; ++e) {
      last = train_epoch(built.params.store, forward, data, config.classes, train, state);
      write_training_log_row(log, last);
    }
    save_weights(weights_out, built.params.store);
    out << "samples=" << data.size() << " epochs=" << train.epochs << " loss=" << number(last.loss)
        << " WA=" << number(last.metrics.wa) << " UA=" << number(last.metrics.ua) << '\n';
    return kExitOk;
  }
};

struct GradcheckCommand {
  CommonOptions common;
  std::optional<std::size_t> frames;
  double fraction = 0.05;

  void attach(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("gradcheck", "Finite-difference check for every ablation combination");
    add_common(cmd, common);
    cmd->add_option("-T,--frames", frames, "Frame count (default: max_len)");
    cmd->add_option("--fraction", fraction, "Sampled fraction of ordinary parameters")
        ->check(CLI::Range(0.0, 1.0));
  }

  int run(std::ostream& out, std::ostream& err) const {
    const RunConfig config = resolve_config(common);
    const std::size_t t = frames.value_or(config.max_len);
    const Matrix features = uniform_matrix(t, config.d, 1.0, config.seed, "gradcheck.features");
    const Matrix target = one_hot(std::vector<std::size_t>{0}, config.classes);
    bool all_passed = true;
    for (int combo = 7; combo >= 0; --combo) {
      Ablations ab{(combo & 4) != 0, (combo & 2) != 0, (combo & 1) != 0};
      BuiltModel built = build_model(config, ModelKind::hierarchical, t, config.hop_ms, config.d);
      const LossFn loss = [&](ParamBinding& p) {
        ForwardOptions options;
        options.ablations = ab;
        const Var logits = hierarchical_forward(p, features, {}, built.params, built.plan, options).logits;
        return cce_loss(masked_softmax(logits), target);
      };
      GradCheckOptions options;
      options.sample_fraction = fraction;
      options.seed = config.seed;
      const GradCheckResult r = grad_check(built.params.store, loss, options);
      all_passed = all_passed && r.passed;
      out << "unit_encoder=" << (ab.unit_encoder ? "on" : "off")
          << " word_encoder=" << (ab.word_encoder ? "on" : "off")
          << " merging=" << (ab.merging ? "on" : "off") << " max_rel_error=" << std::scientific
          << std::setprecision(3) << r.max_rel_error << std::defaultfloat << " checked=" << r.checked
          << (r.passed ? " PASS" : " FAIL") << '\n';
    }
    if (!all_passed) {
      err << "gradcheck: analytic and numeric gradients disagree\n";
      return kExitCheckFailed;
    }
    return kExitOk;
  }
};

struct VoteCommand {
  std::string input;
  std::string output;

  void attach(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("vote", "Subject-level labels by majority vote");
    cmd->add_option("predictions", input, "CSV of subject,prediction")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", output, "Write subject,label,utterances here instead of stdout");
  }

  int run(std::ostream& out) const {
    std::ifstream in(input);
    std::map<std::string, std::vector<std::size_t>> by_subject;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) {
        throw UsageError("vote: line " + std::to_string(lineno) + " is not subject,prediction");
      }
      const std::string subject = line.substr(0, comma);
      const std::string value = line.substr(comma + 1);
      std::size_t used = 0;
      std::size_t label = 0;
      try {
        label = std::stoul(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size() || value.front() == '-') {
        if (lineno == 1) continue;  // header row
        throw UsageError("vote: line " + std::to_string(lineno) + ": bad prediction '" + value + "'");
      }
      by_subject[subject].push_back(label);
    }
    if (by_subject.empty()) throw UsageError("vote: no predictions in " + input);

    std::ofstream file;
    std::ostream* os = &out;
    if (!output.empty()) {
      file = open_output(output);
      os = &file;
    }
    *os << "subject,label,utterances\n";
    for (const auto& [subject, predictions] : by_subject) {
      *os << subject << ',' << majority_vote(predictions) << ',' << predictions.size() << '\n';
    }
    return kExitOk;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical windowed-attention models for speech feature sequences", "hierform"};
  app.require_subcommand(1);
  PlanCommand plan;
  FlopsCommand flops;
  InferCommand infer;
  TrainCommand train;
  GradcheckCommand gradcheck;
  VoteCommand vote;
  plan.attach(app);
  flops.attach(app);
  infer.attach(app);
  train.attach(app);
  gradcheck.attach(app);
  vote.attach(app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand("plan")) return plan.run(out);
    if (app.got_subcommand("flops")) return flops.run(out);
    if (app.got_subcommand("infer")) return infer.run(out);
    if (app.got_subcommand("train")) return train.run(out);
    if (app.got_subcommand("gradcheck")) return gradcheck.run(out, err);
    if (app.got_subcommand("vote")) return vote.run(out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const PlanError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace hierform
