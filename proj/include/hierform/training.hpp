// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hierform/hierarchy.hpp"
#include "hierform/numerics.hpp"

namespace hierform {

// Rows are true classes, columns predicted classes.
class Confusion {
 public:
  explicit Confusion(std::size_t classes = 0);
  static Confusion from_rows(const std::vector<std::vector<std::size_t>>& rows);

  void add(std::size_t truth, std::size_t predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t classes() const { return classes_; }
  std::size_t class_count(std::size_t truth) const;
  std::size_t predicted_count(std::size_t predicted) const;
  std::size_t total() const;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

struct Metrics {
  double wa = 0.0;
  double ua = 0.0;
  double wf1 = 0.0;
  double mf1 = 0.0;
  std::vector<double> accuracy;  // per class (recall)
  std::vector<double> f1;
  std::vector<std::size_t> empty_classes;  // classes without samples; Acc = F1 = 0
};

// WA = sum_c S_c Acc(c) / sum_c S_c, UA = mean Acc(c), and likewise for F1.
// 0/0 precision, recall or F1 is taken as 0.
Metrics metrics(const Confusion& cm);

// Probability floor applied before the logarithm.
constexpr double kProbabilityFloor = 1e-12;

// -(1/S) sum_s sum_c y_sc log2(p_sc). Note the base-2 logarithm: this is the
// natural-log cross-entropy divided by ln 2.
double cce_loss(const Matrix& probs, const Matrix& one_hot);
Var cce_loss(const Var& probs, const Matrix& one_hot);

Matrix one_hot(std::span<const std::size_t> labels, std::size_t classes);

// Decays from lr0 to 0.01 * lr0 over `total` epochs along half a cosine.
double cosine_lr(std::size_t epoch, std::size_t total, double lr0);

// Classical momentum: v <- momentum * v + g; p <- p - lr * v.
void sgd_momentum_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr,
                       double momentum = 0.9);
// Store-wide step; `velocity` is zero-initialized on first use.
void sgd_momentum_step(ParameterStore& params, const std::vector<Matrix>& grads,
                       std::vector<Matrix>& velocity, double lr, double momentum = 0.9);

// Most frequent label, ties going to the smallest label.
std::size_t majority_vote(std::span<const std::size_t> predictions);

using LossFn = std::function<Var(ParamBinding&)>;

struct GradCheckOptions {
  double eps = 1e-6;
  double sample_fraction = 0.05;
  // Parameters checked entry by entry regardless of sampling.
  std::function<bool(const std::string&)> always_check = [](const std::string& name) {
    return name.starts_with("merge.") || name == "word_tokens";
  };
  std::uint64_t seed = 0;
  double threshold = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor). Central differences at
  // eps = 1e-6 carry ~1e-10 of rounding noise, so smaller gradients are
  // compared on an absolute scale.
  double floor = 1e-5;
  // Test hook applied to the analytic gradients before comparison.
  std::function<void(std::vector<Matrix>&)> corrupt;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

// Central differences against reverse-mode gradients. `params` is perturbed
// in place and restored.
GradCheckResult grad_check(ParameterStore& params, const LossFn& loss,
                           const GradCheckOptions& options = {});

struct Sample {
  Matrix features;
  std::vector<bool> valid;  // empty: all frames valid
  std::size_t label = 0;
};

struct TrainConfig {
  std::size_t epochs = 120;
  double lr = 5e-4;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

// Produces 1 x C logits for one sample on the binding's tape.
using ModelForward = std::function<Var(ParamBinding&, const Sample&)>;

ModelForward make_model_forward(const ModelParams& model, const StagePlan* plan,
                                const Ablations& ablations = {});

struct TrainState {
  explicit TrainState(std::uint64_t seed) : rng(seed) {}
  std::vector<Matrix> velocity;
  std::size_t epoch = 0;
  std::mt19937_64 rng;
};

struct EpochResult {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  Confusion confusion;
  Metrics metrics;
};

// One shuffled pass of minibatch SGD at this epoch's cosine rate. Loss and
// confusion are measured on the forward passes made during the epoch.
EpochResult train_epoch(ParameterStore& params, const ModelForward& forward,
                        std::span<const Sample> data, std::size_t classes,
                        const TrainConfig& config, TrainState& state);

struct Evaluation {
  double loss = 0.0;
  Confusion confusion;
};
Evaluation evaluate(const ParameterStore& params, const ModelForward& forward,
                    std::span<const Sample> data, std::size_t classes);

// CSV: epoch,lr,loss,WA,UA,WF1,MF1
void write_training_log_header(std::ostream& os);
void write_training_log_row(std::ostream& os, const EpochResult& result);

}  // namespace hierform
