// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>

namespace hierform {

// ---------------------------------------------------------------------------
// Confusion / metrics

Confusion::Confusion(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

Confusion Confusion::from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  Confusion cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw ShapeError("Confusion: matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.counts_[t * cm.classes_ + p] = rows[t][p];
  }
  return cm;
}

void Confusion::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) {
    throw UsageError("Confusion: label out of range");
  }
  ++counts_[truth * classes_ + predicted];
}

std::size_t Confusion::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * classes_ + predicted);
}

std::size_t Confusion::class_count(std::size_t truth) const {
  std::size_t n = 0;
  for (std::size_t p = 0; p < classes_; ++p) n += at(truth, p);
  return n;
}

std::size_t Confusion::predicted_count(std::size_t predicted) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < classes_; ++t) n += at(t, predicted);
  return n;
}

std::size_t Confusion::total() const {
  std::size_t n = 0;
  for (std::size_t v : counts_) n += v;
  return n;
}

Metrics metrics(const Confusion& cm) {
  const std::size_t c = cm.classes();
  if (c == 0) throw UsageError("metrics: confusion matrix has no classes");
  Metrics m;
  m.accuracy.resize(c);
  m.f1.resize(c);
  double weighted_acc = 0.0, weighted_f1 = 0.0;
  const auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  for (std::size_t k = 0; k < c; ++k) {
    const auto support = static_cast<double>(cm.class_count(k));
    const auto hits = static_cast<double>(cm.at(k, k));
    if (cm.class_count(k) == 0) m.empty_classes.push_back(k);
    const double recall = ratio(hits, support);
    const double precision = ratio(hits, static_cast<double>(cm.predicted_count(k)));
    m.accuracy[k] = recall;
    m.f1[k] = ratio(2.0 * precision * recall, precision + recall);
    weighted_acc += support * m.accuracy[k];
    weighted_f1 += support * m.f1[k];
  }
  const auto total = static_cast<double>(cm.total());
  m.wa = ratio(weighted_acc, total);
  m.wf1 = ratio(weighted_f1, total);
  for (std::size_t k = 0; k < c; ++k) {
    m.ua += m.accuracy[k] / static_cast<double>(c);
    m.mf1 += m.f1[k] / static_cast<double>(c);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Loss

namespace {

void validate_cce_inputs(const Matrix& probs, const Matrix& labels) {
  if (!probs.same_shape(labels)) throw ShapeError("cce_loss: probs and labels differ in shape");
  if (probs.rows() == 0) throw ValidationError("cce_loss: no samples");
  for (std::size_t s = 0; s < probs.rows(); ++s) {
    double total = 0.0;
    for (double p : probs.row(s)) {
      if (p < 0.0) throw ValidationError("cce_loss: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ValidationError("cce_loss: row " + std::to_string(s) + " sums to " +
                            std::to_string(total));
    }
  }
}

}  // namespace

double cce_loss(const Matrix& probs, const Matrix& one_hot) {
  validate_cce_inputs(probs, one_hot);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double y = one_hot.values()[i];
    if (y != 0.0) total += y * std::log2(std::clamp(probs.values()[i], kProbabilityFloor, 1.0));
  }
  return -total / static_cast<double>(probs.rows());
}

Var cce_loss(const Var& probs, const Matrix& one_hot) {
  const double value = cce_loss(probs.value(), one_hot);
  return probs.tape().record(Matrix(1, 1, value), {probs}, [probs, one_hot](Tape& tp, const Matrix& g) {
    const Matrix& p = probs.value();
    Matrix gp(p.rows(), p.cols());
    const double scale = -g(0, 0) / (static_cast<double>(p.rows()) * std::numbers::ln2);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pi = p.values()[i];
      // Flat below the clamp.
      if (pi > kProbabilityFloor) gp.values()[i] = scale * one_hot.values()[i] / pi;
    }
    tp.accumulate(probs, gp);
  });
}

Matrix one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Matrix out(labels.size(), classes);
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (labels[s] >= classes) throw UsageError("one_hot: label out of range");
    out(s, labels[s]) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

double cosine_lr(std::size_t epoch, std::size_t total, double lr0) {
  if (total == 0 || epoch > total) throw UsageError("cosine_lr: need 0 <= epoch <= total, total >= 1");
  const double floor = 0.01 * lr0;
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total);
  return floor + 0.5 * (lr0 - floor) * (1.0 + std::cos(phase));
}

void sgd_momentum_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr,
                       double momentum) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw ShapeError("sgd_momentum_step: parameter, gradient and velocity shapes differ");
  }
  auto p = param.values();
  auto g = grad.values();
  auto v = velocity.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void sgd_momentum_step(ParameterStore& params, const std::vector<Matrix>& grads,
                       std::vector<Matrix>& velocity, double lr, double momentum) {
  if (grads.size() != params.size()) throw ShapeError("sgd_momentum_step: gradient count mismatch");
  if (velocity.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix& v = params.value(params.id(i));
      velocity.emplace_back(v.rows(), v.cols());
    }
  }
  if (velocity.size() != params.size()) throw ShapeError("sgd_momentum_step: velocity count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    sgd_momentum_step(params.value(params.id(i)), grads[i], velocity[i], lr, momentum);
  }
}

std::size_t majority_vote(std::span<const std::size_t> predictions) {
  if (predictions.empty()) throw UsageError("majority_vote: no predictions");
  std::map<std::size_t, std::size_t> votes;
  for (std::size_t p : predictions) ++votes[p];
  // Ascending label order; strict comparison keeps the smallest label on ties.
  auto best = votes.begin();
  for (auto it = votes.begin(); it != votes.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double evaluate_loss(const ParameterStore& params, const LossFn& loss) {
  Tape tape;
  ParamBinding binding(tape, params);
  const Var l = loss(binding);
  const Matrix& v = l.value();
  if (v.size() != 1 || !std::isfinite(v(0, 0))) throw NumericError("grad_check: loss is not a finite scalar");
  return v(0, 0);
}

}  // namespace

GradCheckResult grad_check(ParameterStore& params, const LossFn& loss,
                           const GradCheckOptions& options) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    ParamBinding binding(tape, params);
    const Var l = loss(binding);
    if (!std::isfinite(l.value()(0, 0))) throw NumericError("grad_check: non-finite loss");
    tape.backward(l);
    analytic = binding.gradients();
  }
  if (options.corrupt) options.corrupt(analytic);

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const ParamId id = params.id(pi);
    const bool all = options.always_check && options.always_check(params.name(id));
    Matrix& value = params.value(id);
    for (std::size_t e = 0; e < value.size(); ++e) {
      if (!all && coin(rng) >= options.sample_fraction) continue;
      const double saved = value.values()[e];
      value.values()[e] = saved + options.eps;
      const double plus = evaluate_loss(params, loss);
      value.values()[e] = saved - options.eps;
      const double minus = evaluate_loss(params, loss);
      value.values()[e] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic[pi].values()[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (result.worst_param.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = params.name(id);
        result.worst_index = e;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  result.passed = result.checked > 0 && result.max_rel_error < options.threshold;
  return result;
}

// ---------------------------------------------------------------------------
// Training loop

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (!(lr >= 0.0)) throw UsageError("train: learning rate must be non-negative");
  if (batch_size < 1) throw UsageError("train: batch size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("train: momentum must be in [0, 1)");
}

ModelForward make_model_forward(const ModelParams& model, const StagePlan* plan,
                                const Ablations& ablations) {
  if (model.kind == ModelKind::hierarchical && plan == nullptr) {
    throw UsageError("make_model_forward: a stage plan is required");
  }
  return [&model, plan, ablations](ParamBinding& params, const Sample& sample) {
    if (model.kind == ModelKind::hierarchical) {
      ForwardOptions opts;
      opts.ablations = ablations;
      return hierarchical_forward(params, sample.features, sample.valid, model, *plan, opts).logits;
    }
    return baseline_transformer_forward(params, sample.features, sample.valid, model,
                                        model.layers.size())
        .logits;
  };
}

namespace {

struct SampleOutcome {
  double loss;
  std::size_t predicted;
};

SampleOutcome forward_loss(ParamBinding& binding, const ModelForward& forward, const Sample& sample,
                           std::size_t classes, Var* loss_out) {
  const Var logits = forward(binding, sample);
  if (logits.rows() != 1 || logits.cols() != classes) {
    throw ShapeError("train: model must produce 1 x " + std::to_string(classes) + " logits");
  }
  const std::size_t label = sample.label;
  const Var probs = masked_softmax(logits);
  const Var loss = cce_loss(probs, one_hot(std::span<const std::size_t>(&label, 1), classes));
  if (loss_out != nullptr) *loss_out = loss;
  const auto row = logits.value().row(0);
  const auto predicted = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  return {loss.value()(0, 0), predicted};
}

}  // namespace

EpochResult train_epoch(ParameterStore& params, const ModelForward& forward,
                        std::span<const Sample> data, std::size_t classes,
                        const TrainConfig& config, TrainState& state) {
  config.validate();
  if (data.empty()) throw UsageError("train_epoch: no samples");
  EpochResult result;
  result.epoch = state.epoch;
  result.lr = cosine_lr(std::min(state.epoch, config.epochs), config.epochs, config.lr);
  result.confusion = Confusion(classes);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i-- > 1;) {
    std::swap(order[i], order[state.rng() % (i + 1)]);
  }

  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const std::size_t end = std::min(begin + config.batch_size, order.size());
    const double inv_batch = 1.0 / static_cast<double>(end - begin);
    std::vector<Matrix> grads;
    for (std::size_t b = begin; b < end; ++b) {
      const Sample& sample = data[order[b]];
      Tape tape;
      ParamBinding binding(tape, params);
      Var loss;
      const SampleOutcome out = forward_loss(binding, forward, sample, classes, &loss);
      tape.backward(loss);
      std::vector<Matrix> g = binding.gradients();
      if (grads.empty()) {
        grads = std::move(g);
        for (Matrix& m : grads) {
          for (double& v : m.values()) v *= inv_batch;
        }
      } else {
        for (std::size_t i = 0; i < grads.size(); ++i) {
          auto dst = grads[i].values();
          auto src = g[i].values();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += inv_batch * src[k];
        }
      }
      loss_sum += out.loss;
      result.confusion.add(sample.label, out.predicted);
    }
    sgd_momentum_step(params, grads, state.velocity, result.lr, config.momentum);
  }
  result.loss = loss_sum / static_cast<double>(data.size());
  result.metrics = metrics(result.confusion);
  ++state.epoch;
  return result;
}

Evaluation evaluate(const ParameterStore& params, const ModelForward& forward,
                    std::span<const Sample> data, std::size_t classes) {
  if (data.empty()) throw UsageError("evaluate: no samples");
  Evaluation ev;
  ev.confusion = Confusion(classes);
  double total = 0.0;
  for (const Sample& sample : data) {
    Tape tape;
    ParamBinding binding(tape, params);
    const SampleOutcome out = forward_loss(binding, forward, sample, classes, nullptr);
    total += out.loss;
    ev.confusion.add(sample.label, out.predicted);
  }
  ev.loss = total / static_cast<double>(data.size());
  return ev;
}

void write_training_log_header(std::ostream& os) { os << "epoch,lr,loss,WA,UA,WF1,MF1\n"; }

void write_training_log_row(std::ostream& os, const EpochResult& r) {
  const auto old = os.precision(10);
  os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.metrics.wa << ',' << r.metrics.ua << ','
     << r.metrics.wf1 << ',' << r.metrics.mf1 << '\n';
  os.precision(old);
}

}  // namespace hierform
