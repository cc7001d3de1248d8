// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "hierform/training.hpp"
#include "oracles.hpp"

using namespace hierform;

namespace {

Confusion random_confusion(std::mt19937_64& rng, std::size_t classes) {
  std::vector<std::vector<std::size_t>> rows(classes, std::vector<std::size_t>(classes));
  for (auto& row : rows)
    for (auto& v : row) v = rng() % 7;
  return Confusion::from_rows(rows);
}

std::vector<std::vector<std::size_t>> rows_of(const Confusion& cm) {
  std::vector<std::vector<std::size_t>> rows(cm.classes(), std::vector<std::size_t>(cm.classes()));
  for (std::size_t t = 0; t < cm.classes(); ++t)
    for (std::size_t p = 0; p < cm.classes(); ++p) rows[t][p] = cm.at(t, p);
  return rows;
}

struct TinySetup {
  StagePlan plan;
  ModelParams model;
  Matrix features;
  Matrix target;
};

TinySetup tiny_setup(std::uint64_t seed) {
  PlanOverrides o;
  o.layers = {1, 1, 1, 1};
  o.word_tokens = 2;
  o.d = 8;
  TinySetup s;
  s.plan = derive_stage_plan({}, 20.0, 12, o);
  ModelDims dims;
  dims.input_width = 8;
  dims.d = 8;
  dims.heads = 2;
  dims.classes = 2;
  dims.d_cls = 16;
  s.model = init_hierarchical(dims, s.plan, seed);
  s.features = uniform_matrix(12, 8, 1.0, seed, "features");
  s.target = one_hot(std::vector<std::size_t>{1}, 2);
  return s;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("cross-entropy hand values") {
  CHECK(cce_loss(Matrix::from_rows({{0.5, 0.5}}), Matrix::from_rows({{1, 0}})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cce_loss(Matrix::from_rows({{0, 1}}), Matrix::from_rows({{0, 1}})) == 0.0);
  CHECK(cce_loss(Matrix(1, 4, 0.25), Matrix::from_rows({{0, 0, 1, 0}})) == doctest::Approx(2.0).epsilon(1e-15));
  // Mean over samples.
  CHECK(cce_loss(Matrix::from_rows({{0.5, 0.5}, {0.25, 0.75}}), Matrix::from_rows({{1, 0}, {1, 0}})) ==
        doctest::Approx(1.5).epsilon(1e-15));
  // Clamped: a zero probability on the true class costs -log2(1e-12).
  CHECK(cce_loss(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 1}})) ==
        doctest::Approx(-std::log2(1e-12)).epsilon(1e-12));
  CHECK_THROWS_AS(cce_loss(Matrix::from_rows({{0.5, 0.4}}), Matrix::from_rows({{1, 0}})), ValidationError);
  CHECK_THROWS_AS(cce_loss(Matrix::from_rows({{1.5, -0.5}}), Matrix::from_rows({{1, 0}})), ValidationError);
}

TEST_CASE("cross-entropy is non-negative and zero only at the labels") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix p = oracle::random_matrix(3, 4, rng, 0.01, 1.0);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double v : p.row(r)) s += v;
      for (double& v : p.row(r)) v /= s;
    }
    std::vector<std::size_t> labels{rng() % 4, rng() % 4, rng() % 4};
    CHECK(cce_loss(p, one_hot(labels, 4)) > 0.0);
    CHECK(cce_loss(one_hot(labels, 4), one_hot(labels, 4)) == 0.0);
  }
}

TEST_CASE("cross-entropy gradient through softmax") {
  std::mt19937_64 rng(5);
  const Matrix logits = oracle::random_matrix(3, 4, rng, -2, 2);
  const Matrix y = one_hot(std::vector<std::size_t>{0, 3, 1}, 4);
  Tape t;
  const Var l = t.leaf(logits);
  const Var loss = cce_loss(masked_softmax(l), y);
  CHECK(std::abs(loss.value()(0, 0) - cce_loss(masked_softmax(t.constant(logits)).value(), y)) < 1e-15);
  t.backward(loss);
  const auto f = [&](const Matrix& x) {
    Tape tt;
    return cce_loss(masked_softmax(tt.constant(x)).value(), y);
  };
  CHECK(oracle::max_relative_error(t.grad(l), oracle::numeric_gradient(f, logits)) < 1e-6);
  // Closed form: (softmax - y) / (S ln 2).
  const Matrix p = masked_softmax(t.constant(logits)).value();
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(std::abs(t.grad(l).values()[i] - (p.values()[i] - y.values()[i]) / (3 * std::numbers::ln2)) < 1e-12);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 120, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(cosine_lr(120, 120, 0.1) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(cosine_lr(60, 120, 0.1) == doctest::Approx(0.0505).epsilon(1e-12));
  for (std::size_t total : {1u, 7u, 50u})
    for (std::size_t e = 0; e < total; ++e) CHECK(cosine_lr(e + 1, total, 1.0) <= cosine_lr(e, total, 1.0));
  CHECK_THROWS_AS(cosine_lr(5, 4, 1.0), UsageError);
}

TEST_CASE("momentum SGD") {
  const Matrix p0 = Matrix::from_rows({{1, -2}});
  const Matrix g = Matrix::from_rows({{0.5, 0.25}});

  Matrix p = p0, v(1, 2);
  sgd_momentum_step(p, Matrix(1, 2), v, 0.1);
  CHECK(p == p0);

  p = p0;
  v = Matrix(1, 2);
  sgd_momentum_step(p, g, v, 0.1, 0.0);
  CHECK(max_abs_diff(p, Matrix::from_rows({{0.95, -2.025}})) < 1e-15);

  p = p0;
  v = Matrix(1, 2);
  sgd_momentum_step(p, g, v, 0.1);
  sgd_momentum_step(p, g, v, 0.1);
  for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs((p0(0, c) - p(0, c)) - 0.1 * g(0, c) * 2.9) < 1e-15);

  CHECK_THROWS_AS(sgd_momentum_step(p, Matrix(2, 2), v, 0.1), ShapeError);
}

TEST_CASE("metrics hand values") {
  const Metrics m = metrics(Confusion::from_rows({{2, 1}, {0, 1}}));
  CHECK(m.wa == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(std::abs(m.ua - 0.8333) < 1e-4);
  CHECK(std::abs(m.wf1 - 0.7667) < 1e-4);
  CHECK(std::abs(m.mf1 - 0.7333) < 1e-4);

  const Metrics diag = metrics(Confusion::from_rows({{3, 0, 0}, {0, 5, 0}, {0, 0, 1}}));
  for (double v : {diag.wa, diag.ua, diag.wf1, diag.mf1}) CHECK(v == 1.0);

  const Metrics bal = metrics(Confusion::from_rows({{3, 1, 0}, {2, 2, 0}, {1, 0, 3}}));
  CHECK(std::abs(bal.wa - bal.ua) < 1e-15);
  CHECK(std::abs(bal.wf1 - bal.mf1) < 1e-15);
}

TEST_CASE("metrics agree with a per-sample recount") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Confusion cm = random_confusion(rng, 2 + trial % 4);
    const Metrics m = metrics(cm);
    const oracle::BruteMetrics b = oracle::brute_force_metrics(rows_of(cm));
    CHECK(std::abs(m.wa - b.wa) < 1e-12);
    CHECK(std::abs(m.ua - b.ua) < 1e-12);
    CHECK(std::abs(m.wf1 - b.wf1) < 1e-12);
    CHECK(std::abs(m.mf1 - b.mf1) < 1e-12);
  }
}

TEST_CASE("metrics are invariant under relabeling the classes") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 4;
    const Confusion cm = random_confusion(rng, c);
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> rows(c, std::vector<std::size_t>(c));
    for (std::size_t t = 0; t < c; ++t)
      for (std::size_t p = 0; p < c; ++p) rows[perm[t]][perm[p]] = cm.at(t, p);
    const Metrics a = metrics(cm), b = metrics(Confusion::from_rows(rows));
    CHECK(std::abs(a.wa - b.wa) < 1e-12);
    CHECK(std::abs(a.ua - b.ua) < 1e-12);
    CHECK(std::abs(a.wf1 - b.wf1) < 1e-12);
    CHECK(std::abs(a.mf1 - b.mf1) < 1e-12);
  }
}

TEST_CASE("empty classes are flagged and scored zero") {
  const Metrics m = metrics(Confusion::from_rows({{2, 1, 0}, {0, 0, 0}, {1, 0, 3}}));
  CHECK(m.empty_classes == std::vector<std::size_t>{1});
  CHECK(m.accuracy[1] == 0.0);
  CHECK(m.f1[1] == 0.0);
  CHECK(m.ua == doctest::Approx((2.0 / 3 + 0 + 3.0 / 4) / 3).epsilon(1e-12));

  Confusion cm(2);
  cm.add(0, 1);
  CHECK(cm.class_count(0) == 1);
  CHECK(cm.predicted_count(1) == 1);
  CHECK(cm.total() == 1);
  CHECK_THROWS_AS(cm.add(2, 0), UsageError);
}

TEST_CASE("majority vote") {
  CHECK(majority_vote(std::vector<std::size_t>{1, 1, 0}) == 1);
  CHECK(majority_vote(std::vector<std::size_t>{0}) == 0);
  CHECK(majority_vote(std::vector<std::size_t>{0, 1}) == 0);
  CHECK(majority_vote(std::vector<std::size_t>{3, 2, 2, 3}) == 2);
  CHECK(majority_vote(std::vector<std::size_t>{1000000, 5, 1000000}) == 1000000);
  CHECK_THROWS_AS(majority_vote(std::vector<std::size_t>{}), UsageError);
}

TEST_CASE("gradient check on a linear model") {
  ParameterStore store;
  std::mt19937_64 rng(13);
  const ParamId w = store.add("w", Matrix(4, 3));
  const Matrix c = oracle::random_matrix(4, 3, rng, 0.5, 1.5);
  const LossFn loss = [&](ParamBinding& p) { return sum(mul(p(w), p.tape().constant(c))); };
  GradCheckOptions opt;
  opt.sample_fraction = 1.0;
  const GradCheckResult r = grad_check(store, loss, opt);
  CHECK(r.checked == 12);
  CHECK(r.max_rel_error < 1e-10);
  CHECK(r.passed);

  // Away from the origin, with a step and values that are exact in binary.
  for (std::size_t i = 0; i < 12; ++i) store.value(w).values()[i] = static_cast<double>(i) / 8.0 - 0.5;
  Matrix dyadic(4, 3);
  for (std::size_t i = 0; i < 12; ++i) dyadic.values()[i] = 0.25 + static_cast<double>(i % 5) / 4.0;
  const LossFn exact = [&](ParamBinding& p) { return sum(mul(p(w), p.tape().constant(dyadic))); };
  opt.eps = std::ldexp(1.0, -20);
  CHECK(grad_check(store, exact, opt).max_rel_error < 1e-10);

  opt.corrupt = [](std::vector<Matrix>& g) { g[0].values()[5] *= 2.0; };
  const GradCheckResult bad = grad_check(store, exact, opt);
  CHECK(bad.max_rel_error > 0.3);
  CHECK_FALSE(bad.passed);
  CHECK(bad.worst_index == 5);
}

TEST_CASE("gradient check on the tiny hierarchical model") {
  TinySetup s = tiny_setup(21);
  const LossFn loss = [&](ParamBinding& p) {
    const Var logits = hierarchical_forward(p, s.features, {}, s.model, s.plan).logits;
    return cce_loss(masked_softmax(logits), s.target);
  };
  const GradCheckResult r = grad_check(s.model.store, loss);
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.passed);
  CHECK(r.checked > 0);
  {
    // A dead head would make the check vacuous.
    Tape t;
    ParamBinding p(t, s.model.store);
    t.backward(loss(p));
    CHECK(t.grad(p(s.model.merges[1].weight)).values()[3] != 0.0);
  }

  GradCheckOptions opt;
  opt.corrupt = [&](std::vector<Matrix>& g) {
    g[s.model.merges[1].weight.index].values()[3] *= 2.0;
  };
  CHECK(grad_check(s.model.store, loss, opt).max_rel_error > 0.3);
}

TEST_CASE("training epochs") {
  TinySetup s = tiny_setup(31);
  std::vector<Sample> data;
  for (std::size_t i = 0; i < 10; ++i)
    data.push_back({uniform_matrix(12, 8, 1.0, i, "sample"), {}, i % 2});
  const ModelForward forward = make_model_forward(s.model, &s.plan);

  SUBCASE("zero learning rate leaves the parameters untouched") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    const ParameterStore before = s.model.store;
    TrainState state(1);
    const EpochResult r = train_epoch(s.model.store, forward, data, 2, cfg, state);
    for (std::size_t i = 0; i < before.size(); ++i)
      CHECK(before.value(before.id(i)) == s.model.store.value(s.model.store.id(i)));
    const Evaluation ev = evaluate(s.model.store, forward, data, 2);
    CHECK(std::abs(r.loss - ev.loss) < 1e-12);
    CHECK(r.confusion.total() == 10);
  }
  SUBCASE("same seed, same trajectory") {
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    std::vector<double> losses[2];
    for (int run = 0; run < 2; ++run) {
      TinySetup fresh = tiny_setup(31);
      const ModelForward f = make_model_forward(fresh.model, &fresh.plan);
      TrainState state(5);
      for (std::size_t e = 0; e < 3; ++e) losses[run].push_back(train_epoch(fresh.model.store, f, data, 2, cfg, state).loss);
    }
    CHECK(losses[0] == losses[1]);
  }
  SUBCASE("invalid settings") {
    TrainConfig cfg;
    cfg.epochs = 0;
    TrainState state(1);
    CHECK_THROWS_AS(train_epoch(s.model.store, forward, data, 2, cfg, state), UsageError);
    cfg = {};
    cfg.lr = -1;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    data[0].label = 7;
    cfg = {};
    CHECK_THROWS(train_epoch(s.model.store, forward, data, 2, cfg, state));
  }
}

TEST_CASE("training log format") {
  EpochResult r;
  r.epoch = 3;
  r.lr = 0.5;
  r.loss = 0.25;
  r.metrics.wa = 1;
  std::ostringstream os;
  write_training_log_header(os);
  write_training_log_row(os, r);
  CHECK(os.str() == "epoch,lr,loss,WA,UA,WF1,MF1\n3,0.5,0.25,1,0,0,0\n");
}

}  // TEST_SUITE
