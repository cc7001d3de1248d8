// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace hierform {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_mask_size(const std::vector<bool>& mask, std::size_t n, const char* op) {
  if (!mask.empty() && mask.size() != n) {
    throw ShapeError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                     " for " + std::to_string(n) + " entries");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Var / Tape

Tape& Var::tape() const {
  if (tape_ == nullptr) throw UsageError("Var: not bound to a tape");
  return *tape_;
}

const Matrix& Var::value() const { return tape().value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(const Var& v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw UsageError("Tape: value is not recorded on this tape");
  }
}

Var Tape::constant(Matrix value) {
  if (!value.all_finite()) throw NumericError("Tape::constant: non-finite input");
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Matrix value) {
  if (!value.all_finite()) throw NumericError("Tape::leaf: non-finite input");
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::leaf_ref(const Matrix& value) {
  if (!value.all_finite()) throw NumericError("Tape::leaf_ref: non-finite input");
  Node n;
  n.ref = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("Tape::record: operation produced NaN/Inf");
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    check_owner(in);
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Matrix& Tape::value(const Var& v) const {
  check_owner(v);
  return nodes_[v.id()].value();
}

Matrix& Tape::grad_buffer(const Var& v) {
  check_owner(v);
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && !n.value().empty()) {
    n.grad = Matrix(n.value().rows(), n.value().cols());
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, const Matrix& delta) {
  check_owner(v);
  if (!nodes_[v.id()].requires_grad) return;
  Matrix& g = grad_buffer(v);
  require_same_shape(g, delta, "Tape::accumulate");
  auto dst = g.values();
  auto src = delta.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Matrix Tape::grad(const Var& v) const {
  check_owner(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Matrix(n.value().rows(), n.value().cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  check_owner(loss);
  const Matrix& lv = nodes_[loss.id()].value();
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw UsageError("backward: loss must be a 1x1 scalar, got " + shape_str(lv));
  }
  for (Node& n : nodes_) n.grad = Matrix();
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // Closures only touch gradients of earlier nodes, so n.grad stays put.
    n.backward(*this, n.grad);
  }
}

void backward(Tape& tape, const Var& loss) { tape.backward(loss); }

// ---------------------------------------------------------------------------
// Primitives

Var matmul(const Var& a, const Var& b) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_str(av) + " x " + shape_str(bv));
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto orow = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      if (aip == 0.0) continue;
      auto brow = bv.row(p);
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  t.count_macs(static_cast<std::uint64_t>(n) * k * m);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (tp.requires_grad(a)) {
      Matrix& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g(i, j) * bv(p, j);
          ga(i, p) += acc;
        }
      }
    }
    if (tp.requires_grad(b)) {
      Matrix& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb(p, j) += aip * g(i, j);
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  auto dst = out.values();
  auto src = b.value().values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  auto dst = out.values();
  auto src = b.value().values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    Matrix neg = g;
    for (double& v : neg.values()) v = -v;
    tp.accumulate(b, neg);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  auto dst = out.values();
  auto src = b.value().values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    Matrix ga = g, gb = g;
    auto av = a.value().values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga.values()[i] *= bv[i];
      gb.values()[i] *= av[i];
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

Var scale(const Var& x, double factor) {
  Matrix out = x.value();
  for (double& v : out.values()) v *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& tp, const Matrix& g) {
    Matrix gx = g;
    for (double& v : gx.values()) v *= factor;
    tp.accumulate(x, gx);
  });
}

Var add_row(const Var& x, const Var& bias) {
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row: bias " + shape_str(bv) + " for input " + shape_str(xv));
  }
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  }
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g);
    if (tp.requires_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      }
      tp.accumulate(bias, gb);
    }
  });
}

Var relu(const Var& x) {
  Matrix out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [x](Tape& tp, const Matrix& g) {
    Matrix gx = g;
    auto xv = x.value().values();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (!(xv[i] > 0.0)) gx.values()[i] = 0.0;
    }
    tp.accumulate(x, gx);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Matrix& xv = x.value();
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gv.rows() != 1 || gv.cols() != c || bv.rows() != 1 || bv.cols() != c) {
    throw ShapeError("layer_norm: gamma " + shape_str(gv) + ", beta " + shape_str(bv) +
                     " for input " + shape_str(xv));
  }
  if (eps < 0.0) throw ParameterError("layer_norm: eps must be non-negative");
  Matrix xhat(n, c);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double denom = var + eps;
    inv_std[r] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t k = 0; k < c; ++k) xhat(r, k) = (row[k] - mean) * inv_std[r];
  }
  Matrix out(n, c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < c; ++k) out(r, k) = xhat(r, k) * gv(0, k) + bv(0, k);
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& tp, const Matrix& g) {
        const Matrix& gv = gamma.value();
        const std::size_t n = g.rows(), c = g.cols();
        if (tp.requires_grad(gamma) || tp.requires_grad(beta)) {
          Matrix gg(1, c), gb(1, c);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t k = 0; k < c; ++k) {
              gg(0, k) += g(r, k) * xhat(r, k);
              gb(0, k) += g(r, k);
            }
          }
          tp.accumulate(gamma, gg);
          tp.accumulate(beta, gb);
        }
        if (tp.requires_grad(x)) {
          Matrix gx(n, c);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < n; ++r) {
            double mean_dy = 0.0, mean_dy_xhat = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
              const double dy = g(r, k) * gv(0, k);
              mean_dy += dy;
              mean_dy_xhat += dy * xhat(r, k);
            }
            mean_dy *= inv_c;
            mean_dy_xhat *= inv_c;
            for (std::size_t k = 0; k < c; ++k) {
              const double dy = g(r, k) * gv(0, k);
              gx(r, k) = inv_std[r] * (dy - mean_dy - xhat(r, k) * mean_dy_xhat);
            }
          }
          tp.accumulate(x, gx);
        }
      });
}

Var masked_softmax(const Var& logits, const std::vector<bool>& mask) {
  const Matrix& lv = logits.value();
  require_mask_size(mask, lv.cols(), "masked_softmax");
  const auto live = [&](std::size_t c) { return mask.empty() || mask[c]; };
  Matrix out(lv.rows(), lv.cols());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < lv.cols(); ++c) {
      if (live(c)) mx = std::max(mx, lv(r, c));
    }
    if (std::isinf(mx) && mx < 0.0) {
      throw DegenerateMaskError("masked_softmax: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < lv.cols(); ++c) {
      const double shifted = live(c) ? lv(r, c) - mx : -std::numeric_limits<double>::infinity();
      out(r, c) = std::exp(shifted);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < lv.cols(); ++c) out(r, c) /= total;
  }
  Matrix probs = out;
  return logits.tape().record(std::move(out), {logits},
                              [logits, probs = std::move(probs)](Tape& tp, const Matrix& g) {
                                Matrix gx(g.rows(), g.cols());
                                for (std::size_t r = 0; r < g.rows(); ++r) {
                                  double dot = 0.0;
                                  for (std::size_t c = 0; c < g.cols(); ++c) {
                                    dot += g(r, c) * probs(r, c);
                                  }
                                  for (std::size_t c = 0; c < g.cols(); ++c) {
                                    gx(r, c) = probs(r, c) * (g(r, c) - dot);
                                  }
                                }
                                tp.accumulate(logits, gx);
                              });
}

std::vector<bool> pool_validity(const std::vector<bool>& valid, std::size_t m) {
  if (m < 1) throw ParameterError("pool_validity: window must be >= 1");
  const std::size_t out_rows = (valid.size() + m - 1) / m;
  std::vector<bool> out(out_rows, false);
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) out[i / m] = true;
  }
  return out;
}

Var avg_pool_rows(const Var& x, std::size_t m, const std::vector<bool>& valid) {
  if (m < 1) throw ParameterError("avg_pool_rows: window must be >= 1");
  const Matrix& xv = x.value();
  require_mask_size(valid, xv.rows(), "avg_pool_rows");
  const std::size_t t = xv.rows(), c = xv.cols();
  const std::size_t out_rows = (t + m - 1) / m;
  // weight[i]: contribution of input row i to its pooled row.
  std::vector<double> weight(t, 0.0);
  for (std::size_t k = 0; k < out_rows; ++k) {
    const std::size_t begin = k * m, end = std::min(begin + m, t);
    std::size_t count = 0;
    for (std::size_t i = begin; i < end; ++i) count += (valid.empty() || valid[i]) ? 1 : 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (count > 0 && (valid.empty() || valid[i])) weight[i] = 1.0 / static_cast<double>(count);
    }
  }
  Matrix out(out_rows, c);
  for (std::size_t i = 0; i < t; ++i) {
    if (weight[i] == 0.0) continue;
    for (std::size_t k = 0; k < c; ++k) out(i / m, k) += weight[i] * xv(i, k);
  }
  return x.tape().record(std::move(out), {x},
                         [x, m, weight = std::move(weight)](Tape& tp, const Matrix& g) {
                           const Matrix& xv = x.value();
                           Matrix gx(xv.rows(), xv.cols());
                           for (std::size_t i = 0; i < xv.rows(); ++i) {
                             for (std::size_t k = 0; k < xv.cols(); ++k) {
                               gx(i, k) = weight[i] * g(i / m, k);
                             }
                           }
                           tp.accumulate(x, gx);
                         });
}

Var concat_rows(const Var& top, const Var& bottom) {
  const Matrix& a = top.value();
  const Matrix& b = bottom.value();
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: " + shape_str(a) + " over " + shape_str(b));
  }
  std::vector<double> data(a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  const std::size_t split = a.rows();
  return top.tape().record(Matrix(a.rows() + b.rows(), a.cols(), std::move(data)), {top, bottom},
                           [top, bottom, split](Tape& tp, const Matrix& g) {
                             const std::size_t c = g.cols();
                             Matrix ga(split, c), gb(g.rows() - split, c);
                             std::copy_n(g.values().begin(), split * c, ga.values().begin());
                             std::copy(g.values().begin() + split * c, g.values().end(),
                                       gb.values().begin());
                             tp.accumulate(top, ga);
                             tp.accumulate(bottom, gb);
                           });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const Matrix& xv = x.value();
  if (begin > end || end > xv.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of " + std::to_string(xv.rows()) + " rows");
  }
  const std::size_t c = xv.cols();
  std::vector<double> data(xv.values().begin() + begin * c, xv.values().begin() + end * c);
  return x.tape().record(Matrix(end - begin, c, std::move(data)), {x},
                         [x, begin](Tape& tp, const Matrix& g) {
                           Matrix& gx = tp.grad_buffer(x);
                           for (std::size_t r = 0; r < g.rows(); ++r) {
                             for (std::size_t k = 0; k < g.cols(); ++k) gx(begin + r, k) += g(r, k);
                           }
                         });
}

Var mean_rows(const Var& x, const std::vector<bool>& valid) {
  const Matrix& xv = x.value();
  require_mask_size(valid, xv.rows(), "mean_rows");
  std::size_t count = 0;
  for (std::size_t r = 0; r < xv.rows(); ++r) count += (valid.empty() || valid[r]) ? 1 : 0;
  if (count == 0) throw DegenerateMaskError("mean_rows: no valid rows");
  std::vector<double> weight(xv.rows(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    if (valid.empty() || valid[r]) weight[r] = 1.0 / static_cast<double>(count);
  }
  Matrix out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t k = 0; k < xv.cols(); ++k) out(0, k) += weight[r] * xv(r, k);
  }
  return x.tape().record(std::move(out), {x},
                         [x, weight = std::move(weight)](Tape& tp, const Matrix& g) {
                           const Matrix& xv = x.value();
                           Matrix gx(xv.rows(), xv.cols());
                           for (std::size_t r = 0; r < xv.rows(); ++r) {
                             for (std::size_t k = 0; k < xv.cols(); ++k) {
                               gx(r, k) = weight[r] * g(0, k);
                             }
                           }
                           tp.accumulate(x, gx);
                         });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape().record(Matrix(1, 1, total), {x}, [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, Matrix(x.value().rows(), x.value().cols(), g(0, 0)));
  });
}

// ---------------------------------------------------------------------------
// Parameters

ParamId ParameterStore::add(std::string name, Matrix value) {
  if (index_.contains(name)) throw UsageError("ParameterStore: duplicate name '" + name + "'");
  const std::size_t id = entries_.size();
  index_.emplace(name, id);
  entries_.push_back({std::move(name), std::move(value)});
  return ParamId{id};
}

ParamId ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("ParameterStore: no parameter named '" + name + "'");
  return ParamId{it->second};
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

Var ParamBinding::operator()(ParamId id) {
  auto it = bound_.find(id.index);
  if (it != bound_.end()) return it->second;
  Var v = tape_->leaf_ref(store_->value(id));
  bound_.emplace(id.index, v);
  return v;
}

std::vector<Matrix> ParamBinding::gradients() const {
  std::vector<Matrix> out;
  out.reserve(store_->size());
  for (std::size_t i = 0; i < store_->size(); ++i) {
    auto it = bound_.find(i);
    if (it == bound_.end()) {
      const Matrix& v = store_->value(ParamId{i});
      out.emplace_back(v.rows(), v.cols());
    } else {
      out.push_back(tape_->grad(it->second));
    }
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed,
                      std::string_view stream) {
  std::uint64_t state = seed ^ fnv1a(stream);
  Matrix out(rows, cols);
  for (double& v : out.values()) {
    const double unit = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    v = (2.0 * unit - 1.0) * bound;
  }
  return out;
}

}  // namespace hierform
