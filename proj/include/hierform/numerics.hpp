// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices and a reverse-mode autodiff tape.
//
// Every differentiable operation records its output on a Tape together with
// a closure that propagates the output gradient to its inputs. Nodes are
// appended in evaluation order, so walking the tape from the back visits
// operations in reverse topological order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hierform/error.hpp"

namespace hierform {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Largest absolute elementwise difference; throws ShapeError on mismatch.
double max_abs_diff(const Matrix& a, const Matrix& b);

// Entries uniform in (-bound, bound), fully determined by `seed` and the
// `stream` label. Platform independent.
Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed,
                      std::string_view stream = {});

// Multiply-accumulate counter. When attached to a Tape, matmul and the
// attention kernels add the number of scalar MACs they execute.
struct MacCounter {
  std::uint64_t macs = 0;
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const;
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient of the node's output and pushes contributions into
  // its inputs through accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var leaf(Matrix value);
  // Leaf that aliases caller-owned storage; `value` must outlive the tape.
  Var leaf_ref(const Matrix& value);

  // Records the output of a primitive. `inputs` decides whether the node
  // takes part in backward at all. Throws NumericError on non-finite output.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  const Matrix& value(const Var& v) const;
  bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }

  // Adds `delta` to the gradient of `v`; no-op for nodes without gradient.
  void accumulate(const Var& v, const Matrix& delta);
  // Mutable gradient buffer of `v`, allocated as zeros on first use.
  Matrix& grad_buffer(const Var& v);

  // Gradient of the last backward() call with respect to `v`; zeros when `v`
  // did not participate.
  Matrix grad(const Var& v) const;

  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

  void set_mac_counter(MacCounter* counter) { counter_ = counter; }
  void count_macs(std::uint64_t n) {
    if (counter_ != nullptr) counter_->macs += n;
  }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;

    const Matrix& value() const { return ref != nullptr ? *ref : owned; }
  };

  Var push(Node node);
  void check_owner(const Var& v) const;

  std::vector<Node> nodes_;
  MacCounter* counter_ = nullptr;
};

// Free-function form of Tape::backward.
void backward(Tape& tape, const Var& loss);

// ---------------------------------------------------------------------------
// Differentiable primitives
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& x, double factor);
// x (n×c) + bias (1×c) broadcast over rows.
Var add_row(const Var& x, const Var& bias);
Var relu(const Var& x);

constexpr double kLayerNormEps = 1e-5;
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps);

// Row-wise softmax. Masked columns (mask[c] == false) get -inf logits, so
// they come out as exact zeros. An empty mask means every column is live.
Var masked_softmax(const Var& logits, const std::vector<bool>& mask = {});

// Mean over consecutive windows of `m` rows with stride `m`. The trailing
// partial window is averaged over its actual row count. When `valid` is
// given, only rows flagged valid contribute; a window without valid rows
// yields zeros.
Var avg_pool_rows(const Var& x, std::size_t m, const std::vector<bool>& valid = {});
std::vector<bool> pool_validity(const std::vector<bool>& valid, std::size_t m);

Var concat_rows(const Var& top, const Var& bottom);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
// Mean over rows flagged valid (all rows when `valid` is empty), as 1×c.
Var mean_rows(const Var& x, const std::vector<bool>& valid = {});
Var sum(const Var& x);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

// Named learnable tensors in a stable insertion order. The order and names
// are what count_params, optimizers and gradient checks iterate over.
class ParameterStore {
 public:
  ParamId add(std::string name, Matrix value);

  const Matrix& value(ParamId id) const { return entries_.at(id.index).value; }
  Matrix& value(ParamId id) { return entries_.at(id.index).value; }
  const std::string& name(ParamId id) const { return entries_.at(id.index).name; }

  ParamId find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  ParamId id(std::size_t index) const { return ParamId{index}; }

 private:
  struct Entry {
    std::string name;
    Matrix value;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Lazily places store parameters on a tape as gradient-carrying leaves.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParameterStore& store) : tape_(&tape), store_(&store) {}

  Var operator()(ParamId id);
  Tape& tape() const { return *tape_; }
  const ParameterStore& store() const { return *store_; }

  // One gradient per store entry, zeros for parameters that were never used.
  std::vector<Matrix> gradients() const;

 private:
  Tape* tape_;
  const ParameterStore* store_;
  std::unordered_map<std::size_t, Var> bound_;
};

}  // namespace hierform
