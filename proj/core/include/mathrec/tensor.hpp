// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over row-major float
// matrices. Every activation is 2-D: batch and sequence axes are folded
// into rows, and ops that need the structure take it explicitly.
#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mathrec/latex_norm.hpp"

namespace mathrec::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(int rows, int cols) { return Tensor(Matrix::Zero(rows, cols)); }

  bool defined() const noexcept { return node_ != nullptr; }
  int rows() const { return static_cast<int>(node_->value.rows()); }
  int cols() const { return static_cast<int>(node_->value.cols()); }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient accumulated by the last backward(); zero-sized if none.
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0, 0); }
  float item() const { return node_->value(0, 0); }

  /// Reverse sweep from a 1x1 tensor, seeding d(self)/d(self) = 1.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Result node wired to `parents`; the closure runs only when some
  /// parent needs a gradient and gradient recording is on.
  static Tensor make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> backward);

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for the lifetime of the guard (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Row groups that attend to each other. The layout describes one unit
/// (one image or one sequence); the number of stacked units is inferred
/// from the row count of the query block.
/// Within a unit, group g queries rows [q_offsets[g], q_offsets[g+1]) and
/// keys rows [k_offsets[g], k_offsets[g+1]), optionally through the
/// permutations q_index / k_index (row ids within the unit).
struct AttentionLayout {
  int q_rows_per_unit = 0;
  int k_rows_per_unit = 0;
  std::vector<int> q_offsets;
  std::vector<int> k_offsets;
  std::vector<int> q_index;  // empty: identity
  std::vector<int> k_index;  // empty: identity
  bool causal = false;       // key j visible to query i iff j <= i
  // Additive relative-position bias: pair (i, j) of group g reads row
  // bias_index[bias_offsets[g] + i * n_k + j] of the bias table.
  std::vector<int> bias_offsets;
  std::vector<int> bias_index;

  int groups() const { return static_cast<int>(q_offsets.size()) - 1; }

  /// One group per unit covering every row (full or causal attention).
  static std::shared_ptr<const AttentionLayout> dense(int q_rows, int k_rows, bool causal);
};

// --- elementwise and structural ops --------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
/// Adds `y` (1 x c) to every row of `x`.
Tensor add_row(const Tensor& x, const Tensor& y);
/// Adds row g of `y` (G x c) to the g-th block of rows.size()/G rows of `x`.
Tensor add_per_group(const Tensor& x, const Tensor& y);
/// Adds row (r mod period) of `y` to row r of `x`; y must have >= period rows.
Tensor add_periodic(const Tensor& x, const Tensor& y, int period);
Tensor matmul(const Tensor& a, const Tensor& b);
/// x * w + b with w laid out [in, out] and b [1, out] (b may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
/// Rows of `table` selected by `ids` (repeats allowed).
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);
Tensor gather_rows(const Tensor& x, std::span<const int> index);
/// Row-major reinterpretation; rows*cols must be unchanged.
Tensor reshape(const Tensor& x, int rows, int cols);
/// Mean over consecutive blocks of rows/groups rows -> [groups, cols].
Tensor mean_groups(const Tensor& x, int groups);
/// Same value, no gradient flows back.
Tensor stop_gradient(const Tensor& x);

/// Scaled dot-product attention over the grouped layout; q/k/v hold all
/// heads side by side ([rows, heads * head_dim]).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::shared_ptr<const AttentionLayout> layout,
                 int heads, const Tensor& bias_table = Tensor());

// --- losses (1 x 1 results) -----------------------------------------------

Tensor lm_loss(const Tensor& logits, std::span<const TokenId> targets);
Tensor smooth_l1_loss(const Tensor& predicted, const Matrix& target);
Tensor weighted_sum(const Tensor& a, double wa, const Tensor& b, double wb);

}  // namespace mathrec::nn
