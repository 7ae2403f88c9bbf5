// SPDX-License-Identifier: Apache-2.0
//
// Parameter registry and the small layers the network is assembled from.
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mathrec/rng.hpp"
#include "mathrec/tensor.hpp"

namespace mathrec::nn {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool decay = true;  // decoupled weight decay applies
};

/// Ordered, named parameters. Order is registration order and is part of
/// the serialized form.
class ParameterSet {
 public:
  Tensor add(std::string name, Matrix init, bool decay);
  Tensor normal(std::string name, int rows, int cols, float stddev, Rng& rng);
  Tensor constant(std::string name, int rows, int cols, float value);

  const std::vector<Parameter>& params() const noexcept { return params_; }
  std::vector<Parameter>& params() noexcept { return params_; }
  std::size_t count() const;  // total scalar count
  void zero_grad();

  /// Native blob: magic, count, then per parameter name/shape/float data.
  void save(const std::filesystem::path& path) const;
  /// Loads values into already-registered parameters; names and shapes must
  /// match exactly. Throws Error{CorruptCheckpoint}.
  void load(const std::filesystem::path& path);

 private:
  std::vector<Parameter> params_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng, bool bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight_, bias_); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& ps, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor gamma_;
  Tensor beta_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& ps, const std::string& name, int dim, int heads, Rng& rng);

  Tensor operator()(const Tensor& query_in, const Tensor& key_value_in,
                    std::shared_ptr<const AttentionLayout> layout, const Tensor& bias_table = Tensor()) const;
  int heads() const noexcept { return heads_; }

 private:
  int heads_ = 1;
  Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterSet& ps, const std::string& name, int dim, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return fc2_(gelu(fc1_(x))); }

 private:
  Linear fc1_, fc2_;
};

}  // namespace mathrec::nn
