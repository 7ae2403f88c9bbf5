// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "mathrec/errors.hpp"
#include "mathrec/rng.hpp"
#include "mathrec/tensor.hpp"

using namespace mathrec;
using namespace mathrec::nn;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(scale * normal(rng));
  return m;
}

/// Projects `out` onto fixed random weights so every output element
/// contributes, then compares the reverse sweep with central differences
/// taken in double over the float forward pass.
double op_gradient_error(std::vector<Tensor> inputs, const std::function<Tensor(const std::vector<Tensor>&)>& op,
                         std::uint64_t seed) {
  Rng rng(seed);
  Tensor probe = op(inputs);
  const Matrix w = random_matrix(probe.rows(), probe.cols(), rng);
  auto scalar = [&](const Tensor& out) { return static_cast<double>((out.value().array() * w.array()).sum()); };
  for (auto& t : inputs) t.zero_grad();
  const Tensor out = op(inputs);
  const Tensor loss = Tensor::make_result(Matrix::Constant(1, 1, static_cast<float>(scalar(out))), {out},
                                          [w](Node& self) { self.parents[0]->grad_buffer() += w * self.grad(0, 0); });
  loss.backward();
  double worst = 0.0;
  NoGradGuard guard;
  const float h = 1e-2f;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const Matrix analytic = t.grad().size() ? t.grad() : Matrix::Zero(t.rows(), t.cols());
    double num2 = 0.0, diff2 = 0.0, ana2 = 0.0;
    for (int i = 0; i < t.value().size(); ++i) {
      float& x = t.mutable_value().data()[i];
      const float keep = x;
      x = keep + h;
      const double up = scalar(op(inputs));
      x = keep - h;
      const double down = scalar(op(inputs));
      x = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[i];
      diff2 += (a - numeric) * (a - numeric);
      num2 += numeric * numeric;
      ana2 += a * a;
    }
    const double denom = std::max({std::sqrt(num2), std::sqrt(ana2), 1e-6});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

Tensor param(int r, int c, Rng& rng, double scale = 1.0) { return Tensor(random_matrix(r, c, rng, scale), true); }

}  // namespace

TEST_CASE("elementwise and structural ops", "[autograd]") {
  Rng rng(1);
  constexpr double tol = 2e-2;  // float forward, h = 1e-2
  CHECK(op_gradient_error({param(4, 3, rng), param(4, 3, rng)}, [](auto& in) { return add(in[0], in[1]); }, 1) < tol);
  CHECK(op_gradient_error({param(4, 3, rng)}, [](auto& in) { return scale(in[0], -1.5f); }, 2) < tol);
  CHECK(op_gradient_error({param(4, 3, rng), param(1, 3, rng)}, [](auto& in) { return add_row(in[0], in[1]); }, 3) < tol);
  CHECK(op_gradient_error({param(6, 2, rng), param(3, 2, rng)}, [](auto& in) { return add_per_group(in[0], in[1]); }, 4) <
        tol);
  CHECK(op_gradient_error({param(6, 2, rng), param(4, 2, rng)}, [](auto& in) { return add_periodic(in[0], in[1], 3); },
                          5) < tol);
  CHECK(op_gradient_error({param(3, 4, rng), param(4, 2, rng)}, [](auto& in) { return matmul(in[0], in[1]); }, 6) < tol);
  CHECK(op_gradient_error({param(3, 4, rng), param(4, 2, rng), param(1, 2, rng)},
                          [](auto& in) { return linear(in[0], in[1], in[2]); }, 7) < tol);
  CHECK(op_gradient_error({param(3, 5, rng)}, [](auto& in) { return gelu(in[0]); }, 8) < tol);
  CHECK(op_gradient_error({param(3, 5, rng)}, [](auto& in) { return softplus(in[0]); }, 9) < tol);
  CHECK(op_gradient_error({param(3, 6, rng), param(1, 6, rng), param(1, 6, rng)},
                          [](auto& in) { return layer_norm(in[0], in[1], in[2]); }, 10) < tol);
  CHECK(op_gradient_error({param(5, 3, rng)}, [](auto& in) { return reshape(in[0], 3, 5); }, 11) < tol);
  CHECK(op_gradient_error({param(6, 3, rng)}, [](auto& in) { return mean_groups(in[0], 2); }, 12) < tol);
  const std::vector<int> idx{2, 0, 2, 1};
  CHECK(op_gradient_error({param(3, 4, rng)}, [&](auto& in) { return gather_rows(in[0], idx); }, 13) < tol);
  const std::vector<TokenId> ids{1, 1, 3, 0};
  CHECK(op_gradient_error({param(4, 3, rng)}, [&](auto& in) { return embedding(in[0], ids); }, 14) < tol);
}

TEST_CASE("attention gradients", "[autograd]") {
  Rng rng(2);
  constexpr double tol = 2e-2;
  for (bool causal : {false, true}) {
    auto layout = AttentionLayout::dense(4, 4, causal);
    CHECK(op_gradient_error({param(8, 6, rng), param(8, 6, rng), param(8, 6, rng)},
                            [&](auto& in) { return attention(in[0], in[1], in[2], layout, 2); }, 20) < tol);
  }
  auto cross = AttentionLayout::dense(3, 5, false);
  CHECK(op_gradient_error({param(6, 4, rng), param(10, 4, rng), param(10, 4, rng)},
                          [&](auto& in) { return attention(in[0], in[1], in[2], cross, 2); }, 21) < tol);

  // Relative-position bias table: two groups of two rows, bias indices 0..2.
  auto biased = std::make_shared<AttentionLayout>();
  biased->q_rows_per_unit = 4;
  biased->k_rows_per_unit = 4;
  biased->q_offsets = {0, 2, 4};
  biased->k_offsets = {0, 2, 4};
  biased->q_index = {3, 1, 0, 2};
  biased->k_index = {3, 1, 0, 2};
  biased->bias_offsets = {0, 4};
  biased->bias_index = {0, 1, 2, 0, 0, 1, 2, 0};
  CHECK(op_gradient_error({param(4, 4, rng), param(4, 4, rng), param(4, 4, rng), param(3, 2, rng)},
                          [&](auto& in) { return attention(in[0], in[1], in[2], biased, 2, in[3]); }, 22) < tol);
}

TEST_CASE("loss ops match their double counterparts", "[autograd]") {
  Rng rng(3);
  Tensor logits = param(4, 5, rng, 2.0);
  const std::vector<TokenId> targets{1, 4, 0, 2};
  CHECK(op_gradient_error({logits}, [&](auto& in) { return lm_loss(in[0], targets); }, 30) < 2e-2);
  const Matrix target = random_matrix(2, 5, rng, 2.0);
  CHECK(op_gradient_error({param(2, 5, rng, 2.0)}, [&](auto& in) { return smooth_l1_loss(in[0], target); }, 31) < 2e-2);
  CHECK(op_gradient_error({param(1, 1, rng), param(1, 1, rng)},
                          [](auto& in) { return weighted_sum(in[0], 1.0, in[1], 0.5); }, 32) < 2e-2);
}

TEST_CASE("stop_gradient blocks the backward pass", "[autograd]") {
  Rng rng(4);
  Tensor x = param(2, 3, rng);
  Tensor y = param(2, 3, rng);
  const Tensor s = mean_groups(add(stop_gradient(x), y), 1);
  const Tensor loss = mean_groups(reshape(s, 3, 1), 1);
  loss.backward();
  CHECK(x.grad().size() == 0);
  REQUIRE(y.grad().size() == 6);
  CHECK(y.grad().isApproxToConstant(1.0f / 6.0f, 1e-6f));
}

TEST_CASE("no-grad guard records nothing", "[autograd]") {
  Rng rng(5);
  Tensor x = param(2, 2, rng);
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(gelu(x).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(gelu(x).requires_grad());
}

TEST_CASE("shape errors from ops", "[autograd]") {
  Rng rng(6);
  try {
    matmul(param(2, 3, rng), param(2, 3, rng));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
  CHECK_THROWS_AS(add(param(2, 3, rng), param(3, 2, rng)), Error);
  CHECK_THROWS_AS(param(2, 2, rng).backward(), Error);
}
