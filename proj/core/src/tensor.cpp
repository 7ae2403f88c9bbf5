// SPDX-License-Identifier: Apache-2.0
#include "mathrec/tensor.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "mathrec/errors.hpp"
#include "mathrec/losses.hpp"

namespace mathrec::nn {

namespace {

thread_local bool g_grad_enabled = true;

void check(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": " + detail);
}

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

}  // namespace

Matrix& Node::grad_buffer() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> backward) {
  Tensor out(std::move(value));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (!any) return out;
  out.node_->requires_grad = true;
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

void Tensor::backward() const {
  check(rows() == 1 && cols() == 1, "backward", "root must be 1x1, got " + dims(value()));
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p != nullptr && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer().setConstant(1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::shared_ptr<const AttentionLayout> AttentionLayout::dense(int q_rows, int k_rows, bool causal) {
  auto layout = std::make_shared<AttentionLayout>();
  layout->q_rows_per_unit = q_rows;
  layout->k_rows_per_unit = k_rows;
  layout->q_offsets = {0, q_rows};
  layout->k_offsets = {0, k_rows};
  layout->causal = causal;
  return layout;
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add", dims(a.value()) + " vs " + dims(b.value()));
  Matrix v = a.value() + b.value();
  return Tensor::make_result(std::move(v), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (wants_grad(p)) p->grad_buffer() += self.grad;
    }
  });
}

Tensor scale(const Tensor& x, float s) {
  Matrix v = x.value() * s;
  return Tensor::make_result(std::move(v), {x}, [s](Node& self) {
    self.parents[0]->grad_buffer() += self.grad * s;
  });
}

Tensor add_row(const Tensor& x, const Tensor& y) {
  check(y.rows() == 1 && y.cols() == x.cols(), "add_row", dims(x.value()) + " + " + dims(y.value()));
  Matrix v = x.value();
  v.rowwise() += y.value().row(0);
  return Tensor::make_result(std::move(v), {x, y}, [](Node& self) {
    if (wants_grad(self.parents[0])) self.parents[0]->grad_buffer() += self.grad;
    if (wants_grad(self.parents[1])) self.parents[1]->grad_buffer() += self.grad.colwise().sum();
  });
}

Tensor add_per_group(const Tensor& x, const Tensor& y) {
  const int groups = y.rows();
  check(groups > 0 && x.rows() % groups == 0 && x.cols() == y.cols(), "add_per_group",
        dims(x.value()) + " + " + dims(y.value()));
  const int per = x.rows() / groups;
  Matrix v = x.value();
  for (int g = 0; g < groups; ++g) v.middleRows(g * per, per).rowwise() += y.value().row(g);
  return Tensor::make_result(std::move(v), {x, y}, [groups, per](Node& self) {
    if (wants_grad(self.parents[0])) self.parents[0]->grad_buffer() += self.grad;
    if (wants_grad(self.parents[1])) {
      Matrix& gy = self.parents[1]->grad_buffer();
      for (int g = 0; g < groups; ++g) gy.row(g) += self.grad.middleRows(g * per, per).colwise().sum();
    }
  });
}

Tensor add_periodic(const Tensor& x, const Tensor& y, int period) {
  check(period > 0 && x.rows() % period == 0 && y.rows() >= period && x.cols() == y.cols(), "add_periodic",
        dims(x.value()) + " + " + dims(y.value()) + " period " + std::to_string(period));
  const int reps = x.rows() / period;
  Matrix v = x.value();
  for (int r = 0; r < reps; ++r) v.middleRows(r * period, period) += y.value().topRows(period);
  return Tensor::make_result(std::move(v), {x, y}, [reps, period](Node& self) {
    if (wants_grad(self.parents[0])) self.parents[0]->grad_buffer() += self.grad;
    if (wants_grad(self.parents[1])) {
      Matrix& gy = self.parents[1]->grad_buffer();
      for (int r = 0; r < reps; ++r) gy.topRows(period) += self.grad.middleRows(r * period, period);
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(), "matmul", dims(a.value()) + " * " + dims(b.value()));
  Matrix v;
  v.noalias() = a.value() * b.value();
  return Tensor::make_result(std::move(v), {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (wants_grad(pa)) pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
    if (wants_grad(pb)) pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.cols() == w.rows(), "linear", dims(x.value()) + " * " + dims(w.value()));
  Matrix v;
  v.noalias() = x.value() * w.value();
  const bool has_bias = b.defined();
  if (has_bias) {
    check(b.rows() == 1 && b.cols() == w.cols(), "linear", "bias " + dims(b.value()));
    v.rowwise() += b.value().row(0);
  }
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return Tensor::make_result(std::move(v), std::move(parents), [](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    if (wants_grad(px)) px->grad_buffer().noalias() += self.grad * pw->value.transpose();
    if (wants_grad(pw)) pw->grad_buffer().noalias() += px->value.transpose() * self.grad;
    if (self.parents.size() > 2 && wants_grad(self.parents[2])) {
      self.parents[2]->grad_buffer() += self.grad.colwise().sum();
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  Matrix v = x.value().unaryExpr([](float t) { return 0.5f * t * (1.0f + std::erf(t * kInvSqrt2)); });
  return Tensor::make_result(std::move(v), {x}, [](Node& self) {
    constexpr float kInvSqrt2Pi = 0.39894228040143268f;
    const Matrix& in = self.parents[0]->value;
    Matrix d = in.unaryExpr([](float t) {
      return 0.5f * (1.0f + std::erf(t * 0.70710678118654752f)) + t * kInvSqrt2Pi * std::exp(-0.5f * t * t);
    });
    self.parents[0]->grad_buffer() += self.grad.cwiseProduct(d);
  });
}

Tensor softplus(const Tensor& x) {
  Matrix v = x.value().unaryExpr([](float t) { return t > 20.0f ? t : std::log1p(std::exp(t)); });
  return Tensor::make_result(std::move(v), {x}, [](Node& self) {
    const Matrix& in = self.parents[0]->value;
    Matrix d = in.unaryExpr([](float t) { return 1.0f / (1.0f + std::exp(-t)); });
    self.parents[0]->grad_buffer() += self.grad.cwiseProduct(d);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const int n = x.rows();
  const int c = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == c && beta.rows() == 1 && beta.cols() == c, "layer_norm",
        dims(x.value()) + " with gain " + dims(gamma.value()));
  auto xhat = std::make_shared<Matrix>(n, c);
  auto rstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n));
  Matrix v(n, c);
  const Matrix& in = x.value();
  for (int r = 0; r < n; ++r) {
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += in(r, j);
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = in(r, j) - mean;
      var += d * d;
    }
    var /= c;
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (int j = 0; j < c; ++j) {
      const float h = (in(r, j) - static_cast<float>(mean)) * rs;
      (*xhat)(r, j) = h;
      v(r, j) = h * gamma.value()(0, j) + beta.value()(0, j);
    }
  }
  return Tensor::make_result(std::move(v), {x, gamma, beta}, [xhat, rstd, n, c](Node& self) {
    const auto& px = self.parents[0];
    const auto& pg = self.parents[1];
    const auto& pb = self.parents[2];
    const Matrix& gy = self.grad;
    if (wants_grad(pg)) pg->grad_buffer() += gy.cwiseProduct(*xhat).colwise().sum();
    if (wants_grad(pb)) pb->grad_buffer() += gy.colwise().sum();
    if (wants_grad(px)) {
      Matrix& gx = px->grad_buffer();
      const auto& g = pg->value;
      for (int r = 0; r < n; ++r) {
        double sum_dh = 0.0;
        double sum_dh_h = 0.0;
        for (int j = 0; j < c; ++j) {
          const double dh = static_cast<double>(gy(r, j)) * g(0, j);
          sum_dh += dh;
          sum_dh_h += dh * (*xhat)(r, j);
        }
        const double m1 = sum_dh / c;
        const double m2 = sum_dh_h / c;
        const float rs = (*rstd)[static_cast<std::size_t>(r)];
        for (int j = 0; j < c; ++j) {
          const double dh = static_cast<double>(gy(r, j)) * g(0, j);
          gx(r, j) += static_cast<float>(rs * (dh - m1 - (*xhat)(r, j) * m2));
        }
      }
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const int> index) {
  const int n = static_cast<int>(index.size());
  Matrix v(n, x.cols());
  for (int r = 0; r < n; ++r) {
    const int src = index[static_cast<std::size_t>(r)];
    check(src >= 0 && src < x.rows(), "gather_rows", "index " + std::to_string(src) + " of " + dims(x.value()));
    v.row(r) = x.value().row(src);
  }
  auto idx = std::make_shared<std::vector<int>>(index.begin(), index.end());
  return Tensor::make_result(std::move(v), {x}, [idx](Node& self) {
    Matrix& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx->size(); ++r) gx.row((*idx)[r]) += self.grad.row(static_cast<int>(r));
  });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  std::vector<int> index(ids.begin(), ids.end());
  return gather_rows(table, index);
}

Tensor reshape(const Tensor& x, int rows, int cols) {
  check(static_cast<long>(rows) * cols == static_cast<long>(x.rows()) * x.cols(), "reshape",
        dims(x.value()) + " -> " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix v = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  const int r0 = x.rows();
  const int c0 = x.cols();
  return Tensor::make_result(std::move(v), {x}, [r0, c0](Node& self) {
    self.parents[0]->grad_buffer() += Eigen::Map<const Matrix>(self.grad.data(), r0, c0);
  });
}

Tensor mean_groups(const Tensor& x, int groups) {
  check(groups > 0 && x.rows() % groups == 0, "mean_groups", dims(x.value()) + " into " + std::to_string(groups));
  const int per = x.rows() / groups;
  const int c = x.cols();
  Matrix v(groups, c);
  // Double accumulation keeps the pooled value insensitive to row order.
  for (int g = 0; g < groups; ++g) {
    for (int j = 0; j < c; ++j) {
      double s = 0.0;
      for (int r = 0; r < per; ++r) s += x.value()(g * per + r, j);
      v(g, j) = static_cast<float>(s / per);
    }
  }
  return Tensor::make_result(std::move(v), {x}, [groups, per](Node& self) {
    Matrix& gx = self.parents[0]->grad_buffer();
    const float inv = 1.0f / static_cast<float>(per);
    for (int g = 0; g < groups; ++g) gx.middleRows(g * per, per).rowwise() += self.grad.row(g) * inv;
  });
}

Tensor stop_gradient(const Tensor& x) { return Tensor(x.value()); }

// ---------------------------------------------------------------------------
// Grouped multi-head attention

namespace {

struct GroupView {
  int q_begin, q_count, k_begin, k_count;
};

inline int map_row(const std::vector<int>& index, int unit_base, int local) {
  return unit_base + (index.empty() ? local : index[static_cast<std::size_t>(local)]);
}

void gather_block(const Matrix& src, const std::vector<int>& index, int unit_base, int begin, int count, Matrix& dst) {
  dst.resize(count, src.cols());
  for (int i = 0; i < count; ++i) dst.row(i) = src.row(map_row(index, unit_base, begin + i));
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::shared_ptr<const AttentionLayout> layout,
                 int heads, const Tensor& bias_table) {
  const AttentionLayout& L = *layout;
  const int d = q.cols();
  check(heads > 0 && d % heads == 0, "attention", "width " + std::to_string(d) + " not divisible by heads");
  check(k.cols() == d && v.cols() == d && k.rows() == v.rows(), "attention",
        "q " + dims(q.value()) + " k " + dims(k.value()) + " v " + dims(v.value()));
  check(L.q_rows_per_unit > 0 && q.rows() % L.q_rows_per_unit == 0, "attention", "query rows do not match layout");
  const int units = q.rows() / L.q_rows_per_unit;
  check(k.rows() == units * L.k_rows_per_unit, "attention", "key rows do not match layout");
  const bool has_bias = bias_table.defined();
  if (has_bias) check(bias_table.cols() == heads, "attention", "bias table " + dims(bias_table.value()));
  const int hd = d / heads;
  const float scale_factor = 1.0f / std::sqrt(static_cast<float>(hd));
  const int groups = L.groups();

  // Probabilities per (unit, group, head) kept for the backward pass.
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(units) * groups * heads);
  Matrix out = Matrix::Zero(q.rows(), d);
  Matrix qg, kg, vg;
  for (int u = 0; u < units; ++u) {
    const int qbase = u * L.q_rows_per_unit;
    const int kbase = u * L.k_rows_per_unit;
    for (int g = 0; g < groups; ++g) {
      const int q0 = L.q_offsets[g];
      const int nq = L.q_offsets[g + 1] - q0;
      const int k0 = L.k_offsets[g];
      const int nk = L.k_offsets[g + 1] - k0;
      if (nq == 0 || nk == 0) continue;
      gather_block(q.value(), L.q_index, qbase, q0, nq, qg);
      gather_block(k.value(), L.k_index, kbase, k0, nk, kg);
      gather_block(v.value(), L.k_index, kbase, k0, nk, vg);
      for (int h = 0; h < heads; ++h) {
        Matrix s;
        s.noalias() = qg.middleCols(h * hd, hd) * kg.middleCols(h * hd, hd).transpose();
        s *= scale_factor;
        if (has_bias) {
          const int* bi = L.bias_index.data() + L.bias_offsets[g];
          for (int i = 0; i < nq; ++i)
            for (int j = 0; j < nk; ++j) s(i, j) += bias_table.value()(bi[i * nk + j], h);
        }
        Matrix& p = (*probs)[(static_cast<std::size_t>(u) * groups + g) * heads + h];
        p.resize(nq, nk);
        for (int i = 0; i < nq; ++i) {
          const int visible = L.causal ? std::min(i + 1, nk) : nk;
          float mx = -std::numeric_limits<float>::infinity();
          for (int j = 0; j < visible; ++j) mx = std::max(mx, s(i, j));
          float sum = 0.0f;
          for (int j = 0; j < visible; ++j) {
            const float e = std::exp(s(i, j) - mx);
            p(i, j) = e;
            sum += e;
          }
          const float inv = 1.0f / sum;
          for (int j = 0; j < visible; ++j) p(i, j) *= inv;
          for (int j = visible; j < nk; ++j) p(i, j) = 0.0f;
        }
        Matrix o;
        o.noalias() = p * vg.middleCols(h * hd, hd);
        for (int i = 0; i < nq; ++i) out.row(map_row(L.q_index, qbase, q0 + i)).segment(h * hd, hd) = o.row(i);
      }
    }
  }

  std::vector<Tensor> parents{q, k, v};
  if (has_bias) parents.push_back(bias_table);
  return Tensor::make_result(std::move(out), std::move(parents), [layout, probs, units, heads, hd, scale_factor](Node& self) {
    const AttentionLayout& L = *layout;
    const auto& pq = self.parents[0];
    const auto& pk = self.parents[1];
    const auto& pv = self.parents[2];
    const bool bias_grad = self.parents.size() > 3 && wants_grad(self.parents[3]);
    Matrix* gq = wants_grad(pq) ? &pq->grad_buffer() : nullptr;
    Matrix* gk = wants_grad(pk) ? &pk->grad_buffer() : nullptr;
    Matrix* gv = wants_grad(pv) ? &pv->grad_buffer() : nullptr;
    Matrix* gb = bias_grad ? &self.parents[3]->grad_buffer() : nullptr;
    const int groups = L.groups();
    Matrix qg, kg, vg, dog;
    for (int u = 0; u < units; ++u) {
      const int qbase = u * L.q_rows_per_unit;
      const int kbase = u * L.k_rows_per_unit;
      for (int g = 0; g < groups; ++g) {
        const int q0 = L.q_offsets[g];
        const int nq = L.q_offsets[g + 1] - q0;
        const int k0 = L.k_offsets[g];
        const int nk = L.k_offsets[g + 1] - k0;
        if (nq == 0 || nk == 0) continue;
        gather_block(pq->value, L.q_index, qbase, q0, nq, qg);
        gather_block(pk->value, L.k_index, kbase, k0, nk, kg);
        gather_block(pv->value, L.k_index, kbase, k0, nk, vg);
        gather_block(self.grad, L.q_index, qbase, q0, nq, dog);
        Matrix dq = Matrix::Zero(nq, qg.cols());
        Matrix dk = Matrix::Zero(nk, kg.cols());
        Matrix dv = Matrix::Zero(nk, vg.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix& p = (*probs)[(static_cast<std::size_t>(u) * groups + g) * heads + h];
          const auto doh = dog.middleCols(h * hd, hd);
          dv.middleCols(h * hd, hd).noalias() += p.transpose() * doh;
          Matrix dp;
          dp.noalias() = doh * vg.middleCols(h * hd, hd).transpose();
          Matrix ds(nq, nk);
          for (int i = 0; i < nq; ++i) {
            const float dot = p.row(i).dot(dp.row(i));
            for (int j = 0; j < nk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
          }
          if (gb != nullptr) {
            const int* bi = L.bias_index.data() + L.bias_offsets[g];
            for (int i = 0; i < nq; ++i)
              for (int j = 0; j < nk; ++j) (*gb)(bi[i * nk + j], h) += ds(i, j);
          }
          ds *= scale_factor;
          dq.middleCols(h * hd, hd).noalias() += ds * kg.middleCols(h * hd, hd);
          dk.middleCols(h * hd, hd).noalias() += ds.transpose() * qg.middleCols(h * hd, hd);
        }
        if (gq != nullptr)
          for (int i = 0; i < nq; ++i) gq->row(map_row(L.q_index, qbase, q0 + i)) += dq.row(i);
        if (gk != nullptr)
          for (int j = 0; j < nk; ++j) gk->row(map_row(L.k_index, kbase, k0 + j)) += dk.row(j);
        if (gv != nullptr)
          for (int j = 0; j < nk; ++j) gv->row(map_row(L.k_index, kbase, k0 + j)) += dv.row(j);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

Tensor lm_loss(const Tensor& logits, std::span<const TokenId> targets) {
  check(static_cast<std::size_t>(logits.rows()) == targets.size(), "lm_loss",
        dims(logits.value()) + " vs " + std::to_string(targets.size()) + " targets");
  const float* data = logits.value().data();
  std::vector<double> flat(data, data + logits.value().size());
  LossValue lv = language_modeling_loss(flat, targets, logits.cols());
  Matrix v(1, 1);
  v(0, 0) = static_cast<float>(lv.value);
  auto grad = std::make_shared<Matrix>(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < lv.grad.size(); ++i) grad->data()[i] = static_cast<float>(lv.grad[i]);
  return Tensor::make_result(std::move(v), {logits}, [grad](Node& self) {
    self.parents[0]->grad_buffer() += *grad * self.grad(0, 0);
  });
}

Tensor smooth_l1_loss(const Tensor& predicted, const Matrix& target) {
  check(predicted.rows() == target.rows() && predicted.cols() == target.cols(), "smooth_l1_loss",
        dims(predicted.value()) + " vs " + dims(target));
  std::vector<double> p(predicted.value().data(), predicted.value().data() + predicted.value().size());
  std::vector<double> t(target.data(), target.data() + target.size());
  LossValue lv = length_loss(p, t);
  Matrix v(1, 1);
  v(0, 0) = static_cast<float>(lv.value);
  auto grad = std::make_shared<Matrix>(predicted.rows(), predicted.cols());
  for (std::size_t i = 0; i < lv.grad.size(); ++i) grad->data()[i] = static_cast<float>(lv.grad[i]);
  return Tensor::make_result(std::move(v), {predicted}, [grad](Node& self) {
    self.parents[0]->grad_buffer() += *grad * self.grad(0, 0);
  });
}

Tensor weighted_sum(const Tensor& a, double wa, const Tensor& b, double wb) {
  check(a.rows() == 1 && a.cols() == 1 && b.rows() == 1 && b.cols() == 1, "weighted_sum", "operands must be 1x1");
  Matrix v(1, 1);
  v(0, 0) = static_cast<float>(total_loss(a.item(), b.item(), LossWeights{wa, wb}));
  return Tensor::make_result(std::move(v), {a, b}, [wa, wb](Node& self) {
    if (wants_grad(self.parents[0])) self.parents[0]->grad_buffer()(0, 0) += static_cast<float>(wa) * self.grad(0, 0);
    if (wants_grad(self.parents[1])) self.parents[1]->grad_buffer()(0, 0) += static_cast<float>(wb) * self.grad(0, 0);
  });
}

}  // namespace mathrec::nn
