// SPDX-License-Identifier: Apache-2.0
#include "mathrec/nn.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "mathrec/errors.hpp"

namespace mathrec::nn {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'P', 'A', 'R', 'A', 'M', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::CorruptCheckpoint, "truncated parameter blob " + path.string());
  return v;
}

}  // namespace

Tensor ParameterSet::add(std::string name, Matrix init, bool decay) {
  Tensor t(std::move(init), true);
  params_.push_back(Parameter{std::move(name), t, decay});
  return t;
}

Tensor ParameterSet::normal(std::string name, int rows, int cols, float stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(mathrec::normal(rng) * stddev);
  return add(std::move(name), std::move(m), true);
}

Tensor ParameterSet::constant(std::string name, int rows, int cols, float value) {
  return add(std::move(name), Matrix::Constant(rows, cols, value), false);
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::CorruptCheckpoint, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint64_t>(out, params_.size());
  for (const auto& p : params_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<std::int32_t>(out, p.tensor.rows());
    write_pod<std::int32_t>(out, p.tensor.cols());
    out.write(reinterpret_cast<const char*>(p.tensor.value().data()),
              static_cast<std::streamsize>(sizeof(float) * p.tensor.value().size()));
  }
  if (!out) throw Error(ErrorKind::CorruptCheckpoint, "failed writing " + path.string());
}

void ParameterSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::CorruptCheckpoint, "cannot open parameter blob " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::CorruptCheckpoint, "bad parameter blob header in " + path.string());
  }
  const auto n = read_pod<std::uint64_t>(in, path);
  if (n != params_.size()) {
    throw Error(ErrorKind::CorruptCheckpoint, "parameter count " + std::to_string(n) + " does not match model (" +
                                                  std::to_string(params_.size()) + ")");
  }
  for (auto& p : params_) {
    const auto len = read_pod<std::uint32_t>(in, path);
    if (len > 4096) throw Error(ErrorKind::CorruptCheckpoint, "implausible parameter name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = read_pod<std::int32_t>(in, path);
    const auto cols = read_pod<std::int32_t>(in, path);
    if (name != p.name || rows != p.tensor.rows() || cols != p.tensor.cols()) {
      throw Error(ErrorKind::CorruptCheckpoint, "parameter '" + name + "' (" + std::to_string(rows) + "x" +
                                                    std::to_string(cols) + ") does not match model parameter '" +
                                                    p.name + "'");
    }
    in.read(reinterpret_cast<char*>(p.tensor.mutable_value().data()),
            static_cast<std::streamsize>(sizeof(float) * p.tensor.value().size()));
    if (!in) throw Error(ErrorKind::CorruptCheckpoint, "truncated parameter blob " + path.string());
  }
}

Linear::Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng, bool bias) {
  weight_ = ps.normal(name + ".weight", in, out, 0.02f, rng);
  if (bias) bias_ = ps.constant(name + ".bias", 1, out, 0.0f);
}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, int dim) {
  gamma_ = ps.constant(name + ".gamma", 1, dim, 1.0f);
  beta_ = ps.constant(name + ".beta", 1, dim, 0.0f);
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& ps, const std::string& name, int dim, int heads, Rng& rng)
    : heads_(heads),
      q_(ps, name + ".q", dim, dim, rng),
      k_(ps, name + ".k", dim, dim, rng),
      v_(ps, name + ".v", dim, dim, rng),
      o_(ps, name + ".out", dim, dim, rng) {}

Tensor MultiHeadAttention::operator()(const Tensor& query_in, const Tensor& key_value_in,
                                      std::shared_ptr<const AttentionLayout> layout, const Tensor& bias_table) const {
  return o_(attention(q_(query_in), k_(key_value_in), v_(key_value_in), std::move(layout), heads_, bias_table));
}

FeedForward::FeedForward(ParameterSet& ps, const std::string& name, int dim, int hidden, Rng& rng)
    : fc1_(ps, name + ".fc1", dim, hidden, rng), fc2_(ps, name + ".fc2", hidden, dim, rng) {}

}  // namespace mathrec::nn
