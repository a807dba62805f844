#pragma once

// Fully connected network with a flat parameter vector, batched forward and
// reverse-mode gradients. Hidden layers use the activation, the output layer
// is linear.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mevius/common.hpp"
#include "mevius/terrain.hpp"

namespace mevius {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

enum class Activation : std::uint32_t { Elu = 0, Tanh = 1 };

inline const char* activation_name(Activation a) { return a == Activation::Elu ? "elu" : "tanh"; }

inline Activation activation_from_name(const std::string& s) {
  if (s == "elu") return Activation::Elu;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("activation: unknown '" + s + "'");
}

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes, Activation act = Activation::Elu) : sizes_(std::move(sizes)), act_(act) {
    if (sizes_.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
    for (int s : sizes_)
      if (s < 1) throw ConfigError("mlp: layer sizes must be positive");
    offsets_.clear();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(n);
      n += static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
    }
    params_ = VecX::Zero(static_cast<Eigen::Index>(n));
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) on weights and biases.
  void init_uniform(Rng& rng, double output_gain = 1.0) {
    for (int l = 0; l < num_layers(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      const double g = (l + 1 == num_layers()) ? output_gain : 1.0;
      auto w = weight(l);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = g * rng.uniform(-bound, bound);
      auto b = bias(l);
      for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = g * rng.uniform(-bound, bound);
    }
  }

  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return act_; }
  Eigen::Index num_params() const { return params_.size(); }

  VecX& params() { return params_; }
  const VecX& params() const { return params_; }

  Eigen::Map<MatX> weight(int l) { return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]}; }
  Eigen::Map<const MatX> weight(int l) const { return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]}; }
  Eigen::Map<VecX> bias(int l) { return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]}; }
  Eigen::Map<const VecX> bias(int l) const {
    return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
  }

  struct Cache {
    std::vector<MatX> pre;   // pre-activation per layer
    std::vector<MatX> post;  // post[0] is the input
  };

  /// Columns are samples.
  MatX forward(const MatX& x, Cache* cache = nullptr) const {
    if (x.rows() != input_size())
      throw ConfigError("mlp: input has " + std::to_string(x.rows()) + " rows, expected " +
                        std::to_string(input_size()));
    if (cache) {
      cache->pre.resize(num_layers());
      cache->post.resize(num_layers() + 1);
      cache->post[0] = x;
    }
    MatX h = x;
    for (int l = 0; l < num_layers(); ++l) {
      MatX z = weight(l) * h;
      z.colwise() += bias(l);
      if (cache) cache->pre[l] = z;
      if (l + 1 < num_layers()) z = z.unaryExpr([this](double v) { return activate(v); });
      h = std::move(z);
      if (cache) cache->post[l + 1] = h;
    }
    return h;
  }

  VecX forward(const VecX& x) const { return forward(MatX(x)).col(0); }

  /// Accumulates dL/dparams into `grad` given dL/doutput; returns dL/dinput.
  MatX backward(const Cache& cache, const MatX& dout, VecX& grad) const {
    if (grad.size() != num_params()) grad = VecX::Zero(num_params());
    MatX d = dout;
    for (int l = num_layers() - 1; l >= 0; --l) {
      if (l + 1 < num_layers()) {
        const MatX& z = cache.pre[l];
        d = d.cwiseProduct(z.unaryExpr([this](double v) { return activate_grad(v); }));
      }
      Eigen::Map<MatX> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
      Eigen::Map<VecX> gb(grad.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]);
      gw.noalias() += d * cache.post[l].transpose();
      gb += d.rowwise().sum();
      d = weight(l).transpose() * d;
    }
    return d;
  }

  bool operator==(const Mlp& o) const {
    return sizes_ == o.sizes_ && act_ == o.act_ && params_.size() == o.params_.size() &&
           std::memcmp(params_.data(), o.params_.data(), sizeof(double) * params_.size()) == 0;
  }

 private:
  double activate(double v) const { return act_ == Activation::Elu ? (v > 0.0 ? v : std::expm1(v)) : std::tanh(v); }
  double activate_grad(double v) const {
    if (act_ == Activation::Elu) return v > 0.0 ? 1.0 : std::exp(v);
    const double t = std::tanh(v);
    return 1.0 - t * t;
  }

  std::vector<int> sizes_;
  Activation act_ = Activation::Elu;
  std::vector<std::size_t> offsets_;
  VecX params_;
};

// ---------------------------------------------------------------------------
// Parameter file, little-endian:
//   char[8]  magic "MVPOLICY"
//   u32      version (1)
//   u32      activation
//   u32      number of sizes L+1
//   u32[L+1] sizes
//   per layer: f64 weights row-major (out x in), then f64 biases

inline constexpr std::uint32_t kPolicyFileVersion = 1;

inline void write_mlp(std::ostream& os, const Mlp& m) {
  os.write("MVPOLICY", 8);
  detail::put_u32(os, kPolicyFileVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(m.activation()));
  detail::put_u32(os, static_cast<std::uint32_t>(m.sizes().size()));
  for (int s : m.sizes()) detail::put_u32(os, static_cast<std::uint32_t>(s));
  for (int l = 0; l < m.num_layers(); ++l) {
    const auto w = m.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) detail::put_f64(os, w(r, c));
    const auto b = m.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) detail::put_f64(os, b(r));
  }
}

inline Mlp read_mlp(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "MVPOLICY", 8) != 0) throw FormatError("not a policy parameter file");
  const auto version = detail::get_u32(is);
  if (version != kPolicyFileVersion) throw FormatError("policy file: unsupported version " + std::to_string(version));
  const auto act = detail::get_u32(is);
  if (act > 1) throw FormatError("policy file: unknown activation " + std::to_string(act));
  const auto n = detail::get_u32(is);
  if (n < 2 || n > 64) throw FormatError("policy file: implausible layer count");
  std::vector<int> sizes(n);
  for (auto& s : sizes) {
    const auto v = detail::get_u32(is);
    if (v < 1 || v > (1u << 16)) throw FormatError("policy file: implausible layer size");
    s = static_cast<int>(v);
  }
  Mlp m(sizes, static_cast<Activation>(act));
  for (int l = 0; l < m.num_layers(); ++l) {
    auto w = m.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = detail::get_f64(is);
    auto b = m.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = detail::get_f64(is);
  }
  return m;
}

inline void save_mlp(const std::filesystem::path& path, const Mlp& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  write_mlp(os, m);
}

inline Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_mlp(is);
}

}  // namespace mevius
