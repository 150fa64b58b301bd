#pragma once

// Small dense-layer toolkit with explicit backward passes. Parameters live in
// one flat buffer described by a ParamLayout so optimisers, checkpoints and
// gradient checks can treat every model as a single vector.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "viva/errors.hpp"
#include "viva/random.hpp"

namespace viva::nn {

// Flat parameter and gradient storage. Eigen peels vectorised reductions
// according to pointer alignment, so a fixed alignment keeps results
// bit-reproducible from one allocation to the next.
template <typename Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixMap = Eigen::Map<Matrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;

struct ParamBlob {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParamLayout {
 public:
  std::size_t add(std::string name, int rows, int cols) {
    blobs_.push_back({std::move(name), total_, rows, cols});
    total_ += blobs_.back().size();
    return blobs_.size() - 1;
  }
  const ParamBlob& operator[](std::size_t i) const { return blobs_[i]; }
  const std::vector<ParamBlob>& blobs() const { return blobs_; }
  std::size_t total() const { return total_; }

 private:
  std::vector<ParamBlob> blobs_;
  std::size_t total_ = 0;
};

template <typename Scalar>
MatrixMap<Scalar> view(std::span<Scalar> flat, const ParamBlob& b) {
  return MatrixMap<Scalar>(flat.data() + b.offset, b.rows, b.cols);
}

template <typename Scalar>
ConstMatrixMap<Scalar> view(std::span<const Scalar> flat, const ParamBlob& b) {
  return ConstMatrixMap<Scalar>(flat.data() + b.offset, b.rows, b.cols);
}

template <typename Scalar>
void init_normal(std::span<Scalar> flat, const ParamBlob& b, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (std::size_t i = 0; i < b.size(); ++i) flat[b.offset + i] = static_cast<Scalar>(normal(rng));
}

template <typename Scalar>
void init_constant(std::span<Scalar> flat, const ParamBlob& b, double value) {
  for (std::size_t i = 0; i < b.size(); ++i) flat[b.offset + i] = static_cast<Scalar>(value);
}

// y = x W + b
template <typename Scalar, typename X, typename W, typename B>
void linear_forward(const X& x, const W& weight, const B& bias, Matrix<Scalar>& y) {
  y.resize(x.rows(), weight.cols());
  y.noalias() = x * weight;
  y.rowwise() += bias.row(0);
}

// Accumulates dW, db; writes dx when requested.
template <typename Scalar, typename X, typename W, typename DW, typename DB>
void linear_backward(const X& x, const W& weight, const Matrix<Scalar>& dy, DW&& d_weight, DB&& d_bias,
                     Matrix<Scalar>* dx) {
  d_weight.noalias() += x.transpose() * dy;
  d_bias.row(0) += dy.colwise().sum();
  if (dx != nullptr) {
    dx->resize(dy.rows(), weight.rows());
    dx->noalias() = dy * weight.transpose();
  }
}

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;  // x_hat
  Vector<Scalar> inv_std;
};

template <typename Scalar, typename G, typename B>
void layernorm_forward(const Matrix<Scalar>& x, const G& gamma, const B& beta, Matrix<Scalar>& y,
                       LayerNormCache<Scalar>& cache, Scalar eps = Scalar(1e-5)) {
  const auto n = x.cols();
  cache.normalized.resize(x.rows(), n);
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mu = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mu).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = (x.row(r).array() - mu) * inv;
  }
  y.resize(x.rows(), n);
  y = (cache.normalized.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

template <typename Scalar, typename G, typename DG, typename DB>
void layernorm_backward(const LayerNormCache<Scalar>& cache, const G& gamma, const Matrix<Scalar>& dy, DG&& d_gamma,
                        DB&& d_beta, Matrix<Scalar>& dx) {
  d_gamma.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  d_beta.row(0) += dy.colwise().sum();
  const Matrix<Scalar> dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
  dx.resize(dy.rows(), dy.cols());
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_d = dxhat.row(r).sum() * inv_n;
    const Scalar mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) * inv_n;
    dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx);
  }
}

// tanh-approximated GELU
template <typename Scalar>
Scalar gelu(Scalar x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  const Scalar u = Scalar(k) * (x + Scalar(0.044715) * x * x * x);
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(u));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  constexpr double k = 0.7978845608028654;
  const Scalar u = Scalar(k) * (x + Scalar(0.044715) * x * x * x);
  const Scalar t = std::tanh(u);
  const Scalar du = Scalar(k) * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * du;
}

template <typename Scalar>
Scalar silu(Scalar x) {
  return x / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
Scalar silu_grad(Scalar x) {
  const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-x));
  return s * (Scalar(1) + x * (Scalar(1) - s));
}

// Sinusoidal embedding of a flow time in [0,1] (scaled by 1000, as diffusion
// timesteps usually are).
template <typename Scalar>
void timestep_embedding(Scalar tau, Eigen::Ref<RowVector<Scalar>> out) {
  const Eigen::Index half = out.cols() / 2;
  for (Eigen::Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = 1000.0 * static_cast<double>(tau) * freq;
    out(i) = static_cast<Scalar>(std::sin(arg));
    out(half + i) = static_cast<Scalar>(std::cos(arg));
  }
}

// In-place row softmax.
template <typename Scalar>
void softmax_rows(Matrix<Scalar>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace viva::nn
