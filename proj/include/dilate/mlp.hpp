#pragma once

#include "dilate/common.hpp"

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <vector>

namespace dilate {

/// Fully connected network with ReLU hidden layers and linear output logits. Points are
/// columns. Templated on the scalar so gradients can be checked in double precision.
template <typename S>
class Mlp {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  Mlp() = default;
  /// All weights zero.
  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw InvalidParams("an mlp needs at least an input and an output size");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw InvalidParams("layer sizes must be positive");
      weights.push_back(Mat::Zero(sizes_[l + 1], sizes_[l]));
      biases.push_back(Vec::Zero(sizes_[l + 1]));
    }
  }

  /// He-normal hidden layers, Glorot-normal output layer, zero biases.
  void init(std::mt19937_64& rng) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const double fan_in = static_cast<double>(weights[l].cols());
      const double fan_out = static_cast<double>(weights[l].rows());
      const bool last = l + 1 == weights.size();
      std::normal_distribution<double> n(0.0, last ? std::sqrt(2.0 / (fan_in + fan_out)) : std::sqrt(2.0 / fan_in));
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = static_cast<S>(n(rng));
      }
      biases[l].setZero();
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t num_layers() const { return weights.size(); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  /// Activations kept for the backward pass: acts[0] is the input, acts[l] the post-ReLU
  /// output of hidden layer l.
  struct Cache {
    std::vector<Mat> acts;
  };

  Mat forward(const Mat& x, Cache* cache = nullptr) const {
    if (x.rows() != input_size()) throw LengthMismatch("mlp input has the wrong dimension");
    Mat h = x;
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(x);
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Mat z = weights[l] * h;
      z.colwise() += biases[l];
      if (l + 1 < weights.size()) {
        z = z.cwiseMax(S(0));
        if (cache) cache->acts.push_back(z);
      }
      h = std::move(z);
    }
    return h;
  }

  /// Accumulates parameter gradients into `grad` and returns d/dinput.
  Mat backward(const Cache& cache, const Mat& d_out, Mlp& grad) const {
    Mat d = d_out;
    for (std::size_t l = weights.size(); l-- > 0;) {
      const Mat& a = cache.acts[l];
      grad.weights[l].noalias() += d * a.transpose();
      grad.biases[l] += d.rowwise().sum();
      if (l == 0) return weights[0].transpose() * d;
      Mat dp = weights[l].transpose() * d;
      d = dp.cwiseProduct((a.array() > S(0)).template cast<S>().matrix());
    }
    return d;
  }

  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
  }

  template <typename T>
  Mlp<T> cast() const {
    Mlp<T> out(sizes_);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.weights[l] = weights[l].template cast<T>();
      out.biases[l] = biases[l].template cast<T>();
    }
    return out;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }

  /// Calls f(pointer, count) for every parameter tensor in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      f(weights[l].data(), static_cast<std::size_t>(weights[l].size()));
      f(biases[l].data(), static_cast<std::size_t>(biases[l].size()));
    }
  }

  std::vector<Mat> weights;  // out x in
  std::vector<Vec> biases;

 private:
  std::vector<int> sizes_;
};

/// Column-wise softmax, max-shifted.
template <typename Derived>
auto softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const S m = logits.col(c).maxCoeff();
    S total = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      out(r, c) = std::exp(logits(r, c) - m);
      total += out(r, c);
    }
    out.col(c) /= total;
  }
  return out;
}

/// d/dlogits from d/dprobs for a column-wise softmax.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> softmax_backward(
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& probs,
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& d_probs) {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> out = probs.cwiseProduct(d_probs);
  const Eigen::Matrix<S, 1, Eigen::Dynamic> dots = out.colwise().sum();
  out -= probs * dots.asDiagonal();
  return out;
}

/// Index of the largest entry; ties go to the lowest index.
template <typename It>
int argmax_lowest(It begin, It end) {
  int best = 0, k = 0;
  auto bv = *begin;
  for (It it = begin; it != end; ++it, ++k) {
    if (*it > bv) {
      bv = *it;
      best = k;
    }
  }
  return best;
}

/// Adam with bias correction over a flat list of tensors.
template <typename S>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  /// `params` and `grads` list matching tensors in the same order on every call.
  void step(const std::vector<std::pair<S*, std::size_t>>& params, const std::vector<std::pair<S*, std::size_t>>& grads) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.second, 0.0);
        v_.emplace_back(p.second, 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      S* w = params[k].first;
      const S* g = grads[k].first;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < params[k].second; ++i) {
        const double gi = g[i];
        m[i] = b1_ * m[i] + (1 - b1_) * gi;
        v[i] = b2_ * v[i] + (1 - b2_) * gi * gi;
        w[i] -= static_cast<S>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dilate
