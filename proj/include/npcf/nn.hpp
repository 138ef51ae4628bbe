#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "npcf/random.hpp"

namespace npcf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { softplus, tanh_fn, relu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::tanh_fn: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

inline double softplus(double z) {
  if (z > 30.0) return z;
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double act_value(Activation a, double z) {
  switch (a) {
    case Activation::softplus: return softplus(z);
    case Activation::tanh_fn: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

// Derivative with respect to the pre-activation.
inline double act_grad(Activation a, double z) {
  switch (a) {
    case Activation::softplus: return sigmoid(z);
    case Activation::tanh_fn: {
      const double th = std::tanh(z);
      return 1.0 - th * th;
    }
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

struct DenseLayer {
  Mat W;  // out x in
  Vec b;
};

struct MlpCache {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // layer outputs after activation (last layer as emitted)
};

// Plain fully connected stack. The activation is applied after every layer
// except the last unless activate_last is set (used for trunks whose output
// is itself a hidden feature).
struct Mlp {
  std::vector<DenseLayer> layers;
  Activation act = Activation::softplus;
  bool activate_last = false;

  static Mlp make(std::span<const int> sizes, Activation act, bool activate_last,
                  Rng& rng) {
    Mlp m;
    m.act = act;
    m.activate_last = activate_last;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      DenseLayer layer;
      layer.W = Mat(sizes[i + 1], sizes[i]);
      layer.b = Vec::Zero(sizes[i + 1]);
      const double limit = std::sqrt(6.0 / (sizes[i] + sizes[i + 1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index r = 0; r < layer.W.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.W.cols(); ++c) layer.W(r, c) = dist(rng);
      m.layers.push_back(std::move(layer));
    }
    return m;
  }

  Vec forward(const Vec& in, MlpCache* cache = nullptr) const {
    Vec h = in;
    if (cache) {
      cache->input = in;
      cache->pre.clear();
      cache->post.clear();
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Vec z = layers[l].W * h + layers[l].b;
      const bool apply_act = activate_last || l + 1 < layers.size();
      Vec out(z.size());
      if (apply_act)
        for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = act_value(act, z[i]);
      else
        out = z;
      if (cache) {
        cache->pre.push_back(z);
        cache->post.push_back(out);
      }
      h = std::move(out);
    }
    return h;
  }

  // Accumulates weight gradients into `grads` (parallel to layers) and
  // returns the gradient at the input.
  Vec backward(const MlpCache& cache, const Vec& d_out,
               std::vector<DenseLayer>& grads) const {
    Vec delta = d_out;
    for (std::size_t li = layers.size(); li-- > 0;) {
      const bool applied_act = activate_last || li + 1 < layers.size();
      if (applied_act) {
        const Vec& z = cache.pre[li];
        for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] *= act_grad(act, z[i]);
      }
      const Vec& in = li == 0 ? cache.input : cache.post[li - 1];
      grads[li].W.noalias() += delta * in.transpose();
      grads[li].b += delta;
      delta = layers[li].W.transpose() * delta;
    }
    return delta;
  }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
  }
};

inline std::vector<DenseLayer> zero_grads_like(const Mlp& m) {
  std::vector<DenseLayer> g;
  g.reserve(m.layers.size());
  for (const auto& l : m.layers)
    g.push_back({Mat::Zero(l.W.rows(), l.W.cols()), Vec::Zero(l.b.size())});
  return g;
}

inline DenseLayer zero_grad_like(const DenseLayer& l) {
  return {Mat::Zero(l.W.rows(), l.W.cols()), Vec::Zero(l.b.size())};
}

// Flat parameter packing; per layer W is row-major, then b.
namespace detail {

inline void pack_layer(const DenseLayer& l, Vec& out, Eigen::Index& off) {
  for (Eigen::Index r = 0; r < l.W.rows(); ++r)
    for (Eigen::Index c = 0; c < l.W.cols(); ++c) out[off++] = l.W(r, c);
  for (Eigen::Index i = 0; i < l.b.size(); ++i) out[off++] = l.b[i];
}

inline void unpack_layer(DenseLayer& l, const Vec& in, Eigen::Index& off) {
  for (Eigen::Index r = 0; r < l.W.rows(); ++r)
    for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = in[off++];
  for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = in[off++];
}

}  // namespace detail

// Adam with externally supplied (scheduled) learning rate.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  Vec m, v;

  void init(Eigen::Index n) {
    t = 0;
    m = Vec::Zero(n);
    v = Vec::Zero(n);
  }

  void step(Vec& params, const Vec& grad, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace npcf
