#pragma once

#include <rom/diffcore.hpp>

#include <functional>
#include <string>
#include <vector>

namespace rom {

template <class T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out

  [[nodiscard]] Eigen::Index in() const { return weight.rows(); }
  [[nodiscard]] Eigen::Index out() const { return weight.cols(); }

  template <class Rng>
  static Linear glorot(Eigen::Index in, Eigen::Index out, Rng& rng) {
    return {glorot_uniform<T>(in, out, rng), Tensor<T>::Zero(1, out)};
  }

  static Linear zeros(Eigen::Index in, Eigen::Index out) {
    return {Tensor<T>::Zero(in, out), Tensor<T>::Zero(1, out)};
  }

  NodeId forward(Graph<T>& g, NodeId x) const {
    return g.add(g.matmul(x, g.parameter(weight)), g.parameter(bias));
  }
};

/// Fully connected stack with ReLU after every layer except the last.
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;

  /// `widths` lists hidden and output sizes, e.g. {32, 64, 128}.
  template <class Rng>
  static Mlp glorot(Eigen::Index in, const std::vector<Eigen::Index>& widths, Rng& rng) {
    Mlp m;
    for (Eigen::Index w : widths) {
      m.layers.push_back(Linear<T>::glorot(in, w, rng));
      in = w;
    }
    return m;
  }

  [[nodiscard]] Eigen::Index in() const { return layers.front().in(); }
  [[nodiscard]] Eigen::Index out() const { return layers.back().out(); }

  NodeId forward(Graph<T>& g, NodeId x) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      x = layers[l].forward(g, x);
      if (l + 1 < layers.size()) x = g.relu(x);
    }
    return x;
  }

  void zero() {
    for (auto& l : layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
  }
};

template <class T>
using TensorVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <class T>
void visit(const std::string& prefix, Mlp<T>& mlp, const TensorVisitor<T>& f) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    f(prefix + "." + std::to_string(l) + ".weight", mlp.layers[l].weight);
    f(prefix + "." + std::to_string(l) + ".bias", mlp.layers[l].bias);
  }
}

template <class T>
void visit(const std::string& prefix, Linear<T>& lin, const TensorVisitor<T>& f) {
  f(prefix + ".weight", lin.weight);
  f(prefix + ".bias", lin.bias);
}

}  // namespace rom
