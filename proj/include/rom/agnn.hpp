#pragma once

// Attentional graph network over the objects of two images. Four residual
// stages alternate self-attention (keys/values from the same image, the
// queried object included) and cross-attention (keys/values from the other
// image). Stage weights are shared between the two images.

#include <rom/layers.hpp>
#include <rom/model_config.hpp>

#include <array>
#include <utility>

namespace rom {

enum class AttentionMode { self, cross };

inline constexpr std::array<AttentionMode, 4> kStageModes{AttentionMode::self, AttentionMode::cross,
                                                          AttentionMode::self, AttentionMode::cross};

template <class T>
struct AttentionStageParams {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Mlp<T> update;  // (x, m) -> residual

  template <class Rng>
  static AttentionStageParams init(const ModelConfig& c, Rng& rng) {
    const Eigen::Index w = c.agnn_width;
    return {Linear<T>::glorot(w, w, rng), Linear<T>::glorot(w, w, rng), Linear<T>::glorot(w, w, rng),
            Mlp<T>::glorot(2 * w, {c.agnn_hidden, w}, rng)};
  }
};

template <class T>
struct AgnnParams {
  Linear<T> input;
  std::array<AttentionStageParams<T>, 4> stages;
  Mlp<T> dist;

  template <class Rng>
  static AgnnParams init(const ModelConfig& c, Rng& rng) {
    AgnnParams p;
    const Eigen::Index w = c.agnn_width;
    p.input = Linear<T>::glorot(c.d_obj(), w, rng);
    if (c.d_obj() == w) {
      // Identity plus a small perturbation.
      std::uniform_real_distribution<double> noise(-0.01, 0.01);
      for (Eigen::Index i = 0; i < w; ++i) {
        for (Eigen::Index j = 0; j < w; ++j) {
          p.input.weight(i, j) = static_cast<T>((i == j ? 1.0 : 0.0) + noise(rng));
        }
      }
    }
    for (auto& s : p.stages) s = AttentionStageParams<T>::init(c, rng);
    p.dist = Mlp<T>::glorot(2 * w, {c.dist_hidden, 1}, rng);
    return p;
  }

  void visit(const TensorVisitor<T>& f) {
    rom::visit("agnn.input", input, f);
    for (std::size_t l = 0; l < stages.size(); ++l) {
      const std::string s = "agnn.stage" + std::to_string(l);
      rom::visit(s + ".query", stages[l].query, f);
      rom::visit(s + ".key", stages[l].key, f);
      rom::visit(s + ".value", stages[l].value, f);
      rom::visit(s + ".update", stages[l].update, f);
    }
    rom::visit("agnn.dist", dist, f);
  }
};

struct StageNodes {
  NodeId x1;
  NodeId x2;
  NodeId attention1;  // M x (M or N), rows sum to 1
  NodeId attention2;
};

template <class T>
StageNodes attention_stage(Graph<T>& g, const AttentionStageParams<T>& p, NodeId x1, NodeId x2, AttentionMode mode) {
  const auto& a = g.value(x1);
  const auto& b = g.value(x2);
  const Eigen::Index w = p.query.in();
  if (a.cols() != w || b.cols() != w) {
    throw Error("attention_stage feature width mismatch: " + shape_of(a) + ", " + shape_of(b) + " vs width " +
                std::to_string(w));
  }
  if (mode == AttentionMode::cross && (a.rows() == 0 || b.rows() == 0)) {
    throw Error("cross attention needs objects in both images, got " + shape_of(a) + " and " + shape_of(b));
  }
  // Both images share the affine maps, so they run on the stacked rows.
  // Each update reads only the stage inputs.
  const Eigen::Index m = a.rows();
  const Eigen::Index n = b.rows();
  NodeId x = g.concat_rows(x1, x2);
  NodeId q = p.query.forward(g, x);
  NodeId k = p.key.forward(g, x);
  NodeId v = p.value.forward(g, x);
  NodeId q1 = g.slice_rows(q, 0, m), q2 = g.slice_rows(q, m, n);
  NodeId k1 = g.slice_rows(k, 0, m), k2 = g.slice_rows(k, m, n);
  NodeId v1 = g.slice_rows(v, 0, m), v2 = g.slice_rows(v, m, n);
  const bool self = mode == AttentionMode::self;
  NodeId att1 = g.row_softmax(g.matmul(q1, g.transpose(self ? k1 : k2)));
  NodeId att2 = g.row_softmax(g.matmul(q2, g.transpose(self ? k2 : k1)));
  NodeId messages = g.concat_rows(g.matmul(att1, self ? v1 : v2), g.matmul(att2, self ? v2 : v1));
  NodeId updated = g.add(x, p.update.forward(g, g.concat_cols(x, messages)));
  return {g.slice_rows(updated, 0, m), g.slice_rows(updated, m, n), att1, att2};
}

struct RefineNodes {
  NodeId x1;
  NodeId x2;
  std::array<StageNodes, 4> stages;
};

template <class T>
RefineNodes refine(Graph<T>& g, const AgnnParams<T>& p, NodeId f1, NodeId f2) {
  RefineNodes out;
  NodeId x1 = p.input.forward(g, f1);
  NodeId x2 = p.input.forward(g, f2);
  for (std::size_t l = 0; l < p.stages.size(); ++l) {
    out.stages[l] = attention_stage(g, p.stages[l], x1, x2, kStageModes[l]);
    x1 = out.stages[l].x1;
    x2 = out.stages[l].x2;
  }
  out.x1 = x1;
  out.x2 = x2;
  return out;
}

/// Ordered pairs (i, j), i != j, over n objects in row-major order.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> ordered_pairs(Eigen::Index n) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

/// g_dist applied to (x_i, x_j) for every listed pair; returns P x 1.
///
/// The first layer on a concatenation splits into W_a x_i + W_b x_j, so it
/// runs once per object and the pair rows are gathered afterwards.
template <class T>
NodeId predict_rel_distance(Graph<T>& g, const AgnnParams<T>& p, NodeId x,
                            const std::vector<std::pair<Eigen::Index, Eigen::Index>>& pairs) {
  const Eigen::Index w = g.value(x).cols();
  const Linear<T>& first = p.dist.layers.front();
  if (first.in() != 2 * w) throw Error("g_dist expects input width " + std::to_string(first.in()));
  NodeId weight = g.parameter(first.weight);
  NodeId left = g.matmul(x, g.slice_rows(weight, 0, w));
  NodeId right = g.matmul(x, g.slice_rows(weight, w, w));
  std::vector<Eigen::Index> is, js;
  for (auto [i, j] : pairs) {
    is.push_back(i);
    js.push_back(j);
  }
  NodeId h = g.add(g.add(g.gather_rows(left, is), g.gather_rows(right, js)), g.parameter(first.bias));
  for (std::size_t l = 1; l < p.dist.layers.size(); ++l) {
    h = p.dist.layers[l].forward(g, g.relu(h));
  }
  return h;
}

/// Scalar relative distance for one ordered pair of matching features.
template <class T>
double predict_rel_distance(const Tensor<T>& x_i, const Tensor<T>& x_j, const AgnnParams<T>& p) {
  Graph<T> g;
  NodeId in = g.concat_cols(g.constant(x_i), g.constant(x_j));
  return double(g.value(p.dist.forward(g, in))(0, 0));
}

}  // namespace rom
