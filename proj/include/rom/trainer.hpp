#pragma once

// Training objective and loop.
//
//   L = w_aff * L_aff + w_cls * L_cls + w_pos * L_pos + w_rel * L_rel
//
// L_aff: mean negative log assignment probability over supervised entries
//        (matches plus dustbin assignments of unmatched objects).
// L_cls: class-weighted cross entropy, averaged over objects.
// L_pos: per image, (1/n) * sum of squared (dx, dy, distance) residuals.
//        Objects whose true offset exceeds the box width or height are
//        skipped but still counted in n.
// L_rel: sum over both images and ordered pairs i != j of squared errors.

#include <rom/model.hpp>
#include <rom/scenegen.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rom {

struct LossWeights {
  double affinity = 1.0;
  double classification = 1.0;
  double position = 0.1;
  double relative = 0.1;
};

inline constexpr double kProbabilityFloor = 1e-12;

// Supervision -------------------------------------------------------------

struct Supervision {
  std::vector<Match> matches;
  std::vector<int> unmatched1;
  std::vector<int> unmatched2;
};

inline Supervision supervision(std::span<const Match> gt, int m, int n) {
  Supervision s;
  s.matches.assign(gt.begin(), gt.end());
  std::vector<bool> used1(static_cast<std::size_t>(m), false), used2(static_cast<std::size_t>(n), false);
  for (auto [i, j] : gt) {
    if (i < 0 || i >= m || j < 0 || j >= n) throw Error("ground-truth match out of range");
    if (used1[static_cast<std::size_t>(i)] || used2[static_cast<std::size_t>(j)]) {
      throw Error("ground-truth matches are not one-to-one");
    }
    used1[static_cast<std::size_t>(i)] = used2[static_cast<std::size_t>(j)] = true;
  }
  for (int i = 0; i < m; ++i) {
    if (!used1[static_cast<std::size_t>(i)]) s.unmatched1.push_back(i);
  }
  for (int j = 0; j < n; ++j) {
    if (!used2[static_cast<std::size_t>(j)]) s.unmatched2.push_back(j);
  }
  return s;
}

// Losses ------------------------------------------------------------------

/// Weights of the supervised entries of P-bar, each 1/K.
template <class T>
Tensor<T> affinity_mask(const Supervision& s, Eigen::Index rows, Eigen::Index cols) {
  const std::size_t k = s.matches.size() + s.unmatched1.size() + s.unmatched2.size();
  Tensor<T> w = Tensor<T>::Zero(rows, cols);
  if (k == 0) return w;
  const T share = T(1) / static_cast<T>(k);
  for (auto [i, j] : s.matches) w(i, j) += share;
  for (int i : s.unmatched1) w(i, cols - 1) += share;
  for (int j : s.unmatched2) w(rows - 1, j) += share;
  return w;
}

template <class T>
NodeId affinity_loss(Graph<T>& g, NodeId log_assignment, const Supervision& s) {
  const auto& lp = g.value(log_assignment);
  NodeId mask = g.constant(affinity_mask<T>(s, lp.rows(), lp.cols()));
  return g.scale(g.sum_all(g.mul(log_assignment, mask)), T(-1));
}

/// Same loss from probabilities; entries below the floor are clamped.
inline double affinity_loss(const Tensor<double>& p, const Supervision& s) {
  const Tensor<double> w = affinity_mask<double>(s, p.rows(), p.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (w(i, j) != 0.0) loss -= w(i, j) * std::log(std::max(p(i, j), kProbabilityFloor));
    }
  }
  return loss;
}

/// Inverse class frequency over both views of every pair, normalized to
/// mean 1. Unseen classes count as seen once.
inline std::vector<double> class_weights(std::span<const ScenePair> corpus, int classes) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (const auto& p : corpus) {
    for (const View* v : {&p.view1, &p.view2}) {
      for (const auto& d : v->detections) {
        if (d.label < 0 || d.label >= classes) throw Error("class label " + std::to_string(d.label) + " out of range");
        counts[static_cast<std::size_t>(d.label)] += 1.0;
      }
    }
  }
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) w[c] = 1.0 / std::max(1.0, counts[c]);
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (double& x : w) x /= mean;
  return w;
}

template <class T>
NodeId classification_loss(Graph<T>& g, NodeId logits, std::span<const int> labels, std::span<const double> weights) {
  const auto& z = g.value(logits);
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) throw Error("label count does not match logits rows");
  if (static_cast<Eigen::Index>(weights.size()) != z.cols()) throw Error("class weight count does not match logits columns");
  Tensor<T> mask = Tensor<T>::Zero(z.rows(), z.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= z.cols()) throw Error("class label " + std::to_string(y) + " >= " + std::to_string(z.cols()));
    if (!(weights[static_cast<std::size_t>(y)] > 0.0)) throw Error("class weights must be positive");
    mask(static_cast<Eigen::Index>(i), y) = static_cast<T>(weights[static_cast<std::size_t>(y)]);
  }
  NodeId log_probs = g.sub(logits, g.logsumexp_rows(logits));
  const T inv = T(1) / static_cast<T>(std::max<std::size_t>(1, labels.size()));
  return g.scale(g.sum_all(g.mul(log_probs, g.constant(mask))), -inv);
}

/// Position targets and inclusion mask of one image.
template <class T>
struct PositionTargets {
  Tensor<T> target;  // n x 3: dx, dy, distance
  Tensor<T> mask;    // n x 1, 0 for excluded objects
};

/// An object is excluded when |dx| exceeds its box width or |dy| its height.
template <class T>
PositionTargets<T> position_targets(std::span<const Detection> dets) {
  const auto n = static_cast<Eigen::Index>(dets.size());
  PositionTargets<T> t{Tensor<T>(n, 3), Tensor<T>(n, 1)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Detection& d = dets[static_cast<std::size_t>(i)];
    t.target(i, 0) = static_cast<T>(d.dx);
    t.target(i, 1) = static_cast<T>(d.dy);
    t.target(i, 2) = static_cast<T>(d.distance);
    const bool excluded = std::abs(d.dx) > d.box.width() || std::abs(d.dy) > d.box.height();
    t.mask(i, 0) = excluded ? T(0) : T(1);
  }
  return t;
}

template <class T>
NodeId position_loss(Graph<T>& g, NodeId predicted1, const PositionTargets<T>& t1, NodeId predicted2,
                     const PositionTargets<T>& t2) {
  auto image = [&](NodeId pred, const PositionTargets<T>& t) {
    NodeId diff = g.sub(pred, g.constant(t.target));
    NodeId sq = g.mul(g.mul(diff, diff), g.constant(t.mask));
    const Eigen::Index n = t.target.rows();
    if (n < 1) throw Error("position_loss needs at least one object per image");
    return g.scale(g.sum_all(sq), T(1) / static_cast<T>(n));
  };
  return g.add(image(predicted1, t1), image(predicted2, t2));
}

/// Targets for `ordered_pairs(n)`, as a P x 1 column.
template <class T>
Tensor<T> rel_distance_targets(const Tensor<double>& rel) {
  const auto pairs = ordered_pairs(rel.rows());
  Tensor<T> t(static_cast<Eigen::Index>(pairs.size()), 1);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    t(static_cast<Eigen::Index>(k), 0) = static_cast<T>(rel(pairs[k].first, pairs[k].second));
  }
  return t;
}

/// Sum of squared errors over the given images' ordered pairs.
template <class T>
NodeId rel_distance_loss(Graph<T>& g, std::span<const NodeId> predicted, std::span<const Tensor<T>> targets) {
  NodeId total = g.constant(Tensor<T>::Zero(1, 1));
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (targets[k].rows() == 0) continue;
    NodeId diff = g.sub(predicted[k], g.constant(targets[k]));
    total = g.add(total, g.sum_all(g.mul(diff, diff)));
  }
  return total;
}

struct LossParts {
  NodeId affinity;
  NodeId classification;
  NodeId position;
  NodeId relative;
};

template <class T>
NodeId total_loss(Graph<T>& g, const LossParts& p, const LossWeights& w) {
  NodeId total = g.scale(p.affinity, static_cast<T>(w.affinity));
  total = g.add(total, g.scale(p.classification, static_cast<T>(w.classification)));
  total = g.add(total, g.scale(p.position, static_cast<T>(w.position)));
  return g.add(total, g.scale(p.relative, static_cast<T>(w.relative)));
}

inline double total_loss(double affinity, double classification, double position, double relative,
                         const LossWeights& w) {
  return w.affinity * affinity + w.classification * classification + w.position * position + w.relative * relative;
}

// Training sample ---------------------------------------------------------

/// One pair prepared as network input, after object capping and noise.
template <class T>
struct TrainingSample {
  PairInput<T> input;
  Supervision supervision;
  std::vector<int> labels1;
  std::vector<int> labels2;
  PositionTargets<T> positions1;
  PositionTargets<T> positions2;
  Tensor<T> rel1;
  Tensor<T> rel2;
};

/// Sorted uniform subset of at most `cap` indices out of n.
inline std::vector<int> subsample(int n, int cap, std::mt19937_64& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= cap) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <class T>
TrainingSample<T> make_sample(const ScenePair& pair, int max_objects, double noise_variance, std::mt19937_64& rng) {
  const std::vector<int> keep1 = subsample(pair.view1.size(), max_objects, rng);
  const std::vector<int> keep2 = subsample(pair.view2.size(), max_objects, rng);
  std::normal_distribution<double> noise(0.0, std::sqrt(noise_variance));
  TrainingSample<T> s;

  auto take = [&](const View& v, const std::vector<int>& keep, Tensor<T>& viz, Tensor<T>& boxes, std::vector<int>& labels,
                  PositionTargets<T>& pos, Tensor<T>& rel) {
    const auto n = static_cast<Eigen::Index>(keep.size());
    viz.resize(n, v.features.cols());
    std::vector<Box> bx;
    std::vector<Detection> dets;
    Tensor<double> sub_rel(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const int i = keep[static_cast<std::size_t>(a)];
      viz.row(a) = v.features.row(i).template cast<T>();
      if (noise_variance > 0.0) {
        for (Eigen::Index c = 0; c < viz.cols(); ++c) viz(a, c) += static_cast<T>(noise(rng));
      }
      dets.push_back(v.detections[static_cast<std::size_t>(i)]);
      bx.push_back(dets.back().box);
      labels.push_back(dets.back().label);
      for (Eigen::Index b = 0; b < n; ++b) sub_rel(a, b) = v.rel_distance(i, keep[static_cast<std::size_t>(b)]);
    }
    boxes = box_tensor<T>(bx);
    pos = position_targets<T>(dets);
    rel = rel_distance_targets<T>(sub_rel);
  };
  take(pair.view1, keep1, s.input.viz1, s.input.boxes1, s.labels1, s.positions1, s.rel1);
  take(pair.view2, keep2, s.input.viz2, s.input.boxes2, s.labels2, s.positions2, s.rel2);

  std::vector<int> remap1(static_cast<std::size_t>(pair.view1.size()), -1);
  std::vector<int> remap2(static_cast<std::size_t>(pair.view2.size()), -1);
  for (std::size_t a = 0; a < keep1.size(); ++a) remap1[static_cast<std::size_t>(keep1[a])] = static_cast<int>(a);
  for (std::size_t b = 0; b < keep2.size(); ++b) remap2[static_cast<std::size_t>(keep2[b])] = static_cast<int>(b);
  std::vector<Match> gt;
  for (auto [i, j] : pair.gt) {
    const int a = remap1[static_cast<std::size_t>(i)];
    const int b = remap2[static_cast<std::size_t>(j)];
    if (a >= 0 && b >= 0) gt.emplace_back(a, b);
  }
  s.supervision = supervision(gt, static_cast<int>(keep1.size()), static_cast<int>(keep2.size()));
  return s;
}

/// Loss graph for one prepared sample.
template <class T>
struct SampleGraph {
  ForwardNodes forward;
  LossParts parts;
  NodeId total;
};

template <class T>
SampleGraph<T> build_loss(Graph<T>& g, const Model<T>& model, const TrainingSample<T>& s, std::span<const double> weights,
                          const LossWeights& lw, int sinkhorn_iterations) {
  SampleGraph<T> out;
  out.forward = forward(g, model, s.input, sinkhorn_iterations);
  const ForwardNodes& f = out.forward;
  out.parts.affinity = affinity_loss(g, f.log_assignment, s.supervision);
  std::vector<int> labels = s.labels1;
  labels.insert(labels.end(), s.labels2.begin(), s.labels2.end());
  out.parts.classification = classification_loss(g, f.encoded.logits, labels, weights);
  out.parts.position = position_loss(g, f.position1, s.positions1, f.position2, s.positions2);
  const NodeId rel[2] = {predict_rel_distance(g, model.agnn, f.refined.x1, ordered_pairs(s.input.viz1.rows())),
                         predict_rel_distance(g, model.agnn, f.refined.x2, ordered_pairs(s.input.viz2.rows()))};
  const Tensor<T> targets[2] = {s.rel1, s.rel2};
  out.parts.relative = rel_distance_loss<T>(g, rel, targets);
  out.total = total_loss(g, out.parts, lw);
  return out;
}

// Optimizer ---------------------------------------------------------------

template <class T>
struct AdamState {
  std::vector<Tensor<T>> first;
  std::vector<Tensor<T>> second;
  std::int64_t step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_parameters(std::span<Tensor<T>* const> params, double lr) {
    AdamState s;
    s.learning_rate = lr;
    for (const Tensor<T>* p : params) {
      s.first.push_back(Tensor<T>::Zero(p->rows(), p->cols()));
      s.second.push_back(Tensor<T>::Zero(p->rows(), p->cols()));
    }
    return s;
  }
};

/// Bias-corrected Adam update.
template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& s) {
  if (params.size() != grads.size() || params.size() != s.first.size()) {
    throw Error("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->rows() != grads[k].rows() || params[k]->cols() != grads[k].cols()) {
      throw Error("adam_step: shape mismatch " + shape_of(*params[k]) + " vs " + shape_of(grads[k]));
    }
    if (!grads[k].allFinite()) throw Error("non-finite gradient in parameter tensor " + std::to_string(k));
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
  const T b1 = static_cast<T>(s.beta1);
  const T b2 = static_cast<T>(s.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    s.first[k] = b1 * s.first[k] + (T(1) - b1) * grads[k];
    s.second[k] = b2 * s.second[k] + (T(1) - b2) * grads[k].cwiseProduct(grads[k]);
    const auto m_hat = (s.first[k].array() / static_cast<T>(c1));
    const auto v_hat = (s.second[k].array() / static_cast<T>(c2));
    params[k]->array() -= static_cast<T>(s.learning_rate) * m_hat / (v_hat.sqrt() + static_cast<T>(s.epsilon));
  }
}

// Loop --------------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-4;
  int sinkhorn_iterations = 10;
  int max_objects = 40;
  double feature_noise_variance = 0.01;
  LossWeights weights;
};

struct EpochMetrics {
  int epoch = 0;
  int pairs = 0;
  double total = 0.0;
  double affinity = 0.0;
  double classification = 0.0;
  double position = 0.0;
  double relative = 0.0;
};

/// Gradient of each parameter tensor after `g.backward`, zeros if unused.
template <class T>
std::vector<Tensor<T>> collect_gradients(const Graph<T>& g, std::span<Tensor<T>* const> params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const Tensor<T>* p : params) {
    const NodeId* id = g.find(*p);
    out.push_back(id ? g.grad(*id) : Tensor<T>::Zero(p->rows(), p->cols()));
  }
  return out;
}

/// Adds this graph's parameter gradients into `acc`, one entry per parameter.
template <class T>
void accumulate_gradients(const Graph<T>& g, std::span<Tensor<T>* const> params, std::vector<Tensor<T>>& acc) {
  if (acc.size() != params.size()) {
    acc.clear();
    for (const Tensor<T>* p : params) acc.push_back(Tensor<T>::Zero(p->rows(), p->cols()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const NodeId* id = g.find(*params[k]);
    if (!id) continue;
    if (const Tensor<T>* gr = g.grad_if(*id)) acc[k] += *gr;
  }
}

/// One pass over the corpus in a seeded order. Every batch averages its
/// per-pair gradients in corpus-order before a single Adam step.
template <class T>
EpochMetrics train_epoch(std::span<const ScenePair> corpus, Model<T>& model, AdamState<T>& opt, const TrainConfig& cfg,
                         std::span<const double> class_weights, std::uint64_t seed, int epoch) {
  if (corpus.empty()) throw Error("train_epoch: empty corpus");
  auto rng = make_rng(seed, 100 + static_cast<std::uint64_t>(epoch));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Tensor<T>*> params = model.parameters();
  opt.learning_rate = cfg.learning_rate;
  EpochMetrics metrics;
  metrics.epoch = epoch;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<Tensor<T>> batch;
    for (std::size_t b = start; b < end; ++b) {
      const ScenePair& pair = corpus[order[b]];
      TrainingSample<T> sample = make_sample<T>(pair, cfg.max_objects, cfg.feature_noise_variance, rng);
      Graph<T> g;
      SampleGraph<T> sg = build_loss(g, model, sample, class_weights, cfg.weights, cfg.sinkhorn_iterations);
      g.backward(sg.total);
      accumulate_gradients<T>(g, params, batch);
      metrics.total += double(g.value(sg.total)(0, 0));
      metrics.affinity += double(g.value(sg.parts.affinity)(0, 0));
      metrics.classification += double(g.value(sg.parts.classification)(0, 0));
      metrics.position += double(g.value(sg.parts.position)(0, 0));
      metrics.relative += double(g.value(sg.parts.relative)(0, 0));
      ++metrics.pairs;
    }
    const T inv = T(1) / static_cast<T>(end - start);
    for (auto& gr : batch) gr *= inv;
    adam_step<T>(params, batch, opt);
  }
  const double n = metrics.pairs;
  metrics.total /= n;
  metrics.affinity /= n;
  metrics.classification /= n;
  metrics.position /= n;
  metrics.relative /= n;
  return metrics;
}

/// Full-pair network input without subsampling or noise.
template <class T>
PairInput<T> pair_input(const ScenePair& pair) {
  PairInput<T> in;
  in.viz1 = pair.view1.features.template cast<T>();
  in.viz2 = pair.view2.features.template cast<T>();
  const std::vector<Box> b1 = pair.view1.boxes();
  const std::vector<Box> b2 = pair.view2.boxes();
  in.boxes1 = box_tensor<T>(b1);
  in.boxes2 = box_tensor<T>(b2);
  return in;
}

template <class T>
struct TrainResult {
  Model<T> model;
  AdamState<T> optimizer;
  std::vector<EpochMetrics> history;
};

/// Runs cfg.epochs epochs from a fresh model. `on_epoch` sees each epoch's
/// metrics and the current model.
template <class T>
TrainResult<T> train_model(std::span<const ScenePair> corpus, const ModelConfig& mc, const TrainConfig& cfg,
                           std::uint64_t seed,
                           const std::function<void(const EpochMetrics&, const Model<T>&)>& on_epoch = {}) {
  if (cfg.epochs < 1) throw Error("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw Error("train: batch size must be >= 1");
  TrainResult<T> r{Model<T>::init(mc, seed), {}, {}};
  r.optimizer = AdamState<T>::for_parameters(r.model.parameters(), cfg.learning_rate);
  const std::vector<double> weights = class_weights(corpus, mc.classes);
  for (int e = 0; e < cfg.epochs; ++e) {
    r.history.push_back(train_epoch<T>(corpus, r.model, r.optimizer, cfg, weights, seed, e));
    if (on_epoch) on_epoch(r.history.back(), r.model);
  }
  return r;
}

}  // namespace rom
