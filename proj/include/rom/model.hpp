#pragma once

// Full matching network: encoder -> attentional graph network -> scores ->
// dustbin -> Sinkhorn. Both images' objects go through the encoder as one
// stacked batch.

#include <rom/agnn.hpp>
#include <rom/encoder.hpp>
#include <rom/matcher.hpp>
#include <rom/model_config.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rom {

template <class T>
struct Model {
  ModelConfig config;
  EncoderParams<T> encoder;
  AgnnParams<T> agnn;
  Tensor<T> dustbin = Tensor<T>::Constant(1, 1, T(1));

  static Model init(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    std::mt19937_64 rng(seed);
    Model m;
    m.config = c;
    m.encoder = EncoderParams<T>::init(c, rng);
    m.agnn = AgnnParams<T>::init(c, rng);
    m.dustbin = Tensor<T>::Constant(1, 1, static_cast<T>(c.dustbin_init));
    return m;
  }

  /// Every parameter tensor in checkpoint order.
  void visit(const TensorVisitor<T>& f) {
    encoder.visit(f);
    agnn.visit(f);
    f("dustbin", dustbin);
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
  }

  std::vector<std::string> parameter_names() {
    std::vector<std::string> out;
    visit([&](const std::string& name, Tensor<T>&) { out.push_back(name); });
    return out;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> out = Model<U>::init(config, 0);
    Model copy = *this;
    auto src = copy.parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }
};

/// Tensors describing one image pair as network input.
template <class T>
struct PairInput {
  Tensor<T> viz1;    // M x D_viz
  Tensor<T> viz2;    // N x D_viz
  Tensor<T> boxes1;  // M x 4, normalized
  Tensor<T> boxes2;  // N x 4
};

struct ForwardNodes {
  EncoderNodes encoded;  // rows: image-1 objects then image-2 objects
  NodeId position1;
  NodeId position2;
  NodeId logits1;
  NodeId logits2;
  RefineNodes refined;
  NodeId scores;          // M x N
  NodeId augmented;       // (M+1) x (N+1)
  NodeId log_assignment;  // log P-bar
};

template <class T>
ForwardNodes forward(Graph<T>& g, const Model<T>& model, const PairInput<T>& in, int sinkhorn_iterations) {
  const Eigen::Index m = in.viz1.rows();
  const Eigen::Index n = in.viz2.rows();
  if (m < 1 || n < 1) throw Error("forward needs at least one object per image");
  ForwardNodes out;
  NodeId viz = g.concat_rows(g.constant(in.viz1), g.constant(in.viz2));
  NodeId boxes = g.concat_rows(g.constant(in.boxes1), g.constant(in.boxes2));
  out.encoded = encode(g, model.encoder, viz, boxes);
  out.position1 = g.slice_rows(out.encoded.position, 0, m);
  out.position2 = g.slice_rows(out.encoded.position, m, n);
  out.logits1 = g.slice_rows(out.encoded.logits, 0, m);
  out.logits2 = g.slice_rows(out.encoded.logits, m, n);
  NodeId f1 = g.slice_rows(out.encoded.f, 0, m);
  NodeId f2 = g.slice_rows(out.encoded.f, m, n);
  out.refined = refine(g, model.agnn, f1, f2);
  out.scores = score_matrix(g, out.refined.x1, out.refined.x2);
  out.augmented = augment_dustbin(g, out.scores, g.parameter(model.dustbin));
  out.log_assignment = sinkhorn_log(g, out.augmented, sinkhorn_iterations);
  return out;
}

/// Per-detection side-task outputs of one image.
struct SidePredictions {
  std::vector<int> labels;
  std::vector<PositionPrediction> positions;
};

struct PairPrediction {
  Tensor<double> augmented_scores;  // S-bar of the object branch
  Assignment assignment;
  SidePredictions side1;
  SidePredictions side2;
};

namespace detail {

template <class T>
SidePredictions side_predictions(const Tensor<T>& position, const Tensor<T>& logits) {
  SidePredictions s;
  for (Eigen::Index i = 0; i < position.rows(); ++i) {
    s.labels.push_back(argmax_row(logits, i));
    s.positions.push_back({double(position(i, 0)), double(position(i, 1)), double(position(i, 2))});
  }
  return s;
}

}  // namespace detail

/// Inference with optional keypoint fusion: S-bar = S-bar_obj + alpha * S-bar_kp.
/// Sinkhorn and extraction run in double precision.
template <class T>
PairPrediction predict(const Model<T>& model, const PairInput<T>& in, std::span<const Box> boxes1,
                       std::span<const Box> boxes2, std::span<const KeypointMatch> keypoints, double alpha,
                       int sinkhorn_iterations) {
  Graph<T> g;
  ForwardNodes f = forward(g, model, in, 1);
  PairPrediction p;
  p.augmented_scores = g.value(f.augmented).template cast<double>();
  Tensor<double> fused = p.augmented_scores;
  if (alpha != 0.0) fused += alpha * keypoint_scores(keypoints, boxes1, boxes2);
  p.assignment = extract_assignment(sinkhorn(fused, sinkhorn_iterations));
  p.side1 = detail::side_predictions(g.value(f.position1), g.value(f.logits1));
  p.side2 = detail::side_predictions(g.value(f.position2), g.value(f.logits2));
  return p;
}

}  // namespace rom
