#pragma once

// Object encoder: bounding box and visual feature -> view-dependent and
// view-independent object features, with position and class side heads.
//
//   f_loc   = g_loc(box)
//   f_in    = (f_viz, f_loc)
//   f_dep   = g_dep(f_in)     -> g_pos   -> (dx, dy, distance)
//   f_indep = g_indep(f_in)   -> g_class -> class logits
//   f       = (f_dep, f_indep)

#include <rom/box.hpp>
#include <rom/layers.hpp>
#include <rom/model_config.hpp>

#include <span>

namespace rom {

template <class T>
struct EncoderParams {
  Mlp<T> loc;
  Mlp<T> dep;
  Mlp<T> indep;
  Mlp<T> pos;
  Mlp<T> cls;

  template <class Rng>
  static EncoderParams init(const ModelConfig& c, Rng& rng) {
    EncoderParams p;
    p.loc = Mlp<T>::glorot(4, c.loc_widths, rng);
    p.dep = Mlp<T>::glorot(c.d_in(), c.branch_widths, rng);
    p.indep = Mlp<T>::glorot(c.d_in(), c.branch_widths, rng);
    p.pos = Mlp<T>::glorot(c.d_branch(), {c.head_hidden, 3}, rng);
    p.cls = Mlp<T>::glorot(c.d_branch(), {c.head_hidden, static_cast<Eigen::Index>(c.classes)}, rng);
    return p;
  }

  void zero() {
    for (Mlp<T>* m : {&loc, &dep, &indep, &pos, &cls}) m->zero();
  }

  void visit(const TensorVisitor<T>& f) {
    rom::visit("encoder.loc", loc, f);
    rom::visit("encoder.dep", dep, f);
    rom::visit("encoder.indep", indep, f);
    rom::visit("encoder.pos", pos, f);
    rom::visit("encoder.cls", cls, f);
  }
};

/// Graph handles for a batch of objects (one row per object).
struct EncoderNodes {
  NodeId f_loc;
  NodeId f_in;
  NodeId f_dep;
  NodeId f_indep;
  NodeId f;
  NodeId position;  // n x 3: dx, dy, distance
  NodeId logits;    // n x C
};

/// Boxes as an n x 4 tensor of normalized coordinates.
template <class T>
Tensor<T> box_tensor(std::span<const Box> boxes) {
  Tensor<T> t(static_cast<Eigen::Index>(boxes.size()), 4);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    require_normalized(boxes[i]);
    const auto a = boxes[i].as_array();
    for (int k = 0; k < 4; ++k) t(static_cast<Eigen::Index>(i), k) = static_cast<T>(a[k]);
  }
  return t;
}

template <class T>
NodeId encode_location(Graph<T>& g, const EncoderParams<T>& p, NodeId boxes) {
  if (g.value(boxes).cols() != 4) throw Error("encode_location expects n x 4 boxes, got " + shape_of(g.value(boxes)));
  return p.loc.forward(g, boxes);
}

template <class T>
EncoderNodes encode(Graph<T>& g, const EncoderParams<T>& p, NodeId f_viz, NodeId boxes) {
  const auto& viz = g.value(f_viz);
  if (viz.cols() != p.dep.in() - p.loc.out()) {
    throw Error("visual feature width mismatch: " + shape_of(viz) + " vs expected D_viz " +
                std::to_string(p.dep.in() - p.loc.out()));
  }
  if (viz.rows() != g.value(boxes).rows()) {
    throw Error("object count mismatch: " + shape_of(viz) + " vs boxes " + shape_of(g.value(boxes)));
  }
  EncoderNodes n;
  n.f_loc = encode_location(g, p, boxes);
  n.f_in = g.concat_cols(f_viz, n.f_loc);
  n.f_dep = p.dep.forward(g, n.f_in);
  n.f_indep = p.indep.forward(g, n.f_in);
  n.f = g.concat_cols(n.f_dep, n.f_indep);
  n.position = p.pos.forward(g, n.f_dep);
  n.logits = p.cls.forward(g, n.f_indep);
  return n;
}

/// Single-object feature bundle, evaluated outside any training graph.
template <class T>
struct EncodedObject {
  Tensor<T> f_viz;
  Tensor<T> f_loc;
  Tensor<T> f_in;
  Tensor<T> f_dep;
  Tensor<T> f_indep;
  Tensor<T> f;
  Tensor<T> position;
  Tensor<T> logits;
};

struct PositionPrediction {
  double dx = 0.0;
  double dy = 0.0;
  double distance = 0.0;
};

template <class T>
Tensor<T> encode_location(const Box& box, const EncoderParams<T>& p) {
  Graph<T> g;
  NodeId b = g.constant(box_tensor<T>(std::span<const Box>(&box, 1)));
  return g.value(encode_location(g, p, b));
}

template <class T>
EncodedObject<T> encode_object(const Tensor<T>& f_viz, const Box& box, const EncoderParams<T>& p) {
  if (f_viz.rows() != 1) throw Error("encode_object expects a 1 x D_viz feature, got " + shape_of(f_viz));
  Graph<T> g;
  NodeId viz = g.constant(f_viz);
  NodeId b = g.constant(box_tensor<T>(std::span<const Box>(&box, 1)));
  EncoderNodes n = encode(g, p, viz, b);
  return {f_viz,         g.value(n.f_loc), g.value(n.f_in),     g.value(n.f_dep),
          g.value(n.f_indep), g.value(n.f),     g.value(n.position), g.value(n.logits)};
}

template <class T>
PositionPrediction predict_position(const EncodedObject<T>& e) {
  return {double(e.position(0, 0)), double(e.position(0, 1)), double(e.position(0, 2))};
}

template <class T>
const Tensor<T>& predict_class(const EncodedObject<T>& e) {
  return e.logits;
}

/// Index of the largest logit in row `r`; ties go to the lowest index.
template <class T>
int argmax_row(const Tensor<T>& logits, Eigen::Index r = 0) {
  int best = 0;
  for (Eigen::Index c = 1; c < logits.cols(); ++c) {
    if (logits(r, c) > logits(r, best)) best = static_cast<int>(c);
  }
  return best;
}

}  // namespace rom
