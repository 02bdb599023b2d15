#include <rom/model.hpp>
#include <rom/trainer.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

namespace rom {
namespace {

using M = Tensor<double>;

EncoderParams<double> encoder_params(const ModelConfig& c, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return EncoderParams<double>::init(c, rng);
}

AgnnParams<double> agnn_params(const ModelConfig& c, std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  return AgnnParams<double>::init(c, rng);
}

// Encoder -----------------------------------------------------------------

TEST(Encoder, LocationWidthFollowsLayerTable) {
  const auto p = encoder_params(ModelConfig{});
  EXPECT_EQ(encode_location(Box{0.1, 0.2, 0.4, 0.9}, p).cols(), 128);
}

TEST(Encoder, IdenticalBoxesGiveIdenticalOutputs) {
  const auto p = encoder_params(ModelConfig::tiny());
  const Box b{0.3, 0.3, 0.5, 0.6};
  EXPECT_EQ(encode_location(b, p), encode_location(b, p));
}

TEST(Encoder, FullWidthShapes) {
  ModelConfig c;
  c.classes = 40;
  const auto p = encoder_params(c);
  std::mt19937_64 rng(4);
  const M viz = oracle::random_matrix(1, 512, rng);
  const auto e = encode_object(viz, Box{0.1, 0.1, 0.3, 0.3}, p);
  EXPECT_EQ(e.f_in.cols(), 640);
  EXPECT_EQ(e.f_dep.cols(), 128);
  EXPECT_EQ(e.f_indep.cols(), 128);
  EXPECT_EQ(e.f.cols(), 256);
  EXPECT_EQ(e.position.cols(), 3);
  EXPECT_EQ(e.logits.cols(), 40);
  EXPECT_EQ(predict_class(e).cols(), 40);
}

TEST(Encoder, ConcatenationOrder) {
  const ModelConfig c = ModelConfig::tiny();
  const auto p = encoder_params(c);
  std::mt19937_64 rng(5);
  const M viz = oracle::random_matrix(1, c.d_viz, rng);
  const auto e = encode_object(viz, Box{0.2, 0.1, 0.6, 0.5}, p);
  EXPECT_EQ(e.f_in.leftCols(c.d_viz), viz);
  EXPECT_EQ(e.f_in.rightCols(c.d_loc()), e.f_loc);
  EXPECT_EQ(e.f.leftCols(c.d_branch()), e.f_dep);
  EXPECT_EQ(e.f.rightCols(c.d_branch()), e.f_indep);
}

TEST(Encoder, ZeroWeightsGiveZeroOutputs) {
  auto p = encoder_params(ModelConfig::tiny());
  p.zero();
  std::mt19937_64 rng(6);
  const M viz = oracle::random_matrix(1, 8, rng);
  const Box b{0.1, 0.1, 0.9, 0.9};
  EXPECT_TRUE(encode_location(b, p).isZero(0.0));
  const auto e = encode_object(viz, b, p);
  EXPECT_TRUE(e.f.isZero(0.0));
  EXPECT_TRUE(e.logits.isZero(0.0));
  EXPECT_EQ(argmax_row(e.logits), 0);
  const PositionPrediction pos = predict_position(e);
  EXPECT_EQ(pos.dx, 0.0);
  EXPECT_EQ(pos.dy, 0.0);
  EXPECT_EQ(pos.distance, 0.0);
}

TEST(Encoder, PositionHeadSplit) {
  auto p = encoder_params(ModelConfig::tiny());
  auto& last = p.pos.layers.back();
  last.weight.setZero();
  last.bias << 0.1, -0.05, 3.2;
  const auto e = encode_object(M(M::Constant(1, 8, 0.3)), Box{0.1, 0.1, 0.2, 0.2}, p);
  const PositionPrediction pos = predict_position(e);
  EXPECT_EQ(pos.dx, 0.1);
  EXPECT_EQ(pos.dy, -0.05);
  EXPECT_EQ(pos.distance, 3.2);
}

TEST(Encoder, RejectsInvalidInputs) {
  const auto p = encoder_params(ModelConfig::tiny());
  EXPECT_THROW(encode_location(Box{0.5, 0.1, 0.4, 0.2}, p), Error);
  EXPECT_THROW(encode_location(Box{0.1, 0.1, 1.2, 0.2}, p), Error);
  EXPECT_THROW(encode_object(M(M::Zero(1, 7)), Box{0.1, 0.1, 0.2, 0.2}, p), Error);
  EXPECT_THROW(encode_object(M(M::Zero(2, 8)), Box{0.1, 0.1, 0.2, 0.2}, p), Error);
}

TEST(Encoder, BatchRowsMatchSingleObjects) {
  const ModelConfig c = ModelConfig::tiny();
  const auto p = encoder_params(c);
  std::mt19937_64 rng(7);
  const M viz = oracle::random_matrix(4, c.d_viz, rng);
  const auto boxes = fixture::random_boxes(4, rng);
  Graph<double> g;
  const EncoderNodes n = encode(g, p, g.constant(viz), g.constant(box_tensor<double>(boxes)));
  for (int i = 0; i < 4; ++i) {
    const auto e = encode_object(M(viz.row(i)), boxes[static_cast<std::size_t>(i)], p);
    EXPECT_TRUE(g.value(n.f).row(i).isApprox(e.f, 1e-14));
    EXPECT_TRUE(g.value(n.logits).row(i).isApprox(e.logits, 1e-14));
  }
}

TEST(Encoder, AffinityGradientWrtLocationWeights) {
  const ModelConfig c = ModelConfig::tiny();
  Model<double> model = Model<double>::init(c, 3);
  const auto s = fixture::tiny_sample(21);
  for (std::size_t l = 0; l < model.encoder.loc.layers.size(); ++l) {
    const double err = fixture::parameter_gradient_error(model.encoder.loc.layers[l].weight, [&](Graph<double>& g) {
      return affinity_loss(g, forward(g, model, s.input, 10).log_assignment, s.supervision);
    });
    EXPECT_LT(err, 1e-4) << "layer " << l;
  }
}

// Attention ---------------------------------------------------------------

AttentionStageParams<double> stage_params(const ModelConfig& c, std::uint64_t seed = 8) {
  std::mt19937_64 rng(seed);
  return AttentionStageParams<double>::init(c, rng);
}

TEST(Attention, EqualKeysGiveUniformWeights) {
  const ModelConfig c = ModelConfig::tiny();
  auto p = stage_params(c);
  p.key.weight.setZero();
  p.key.bias.setConstant(0.7);
  std::mt19937_64 rng(9);
  for (AttentionMode mode : {AttentionMode::self, AttentionMode::cross}) {
    Graph<double> g;
    const auto s = attention_stage(g, p, g.constant(oracle::random_matrix(3, 8, rng)),
                                   g.constant(oracle::random_matrix(5, 8, rng)), mode);
    const M& a1 = g.value(s.attention1);
    const M& a2 = g.value(s.attention2);
    EXPECT_TRUE(a1.isApproxToConstant(1.0 / double(a1.cols()), 1e-15));
    EXPECT_TRUE(a2.isApproxToConstant(1.0 / double(a2.cols()), 1e-15));
  }
}

TEST(Attention, ModesChooseKeySets) {
  const auto p = stage_params(ModelConfig::tiny());
  std::mt19937_64 rng(10);
  Graph<double> g;
  NodeId x1 = g.constant(oracle::random_matrix(3, 8, rng));
  NodeId x2 = g.constant(oracle::random_matrix(5, 8, rng));
  const auto self = attention_stage(g, p, x1, x2, AttentionMode::self);
  const auto cross = attention_stage(g, p, x1, x2, AttentionMode::cross);
  EXPECT_EQ(g.value(self.attention1).cols(), 3);
  EXPECT_EQ(g.value(self.attention2).cols(), 5);
  EXPECT_EQ(g.value(cross.attention1).cols(), 5);
  EXPECT_EQ(g.value(cross.attention2).cols(), 3);
}

TEST(Attention, MatchesNaiveStage) {
  const ModelConfig c = ModelConfig::tiny();
  const auto p = stage_params(c);
  std::mt19937_64 rng(11);
  const M a = oracle::random_matrix(3, 8, rng);
  const M b = oracle::random_matrix(4, 8, rng);
  auto affine = [](const Linear<double>& l, const M& x) {
    M y(x.rows(), l.out());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index o = 0; o < l.out(); ++o) {
        double acc = l.bias(0, o);
        for (Eigen::Index k = 0; k < l.in(); ++k) acc += x(i, k) * l.weight(k, o);
        y(i, o) = acc;
      }
    }
    return y;
  };
  auto relu = [](M x) { return M(x.cwiseMax(0.0)); };
  auto naive = [&](const M& x, const M& other) {
    const M q = affine(p.query, x), k = affine(p.key, other), v = affine(p.value, other);
    M out = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<double> logit(static_cast<std::size_t>(k.rows()));
      for (Eigen::Index j = 0; j < k.rows(); ++j) logit[static_cast<std::size_t>(j)] = q.row(i).dot(k.row(j));
      const double mx = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double& l : logit) z += (l = std::exp(l - mx));
      M msg = M::Zero(1, v.cols());
      for (Eigen::Index j = 0; j < k.rows(); ++j) msg += logit[static_cast<std::size_t>(j)] / z * v.row(j);
      M in(1, 16);
      in << x.row(i), msg;
      out.row(i) += affine(p.update.layers[1], relu(affine(p.update.layers[0], in)));
    }
    return out;
  };
  Graph<double> g;
  const auto s = attention_stage(g, p, g.constant(a), g.constant(b), AttentionMode::cross);
  EXPECT_TRUE(g.value(s.x1).isApprox(naive(a, b), 1e-12));
  EXPECT_TRUE(g.value(s.x2).isApprox(naive(b, a), 1e-12));
  Graph<double> h;
  const auto t = attention_stage(h, p, h.constant(a), h.constant(b), AttentionMode::self);
  EXPECT_TRUE(h.value(t.x1).isApprox(naive(a, a), 1e-12));
  EXPECT_TRUE(h.value(t.x2).isApprox(naive(b, b), 1e-12));
}

TEST(Attention, ZeroUpdateIsResidualIdentity) {
  auto p = stage_params(ModelConfig::tiny());
  p.update.zero();
  std::mt19937_64 rng(12);
  const M a = oracle::random_matrix(3, 8, rng);
  const M b = oracle::random_matrix(2, 8, rng);
  for (AttentionMode mode : {AttentionMode::self, AttentionMode::cross}) {
    Graph<double> g;
    const auto s = attention_stage(g, p, g.constant(a), g.constant(b), mode);
    EXPECT_EQ(g.value(s.x1), a);
    EXPECT_EQ(g.value(s.x2), b);
  }
}

TEST(Attention, SingletonCrossAttendsToPartner) {
  const auto p = stage_params(ModelConfig::tiny());
  std::mt19937_64 rng(13);
  Graph<double> g;
  const auto s = attention_stage(g, p, g.constant(oracle::random_matrix(1, 8, rng)),
                                 g.constant(oracle::random_matrix(1, 8, rng)), AttentionMode::cross);
  EXPECT_EQ(g.value(s.attention1)(0, 0), 1.0);
  EXPECT_EQ(g.value(s.attention2)(0, 0), 1.0);
}

TEST(Attention, RejectsEmptyCrossAndWidthMismatch) {
  const auto p = stage_params(ModelConfig::tiny());
  Graph<double> g;
  EXPECT_THROW(attention_stage(g, p, g.constant(M::Zero(0, 8)), g.constant(M::Ones(2, 8)), AttentionMode::cross), Error);
  EXPECT_THROW(attention_stage(g, p, g.constant(M::Ones(2, 7)), g.constant(M::Ones(2, 7)), AttentionMode::self), Error);
}

// Refinement --------------------------------------------------------------

TEST(Refine, FullWidthShapesAndStochasticAttention) {
  const ModelConfig c;
  const auto p = agnn_params(c);
  std::mt19937_64 rng(14);
  Graph<double> g;
  const auto r = refine(g, p, g.constant(oracle::random_matrix(3, 256, rng)), g.constant(oracle::random_matrix(5, 256, rng)));
  EXPECT_EQ(g.value(r.x1).rows(), 3);
  EXPECT_EQ(g.value(r.x1).cols(), 256);
  EXPECT_EQ(g.value(r.x2).rows(), 5);
  EXPECT_EQ(g.value(r.x2).cols(), 256);
  for (std::size_t l = 0; l < r.stages.size(); ++l) {
    for (NodeId a : {r.stages[l].attention1, r.stages[l].attention2}) {
      const M& att = g.value(a);
      EXPECT_GE(att.minCoeff(), 0.0);
      EXPECT_LT((att.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9) << "stage " << l;
    }
  }
}

TEST(Refine, StageModesAlternate) {
  EXPECT_EQ(kStageModes[0], AttentionMode::self);
  EXPECT_EQ(kStageModes[1], AttentionMode::cross);
  EXPECT_EQ(kStageModes[2], AttentionMode::self);
  EXPECT_EQ(kStageModes[3], AttentionMode::cross);
}

TEST(Refine, InputProjectionStartsNearIdentity) {
  const auto p = agnn_params(ModelConfig{});
  EXPECT_LT((p.input.weight - M::Identity(256, 256)).cwiseAbs().maxCoeff(), 0.01 + 1e-12);
}

TEST(Refine, ZeroUpdatesLeaveInputProjection) {
  auto p = agnn_params(ModelConfig::tiny());
  for (auto& s : p.stages) {
    s.update.layers.back().weight.setZero();
    s.update.layers.back().bias.setZero();
  }
  std::mt19937_64 rng(15);
  const M f1 = oracle::random_matrix(3, 8, rng);
  const M f2 = oracle::random_matrix(4, 8, rng);
  Graph<double> g;
  const auto r = refine(g, p, g.constant(f1), g.constant(f2));
  Graph<double> h;
  EXPECT_EQ(g.value(r.x1), h.value(p.input.forward(h, h.constant(f1))));
  EXPECT_EQ(g.value(r.x2), h.value(p.input.forward(h, h.constant(f2))));
}

TEST(Refine, PermutationEquivariant) {
  const auto p = agnn_params(ModelConfig::tiny());
  std::mt19937_64 rng(16);
  const M f1 = oracle::random_matrix(4, 8, rng);
  const M f2 = oracle::random_matrix(5, 8, rng);
  std::vector<int> p1(4), p2(5);
  std::iota(p1.begin(), p1.end(), 0);
  std::iota(p2.begin(), p2.end(), 0);
  std::shuffle(p1.begin(), p1.end(), rng);
  std::shuffle(p2.begin(), p2.end(), rng);
  auto permute = [](const M& x, const std::vector<int>& perm) {
    M y(x.rows(), x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = x.row(perm[i]);
    return y;
  };
  Graph<double> g;
  const auto r = refine(g, p, g.constant(f1), g.constant(f2));
  Graph<double> h;
  const auto q = refine(h, p, h.constant(permute(f1, p1)), h.constant(permute(f2, p2)));
  EXPECT_TRUE(h.value(q.x1).isApprox(permute(g.value(r.x1), p1), 1e-12));
  EXPECT_TRUE(h.value(q.x2).isApprox(permute(g.value(r.x2), p2), 1e-12));
  const M s = score_matrix(g.value(r.x1), g.value(r.x2));
  const M t = score_matrix(h.value(q.x1), h.value(q.x2));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(t(i, j), s(p1[static_cast<std::size_t>(i)], p2[static_cast<std::size_t>(j)]), 1e-12);
  }
}

TEST(Refine, GradientThroughAllStages) {
  const auto p = agnn_params(ModelConfig::tiny());
  std::mt19937_64 rng(17);
  const M f2 = oracle::random_matrix(3, 8, rng);
  const M target = oracle::random_matrix(3, 8, rng);
  auto loss = [&](Graph<double>& g, NodeId f1) {
    const auto r = refine(g, p, f1, g.constant(f2));
    NodeId d = g.sub(r.x1, g.constant(target));
    return g.add(g.sum_all(g.mul(d, d)), g.sum_all(g.mul(r.x2, r.x2)));
  };
  EXPECT_LT(gradient_check(loss, oracle::random_matrix(3, 8, rng), 1e-6), 1e-4);
}

TEST(Refine, GradientWrtStageParameters) {
  auto p = agnn_params(ModelConfig::tiny());
  std::mt19937_64 rng(18);
  const M f1 = oracle::random_matrix(3, 8, rng);
  const M f2 = oracle::random_matrix(3, 8, rng);
  const M weights = oracle::random_matrix(3, 3, rng);
  auto loss = [&](Graph<double>& g) {
    const auto r = refine(g, p, g.constant(f1), g.constant(f2));
    return g.sum_all(g.mul(score_matrix(g, r.x1, r.x2), g.constant(weights)));
  };
  for (auto& s : p.stages) {
    for (M* t : {&s.query.weight, &s.key.weight, &s.value.weight, &s.update.layers[0].weight}) {
      EXPECT_LT(fixture::parameter_gradient_error(*t, loss), 1e-4);
    }
  }
}

// Relative distance head --------------------------------------------------

TEST(RelDistance, ZeroWeightsGiveZero) {
  auto p = agnn_params(ModelConfig::tiny());
  p.dist.zero();
  std::mt19937_64 rng(19);
  EXPECT_EQ(predict_rel_distance(oracle::random_matrix(1, 8, rng), oracle::random_matrix(1, 8, rng), p), 0.0);
}

TEST(RelDistance, NotSymmetrizedForRandomWeights) {
  const auto p = agnn_params(ModelConfig::tiny());
  std::mt19937_64 rng(20);
  const M a = oracle::random_matrix(1, 8, rng);
  const M b = oracle::random_matrix(1, 8, rng);
  EXPECT_NE(predict_rel_distance(a, b, p), predict_rel_distance(b, a, p));
}

TEST(RelDistance, BatchedPairsMatchConcatenatedInput) {
  const auto p = agnn_params(ModelConfig::tiny());
  std::mt19937_64 rng(21);
  const M x = oracle::random_matrix(4, 8, rng);
  const auto pairs = ordered_pairs(4);
  ASSERT_EQ(pairs.size(), 12u);
  Graph<double> g;
  const M& d = g.value(predict_rel_distance(g, p, g.constant(x), pairs));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double single = predict_rel_distance(M(x.row(pairs[k].first)), M(x.row(pairs[k].second)), p);
    EXPECT_NEAR(d(static_cast<Eigen::Index>(k), 0), single, 1e-12);
  }
}

TEST(RelDistance, GradientWrtFeatures) {
  const auto p = agnn_params(ModelConfig::tiny());
  std::mt19937_64 rng(22);
  const auto pairs = ordered_pairs(3);
  auto loss = [&](Graph<double>& g, NodeId x) {
    NodeId d = predict_rel_distance(g, p, x, pairs);
    return g.sum_all(g.mul(d, d));
  };
  EXPECT_LT(gradient_check(loss, oracle::random_matrix(3, 8, rng), 1e-6), 1e-4);
}

}  // namespace
}  // namespace rom
