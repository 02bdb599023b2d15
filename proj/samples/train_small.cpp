// Trains a narrow model on a few hundred easy pairs and reports held-out
// frame-wise F1 before and after.

#include <rom/report.hpp>
#include <rom/trainer.hpp>

#include <cstdio>

using namespace rom;

namespace {

double frame_f1(const Model<float>& model, const std::vector<ScenePair>& corpus) {
  std::vector<std::vector<Match>> pred, gt;
  for (const ScenePair& p : corpus) {
    pred.push_back(match_pair<float>(&model, p, {}, 0.0, 10).matches);
    gt.push_back(p.gt);
  }
  return match_metrics(pred, gt, MetricMode::frame_wise).f1;
}

}  // namespace

int main() {
  SceneConfig cfg;
  cfg.d_viz = 16;
  cfg.target = Difficulty::easy;
  const auto train = generate_corpus(cfg, 300, 1);
  const auto held = generate_corpus(cfg, 100, 2);

  ModelConfig mc = ModelConfig::tiny(16, cfg.classes);
  mc.agnn_width = mc.agnn_hidden = 32;
  TrainConfig tc;
  tc.epochs = 8;
  tc.learning_rate = 1e-3;

  std::printf("untrained F1 %.3f\n", frame_f1(Model<float>::init(mc, 3), held));
  const auto result = train_model<float>(train, mc, tc, 3, [](const EpochMetrics& m, const Model<float>&) {
    std::printf("epoch %d loss %.4f\n", m.epoch, m.total);
  });
  std::printf("trained F1 %.3f\n", frame_f1(result.model, held));
}
