// Matches one synthetic pair three ways: keypoints only, a random untrained
// model, and the two fused.

#include <rom/report.hpp>

#include <cstdio>

using namespace rom;

namespace {

void show(const char* label, const ScenePair& pair, const PairMatches& m) {
  const long correct = count_correct(m.matches, pair.gt);
  std::printf("%-16s %zu matches, %ld of %zu ground-truth pairs recovered\n", label, m.matches.size(), correct,
              pair.gt.size());
}

}  // namespace

int main() {
  SceneConfig cfg;
  cfg.d_viz = 32;
  cfg.target = Difficulty::easy;
  const ScenePair pair = generate_corpus(cfg, 1, 2024).front();
  std::printf("pair %llu: %zu and %zu detections, %s\n", static_cast<unsigned long long>(pair.id),
              pair.view1.detections.size(), pair.view2.detections.size(), to_string(pair.difficulty));

  ModelConfig mc;
  mc.d_viz = 32;
  const Model<float> model = Model<float>::init(mc, 1);
  show("keypoints", pair, match_pair<float>(nullptr, pair, pair.keypoints, 100.0, 10));
  show("untrained model", pair, match_pair<float>(&model, pair, {}, 0.0, 10));
  show("fused", pair, match_pair<float>(&model, pair, pair.keypoints, 100.0, 10));
}
