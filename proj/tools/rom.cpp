// rom: generate synthetic corpora, train, match, fuse and evaluate.

#include <rom/checkpoint.hpp>
#include <rom/corpus_io.hpp>
#include <rom/report.hpp>
#include <rom/trainer.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

using namespace rom;
using nlohmann::json;

namespace {

/// Training file layout: {"model": {...}, "train": {...}}; both optional.
struct TrainFile {
  ModelConfig model;
  TrainConfig train;
};

TrainFile read_train_file(const std::optional<std::string>& path) {
  TrainFile f;
  if (!path) return f;
  const json j = read_json_file(*path);
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "train") throw Error(*path + ": unknown key '" + key + "'");
  }
  if (j.contains("model")) f.model = j.at("model").get<ModelConfig>();
  if (j.contains("train")) {
    const json& t = j.at("train");
    TrainConfig& c = f.train;
    c.epochs = t.value("epochs", c.epochs);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.learning_rate = t.value("learning_rate", c.learning_rate);
    c.sinkhorn_iterations = t.value("sinkhorn_iterations", c.sinkhorn_iterations);
    c.max_objects = t.value("max_objects", c.max_objects);
    c.feature_noise_variance = t.value("feature_noise_variance", c.feature_noise_variance);
    c.weights.affinity = t.value("lambda_aff", c.weights.affinity);
    c.weights.classification = t.value("lambda_cls", c.weights.classification);
    c.weights.position = t.value("lambda_pos", c.weights.position);
    c.weights.relative = t.value("lambda_rel", c.weights.relative);
  }
  return f;
}

json train_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"sinkhorn_iterations", c.sinkhorn_iterations},
          {"max_objects", c.max_objects},
          {"feature_noise_variance", c.feature_noise_variance},
          {"lambda_aff", c.weights.affinity},
          {"lambda_cls", c.weights.classification},
          {"lambda_pos", c.weights.position},
          {"lambda_rel", c.weights.relative}};
}

struct MatchArgs {
  std::string corpus;
  std::optional<std::string> checkpoint;
  std::optional<std::string> keypoints;
  std::optional<std::string> svg_dir;
  std::string out;
  double alpha = 0.0;
  int iterations = 10;
};

void run_match(const MatchArgs& a) {
  const std::vector<ScenePair> corpus = read_corpus(a.corpus);
  std::optional<Model<float>> model;
  if (a.checkpoint) model = load_checkpoint<float>(*a.checkpoint).model;
  std::map<std::uint64_t, std::vector<KeypointMatch>> external;
  if (a.keypoints) external = read_keypoints(*a.keypoints);
  if (a.svg_dir) std::filesystem::create_directories(*a.svg_dir);

  std::vector<PairMatches> all;
  for (const ScenePair& p : corpus) {
    std::span<const KeypointMatch> kps = p.keypoints;
    if (a.keypoints) {
      auto it = external.find(p.id);
      kps = it == external.end() ? std::span<const KeypointMatch>{} : std::span<const KeypointMatch>(it->second);
    }
    all.push_back(match_pair<float>(model ? &*model : nullptr, p, kps, a.alpha, a.iterations));
    if (a.svg_dir) {
      const std::string path = *a.svg_dir + "/pair_" + std::to_string(p.id) + ".svg";
      std::ofstream svg(path);
      if (!svg) throw Error("cannot open '" + path + "' for writing");
      svg << overlay_svg(p, all.back().matches);
    }
  }
  write_matches(a.out, all);
  std::cerr << "matched " << all.size() << " pairs -> " << a.out << '\n';
}

void add_match_options(CLI::App* cmd, MatchArgs& a, bool checkpoint_required) {
  cmd->add_option("--corpus", a.corpus, "Scene-pair corpus (JSON Lines)")->required()->check(CLI::ExistingFile);
  auto* ck = cmd->add_option("--checkpoint", a.checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  if (checkpoint_required) ck->required();
  cmd->add_option("--keypoints", a.keypoints, "Keypoint matches (JSON Lines); default: corpus keypoints")
      ->check(CLI::ExistingFile);
  cmd->add_option("--alpha", a.alpha, "Keypoint score weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--sinkhorn-iterations", a.iterations, "Sinkhorn iterations")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--svg", a.svg_dir, "Directory for per-pair SVG overlays");
  cmd->add_option("--out", a.out, "Output match file (JSON Lines)")->required();
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Graph tensors are short-lived; keep freed memory in the heap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Object matching across views: synthetic data, training and evaluation"};
  app.require_subcommand(1);

  // generate
  std::optional<std::string> gen_config;
  int gen_count = 100;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic scene-pair corpus");
  gen->add_option("--config", gen_config, "Scene config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--count", gen_count, "Number of pairs")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output corpus (JSON Lines)")->required();

  // train
  std::string tr_corpus, tr_out;
  std::optional<std::string> tr_config, tr_log;
  std::uint64_t tr_seed = 0;
  std::optional<double> lam_aff, lam_cls, lam_pos, lam_rel, tr_lr;
  std::optional<int> tr_epochs;
  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--corpus", tr_corpus, "Training corpus (JSON Lines)")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", tr_config, "Model and training config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--seed", tr_seed, "Random seed")->capture_default_str();
  tr->add_option("--out", tr_out, "Output checkpoint")->required();
  tr->add_option("--lambda-aff", lam_aff, "Affinity loss weight")->check(CLI::NonNegativeNumber);
  tr->add_option("--lambda-cls", lam_cls, "Classification loss weight")->check(CLI::NonNegativeNumber);
  tr->add_option("--lambda-pos", lam_pos, "Position loss weight")->check(CLI::NonNegativeNumber);
  tr->add_option("--lambda-rel", lam_rel, "Relative distance loss weight")->check(CLI::NonNegativeNumber);
  tr->add_option("--epochs", tr_epochs, "Epochs")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_lr, "Learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--log", tr_log, "Per-epoch metrics (JSON Lines)");

  // match / fuse
  MatchArgs match_args, fuse_args;
  fuse_args.alpha = 100.0;
  auto* match = app.add_subcommand("match", "Match objects with a trained model, optionally fused with keypoints");
  add_match_options(match, match_args, true);
  auto* fuse = app.add_subcommand("fuse", "Fused matching; keypoint-only without --checkpoint");
  add_match_options(fuse, fuse_args, false);

  // eval
  std::string ev_corpus, ev_matches;
  std::optional<std::string> ev_out;
  bool ev_by_difficulty = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a match file against corpus ground truth");
  ev->add_option("--corpus", ev_corpus, "Scene-pair corpus (JSON Lines)")->required()->check(CLI::ExistingFile);
  ev->add_option("--matches", ev_matches, "Match file from match or fuse")->required()->check(CLI::ExistingFile);
  ev->add_flag("--by-difficulty", ev_by_difficulty, "Add easy / hard / very_hard sections");
  ev->add_option("--out", ev_out, "Write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << app.help();
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) {
      SceneConfig cfg;
      if (gen_config) cfg = read_json_file(*gen_config).get<SceneConfig>();
      const std::vector<ScenePair> corpus = generate_corpus(cfg, gen_count, gen_seed);
      write_corpus(gen_out, corpus);
      std::cerr << "wrote " << corpus.size() << " pairs -> " << gen_out << '\n';
    } else if (*tr) {
      TrainFile f = read_train_file(tr_config);
      if (lam_aff) f.train.weights.affinity = *lam_aff;
      if (lam_cls) f.train.weights.classification = *lam_cls;
      if (lam_pos) f.train.weights.position = *lam_pos;
      if (lam_rel) f.train.weights.relative = *lam_rel;
      if (tr_epochs) f.train.epochs = *tr_epochs;
      if (tr_lr) f.train.learning_rate = *tr_lr;
      const std::vector<ScenePair> corpus = read_corpus(tr_corpus);
      if (corpus.empty()) throw Error("training corpus '" + tr_corpus + "' is empty");
      const Eigen::Index d_viz = corpus.front().view1.features.cols();
      if (d_viz != f.model.d_viz) {
        throw Error("corpus features have width " + std::to_string(d_viz) + " but the model expects d_viz " +
                    std::to_string(f.model.d_viz));
      }
      std::optional<std::ofstream> log;
      if (tr_log) {
        log.emplace(*tr_log);
        if (!*log) throw Error("cannot open '" + *tr_log + "' for writing");
      }
      const auto start = std::chrono::steady_clock::now();
      auto on_epoch = [&](const EpochMetrics& m, const Model<float>&) {
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::fprintf(stderr, "epoch %3d  loss %9.4f  aff %7.4f  cls %7.4f  pos %8.4f  rel %9.4f  %7.1fs\n", m.epoch,
                     m.total, m.affinity, m.classification, m.position, m.relative, sec);
        if (log) {
          *log << json{{"epoch", m.epoch},     {"loss", m.total},         {"affinity", m.affinity},
                       {"classification", m.classification}, {"position", m.position}, {"relative", m.relative}}
                      .dump()
               << '\n';
        }
      };
      TrainResult<float> r = train_model<float>(corpus, f.model, f.train, tr_seed, on_epoch);
      Checkpoint<float> ck{std::move(r.model), std::move(r.optimizer), f.train.epochs,
                           json{{"seed", tr_seed}, {"train", train_json(f.train)}}};
      save_checkpoint(tr_out, ck);
      std::cerr << "checkpoint -> " << tr_out << '\n';
    } else if (*match) {
      run_match(match_args);
    } else if (*fuse) {
      run_match(fuse_args);
    } else if (*ev) {
      const std::vector<ScenePair> corpus = read_corpus(ev_corpus);
      const std::vector<PairMatches> matches = read_matches(ev_matches);
      const EvalReport report = evaluate(corpus, matches, ev_by_difficulty);
      std::cout << report_text(report);
      if (ev_out) {
        std::ofstream out(*ev_out);
        if (!out) throw Error("cannot open '" + *ev_out + "' for writing");
        out << report_json(report).dump(2) << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 0;
}
