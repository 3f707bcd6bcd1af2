// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// atnk: synth | optimize | extract | eval | visualize
//
// Settings are layered: embedded defaults, --config file, ATNK_SEED, then
// --set section.key=value and the shortcut flags. Exit codes: 1 config,
// 2 data, 3 numeric.

#include "atnk/config.hpp"
#include "atnk/image.hpp"
#include "atnk/pipeline.hpp"
#include "atnk/tensor_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<int> augmentations;
  std::optional<int> kappa;
  std::optional<int> keypoints;
  std::optional<int> tokens;
  std::optional<double> learning_rate;
  std::optional<double> lambda_equiv;
  std::optional<std::string> backend;
  bool no_equivariance = false;
  bool no_upsample = false;
  bool no_fps = false;
  bool no_ensemble = false;
  bool print_config = false;
  std::string output = "run";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Config file (INI sections)");
  app->add_option("--set", c.sets, "Override one setting: section.key=value");
  app->add_option("--seed", c.seed, "Run seed (overrides ATNK_SEED)");
  app->add_option("--iterations", c.iterations, "Optimization iterations");
  app->add_option("--augmentations", c.augmentations, "Test-time augmentation count");
  app->add_option("--kappa", c.kappa, "Tokens localized per step");
  app->add_option("-k,--num-keypoints", c.keypoints, "Keypoints to extract");
  app->add_option("--tokens", c.tokens, "Token embeddings to optimize");
  app->add_option("--learning-rate", c.learning_rate, "Adam step size");
  app->add_option("--lambda-equiv", c.lambda_equiv, "Equivariance weight");
  app->add_option("--backend", c.backend, "builtin or sidecar");
  app->add_flag("--no-equivariance", c.no_equivariance, "Drop the equivariance term");
  app->add_flag("--no-upsample", c.no_upsample, "Upsample finished maps, not queries");
  app->add_flag("--no-fps", c.no_fps, "Skip furthest point sampling (kappa = K)");
  app->add_flag("--no-ensemble", c.no_ensemble, "Identity pass only at extraction");
  app->add_flag("--print-config", c.print_config, "Print the resolved config and exit");
  app->add_option("-o,--output", c.output, "Output directory");
}

atnk::RunConfig build_config(const Common& c) {
  atnk::RunConfig cfg = c.config_path.empty() ? atnk::default_config()
                                              : atnk::load_config(c.config_path);
  atnk::apply_environment(cfg);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw atnk::config_error("--set expects section.key=value, got '" + s + "'");
    }
    atnk::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.iterations) cfg.optimizer.iterations = *c.iterations;
  if (c.augmentations) cfg.ensemble.augmentations = *c.augmentations;
  if (c.kappa) cfg.optimizer.kappa = *c.kappa;
  if (c.keypoints) cfg.keypoints = *c.keypoints;
  if (c.tokens) cfg.backend_config.num_tokens = *c.tokens;
  if (c.learning_rate) cfg.optimizer.learning_rate = *c.learning_rate;
  if (c.lambda_equiv) cfg.optimizer.lambda_equiv = *c.lambda_equiv;
  if (c.backend) cfg.backend = *c.backend;
  cfg.ablation.no_equivariance |= c.no_equivariance;
  cfg.ablation.no_upsample |= c.no_upsample;
  cfg.ablation.no_fps |= c.no_fps;
  cfg.ablation.no_ensemble |= c.no_ensemble;
  cfg.output = c.output;
  const atnk::RunConfig r = cfg.resolved();
  r.validate();
  return r;
}

std::vector<int> parse_token_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw atnk::config_error("bad token id '" + item + "'");
    }
  }
  return out;
}

int cmd_synth(const atnk::RunConfig& cfg) {
  const auto ds = atnk::generate_synthetic(cfg.synth, cfg.seed, cfg.output);
  json extra;
  extra["train_images"] = ds.train.size();
  extra["test_images"] = ds.test.size();
  atnk::write_run_record(cfg.output, "synth", cfg, extra.dump());
  std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size()
            << " test images to " << cfg.output << "\n";
  return 0;
}

int cmd_optimize(const atnk::RunConfig& cfg, const std::string& train_path) {
  const auto backend = atnk::make_backend(cfg);
  const auto train = atnk::load_manifest(train_path);
  const fs::path out = cfg.output;
  atnk::TrainingOutputs outputs;
  outputs.log = out / "log.jsonl";
  outputs.checkpoint = out / "checkpoint.atnk";
  outputs.dump_dir = out / "diagnostics";
  outputs.config_hash = cfg.hash();
  const auto result = atnk::run_optimization(*backend, train, cfg.optimizer, cfg.seed, outputs);
  json extra;
  extra["train"] = train_path;
  extra["skipped_images"] = result.skipped_images;
  if (!result.log.empty()) extra["final_total"] = result.log.back().total;
  atnk::write_run_record(out, "optimize", cfg, extra.dump());
  std::cout << "checkpoint " << outputs.checkpoint.string() << " after "
            << result.log.size() << " iterations\n";
  return 0;
}

struct ExtractArgs {
  std::string checkpoint;
  std::string manifest;
  std::string vote_manifest;
  std::string tokens;
  std::string keypoints_out;
  bool heatmaps = false;
  bool overlays = false;
};

int cmd_extract(const atnk::RunConfig& cfg, const ExtractArgs& a) {
  const auto backend = atnk::make_backend(cfg);
  atnk::CheckpointRecord record;
  const auto e = atnk::load_checkpoint(a.checkpoint, &record);
  const auto manifest = atnk::load_manifest(a.manifest);
  const fs::path out = cfg.output;

  std::vector<int> tokens;
  json extra;
  if (!a.tokens.empty()) {
    tokens = parse_token_list(a.tokens);
  } else {
    const auto vote_on = atnk::load_manifest(a.vote_manifest.empty() ? a.manifest
                                                                     : a.vote_manifest);
    tokens = atnk::choose_tokens(*backend, vote_on, e, cfg).chosen;
    extra["vote_manifest"] = a.vote_manifest.empty() ? a.manifest : a.vote_manifest;
  }
  atnk::ExtractOptions opts;
  if (a.heatmaps) opts.heatmap_dir = out / "heatmaps";
  if (a.overlays) opts.overlay_dir = out / "overlays";
  const auto sets = atnk::extract_all(*backend, manifest, e, tokens, cfg, opts);
  const fs::path kp = a.keypoints_out.empty()
                          ? out / ((manifest.split.empty() ? std::string("keypoints")
                                                           : manifest.split + "_keypoints") +
                                   ".jsonl")
                          : fs::path(a.keypoints_out);
  atnk::write_keypoints(kp, sets);
  std::ofstream(out / "tokens.json") << json(tokens).dump() << "\n";
  extra["checkpoint"] = a.checkpoint;
  extra["checkpoint_config_hash"] = record.config_hash;
  extra["manifest"] = a.manifest;
  extra["tokens"] = tokens;
  extra["keypoints"] = kp.string();
  atnk::write_run_record(out, "extract", cfg, extra.dump());
  std::cout << "keypoints for " << sets.size() << " images in " << kp.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string train_keypoints;
  std::string test_keypoints;
  std::string train_landmarks;
  std::string test_landmarks;
  std::vector<std::string> metrics;
};

int cmd_eval(atnk::RunConfig cfg, const EvalArgs& a) {
  if (!a.metrics.empty()) cfg.eval.metrics = a.metrics;
  cfg.validate();
  const auto report = atnk::evaluate(
      atnk::read_keypoints(a.train_keypoints), atnk::read_keypoints(a.test_keypoints),
      atnk::load_annotations(a.train_landmarks), atnk::load_annotations(a.test_landmarks),
      cfg.eval, cfg.hash());
  const fs::path out = cfg.output;
  atnk::write_report(out / "metrics.json", report);
  json extra;
  extra["train_keypoints"] = a.train_keypoints;
  extra["test_keypoints"] = a.test_keypoints;
  extra["train_landmarks"] = a.train_landmarks;
  extra["test_landmarks"] = a.test_landmarks;
  atnk::write_run_record(out, "eval", cfg, extra.dump());
  for (const auto& m : report.metrics) {
    std::cout << m.name << " (" << m.normalization << "): " << m.value << "\n";
  }
  return 0;
}

struct VisualizeArgs {
  std::string keypoints;
  std::string manifest;
  std::string heatmap;
  int radius = 2;
};

int cmd_visualize(const atnk::RunConfig& cfg, const VisualizeArgs& a) {
  const fs::path out = cfg.output;
  fs::create_directories(out);
  int written = 0;
  if (!a.keypoints.empty()) {
    if (a.manifest.empty()) throw atnk::config_error("--keypoints needs --manifest");
    const auto manifest = atnk::load_manifest(a.manifest);
    for (const auto& set : atnk::read_keypoints(a.keypoints)) {
      const auto it = std::find_if(manifest.records.begin(), manifest.records.end(),
                                   [&](const auto& r) { return r.id == set.id; });
      if (it == manifest.records.end()) {
        throw atnk::data_error("image " + set.id + " is not in " + a.manifest);
      }
      const auto img = atnk::read_png(manifest.image_path(*it));
      atnk::write_png(out / (set.id + "_overlay.png"),
                      atnk::render_overlay(img, set, a.radius));
      ++written;
    }
  }
  if (!a.heatmap.empty()) {
    const auto maps = atnk::to_matrix<float>(atnk::load_tensor(a.heatmap));
    const int h = cfg.backend_config.fused_height;
    const int w = cfg.backend_config.fused_width;
    if (maps.rows() != static_cast<Eigen::Index>(h) * w) {
      throw atnk::data_error("heatmap rows do not match the fused resolution");
    }
    const std::string stem = fs::path(a.heatmap).stem().string();
    for (Eigen::Index c = 0; c < maps.cols(); ++c) {
      const atnk::Plane plane = Eigen::Map<const atnk::Plane>(maps.col(c).data(), h, w);
      atnk::write_gray_png(out / (stem + "_" + std::to_string(c) + ".png"), plane, 0.0f,
                           std::max(plane.maxCoeff(), 1e-12f));
      ++written;
    }
  }
  if (written == 0) throw atnk::config_error("nothing to draw: pass --keypoints or --heatmap");
  atnk::write_run_record(out, "visualize", cfg);
  std::cout << "wrote " << written << " images to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised keypoints from attention maps"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, common);

  std::string train_path;
  auto* optimize = app.add_subcommand("optimize", "Optimize token embeddings");
  add_common(optimize, common);
  optimize->add_option("--train", train_path, "Training manifest")->required();

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Extract keypoints with a checkpoint");
  add_common(extract, common);
  extract->add_option("--checkpoint", ex.checkpoint, "Embeddings checkpoint")->required();
  extract->add_option("--manifest", ex.manifest, "Images to extract from")->required();
  extract->add_option("--vote-manifest", ex.vote_manifest,
                      "Images used to choose tokens (default: --manifest)");
  extract->add_option("--token-ids", ex.tokens, "Comma-separated tokens; skips the vote");
  extract->add_option("--keypoints-out", ex.keypoints_out, "Keypoint file path");
  extract->add_flag("--heatmaps", ex.heatmaps, "Write heatmap PNGs and tensors");
  extract->add_flag("--overlays", ex.overlays, "Write marker overlays");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Regress landmarks and report metrics");
  add_common(eval, common);
  eval->add_option("--train-keypoints", ev.train_keypoints)->required();
  eval->add_option("--test-keypoints", ev.test_keypoints)->required();
  eval->add_option("--train-landmarks", ev.train_landmarks)->required();
  eval->add_option("--test-landmarks", ev.test_landmarks)->required();
  eval->add_option("--metrics", ev.metrics, "Metric subset")->delimiter(',');

  VisualizeArgs vis;
  auto* visualize = app.add_subcommand("visualize", "Draw overlays and heatmaps");
  add_common(visualize, common);
  visualize->add_option("--keypoints", vis.keypoints, "Keypoint file");
  visualize->add_option("--manifest", vis.manifest, "Manifest holding the images");
  visualize->add_option("--heatmap", vis.heatmap, "ATNK heatmap tensor");
  visualize->add_option("--radius", vis.radius, "Marker radius in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const atnk::RunConfig cfg = build_config(common);
    if (common.print_config) {
      std::cout << cfg.dump();
      return 0;
    }
    if (*synth) return cmd_synth(cfg);
    if (*optimize) return cmd_optimize(cfg, train_path);
    if (*extract) return cmd_extract(cfg, ex);
    if (*eval) return cmd_eval(cfg, ev);
    if (*visualize) return cmd_visualize(cfg, vis);
  } catch (const atnk::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
