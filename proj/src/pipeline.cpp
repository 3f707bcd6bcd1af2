// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/pipeline.hpp"

#include "atnk/image.hpp"
#include "atnk/sidecar.hpp"
#include "atnk/tensor_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace atnk {

using nlohmann::json;
namespace fs = std::filesystem;

std::unique_ptr<AttentionBackend<Real>> make_backend(const RunConfig& cfg) {
  if (cfg.backend == "builtin") {
    return std::make_unique<BuiltinBackend<Real>>(cfg.backend_config);
  }
  if (cfg.backend == "sidecar") {
    auto channel = cfg.sidecar.socket.empty() ? Channel::spawn(cfg.sidecar.command)
                                              : Channel::connect_unix(cfg.sidecar.socket);
    return std::make_unique<SidecarBackend<Real>>(
        cfg.backend_config, std::move(channel),
        SidecarOptions{cfg.sidecar.model, cfg.sidecar.device});
  }
  throw config_error("unknown backend '" + cfg.backend + "'");
}

fs::path write_run_record(const fs::path& dir, const std::string& command,
                          const RunConfig& cfg, const std::string& extra_json) {
  fs::create_directories(dir);
  json j = json::parse(extra_json);
  j["command"] = command;
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.seed;
  j["config"] = cfg.dump();
  const fs::path path = dir / (command + ".run.json");
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw data_error("cannot write " + path.string());
  return path;
}

TokenVote choose_tokens(const AttentionBackend<Real>& backend,
                        const DatasetManifest& manifest, const EmbeddingSet<Real>& e,
                        const RunConfig& cfg) {
  const auto& bc = backend.config();
  TokenVote vote;
  for (const auto& rec : manifest.records) {
    const RgbImage img = read_png(manifest.image_path(rec));
    const auto maps = backend.forward(*backend.prepare(img), e);
    vote.per_image.push_back(image_selection(maps.fused, bc.fused_height, bc.fused_width,
                                             cfg.optimizer.sigma(bc.fused_height),
                                             cfg.optimizer.kappa, cfg.keypoints));
  }
  vote.chosen = vote_tokens(vote.per_image, cfg.keypoints);
  return vote;
}

std::uint64_t image_seed(std::uint64_t seed, const std::string& id) {
  return mix_seed(mix_seed(seed, 3), fnv1a(id));
}

std::vector<KeypointSet> extract_all(const AttentionBackend<Real>& backend,
                                     const DatasetManifest& manifest,
                                     const EmbeddingSet<Real>& e,
                                     const std::vector<int>& tokens, const RunConfig& cfg,
                                     const ExtractOptions& opts) {
  check_tokens(tokens, e.count());
  const auto& bc = backend.config();
  const int h = bc.fused_height;
  const int w = bc.fused_width;
  std::vector<KeypointSet> out;
  for (const auto& rec : manifest.records) {
    const RgbImage img = read_png(manifest.image_path(rec));
    const MatrixX<Real> maps =
        ensembled_map(backend, img, e, cfg.ensemble, image_seed(cfg.seed, rec.id), tokens);
    KeypointSet set = keypoints_from_maps(maps, h, w, tokens);
    set.id = rec.id;
    if (!opts.heatmap_dir.empty()) {
      fs::create_directories(opts.heatmap_dir);
      save_tensor(opts.heatmap_dir / (rec.id + ".atnk"), to_tensor(maps));
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto col = maps.col(static_cast<Eigen::Index>(i));
        const Plane plane = Eigen::Map<const Plane>(col.data(), h, w);
        write_gray_png(opts.heatmap_dir /
                           (rec.id + "_t" + std::to_string(tokens[i]) + ".png"),
                       plane, 0.0f, std::max(plane.maxCoeff(), 1e-12f));
      }
    }
    if (!opts.overlay_dir.empty()) {
      fs::create_directories(opts.overlay_dir);
      write_png(opts.overlay_dir / (rec.id + ".png"), render_overlay(img, set));
    }
    out.push_back(std::move(set));
  }
  return out;
}

void write_keypoints(const fs::path& path, const std::vector<KeypointSet>& sets) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  for (const auto& s : sets) {
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto& k = s.points[i];
      json j;
      j["image"] = s.id;
      j["rank"] = i;
      j["token"] = k.token;
      j["row"] = k.pixel.row;
      j["col"] = k.pixel.col;
      j["x"] = k.x;
      j["y"] = k.y;
      out << j.dump() << "\n";
    }
  }
}

std::vector<KeypointSet> read_keypoints(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open keypoints " + path.string());
  std::map<std::string, std::map<int, Keypoint>> grouped;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Keypoint k;
      k.token = j.at("token").get<int>();
      k.pixel = {j.at("row").get<int>(), j.at("col").get<int>()};
      k.x = j.at("x").get<double>();
      k.y = j.at("y").get<double>();
      const int rank = j.at("rank").get<int>();
      auto& slot = grouped[j.at("image").get<std::string>()];
      if (!slot.emplace(rank, k).second) {
        throw data_error(path.string() + ":" + std::to_string(lineno) +
                         ": duplicate keypoint rank");
      }
    } catch (const json::exception& ex) {
      throw data_error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  std::vector<KeypointSet> out;
  for (auto& [id, ranks] : grouped) {
    KeypointSet s;
    s.id = id;
    int expect = 0;
    for (auto& [rank, k] : ranks) {
      if (rank != expect++) throw data_error("keypoint ranks of " + id + " are not 0..K-1");
      s.points.push_back(k);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::array<float, 3> marker_colour(std::size_t rank) {
  static const std::array<std::array<float, 3>, 8> palette = {{
      {1.0f, 0.0f, 0.0f},
      {0.0f, 1.0f, 0.0f},
      {0.0f, 0.0f, 1.0f},
      {1.0f, 1.0f, 0.0f},
      {1.0f, 0.0f, 1.0f},
      {0.0f, 1.0f, 1.0f},
      {1.0f, 1.0f, 1.0f},
      {0.0f, 0.0f, 0.0f},
  }};
  return palette[rank % palette.size()];
}

PixelCoord overlay_pixel(const Keypoint& k, int height, int width) {
  return {static_cast<int>(std::lround(k.y * (height - 1))),
          static_cast<int>(std::lround(k.x * (width - 1)))};
}

RgbImage render_overlay(const RgbImage& image, const KeypointSet& keypoints, int radius) {
  RgbImage out = image;
  const int h = image.height();
  const int w = image.width();
  for (std::size_t i = 0; i < keypoints.points.size(); ++i) {
    const PixelCoord c = overlay_pixel(keypoints.points[i], h, w);
    const auto colour = marker_colour(i);
    for (int r = std::max(0, c.row - radius); r <= std::min(h - 1, c.row + radius); ++r) {
      for (int q = std::max(0, c.col - radius); q <= std::min(w - 1, c.col + radius); ++q) {
        const int dr = r - c.row;
        const int dq = q - c.col;
        if (dr * dr + dq * dq > radius * radius) continue;
        for (int ch = 0; ch < 3; ++ch) out.channels[ch](r, q) = colour[ch];
      }
    }
  }
  return out;
}

const MetricValue* MetricReport::find(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

std::string MetricReport::json() const {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["train_images"] = train_images;
  j["test_images"] = test_images;
  j["min_norm"] = min_norm;
  j["interocular_skipped"] = interocular_skipped;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& m : metrics) {
    list.push_back({{"name", m.name}, {"value", m.value}, {"normalization", m.normalization}});
  }
  j["metrics"] = list;
  return j.dump(2);
}

MatrixX<double> keypoint_matrix(const std::vector<KeypointSet>& sets,
                                const AnnotationSet& order) {
  std::map<std::string, const KeypointSet*> by_id;
  for (const auto& s : sets) by_id[s.id] = &s;
  if (sets.empty()) throw data_error("no keypoints");
  const std::size_t k = sets.front().points.size();
  MatrixX<double> x(static_cast<Eigen::Index>(order.records.size()),
                    static_cast<Eigen::Index>(2 * k));
  for (std::size_t i = 0; i < order.records.size(); ++i) {
    const auto& id = order.records[i].id;
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw data_error("no keypoints for annotated image " + id);
    if (it->second->points.size() != k) {
      throw data_error("image " + id + " has a different keypoint count");
    }
    for (std::size_t j = 0; j < k; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(2 * j)) =
          it->second->points[j].x;
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(2 * j + 1)) =
          it->second->points[j].y;
    }
  }
  return x;
}

MatrixX<double> landmark_matrix(const AnnotationSet& annotations) {
  const auto n = static_cast<Eigen::Index>(annotations.records.size());
  MatrixX<double> y(n, 2 * annotations.landmarks);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = annotations.records[static_cast<std::size_t>(i)].coords;
    if (static_cast<Eigen::Index>(c.size()) != y.cols()) {
      throw data_error("annotation row width mismatch");
    }
    for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) = c[static_cast<std::size_t>(j)];
  }
  return y;
}

MetricReport evaluate(const std::vector<KeypointSet>& train_keypoints,
                      const std::vector<KeypointSet>& test_keypoints,
                      const AnnotationSet& train_landmarks,
                      const AnnotationSet& test_landmarks, const EvalConfig& cfg,
                      const std::string& config_hash) {
  std::set<std::string> train_ids;
  for (const auto& r : train_landmarks.records) train_ids.insert(r.id);
  for (const auto& s : train_keypoints) train_ids.insert(s.id);
  for (const auto& r : test_landmarks.records) {
    if (train_ids.count(r.id)) throw data_error("image " + r.id + " is in both splits");
  }
  for (const auto& s : test_keypoints) {
    if (train_ids.count(s.id)) throw data_error("image " + s.id + " is in both splits");
  }
  if (train_landmarks.landmarks != test_landmarks.landmarks) {
    throw data_error("train and test annotations differ in landmark count");
  }

  const auto model = fit_regressor(keypoint_matrix(train_keypoints, train_landmarks),
                                   landmark_matrix(train_landmarks));
  const MatrixX<double> pred = model.predict(keypoint_matrix(test_keypoints, test_landmarks));
  const MatrixX<double> gt = landmark_matrix(test_landmarks);

  MetricReport r;
  r.config_hash = config_hash;
  r.min_norm = model.min_norm;
  r.train_images = static_cast<int>(train_landmarks.records.size());
  r.test_images = static_cast<int>(test_landmarks.records.size());
  for (const auto& name : cfg.metrics) {
    if (name == "nme_imagedim") {
      r.metrics.push_back({name, nme_imagedim(pred, gt, cfg.image_size), "image-dimension"});
    } else if (name == "nme_interocular") {
      if (!test_landmarks.eyes) {
        std::cerr << "warning: no eye pair in the test annotations; skipping " << name
                  << "\n";
        continue;
      }
      const auto io = nme_interocular(pred, gt, *test_landmarks.eyes);
      r.interocular_skipped = io.skipped;
      r.metrics.push_back({name, io.value, "inter-ocular"});
    } else if (name == "cumulative_l2") {
      const auto mode = cfg.cumulative == "mean" ? Accumulation::Mean : Accumulation::Sum;
      r.metrics.push_back(
          {name, cumulative_l2(pred, gt, cfg.image_size, mode), "cumulative-" + cfg.cumulative});
    } else if (name == "pck") {
      std::ostringstream label;
      label << "pck@" << cfg.pck_threshold << "px";
      r.metrics.push_back({name, pck(pred, gt, cfg.pck_threshold, cfg.image_size), label.str()});
    } else if (name == "relative_l2_128") {
      r.metrics.push_back({name, relative_l2_128(pred, gt), "relative-128"});
    } else {
      throw config_error("unknown metric '" + name + "'");
    }
  }
  return r;
}

void write_report(const fs::path& path, const MetricReport& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << report.json() << "\n";
  if (!out) throw data_error("cannot write " + path.string());
}

PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& data_dir,
                            const fs::path& out_dir) {
  const RunConfig r = cfg.resolved();
  r.validate();
  const std::string hash = r.hash();
  const auto backend = make_backend(r);
  const DatasetManifest train = load_manifest(data_dir / "train.tsv");
  const DatasetManifest test = load_manifest(data_dir / "test.tsv");

  PipelineResult out;
  TrainingOutputs outputs;
  outputs.log = out_dir / "log.jsonl";
  outputs.checkpoint = out_dir / "checkpoint.atnk";
  outputs.dump_dir = out_dir / "diagnostics";
  outputs.config_hash = hash;
  out.training = run_optimization(*backend, train, r.optimizer, r.seed, outputs);

  const auto& e = out.training.embeddings;
  out.vote = choose_tokens(*backend, train, e, r);
  out.train_keypoints = extract_all(*backend, train, e, out.vote.chosen, r);
  out.test_keypoints = extract_all(*backend, test, e, out.vote.chosen, r);
  write_keypoints(out_dir / "train_keypoints.jsonl", out.train_keypoints);
  write_keypoints(out_dir / "test_keypoints.jsonl", out.test_keypoints);

  out.report = evaluate(out.train_keypoints, out.test_keypoints,
                        load_annotations(data_dir / "train_landmarks.txt"),
                        load_annotations(data_dir / "test_landmarks.txt"), r.eval, hash);
  write_report(out_dir / "metrics.json", out.report);
  json extra;
  extra["data"] = data_dir.string();
  extra["tokens"] = out.vote.chosen;
  write_run_record(out_dir, "pipeline", r, extra.dump());
  return out;
}

}  // namespace atnk
