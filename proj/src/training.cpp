// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/training.hpp"

#include "atnk/tensor_io.hpp"

#include <json.hpp>

#include <fstream>
#include <iostream>
#include <memory>

namespace atnk {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (iterations < 0) throw config_error("iterations must be non-negative");
  if (!(learning_rate > 0.0)) throw config_error("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw config_error("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw config_error("adam epsilon must be positive");
  if (!(sigma_fraction > 0.0)) throw config_error("sigma must be positive");
  if (kappa < 1) throw config_error("kappa must be positive");
  if (lambda_equiv < 0.0) throw config_error("lambda_equiv must be non-negative");
  if (checkpoint_every < 0) throw config_error("checkpoint_every must be non-negative");
}

AffineTransform sample_valid_transform(std::mt19937_64& rng,
                                       const AugmentationRanges& ranges,
                                       int height, int width) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    AffineTransform t = AffineTransform::sample(rng, ranges);
    if (t.validity_mask(height, width).any()) return t;
  }
  throw config_error("augmentation ranges never leave a valid pixel");
}

std::string loss_report_json(const LossReport& r, bool upsample_queries) {
  json j;
  j["iteration"] = r.iteration;
  j["localize"] = r.localize;
  j["equiv"] = r.equiv;
  j["total"] = r.total;
  j["lambda_equiv"] = r.lambda_equiv;
  j["selected"] = r.selected;
  j["selected_kl"] = r.selected_kl;
  j["equivariance"] = r.equivariance;
  j["upsample_queries"] = upsample_queries;
  if (r.equivariance) {
    j["transform"] = {r.transform.rotation_deg(), r.transform.dx(),
                      r.transform.dy(), r.transform.scale()};
  }
  return j.dump();
}

void save_checkpoint(const std::filesystem::path& path,
                     const EmbeddingSet<Real>& e, const CheckpointRecord& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_tensor(path, to_tensor(e.tokens));
  json j;
  j["seed"] = record.seed;
  j["iteration"] = record.iteration;
  j["config_hash"] = record.config_hash;
  j["sigma"] = record.sigma;
  j["kappa"] = record.kappa;
  j["lambda_equiv"] = record.lambda_equiv;
  j["tokens"] = e.count();
  j["embedding_width"] = e.width();
  std::filesystem::path meta = path;
  meta += ".json";
  std::ofstream out(meta);
  out << j.dump(2) << "\n";
  if (!out) throw data_error("cannot write " + meta.string());
}

EmbeddingSet<Real> load_checkpoint(const std::filesystem::path& path,
                                   CheckpointRecord* record) {
  EmbeddingSet<Real> e;
  e.tokens = to_matrix<Real>(load_tensor(path));
  if (!e.all_finite()) throw numeric_error("checkpoint holds non-finite embeddings");
  if (record != nullptr) {
    std::filesystem::path meta = path;
    meta += ".json";
    std::ifstream in(meta);
    if (!in) throw data_error("missing checkpoint record " + meta.string());
    try {
      const json j = json::parse(in);
      record->seed = j.at("seed").get<std::uint64_t>();
      record->iteration = j.at("iteration").get<long>();
      record->config_hash = j.at("config_hash").get<std::string>();
      record->sigma = j.at("sigma").get<double>();
      record->kappa = j.at("kappa").get<int>();
      record->lambda_equiv = j.at("lambda_equiv").get<double>();
    } catch (const json::exception& ex) {
      throw data_error("malformed checkpoint record " + meta.string() + ": " + ex.what());
    }
  }
  return e;
}

namespace {

void dump_diagnostics(const std::filesystem::path& dir, const NonFiniteLoss& err,
                      long iteration, const std::string& image_id) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  save_tensor(dir / "nonfinite_maps.atnk", to_tensor(err.maps));
  json j;
  j["iteration"] = iteration;
  j["image"] = image_id;
  j["tokens"] = err.tokens;
  std::ofstream(dir / "nonfinite_maps.json") << j.dump(2) << "\n";
}

}  // namespace

TrainingResult run_optimization(const AttentionBackend<Real>& backend,
                                const DatasetManifest& manifest,
                                const OptimizerConfig& cfg, std::uint64_t seed,
                                const TrainingOutputs& outputs) {
  cfg.validate();
  if (manifest.empty()) throw data_error("training manifest is empty");
  const auto& bc = backend.config();
  if (cfg.kappa > bc.num_tokens) {
    throw config_error("kappa " + std::to_string(cfg.kappa) +
                       " exceeds the token count " + std::to_string(bc.num_tokens));
  }

  struct Item {
    std::string id;
    RgbImage image;
    std::unique_ptr<AttentionBackend<Real>::Prepared> prepared;
  };
  std::vector<Item> items;
  TrainingResult result;
  for (const auto& rec : manifest.records) {
    try {
      RgbImage img = read_png(manifest.image_path(rec));
      auto prep = backend.prepare(img);
      items.push_back({rec.id, std::move(img), std::move(prep)});
    } catch (const Error& ex) {
      if (ex.kind() != ErrorKind::Data) throw;
      std::cerr << "warning: skipping " << rec.id << ": " << ex.what() << "\n";
      ++result.skipped_images;
    }
  }
  if (10 * result.skipped_images > static_cast<int>(manifest.size())) {
    throw data_error(std::to_string(result.skipped_images) + " of " +
                     std::to_string(manifest.size()) +
                     " training images unreadable (limit 10%)");
  }
  if (items.empty()) throw data_error("no readable training images");

  result.embeddings =
      EmbeddingSet<Real>::random(bc.num_tokens, bc.embedding_width, mix_seed(seed, 1));
  OptimizerState<Real> state(result.embeddings, cfg.learning_rate, mix_seed(seed, 2));
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);

  std::ofstream log;
  if (!outputs.log.empty()) {
    if (outputs.log.has_parent_path()) {
      std::filesystem::create_directories(outputs.log.parent_path());
    }
    log.open(outputs.log);
    if (!log) throw data_error("cannot write " + outputs.log.string());
  }
  const CheckpointRecord base{seed, 0, outputs.config_hash, cfg.sigma(bc.fused_height),
                              cfg.kappa, cfg.effective_lambda()};

  for (int it = 0; it < cfg.iterations; ++it) {
    const Item& item = items[pick(state.rng)];
    LossReport rep;
    try {
      rep = optimization_step(backend, item.image, *item.prepared, state,
                              result.embeddings, cfg);
    } catch (const NonFiniteLoss& ex) {
      dump_diagnostics(outputs.dump_dir, ex, state.iteration + 1, item.id);
      throw numeric_error("non-finite loss at iteration " +
                          std::to_string(state.iteration + 1) + " on image " +
                          item.id + " (tokens dumped to " +
                          outputs.dump_dir.string() + ")");
    }
    if (log.is_open()) log << loss_report_json(rep, bc.upsample_queries) << "\n";
    result.log.push_back(std::move(rep));
    if (!outputs.checkpoint.empty() && cfg.checkpoint_every > 0 &&
        state.iteration % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations) {
      auto rec = base;
      rec.iteration = state.iteration;
      save_checkpoint(outputs.checkpoint, result.embeddings, rec);
    }
  }
  if (!outputs.checkpoint.empty()) {
    auto rec = base;
    rec.iteration = state.iteration;
    save_checkpoint(outputs.checkpoint, result.embeddings, rec);
  }
  return result;
}

}  // namespace atnk
