// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: an INI-style file of `key = value` lines in sections,
// layered over embedded defaults, then flag overrides, then ATNK_SEED.

#pragma once

#include "atnk/attention.hpp"
#include "atnk/dataset.hpp"
#include "atnk/keypoints.hpp"
#include "atnk/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace atnk {

struct AblationFlags {
  bool no_ensemble = false;
  bool no_fps = false;
  bool no_upsample = false;
  bool no_equivariance = false;
};

struct SidecarConfig {
  std::string command;  // spawned with stdio framing
  std::string socket;   // or a unix socket path
  std::string model;
  std::string device = "cpu";
};

struct EvalConfig {
  std::vector<std::string> metrics = {"nme_imagedim", "nme_interocular",
                                      "cumulative_l2", "pck", "relative_l2_128"};
  double image_size = 256.0;
  double pck_threshold = 6.0;
  /// "sum" or "mean" over landmarks within an image.
  std::string cumulative = "sum";
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output = "run";
  std::string backend = "builtin";
  /// Backend projection seed; derived from `seed` when unset.
  std::optional<std::uint64_t> backend_seed;
  BackendConfig backend_config;
  SidecarConfig sidecar;
  OptimizerConfig optimizer;
  int keypoints = 5;
  EnsembleConfig ensemble;
  EvalConfig eval;
  SyntheticSpec synth;
  AblationFlags ablation;

  /// Copy with ablation implications applied: no_fps forces kappa = K,
  /// no_equivariance drops the equivariance term, no_upsample upsamples
  /// finished maps, no_ensemble uses the identity pass only.
  RunConfig resolved() const;
  void validate() const;

  /// Canonical `key = value` dump of every field.
  std::string dump() const;
  /// FNV-1a of the resolved dump, as 16 hex digits.
  std::string hash() const;
};

RunConfig default_config();

/// Parses `text` on top of `base`; unknown sections or keys are errors.
RunConfig parse_config(const std::string& text, RunConfig base = default_config());
RunConfig load_config(const std::filesystem::path& path,
                      RunConfig base = default_config());

/// Sets one `section.key` to `value` (the flag path used by --set).
void set_config_value(RunConfig& cfg, const std::string& dotted_key,
                      const std::string& value);

/// Applies ATNK_SEED if present in the environment.
void apply_environment(RunConfig& cfg);

std::vector<LayerSpec> parse_layers(const std::string& text);
std::string format_layers(const std::vector<LayerSpec>& layers);

}  // namespace atnk
