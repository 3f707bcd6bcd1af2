// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace atnk {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw config_error(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw config_error(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

int to_int32(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < -2147483647LL || x > 2147483647LL) throw config_error(key + ": out of range");
  return static_cast<int>(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) {
    throw config_error(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw config_error(key + ": expected true or false, got '" + v + "'");
}

std::string num(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::string flag(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;  // section.name
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&](std::string key, auto get, auto set) {
      f.push_back({std::move(key), get, set});
    };
#define ATNK_INT(KEY, MEMBER)                                                \
  add(KEY, [](const RunConfig& c) { return std::to_string(c.MEMBER); },      \
      [](RunConfig& c, const std::string& v) { c.MEMBER = to_int32(KEY, v); })
#define ATNK_DOUBLE(KEY, MEMBER)                                             \
  add(KEY, [](const RunConfig& c) { return num(c.MEMBER); },                 \
      [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); })
#define ATNK_BOOL(KEY, MEMBER)                                               \
  add(KEY, [](const RunConfig& c) { return flag(c.MEMBER); },                \
      [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); })
#define ATNK_STRING(KEY, MEMBER)                                             \
  add(KEY, [](const RunConfig& c) { return c.MEMBER; },                      \
      [](RunConfig& c, const std::string& v) { c.MEMBER = v; })

    add("run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& v) { c.seed = to_u64("run.seed", v); });
    ATNK_STRING("run.output", output);
    ATNK_STRING("run.backend", backend);

    add("backend.seed",
        [](const RunConfig& c) {
          return c.backend_seed ? std::to_string(*c.backend_seed) : std::string("auto");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "auto") {
            c.backend_seed.reset();
          } else {
            c.backend_seed = to_u64("backend.seed", v);
          }
        });
    add("backend.layers",
        [](const RunConfig& c) { return format_layers(c.backend_config.layers); },
        [](RunConfig& c, const std::string& v) { c.backend_config.layers = parse_layers(v); });
    ATNK_INT("backend.heads", backend_config.heads);
    ATNK_INT("backend.fused_height", backend_config.fused_height);
    ATNK_INT("backend.fused_width", backend_config.fused_width);
    ATNK_INT("backend.tokens", backend_config.num_tokens);
    ATNK_INT("backend.embedding_width", backend_config.embedding_width);
    ATNK_INT("backend.timestep", backend_config.timestep);
    ATNK_INT("backend.horizon", backend_config.horizon);
    ATNK_BOOL("backend.upsample_queries", backend_config.upsample_queries);

    ATNK_STRING("sidecar.command", sidecar.command);
    ATNK_STRING("sidecar.socket", sidecar.socket);
    ATNK_STRING("sidecar.model", sidecar.model);
    ATNK_STRING("sidecar.device", sidecar.device);

    ATNK_INT("optimizer.iterations", optimizer.iterations);
    ATNK_DOUBLE("optimizer.learning_rate", optimizer.learning_rate);
    ATNK_DOUBLE("optimizer.beta1", optimizer.beta1);
    ATNK_DOUBLE("optimizer.beta2", optimizer.beta2);
    ATNK_DOUBLE("optimizer.epsilon", optimizer.epsilon);
    ATNK_DOUBLE("optimizer.sigma_fraction", optimizer.sigma_fraction);
    ATNK_INT("optimizer.kappa", optimizer.kappa);
    ATNK_DOUBLE("optimizer.lambda_equiv", optimizer.lambda_equiv);
    ATNK_INT("optimizer.checkpoint_every", optimizer.checkpoint_every);

    ATNK_DOUBLE("augment.max_rotation", optimizer.augmentation.max_rotation_deg);
    ATNK_DOUBLE("augment.max_translation", optimizer.augmentation.max_translation);
    ATNK_DOUBLE("augment.min_scale", optimizer.augmentation.min_scale);
    ATNK_DOUBLE("augment.max_scale", optimizer.augmentation.max_scale);

    ATNK_INT("keypoints.k", keypoints);
    ATNK_INT("keypoints.augmentations", ensemble.augmentations);
    ATNK_BOOL("keypoints.include_identity", ensemble.include_identity);

    add("eval.metrics",
        [](const RunConfig& c) {
          std::string s;
          for (const auto& m : c.eval.metrics) s += (s.empty() ? "" : ", ") + m;
          return s;
        },
        [](RunConfig& c, const std::string& v) { c.eval.metrics = split(v, ','); });
    ATNK_DOUBLE("eval.image_size", eval.image_size);
    ATNK_DOUBLE("eval.pck_threshold", eval.pck_threshold);
    ATNK_STRING("eval.cumulative", eval.cumulative);

    ATNK_INT("synth.parts", synth.parts);
    ATNK_INT("synth.canvas", synth.canvas);
    ATNK_INT("synth.train", synth.train_count);
    ATNK_INT("synth.test", synth.test_count);
    ATNK_DOUBLE("synth.part_radius", synth.part_radius);
    ATNK_DOUBLE("synth.layout_extent", synth.layout_extent);
    ATNK_DOUBLE("synth.max_rotation", synth.deformation.max_rotation_deg);
    ATNK_DOUBLE("synth.max_translation", synth.deformation.max_translation);
    ATNK_DOUBLE("synth.min_scale", synth.deformation.min_scale);
    ATNK_DOUBLE("synth.max_scale", synth.deformation.max_scale);
    add("synth.background",
        [](const RunConfig& c) { return to_string(c.synth.background); },
        [](RunConfig& c, const std::string& v) { c.synth.background = parse_background(v); });
    ATNK_DOUBLE("synth.noise_level", synth.noise_level);
    add("synth.appearance_seed",
        [](const RunConfig& c) { return std::to_string(c.synth.appearance_seed); },
        [](RunConfig& c, const std::string& v) {
          c.synth.appearance_seed = to_u64("synth.appearance_seed", v);
        });

    ATNK_BOOL("ablation.no_ensemble", ablation.no_ensemble);
    ATNK_BOOL("ablation.no_fps", ablation.no_fps);
    ATNK_BOOL("ablation.no_upsample", ablation.no_upsample);
    ATNK_BOOL("ablation.no_equivariance", ablation.no_equivariance);
#undef ATNK_INT
#undef ATNK_DOUBLE
#undef ATNK_BOOL
#undef ATNK_STRING
    return f;
  }();
  return table;
}

}  // namespace

std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> out;
  for (const auto& item : split(text, ',')) {
    // id:HxW[:D]
    const auto parts = split(item, ':');
    if (parts.size() < 2 || parts.size() > 3) {
      throw config_error("backend.layers: expected id:HxW[:D], got '" + item + "'");
    }
    LayerSpec l;
    l.id = to_int32("backend.layers", parts[0]);
    const auto x = parts[1].find('x');
    if (x == std::string::npos) {
      throw config_error("backend.layers: expected HxW, got '" + parts[1] + "'");
    }
    l.height = to_int32("backend.layers", parts[1].substr(0, x));
    l.width = to_int32("backend.layers", parts[1].substr(x + 1));
    if (parts.size() == 3) l.key_width = to_int32("backend.layers", parts[2]);
    out.push_back(l);
  }
  if (out.empty()) throw config_error("backend.layers: no layers");
  return out;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::string s;
  for (const auto& l : layers) {
    if (!s.empty()) s += ", ";
    s += std::to_string(l.id) + ":" + std::to_string(l.height) + "x" +
         std::to_string(l.width) + ":" + std::to_string(l.key_width);
  }
  return s;
}

RunConfig default_config() { return RunConfig{}; }

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  if (r.ablation.no_fps) r.optimizer.kappa = r.keypoints;
  if (r.ablation.no_equivariance) r.optimizer.equivariance = false;
  if (r.ablation.no_upsample) r.backend_config.upsample_queries = false;
  if (r.ablation.no_ensemble) r.ensemble.augmentations = 1;
  r.ensemble.ranges = r.optimizer.augmentation;
  r.backend_config.seed = r.backend_seed ? *r.backend_seed : mix_seed(r.seed, 0);
  return r;
}

void RunConfig::validate() const {
  if (backend != "builtin" && backend != "sidecar") {
    throw config_error("run.backend must be builtin or sidecar, got '" + backend + "'");
  }
  if (backend == "sidecar" && sidecar.command.empty() && sidecar.socket.empty()) {
    throw config_error("sidecar backend needs sidecar.command or sidecar.socket");
  }
  backend_config.validate();
  optimizer.validate();
  ensemble.validate();
  synth.validate();
  if (keypoints < 1) throw config_error("keypoints.k must be positive");
  const RunConfig r = resolved();
  if (!(r.optimizer.kappa >= keypoints && r.backend_config.num_tokens >= r.optimizer.kappa)) {
    throw config_error("need tokens >= kappa >= k (tokens " +
                       std::to_string(r.backend_config.num_tokens) + ", kappa " +
                       std::to_string(r.optimizer.kappa) + ", k " +
                       std::to_string(keypoints) + ")");
  }
  static const std::vector<std::string> known = {
      "nme_imagedim", "nme_interocular", "cumulative_l2", "pck", "relative_l2_128"};
  for (const auto& m : eval.metrics) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw config_error("unknown metric '" + m + "'");
    }
  }
  if (eval.cumulative != "sum" && eval.cumulative != "mean") {
    throw config_error("eval.cumulative must be sum or mean");
  }
  if (!(eval.image_size > 0.0) || eval.pck_threshold < 0.0) {
    throw config_error("eval.image_size must be positive and pck_threshold non-negative");
  }
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

std::string RunConfig::hash() const {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(resolved().dump());
  return out.str();
}

void set_config_value(RunConfig& cfg, const std::string& dotted_key,
                      const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == dotted_key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  throw config_error("unknown config key '" + dotted_key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& ex) {
    throw config_error("config line " + std::to_string(ex.line()) + ": " + ex.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw config_error("config key '" + section + "' is outside a section");
    }
    for (const auto& [key, value] : body) {
      set_config_value(base, section + "." + key, value.data());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

void apply_environment(RunConfig& cfg) {
  if (const char* s = std::getenv("ATNK_SEED"); s != nullptr && *s != '\0') {
    cfg.seed = to_u64("ATNK_SEED", trim(s));
  }
}

}  // namespace atnk
