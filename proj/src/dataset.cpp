// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace atnk {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

Error parse_error(const std::filesystem::path& path, int line,
                  const std::string& what) {
  return data_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<double> parse_numbers(const std::string& text,
                                  const std::filesystem::path& path, int line) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw parse_error(path, line, "not a number: '" + tok + "'");
    }
    if (used != tok.size() || !std::isfinite(v)) {
      throw parse_error(path, line, "not a number: '" + tok + "'");
    }
    out.push_back(v);
  }
  return out;
}

void check_landmarks(const std::vector<double>& coords,
                     const std::filesystem::path& path, int line) {
  if (coords.size() % 2 != 0) {
    throw parse_error(path, line, "odd number of landmark coordinates");
  }
  for (double v : coords) {
    if (v < 0.0 || v > 1.0) {
      throw parse_error(path, line, "landmark coordinate outside [0, 1]");
    }
  }
}

std::string format_number(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  return out;
}

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (i) {
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
    default: break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

/// Alpha-blends a radial gradient disc: weight 1 - rho^2 inside the radius.
void paint_disc(RgbImage& image, const Eigen::Vector2d& centre, double radius,
                const std::array<float, 3>& colour) {
  const int h = image.height();
  const int w = image.width();
  const int r0 = std::max(0, static_cast<int>(std::floor(centre.y() - radius)));
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(centre.y() + radius)));
  const int c0 = std::max(0, static_cast<int>(std::floor(centre.x() - radius)));
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(centre.x() + radius)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dx = c - centre.x();
      const double dy = r - centre.y();
      const double rho2 = (dx * dx + dy * dy) / (radius * radius);
      if (rho2 >= 1.0) continue;
      const float a = static_cast<float>(1.0 - rho2);
      for (int ch = 0; ch < 3; ++ch) {
        float& px = image.channels[ch](r, c);
        px = px * (1.0f - a) + colour[ch] * a;
      }
    }
  }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      if (body.rfind("split:", 0) == 0) m.split = trim(body.substr(6));
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() < 2 || fields.size() > 3) {
      throw parse_error(path, number, "expected 2 or 3 tab-separated fields");
    }
    ManifestRecord r;
    r.id = trim(fields[0]);
    r.path = trim(fields[1]);
    if (r.id.empty() || r.path.empty()) {
      throw parse_error(path, number, "empty id or path");
    }
    if (!seen.insert(r.id).second) {
      throw parse_error(path, number, "duplicate id '" + r.id + "'");
    }
    if (fields.size() == 3 && !trim(fields[2]).empty()) {
      auto coords = parse_numbers(fields[2], path, number);
      check_landmarks(coords, path, number);
      r.landmarks = std::move(coords);
    }
    if (!std::filesystem::exists(m.root / r.path)) {
      throw parse_error(path, number, "missing image " + (m.root / r.path).string());
    }
    m.records.push_back(std::move(r));
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return m;
}

void write_manifest(const std::filesystem::path& path,
                    const DatasetManifest& manifest) {
  auto out = open_for_write(path);
  if (!manifest.split.empty()) out << "# split: " << manifest.split << "\n";
  auto records = manifest.records;
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& r : records) {
    out << r.id << '\t' << r.path.generic_string();
    if (r.landmarks) {
      out << '\t';
      for (std::size_t i = 0; i < r.landmarks->size(); ++i) {
        if (i) out << ' ';
        out << format_number((*r.landmarks)[i]);
      }
    }
    out << '\n';
  }
  if (!out) throw data_error("cannot write " + path.string());
}

const LandmarkAnnotation* AnnotationSet::find(const std::string& id) const {
  const auto it = std::lower_bound(
      records.begin(), records.end(), id,
      [](const LandmarkAnnotation& a, const std::string& k) { return a.id < k; });
  return it != records.end() && it->id == id ? &*it : nullptr;
}

AnnotationSet load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open annotations " + path.string());
  AnnotationSet a;
  std::set<std::string> seen;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      if (body.rfind("landmarks:", 0) == 0) {
        const auto v = parse_numbers(body.substr(10), path, number);
        if (v.size() != 1 || v[0] < 1 || v[0] != std::floor(v[0])) {
          throw parse_error(path, number, "bad landmark count");
        }
        a.landmarks = static_cast<int>(v[0]);
      } else if (body.rfind("eyes:", 0) == 0) {
        const auto v = parse_numbers(body.substr(5), path, number);
        if (v.size() != 2 || v[0] < 0 || v[1] < 0 || v[0] == v[1]) {
          throw parse_error(path, number, "bad eye pair");
        }
        a.eyes = std::make_pair(static_cast<int>(v[0]), static_cast<int>(v[1]));
      }
      continue;
    }
    std::istringstream fields(line);
    LandmarkAnnotation rec;
    fields >> rec.id;
    std::string rest;
    std::getline(fields, rest);
    rec.coords = parse_numbers(rest, path, number);
    check_landmarks(rec.coords, path, number);
    if (a.landmarks == 0) a.landmarks = rec.count();
    if (rec.count() != a.landmarks) {
      throw parse_error(path, number, "expected " + std::to_string(a.landmarks) +
                                          " landmarks, got " +
                                          std::to_string(rec.count()));
    }
    if (!seen.insert(rec.id).second) {
      throw parse_error(path, number, "duplicate id '" + rec.id + "'");
    }
    a.records.push_back(std::move(rec));
  }
  if (a.eyes && (a.eyes->first >= a.landmarks || a.eyes->second >= a.landmarks)) {
    throw data_error(path.string() + ": eye index out of range");
  }
  std::sort(a.records.begin(), a.records.end(),
            [](const auto& x, const auto& y) { return x.id < y.id; });
  return a;
}

void write_annotations(const std::filesystem::path& path,
                       const AnnotationSet& annotations) {
  auto out = open_for_write(path);
  out << "# landmarks: " << annotations.landmarks << "\n";
  if (annotations.eyes) {
    out << "# eyes: " << annotations.eyes->first << ' ' << annotations.eyes->second
        << "\n";
  }
  for (const auto& r : annotations.records) {
    out << r.id;
    for (double v : r.coords) out << ' ' << format_number(v);
    out << '\n';
  }
  if (!out) throw data_error("cannot write " + path.string());
}

Background parse_background(const std::string& name) {
  if (name == "flat") return Background::Flat;
  if (name == "noise") return Background::Noise;
  if (name == "clutter") return Background::Clutter;
  throw config_error("unknown background '" + name + "' (flat | noise | clutter)");
}

std::string to_string(Background b) {
  switch (b) {
    case Background::Flat: return "flat";
    case Background::Noise: return "noise";
    case Background::Clutter: return "clutter";
  }
  return "flat";
}

void SyntheticSpec::validate() const {
  if (parts < 1) throw config_error("synthetic spec needs at least one part");
  if (canvas < 16) throw config_error("synthetic canvas must be at least 16");
  if (train_count < 0 || test_count < 0) throw config_error("negative image count");
  if (!(part_radius > 0.0) || !(layout_extent >= 0.0) ||
      layout_extent + part_radius > 0.5) {
    throw config_error("part radius and layout extent must fit the canvas");
  }
  if (!(deformation.min_scale > 0.0) ||
      deformation.min_scale > deformation.max_scale ||
      deformation.max_rotation_deg < 0.0 || deformation.max_translation < 0.0) {
    throw config_error("invalid deformation ranges");
  }
  if (noise_level < 0.0) throw config_error("noise level must be non-negative");
}

PartLayout make_layout(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.appearance_seed);
  PartLayout layout;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double offset = unit(rng);
  for (int i = 0; i < spec.parts; ++i) {
    layout.hues.push_back(
        hsv_to_rgb(offset + static_cast<double>(i) / spec.parts, 0.85, 0.95));
  }
  const double mid = 0.5 * (spec.canvas - 1);
  const double extent = spec.layout_extent * spec.canvas;
  const double min_dist = 2.0 * spec.part_radius * spec.canvas;
  std::uniform_real_distribution<double> pos(mid - extent, mid + extent);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<Eigen::Vector2d> centres;
    for (int i = 0; i < spec.parts; ++i) centres.emplace_back(pos(rng), pos(rng));
    bool ok = true;
    for (int i = 0; i < spec.parts && ok; ++i) {
      for (int j = i + 1; j < spec.parts && ok; ++j) {
        ok = (centres[i] - centres[j]).norm() > min_dist;
      }
    }
    if (ok) {
      layout.centres = std::move(centres);
      return layout;
    }
  }
  throw config_error("no non-overlapping layout of " + std::to_string(spec.parts) +
                     " parts after 100 attempts");
}

SyntheticSample render_sample(const SyntheticSpec& spec, const PartLayout& layout,
                              std::mt19937_64& rng) {
  const int n = spec.canvas;
  SyntheticSample s;
  // Redraw deformations that push a part over the border.
  bool inside = false;
  for (int attempt = 0; attempt < 100 && !inside; ++attempt) {
    s.deformation = AffineTransform::sample(rng, spec.deformation);
    const double radius = spec.part_radius * n * s.deformation.scale();
    s.landmarks.clear();
    inside = true;
    for (const auto& c : layout.centres) {
      const auto p = s.deformation.apply(c, n, n);
      s.landmarks.push_back(p);
      inside = inside && p.x() >= radius && p.y() >= radius &&
               p.x() <= n - 1 - radius && p.y() <= n - 1 - radius;
    }
  }
  if (!inside) throw config_error("deformation ranges push parts off the canvas");

  s.image = RgbImage(n, n, 0.45f);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_level));
  if (spec.background == Background::Clutter) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int blobs = 8;
    for (int b = 0; b < blobs; ++b) {
      const Eigen::Vector2d c(unit(rng) * (n - 1), unit(rng) * (n - 1));
      const double radius = (0.5 + unit(rng)) * spec.part_radius * n;
      paint_disc(s.image, c, radius, hsv_to_rgb(unit(rng), 0.35, 0.7));
    }
  }
  if (spec.background != Background::Flat && spec.noise_level > 0.0) {
    for (auto& ch : s.image.channels) {
      for (Eigen::Index i = 0; i < ch.size(); ++i) ch.data()[i] += noise(rng);
    }
  }
  const double radius = spec.part_radius * n * s.deformation.scale();
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    paint_disc(s.image, s.landmarks[i], radius, layout.hues[i]);
  }
  for (auto& ch : s.image.channels) ch = ch.max(0.0f).min(1.0f);
  return s;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                                    const std::filesystem::path& out_dir) {
  const PartLayout layout = make_layout(spec);
  SyntheticDataset ds;
  std::filesystem::create_directories(out_dir);
  auto deform_out = open_for_write(out_dir / "deformations.tsv");
  deform_out << "# id\trotation_deg\tdx\tdy\tscale\n";
  const double norm = spec.canvas - 1;
  auto make_split = [&](const std::string& split, int count, std::uint64_t salt,
                        DatasetManifest& manifest, AnnotationSet& ann) {
    manifest.root = out_dir;
    manifest.split = split;
    ann.landmarks = spec.parts;
    if (spec.parts >= 2) ann.eyes = std::make_pair(0, 1);
    std::filesystem::create_directories(out_dir / split);
    for (int i = 0; i < count; ++i) {
      std::mt19937_64 rng(mix_seed(seed, salt + static_cast<std::uint64_t>(i)));
      const SyntheticSample s = render_sample(spec, layout, rng);
      std::ostringstream id;
      id << split << '_' << std::setw(4) << std::setfill('0') << i;
      const std::filesystem::path rel = std::filesystem::path(split) / (id.str() + ".png");
      write_png(out_dir / rel, s.image);
      std::vector<double> coords;
      for (const auto& p : s.landmarks) {
        coords.push_back(p.x() / norm);
        coords.push_back(p.y() / norm);
      }
      manifest.records.push_back({id.str(), rel, coords});
      ann.records.push_back({id.str(), coords});
      deform_out << id.str() << '\t' << format_number(s.deformation.rotation_deg())
                 << '\t' << format_number(s.deformation.dx()) << '\t'
                 << format_number(s.deformation.dy()) << '\t'
                 << format_number(s.deformation.scale()) << '\n';
    }
    write_manifest(out_dir / (split + ".tsv"), manifest);
    write_annotations(out_dir / (split + "_landmarks.txt"), ann);
  };
  make_split("train", spec.train_count, 0, ds.train, ds.train_landmarks);
  make_split("test", spec.test_count, 1u << 20, ds.test, ds.test_landmarks);
  return ds;
}

}  // namespace atnk
