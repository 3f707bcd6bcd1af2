// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "atnk/attention.hpp"
#include "atnk/image.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <optional>
#include <random>
#include <string>

namespace atnk::test {

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "atnk") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline RgbImage random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  RgbImage img(h, w);
  for (auto& c : img.channels) {
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
  }
  return img;
}

/// A reduced backend for tests that run many optimization steps.
inline BackendConfig light_backend(int tokens = 24) {
  BackendConfig c;
  c.layers = {{8, 16, 16, 16}, {9, 32, 32, 16}};
  c.heads = 2;
  c.fused_height = 64;
  c.fused_width = 64;
  c.num_tokens = tokens;
  c.embedding_width = 16;
  return c;
}

/// Kind of the atnk::Error thrown by `fn`, or nullopt when it returns.
template <typename Fn>
std::optional<ErrorKind> error_kind(Fn&& fn) {
  try {
    fn();
  } catch (const Error& err) {
    return err.kind();
  }
  return std::nullopt;
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(ATNK_FIXTURE_DIR) / name;
}

/// `name value` lines; '#' starts a comment line.
inline std::map<std::string, double> read_expected(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string name;
    double value = 0.0;
    fields >> name >> value;
    out[name] = value;
  }
  return out;
}

}  // namespace atnk::test
