// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace atnk {

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor exchange assumes a little-endian host");

constexpr std::array<char, 4> kMagic = {'A', 'T', 'N', 'K'};
constexpr std::uint32_t kMaxRank = 8;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw data_error("truncated tensor header");
  }
  return v;
}

}  // namespace

std::uint64_t Tensor::numel() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_tensor(std::ostream& out, const Tensor& tensor) {
  if (tensor.numel() != tensor.values.size()) {
    throw data_error("tensor payload size does not match its dims");
  }
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kTensorFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(tensor.values.data()),
            static_cast<std::streamsize>(tensor.values.size() * sizeof(float)));
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw data_error("bad tensor magic (expected ATNK)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kTensorFormatVersion) {
    throw data_error("unsupported tensor version " + std::to_string(version));
  }
  const auto rank = get<std::uint32_t>(in);
  if (rank > kMaxRank) {
    throw data_error("tensor rank " + std::to_string(rank) + " too large");
  }
  Tensor t;
  t.dims.resize(rank);
  for (auto& d : t.dims) d = get<std::uint64_t>(in);
  t.values.resize(static_cast<std::size_t>(t.numel()));
  if (!in.read(reinterpret_cast<char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(float)))) {
    throw data_error("truncated tensor payload");
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
  if (!out) throw data_error("failed writing " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open tensor file " + path.string());
  return read_tensor(in);
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, tensor);
  const std::string s = std::move(out).str();
  return {s.begin(), s.end()};
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()),
                        std::ios::binary);
  return read_tensor(in);
}

}  // namespace atnk
