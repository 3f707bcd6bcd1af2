// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor exchange format shared by checkpoints, heatmap dumps and the
// sidecar wire protocol. Little-endian throughout:
//
//   "ATNK" | version:u32 | rank:u32 | dims:u64[rank] | payload:f32[prod(dims)]
//
// The payload is row-major over `dims`.

#pragma once

#include "atnk/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace atnk {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::uint64_t numel() const;
};

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

/// Rank-2 tensor holding `m` in row-major order.
template <typename Derived>
Tensor to_tensor(const Eigen::MatrixBase<Derived>& m) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()),
            static_cast<std::uint64_t>(m.cols())};
  t.values.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      t.values[static_cast<std::size_t>(r * m.cols() + c)] =
          static_cast<float>(m(r, c));
    }
  }
  return t;
}

template <typename Scalar>
MatrixX<Scalar> to_matrix(const Tensor& t) {
  if (t.dims.size() != 2) {
    throw data_error("expected a rank-2 tensor, got rank " +
                     std::to_string(t.dims.size()));
  }
  const auto rows = static_cast<Eigen::Index>(t.dims[0]);
  const auto cols = static_cast<Eigen::Index>(t.dims[1]);
  MatrixX<Scalar> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = static_cast<Scalar>(
          t.values[static_cast<std::size_t>(r * cols + c)]);
    }
  }
  return m;
}

}  // namespace atnk
