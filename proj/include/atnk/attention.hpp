// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-attention between token embeddings and image-derived queries.
//
// For layer l and head c the attention of pixel p on token n is
//
//   softmax_n( Q_lc[p] . K_lc[n] / sqrt(D_l) ),   K_lc = E * Psi_lc,
//
// averaged over heads, then over layers, at the fused resolution. Queries are
// bicubically upsampled to the fused grid before the key product.
//
// Every head is evaluated as softmax_rows(Z * (E * G)^T) for a fused-resolution
// factor Z and a key projection G. For a general query grid Z = U * Q_lc and
// G = Psi_lc / sqrt(D_l). Built-in queries are cell features times Phi_lc, so
// Z = U * F_l is shared by all heads of a layer and G = Psi_lc Phi_lc^T /
// sqrt(D_l); both give the same logits.
//
// Maps are (H*W) x N matrices: column n is token n's heatmap over row-major
// pixel indices and row p is the token distribution at pixel p. Work is done
// in row tiles so the softmax runs in cache.

#pragma once

#include "atnk/bicubic.hpp"
#include "atnk/image.hpp"
#include "atnk/types.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace atnk {

struct LayerSpec {
  int id = 0;
  int height = 16;
  int width = 16;
  int key_width = 64;
};

struct BackendConfig {
  std::vector<LayerSpec> layers = {
      {7, 16, 16, 64}, {8, 16, 16, 64}, {9, 32, 32, 64}, {10, 32, 32, 64}};
  int heads = 4;
  int fused_height = 128;
  int fused_width = 128;
  int num_tokens = 100;
  int embedding_width = 32;
  // Only forwarded to an external denoiser.
  int timestep = 1;
  int horizon = 50;
  /// false: softmax at layer resolution, then upsample finished maps.
  bool upsample_queries = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (layers.empty()) throw config_error("backend needs at least one layer");
    if (heads < 1) throw config_error("heads must be positive");
    if (num_tokens < 1 || embedding_width < 1) {
      throw config_error("token count and embedding width must be positive");
    }
    for (const auto& l : layers) {
      if (l.height < 2 || l.width < 2 || l.key_width < 1) {
        throw config_error("layer " + std::to_string(l.id) +
                           " has an invalid shape");
      }
      if (l.height > fused_height || l.width > fused_width) {
        throw config_error("layer " + std::to_string(l.id) +
                           " is finer than the fused resolution");
      }
    }
  }

  int fused_pixels() const { return fused_height * fused_width; }
};

/// The optimized variable: N token embeddings of width D_e, one per row.
template <typename Scalar>
struct EmbeddingSet {
  MatrixX<Scalar> tokens;

  int count() const { return static_cast<int>(tokens.rows()); }
  int width() const { return static_cast<int>(tokens.cols()); }
  bool all_finite() const { return tokens.allFinite(); }

  static EmbeddingSet random(int count, int width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    EmbeddingSet e;
    e.tokens.resize(count, width);
    for (int r = 0; r < count; ++r) {
      for (int c = 0; c < width; ++c) {
        e.tokens(r, c) = static_cast<Scalar>(normal(rng));
      }
    }
    return e;
  }
};

/// Per-layer, per-head query matrices Q_lc of shape (h_l * w_l) x D_l.
template <typename Scalar>
struct QueryGrid {
  std::vector<std::vector<MatrixX<Scalar>>> queries;  // [layer][head]

  bool all_finite() const {
    for (const auto& layer : queries) {
      for (const auto& q : layer) {
        if (!q.allFinite()) return false;
      }
    }
    return true;
  }
};

template <typename Scalar>
struct AttentionStack {
  std::vector<MatrixX<Scalar>> layers;  // empty unless requested
  MatrixX<Scalar> fused;                // (H*W) x N
  int height = 0;
  int width = 0;

  int tokens() const { return static_cast<int>(fused.cols()); }
  int pixels() const { return static_cast<int>(fused.rows()); }
};

/// Cell-mean RGB plus normalized cell-centre (x, y): an (h*w) x 5 grid.
template <typename Scalar>
MatrixX<Scalar> cell_features(const RgbImage& image, int rows, int cols) {
  const int h = image.height();
  const int w = image.width();
  if (h < rows || w < cols) {
    throw data_error("image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " query grid");
  }
  MatrixX<Scalar> f(static_cast<Eigen::Index>(rows) * cols, 5);
  for (int i = 0; i < rows; ++i) {
    const int r0 = static_cast<int>(static_cast<long>(i) * h / rows);
    const int r1 = static_cast<int>(static_cast<long>(i + 1) * h / rows);
    for (int j = 0; j < cols; ++j) {
      const int c0 = static_cast<int>(static_cast<long>(j) * w / cols);
      const int c1 = static_cast<int>(static_cast<long>(j + 1) * w / cols);
      const Eigen::Index row = static_cast<Eigen::Index>(i) * cols + j;
      const double area = static_cast<double>(r1 - r0) * (c1 - c0);
      for (int ch = 0; ch < 3; ++ch) {
        const double sum = image.channels[ch]
                               .block(r0, c0, r1 - r0, c1 - c0)
                               .template cast<double>()
                               .sum();
        f(row, ch) = static_cast<Scalar>(sum / area);
      }
      f(row, 3) = static_cast<Scalar>((j + 0.5) / cols);
      f(row, 4) = static_cast<Scalar>((i + 0.5) / rows);
    }
  }
  return f;
}

namespace detail {

/// Shifts each row by its max, exponentiates in place and returns the
/// reciprocal row sums.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> exp_shifted(MatrixX<Scalar>& tile) {
  auto a = tile.array();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> m = a.col(0);
  for (Eigen::Index j = 1; j < a.cols(); ++j) m = m.max(a.col(j));
  Eigen::Array<Scalar, Eigen::Dynamic, 1> s =
      Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(a.rows());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    a.col(j) = (a.col(j) - m).exp();
    s += a.col(j);
  }
  return s.inverse();
}

}  // namespace detail

/// In-place softmax across tokens (columns) for every pixel (row).
template <typename Scalar>
void softmax_tokens_inplace(MatrixX<Scalar>& tile) {
  const auto inv = detail::exp_shifted(tile);
  auto a = tile.array();
  for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) *= inv;
}

/// Softmax over tokens of a (pixels x N) logit matrix.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_tokens(
    const Eigen::MatrixBase<Derived>& logits) {
  MatrixX<typename Derived::Scalar> p = logits;
  softmax_tokens_inplace(p);
  return p;
}

/// Backpropagates through softmax_tokens: p * (g - rowsum(p * g)).
template <typename Scalar>
void softmax_tokens_vjp_inplace(const MatrixX<Scalar>& p, MatrixX<Scalar>& grad) {
  auto pa = p.array();
  auto ga = grad.array();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> dot = pa.col(0) * ga.col(0);
  for (Eigen::Index j = 1; j < pa.cols(); ++j) dot += pa.col(j) * ga.col(j);
  for (Eigen::Index j = 0; j < pa.cols(); ++j) {
    ga.col(j) = pa.col(j) * (ga.col(j) - dot);
  }
}

namespace detail {

inline constexpr Eigen::Index kTileRows = 128;

/// One softmax term: weight * softmax_rows(z * keys^T).
/// Rows of an upsampled map projected back onto the simplex: negative
/// overshoot is clipped and each row renormalized.
template <typename Scalar>
MatrixX<Scalar> clamp_to_simplex(const MatrixX<Scalar>& u) {
  MatrixX<Scalar> p = u.cwiseMax(Scalar(0));
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename Scalar>
MatrixX<Scalar> clamp_to_simplex_vjp(const MatrixX<Scalar>& u, const MatrixX<Scalar>& g) {
  const MatrixX<Scalar> y = u.cwiseMax(Scalar(0));
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> s = y.rowwise().sum().array();
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> dot =
      (g.array() * y.array()).rowwise().sum() / s;
  MatrixX<Scalar> out = g;
  out.array().colwise() -= dot;
  out.array().colwise() /= s;
  return (u.array() > Scalar(0)).select(out, Scalar(0));
}

template <typename Scalar>
struct HeadTerm {
  const MatrixX<Scalar>* z = nullptr;  // pixels x r
  MatrixX<Scalar> keys;                // N x r
  Scalar weight = 1;
  std::string name;
};

template <typename Scalar>
void logits_tile(const MatrixX<Scalar>& z, Eigen::Index r0, Eigen::Index t,
                 const MatrixX<Scalar>& keys, MatrixX<Scalar>& tile) {
  if (z.cols() <= 8) {
    // Thin factors: a few axpys per token beat a general product.
    tile.resize(t, keys.rows());
    for (Eigen::Index j = 0; j < keys.rows(); ++j) {
      auto col = tile.col(j);
      col = keys(j, 0) * z.col(0).segment(r0, t);
      for (Eigen::Index k = 1; k < z.cols(); ++k) {
        col += keys(j, k) * z.col(k).segment(r0, t);
      }
    }
  } else {
    tile.noalias() = z.middleRows(r0, t) * keys.transpose();
  }
}

/// target += sum over terms of weight * softmax_rows(z * keys^T). Every
/// factor has target's row count.
template <typename Scalar>
void accumulate_heads(const std::vector<HeadTerm<Scalar>>& terms,
                      MatrixX<Scalar>& target) {
  const Eigen::Index rows = target.rows();
  MatrixX<Scalar> tile;
  MatrixX<Scalar> acc;
  for (Eigen::Index r0 = 0; r0 < rows; r0 += kTileRows) {
    const Eigen::Index t = std::min(kTileRows, rows - r0);
    acc = target.middleRows(r0, t);
    for (const auto& term : terms) {
      logits_tile(*term.z, r0, t, term.keys, tile);
      if (!tile.allFinite()) {
        throw numeric_error("non-finite attention logits at " + term.name);
      }
      const Eigen::Array<Scalar, Eigen::Dynamic, 1> scale =
          exp_shifted(tile) * term.weight;
      for (Eigen::Index j = 0; j < tile.cols(); ++j) {
        acc.col(j).array() += tile.col(j).array() * scale;
      }
    }
    target.middleRows(r0, t) = acc;
  }
}

/// Per term, the gradient with respect to its keys of
/// <sum of weight * softmax_rows(z * keys^T), cot>.
template <typename Scalar>
std::vector<MatrixX<Scalar>> heads_vjp(const std::vector<HeadTerm<Scalar>>& terms,
                                       const MatrixX<Scalar>& cot) {
  std::vector<MatrixX<Scalar>> d_keys;
  for (const auto& term : terms) {
    d_keys.push_back(MatrixX<Scalar>::Zero(term.keys.rows(), term.keys.cols()));
  }
  const Eigen::Index rows = cot.rows();
  MatrixX<Scalar> tile;
  MatrixX<Scalar> d_tile;
  for (Eigen::Index r0 = 0; r0 < rows; r0 += kTileRows) {
    const Eigen::Index t = std::min(kTileRows, rows - r0);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const auto& term = terms[i];
      logits_tile(*term.z, r0, t, term.keys, tile);
      softmax_tokens_inplace(tile);
      d_tile = term.weight * cot.middleRows(r0, t);
      softmax_tokens_vjp_inplace(tile, d_tile);
      d_keys[i].noalias() += d_tile.transpose() * term.z->middleRows(r0, t);
    }
  }
  return d_keys;
}

}  // namespace detail

/// Common surface of the built-in and out-of-process backends.
template <typename Scalar>
class AttentionBackend {
 public:
  /// Backend-specific per-image state (query grid, encoded payload, ...).
  struct Prepared {
    virtual ~Prepared() = default;
  };

  virtual ~AttentionBackend() = default;

  virtual const BackendConfig& config() const = 0;
  virtual std::unique_ptr<Prepared> prepare(const RgbImage& image) const = 0;
  virtual AttentionStack<Scalar> forward(const Prepared& image,
                                         const EmbeddingSet<Scalar>& e) const = 0;
  /// Gradient of <fused, cotangent> with respect to the embeddings.
  virtual MatrixX<Scalar> vjp(const Prepared& image,
                              const EmbeddingSet<Scalar>& e,
                              const MatrixX<Scalar>& cotangent) const = 0;
};

/// Fixed seeded random projections over cell features. Phi and Psi are drawn
/// once per layer and head and never change.
template <typename Scalar>
class BuiltinBackend final : public AttentionBackend<Scalar> {
 public:
  using Prepared = typename AttentionBackend<Scalar>::Prepared;

  struct PreparedQueries final : Prepared {
    /// Per layer, cell features at the working resolution (fused, or the
    /// layer's own when queries are not upsampled), pixels x 5.
    std::vector<MatrixX<Scalar>> features;
  };

  explicit BuiltinBackend(BackendConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](int rows, int cols, double scale) {
      MatrixX<Scalar> m(rows, cols);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          m(r, c) = static_cast<Scalar>(scale * normal(rng));
        }
      }
      return m;
    };
    const double psi_scale = 1.0 / std::sqrt(config_.embedding_width);
    for (const auto& layer : config_.layers) {
      const Scalar inv_sqrt_d =
          Scalar(1) / std::sqrt(static_cast<Scalar>(layer.key_width));
      auto& phi = phi_.emplace_back();
      auto& psi = psi_.emplace_back();
      auto& key_proj = key_proj_.emplace_back();
      auto& feature_proj = feature_proj_.emplace_back();
      for (int c = 0; c < config_.heads; ++c) {
        phi.push_back(draw(5, layer.key_width, 1.0));
        psi.push_back(draw(config_.embedding_width, layer.key_width, psi_scale));
        key_proj.push_back(psi.back() * inv_sqrt_d);
        feature_proj.push_back(key_proj.back() * phi.back().transpose());
      }
      upsamplers_.emplace_back(layer.height, layer.width, config_.fused_height,
                               config_.fused_width);
    }
  }

  const BackendConfig& config() const override { return config_; }

  const MatrixX<Scalar>& phi(std::size_t layer, int head) const {
    return phi_.at(layer).at(head);
  }
  const MatrixX<Scalar>& psi(std::size_t layer, int head) const {
    return psi_.at(layer).at(head);
  }

  QueryGrid<Scalar> build_query_grid(const RgbImage& image) const {
    QueryGrid<Scalar> grid;
    const auto features = layer_features(image);
    for (std::size_t l = 0; l < config_.layers.size(); ++l) {
      auto& heads = grid.queries.emplace_back();
      for (const auto& phi : phi_[l]) heads.push_back(features[l] * phi);
    }
    return grid;
  }

  std::unique_ptr<Prepared> prepare(const RgbImage& image) const override {
    auto p = std::make_unique<PreparedQueries>();
    p->features = layer_features(image);
    if (config_.upsample_queries) {
      for (std::size_t l = 0; l < config_.layers.size(); ++l) {
        p->features[l] = upsamplers_[l].apply(p->features[l]);
      }
    }
    return p;
  }

  AttentionStack<Scalar> forward(const Prepared& image,
                                 const EmbeddingSet<Scalar>& e) const override {
    check_embeddings(e);
    const auto& features = features_of(image);
    return forward_impl(
        e, [&](std::size_t l, int) -> const MatrixX<Scalar>& { return features[l]; },
        feature_proj_, false);
  }

  MatrixX<Scalar> vjp(const Prepared& image, const EmbeddingSet<Scalar>& e,
                      const MatrixX<Scalar>& cotangent) const override {
    check_embeddings(e);
    check_cotangent(e, cotangent);
    const auto& features = features_of(image);
    return vjp_impl(
        e, cotangent,
        [&](std::size_t l, int) -> const MatrixX<Scalar>& { return features[l]; },
        feature_proj_);
  }

  /// Forward pass from an explicit query grid; keep_layers also returns the
  /// per-layer maps at the fused resolution.
  AttentionStack<Scalar> attention_forward(const QueryGrid<Scalar>& grid,
                                           const EmbeddingSet<Scalar>& e,
                                           bool keep_layers = false) const {
    check_embeddings(e);
    const auto z = query_factors(grid);
    return forward_impl(
        e, [&](std::size_t l, int c) -> const MatrixX<Scalar>& { return z[l][c]; },
        key_proj_, keep_layers);
  }

  MatrixX<Scalar> attention_vjp(const QueryGrid<Scalar>& grid,
                                const EmbeddingSet<Scalar>& e,
                                const MatrixX<Scalar>& cotangent) const {
    check_embeddings(e);
    check_cotangent(e, cotangent);
    const auto z = query_factors(grid);
    return vjp_impl(
        e, cotangent,
        [&](std::size_t l, int c) -> const MatrixX<Scalar>& { return z[l][c]; },
        key_proj_);
  }

 private:
  using Projections = std::vector<std::vector<MatrixX<Scalar>>>;

  std::vector<MatrixX<Scalar>> layer_features(const RgbImage& image) const {
    if (image.height() < 16 || image.width() < 16) {
      throw data_error("image " + std::to_string(image.height()) + "x" +
                       std::to_string(image.width()) +
                       " is smaller than the minimum 16x16");
    }
    std::vector<MatrixX<Scalar>> out;
    for (const auto& spec : config_.layers) {
      out.push_back(cell_features<Scalar>(image, spec.height, spec.width));
    }
    return out;
  }

  const std::vector<MatrixX<Scalar>>& features_of(const Prepared& image) const {
    const auto* p = dynamic_cast<const PreparedQueries*>(&image);
    if (p == nullptr) throw config_error("image was prepared by another backend");
    if (p->features.size() != config_.layers.size()) {
      throw config_error("prepared image does not match the backend layers");
    }
    return p->features;
  }

  void check_embeddings(const EmbeddingSet<Scalar>& e) const {
    if (e.width() != config_.embedding_width) {
      throw config_error("embedding width " + std::to_string(e.width()) +
                         " does not match key projection input width " +
                         std::to_string(config_.embedding_width));
    }
    if (e.count() < 1) throw config_error("no token embeddings");
  }

  void check_cotangent(const EmbeddingSet<Scalar>& e,
                       const MatrixX<Scalar>& cotangent) const {
    if (cotangent.rows() != config_.fused_pixels() ||
        cotangent.cols() != e.count()) {
      throw config_error("cotangent shape " + std::to_string(cotangent.rows()) +
                         "x" + std::to_string(cotangent.cols()) +
                         " does not match the fused map " +
                         std::to_string(config_.fused_pixels()) + "x" +
                         std::to_string(e.count()));
    }
    if (!cotangent.allFinite()) throw numeric_error("non-finite cotangent");
  }

  /// Per layer and head, the query factor at the working resolution.
  std::vector<std::vector<MatrixX<Scalar>>> query_factors(
      const QueryGrid<Scalar>& grid) const {
    if (grid.queries.size() != config_.layers.size()) {
      throw config_error("query grid layer count does not match the backend");
    }
    std::vector<std::vector<MatrixX<Scalar>>> z(config_.layers.size());
    for (std::size_t l = 0; l < config_.layers.size(); ++l) {
      const auto& spec = config_.layers[l];
      if (grid.queries[l].size() != static_cast<std::size_t>(config_.heads)) {
        throw config_error("query grid head count does not match the backend");
      }
      for (const auto& q : grid.queries[l]) {
        if (q.rows() != spec.height * spec.width || q.cols() != spec.key_width) {
          throw config_error("query grid shape mismatch at layer " +
                             std::to_string(spec.id));
        }
        if (!q.allFinite()) {
          throw numeric_error("non-finite queries at layer " + std::to_string(spec.id));
        }
        z[l].push_back(config_.upsample_queries ? upsamplers_[l].apply(q) : q);
      }
    }
    return z;
  }

  template <typename FactorFn>
  std::vector<detail::HeadTerm<Scalar>> layer_terms(
      const EmbeddingSet<Scalar>& e, FactorFn& factor, const Projections& proj,
      std::size_t l, Scalar weight) const {
    std::vector<detail::HeadTerm<Scalar>> terms;
    for (int c = 0; c < config_.heads; ++c) {
      terms.push_back({&factor(l, c), e.tokens * proj[l][c], weight,
                       "layer " + std::to_string(config_.layers[l].id) +
                           " head " + std::to_string(c)});
    }
    return terms;
  }

  template <typename FactorFn>
  AttentionStack<Scalar> forward_impl(const EmbeddingSet<Scalar>& e,
                                      FactorFn&& factor, const Projections& proj,
                                      bool keep_layers) const {
    AttentionStack<Scalar> out;
    out.height = config_.fused_height;
    out.width = config_.fused_width;
    out.fused = MatrixX<Scalar>::Zero(config_.fused_pixels(), e.count());
    const std::size_t layers = config_.layers.size();
    const Scalar layer_weight = Scalar(1) / static_cast<Scalar>(layers);
    const Scalar head_weight = Scalar(1) / static_cast<Scalar>(config_.heads);
    if (config_.upsample_queries && !keep_layers) {
      std::vector<detail::HeadTerm<Scalar>> terms;
      for (std::size_t l = 0; l < layers; ++l) {
        for (auto& t : layer_terms(e, factor, proj, l, head_weight * layer_weight)) {
          terms.push_back(std::move(t));
        }
      }
      detail::accumulate_heads(terms, out.fused);
      return out;
    }
    for (std::size_t l = 0; l < layers; ++l) {
      MatrixX<Scalar> layer_map =
          MatrixX<Scalar>::Zero(factor(l, 0).rows(), e.count());
      detail::accumulate_heads(layer_terms(e, factor, proj, l, head_weight),
                               layer_map);
      if (!config_.upsample_queries) {
        layer_map = detail::clamp_to_simplex(upsamplers_[l].apply(layer_map));
      }
      out.fused += layer_weight * layer_map;
      if (keep_layers) out.layers.push_back(std::move(layer_map));
    }
    return out;
  }

  template <typename FactorFn>
  MatrixX<Scalar> vjp_impl(const EmbeddingSet<Scalar>& e,
                           const MatrixX<Scalar>& cotangent, FactorFn&& factor,
                           const Projections& proj) const {
    MatrixX<Scalar> grad = MatrixX<Scalar>::Zero(e.count(), e.width());
    const std::size_t layers = config_.layers.size();
    const Scalar w = Scalar(1) / static_cast<Scalar>(layers * config_.heads);
    auto accumulate = [&](const std::vector<detail::HeadTerm<Scalar>>& terms,
                          const MatrixX<Scalar>& cot, std::size_t first_layer) {
      const auto d_keys = detail::heads_vjp(terms, cot);
      for (std::size_t i = 0; i < terms.size(); ++i) {
        const std::size_t l = first_layer + i / config_.heads;
        const int c = static_cast<int>(i % config_.heads);
        grad.noalias() += d_keys[i] * proj[l][c].transpose();
      }
    };
    if (config_.upsample_queries) {
      std::vector<detail::HeadTerm<Scalar>> terms;
      for (std::size_t l = 0; l < layers; ++l) {
        for (auto& t : layer_terms(e, factor, proj, l, w)) terms.push_back(std::move(t));
      }
      accumulate(terms, cotangent, 0);
      return grad;
    }
    const Scalar head_weight = Scalar(1) / static_cast<Scalar>(config_.heads);
    for (std::size_t l = 0; l < layers; ++l) {
      // Ablation path: back through the simplex clamp and the upsampler to
      // the finished low-resolution map.
      MatrixX<Scalar> layer_map = MatrixX<Scalar>::Zero(factor(l, 0).rows(), e.count());
      detail::accumulate_heads(layer_terms(e, factor, proj, l, head_weight), layer_map);
      const MatrixX<Scalar> cot =
          detail::clamp_to_simplex_vjp(upsamplers_[l].apply(layer_map), cotangent);
      accumulate(layer_terms(e, factor, proj, l, w), upsamplers_[l].adjoint(cot), l);
    }
    return grad;
  }

  BackendConfig config_;
  Projections phi_;           // [layer][head] 5 x D_l
  Projections psi_;           // [layer][head] D_e x D_l
  Projections key_proj_;      // Psi / sqrt(D_l)
  Projections feature_proj_;  // Psi Phi^T / sqrt(D_l), D_e x 5
  std::vector<BicubicUpsampler<Scalar>> upsamplers_;
};

}  // namespace atnk
