// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Client side of the out-of-process attention backend.
//
// Every message is one frame:
//
//   length:u64 | header_len:u32 | header (JSON) | blob_count:u32 |
//   { blob_len:u64 | blob }*
//
// with `length` counting everything after itself, all integers
// little-endian. Blobs carry PNG images and ATNK tensors. Requests name an
// `op` (handshake, forward, vjp); responses carry `ok` and, on failure, an
// `error` object with `kind` and `message`.

#pragma once

#include "atnk/attention.hpp"
#include "atnk/bicubic.hpp"
#include "atnk/image.hpp"
#include "atnk/tensor_io.hpp"
#include "atnk/types.hpp"

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace atnk {

inline constexpr std::uint64_t kMaxFrameBytes = std::uint64_t{1} << 31;

struct WireMessage {
  std::string header;  // JSON text
  std::vector<std::vector<std::uint8_t>> blobs;
};

/// Frame payload (everything after the length prefix).
std::vector<std::uint8_t> encode_message(const WireMessage& m);
WireMessage decode_message(const std::vector<std::uint8_t>& payload);

/// Blocking frame I/O on a file descriptor. read_frame returns false on a
/// clean end of stream before any byte of a new frame.
void write_frame(int fd, const WireMessage& m);
bool read_frame(int fd, WireMessage& m);

/// A bidirectional byte stream: a connected socket, or a child's stdio pipes.
class Channel {
 public:
  Channel(int read_fd, int write_fd, int child_pid = -1);
  ~Channel();
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  /// Spawns `command` through /bin/sh and talks over its stdin/stdout.
  static std::unique_ptr<Channel> spawn(const std::string& command);
  static std::unique_ptr<Channel> connect_unix(const std::string& path);

  WireMessage call(const WireMessage& request);

 private:
  int read_fd_;
  int write_fd_;
  int child_pid_;
};

struct SidecarLayer {
  int id = 0;
  int height = 0;
  int width = 0;
};

struct Handshake {
  std::vector<SidecarLayer> layers;
  int max_tokens = 0;
  int embedding_width = 0;
  /// "layer": one head-averaged map per layer at its own resolution.
  /// "fused": the fused map at the configured fused resolution.
  std::string resolution = "layer";
};

struct SidecarOptions {
  std::string model;
  std::string device = "cpu";
};

/// Request builders and response parsing shared by the backend and tests.
WireMessage handshake_request(const BackendConfig& cfg, const SidecarOptions& opts);
Handshake parse_handshake(const WireMessage& response);
/// Throws the structured error carried by a failed response.
void check_response(const WireMessage& response, const std::string& op);

template <typename Scalar>
class SidecarBackend final : public AttentionBackend<Scalar> {
 public:
  using Prepared = typename AttentionBackend<Scalar>::Prepared;

  struct EncodedImage final : Prepared {
    std::vector<std::uint8_t> png;
  };

  SidecarBackend(BackendConfig config, std::unique_ptr<Channel> channel,
                 SidecarOptions opts = {})
      : config_(std::move(config)), channel_(std::move(channel)), opts_(std::move(opts)) {
    config_.validate();
    if (!channel_) throw config_error("sidecar backend needs a channel");
    handshake_ = parse_handshake(channel_->call(handshake_request(config_, opts_)));
    if (handshake_.resolution != "layer" && handshake_.resolution != "fused") {
      throw data_error("sidecar declared unknown map resolution '" +
                       handshake_.resolution + "'");
    }
    if (handshake_.layers.size() != config_.layers.size()) {
      throw config_error("sidecar serves " + std::to_string(handshake_.layers.size()) +
                         " layers, config asks for " +
                         std::to_string(config_.layers.size()));
    }
    for (std::size_t l = 0; l < config_.layers.size(); ++l) {
      const auto& want = config_.layers[l];
      const auto& got = handshake_.layers[l];
      if (want.id != got.id || want.height != got.height || want.width != got.width) {
        throw config_error("sidecar layer " + std::to_string(got.id) + " is " +
                           std::to_string(got.height) + "x" + std::to_string(got.width) +
                           ", config expects layer " + std::to_string(want.id) + " at " +
                           std::to_string(want.height) + "x" + std::to_string(want.width));
      }
      upsamplers_.emplace_back(want.height, want.width, config_.fused_height,
                               config_.fused_width);
    }
    if (config_.num_tokens > handshake_.max_tokens) {
      throw config_error("sidecar accepts at most " + std::to_string(handshake_.max_tokens) +
                         " tokens");
    }
    if (config_.embedding_width != handshake_.embedding_width) {
      throw config_error("sidecar embedding width " +
                         std::to_string(handshake_.embedding_width) +
                         " does not match " + std::to_string(config_.embedding_width));
    }
  }

  const BackendConfig& config() const override { return config_; }
  const Handshake& handshake() const { return handshake_; }

  std::unique_ptr<Prepared> prepare(const RgbImage& image) const override {
    auto p = std::make_unique<EncodedImage>();
    p->png = encode_png(image);
    return p;
  }

  AttentionStack<Scalar> forward(const Prepared& image,
                                 const EmbeddingSet<Scalar>& e) const override {
    WireMessage req = request("forward", image, e);
    const WireMessage resp = call(req, "forward");
    const auto maps = response_maps(resp, e.count());
    AttentionStack<Scalar> out;
    out.height = config_.fused_height;
    out.width = config_.fused_width;
    if (handshake_.resolution == "fused") {
      out.fused = maps[0];
      return out;
    }
    out.fused = MatrixX<Scalar>::Zero(config_.fused_pixels(), e.count());
    const Scalar w = Scalar(1) / static_cast<Scalar>(maps.size());
    for (std::size_t l = 0; l < maps.size(); ++l) {
      out.fused += w * upsamplers_[l].apply(maps[l]);
    }
    return out;
  }

  MatrixX<Scalar> vjp(const Prepared& image, const EmbeddingSet<Scalar>& e,
                      const MatrixX<Scalar>& cotangent) const override {
    if (cotangent.rows() != config_.fused_pixels() || cotangent.cols() != e.count()) {
      throw config_error("cotangent does not match the fused map shape");
    }
    if (!cotangent.allFinite()) throw numeric_error("non-finite cotangent");
    WireMessage req = request("vjp", image, e);
    if (handshake_.resolution == "fused") {
      req.blobs.push_back(encode_tensor(to_tensor(cotangent)));
    } else {
      const Scalar w = Scalar(1) / static_cast<Scalar>(upsamplers_.size());
      for (const auto& up : upsamplers_) {
        req.blobs.push_back(encode_tensor(to_tensor((w * up.adjoint(cotangent)).eval())));
      }
    }
    const WireMessage resp = call(req, "vjp");
    if (resp.blobs.size() != 1) throw data_error("sidecar vjp must return one tensor");
    MatrixX<Scalar> grad = to_matrix<Scalar>(decode_tensor(resp.blobs[0]));
    if (grad.rows() != e.count() || grad.cols() != e.width()) {
      throw data_error("sidecar gradient shape does not match the embeddings");
    }
    if (!grad.allFinite()) throw numeric_error("sidecar returned a non-finite gradient");
    return grad;
  }

 private:
  const EncodedImage& encoded(const Prepared& image) const {
    const auto* p = dynamic_cast<const EncodedImage*>(&image);
    if (p == nullptr) throw config_error("image was prepared by another backend");
    return *p;
  }

  WireMessage request(const std::string& op, const Prepared& image,
                      const EmbeddingSet<Scalar>& e) const {
    if (e.width() != config_.embedding_width || e.count() > handshake_.max_tokens) {
      throw config_error("embeddings do not fit the sidecar handshake");
    }
    WireMessage m;
    m.header = request_header(op);
    m.blobs.push_back(encoded(image).png);
    m.blobs.push_back(encode_tensor(to_tensor(e.tokens)));
    return m;
  }

  std::string request_header(const std::string& op) const;

  WireMessage call(const WireMessage& req, const std::string& op) const {
    std::lock_guard<std::mutex> lock(mutex_);
    WireMessage resp = channel_->call(req);
    check_response(resp, op);
    return resp;
  }

  std::vector<MatrixX<Scalar>> response_maps(const WireMessage& resp, int tokens) const {
    const bool fused = handshake_.resolution == "fused";
    const std::size_t expect = fused ? 1 : config_.layers.size();
    if (resp.blobs.size() != expect) {
      throw data_error("sidecar forward returned " + std::to_string(resp.blobs.size()) +
                       " tensors, expected " + std::to_string(expect));
    }
    std::vector<MatrixX<Scalar>> maps;
    for (std::size_t i = 0; i < expect; ++i) {
      MatrixX<Scalar> m = to_matrix<Scalar>(decode_tensor(resp.blobs[i]));
      const int pixels = fused ? config_.fused_pixels()
                               : config_.layers[i].height * config_.layers[i].width;
      if (m.rows() != pixels || m.cols() != tokens) {
        throw data_error("sidecar map " + std::to_string(i) + " has shape " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                         ", expected " + std::to_string(pixels) + "x" +
                         std::to_string(tokens));
      }
      if (!m.allFinite()) throw numeric_error("sidecar returned non-finite maps");
      maps.push_back(std::move(m));
    }
    return maps;
  }

  BackendConfig config_;
  std::unique_ptr<Channel> channel_;
  SidecarOptions opts_;
  Handshake handshake_;
  std::vector<BicubicUpsampler<Scalar>> upsamplers_;
  mutable std::mutex mutex_;  // one request in flight per connection
};

std::string sidecar_request_header(const std::string& op, const BackendConfig& cfg);

template <typename Scalar>
std::string SidecarBackend<Scalar>::request_header(const std::string& op) const {
  return sidecar_request_header(op, config_);
}

}  // namespace atnk
