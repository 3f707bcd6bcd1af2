// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/sidecar.hpp"

#include <json.hpp>

#include <cerrno>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

namespace atnk {

using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::uint64_t n) const {
    if (n > bytes.size() - pos) throw data_error("malformed frame: truncated payload");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::uint64_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes[pos + i]} << (8 * i);
    pos += static_cast<std::size_t>(width);
    return v;
  }
  std::vector<std::uint8_t> take(std::uint64_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += static_cast<std::size_t>(n);
    return out;
  }
};

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw data_error(std::string("sidecar write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns the number of bytes read before end of stream.
std::size_t read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::read(fd, data + got, n - got);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw data_error(std::string("sidecar read failed: ") + std::strerror(errno));
    }
    if (r == 0) break;
    got += static_cast<std::size_t>(r);
  }
  return got;
}

}  // namespace

std::vector<std::uint8_t> encode_message(const WireMessage& m) {
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(m.header.size()));
  out.insert(out.end(), m.header.begin(), m.header.end());
  put_u32(out, static_cast<std::uint32_t>(m.blobs.size()));
  for (const auto& b : m.blobs) {
    put_u64(out, b.size());
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

WireMessage decode_message(const std::vector<std::uint8_t>& payload) {
  Reader in{payload};
  WireMessage m;
  const auto header = in.take(in.uint(4));
  m.header.assign(header.begin(), header.end());
  const std::uint64_t count = in.uint(4);
  for (std::uint64_t i = 0; i < count; ++i) m.blobs.push_back(in.take(in.uint(8)));
  if (in.pos != payload.size()) throw data_error("malformed frame: trailing bytes");
  return m;
}

void write_frame(int fd, const WireMessage& m) {
  const auto payload = encode_message(m);
  std::vector<std::uint8_t> prefix;
  put_u64(prefix, payload.size());
  write_all(fd, prefix.data(), prefix.size());
  write_all(fd, payload.data(), payload.size());
}

bool read_frame(int fd, WireMessage& m) {
  std::uint8_t prefix[8];
  const std::size_t got = read_all(fd, prefix, 8);
  if (got == 0) return false;
  if (got < 8) throw data_error("malformed frame: truncated length prefix");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t{prefix[i]} << (8 * i);
  if (len > kMaxFrameBytes) {
    throw data_error("malformed frame: length " + std::to_string(len) + " exceeds limit");
  }
  std::vector<std::uint8_t> payload(static_cast<std::size_t>(len));
  if (read_all(fd, payload.data(), payload.size()) != payload.size()) {
    throw data_error("malformed frame: stream ended inside a frame");
  }
  m = decode_message(payload);
  return true;
}

Channel::Channel(int read_fd, int write_fd, int child_pid)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid) {}

Channel::~Channel() {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

std::unique_ptr<Channel> Channel::spawn(const std::string& command) {
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw data_error("cannot create sidecar pipe");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw data_error("cannot create sidecar pipe");
  }
  // A dead sidecar must surface as a write error, not kill the engine.
  std::signal(SIGPIPE, SIG_IGN);
  const pid_t pid = ::fork();
  if (pid < 0) throw data_error("cannot fork sidecar process");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<Channel>(from_child[0], to_child[1], pid);
}

std::unique_ptr<Channel> Channel::connect_unix(const std::string& path) {
  sockaddr_un addr{};
  if (path.size() >= sizeof(addr.sun_path)) {
    throw config_error("sidecar socket path too long: " + path);
  }
  addr.sun_family = AF_UNIX;
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) throw data_error("cannot create socket");
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw data_error("cannot connect to sidecar at " + path + ": " + why);
  }
  std::signal(SIGPIPE, SIG_IGN);
  return std::make_unique<Channel>(fd, fd);
}

WireMessage Channel::call(const WireMessage& request) {
  write_frame(write_fd_, request);
  WireMessage response;
  if (!read_frame(read_fd_, response)) throw data_error("sidecar closed the connection");
  return response;
}

WireMessage handshake_request(const BackendConfig& cfg, const SidecarOptions& opts) {
  json j = json::parse(sidecar_request_header("handshake", cfg));
  j["model"] = opts.model;
  j["device"] = opts.device;
  j["tokens"] = cfg.num_tokens;
  j["embedding_width"] = cfg.embedding_width;
  j["fused"] = {cfg.fused_height, cfg.fused_width};
  return {j.dump(), {}};
}

std::string sidecar_request_header(const std::string& op, const BackendConfig& cfg) {
  json j;
  j["op"] = op;
  j["version"] = 1;
  json ids = json::array();
  for (const auto& l : cfg.layers) ids.push_back(l.id);
  j["layers"] = ids;
  j["timestep"] = cfg.timestep;
  j["horizon"] = cfg.horizon;
  return j.dump();
}

void check_response(const WireMessage& response, const std::string& op) {
  json j;
  try {
    j = json::parse(response.header);
  } catch (const json::exception& ex) {
    throw data_error("malformed sidecar " + op + " response: " + ex.what());
  }
  if (j.value("ok", false)) return;
  std::string kind = "data";
  std::string message = "no error record";
  if (j.contains("error") && j["error"].is_object()) {
    kind = j["error"].value("kind", kind);
    message = j["error"].value("message", message);
  }
  const std::string what = "sidecar " + op + " failed (" + kind + "): " + message;
  if (kind == "config") throw config_error(what);
  if (kind == "numeric") throw numeric_error(what);
  throw data_error(what);
}

Handshake parse_handshake(const WireMessage& response) {
  check_response(response, "handshake");
  Handshake h;
  try {
    const json j = json::parse(response.header);
    for (const auto& l : j.at("layers")) {
      h.layers.push_back({l.at("id").get<int>(), l.at("height").get<int>(),
                          l.at("width").get<int>()});
    }
    h.max_tokens = j.at("max_tokens").get<int>();
    h.embedding_width = j.at("embedding_width").get<int>();
    h.resolution = j.value("resolution", std::string("layer"));
  } catch (const json::exception& ex) {
    throw data_error(std::string("malformed sidecar handshake: ") + ex.what());
  }
  return h;
}

}  // namespace atnk
