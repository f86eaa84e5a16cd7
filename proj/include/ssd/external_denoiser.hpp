// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <mutex>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "ssd/denoiser.hpp"
#include "ssd/protocol.hpp"

namespace ssd {

/// Denoiser served by a child process over its stdin/stdout with the SSDX protocol.
///
/// One request is in flight at a time; concurrent callers are serialized.
class ExternalDenoiserClient final : public Denoiser {
 public:
  ExternalDenoiserClient(std::vector<std::string> argv, int timeout_ms = 30000) : timeout_ms_(timeout_ms) {
    if (argv.empty()) throw ConfigError("external denoiser command is empty");
    std::signal(SIGPIPE, SIG_IGN);

    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw DenoiserError(std::string("pipe: ") + std::strerror(errno));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw DenoiserError(std::string("pipe: ") + std::strerror(errno));
    }

    std::vector<char*> cargv;
    for (auto& a : argv) cargv.push_back(a.data());
    cargv.push_back(nullptr);

    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw DenoiserError(std::string("fork: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      ::execvp(cargv[0], cargv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
  }

  ExternalDenoiserClient(const ExternalDenoiserClient&) = delete;
  ExternalDenoiserClient& operator=(const ExternalDenoiserClient&) = delete;

  ~ExternalDenoiserClient() override { shutdown(); }

  Tensor predict_eps(const Tensor& x_t, int t) const override {
    std::lock_guard lock(mutex_);
    if (pid_ <= 0) throw DenoiserError("external denoiser is not running");

    protocol::TensorMessage request;
    request.type = protocol::MessageType::EpsRequest;
    request.timestep = static_cast<std::uint32_t>(t);
    for (auto d : x_t.shape()) request.dims.push_back(static_cast<std::uint32_t>(d));
    request.payload.reserve(x_t.size());
    for (double v : x_t.values()) request.payload.push_back(static_cast<float>(v));
    write_all(protocol::encode(request));

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms_);
    protocol::Frame frame =
        protocol::read_frame([&](std::uint8_t* dst, std::size_t n) { return read_exact(dst, n, deadline); });

    if (const auto* err = std::get_if<protocol::ErrorMessage>(&frame)) {
      throw protocol::ProtocolError(protocol::ErrorKind::ServerError, err->message);
    }
    const auto* response = std::get_if<protocol::TensorMessage>(&frame);
    if (response == nullptr || response->type != protocol::MessageType::EpsResponse) {
      throw protocol::ProtocolError(protocol::ErrorKind::BadMessageType, "expected an eps response");
    }
    if (response->timestep != request.timestep) {
      throw protocol::ProtocolError(protocol::ErrorKind::BadShape,
                                    "timestep not echoed: sent " + std::to_string(request.timestep) + ", got " +
                                        std::to_string(response->timestep));
    }
    if (response->dims != request.dims) throw protocol::ProtocolError(protocol::ErrorKind::BadShape, "dims not echoed");

    Tensor eps(x_t.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<double>(response->payload[i]);
    return eps;
  }

  /// Sends the shutdown frame and reaps the child. Safe to call twice.
  void shutdown() noexcept {
    std::lock_guard lock(mutex_);
    if (pid_ <= 0) return;
    try {
      write_all(protocol::encode(protocol::ShutdownMessage{}));
    } catch (...) {
    }
    ::close(write_fd_);
    ::close(read_fd_);
    int status = 0;
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) != 0) {
        pid_ = -1;
        return;
      }
      ::usleep(10000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }

 private:
  void write_all(const std::vector<std::uint8_t>& bytes) const {
    std::size_t done = 0;
    while (done < bytes.size()) {
      pollfd pfd{write_fd_, POLLOUT, 0};
      const int ready = ::poll(&pfd, 1, timeout_ms_);
      if (ready == 0) throw protocol::ProtocolError(protocol::ErrorKind::Timeout, "server not accepting input");
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw protocol::ProtocolError(protocol::ErrorKind::Io, std::strerror(errno));
      }
      const ssize_t n = ::write(write_fd_, bytes.data() + done, bytes.size() - done);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw protocol::ProtocolError(protocol::ErrorKind::Io, std::string("write: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  bool read_exact(std::uint8_t* dst, std::size_t count, std::chrono::steady_clock::time_point deadline) const {
    std::size_t done = 0;
    while (done < count) {
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0) throw protocol::ProtocolError(protocol::ErrorKind::Timeout, "no response within the timeout");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left));
      if (ready == 0) continue;
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw protocol::ProtocolError(protocol::ErrorKind::Io, std::strerror(errno));
      }
      const ssize_t n = ::read(read_fd_, dst + done, count - done);
      if (n == 0) return false;
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw protocol::ProtocolError(protocol::ErrorKind::Io, std::string("read: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
    return true;
  }

  int timeout_ms_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  mutable std::mutex mutex_;
};

}  // namespace ssd
