// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ssd/errors.hpp"

/// "SSDX" framing for talking to an out-of-process denoiser.
///
/// Every frame starts with the 4 magic bytes, a u16 version and a u8 message
/// type. Integers and floats are little-endian.
///
///   eps request  (1): u32 timestep, u8 ndim, ndim x u32 dims, f32 payload
///   eps response (2): same layout, timestep and dims echoed
///   shutdown     (3): no body
///   error        (4): u32 length, UTF-8 message
namespace ssd::protocol {

inline constexpr std::array<std::uint8_t, 4> kMagic{'S', 'S', 'D', 'X'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kMaxElements = std::size_t{1} << 28;
inline constexpr std::uint32_t kMaxMessageBytes = 1u << 20;

enum class MessageType : std::uint8_t { EpsRequest = 1, EpsResponse = 2, Shutdown = 3, Error = 4 };

enum class ErrorKind {
  BadMagic,
  BadVersion,
  BadMessageType,
  BadShape,
  Truncated,
  TrailingBytes,
  ServerError,
  Timeout,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::BadVersion: return "bad version";
    case ErrorKind::BadMessageType: return "bad message type";
    case ErrorKind::BadShape: return "bad shape";
    case ErrorKind::Truncated: return "truncated frame";
    case ErrorKind::TrailingBytes: return "trailing bytes";
    case ErrorKind::ServerError: return "server error";
    case ErrorKind::Timeout: return "timeout";
    case ErrorKind::Io: return "i/o failure";
  }
  return "unknown";
}

class ProtocolError : public DenoiserError {
 public:
  ProtocolError(ErrorKind kind, const std::string& detail)
      : DenoiserError(std::string("protocol violation (") + to_string(kind) + "): " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Eps request or response.
struct TensorMessage {
  MessageType type = MessageType::EpsRequest;
  std::uint32_t timestep = 0;
  std::vector<std::uint32_t> dims;
  std::vector<float> payload;

  bool operator==(const TensorMessage&) const = default;
};

struct ErrorMessage {
  std::string message;
  bool operator==(const ErrorMessage&) const = default;
};

struct ShutdownMessage {
  bool operator==(const ShutdownMessage&) const = default;
};

using Frame = std::variant<TensorMessage, ErrorMessage, ShutdownMessage>;

inline std::string hex_bytes(std::span<const std::uint8_t> bytes) {
  std::string out;
  char buf[4];
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%02x", bytes[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::size_t element_count(std::span<const std::uint32_t> dims) {
  if (dims.empty()) throw ProtocolError(ErrorKind::BadShape, "ndim is 0");
  std::size_t n = 1;
  for (auto d : dims) {
    if (d == 0) throw ProtocolError(ErrorKind::BadShape, "zero-length dimension");
    if (n > kMaxElements / d) throw ProtocolError(ErrorKind::BadShape, "payload exceeds the element limit");
    n *= d;
  }
  return n;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Frame& frame) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  detail::put_u16(out, kVersion);
  if (const auto* t = std::get_if<TensorMessage>(&frame)) {
    if (t->type != MessageType::EpsRequest && t->type != MessageType::EpsResponse) {
      throw ProtocolError(ErrorKind::BadMessageType, "tensor frames must be eps requests or responses");
    }
    if (t->dims.size() > 255) throw ProtocolError(ErrorKind::BadShape, "more than 255 dimensions");
    if (detail::element_count(t->dims) != t->payload.size()) {
      throw ProtocolError(ErrorKind::BadShape, "payload length does not match dims");
    }
    out.push_back(static_cast<std::uint8_t>(t->type));
    detail::put_u32(out, t->timestep);
    out.push_back(static_cast<std::uint8_t>(t->dims.size()));
    for (auto d : t->dims) detail::put_u32(out, d);
    out.reserve(out.size() + 4 * t->payload.size());
    for (float v : t->payload) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  } else if (const auto* e = std::get_if<ErrorMessage>(&frame)) {
    out.push_back(static_cast<std::uint8_t>(MessageType::Error));
    detail::put_u32(out, static_cast<std::uint32_t>(e->message.size()));
    out.insert(out.end(), e->message.begin(), e->message.end());
  } else {
    out.push_back(static_cast<std::uint8_t>(MessageType::Shutdown));
  }
  return out;
}

/// Reads one frame through `read_exact(std::uint8_t* dst, std::size_t n) -> bool`,
/// which must fill all n bytes or return false.
template <class ReadExact>
Frame read_frame(ReadExact&& read_exact) {
  auto need = [&](std::uint8_t* dst, std::size_t n, const char* what) {
    if (!read_exact(dst, n)) throw ProtocolError(ErrorKind::Truncated, std::string("stream ended inside ") + what);
  };

  std::array<std::uint8_t, 6> head{};
  need(head.data(), head.size(), "the frame header");
  if (!std::equal(kMagic.begin(), kMagic.end(), head.begin())) {
    throw ProtocolError(ErrorKind::BadMagic, "expected 53 53 44 58 (\"SSDX\"), got " +
                                                 hex_bytes(std::span<const std::uint8_t>(head.data(), 4)));
  }
  const std::uint16_t version = detail::get_u16(head.data() + 4);
  if (version != kVersion) {
    throw ProtocolError(ErrorKind::BadVersion, "expected version 1, got " + std::to_string(version));
  }

  std::uint8_t type_byte = 0;
  need(&type_byte, 1, "the frame header");
  switch (static_cast<MessageType>(type_byte)) {
    case MessageType::EpsRequest:
    case MessageType::EpsResponse: {
      TensorMessage msg;
      msg.type = static_cast<MessageType>(type_byte);
      std::array<std::uint8_t, 5> fixed{};
      need(fixed.data(), fixed.size(), "the tensor header");
      msg.timestep = detail::get_u32(fixed.data());
      const std::size_t ndim = fixed[4];
      std::vector<std::uint8_t> dim_bytes(4 * ndim);
      if (ndim) need(dim_bytes.data(), dim_bytes.size(), "the dims");
      msg.dims.resize(ndim);
      for (std::size_t i = 0; i < ndim; ++i) msg.dims[i] = detail::get_u32(dim_bytes.data() + 4 * i);
      const std::size_t n = detail::element_count(msg.dims);
      std::vector<std::uint8_t> raw(4 * n);
      need(raw.data(), raw.size(), "the payload");
      msg.payload.resize(n);
      for (std::size_t i = 0; i < n; ++i) msg.payload[i] = std::bit_cast<float>(detail::get_u32(raw.data() + 4 * i));
      return msg;
    }
    case MessageType::Shutdown:
      return ShutdownMessage{};
    case MessageType::Error: {
      std::array<std::uint8_t, 4> len_bytes{};
      need(len_bytes.data(), len_bytes.size(), "the error length");
      const std::uint32_t len = detail::get_u32(len_bytes.data());
      if (len > kMaxMessageBytes) throw ProtocolError(ErrorKind::BadShape, "error message too long");
      std::string text(len, '\0');
      if (len) need(reinterpret_cast<std::uint8_t*>(text.data()), len, "the error message");
      return ErrorMessage{std::move(text)};
    }
  }
  throw ProtocolError(ErrorKind::BadMessageType, "unknown message type " + std::to_string(type_byte));
}

/// Decodes a buffer holding exactly one frame.
inline Frame decode(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  Frame frame = read_frame([&](std::uint8_t* dst, std::size_t n) {
    if (bytes.size() - pos < n) return false;
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), n, dst);
    pos += n;
    return true;
  });
  if (pos != bytes.size()) {
    throw ProtocolError(ErrorKind::TrailingBytes, std::to_string(bytes.size() - pos) + " bytes after the frame");
  }
  return frame;
}

}  // namespace ssd::protocol
