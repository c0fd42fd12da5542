#pragma once

// Framed binary protocol for attaching an out-of-process manipulation model.
//
// Frame:  "GRSP" | version u8 (0x01) | type u8 | payload length u32 LE | payload
// Tensor: dtype u8 (0x01 = float32) | rank u8 | rank x u32 LE dims | f32 LE data
//
// The server speaks first with HELLO, whose payload is four float32 values:
// input height, width, channels and the output-range code (the range width;
// 2 means [-1, 1], any other w means [0, w]). The client answers HELLO_ACK
// and then issues FORWARD_REQ / VJP_REQ, one at a time. VJP_REQ carries two
// tensors back to back (x, cotangent). ERROR carries a UTF-8 message.

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grasp/error.hpp"
#include "grasp/image.hpp"
#include "grasp/models.hpp"

namespace grasp::bridge {

inline constexpr std::array<std::uint8_t, 4> kMagic{'G', 'R', 'S', 'P'};
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::uint8_t kDtypeFloat32 = 0x01;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;
inline constexpr std::size_t kHeaderSize = 10;

enum class MsgType : std::uint8_t {
  Hello = 0x01,
  HelloAck = 0x02,
  ForwardReq = 0x10,
  ForwardResp = 0x11,
  VjpReq = 0x20,
  VjpResp = 0x21,
  Error = 0x7F,
};

inline bool known_type(std::uint8_t t) {
  switch (static_cast<MsgType>(t)) {
    case MsgType::Hello:
    case MsgType::HelloAck:
    case MsgType::ForwardReq:
    case MsgType::ForwardResp:
    case MsgType::VjpReq:
    case MsgType::VjpResp:
    case MsgType::Error:
      return true;
  }
  return false;
}

struct Frame {
  MsgType type{};
  std::vector<std::uint8_t> payload;
};

// ---------------------------------------------------------------------------
// Little-endian encoding

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

inline float get_f32(std::span<const std::uint8_t> in, std::size_t at) {
  const std::uint32_t bits = get_u32(in, at);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline std::vector<std::uint8_t> encode_frame(MsgType type, std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxPayload) throw ProtocolError("payload too large");
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(type));
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline void append_tensor(std::vector<std::uint8_t>& out, const ImageTensor& t) {
  out.push_back(kDtypeFloat32);
  out.push_back(3);
  put_u32(out, static_cast<std::uint32_t>(t.height()));
  put_u32(out, static_cast<std::uint32_t>(t.width()));
  put_u32(out, static_cast<std::uint32_t>(t.channels()));
  for (double v : t.values()) put_f32(out, static_cast<float>(v));
}

inline std::vector<std::uint8_t> encode_tensor(const ImageTensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(2 + 12 + 4 * t.size());
  append_tensor(out, t);
  return out;
}

// Decodes one tensor starting at `offset` and advances it. Rank 2 is read as
// H x W x 1.
inline ImageTensor decode_tensor(std::span<const std::uint8_t> in, std::size_t& offset) {
  if (in.size() < offset + 2) throw ProtocolError("tensor header truncated");
  const std::uint8_t dtype = in[offset];
  const std::uint8_t rank = in[offset + 1];
  if (dtype != kDtypeFloat32) throw ProtocolError("unsupported tensor dtype " + std::to_string(dtype));
  if (rank != 2 && rank != 3) throw ProtocolError("unsupported tensor rank " + std::to_string(rank));
  offset += 2;
  if (in.size() < offset + 4u * rank) throw ProtocolError("tensor dims truncated");
  Shape shape{get_u32(in, offset), get_u32(in, offset + 4), 1};
  if (rank == 3) shape.channels = get_u32(in, offset + 8);
  offset += 4u * rank;
  const std::uint64_t count = static_cast<std::uint64_t>(shape.height) * shape.width * shape.channels;
  if (count == 0 || count > kMaxPayload / 4) throw ProtocolError("tensor has invalid element count");
  if (in.size() < offset + 4 * count) throw ProtocolError("tensor data truncated");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = get_f32(in, offset + 4 * i);
  offset += 4 * count;
  return ImageTensor(shape, std::move(data));
}

inline ImageTensor decode_single_tensor(std::span<const std::uint8_t> in) {
  std::size_t off = 0;
  ImageTensor t = decode_tensor(in, off);
  if (off != in.size()) throw ProtocolError("trailing bytes after tensor");
  return t;
}

struct HelloInfo {
  Shape dims;
  PixelRange output_range;
};

inline float range_code(PixelRange r) { return static_cast<float>(r.width()); }

inline PixelRange range_from_code(float code) {
  if (!(code > 0.0f)) throw ProtocolError("invalid output range code");
  if (code == 2.0f) return {-1.0, 1.0};
  return {0.0, static_cast<double>(code)};
}

inline std::vector<std::uint8_t> encode_hello(const HelloInfo& info) {
  std::vector<std::uint8_t> out;
  put_f32(out, static_cast<float>(info.dims.height));
  put_f32(out, static_cast<float>(info.dims.width));
  put_f32(out, static_cast<float>(info.dims.channels));
  put_f32(out, range_code(info.output_range));
  return out;
}

inline HelloInfo decode_hello(std::span<const std::uint8_t> in) {
  if (in.size() != 16) throw ProtocolError("HELLO payload must be 16 bytes");
  auto dim = [&](std::size_t at) {
    const float f = get_f32(in, at);
    if (!(f >= 1.0f) || f != static_cast<float>(static_cast<std::uint32_t>(f))) {
      throw ProtocolError("HELLO carries a non-integral dimension");
    }
    return static_cast<std::size_t>(f);
  };
  return {Shape{dim(0), dim(4), dim(8)}, range_from_code(get_f32(in, 12))};
}

// ---------------------------------------------------------------------------
// Transport

// Owns a read and a write descriptor (the same one for sockets) and,
// optionally, a child process to reap.
class Channel {
 public:
  Channel() = default;
  Channel(int read_fd, int write_fd, pid_t child = -1)
      : read_fd_(read_fd), write_fd_(write_fd), child_(child) {}
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;
  Channel(Channel&& o) noexcept { *this = std::move(o); }
  Channel& operator=(Channel&& o) noexcept {
    if (this != &o) {
      close();
      read_fd_ = std::exchange(o.read_fd_, -1);
      write_fd_ = std::exchange(o.write_fd_, -1);
      child_ = std::exchange(o.child_, -1);
      timeout_ms_ = o.timeout_ms_;
    }
    return *this;
  }
  ~Channel() { close(); }

  bool is_open() const { return read_fd_ >= 0; }
  void set_timeout_ms(int ms) { timeout_ms_ = ms; }

  void close() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = write_fd_ = -1;
    if (child_ > 0) {
      int status = 0;
      if (::waitpid(child_, &status, WNOHANG) == 0) {
        ::kill(child_, SIGTERM);
        ::waitpid(child_, &status, 0);
      }
      child_ = -1;
    }
  }

  void write_all(std::span<const std::uint8_t> bytes) {
    if (write_fd_ < 0) throw ModelError("bridge: channel closed");
    std::size_t done = 0;
    while (done < bytes.size()) {
      ssize_t n = ::send(write_fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
      if (n < 0 && errno == ENOTSOCK) n = ::write(write_fd_, bytes.data() + done, bytes.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ModelError(std::string("bridge: write failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  // Returns false on clean EOF before the first byte.
  bool read_exact(std::uint8_t* dst, std::size_t n) {
    if (read_fd_ < 0) throw ModelError("bridge: channel closed");
    std::size_t done = 0;
    while (done < n) {
      if (timeout_ms_ >= 0) {
        pollfd p{read_fd_, POLLIN, 0};
        const int r = ::poll(&p, 1, timeout_ms_);
        if (r == 0) throw ModelError("bridge: timed out waiting for peer");
        if (r < 0) {
          if (errno == EINTR) continue;
          throw ModelError(std::string("bridge: poll failed: ") + std::strerror(errno));
        }
      }
      const ssize_t got = ::read(read_fd_, dst + done, n - done);
      if (got < 0) {
        if (errno == EINTR) continue;
        throw ModelError(std::string("bridge: read failed: ") + std::strerror(errno));
      }
      if (got == 0) {
        if (done == 0) return false;
        throw ProtocolError("bridge: peer closed mid-frame");
      }
      done += static_cast<std::size_t>(got);
    }
    return true;
  }

  void send_frame(MsgType type, std::span<const std::uint8_t> payload) {
    write_all(encode_frame(type, payload));
  }

  // std::nullopt on clean EOF at a frame boundary.
  std::optional<Frame> recv_frame() {
    std::array<std::uint8_t, kHeaderSize> hdr{};
    if (!read_exact(hdr.data(), hdr.size())) return std::nullopt;
    if (!std::equal(kMagic.begin(), kMagic.end(), hdr.begin())) {
      throw ProtocolError("bridge: bad frame magic");
    }
    if (hdr[4] != kVersion) {
      throw ProtocolError("bridge: protocol version mismatch (peer " + std::to_string(hdr[4]) +
                          ", expected " + std::to_string(kVersion) + ")");
    }
    if (!known_type(hdr[5])) throw ProtocolError("bridge: unknown message type " + std::to_string(hdr[5]));
    const std::uint32_t len = get_u32(hdr, 6);
    if (len > kMaxPayload) throw ProtocolError("bridge: payload length exceeds limit");
    Frame f{static_cast<MsgType>(hdr[5]), std::vector<std::uint8_t>(len)};
    if (len > 0 && !read_exact(f.payload.data(), len)) throw ProtocolError("bridge: peer closed mid-frame");
    return f;
  }

 private:
  int read_fd_ = -1;
  int write_fd_ = -1;
  pid_t child_ = -1;
  int timeout_ms_ = 30000;
};

inline std::pair<Channel, Channel> socket_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
    throw ModelError(std::string("socketpair failed: ") + std::strerror(errno));
  }
  return {Channel(fds[0], fds[0]), Channel(fds[1], fds[1])};
}

inline Channel connect_tcp(const std::string& host, const std::string& port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ModelError("bridge: cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ModelError("bridge: cannot connect to " + host + ":" + port);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Channel(fd, fd);
}

// Runs `command` through /bin/sh with its stdin/stdout wired to the channel.
inline Channel spawn_child(const std::string& command) {
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw ModelError("bridge: pipe failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw ModelError("bridge: pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw ModelError("bridge: fork failed");
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
  return Channel(from_child[0], to_child[1], pid);
}

// ---------------------------------------------------------------------------
// Client

class BridgeModel final : public ManipulationModel {
 public:
  // Performs the handshake on an already-open channel.
  explicit BridgeModel(Channel channel, std::string label = "bridge")
      : channel_(std::move(channel)), label_(std::move(label)) {
    std::optional<Frame> hello;
    try {
      hello = channel_.recv_frame();
    } catch (...) {
      channel_.close();
      throw;
    }
    if (!hello) {
      channel_.close();
      throw ModelError("bridge: peer closed before HELLO");
    }
    if (hello->type != MsgType::Hello) {
      channel_.close();
      throw ProtocolError("bridge: expected HELLO");
    }
    try {
      info_ = decode_hello(hello->payload);
    } catch (...) {
      channel_.close();
      throw;
    }
    channel_.send_frame(MsgType::HelloAck, {});
  }

  std::string name() const override { return label_; }
  Shape input_dims() const override { return info_.dims; }
  PixelRange output_range() const override { return info_.output_range; }
  bool connected() const { return channel_.is_open(); }

  ImageTensor forward(const ImageTensor& x) const override {
    check_input(x);
    ImageTensor y = call(MsgType::ForwardReq, MsgType::ForwardResp, encode_tensor(x));
    if (y.shape() != x.shape()) {
      throw ShapeError("bridge: server returned output " + y.shape().str() + " for input " +
                       x.shape().str());
    }
    y.set_range(info_.output_range);
    return y;
  }

  ImageTensor vjp(const ImageTensor& x, const ImageTensor& cotangent) const override {
    check_input(x);
    std::vector<std::uint8_t> payload = encode_tensor(x);
    append_tensor(payload, cotangent);
    ImageTensor g = call(MsgType::VjpReq, MsgType::VjpResp, payload);
    if (g.shape() != x.shape()) {
      throw ShapeError("bridge: server returned gradient " + g.shape().str() + " for input " +
                       x.shape().str());
    }
    g.set_range(x.range());
    return g;
  }

 private:
  ImageTensor call(MsgType req, MsgType expected, const std::vector<std::uint8_t>& payload) const {
    std::lock_guard lock(mu_);
    if (!channel_.is_open()) throw ProtocolError("bridge: connection closed");
    try {
      channel_.send_frame(req, payload);
      std::optional<Frame> resp = channel_.recv_frame();
      if (!resp) throw ModelError("bridge: server closed the connection");
      if (resp->type == MsgType::Error) {
        throw ModelError("bridge: server error: " +
                         std::string(resp->payload.begin(), resp->payload.end()));
      }
      if (resp->type != expected) throw ProtocolError("bridge: unexpected response type");
      return decode_single_tensor(resp->payload);
    } catch (const ProtocolError&) {
      channel_.close();
      throw;
    } catch (const ModelError& e) {
      // Server-reported errors leave the stream in sync; transport errors don't.
      if (std::string(e.what()).rfind("bridge: server error", 0) != 0) channel_.close();
      throw;
    }
  }

  mutable std::mutex mu_;
  mutable Channel channel_;
  HelloInfo info_{};
  std::string label_;
};

// Endpoints: "tcp:HOST:PORT", "HOST:PORT", or "exec:COMMAND".
inline std::unique_ptr<BridgeModel> bridge_connect(const std::string& endpoint,
                                                   int timeout_ms = 30000) {
  Channel ch;
  if (endpoint.rfind("exec:", 0) == 0) {
    ::signal(SIGPIPE, SIG_IGN);
    ch = spawn_child(endpoint.substr(5));
  } else {
    std::string rest = endpoint.rfind("tcp:", 0) == 0 ? endpoint.substr(4) : endpoint;
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw ConfigError("bridge endpoint needs HOST:PORT: " + endpoint);
    ch = connect_tcp(rest.substr(0, colon), rest.substr(colon + 1));
  }
  ch.set_timeout_ms(timeout_ms);
  return std::make_unique<BridgeModel>(std::move(ch), "bridge(" + endpoint + ")");
}

// ---------------------------------------------------------------------------
// Server

// Serves one connection until the client hangs up. Malformed client frames
// are answered with ERROR and end the session.
inline void serve(Channel& ch, const ManipulationModel& model) {
  ch.set_timeout_ms(-1);
  ch.send_frame(MsgType::Hello, encode_hello({model.input_dims(), model.output_range()}));
  auto send_error = [&](const std::string& msg) {
    const std::vector<std::uint8_t> bytes(msg.begin(), msg.end());
    try {
      ch.send_frame(MsgType::Error, bytes);
    } catch (const Error&) {
    }
  };
  try {
    std::optional<Frame> ack = ch.recv_frame();
    if (!ack) return;
    if (ack->type != MsgType::HelloAck) {
      send_error("expected HELLO_ACK");
      return;
    }
    while (true) {
      std::optional<Frame> req = ch.recv_frame();
      if (!req) return;
      std::vector<std::uint8_t> out;
      if (req->type == MsgType::ForwardReq) {
        ImageTensor x = decode_single_tensor(req->payload);
        try {
          out = encode_tensor(model.forward(x));
        } catch (const std::exception& e) {
          send_error(e.what());
          continue;
        }
        ch.send_frame(MsgType::ForwardResp, out);
      } else if (req->type == MsgType::VjpReq) {
        std::size_t off = 0;
        ImageTensor x = decode_tensor(req->payload, off);
        ImageTensor c = decode_tensor(req->payload, off);
        if (off != req->payload.size()) throw ProtocolError("trailing bytes after VJP tensors");
        try {
          out = encode_tensor(model.vjp(x, c));
        } catch (const std::exception& e) {
          send_error(e.what());
          continue;
        }
        ch.send_frame(MsgType::VjpResp, out);
      } else {
        send_error("unexpected message type");
        return;
      }
    }
  } catch (const ProtocolError& e) {
    send_error(e.what());
  }
}

// Listening TCP socket on 127.0.0.1 (or any address when `any` is set).
class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port, bool any = false) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ModelError("bridge: socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(any ? INADDR_ANY : INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
      ::close(fd_);
      throw ModelError(std::string("bridge: cannot listen: ") + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const { return port_; }

  Channel accept() {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c < 0) throw ModelError(std::string("bridge: accept failed: ") + std::strerror(errno));
    return Channel(c, c);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace grasp::bridge
