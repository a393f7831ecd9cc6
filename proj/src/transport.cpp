#include "arbiter/transport.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace arbiter {

bool call_ok(const CallResult& r) {
  const Response* resp = call_response(r);
  return resp && resp->status == Status::Ok;
}

const Response* call_response(const CallResult& r) {
  return std::get_if<Response>(&r);
}

uint64_t next_conn_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1);
}

CallResult LocalConnection::call(RequestBody body) {
  if (closed_) return TransportError{"connection closed"};
  Request req{next_seq_.fetch_add(1), std::move(body)};
  Opcode op = opcode_of(req.body);
  std::vector<uint8_t> resp_bytes =
      group_.handle_frame(cred_, encode_request(req));
  round_trips_.fetch_add(1);
  DecodedResponse dec = decode_response(resp_bytes, op);
  if (!dec.ok) return TransportError{"undecodable response: " + dec.reason};
  if (dec.response.seq != req.seq)
    return TransportError{"response seq mismatch"};
  return dec.response;
}

void LocalConnection::close() {
  if (closed_) return;
  closed_ = true;
  group_.connection_closed(cred_);
}

std::optional<Credential> LocalConnection::peer_credential() const {
  if (closed_) return std::nullopt;
  return cred_;
}

std::unique_ptr<LocalConnection> LocalTransport::connect() {
  Credential cred{next_conn_id(), static_cast<int32_t>(::getpid())};
  return std::make_unique<LocalConnection>(group_, cred);
}

namespace {

bool read_exact(int fd, uint8_t* buf, size_t n) {
  size_t done = 0;
  while (done < n) {
    ssize_t r = ::read(fd, buf + done, n - done);
    if (r <= 0) {
      if (r < 0 && errno == EINTR) continue;
      return false;
    }
    done += static_cast<size_t>(r);
  }
  return true;
}

bool write_all(int fd, const uint8_t* buf, size_t n) {
  size_t done = 0;
  while (done < n) {
    ssize_t r = ::write(fd, buf + done, n - done);
    if (r <= 0) {
      if (r < 0 && errno == EINTR) continue;
      return false;
    }
    done += static_cast<size_t>(r);
  }
  return true;
}

constexpr uint32_t kMaxWireFrame = 16u << 20;

// Reads one length-prefixed frame (including the prefix) into out.
bool read_frame(int fd, std::vector<uint8_t>& out) {
  uint8_t len_buf[4];
  if (!read_exact(fd, len_buf, 4)) return false;
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= uint32_t{len_buf[i]} << (i * 8);
  if (len < 5 || len > kMaxWireFrame) return false;
  out.resize(4 + len);
  std::memcpy(out.data(), len_buf, 4);
  return read_exact(fd, out.data() + 4, len);
}

}  // namespace

UnixSocketServer::UnixSocketServer(Group& group, std::string path)
    : group_(group), path_(std::move(path)) {
  listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path_.size() >= sizeof(addr.sun_path))
    throw std::runtime_error("socket path too long");
  std::strncpy(addr.sun_path, path_.c_str(), sizeof(addr.sun_path) - 1);
  ::unlink(path_.c_str());
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) <
          0 ||
      ::listen(listen_fd_, 16) < 0) {
    ::close(listen_fd_);
    throw std::runtime_error("bind/listen failed on " + path_);
  }
  accept_thread_ = std::thread([this] { accept_loop(); });
}

UnixSocketServer::~UnixSocketServer() {
  stop_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  {
    std::lock_guard lock(mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
  }
  for (std::thread& t : workers)
    if (t.joinable()) t.join();
  ::unlink(path_.c_str());
}

void UnixSocketServer::accept_loop() {
  while (!stop_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;  // listener closed
    }
    Credential cred{next_conn_id(), -1};
    ucred peer{};
    socklen_t len = sizeof(peer);
    if (::getsockopt(fd, SOL_SOCKET, SO_PEERCRED, &peer, &len) == 0)
      cred.pid = static_cast<int32_t>(peer.pid);
    std::lock_guard lock(mu_);
    creds_.push_back(cred);
    conn_fds_.push_back(fd);
    workers_.emplace_back([this, fd, cred] { serve(fd, cred); });
  }
}

void UnixSocketServer::serve(int fd, Credential cred) {
  std::vector<uint8_t> frame;
  while (!stop_ && read_frame(fd, frame)) {
    std::vector<uint8_t> resp = group_.handle_frame(cred, frame);
    if (!write_all(fd, resp.data(), resp.size())) break;
  }
  group_.connection_closed(cred);
  ::close(fd);
}

std::vector<Credential> UnixSocketServer::peer_credentials() const {
  std::lock_guard lock(mu_);
  return creds_;
}

std::unique_ptr<UnixSocketClient> UnixSocketClient::connect(
    const std::string& path) {
  int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) return nullptr;
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) {
    ::close(fd);
    return nullptr;
  }
  std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(fd);
    return nullptr;
  }
  return std::unique_ptr<UnixSocketClient>(new UnixSocketClient(fd));
}

CallResult UnixSocketClient::call(RequestBody body) {
  std::lock_guard lock(mu_);
  if (fd_ < 0) return TransportError{"connection closed"};
  Request req{next_seq_++, std::move(body)};
  Opcode op = opcode_of(req.body);
  std::vector<uint8_t> frame = encode_request(req);
  if (!write_all(fd_, frame.data(), frame.size()))
    return TransportError{"write failed"};
  std::vector<uint8_t> resp_bytes;
  if (!read_frame(fd_, resp_bytes)) return TransportError{"read failed"};
  DecodedResponse dec = decode_response(resp_bytes, op);
  if (!dec.ok) return TransportError{"undecodable response: " + dec.reason};
  if (dec.response.seq != req.seq)
    return TransportError{"response seq mismatch"};
  return dec.response;
}

void UnixSocketClient::close() {
  std::lock_guard lock(mu_);
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

}  // namespace arbiter
