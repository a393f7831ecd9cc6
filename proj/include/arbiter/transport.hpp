// Client-side connections to a group's monitor. The default transport is
// an in-process duplex channel; a local unix-socket transport with OS peer
// credentials can back the same contract.
#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "arbiter/monitor.hpp"

namespace arbiter {

struct TransportError {
  std::string what;
};

using CallResult = std::variant<Response, TransportError>;

bool call_ok(const CallResult& r);
const Response* call_response(const CallResult& r);

class Connection {
 public:
  virtual ~Connection() = default;
  // Blocking round trip: exactly one response per request, matching seq.
  // Assigns the sequence number; a transport failure is distinct from any
  // monitor status.
  virtual CallResult call(RequestBody body) = 0;
  virtual void close() = 0;
};

// In-process channel; the credential is minted at connect time and is the
// monitor's view of this connection.
class LocalConnection : public Connection {
 public:
  LocalConnection(Group& group, Credential cred)
      : group_(group), cred_(cred) {}
  ~LocalConnection() override { close(); }

  CallResult call(RequestBody body) override;
  void close() override;
  // Monitor-side identity of this connection; empty once closed.
  std::optional<Credential> peer_credential() const;
  uint64_t round_trips() const { return round_trips_; }

 private:
  Group& group_;
  Credential cred_;
  bool closed_ = false;
  std::atomic<uint32_t> next_seq_{1};
  std::atomic<uint64_t> round_trips_{0};
};

class LocalTransport {
 public:
  explicit LocalTransport(Group& group) : group_(group) {}
  std::unique_ptr<LocalConnection> connect();

 private:
  Group& group_;
};

// Fresh process-wide connection id; shared by all transports.
uint64_t next_conn_id();

// Unix-domain-socket transport. The server derives each connection's
// credential from accept order and SO_PEERCRED, never from frame bytes.
class UnixSocketServer {
 public:
  UnixSocketServer(Group& group, std::string path);
  ~UnixSocketServer();

  UnixSocketServer(const UnixSocketServer&) = delete;
  UnixSocketServer& operator=(const UnixSocketServer&) = delete;

  const std::string& path() const { return path_; }
  std::vector<Credential> peer_credentials() const;

 private:
  void accept_loop();
  void serve(int fd, Credential cred);

  Group& group_;
  std::string path_;
  int listen_fd_ = -1;
  std::atomic<bool> stop_{false};
  std::thread accept_thread_;
  mutable std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> conn_fds_;
  std::vector<Credential> creds_;
};

class UnixSocketClient : public Connection {
 public:
  static std::unique_ptr<UnixSocketClient> connect(const std::string& path);
  ~UnixSocketClient() override { close(); }

  CallResult call(RequestBody body) override;
  void close() override;

 private:
  explicit UnixSocketClient(int fd) : fd_(fd) {}
  int fd_ = -1;
  std::mutex mu_;
  uint32_t next_seq_ = 1;
};

}  // namespace arbiter
