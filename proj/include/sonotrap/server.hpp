#pragma once

#include <atomic>
#include <chrono>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "sonotrap/session.hpp"

namespace sonotrap {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;                     // 0: pick a free port
  std::optional<int> http_port;     // snapshots; 0 picks a free port
  size_t queue_capacity = 64;       // telemetry events buffered per connection
};

/// Newline-delimited JSON control socket plus an optional HTTP endpoint for
/// GET /snapshot, /field and /healthz. Each connection may subscribe to one
/// telemetry stream at a time; closing it leaves the session untouched.
class ControlServer {
 public:
  ControlServer(Session& session, ServerOptions options = {});
  ~ControlServer();
  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  int port() const { return port_; }
  std::optional<int> http_port() const { return http_port_; }
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

 private:
  struct Connection;
  struct Http;

  void accept_loop();
  void serve(const std::shared_ptr<Connection>& conn);

  Session& session_;
  ServerOptions options_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::optional<int> http_port_;
  std::atomic<bool> stopping_{false};
  std::mutex mutex_;
  std::list<std::shared_ptr<Connection>> connections_;
  std::unique_ptr<Http> http_;
  std::thread accept_thread_;
  std::thread http_thread_;
};

/// Blocking NDJSON client used by tests and the CLI.
class LineClient {
 public:
  LineClient(const std::string& host, int port);
  ~LineClient();
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  void send(const Json& doc);
  /// Next line as JSON, or nothing after `timeout`.
  std::optional<Json> receive(std::chrono::milliseconds timeout);
  /// Sends the command and skips stream events until the reply with its seq.
  Json request(const CommandEnvelope& cmd, std::chrono::milliseconds timeout = std::chrono::seconds(10));
  void close();

 private:
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace sonotrap
