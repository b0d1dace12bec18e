#include "sonotrap/server.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <httplib.h>

#include "sonotrap/error.hpp"

namespace sonotrap {

namespace {

void send_all(int fd, const std::string& data) {
  size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::SensorIo, std::string("socket write failed: ") + std::strerror(errno));
    }
    sent += static_cast<size_t>(n);
  }
}

Json error_payload(ErrorCode code, const std::string& message) {
  return {{"code", std::string(to_string(code))}, {"message", message}};
}

Event reply(uint64_t seq, const std::string& kind, Json payload) {
  return {seq, kind, std::move(payload), wall_clock_s()};
}

}  // namespace

struct ControlServer::Connection {
  int fd = -1;
  std::mutex write_mutex;
  std::shared_ptr<EventQueue> queue;
  std::unique_ptr<TelemetryPump> pump;
  std::thread writer;
  std::thread reader;
  std::atomic<bool> done{false};

  void write(const Json& doc) {
    std::lock_guard lock(write_mutex);
    send_all(fd, doc.dump() + "\n");
  }

  void end_stream() {
    if (pump) pump->stop();
    pump.reset();
    if (queue) queue->close();
    if (writer.joinable()) writer.join();
    queue.reset();
  }

  void start_stream(Session& session, const TelemetrySpec& spec, size_t capacity) {
    end_stream();
    queue = std::make_shared<EventQueue>(capacity);
    writer = std::thread([this, q = queue] {
      while (true) {
        auto e = q->pop(std::chrono::milliseconds(100));
        if (!e) {
          if (q->closed()) break;
          continue;
        }
        try {
          write(e->to_json());
        } catch (const Error&) {
          break;
        }
      }
    });
    pump = std::make_unique<TelemetryPump>(session, spec, queue);
  }
};

struct ControlServer::Http {
  httplib::Server server;
};

ControlServer::ControlServer(Session& session, ServerOptions options)
    : session_(session), options_(std::move(options)) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (getaddrinfo(options_.host.c_str(), std::to_string(options_.port).c_str(), &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::InvalidArgument, "cannot resolve " + options_.host);
  }
  listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  const bool bound = listen_fd_ >= 0 && ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) == 0 &&
                     ::listen(listen_fd_, 16) == 0;
  freeaddrinfo(res);
  if (!bound) {
    const std::string why = std::strerror(errno);
    if (listen_fd_ >= 0) ::close(listen_fd_);
    throw Error(ErrorCode::InvalidArgument,
                "cannot listen on " + options_.host + ":" + std::to_string(options_.port) + ": " + why);
  }
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  if (options_.http_port) {
    http_ = std::make_unique<Http>();
    auto& svr = http_->server;
    auto send_json = [](httplib::Response& res, const Json& doc, int status = 200) {
      res.status = status;
      res.set_content(doc.dump(), "application/json");
    };
    svr.Get("/healthz", [send_json](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"status", "ok"}, {"v", kProtocolVersion}});
    });
    svr.Get("/snapshot", [this, send_json](const httplib::Request&, httplib::Response& res) {
      session_.advance();
      send_json(res, session_.snapshot_json());
    });
    svr.Get("/field", [this, send_json](const httplib::Request& req, httplib::Response& res) {
      try {
        Json payload = Json::object();
        for (const auto& [key, value] : req.params) {
          if (key == "plane") payload[key] = value;
          else if (key == "max_side") payload[key] = std::stoul(value);
          else payload[key] = std::stod(value);
        }
        session_.advance();
        const size_t side = payload.value("max_side", kMaxSliceSide);
        if (side == 0 || side > kMaxSliceSide) throw Error(ErrorCode::InvalidArgument, "max_side must be 1..64");
        const auto plane = slice_plane_from_json(payload);
        send_json(res, slice_to_json(Session::field_slice(session_.snapshot(false), plane, side)));
      } catch (const Error& e) {
        send_json(res, error_payload(e.code(), e.message()), is_validation_error(e.code()) ? 400 : 500);
      } catch (const std::exception& e) {
        send_json(res, error_payload(ErrorCode::InvalidArgument, e.what()), 400);
      }
    });
    const int hp = *options_.http_port;
    if (hp == 0) {
      http_port_ = svr.bind_to_any_port(options_.host);
    } else if (svr.bind_to_port(options_.host, hp)) {
      http_port_ = hp;
    }
    if (!http_port_ || *http_port_ <= 0) {
      ::close(listen_fd_);
      throw Error(ErrorCode::InvalidArgument, "cannot bind HTTP port " + std::to_string(hp));
    }
    http_thread_ = std::thread([this] { http_->server.listen_after_bind(); });
  }
  accept_thread_ = std::thread([this] { accept_loop(); });
}

ControlServer::~ControlServer() { stop(); }

void ControlServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    std::lock_guard lock(mutex_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    // Reap finished connections.
    for (auto it = connections_.begin(); it != connections_.end();) {
      if ((*it)->done) {
        if ((*it)->reader.joinable()) (*it)->reader.join();
        it = connections_.erase(it);
      } else {
        ++it;
      }
    }
    connections_.push_back(conn);
    conn->reader = std::thread([this, conn] { serve(conn); });
  }
}

void ControlServer::serve(const std::shared_ptr<Connection>& conn) {
  std::optional<uint64_t> last_seq;
  std::string buffer;
  char chunk[4096];
  auto handle_line = [&](const std::string& line) {
    uint64_t seq = 0;
    try {
      Json doc;
      try {
        doc = Json::parse(line);
      } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::Parse, e.what());
      }
      if (doc.is_object() && doc.contains("seq") && doc.at("seq").is_number_unsigned()) {
        seq = doc.at("seq").get<uint64_t>();
      }
      const auto cmd = parse_envelope(doc);
      if (last_seq && cmd.seq <= *last_seq) {
        throw Error(ErrorCode::InvalidArgument,
                    "seq " + std::to_string(cmd.seq) + " does not follow " + std::to_string(*last_seq));
      }
      last_seq = cmd.seq;
      const Json payload = session_.handle(cmd);
      conn->write(reply(cmd.seq, "ack", payload).to_json());
      if (cmd.verb == Verb::Subscribe) {
        conn->start_stream(session_, telemetry_spec_from_json(cmd.payload), options_.queue_capacity);
      }
    } catch (const Error& e) {
      conn->write(reply(seq, "error", error_payload(e.code(), e.message())).to_json());
    }
  };
  try {
    while (true) {
      const ssize_t n = ::recv(conn->fd, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buffer.append(chunk, static_cast<size_t>(n));
      size_t pos;
      while ((pos = buffer.find('\n')) != std::string::npos) {
        std::string line = buffer.substr(0, pos);
        buffer.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) handle_line(line);
      }
    }
  } catch (const Error&) {
    // Peer went away mid-write.
  }
  conn->end_stream();
  ::shutdown(conn->fd, SHUT_RDWR);
  ::close(conn->fd);
  conn->done = true;
}

void ControlServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (accept_thread_.joinable()) accept_thread_.join();
  std::list<std::shared_ptr<Connection>> conns;
  {
    std::lock_guard lock(mutex_);
    conns.swap(connections_);
  }
  for (auto& c : conns) {
    if (!c->done) ::shutdown(c->fd, SHUT_RDWR);
    if (c->reader.joinable()) c->reader.join();
  }
  if (http_) {
    http_->server.stop();
    if (http_thread_.joinable()) http_thread_.join();
  }
}

void ControlServer::wait() {
  while (!stopping_) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

LineClient::LineClient(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::InvalidArgument, "cannot resolve " + host);
  }
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
  freeaddrinfo(res);
  if (!ok) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    throw Error(ErrorCode::SensorIo, "cannot connect to " + host + ":" + std::to_string(port));
  }
}

LineClient::~LineClient() { close(); }

void LineClient::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

void LineClient::send(const Json& doc) { send_all(fd_, doc.dump() + "\n"); }

std::optional<Json> LineClient::receive(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const size_t pos = buffer_.find('\n');
    if (pos != std::string::npos) {
      const std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      try {
        return Json::parse(line);
      } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::Parse, e.what());
      }
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return std::nullopt;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<size_t>(n));
  }
}

Json LineClient::request(const CommandEnvelope& cmd, std::chrono::milliseconds timeout) {
  send(envelope_to_json(cmd));
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    auto msg = receive(std::max(left, std::chrono::milliseconds(0)));
    if (!msg) throw Error(ErrorCode::SensorIo, "no reply to seq " + std::to_string(cmd.seq));
    const auto kind = msg->value("kind", "");
    if ((kind == "ack" || kind == "error") && msg->value("seq", uint64_t{0}) == cmd.seq) return *msg;
  }
}

}  // namespace sonotrap
