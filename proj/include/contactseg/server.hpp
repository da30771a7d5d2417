#pragma once

// TCP transport for the session service. Framing is newline-delimited JSON:
// every message is one compact JSON object followed by '\n' in each
// direction. One reader thread per connection feeds the service.

#include "contactseg/session.hpp"

#include <atomic>
#include <cstdint>
#include <list>
#include <mutex>
#include <string>
#include <thread>

namespace contactseg {

class TcpServer {
 public:
  /// Binds and listens; port 0 picks a free port (see port()).
  TcpServer(Service& service, const std::string& host, std::uint16_t port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  /// Accepts connections on a background thread until stop().
  void start();
  /// Accepts connections on the calling thread until stop().
  void run();
  void stop();

  /// Longest accepted message line.
  static constexpr std::size_t kMaxLine = std::size_t{256} << 20;

 private:
  void serve_client(int fd);

  Service& service_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex clients_mutex_;
  std::list<std::thread> client_threads_;
  std::list<int> client_fds_;
};

/// Blocking line-oriented client, used by tests and scripts.
class TcpClient {
 public:
  TcpClient(const std::string& host, std::uint16_t port);
  ~TcpClient();
  TcpClient(const TcpClient&) = delete;
  TcpClient& operator=(const TcpClient&) = delete;

  void send_line(const std::string& line);
  /// Next line without its newline; empty optional on end of stream or
  /// when nothing arrives within timeout_ms.
  std::optional<std::string> read_line(int timeout_ms);
  void close();

 private:
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace contactseg
