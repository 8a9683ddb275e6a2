#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include <json.hpp>

namespace trsflow::steering {

class Session;

/// Console gateway on one TCP port. A connection whose first bytes are
/// "GET " is upgraded to WebSocket (one JSON text message per frame);
/// anything else speaks length-prefixed frames: a 4-byte big-endian payload
/// length followed by UTF-8 JSON. Requests are answered on a worker pool,
/// so a slow request does not hold up other clients.
class Gateway {
 public:
  /// Port 0 picks a free port.
  Gateway(Session& session, std::uint16_t port = 0, const std::string& address = "127.0.0.1");
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  [[nodiscard]] std::uint16_t port() const;
  void stop();

  /// Largest accepted frame payload.
  static constexpr std::uint32_t kMaxFrame = 64u << 20;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking client for length-prefixed frames, used by tools and tests.
class GatewayClient {
 public:
  GatewayClient(const std::string& host, std::uint16_t port);
  ~GatewayClient();

  void send(const nlohmann::json& msg);
  /// Next message from the server; throws on timeout or disconnect.
  nlohmann::json receive(std::chrono::milliseconds timeout = std::chrono::seconds(60));
  /// Sends msg with a fresh id and returns the reply carrying that id.
  /// Other messages received meanwhile are kept for receive().
  nlohmann::json request(nlohmann::json msg, std::chrono::milliseconds timeout = std::chrono::seconds(60));
  /// Writes raw bytes (for malformed-frame tests).
  void send_raw(const std::string& bytes);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace trsflow::steering
