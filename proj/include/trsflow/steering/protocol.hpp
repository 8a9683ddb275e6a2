#pragma once

#include <string>

#include <json.hpp>

#include "trsflow/steering/collector.hpp"
#include "trsflow/steering/command.hpp"

// JSON messages of the gateway protocol (docs/protocol.md). The same payloads
// travel as length-prefixed TCP frames and as WebSocket text messages.

namespace trsflow::steering {

class Session;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Field names in protocol order: u, v, w, p, T.
[[nodiscard]] int field_index(const std::string& name);
[[nodiscard]] const char* field_name(int index);

/// [x0,y0,z0,x1,y1,z1] or {"lo":[..],"hi":[..]}.
[[nodiscard]] Box box_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json box_to_json(const Box& b);

[[nodiscard]] SteeringCommand command_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json command_to_json(const SteeringCommand& c);

/// window, budget and optional fields (names or indices).
[[nodiscard]] topology::WindowQuery window_query_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json window_data_to_json(const WindowData& w);

/// Answers one request; errors become {"type":"error"} replies. The request
/// "id", when present, is echoed. subscribe/unsubscribe are connection state
/// and handled by the transport.
[[nodiscard]] nlohmann::json handle_request(Session& session, const nlohmann::json& request);

/// Parses one frame payload and answers it; malformed JSON yields an error reply.
[[nodiscard]] nlohmann::json handle_frame(Session& session, const std::string& payload);

}  // namespace trsflow::steering
