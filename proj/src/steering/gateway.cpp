#include "trsflow/steering/gateway.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <array>
#include <deque>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "trsflow/steering/protocol.hpp"
#include "trsflow/steering/session.hpp"

namespace trsflow::steering {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

std::array<unsigned char, 4> be32(std::uint32_t n) {
  return {static_cast<unsigned char>(n >> 24), static_cast<unsigned char>(n >> 16), static_cast<unsigned char>(n >> 8),
          static_cast<unsigned char>(n)};
}

std::uint32_t from_be32(const unsigned char* b) {
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

struct Gateway::Impl {
  class Connection;

  Session& session;
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  asio::thread_pool workers{2};
  std::thread io_thread;
  std::mutex listeners_mutex;
  std::set<int> listeners;
  bool stopped = false;

  explicit Impl(Session& s) : session(s) {}

  void accept();
  void add_listener(int id) {
    std::lock_guard lock(listeners_mutex);
    listeners.insert(id);
  }
  void drop_listener(int id) {
    {
      std::lock_guard lock(listeners_mutex);
      if (!listeners.erase(id)) return;
    }
    session.unsubscribe(id);
  }
};

// One client. All socket work runs on the io thread; request handling runs
// on the worker pool and posts its reply back.
class Gateway::Impl::Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(Impl& gw, tcp::socket sock) : gw_(gw), sock_(std::move(sock)) {}

  void start() {
    asio::async_read(sock_, asio::buffer(head_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      if (std::string(self->head_.begin(), self->head_.end()) == "GET ") {
        self->upgrade();
      } else {
        self->on_length();
      }
    });
  }

 private:
  void upgrade() {
    ws_.emplace(std::move(sock_));
    ws_->async_accept(asio::buffer(head_), [self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->close();
      self->ws_->text(true);
      self->read_ws();
    });
  }

  void read_ws() {
    ws_->async_read(wsbuf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      auto payload = beast::buffers_to_string(self->wsbuf_.data());
      self->wsbuf_.consume(self->wsbuf_.size());
      self->dispatch(std::move(payload));
      self->read_ws();
    });
  }

  void read_head() {
    asio::async_read(sock_, asio::buffer(head_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->on_length();
    });
  }

  void on_length() {
    const auto n = from_be32(head_.data());
    if (n > kMaxFrame) {
      // The stream cannot be resynchronized after a bogus length.
      send(json{{"type", "error"}, {"message", "frame of " + std::to_string(n) + " bytes exceeds the limit"}}.dump());
      close_after_write_ = true;
      return;
    }
    body_.resize(n);
    asio::async_read(sock_, asio::buffer(body_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->dispatch(std::string(self->body_.begin(), self->body_.end()));
      self->read_head();
    });
  }

  void dispatch(std::string payload) {
    json req;
    try {
      req = json::parse(payload);
    } catch (const json::parse_error&) {
      req = nullptr;
    }
    const auto type = req.is_object() ? req.value("type", std::string()) : std::string();
    if (type == "subscribe" || type == "unsubscribe") {
      json reply{{"type", type == "subscribe" ? "subscribed" : "unsubscribed"}};
      if (type == "subscribe" && listener_ == 0) {
        std::weak_ptr<Connection> weak = shared_from_this();
        auto* ioc = &gw_.ioc;
        listener_ = gw_.session.subscribe([weak, ioc](const json& ev) {
          asio::post(*ioc, [weak, msg = ev.dump()] {
            if (auto self = weak.lock()) self->send(msg);
          });
        });
        gw_.add_listener(listener_);
      } else if (type == "unsubscribe" && listener_ != 0) {
        gw_.drop_listener(listener_);
        listener_ = 0;
      }
      if (req.contains("id")) reply["id"] = req["id"];
      send(reply.dump());
      return;
    }
    asio::post(gw_.workers, [self = shared_from_this(), payload = std::move(payload)] {
      auto reply = handle_frame(self->gw_.session, payload).dump();
      asio::post(self->gw_.ioc, [self, reply = std::move(reply)]() mutable { self->send(std::move(reply)); });
    });
  }

  void send(std::string msg) {
    if (closed_) return;
    outbox_.push_back(std::move(msg));
    if (!writing_) write_next();
  }

  void write_next() {
    if (outbox_.empty()) {
      writing_ = false;
      if (close_after_write_) close();
      return;
    }
    writing_ = true;
    auto done = [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->outbox_.pop_front();
      self->write_next();
    };
    const auto& msg = outbox_.front();
    if (ws_) {
      ws_->async_write(asio::buffer(msg), done);
    } else {
      out_head_ = be32(static_cast<std::uint32_t>(msg.size()));
      const std::array<asio::const_buffer, 2> bufs{asio::buffer(out_head_), asio::buffer(msg)};
      asio::async_write(sock_, bufs, done);
    }
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    if (listener_ != 0) gw_.drop_listener(listener_);
    listener_ = 0;
    beast::error_code ec;
    if (ws_) {
      beast::get_lowest_layer(*ws_).close(ec);
    } else {
      sock_.close(ec);
    }
  }

  Impl& gw_;
  tcp::socket sock_;
  std::optional<websocket::stream<tcp::socket>> ws_;
  std::array<unsigned char, 4> head_{};
  std::array<unsigned char, 4> out_head_{};
  std::vector<char> body_;
  beast::flat_buffer wsbuf_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool closed_ = false;
  bool close_after_write_ = false;
  int listener_ = 0;
};

void Gateway::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
    if (ec) return;
    std::make_shared<Connection>(*this, std::move(sock))->start();
    accept();
  });
}

Gateway::Gateway(Session& session, std::uint16_t port, const std::string& address) : impl_(std::make_unique<Impl>(session)) {
  const tcp::endpoint ep(asio::ip::make_address(address), port);
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen();
  impl_->accept();
  impl_->io_thread = std::thread([this] { impl_->ioc.run(); });
}

Gateway::~Gateway() { stop(); }

std::uint16_t Gateway::port() const { return impl_->acceptor.local_endpoint().port(); }

void Gateway::stop() {
  if (impl_->stopped) return;
  impl_->stopped = true;
  std::set<int> ids;
  {
    std::lock_guard lock(impl_->listeners_mutex);
    ids.swap(impl_->listeners);
  }
  for (const int id : ids) impl_->session.unsubscribe(id);
  impl_->workers.join();
  impl_->ioc.stop();
  if (impl_->io_thread.joinable()) impl_->io_thread.join();
}

// ---- client ----------------------------------------------------------------

struct GatewayClient::Impl {
  asio::io_context ioc;
  tcp::socket sock{ioc};
  std::deque<json> pending;
  std::int64_t next_id = 1;

  void read_exact(void* data, std::size_t n, std::chrono::milliseconds timeout) {
    beast::error_code result = asio::error::would_block;
    asio::async_read(sock, asio::buffer(data, n), [&](beast::error_code ec, std::size_t) { result = ec; });
    ioc.restart();
    ioc.run_for(timeout);
    if (result == asio::error::would_block) {
      sock.cancel();
      ioc.restart();
      ioc.run();
      throw std::runtime_error("gateway client: timed out waiting for a frame");
    }
    if (result) throw std::runtime_error("gateway client: " + result.message());
  }

  json read_frame(std::chrono::milliseconds timeout) {
    std::array<unsigned char, 4> head{};
    read_exact(head.data(), 4, timeout);
    std::string body(from_be32(head.data()), '\0');
    read_exact(body.data(), body.size(), timeout);
    return json::parse(body);
  }
};

GatewayClient::GatewayClient(const std::string& host, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
  tcp::resolver res(impl_->ioc);
  asio::connect(impl_->sock, res.resolve(host, std::to_string(port)));
  impl_->sock.set_option(tcp::no_delay(true));
}

GatewayClient::~GatewayClient() = default;

void GatewayClient::send_raw(const std::string& bytes) { asio::write(impl_->sock, asio::buffer(bytes)); }

void GatewayClient::send(const json& msg) {
  const auto body = msg.dump();
  const auto head = be32(static_cast<std::uint32_t>(body.size()));
  send_raw(std::string(head.begin(), head.end()) + body);
}

json GatewayClient::receive(std::chrono::milliseconds timeout) {
  if (!impl_->pending.empty()) {
    auto m = std::move(impl_->pending.front());
    impl_->pending.pop_front();
    return m;
  }
  return impl_->read_frame(timeout);
}

json GatewayClient::request(json msg, std::chrono::milliseconds timeout) {
  const auto id = impl_->next_id++;
  msg["id"] = id;
  send(msg);
  for (;;) {
    auto m = impl_->read_frame(timeout);
    if (m.contains("id") && m["id"] == id) return m;
    impl_->pending.push_back(std::move(m));
  }
}

}  // namespace trsflow::steering
