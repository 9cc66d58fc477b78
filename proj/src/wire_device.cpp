#include "migratekit/wire_device.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "migratekit/errors.hpp"

namespace migratekit {

namespace {

void ignore_sigpipe() {
  static const bool once = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

Json ok_response(const GuiState& state) {
  Json out = Json::object();
  out["ok"] = true;
  out["state"] = to_json(state);
  return out;
}

Json error_response(const std::string& reason) {
  Json out = Json::object();
  out["ok"] = false;
  out["reason"] = reason;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

FdLineChannel::FdLineChannel(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {
  ignore_sigpipe();
}

FdLineChannel::~FdLineChannel() { close_fds(); }

void FdLineChannel::close_fds() {
  if (read_fd_ >= 0) ::close(read_fd_);
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  read_fd_ = write_fd_ = -1;
}

void FdLineChannel::send_line(const std::string& line) {
  std::string data = line + "\n";
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + sent, data.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw DriverError(fmt::format("wire write failed: {}", std::strerror(errno)));
    }
    sent += static_cast<std::size_t>(n);
  }
}

bool FdLineChannel::try_receive_line(std::string& line) {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return true;
    }
    char chunk[4096];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw DriverError(fmt::format("wire read failed: {}", std::strerror(errno)));
    }
    if (n == 0) {
      if (buffer_.empty()) return false;
      line = std::move(buffer_);
      buffer_.clear();
      return true;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::string FdLineChannel::receive_line() {
  std::string line;
  if (!try_receive_line(line)) throw DriverError("wire peer closed the connection");
  return line;
}

std::unique_ptr<LineChannel> connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw DriverError(fmt::format("cannot resolve {}: {}", host, ::gai_strerror(rc)));
  int fd = -1;
  for (addrinfo* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw DriverError(fmt::format("cannot connect to {}:{}", host, port));
  return std::make_unique<FdLineChannel>(fd, fd);
}

namespace {

class ProcessChannel : public FdLineChannel {
 public:
  ProcessChannel(int read_fd, int write_fd, pid_t pid) : FdLineChannel(read_fd, write_fd), pid_(pid) {}
  ~ProcessChannel() override {
    close_fds();
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }

 private:
  pid_t pid_;
};

}  // namespace

std::unique_ptr<LineChannel> spawn_process(const std::string& command) {
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw DriverError("pipe failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw DriverError("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw DriverError("fork failed");
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
  return std::make_unique<ProcessChannel>(from_child[0], to_child[1], pid);
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

WireDevice::WireDevice(std::unique_ptr<LineChannel> channel) : channel_(std::move(channel)) {
  if (!channel_) throw DriverError("wire device needs a channel");
}

Json WireDevice::round_trip(const Json& request) {
  channel_->send_line(request.dump());
  const std::string line = channel_->receive_line();
  Json response;
  try {
    response = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw DriverError(std::string("malformed wire response: ") + e.what());
  }
  if (!response.is_object() || !response.contains("ok") || !response["ok"].is_boolean())
    throw DriverError("wire response lacks a boolean \"ok\"");
  return response;
}

namespace {

GuiState state_of(const Json& response) {
  if (!response.contains("state")) throw DriverError("wire response lacks \"state\"");
  try {
    return gui_state_from_json(response["state"]);
  } catch (const SchemaError& e) {
    throw DriverError(std::string("invalid state on the wire: ") + e.what());
  }
}

std::string reason_of(const Json& response) {
  auto it = response.find("reason");
  return it != response.end() && it->is_string() ? it->get<std::string>() : "unspecified";
}

}  // namespace

GuiState WireDevice::reset() {
  Json response = round_trip(wire_request_reset());
  if (!response["ok"].get<bool>()) throw DriverError("reset failed: " + reason_of(response));
  return state_of(response);
}

GuiState WireDevice::observe() {
  Json response = round_trip(wire_request_observe());
  if (!response["ok"].get<bool>()) throw DriverError("observe failed: " + reason_of(response));
  return state_of(response);
}

ExecOutcome WireDevice::execute(const ConcreteEvent& event) {
  Json response = round_trip(wire_request_execute(event));
  if (!response["ok"].get<bool>()) return ExecOutcome::rejected(reason_of(response));
  return ExecOutcome::ok(state_of(response));
}

std::unique_ptr<WireDevice> connect_wire_device(std::string_view address) {
  constexpr std::string_view stdio_prefix = "stdio:";
  if (address.substr(0, stdio_prefix.size()) == stdio_prefix)
    return std::make_unique<WireDevice>(spawn_process(std::string(address.substr(stdio_prefix.size()))));
  const auto colon = address.rfind(':');
  if (colon == std::string_view::npos) throw ConfigError("wire address must be host:port or stdio:<command>");
  const std::string host(address.substr(0, colon));
  int port = 0;
  try {
    port = std::stoi(std::string(address.substr(colon + 1)));
  } catch (const std::exception&) {
    throw ConfigError("invalid port in wire address " + std::string(address));
  }
  return std::make_unique<WireDevice>(connect_tcp(host, port));
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

Json wire_request_reset() { return Json{{"op", "reset"}}; }
Json wire_request_observe() { return Json{{"op", "observe"}}; }

Json wire_request_execute(const ConcreteEvent& event) {
  Json out = Json::object();
  out["op"] = "execute";
  out["widget_id"] = event.widget_id;
  out["action"] = action_token(event.action);
  if (event.value) out["value"] = *event.value;
  return out;
}

Json handle_wire_request(Device& device, const Json& request) {
  try {
    if (!request.is_object() || !request.contains("op") || !request["op"].is_string())
      return error_response("request lacks a string \"op\"");
    const std::string op = request["op"].get<std::string>();
    if (op == "reset") return ok_response(device.reset());
    if (op == "observe") return ok_response(device.observe());
    if (op == "execute") {
      auto id = request.find("widget_id");
      auto action_it = request.find("action");
      if (id == request.end() || !id->is_string()) return error_response("execute needs \"widget_id\"");
      if (action_it == request.end() || !action_it->is_string()) return error_response("execute needs \"action\"");
      auto action = parse_action(action_it->get<std::string>());
      if (!action) return error_response("unknown action \"" + action_it->get<std::string>() + "\"");
      ConcreteEvent event;
      event.widget_id = id->get<std::string>();
      event.action = *action;
      if (auto v = request.find("value"); v != request.end() && v->is_string()) event.value = v->get<std::string>();
      const GuiState current = device.observe();
      event.state_id = current.state_id;
      if (const StateWidget* w = current.find(event.widget_id)) event.widget = w->ref();
      ExecOutcome outcome = device.execute(event);
      if (!outcome.is_ok()) return error_response(outcome.reason());
      return ok_response(outcome.state());
    }
    return error_response("unknown op \"" + op + "\"");
  } catch (const std::exception& e) {
    return error_response(e.what());
  }
}

std::string handle_wire_line(Device& device, std::string_view line) {
  Json request;
  try {
    request = Json::parse(line);
  } catch (const Json::parse_error& e) {
    return error_response(std::string("malformed request: ") + e.what()).dump();
  }
  return handle_wire_request(device, request).dump();
}

void serve_wire(Device& device, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out << handle_wire_line(device, line) << '\n';
    out.flush();
  }
}

WireServer::WireServer(Device& device, int port) : device_(device) {
  ignore_sigpipe();
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw DriverError("socket failed");
  int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 4) != 0) {
    ::close(listen_fd_);
    throw DriverError(fmt::format("cannot listen on port {}: {}", port, std::strerror(errno)));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

WireServer::~WireServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void WireServer::serve_one() {
  const int fd = ::accept(listen_fd_, nullptr, nullptr);
  if (fd < 0) throw DriverError(fmt::format("accept failed: {}", std::strerror(errno)));
  FdLineChannel channel(fd, fd);
  std::string line;
  while (channel.try_receive_line(line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    channel.send_line(handle_wire_line(device_, line));
  }
}

}  // namespace migratekit
