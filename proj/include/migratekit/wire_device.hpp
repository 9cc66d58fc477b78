#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>

#include "migratekit/device.hpp"

namespace migratekit {

/// Bidirectional line transport. Implementations throw DriverError on
/// transport failure or EOF.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void send_line(const std::string& line) = 0;
  virtual std::string receive_line() = 0;
};

/// Line channel over a pair of file descriptors (a socket may be both).
class FdLineChannel : public LineChannel {
 public:
  FdLineChannel(int read_fd, int write_fd);
  ~FdLineChannel() override;
  FdLineChannel(const FdLineChannel&) = delete;
  FdLineChannel& operator=(const FdLineChannel&) = delete;

  void send_line(const std::string& line) override;
  std::string receive_line() override;
  /// Like receive_line but returns false on clean EOF.
  bool try_receive_line(std::string& line);

 protected:
  void close_fds();

 private:
  int read_fd_;
  int write_fd_;
  std::string buffer_;
};

/// Connects to `host:port` over TCP.
std::unique_ptr<LineChannel> connect_tcp(const std::string& host, int port);
/// Runs `command` through /bin/sh and talks to its standard streams.
std::unique_ptr<LineChannel> spawn_process(const std::string& command);

/// Device backend speaking the line-delimited JSON wire protocol:
/// requests {op:"reset"|"observe"} and {op:"execute", widget_id, action,
/// value?}; responses {ok:true, state:{...}} or {ok:false, reason}.
class WireDevice : public Device {
 public:
  explicit WireDevice(std::unique_ptr<LineChannel> channel);

  GuiState reset() override;
  GuiState observe() override;
  ExecOutcome execute(const ConcreteEvent& event) override;

 private:
  Json round_trip(const Json& request);
  std::unique_ptr<LineChannel> channel_;
};

/// `host:port` for TCP, or `stdio:<command>` for a child process.
std::unique_ptr<WireDevice> connect_wire_device(std::string_view address);

// Server side.

Json wire_request_reset();
Json wire_request_observe();
Json wire_request_execute(const ConcreteEvent& event);

/// Answers one request against `device`. Never throws: failures become
/// {ok:false, reason}.
Json handle_wire_request(Device& device, const Json& request);
/// Same, on raw lines (malformed JSON yields an ok:false response).
std::string handle_wire_line(Device& device, std::string_view line);

/// Serves requests line by line until EOF.
void serve_wire(Device& device, std::istream& in, std::ostream& out);

/// Loopback TCP server; port 0 picks a free port.
class WireServer {
 public:
  WireServer(Device& device, int port = 0);
  ~WireServer();
  WireServer(const WireServer&) = delete;
  WireServer& operator=(const WireServer&) = delete;

  int port() const noexcept { return port_; }
  /// Accepts one connection and serves it until the peer closes.
  void serve_one();

 private:
  Device& device_;
  int listen_fd_ = -1;
  int port_ = 0;
};

}  // namespace migratekit
