#pragma once

#include <memory>
#include <string>

#include "gsdeform/service.hpp"

namespace gsdeform {

/// HTTP front end over a SessionManager.
///
///   POST   /sessions                 {"scene": path, "labels": path?} -> {"id"}
///   GET    /sessions                 -> {"sessions": [...]}
///   DELETE /sessions/{id}
///   POST   /sessions/{id}/drags      {"camera_id", "drags": [{"pick":[x,y], "target":[x,y]}]}
///   POST   /sessions/{id}/step       {"n"} -> state payload
///   GET    /sessions/{id}/state      -> state payload (see encode_state)
///   GET    /sessions/{id}/history    -> JSON lines
///   GET    /sessions/{id}/groups     -> labels text
///   PUT    /sessions/{id}/groups     labels text
///
/// Failures answer with an error record and a status derived from the code.
class HttpServer {
 public:
  explicit HttpServer(std::shared_ptr<SessionManager> sessions);
  ~HttpServer();

  /// Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

int http_status(ErrorCode code);

}  // namespace gsdeform
