#include "gsdeform/http_server.hpp"

#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace gsdeform {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kBusy: return 409;
    case ErrorCode::kNoCorrespondence:
    case ErrorCode::kNoOverlap:
    case ErrorCode::kNoConsensus: return 422;
    case ErrorCode::kNumericalFailure:
    case ErrorCode::kDegenerateBlend:
    case ErrorCode::kIo: return 500;
    default: return 400;
  }
}

struct HttpServer::Impl {
  std::shared_ptr<SessionManager> sessions;
  httplib::Server server;
  std::thread thread;
};

namespace {

template <class F>
httplib::Server::Handler guarded(F body) {
  return [body](const httplib::Request& req, httplib::Response& res) {
    try {
      body(req, res);
    } catch (const Error& e) {
      res.status = http_status(e.code());
      res.set_content(error_record_json(e.code(), e.what()), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(error_record_json(ErrorCode::kSchema, e.what()), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(error_record_json(ErrorCode::kIo, e.what()), "application/json");
    }
  };
}

json parse_body(const httplib::Request& req) {
  json j = json::parse(req.body.empty() ? std::string("{}") : req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kSchema, "request body is not a JSON object");
  return j;
}

void send_state(httplib::Response& res, const StateSnapshot& s) {
  res.set_content(encode_state(s), "application/octet-stream");
}

std::vector<int> parse_labels(const std::string& text) {
  std::istringstream in(text);
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    long id = 0;
    int label = 0;
    if (!(ls >> id >> label)) throw Error(ErrorCode::kSchema, "labels body is not 'id label' lines");
    if (id != static_cast<long>(labels.size())) throw Error(ErrorCode::kData, "labels must list ids 0..N-1 in order");
    labels.push_back(label);
  }
  return labels;
}

}  // namespace

HttpServer::HttpServer(std::shared_ptr<SessionManager> sessions) : impl_(std::make_unique<Impl>()) {
  impl_->sessions = std::move(sessions);
  SessionManager& sm = *impl_->sessions;
  auto& srv = impl_->server;

  srv.Post("/sessions", guarded([&sm](const auto& req, auto& res) {
    const json body = parse_body(req);
    if (!body.contains("scene")) throw Error(ErrorCode::kSchema, "missing field 'scene'");
    std::optional<fs::path> labels;
    if (body.contains("labels")) labels = body.at("labels").template get<std::string>();
    const std::string id = sm.create_from_file(body.at("scene").template get<std::string>(), labels);
    res.status = 201;
    res.set_content(json{{"id", id}}.dump(), "application/json");
  }));
  srv.Get("/sessions", guarded([&sm](const auto&, auto& res) {
    res.set_content(json{{"sessions", sm.list()}}.dump(), "application/json");
  }));
  srv.Delete(R"(/sessions/([^/]+))", guarded([&sm](const auto& req, auto& res) {
    sm.remove(req.matches[1]);
    res.status = 204;
  }));
  srv.Post(R"(/sessions/([^/]+)/drags)", guarded([&sm](const auto& req, auto& res) {
    const json body = parse_body(req);
    std::vector<Drag> drags;
    for (const auto& d : body.at("drags")) {
      const auto p = d.at("pick").template get<std::vector<double>>();
      const auto t = d.at("target").template get<std::vector<double>>();
      if (p.size() != 2 || t.size() != 2) throw Error(ErrorCode::kSchema, "pick and target must be [x, y]");
      drags.push_back({Vec2(p[0], p[1]), Vec2(t[0], t[1])});
    }
    const DragResolution r = sm.set_drags(req.matches[1], body.at("camera_id").template get<int>(), drags);
    res.set_content(json{{"gaussian_ids", r.gaussian_ids}, {"unresolved", r.unresolved}}.dump(), "application/json");
  }));
  srv.Post(R"(/sessions/([^/]+)/step)", guarded([&sm](const auto& req, auto& res) {
    const json body = parse_body(req);
    send_state(res, *sm.step(req.matches[1], body.value("n", 1)));
  }));
  srv.Get(R"(/sessions/([^/]+)/state)", guarded([&sm](const auto& req, auto& res) {
    send_state(res, *sm.state(req.matches[1]));
  }));
  srv.Get(R"(/sessions/([^/]+)/history)", guarded([&sm](const auto& req, auto& res) {
    std::string out;
    for (const auto& r : sm.state(req.matches[1])->history) out += loss_record_json(r) + "\n";
    res.set_content(out, "application/x-ndjson");
  }));
  srv.Get(R"(/sessions/([^/]+)/groups)", guarded([&sm](const auto& req, auto& res) {
    const auto labels = sm.groups(req.matches[1]);
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) out += std::to_string(i) + " " + std::to_string(labels[i]) + "\n";
    res.set_content(out, "text/plain");
  }));
  srv.Put(R"(/sessions/([^/]+)/groups)", guarded([&sm](const auto& req, auto& res) {
    sm.set_groups(req.matches[1], parse_labels(req.body));
    res.status = 204;
  }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error(ErrorCode::kIo, "cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace gsdeform
