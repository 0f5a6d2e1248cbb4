#include <functional>

#include "agroforge/error.hpp"
#include "agroforge/expert_eval.hpp"
#include "agroforge/text.hpp"
#include "httplib.h"

namespace fs = std::filesystem;

namespace agroforge::expert_eval {

namespace {

int status_for(const std::string& code) {
  if (code == "UnknownSession" || code == "UnknownItem" || code == "NotFound") return 404;
  if (code == "AlreadyVoted") return 409;
  if (code == "IoError" || code == "CorruptStore") return 500;
  return 400;
}

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
  ordered_json body;
  body["error"] = code;
  body["message"] = message;
  send_json(res, status_for(code), body);
}

// Runs a handler and maps toolkit errors onto JSON error bodies.
httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.message());
    } catch (const json::exception& e) {
      send_error(res, "BadRequest", e.what());
    } catch (const std::exception& e) {
      send_error(res, "InternalError", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    fail("BadRequest", std::string("request body is not JSON: ") + e.what());
  }
}

ordered_json progress_json(const Progress& p) { return {{"voted", p.voted}, {"total", p.total}}; }

std::string content_type_for(const fs::path& p) {
  std::string ext = text::to_lower(p.extension().string());
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".webp") return "image/webp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  return "application/octet-stream";
}

}  // namespace

struct ExpertEvalServer::Impl {
  ExpertEvalStore& store;
  std::optional<StudyConfig> default_config;
  httplib::Server server;

  Impl(ExpertEvalStore& s, std::optional<StudyConfig> config) : store(s), default_config(std::move(config)) {
    // httplib's defaults add SO_REUSEPORT, which lets a second server share a
    // busy port instead of failing to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
  }

  void install_routes() {
    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  StudyConfig config;
                  if (text::trim(req.body).empty()) {
                    if (!default_config) fail("InvalidConfig", "no default study config; send one in the body");
                    config = *default_config;
                  } else {
                    config = StudyConfig::from_json(parse_body(req));
                  }
                  std::string id = store.create_session(config);
                  ordered_json body;
                  body["session_id"] = id;
                  body["pending"] = store.progress(id).total;
                  send_json(res, 201, body);
                }));

    server.Get(R"(/sessions/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::string id = req.matches[1];
                 auto item = store.next_item(id);
                 ordered_json body;
                 body["done"] = !item.has_value();
                 if (item) body["item"] = to_json(*item);
                 body["progress"] = progress_json(store.progress(id));
                 send_json(res, 200, body);
               }));

    server.Post(R"(/sessions/([^/]+)/votes)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  std::string id = req.matches[1];
                  json body = parse_body(req);
                  if (!body.is_object() || !body.contains("item_id") || !body.contains("choice")) {
                    fail("BadRequest", "vote body needs item_id and choice");
                  }
                  VoteAck ack = store.record_vote(id, body.at("item_id").get<std::string>(),
                                                  parse_choice(body.at("choice").get<std::string>()));
                  ordered_json out;
                  out["progress"] = progress_json(ack.progress);
                  out["duplicate"] = ack.duplicate;
                  send_json(res, 200, out);
                }));

    server.Get("/tally", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::vector<std::string> ids;
                 if (req.has_param("sessions")) {
                   for (auto& id : text::split(req.get_param_value("sessions"), ',')) {
                     std::string trimmed(text::trim(id));
                     if (!trimmed.empty()) ids.push_back(std::move(trimmed));
                   }
                 }
                 send_json(res, 200, store.tally(ids).to_json());
               }));

    server.Get(R"(/images/([^/]+)/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 fs::path path = store.image_file(req.matches[1], req.matches[2]);
                 if (!fs::is_regular_file(path)) fail("NotFound", "image file is missing");
                 res.set_content(io::read_text(path), content_type_for(path));
               }));
  }
};

ExpertEvalServer::ExpertEvalServer(ExpertEvalStore& store, std::optional<StudyConfig> default_config,
                                   std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>(store, std::move(default_config))) {
  impl_->install_routes();
  if (static_dir && !impl_->server.set_mount_point("/", static_dir->string())) {
    fail("InvalidConfig", "static directory " + static_dir->string() + " does not exist");
  }
}

ExpertEvalServer::~ExpertEvalServer() { stop(); }

int ExpertEvalServer::bind(const std::string& host, int port) {
  if (port == 0) {
    int bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) fail("BindFailed", "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) fail("BindFailed", "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ExpertEvalServer::serve() { impl_->server.listen_after_bind(); }

void ExpertEvalServer::wait_ready() { impl_->server.wait_until_ready(); }

void ExpertEvalServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace agroforge::expert_eval
