#include "fbrs/service.hpp"

#include "fbrs/image_io.hpp"

#include "httplib.h"
#include "json.hpp"

#include <filesystem>
#include <mutex>
#include <random>
#include <unordered_map>

namespace fbrs {

using nlohmann::json;

namespace {

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

json mask_json(const BinaryMask& m) {
  const auto r = rle_encode(m);
  return {{"height", r.height}, {"width", r.width}, {"counts", r.counts}, {"pixels", m.count()}};
}

json config_json(const EngineConfig& cfg) {
  return {{"variant", to_string(cfg.brs.variant)},
          {"lambda", cfg.brs.lambda},
          {"click_limit", cfg.brs.click_limit},
          {"max_lbfgs_iters", cfg.brs.max_lbfgs_iters},
          {"warm_start", cfg.brs.warm_start},
          {"satisfied_stop", to_string(cfg.brs.satisfied_stop)},
          {"zoom", cfg.zoom},
          {"zoom_target", cfg.zoom_target},
          {"zoom_expand", cfg.zoom_expand},
          {"zoom_start_click", cfg.zoom_start_click}};
}

ClickLabel parse_label(const json& j) {
  if (j.is_boolean()) return j.get<bool>() ? ClickLabel::kPositive : ClickLabel::kNegative;
  if (j.is_number_integer()) {
    const auto v = j.get<long long>();
    if (v == 0 || v == 1) return v ? ClickLabel::kPositive : ClickLabel::kNegative;
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "positive" || s == "pos") return ClickLabel::kPositive;
    if (s == "negative" || s == "neg") return ClickLabel::kNegative;
  }
  throw ContractError("label must be \"positive\", \"negative\", true/false or 1/0");
}

json parse_body(const httplib::Request& req) {
  try {
    return req.body.empty() ? json::object() : json::parse(req.body);
  } catch (const json::exception& e) {
    throw ContractError(std::string("malformed JSON: ") + e.what());
  }
}

std::string new_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

}  // namespace

std::string engine_config_to_json(const EngineConfig& cfg) { return config_json(cfg).dump(); }

EngineConfig apply_config_update(const EngineConfig& base, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ContractError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ContractError("config update must be a JSON object");
  EngineConfig cfg = base;
  try {
    if (j.contains("variant")) {
      const auto v = variant_from_string(j.at("variant").get<std::string>());
      if (v != cfg.brs.variant) {
        const int iters = cfg.brs.max_lbfgs_iters;
        cfg.brs = BRSConfig::defaults(v);
        cfg.brs.max_lbfgs_iters = iters;
      }
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "variant") continue;
      if (key == "lambda") cfg.brs.lambda = value.get<double>();
      else if (key == "click_limit") cfg.brs.click_limit = value.get<int>();
      else if (key == "max_lbfgs_iters") cfg.brs.max_lbfgs_iters = value.get<int>();
      else if (key == "warm_start") cfg.brs.warm_start = value.get<bool>();
      else if (key == "satisfied_stop") cfg.brs.satisfied_stop = satisfied_stop_from_string(value.get<std::string>());
      else if (key == "zoom") cfg.zoom = value.get<bool>();
      else if (key == "zoom_target") cfg.zoom_target = value.get<int>();
      else throw ContractError("unknown config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("bad config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

struct Service::Impl {
  struct Entry {
    std::mutex mu;
    Session session;
    Entry(std::shared_ptr<const Model> m, ImageTensor img, EngineConfig cfg, std::string id)
        : session(std::move(m), std::move(img), std::move(cfg), std::move(id)) {}
  };

  std::shared_ptr<const Model> model;
  ServiceConfig cfg;
  httplib::Server server;
  mutable std::mutex registry_mu;
  std::unordered_map<std::string, std::shared_ptr<Entry>> sessions;

  std::shared_ptr<Entry> find(const std::string& id) {
    std::lock_guard lock(registry_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpError(404, "no session " + id);
    return it->second;
  }

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  // Maps exceptions to JSON error responses.
  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      int status = 200;
      std::string message;
      try {
        h(req, res);
        return;
      } catch (const HttpError& e) {
        status = e.status;
        message = e.what();
      } catch (const ContractError& e) {
        status = 400;
        message = e.what();
      } catch (const CapabilityError& e) {
        status = 400;
        message = e.what();
      } catch (const std::exception& e) {
        status = 500;
        message = e.what();
      }
      res.status = status;
      res.set_content(json{{"error", message}}.dump(), "application/json");
    };
  }

  // Runs `fn` on the session with its lock held and replies with its JSON.
  Handler with_session(std::function<json(Session&, const httplib::Request&, httplib::Response&)> fn) {
    return guarded([this, fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
      auto entry = find(req.matches[1]);
      std::lock_guard lock(entry->mu);
      json out = fn(entry->session, req, res);
      if (!out.is_null()) res.set_content(out.dump(), "application/json");
    });
  }

  void install() {
    server.set_payload_max_length(cfg.max_upload_bytes);

    server.Post("/session", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Bytes png;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) throw ContractError("multipart upload needs an \"image\" field");
        const auto f = req.get_file_value("image");
        png.assign(f.content.begin(), f.content.end());
      } else {
        png.assign(req.body.begin(), req.body.end());
      }
      if (png.empty()) throw ContractError("empty image upload");
      ImageTensor image = decode_png_image(png);
      const std::string id = new_id();
      auto entry = std::make_shared<Entry>(model, std::move(image), cfg.engine, id);
      {
        std::lock_guard lock(registry_mu);
        if (sessions.size() >= cfg.max_sessions) throw HttpError(503, "session limit reached");
        sessions.emplace(id, entry);
      }
      const auto& s = entry->session;
      res.status = 201;
      res.set_content(json{{"id", id},
                           {"height", s.image().height()},
                           {"width", s.image().width()},
                           {"config", config_json(s.config())}}
                          .dump(),
                      "application/json");
    }));

    server.Get(R"(/session/([^/]+))", with_session([](Session& s, const auto&, auto&) {
      json clicks = json::array();
      for (const auto& c : s.clicks()) clicks.push_back({{"u", c.u}, {"v", c.v}, {"positive", c.positive()}});
      return json{{"id", s.id()},
                  {"height", s.image().height()},
                  {"width", s.image().width()},
                  {"clicks", clicks},
                  {"config", config_json(s.config())}};
    }));

    server.Delete(R"(/session/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(registry_mu);
      if (sessions.erase(req.matches[1]) == 0) throw HttpError(404, "no session " + std::string(req.matches[1]));
      res.set_content(json{{"deleted", true}}.dump(), "application/json");
    }));

    server.Post(R"(/session/([^/]+)/click)", with_session([](Session& s, const auto& req, auto&) {
      const json body = parse_body(req);
      if (!body.contains("u") || !body.contains("v") || !body.contains("label"))
        throw ContractError("click needs u, v and label");
      if (!body.at("u").is_number_integer() || !body.at("v").is_number_integer())
        throw ContractError("u and v must be integers");
      const auto update = s.add_click(body.at("u").get<int>(), body.at("v").get<int>(), parse_label(body.at("label")));
      return json{{"click_count", update.click_count},
                  {"mask", mask_json(update.mask)},
                  {"diagnostics", json::parse(diagnostics_to_json(update.diagnostics, s.config().brs))}};
    }));

    server.Post(R"(/session/([^/]+)/undo)", with_session([](Session& s, const auto&, auto&) {
      const auto update = s.undo();
      return json{{"undone", update.has_value()},
                  {"click_count", static_cast<int>(s.clicks().size())},
                  {"mask", mask_json(s.mask())}};
    }));

    server.Post(R"(/session/([^/]+)/reset)", with_session([](Session& s, const auto&, auto&) {
      const auto update = s.reset();
      return json{{"click_count", update.click_count}, {"mask", mask_json(update.mask)}};
    }));

    server.Put(R"(/session/([^/]+)/config)", with_session([](Session& s, const auto& req, auto&) {
      const auto update = s.set_config(apply_config_update(s.config(), req.body.empty() ? "{}" : req.body));
      return json{{"config", config_json(s.config())},
                  {"click_count", update.click_count},
                  {"mask", mask_json(update.mask)}};
    }));

    server.Get(R"(/session/([^/]+)/mask)", with_session([](Session& s, const auto& req, auto& res) -> json {
      const std::string format = req.has_param("format") ? req.get_param_value("format") : "rle";
      if (format == "rle") return mask_json(s.mask());
      Bytes png;
      if (format == "prob_png") png = encode_png_prob(s.prob_map());
      else if (format == "mask_png") png = encode_png_mask(s.mask());
      else throw ContractError("format must be rle, prob_png or mask_png");
      res.set_content(std::string(png.begin(), png.end()), "image/png");
      return nullptr;
    }));

    server.Get(R"(/session/([^/]+)/diagnostics)", with_session([](Session& s, const auto&, auto&) {
      return json::parse(diagnostics_to_json(s.state().diagnostics, s.config().brs));
    }));

    if (!cfg.ui_dir.empty()) {
      if (!std::filesystem::is_directory(cfg.ui_dir)) throw ContractError("ui directory not found: " + cfg.ui_dir);
      server.Get("/ui", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/ui/"); });
      server.set_mount_point("/ui", cfg.ui_dir);
    }
  }
};

Service::Service(std::shared_ptr<const Model> model, ServiceConfig cfg) : impl_(std::make_unique<Impl>()) {
  if (!model) throw ContractError("service needs a model");
  cfg.engine.validate();
  if (cfg.max_sessions == 0) throw ContractError("max_sessions must be positive");
  impl_->model = std::move(model);
  impl_->cfg = std::move(cfg);
  impl_->install();
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) return -1;
  return port;
}

void Service::run() { impl_->server.listen_after_bind(); }
void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}
void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::size_t Service::session_count() const {
  std::lock_guard lock(impl_->registry_mu);
  return impl_->sessions.size();
}

}  // namespace fbrs
