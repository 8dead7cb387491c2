#pragma once

#include "fbrs/engine.hpp"

#include <cstddef>
#include <memory>
#include <string>

namespace fbrs {

struct ServiceConfig {
  EngineConfig engine;          // applied to every new session
  std::string ui_dir;           // served under /ui when non-empty
  std::size_t max_sessions = 64;
  std::size_t max_upload_bytes = 32u << 20;
};

/// Engine config as the JSON object used by the HTTP API.
std::string engine_config_to_json(const EngineConfig& cfg);

/// Applies a partial JSON update {variant, lambda, click_limit, zoom,
/// max_lbfgs_iters, warm_start, satisfied_stop, zoom_target}. A new variant starts from that variant's
/// defaults before the other fields are applied. Throws ContractError on
/// unknown keys or bad values.
EngineConfig apply_config_update(const EngineConfig& base, const std::string& json);

/// HTTP front end over in-memory sessions. Requests on one session are
/// serialized; different sessions run concurrently on the shared model.
///
///   POST /session                 body: PNG bytes -> {id, height, width, config}
///   GET  /session/{id}            -> {id, height, width, clicks, config}
///   DELETE /session/{id}
///   POST /session/{id}/click      {u, v, label} -> {click_count, mask, diagnostics}
///   POST /session/{id}/undo       -> {undone, click_count, mask}
///   POST /session/{id}/reset      -> {click_count, mask}
///   PUT  /session/{id}/config     partial config -> {config, click_count, mask}
///   GET  /session/{id}/mask       -> RLE JSON; ?format=prob_png or ?format=mask_png for PNG
///   GET  /session/{id}/diagnostics
///   GET  /ui/...                  static files
///
/// Errors are {"error": message} with 400 (bad request), 404 (unknown
/// session), 413 (upload too large) or 503 (session limit).
class Service {
 public:
  Service(std::shared_ptr<const Model> model, ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds to host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); requires bind().
  void run();
  void stop();
  void wait_until_ready() const;

  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fbrs
