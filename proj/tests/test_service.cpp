#include "doctest.h"

#include "fbrs/image_io.hpp"
#include "fbrs/service.hpp"
#include "fbrs/synthetic.hpp"
#include "test_support.hpp"

#include "httplib.h"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <thread>

#include <unistd.h>

using namespace fbrs;
using nlohmann::json;

namespace {

struct Running {
  Service service;
  int port = 0;
  std::thread thread;

  Running(ServiceConfig cfg)
      : service(std::make_shared<const Model>(testing::toy_model(3)), std::move(cfg)) {
    port = service.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    thread = std::thread([this] { service.run(); });
    service.wait_until_ready();
  }
  ~Running() {
    service.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

ServiceConfig fast_config() {
  ServiceConfig cfg;
  cfg.engine.brs.max_lbfgs_iters = 5;
  cfg.engine.zoom_target = 40;
  return cfg;
}

std::string demo_png() {
  const auto s = gen_synthetic_dataset(1, 48, 56, 77)[0];
  const auto png = encode_png_image(s.image);
  return std::string(png.begin(), png.end());
}

std::string create(httplib::Client& c) {
  auto res = c.Post("/session", demo_png(), "image/png");
  REQUIRE(res);
  REQUIRE(res->status == 201);
  const auto j = json::parse(res->body);
  CHECK(j.at("height") == 48);
  CHECK(j.at("width") == 56);
  CHECK(j.at("config").at("variant") == "fbrs_b");
  return j.at("id").get<std::string>();
}

BinaryMask decode(const json& m) {
  return rle_decode(Rle{m.at("height").get<int>(), m.at("width").get<int>(),
                        m.at("counts").get<std::vector<std::uint32_t>>()});
}

json click(httplib::Client& c, const std::string& id, int u, int v, const json& label, int expect = 200) {
  auto res = c.Post("/session/" + id + "/click", json{{"u", u}, {"v", v}, {"label", label}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  return json::parse(res->body);
}

}  // namespace

TEST_CASE("config updates") {
  EngineConfig base;
  auto cfg = apply_config_update(base, R"({"variant": "rgb"})");
  CHECK(cfg.brs.variant == Variant::kRgb);
  CHECK(cfg.brs.click_limit == 4);
  cfg = apply_config_update(base, R"({"lambda": 0.5, "click_limit": 3, "zoom": false})");
  CHECK(cfg.brs.variant == Variant::kFbrsB);
  CHECK(cfg.brs.lambda == 0.5);
  CHECK(cfg.brs.click_limit == 3);
  CHECK_FALSE(cfg.zoom);
  CHECK_THROWS_AS(apply_config_update(base, R"({"colour": 1})"), ContractError);
  CHECK_THROWS_AS(apply_config_update(base, R"({"variant": "fbrs_z"})"), ContractError);
  CHECK_THROWS_AS(apply_config_update(base, R"({"lambda": "big"})"), ContractError);
  CHECK_THROWS_AS(apply_config_update(base, R"({"lambda": -1})"), ContractError);
  CHECK_THROWS_AS(apply_config_update(base, "[1]"), ContractError);
}

TEST_CASE("session lifecycle over HTTP") {
  Running r(fast_config());
  auto c = r.client();
  const std::string id = create(c);
  CHECK(r.service.session_count() == 1);

  json first = click(c, id, 20, 20, "positive");
  CHECK(first.at("click_count") == 1);
  const BinaryMask m1 = decode(first.at("mask"));
  CHECK(m1.count() == first.at("mask").at("pixels").get<std::size_t>());
  CHECK(first.at("diagnostics").at("mask_pixels") == m1.count());
  CHECK(first.at("diagnostics").at("variant") == "fbrs_b");

  json second = click(c, id, 5, 50, false);
  CHECK(second.at("click_count") == 2);
  const BinaryMask m2 = decode(second.at("mask"));

  // The mask endpoint returns what the last click returned.
  auto res = c.Get("/session/" + id + "/mask");
  REQUIRE(res);
  CHECK(decode(json::parse(res->body)) == m2);

  auto diag = c.Get("/session/" + id + "/diagnostics");
  REQUIRE(diag);
  CHECK(json::parse(diag->body).at("click_count") == 2);

  auto undo = c.Post("/session/" + id + "/undo", "", "application/json");
  REQUIRE(undo);
  const auto u = json::parse(undo->body);
  CHECK(u.at("undone") == true);
  CHECK(u.at("click_count") == 1);
  CHECK(decode(u.at("mask")) == m1);

  auto info = c.Get("/session/" + id);
  REQUIRE(info);
  CHECK(json::parse(info->body).at("clicks").size() == 1);

  auto reset = c.Post("/session/" + id + "/reset", "", "application/json");
  REQUIRE(reset);
  CHECK(decode(json::parse(reset->body).at("mask")).count() == 0);
  auto undo_empty = c.Post("/session/" + id + "/undo", "", "application/json");
  REQUIRE(undo_empty);
  CHECK(undo_empty->status == 200);
  CHECK(json::parse(undo_empty->body).at("undone") == false);

  auto del = c.Delete("/session/" + id);
  REQUIRE(del);
  CHECK(del->status == 200);
  CHECK(r.service.session_count() == 0);
  auto gone = c.Get("/session/" + id + "/mask");
  REQUIRE(gone);
  CHECK(gone->status == 404);
}

TEST_CASE("variant switch replays the clicks") {
  Running r(fast_config());
  auto c = r.client();
  const std::string id = create(c);
  click(c, id, 20, 20, 1);
  const auto before = click(c, id, 30, 40, 0);

  auto put = c.Put("/session/" + id + "/config", R"({"variant": "rgb"})", "application/json");
  REQUIRE(put);
  REQUIRE(put->status == 200);
  const auto j = json::parse(put->body);
  CHECK(j.at("config").at("variant") == "rgb");
  CHECK(j.at("config").at("click_limit") == 4);
  CHECK(j.at("click_count") == 2);
  auto diag = c.Get("/session/" + id + "/diagnostics");
  REQUIRE(diag);
  CHECK(json::parse(diag->body).at("variant") == "rgb");

  auto back = c.Put("/session/" + id + "/config", R"({"variant": "fbrs_b"})", "application/json");
  REQUIRE(back);
  CHECK(json::parse(back->body).at("mask") == before.at("mask"));
}

TEST_CASE("PNG mask formats") {
  Running r(fast_config());
  auto c = r.client();
  const std::string id = create(c);
  const auto j = click(c, id, 20, 20, "pos");
  auto prob = c.Get("/session/" + id + "/mask?format=prob_png");
  REQUIRE(prob);
  CHECK(prob->get_header_value("Content-Type") == "image/png");
  const Bytes pb(prob->body.begin(), prob->body.end());
  const auto pm = decode_png_mask(pb);
  CHECK(pm.height == 48);
  CHECK(pm.width == 56);
  auto mask = c.Get("/session/" + id + "/mask?format=mask_png");
  REQUIRE(mask);
  const Bytes mb(mask->body.begin(), mask->body.end());
  CHECK(decode_png_mask(mb) == decode(j.at("mask")));
  auto bad = c.Get("/session/" + id + "/mask?format=gif");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("bad requests are rejected with a reason") {
  ServiceConfig cfg = fast_config();
  cfg.max_sessions = 1;
  Running r(cfg);
  auto c = r.client();

  auto junk = c.Post("/session", "not a png", "image/png");
  REQUIRE(junk);
  CHECK(junk->status == 400);
  CHECK(json::parse(junk->body).contains("error"));

  const std::string id = create(c);
  auto full = c.Post("/session", demo_png(), "image/png");
  REQUIRE(full);
  CHECK(full->status == 503);

  click(c, id, 10, 10, "positive");
  const auto dup = click(c, id, 10, 10, "negative", 400);
  CHECK(dup.at("error").get<std::string>().find("already") != std::string::npos);
  click(c, id, 48, 0, "positive", 400);
  click(c, id, 1, 1, "maybe", 400);
  auto malformed = c.Post("/session/" + id + "/click", "{u: 1", "application/json");
  REQUIRE(malformed);
  CHECK(malformed->status == 400);
  auto bad_cfg = c.Put("/session/" + id + "/config", R"({"variant": "fbrs_q"})", "application/json");
  REQUIRE(bad_cfg);
  CHECK(bad_cfg->status == 400);
  auto missing = c.Post("/session/nope/click", R"({"u":1,"v":1,"label":1})", "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);
}

TEST_CASE("static UI files are served under /ui") {
  const auto dir = std::filesystem::temp_directory_path() / ("fbrs_ui_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "index.html") << "<html>annotator</html>";
  std::ofstream(dir / "app.js") << "console.log(1);";
  ServiceConfig cfg = fast_config();
  cfg.ui_dir = dir.string();
  {
    Running r(cfg);
    auto c = r.client();
    auto index = c.Get("/ui/index.html");
    REQUIRE(index);
    CHECK(index->status == 200);
    CHECK(index->body == "<html>annotator</html>");
    auto js = c.Get("/ui/app.js");
    REQUIRE(js);
    CHECK(js->body == "console.log(1);");
    auto root = c.Get("/ui/");
    REQUIRE(root);
    CHECK(root->body == "<html>annotator</html>");
    auto missing = c.Get("/ui/none.css");
    REQUIRE(missing);
    CHECK(missing->status == 404);
  }
  std::filesystem::remove_all(dir);
  cfg.ui_dir = dir.string();
  CHECK_THROWS_AS(Service(std::make_shared<const Model>(testing::toy_model(3)), cfg), ContractError);
}

TEST_CASE("concurrent clicks on separate sessions match sequential results") {
  Running r(fast_config());
  std::vector<std::string> ids;
  {
    auto c = r.client();
    for (int i = 0; i < 4; ++i) ids.push_back(create(c));
  }
  std::vector<json> results(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&, i] {
      auto c = r.client();
      click(c, ids[i], 20, 20, "positive");
      results[i] = click(c, ids[i], 30, 40, "negative");
    });
  for (auto& t : threads) t.join();
  for (int i = 1; i < 4; ++i) CHECK(results[i].at("mask") == results[0].at("mask"));
}
