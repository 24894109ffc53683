#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "cartooner/error.hpp"
#include "cartooner/server.hpp"
#include "httplib.h"
#include "test_support.hpp"

namespace {

using namespace cartooner;
using namespace cartooner::server;
using cartooner::testing::GoldenCase;
using cartooner::testing::TempDir;
using nlohmann::json;

const std::filesystem::path kGolden = cartooner::testing::fixture_dir() / "server" / "golden.json";

class ServerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    cartooner::testing::build_golden_model_dir(dir_->path());
    ServerConfig cfg;
    cfg.model_dir = dir_->path();
    cfg.port = 0;
    cfg.max_payload = 4u << 20;
    service_ = new Service(cfg);
    cases_ = new std::vector<GoldenCase>(cartooner::testing::load_golden_cases(kGolden));
  }
  static void TearDownTestSuite() {
    delete cases_;
    delete service_;
    delete dir_;
  }
  static const GoldenCase& find_case(const std::string& name) {
    for (const auto& c : *cases_) {
      if (c.name == name) return c;
    }
    throw std::runtime_error("no golden case " + name);
  }

  static TempDir* dir_;
  static Service* service_;
  static std::vector<GoldenCase>* cases_;
};

TempDir* ServerTest::dir_ = nullptr;
Service* ServerTest::service_ = nullptr;
std::vector<GoldenCase>* ServerTest::cases_ = nullptr;

TEST_F(ServerTest, GoldenCasesViaService) {
  ASSERT_GE(cases_->size(), 30u);
  for (const GoldenCase& c : *cases_) {
    const Response r = cartooner::testing::dispatch(*service_, c);
    EXPECT_EQ(r.status, c.status) << c.name << ": " << r.body.dump().substr(0, 300);
    const std::string diff = cartooner::testing::match_subset(c.expect, r.body);
    EXPECT_TRUE(diff.empty()) << c.name << ": " << diff;
    if (r.status >= 400) EXPECT_TRUE(r.body.contains("message")) << c.name;
  }
}

TEST_F(ServerTest, GoldenCasesOverHttp) {
  HttpServer http(*service_);
  const int port = http.bind();
  ASSERT_GT(port, 0);
  std::thread loop([&] { http.listen(); });
  http.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(120, 0);
  for (const GoldenCase& c : *cases_) {
    const httplib::Result res =
        c.method == "GET" ? client.Get(c.path) : client.Post(c.path, c.body, "application/json");
    ASSERT_TRUE(res) << c.name;
    EXPECT_EQ(res->status, c.status) << c.name;
    EXPECT_EQ(res->get_header_value("Content-Type"), "application/json") << c.name;
    const json body = json::parse(res->body);
    const std::string diff = cartooner::testing::match_subset(c.expect, body);
    EXPECT_TRUE(diff.empty()) << c.name << ": " << diff;
  }

  const auto unknown = client.Get("/api/nothing");
  ASSERT_TRUE(unknown);
  EXPECT_EQ(unknown->status, 404);
  EXPECT_EQ(json::parse(unknown->body)["code"], "not_found");

  const auto preflight = client.Options("/api/stylize");
  ASSERT_TRUE(preflight);
  EXPECT_EQ(preflight->status, 204);
  EXPECT_EQ(preflight->get_header_value("Access-Control-Allow-Origin"), "*");

  const auto big = client.Post("/api/stylize", std::string(5u << 20, 'x'), "application/json");
  ASSERT_TRUE(big);
  EXPECT_EQ(big->status, 413);
  http.stop();
  loop.join();
}

TEST_F(ServerTest, StylizeIsDeterministicAndThreadSafe) {
  const GoldenCase& c = find_case("stylize_fractional_levels");
  const Response first = service_->stylize(c.body);
  ASSERT_EQ(first.status, 200);
  std::vector<std::future<Response>> runs;
  for (int i = 0; i < 4; ++i) runs.push_back(std::async(std::launch::async, [&] { return service_->stylize(c.body); }));
  for (auto& f : runs) EXPECT_EQ(f.get().body["image"], first.body["image"]);
}

TEST_F(ServerTest, StylesReportModelVersionAndModes) {
  const Response r = service_->styles();
  ASSERT_EQ(r.status, 200);
  ASSERT_TRUE(r.body.is_array());
  ASSERT_EQ(r.body.size(), 2u);
  EXPECT_EQ(r.body[1]["name"], "Ink");
  EXPECT_FALSE(r.body[1]["model_version"].get<std::string>().empty());
}

TEST_F(ServerTest, BrokenCheckpointFailureIsSticky) {
  const GoldenCase& c = find_case("stylize_unloadable_checkpoint");
  EXPECT_EQ(service_->stylize(c.body).status, 500);
  EXPECT_EQ(service_->stylize(c.body).status, 500);
  EXPECT_THROW((void)service_->registry().slot("broken", ckpt::ColorMode::Target).model(), FormatError);
  EXPECT_THROW((void)service_->registry().slot("broken", ckpt::ColorMode::Preserve), NotFoundError);
}

TEST(ServerExtrapolation, WidensAdvertisedRange) {
  TempDir dir;
  cartooner::testing::build_golden_model_dir(dir.path());
  ServerConfig cfg;
  cfg.model_dir = dir.path();
  cfg.allow_extrapolation = true;
  const Service svc(cfg);
  EXPECT_EQ(svc.styles().body[0]["extrapolation"], true);
  const GoldenCase c = [] {
    for (const auto& g : cartooner::testing::load_golden_cases(kGolden)) {
      if (g.name == "stylize_alpha_above_range") return g;
    }
    throw std::runtime_error("missing case");
  }();
  EXPECT_EQ(svc.stylize(c.body).status, 200);
}

TEST(ServerRegistry, MissingDirectoryIsEmpty) {
  ServerConfig cfg;
  cfg.model_dir = "/nonexistent/models";
  const Service svc(cfg);
  EXPECT_EQ(svc.styles().body, json::array());
}

TEST(ServerCodec, Base64) {
  EXPECT_EQ(base64_encode("hello"), "aGVsbG8=");
  EXPECT_EQ(base64_decode("aGVsbG8="), "hello");
  EXPECT_EQ(base64_decode("data:image/png;base64,aGVsbG8="), "hello");
  EXPECT_EQ(base64_decode(base64_encode(std::string("\0\xff\x10", 3))), std::string("\0\xff\x10", 3));
  EXPECT_THROW((void)base64_decode("@@@"), ContractError);
}

TEST(ServerCodec, HexColors) {
  const Rgb c = parse_hex_color("#336699");
  EXPECT_DOUBLE_EQ(c[0], 0x33 / 255.0);
  EXPECT_DOUBLE_EQ(c[2], 0x99 / 255.0);
  EXPECT_EQ(to_hex_color(parse_hex_color("aBcDeF")), "#ABCDEF");
  EXPECT_THROW((void)parse_hex_color("#12345"), ContractError);
  EXPECT_THROW((void)parse_hex_color("#GG0000"), ContractError);
}

}  // namespace
