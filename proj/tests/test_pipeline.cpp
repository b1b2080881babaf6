#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rcfuse/pipeline.hpp"
#include "support.hpp"

using namespace rcfuse;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / ("rcfuse_test_" + name);
  std::ofstream(path) << text;
  return path.string();
}

RunConfig config_for(const std::string& model) {
  RunConfig c;
  c.model_path = testsupport::model_path(model);
  return c;
}

}  // namespace

TEST_CASE("byte sizes") {
  CHECK(parse_bytes("98304") == 98'304);
  CHECK(parse_bytes("96K") == 98'304);
  CHECK(parse_bytes("96k") == 98'304);
  CHECK(parse_bytes("1.5M") == 1'572'864);
  for (const char* bad : {"", "K", "12Q", "-4K", "0", "3..4"}) CHECK_THROWS_AS(parse_bytes(bad), std::invalid_argument);

  CHECK(parse_sizes("50K..100K:25K") == std::vector<Bytes>{51'200, 76'800, 102'400});
  CHECK(parse_sizes("50K..100K").size() == 3);
  CHECK(parse_sizes("1K,2K") == std::vector<Bytes>{1024, 2048});
  CHECK_THROWS(parse_sizes("100K..50K"));
}

TEST_CASE("errors map to distinct exit statuses") {
  CHECK(classify_error(ParseError("x")).first == kExitParse);
  CHECK(classify_error(Infeasible("x")).first == kExitInfeasible);
  CHECK(classify_error(std::invalid_argument("x")).first == kExitValidation);
  RunConfig bad;
  bad.fps = 0;
  CHECK_THROWS_AS(bad.check(), std::invalid_argument);
  RunConfig good;
  CHECK_NOTHROW(good.check());
  CHECK(good.arch().weight_buffer_bytes == good.weight_buffer);
}

TEST_CASE("identical inputs and seed give byte-identical reports") {
  auto c = config_for("toy_rcnet.json");
  const auto a = full_pipeline(c);
  const auto b = full_pipeline(c);
  CHECK(dump(a.json) == dump(b.json));
  CHECK(a.text == b.text);

  c.seed = 2;
  const auto other = full_pipeline(c);
  CHECK(dump(other.json) != dump(a.json));  // synthetic gammas follow the seed
}

TEST_CASE("a one-layer model gives one group and one tile") {
  const auto path = write_temp("one_layer.json", R"({
    "name": "one", "input": {"w": 16, "h": 16, "c": 3},
    "layers": [{"id": 0, "kind": "conv", "k": 3, "stride": 1, "out_channels": 8}]})");
  RunConfig c;
  c.model_path = path;
  const auto out = full_pipeline(c);
  CHECK(out.json.at("plan").at("groups").size() == 1);
  CHECK(out.json.at("tiles").at(0).at("tile_count") == 1);
  CHECK(out.json.at("params").at("final") == 216);
  const auto& traffic = out.json.at("traffic");
  CHECK(traffic.at("final_fused").at("total_mb_per_frame").get<double>() ==
        doctest::Approx(traffic.at("final_layer_by_layer").at("total_mb_per_frame").get<double>()));
  std::filesystem::remove(path);
}

TEST_CASE("stage outputs") {
  const auto c = config_for("rc_yolov2_like.json");
  const auto plan = run_plan(c);
  CHECK(plan.json.at("plan").at("groups").size() > 1);
  const auto report = run_report(c);
  CHECK(report.text.find('%') != std::string::npos);
  const auto sweep = run_sweep(c, parse_sizes("50K..300K:50K"));
  CHECK(sweep.json.at("points").size() == 6);
}

TEST_CASE("a malformed model file is a parse error") {
  const auto path = write_temp("broken.json", "{ not json");
  RunConfig c;
  c.model_path = path;
  try {
    full_pipeline(c);
    FAIL("expected a parse error");
  } catch (const std::exception& e) {
    CHECK(classify_error(e).first == kExitParse);
  }
  std::filesystem::remove(path);
}
