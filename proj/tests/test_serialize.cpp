#include <doctest.h>

#include <random>

#include "rcfuse/serialize.hpp"
#include "support.hpp"

using namespace rcfuse;

namespace {

template <typename T>
T through_text(const T& value) {
  Json j = value;
  return Json::parse(dump(j)).get<T>();
}

}  // namespace

TEST_CASE("models survive a text round trip") {
  for (const char* name : {"yolov2_baseline.json", "yolov2_converted.json", "rc_yolov2_like.json", "toy_rcnet.json"}) {
    const auto g = read_model_file(testsupport::model_path(name));
    CHECK(parse_model(dump(model_to_json(g))) == g);
  }
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testsupport::random_graph(rng);
    CHECK(parse_model(dump(model_to_json(g))) == g);
  }
}

TEST_CASE("malformed models raise parse errors") {
  CHECK_THROWS_AS(parse_model("{"), ParseError);
  CHECK_THROWS_AS(parse_model("[]"), ParseError);
  CHECK_THROWS_AS(parse_model(R"({"input": {"w": 8, "h": 8, "c": 3}, "layers": [{"id": 0, "kind": "blob"}]})"),
                  ParseError);
  CHECK_THROWS_AS(parse_model(R"({"input": {"w": 8, "h": 8}, "layers": []})"), ParseError);
  CHECK_THROWS(read_model_file("/nonexistent/model.json"));
}

TEST_CASE("plans, tiles, schedules and reports round trip") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testsupport::random_graph(rng);
    const auto plan = partition(g, testsupport::uniform(rng, 256, 20'000), 0.5);
    CHECK(through_text(plan) == plan);
    const auto tiles = plan_tiles(plan, g, testsupport::uniform(rng, 256, 20'000));
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      CHECK(through_text(tiles[i]) == tiles[i]);
      if (!tiles[i].feasible) continue;
      const auto schedule = make_schedule(plan.groups[i], tiles[i]);
      CHECK(through_text(schedule) == schedule);
    }
    const auto perf = estimate_cycles(g);
    CHECK(through_text(perf) == perf);
    const auto traffic = fused_traffic(g, plan, tiles);
    CHECK(through_text(traffic) == traffic);
    CHECK(through_text(layer_by_layer_traffic(g)) == layer_by_layer_traffic(g));
  }
}

TEST_CASE("architecture and sweep points round trip") {
  ArchConfig a;
  a.clock_hz = 2.5e8;
  a.weight_buffer_bytes = 12345;
  CHECK(through_text(a) == a);
  CHECK(through_text(ArchConfig{}) == ArchConfig{});

  SweepPoint p;
  p.weight_buffer = 50 * 1024;
  p.groups = 7;
  p.planned_bandwidth = 1.0 / 3.0;
  p.bandwidth = 0.1;
  p.saturated = true;
  CHECK(through_text(p) == p);
}

TEST_CASE("gamma tables round trip through text") {
  const auto g = read_model_file(testsupport::model_path("toy_rcnet.json"));
  const auto table = synthetic_gammas(g, 9);
  std::ostringstream os;
  write_gamma_text(os, table);
  CHECK(parse_gamma_text(os.str()) == table);
}
