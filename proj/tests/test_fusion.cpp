#include <doctest.h>

#include <random>

#include "rcfuse/fusion.hpp"
#include "rcfuse/serialize.hpp"
#include "support.hpp"

using namespace rcfuse;

namespace {

// Pointwise chain whose per-layer weights are [30,50,40,60,70,50,40] units of 105 bytes.
NetGraph greedy_toy() {
  NetGraph g;
  g.input = {16, 16, 42};
  const std::int64_t widths[] = {75, 70, 60, 105, 70, 75, 56};
  int id = 0;
  for (auto w : widths) {
    LayerNode n;
    n.id = id++;
    n.kind = LayerKind::PointwiseConv;
    n.out_channels = w;
    g.layers.push_back(n);
  }
  return infer_shapes(g);
}

LayerNode pw(int id, std::int64_t out) {
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::PointwiseConv;
  n.out_channels = out;
  return n;
}

LayerNode pool(int id) {
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::MaxPool;
  n.kernel = 2;
  n.stride = 2;
  return n;
}

std::vector<std::vector<int>> ids(const FusionPlan& p) {
  std::vector<std::vector<int>> out;
  for (const auto& g : p.groups) out.push_back(g.layer_ids);
  return out;
}

}  // namespace

TEST_CASE("greedy trace with 50% overshoot") {
  constexpr Bytes unit = 105;
  const auto g = greedy_toy();
  const std::vector<Bytes> sizes{30, 50, 40, 60, 70, 50, 40};
  for (std::size_t i = 0; i < sizes.size(); ++i) CHECK(layer_weight_bytes(g.layers[i], 1) == sizes[i] * unit);

  const auto plan = partition(g, 100 * unit, 0.5);
  CHECK(ids(plan) == std::vector<std::vector<int>>{{0, 1, 2}, {3, 4}, {5, 6}});
  REQUIRE(plan.groups.size() == 3);
  CHECK(plan.groups[0].weight_bytes == 120 * unit);
  CHECK(plan.groups[1].weight_bytes == 130 * unit);
  CHECK(plan.groups[2].weight_bytes == 90 * unit);
  for (const auto& grp : plan.groups) CHECK_FALSE(grp.degenerate);
}

TEST_CASE("a single oversized layer is its own degenerate group") {
  NetGraph g;
  g.input = {4, 4, 200};
  g.layers.push_back(pw(0, 1024));
  g = infer_shapes(g);
  CHECK(layer_weight_bytes(g.layers[0], 1) == 200 * 1024);
  const auto plan = partition(g, 100 * 1024, 0.5);
  REQUIRE(plan.groups.size() == 1);
  CHECK(plan.groups[0].degenerate);
}

TEST_CASE("toy model reproduces the 144 KB and 128 KB first-iteration groups") {
  const auto g = read_model_file(testsupport::model_path("toy_rcnet.json"));
  const auto plan = partition(g, 100 * 1024, 0.5);
  REQUIRE(plan.groups.size() == 2);
  CHECK(plan.groups[0].weight_bytes == 144 * 1024);
  CHECK(plan.groups[1].weight_bytes == 128 * 1024);
}

TEST_CASE("group weight size") {
  NetGraph g;
  g.input = {4, 4, 32};
  g.layers = {pw(0, 32), pw(1, 32)};
  g = infer_shapes(g);
  CHECK(group_weight_size(FusionGroup{}, g) == 0);
  CHECK(group_weight_size(FusionGroup{{0, 1}}, g) == 2048);
  CHECK(group_weight_size(FusionGroup{{0, 1}}, g, 2) == 4096);
}

TEST_CASE("guideline checks") {
  SUBCASE("split residual block") {
    NetGraph g;
    g.input = {8, 8, 8};
    g.layers = {pw(0, 8), pw(1, 8), pw(2, 8)};
    LayerNode sum;
    sum.id = 3;
    sum.kind = LayerKind::ResidualAdd;
    sum.residual_from = 0;
    g.layers.push_back(sum);
    g = infer_shapes(g);
    FusionPlan plan;
    plan.groups = {FusionGroup{{0, 1}}, FusionGroup{{2, 3}}};
    const auto v = check_guidelines(plan, g);
    REQUIRE(v.size() == 1);
    CHECK(v[0].guideline == 3);
    // the partitioner itself never splits it
    CHECK(check_guidelines(partition(g, 64, 0.0), g).empty());
  }
  SUBCASE("three pools in one group") {
    NetGraph g;
    g.input = {64, 64, 4};
    g.layers = {pw(0, 4), pool(1), pool(2), pool(3)};
    g = infer_shapes(g);
    FusionPlan plan;
    plan.groups = {FusionGroup{{0, 1, 2, 3}}};
    const auto v = check_guidelines(plan, g);
    REQUIRE(v.size() == 1);
    CHECK(v[0].guideline == 2);
    CHECK(v[0].layer_ids == std::vector<int>{1, 2, 3});
    // partitioning alone closes the group at the limit
    CHECK(ids(partition(g, 1 << 20, 0.5)) == std::vector<std::vector<int>>{{0, 1, 2}, {3}});
  }
  SUBCASE("downsampling stem alone") {
    NetGraph g;
    g.input = {64, 64, 3};
    LayerNode stem;
    stem.id = 0;
    stem.kind = LayerKind::Conv;
    stem.kernel = 3;
    stem.stride = 2;
    stem.out_channels = 8;
    g.layers = {stem, pw(1, 8)};
    g = infer_shapes(g);
    FusionPlan plan;
    plan.groups = {FusionGroup{{0}}, FusionGroup{{1}}};
    const auto v = check_guidelines(plan, g);
    REQUIRE(v.size() == 1);
    CHECK(v[0].guideline == 1);
  }
  SUBCASE("the stem's own downsampling is not counted") {
    NetGraph g;
    g.input = {64, 64, 3};
    LayerNode stem;
    stem.id = 0;
    stem.kind = LayerKind::Conv;
    stem.kernel = 3;
    stem.stride = 2;
    stem.out_channels = 8;
    g.layers = {stem, pool(1), pool(2)};
    g = infer_shapes(g);
    const auto plan = partition(g, 1 << 20, 0.5);
    CHECK(plan.groups.size() == 1);
    CHECK(check_guidelines(plan, g).empty());
  }
}

TEST_CASE("partition properties on random graphs") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = testsupport::random_graph(rng);
    const Bytes budget = testsupport::uniform(rng, 256, 40'000);
    const double m = testsupport::uniform(rng, 0, 10) / 10.0;
    const auto plan = partition(g, budget, m);

    std::vector<int> order;
    for (const auto& grp : plan.groups) {
      CHECK_FALSE(grp.layer_ids.empty());
      order.insert(order.end(), grp.layer_ids.begin(), grp.layer_ids.end());
      CHECK(grp.weight_bytes == group_weight_size(grp, g));
      if (!grp.degenerate) CHECK(static_cast<double>(grp.weight_bytes) <= (1 + m) * budget);
    }
    std::vector<int> expected;
    for (const auto& l : g.layers) expected.push_back(l.id);
    CHECK(order == expected);

    for (const auto& v : check_guidelines(plan, g)) {
      CHECK(v.guideline != 3);
      if (v.guideline == 2) CHECK_FALSE(plan.warnings.empty());
    }
    CHECK(partition(g, budget, m) == plan);
  }
}
