#include <doctest.h>

#include <random>

#include "rcfuse/serialize.hpp"
#include "support.hpp"

using namespace rcfuse;

namespace {

LayerNode conv(int id, int k, int stride, std::int64_t out, int pool = 1) {
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::Conv;
  n.kernel = k;
  n.stride = stride;
  n.pool = pool;
  n.out_channels = out;
  return n;
}

NetGraph single(LayerNode n, TensorShape input) {
  NetGraph g;
  g.input = input;
  g.layers.push_back(n);
  return infer_shapes(g);
}

}  // namespace

TEST_CASE("stride-2 conv halves the frame with floor semantics") {
  const auto g = single(conv(0, 3, 2, 16), {1280, 720, 3});
  CHECK(*g.layers[0].output_shape == TensorShape{640, 360, 16});
  const auto odd = single(conv(0, 3, 2, 16), {13, 7, 3});
  CHECK(*odd.layers[0].output_shape == TensorShape{6, 3, 16});
}

TEST_CASE("a graph without layers echoes its input") {
  NetGraph g;
  g.input = {32, 24, 5};
  const auto out = infer_shapes(g);
  CHECK(out.layers.empty());
  CHECK(out.input == TensorShape{32, 24, 5});
  CHECK(validate(out).empty());
}

TEST_CASE("shipped baseline reaches a 13x13 grid at 416x416") {
  const auto g = read_model_file(testsupport::model_path("yolov2_baseline.json"));
  CHECK(g.input.width == 416);
  const auto& last = *g.layers.back().output_shape;
  CHECK(last.width == 13);
  CHECK(last.height == 13);
  CHECK(validate(g).empty());
}

TEST_CASE("weight bytes per layer kind") {
  const auto c = single(conv(0, 3, 1, 32), {8, 8, 3});
  CHECK(layer_weight_bytes(c.layers[0], 1) == 864);
  CHECK(layer_weight_bytes(c.layers[0], 2) == 1728);

  LayerNode dw;
  dw.kind = LayerKind::DepthwiseConv;
  dw.kernel = 3;
  const auto d = single(dw, {8, 8, 32});
  CHECK(layer_weight_bytes(d.layers[0], 1) == 288);

  LayerNode pw;
  pw.kind = LayerKind::PointwiseConv;
  pw.out_channels = 24;
  const auto p = single(pw, {8, 8, 16});
  CHECK(layer_weight_bytes(p.layers[0], 1) == 16 * 24);

  LayerNode pool;
  pool.kind = LayerKind::MaxPool;
  pool.kernel = 2;
  pool.stride = 2;
  CHECK(layer_weight_bytes(single(pool, {8, 8, 4}).layers[0], 1) == 0);
}

TEST_CASE("bias counting adds one byte per output channel") {
  const auto c = single(conv(0, 3, 1, 32), {8, 8, 3});
  CHECK(layer_weight_bytes(c.layers[0], WeightOptions{1, true}) == 864 + 32);
  CHECK(layer_weight_bytes(c.layers[0], WeightOptions{1, false}) == 864);
}

TEST_CASE("shipped baseline parameter count") {
  const auto g = read_model_file(testsupport::model_path("yolov2_baseline.json"));
  // The layer table is a reconstruction; the count is pinned so changes are deliberate.
  CHECK(model_params(g) == 48'242'528);
}

TEST_CASE("feature bytes of a layer, with and without a skip source") {
  const auto g = single(conv(0, 3, 1, 32), {640, 360, 32});
  CHECK(layer_feature_bytes(g.layers[0], 1).in_bytes == 7'372'800);
  CHECK(layer_feature_bytes(g.layers[0], 1).out_bytes == 7'372'800);

  // two 100 KB maps into a residual add
  NetGraph r;
  r.input = {320, 320, 1};
  LayerNode pw;
  pw.kind = LayerKind::PointwiseConv;
  pw.out_channels = 1;
  r.layers.push_back(pw);
  r.layers.back().id = 0;
  r.layers.push_back(pw);
  r.layers.back().id = 1;
  LayerNode sum;
  sum.id = 2;
  sum.kind = LayerKind::ResidualAdd;
  sum.residual_from = 0;
  r.layers.push_back(sum);
  r = infer_shapes(r);
  CHECK(layer_feature_bytes(r.layers[2], 1).in_bytes == 2 * 102'400);
}

TEST_CASE("shipped baseline feature I/O at 1280x720") {
  const auto g = with_input(read_model_file(testsupport::model_path("yolov2_baseline.json")), {1280, 720, 3});
  Bytes total = 0;
  for (const auto& l : g.layers) {
    const auto fb = layer_feature_bytes(l, 1);
    total += fb.in_bytes + fb.out_bytes;
  }
  CHECK(static_cast<double>(total) == doctest::Approx(98e6).epsilon(0.15));
}

TEST_CASE("validation reports broken invariants") {
  NetGraph g;
  g.input = {8, 8, 4};
  LayerNode dw;
  dw.kind = LayerKind::DepthwiseConv;
  dw.kernel = 3;
  dw.in_channels = 4;
  dw.out_channels = 6;
  g.layers.push_back(dw);
  CHECK(validate(g).size() == 1);

  NetGraph f;
  f.input = {8, 8, 4};
  f.layers.push_back(conv(0, 3, 1, 4));
  LayerNode sum;
  sum.id = 1;
  sum.kind = LayerKind::ResidualAdd;
  sum.residual_from = 5;
  f.layers.push_back(sum);
  f.layers.push_back(conv(5, 3, 1, 4));
  CHECK(validate(f).size() == 1);

  LayerNode wide_pw;
  wide_pw.kind = LayerKind::PointwiseConv;
  wide_pw.kernel = 3;
  wide_pw.out_channels = 4;
  NetGraph p;
  p.input = {8, 8, 4};
  p.layers.push_back(wide_pw);
  CHECK_FALSE(validate(p).empty());

  for (const auto* name : {"yolov2_baseline.json", "yolov2_converted.json", "rc_yolov2_like.json", "toy_rcnet.json"}) {
    CHECK(validate(read_model_file(testsupport::model_path(name))).empty());
  }
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(single(conv(0, 3, 4, 8), {3, 3, 1}), ShapeError);

  NetGraph g;
  g.input = {8, 8, 4};
  g.layers.push_back(conv(0, 3, 2, 4));
  g.layers.push_back(conv(1, 3, 1, 4, 2));
  LayerNode late;
  late.id = 2;
  late.kind = LayerKind::ResidualAdd;
  late.residual_from = 0;  // 4x4 source into a 2x2 map
  g.layers.push_back(late);
  CHECK_THROWS_AS(infer_shapes(g), DanglingResidual);
}

TEST_CASE("properties on random graphs") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = testsupport::random_graph(rng);
    REQUIRE(validate(g).empty());
    CHECK(infer_shapes(g) == g);

    Bytes sum = 0;
    for (const auto& l : g.layers) sum += layer_weight_bytes(l, 1);
    CHECK(sum == model_weight_bytes(g));

    for (const auto& l : g.layers) {
      if (l.kind != LayerKind::Conv && l.kind != LayerKind::PointwiseConv) continue;
      auto doubled = l;
      doubled.out_channels *= 2;
      CHECK(layer_weight_bytes(doubled, 1) == 2 * layer_weight_bytes(l, 1));
    }
  }
}
