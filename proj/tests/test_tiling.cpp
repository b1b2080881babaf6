#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "rcfuse/tiling.hpp"
#include "support.hpp"

using namespace rcfuse;

namespace {

LayerNode pw(int id, std::int64_t out, int pool = 1) {
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::PointwiseConv;
  n.out_channels = out;
  n.pool = pool;
  return n;
}

NetGraph graph_of(TensorShape input, std::vector<LayerNode> layers) {
  NetGraph g;
  g.input = input;
  g.layers = std::move(layers);
  return infer_shapes(g);
}

FusionGroup whole(const NetGraph& g) {
  FusionGroup grp;
  for (const auto& l : g.layers) grp.layer_ids.push_back(l.id);
  return grp;
}

// Largest row count meeting rows * W * C * bpa <= half * PF for every map of the group.
std::int64_t brute_max_rows(const NetGraph& g, const FusionGroup& grp, Bytes half) {
  const auto start = *g.index_of(grp.layer_ids.front());
  const std::int64_t width = g.layers[start].input_shape->width;
  std::int64_t factor = 1;
  std::int64_t best = g.layers[start].input_shape->height;
  auto limit = [&](std::int64_t channels) {
    // rows * width * channels <= half * factor^2
    return half * factor * factor / (width * channels);
  };
  for (std::size_t i = start; i < start + grp.layer_ids.size(); ++i) {
    const auto& l = g.layers[i];
    std::int64_t in_c = l.input_shape->channels + (l.source_shape ? l.source_shape->channels : 0);
    best = std::min(best, limit(in_c));
    factor *= l.stride * l.pool;
    best = std::min(best, limit(l.output_shape->channels));
  }
  return best;
}

}  // namespace

TEST_CASE("single layer tile: 128 wide, 32 channels, 64 KB half") {
  const auto g = graph_of({128, 64, 32}, {pw(0, 32)});
  const auto plan = solve_tile(whole(g), g, 65'536);
  CHECK(plan.tile_width == 128);
  CHECK(plan.tile_height == 16);
  CHECK(plan.tile_count == 4);
  CHECK(plan.feasible);
  for (const auto& o : plan.occupancy) {
    CHECK(o.input_bytes <= 65'536);
    CHECK(o.output_bytes <= 65'536);
  }
}

TEST_CASE("a post-pool layer does not tighten the bound") {
  const auto g = graph_of({128, 64, 32}, {pw(0, 32, 2), pw(1, 64)});
  const auto [in1, out1] = pooling_factors(whole(g), g, 1);
  CHECK(in1.area() == 4);
  // its bound is 4,096 group-input elements, looser than the 2,048 of layer 0
  CHECK(tile_map_bytes(4096, in1, 64, 1) == 65'536);
  CHECK(tile_map_bytes(4097, in1, 64, 1) > 65'536);
  const auto plan = solve_tile(whole(g), g, 65'536);
  CHECK(plan.max_tile_height == 16);
  CHECK(plan.tile_height == 16);
  CHECK(plan.row_alignment == 2);
}

TEST_CASE("a half smaller than one row is infeasible") {
  const auto g = graph_of({128, 64, 32}, {pw(0, 32)});
  CHECK_THROWS_AS(solve_tile(whole(g), g, 1000), TileInfeasible);

  FusionPlan fp;
  fp.groups = {whole(g)};
  const auto tiles = plan_tiles(fp, g, 1000);
  REQUIRE(tiles.size() == 1);
  CHECK_FALSE(tiles[0].feasible);
  CHECK(tiles[0].tile_count == 1);
  CHECK(tiles[0].tile_height == 64);
}

TEST_CASE("a frame that fits is a single tile") {
  const auto g = graph_of({16, 10, 4}, {pw(0, 4)});
  const auto plan = solve_tile(whole(g), g, 1 << 20);
  CHECK(plan.tile_height == 10);
  CHECK(plan.tile_count == 1);
}

TEST_CASE("ping-pong schedule alternation") {
  const auto g = graph_of({8, 8, 4}, {pw(0, 4), pw(1, 4), pw(2, 4)});
  TilePlan one;
  one.tile_count = 1;
  one.tile_height = 8;
  one.frame_height = 8;
  const auto s = make_schedule(whole(g), one);
  REQUIRE(s.steps.size() == 3);
  CHECK(s.steps[0].input_half == BufferHalf::Left);
  CHECK(s.steps[0].output_half == BufferHalf::Right);
  CHECK(s.steps[1].input_half == BufferHalf::Right);
  CHECK(s.steps[1].output_half == BufferHalf::Left);
  CHECK(s.steps[2].input_half == BufferHalf::Left);
  CHECK(s.steps[2].output_half == BufferHalf::Right);

  const auto two_layers = graph_of({8, 8, 4}, {pw(0, 4), pw(1, 4)});
  TilePlan two = one;
  two.tile_count = 2;
  two.tile_height = 4;
  const auto s2 = make_schedule(whole(two_layers), two);
  CHECK(s2.steps.size() == 4);
  CHECK(s2.external_loads == 2);
  CHECK(s2.external_stores == 2);
  // an even layer count leaves the group output in the starting half
  CHECK(s2.steps[1].output_half == s2.steps[0].input_half);
  for (const auto& step : s2.steps) CHECK(step.input_half != step.output_half);
}

TEST_CASE("boundary extension") {
  Tensor<int> tile(1, 2, 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) tile(0, y, x) = 10 * (y + 1) + x;

  const auto zero = extend_boundary(tile, BoundaryPolicy::ZeroPad, 3);
  CHECK(zero.height() == 4);
  for (int x = 0; x < 3; ++x) {
    CHECK(zero(0, 0, x) == 0);
    CHECK(zero(0, 3, x) == 0);
    CHECK(zero(0, 1, x) == tile(0, 0, x));
  }

  const auto rep = extend_boundary(tile, BoundaryPolicy::Replicate, 3);
  for (int x = 0; x < 3; ++x) {
    CHECK(rep(0, 0, x) == tile(0, 0, x));
    CHECK(rep(0, 3, x) == tile(0, 1, x));
  }

  // frame edges pad with zeros whatever the seam policy
  const auto edge = extend_boundary(tile, BoundaryPolicy::Replicate, 5, true, false);
  CHECK(edge.height() == 6);
  CHECK(edge(0, 0, 0) == 0);
  CHECK(edge(0, 1, 0) == 0);
  CHECK(edge(0, 5, 0) == tile(0, 1, 0));

  CHECK(extend_boundary(tile, BoundaryPolicy::ZeroPad, 1) == tile);
  CHECK(extend_boundary(tile, BoundaryPolicy::Replicate, 1) == tile);
}

TEST_CASE("boundary policy names") {
  CHECK(parse_boundary_policy("zero") == BoundaryPolicy::ZeroPad);
  CHECK(parse_boundary_policy("replicate") == BoundaryPolicy::Replicate);
  CHECK(to_string(BoundaryPolicy::Replicate) == "replicate");
  CHECK_THROWS_AS(parse_boundary_policy("mirror"), std::invalid_argument);
}

TEST_CASE("write-mask map: pinned examples") {
  const auto a = writemask_map(0, 0, 64);
  CHECK(a.bank == 0);
  CHECK(a.byte_lane == 0);
  CHECK(a.word == 0);
  const auto b = writemask_map(1, 3, 64);
  CHECK(b.bank == 3);
  CHECK(b.byte_lane == 1);
  // second channel group lands after ceil(S / 8) words
  CHECK(writemask_map(9, 11, 20).word == 1 * 3 + 1);
  CHECK_THROWS_AS(writemask_map(20, 0, 20), std::out_of_range);
}

TEST_CASE("write-mask map: an 8x8 block fills 64 slots, eight per bank") {
  std::set<BankAddress> seen;
  std::map<int, int> per_bank;
  for (int s = 0; s < 8; ++s)
    for (int c = 0; c < 8; ++c) {
      const auto addr = writemask_map(s, c, 8);
      seen.insert(addr);
      ++per_bank[addr.bank];
    }
  CHECK(seen.size() == 64);
  for (int b = 0; b < kBanks; ++b) CHECK(per_bank[b] == 8);
}

TEST_CASE("write-mask map is a bijection on random rectangles") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::int64_t s_count = testsupport::uniform(rng, 1, 70);
    const std::int64_t c_count = testsupport::uniform(rng, 1, 40);
    std::set<BankAddress> seen;
    const std::int64_t words = testsupport::ceil_div(s_count, 8) * testsupport::ceil_div(c_count, 8);
    for (std::int64_t s = 0; s < s_count; ++s)
      for (std::int64_t c = 0; c < c_count; ++c) {
        const auto addr = writemask_map(s, c, s_count);
        CHECK(addr.bank >= 0);
        CHECK(addr.bank < kBanks);
        CHECK(addr.byte_lane >= 0);
        CHECK(addr.byte_lane < kLanes);
        CHECK(addr.word < words);
        seen.insert(addr);
      }
    CHECK(static_cast<std::int64_t>(seen.size()) == s_count * c_count);
    // full blocks cover the whole address space
    if (s_count % 8 == 0 && c_count % 8 == 0) CHECK(static_cast<std::int64_t>(seen.size()) == kBanks * kLanes * words);
  }
}

TEST_CASE("round trip: one channel is the identity") {
  std::vector<int> stream{5, 4, 3, 2, 1, 0, 9, 8, 7, 6, 11};
  const auto r = roundtrip_check<int>(stream, 11, 1);
  CHECK(r.spatial_major == stream);
  CHECK(r.bank_conflicts == 0);
}

TEST_CASE("round trip: 8x8 labeled layout") {
  // label = channel * 8 + position; channel A..H, position 1..8
  std::vector<int> stream;
  for (int s = 0; s < 8; ++s)
    for (int c = 0; c < 8; ++c) stream.push_back(c * 8 + s);

  BankedBuffer<int> buffer(1);
  for (int s = 0; s < 8; ++s)
    for (int c = 0; c < 8; ++c) buffer.write(writemask_map(s, c, 8), stream[static_cast<std::size_t>(s * 8 + c)]);
  for (int bank = 0; bank < 8; ++bank) {
    const auto word = buffer.read_word(bank, 0);
    for (int lane = 0; lane < 8; ++lane) CHECK(word[static_cast<std::size_t>(lane)] == bank * 8 + lane);
  }

  const auto r = roundtrip_check<int>(stream, 8, 8);
  std::vector<int> expected(64);
  for (int i = 0; i < 64; ++i) expected[static_cast<std::size_t>(i)] = i;
  CHECK(r.spatial_major == expected);
  CHECK(r.bank_conflicts == 0);
}

TEST_CASE("round trip: random tiles transpose like a brute-force permutation") {
  std::mt19937_64 rng(17);
  for (auto [s_count, c_count] : {std::pair<int, int>{16, 24}, {24, 16}, {13, 5}, {7, 19}}) {
    std::vector<int> stream(static_cast<std::size_t>(s_count * c_count));
    for (auto& v : stream) v = static_cast<int>(rng() % 100000);
    std::vector<int> expected;
    for (int c = 0; c < c_count; ++c)
      for (int s = 0; s < s_count; ++s) expected.push_back(stream[static_cast<std::size_t>(s * c_count + c)]);
    const auto r = roundtrip_check<int>(stream, s_count, c_count);
    CHECK(r.spatial_major == expected);
    CHECK(r.bank_conflicts == 0);
  }
  std::vector<int> wrong(10);
  CHECK_THROWS_AS(roundtrip_check<int>(wrong, 3, 3), std::invalid_argument);
}

TEST_CASE("address trace lines") {
  std::ostringstream os;
  write_address_trace(os, 9, 2);
  std::istringstream in(os.str());
  std::string header;
  std::getline(in, header);
  int lines = 0;
  std::int64_t s, c, bank, word, lane;
  while (in >> s >> c >> bank >> word >> lane) {
    const auto a = writemask_map(s, c, 9);
    CHECK(a.bank == bank);
    CHECK(a.word == word);
    CHECK(a.byte_lane == lane);
    ++lines;
  }
  CHECK(lines == 18);
}

TEST_CASE("tile plans on random graphs") {
  std::mt19937_64 rng(23);
  int multi_tile = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const auto g = testsupport::random_graph(rng);
    const Bytes budget = testsupport::uniform(rng, 512, 20'000);
    const auto plan = partition(g, budget, 0.0);
    const Bytes half = testsupport::uniform(rng, 200, 40'000);
    const auto tiles = plan_tiles(plan, g, half);
    REQUIRE(tiles.size() == plan.groups.size());
    for (std::size_t gi = 0; gi < tiles.size(); ++gi) {
      const auto& tp = tiles[gi];
      const auto& grp = plan.groups[gi];
      CHECK(tp.tile_count * tp.tile_height >= tp.frame_height);
      CHECK((tp.tile_count - 1) * tp.tile_height < tp.frame_height);
      if (!tp.feasible) continue;
      if (tp.tile_count > 1) ++multi_tile;

      CHECK(tp.max_tile_height == std::min(brute_max_rows(g, grp, half), tp.frame_height));
      if (tp.tile_height < tp.frame_height) {
        CHECK(tp.tile_height % tp.row_alignment == 0);
        // one more aligned step breaks the occupancy bound
        CHECK(tp.tile_height + tp.row_alignment > tp.max_tile_height);
      }
      for (const auto& o : tp.occupancy) {
        CHECK(o.input_bytes <= half);
        CHECK(o.output_bytes <= half);
      }
      const auto sched = make_schedule(grp, tp);
      CHECK(static_cast<std::int64_t>(sched.steps.size()) == tp.tile_count * static_cast<std::int64_t>(grp.layer_ids.size()));
      const auto peak = replay_occupancy(sched, grp, tp, g);
      CHECK(peak.left <= half);
      CHECK(peak.right <= half);
    }
  }
  CHECK(multi_tile > 50);
}
