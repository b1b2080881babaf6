#include "rcfuse/tiling.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

namespace rcfuse {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// Spatial reduction applied by the conv stage of a layer (stride or pooling window).
std::int64_t stage_factor(const LayerNode& layer) { return layer.stride; }

std::size_t group_start(const FusionGroup& group, const NetGraph& graph) {
  if (group.layer_ids.empty()) throw std::invalid_argument("empty fusion group");
  const auto idx = graph.index_of(group.layer_ids.front());
  if (!idx) throw std::invalid_argument("group names an unknown layer");
  return *idx;
}

const LayerNode& shaped(const NetGraph& graph, std::size_t index) {
  const auto& layer = graph.layers[index];
  if (!layer.input_shape || !layer.output_shape || !layer.conv_shape) {
    throw ShapeError("tiling needs inferred shapes");
  }
  return layer;
}

std::int64_t input_side_channels(const LayerNode& layer) {
  std::int64_t c = layer.input_shape->channels;
  if (layer.source_shape) c += layer.source_shape->channels;
  return c;
}

using Rows = std::pair<std::int64_t, std::int64_t>;

Rows shrink(Rows rows, std::int64_t factor, std::int64_t limit) {
  if (factor == 1) return {std::min(rows.first, limit), std::min(rows.second, limit)};
  return {std::min(rows.first / factor, limit), std::min(ceil_div(rows.second, factor), limit)};
}

Rows rows_through(const LayerNode& layer, Rows rows) {
  rows = shrink(rows, stage_factor(layer), layer.conv_shape->height);
  return shrink(rows, layer.pool, layer.output_shape->height);
}

Bytes map_bytes(Rows rows, const TensorShape& shape, int bpa) {
  return (rows.second - rows.first) * shape.width * shape.channels * bpa;
}

}  // namespace

std::string_view to_string(BoundaryPolicy policy) {
  return policy == BoundaryPolicy::ZeroPad ? "zero" : "replicate";
}

BoundaryPolicy parse_boundary_policy(std::string_view text) {
  if (text == "zero" || text == "zero_pad") return BoundaryPolicy::ZeroPad;
  if (text == "replicate") return BoundaryPolicy::Replicate;
  throw std::invalid_argument("unknown boundary policy '" + std::string(text) + "'");
}

std::string_view to_string(BufferHalf half) { return half == BufferHalf::Left ? "left" : "right"; }

std::pair<std::int64_t, std::int64_t> TilePlan::tile_rows(std::int64_t tile) const {
  const std::int64_t begin = tile * tile_height;
  return {begin, std::min(frame_height, begin + tile_height)};
}

std::pair<PoolingFactor, PoolingFactor> pooling_factors(const FusionGroup& group,
                                                        const NetGraph& graph, std::size_t index) {
  const std::size_t start = group_start(group, graph);
  if (index < start || index >= start + group.layer_ids.size()) {
    throw std::out_of_range("layer index outside group");
  }
  PoolingFactor in;
  for (std::size_t i = start; i < index; ++i) {
    const auto& l = graph.layers[i];
    const std::int64_t f = stage_factor(l) * l.pool;
    in.horizontal *= f;
    in.vertical *= f;
  }
  PoolingFactor out = in;
  const auto& l = graph.layers[index];
  out.horizontal *= stage_factor(l) * l.pool;
  out.vertical *= stage_factor(l) * l.pool;
  return {in, out};
}

Bytes tile_map_bytes(std::int64_t tile_elems, PoolingFactor pf, std::int64_t channels,
                     int bytes_per_activation) {
  return ceil_div(tile_elems * channels * bytes_per_activation, pf.area());
}

std::pair<std::int64_t, std::int64_t> rows_at_layer_input(
    const FusionGroup& group, const NetGraph& graph, std::size_t index,
    std::pair<std::int64_t, std::int64_t> rows) {
  const std::size_t start = group_start(group, graph);
  for (std::size_t i = start; i < index; ++i) rows = rows_through(shaped(graph, i), rows);
  return rows;
}

TilePlan solve_tile(const FusionGroup& group, const NetGraph& graph, Bytes feature_half_bytes,
                    BoundaryPolicy boundary, int bytes_per_activation) {
  if (feature_half_bytes <= 0) throw std::invalid_argument("feature buffer half must be positive");
  if (bytes_per_activation <= 0) throw std::invalid_argument("bytes per activation must be positive");
  const std::size_t start = group_start(group, graph);
  const TensorShape frame = *shaped(graph, start).input_shape;

  TilePlan plan;
  plan.tile_width = frame.width;
  plan.frame_height = frame.height;
  plan.boundary = boundary;

  std::int64_t tile_elems = frame.pixels();
  std::int64_t align = 1;
  for (std::size_t i = start; i < start + group.layer_ids.size(); ++i) {
    const auto& layer = shaped(graph, i);
    const auto [pf_in, pf_out] = pooling_factors(group, graph, i);
    const auto bound = [&](PoolingFactor pf, std::int64_t channels) {
      return feature_half_bytes * pf.area() / (channels * bytes_per_activation);
    };
    tile_elems = std::min(tile_elems, bound(pf_in, input_side_channels(layer)));
    tile_elems = std::min(tile_elems, bound(pf_out, layer.output_shape->channels));
    align = pf_out.vertical;
  }
  plan.row_alignment = align;
  plan.max_tile_height = tile_elems / frame.width;

  if (plan.max_tile_height >= frame.height) {
    plan.tile_height = frame.height;
  } else {
    plan.tile_height = plan.max_tile_height / align * align;
  }
  if (plan.tile_height < 1) {
    std::ostringstream os;
    os << "group starting at layer " << group.layer_ids.front() << ": feature buffer half of "
       << feature_half_bytes << " bytes cannot hold " << align << " row(s) of every layer map";
    throw TileInfeasible(os.str());
  }
  plan.tile_count = ceil_div(frame.height, plan.tile_height);

  for (std::size_t i = start; i < start + group.layer_ids.size(); ++i) {
    const auto& layer = graph.layers[i];
    const Rows in_rows = rows_at_layer_input(group, graph, i, {0, plan.tile_height});
    const Rows out_rows = rows_through(layer, in_rows);
    Bytes in_bytes = map_bytes(in_rows, *layer.input_shape, bytes_per_activation);
    if (layer.source_shape) in_bytes += map_bytes(in_rows, *layer.source_shape, bytes_per_activation);
    plan.occupancy.push_back(
        {layer.id, in_bytes, map_bytes(out_rows, *layer.output_shape, bytes_per_activation)});
  }
  return plan;
}

std::vector<TilePlan> plan_tiles(const FusionPlan& plan, const NetGraph& graph,
                                 Bytes feature_half_bytes, BoundaryPolicy boundary,
                                 int bytes_per_activation) {
  std::vector<TilePlan> out;
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    TilePlan tile;
    try {
      tile = solve_tile(plan.groups[g], graph, feature_half_bytes, boundary, bytes_per_activation);
    } catch (const TileInfeasible&) {
      const auto& first = shaped(graph, group_start(plan.groups[g], graph));
      tile.tile_width = first.input_shape->width;
      tile.frame_height = first.input_shape->height;
      tile.tile_height = tile.frame_height;
      tile.tile_count = 1;
      tile.boundary = boundary;
      tile.feasible = false;
    }
    tile.group_index = g;
    out.push_back(std::move(tile));
  }
  return out;
}

PingPongSchedule make_schedule(const FusionGroup& group, const TilePlan& plan) {
  PingPongSchedule schedule;
  schedule.group_index = plan.group_index;
  for (std::int64_t t = 0; t < plan.tile_count; ++t) {
    BufferHalf in = BufferHalf::Left;
    for (int id : group.layer_ids) {
      const BufferHalf out = in == BufferHalf::Left ? BufferHalf::Right : BufferHalf::Left;
      schedule.steps.push_back({t, id, in, out});
      in = out;
    }
  }
  schedule.external_loads = plan.tile_count;
  schedule.external_stores = plan.tile_count;
  return schedule;
}

OccupancyPeak replay_occupancy(const PingPongSchedule& schedule, const FusionGroup& group,
                               const TilePlan& plan, const NetGraph& graph,
                               int bytes_per_activation) {
  OccupancyPeak peak;
  auto touch = [&](BufferHalf half, Bytes bytes) {
    Bytes& slot = half == BufferHalf::Left ? peak.left : peak.right;
    slot = std::max(slot, bytes);
  };
  for (const auto& step : schedule.steps) {
    const auto index = graph.index_of(step.layer_id);
    if (!index) throw std::invalid_argument("schedule names an unknown layer");
    const auto& layer = shaped(graph, *index);
    const Rows in_rows = rows_at_layer_input(group, graph, *index, plan.tile_rows(step.tile));
    const Rows out_rows = rows_through(layer, in_rows);
    Bytes in_bytes = map_bytes(in_rows, *layer.input_shape, bytes_per_activation);
    if (layer.source_shape) in_bytes += map_bytes(in_rows, *layer.source_shape, bytes_per_activation);
    touch(step.input_half, in_bytes);
    touch(step.output_half, map_bytes(out_rows, *layer.output_shape, bytes_per_activation));
  }
  return peak;
}

BankAddress writemask_map(std::int64_t spatial, std::int64_t channel, std::int64_t spatial_count) {
  if (spatial < 0 || channel < 0 || spatial_count < 1 || spatial >= spatial_count) {
    throw std::out_of_range("write-mask index outside map");
  }
  BankAddress a;
  a.bank = static_cast<int>(channel % kBanks);
  a.byte_lane = static_cast<int>(spatial % kLanes);
  a.word = (channel / kBanks) * ceil_div(spatial_count, kLanes) + spatial / kLanes;
  return a;
}

void write_address_trace(std::ostream& os, std::int64_t spatial_count, std::int64_t channels) {
  os << "# spatial channel bank word lane\n";
  for (std::int64_t s = 0; s < spatial_count; ++s) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto a = writemask_map(s, c, spatial_count);
      os << s << ' ' << c << ' ' << a.bank << ' ' << a.word << ' ' << a.byte_lane << '\n';
    }
  }
}

}  // namespace rcfuse
